#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "drm/pipeline.hpp"
#include "drm/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json load_config(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream in(path);
    if (!in) throw drm::ConfigError("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw drm::ConfigError("bad config file " + path + ": " + e.what());
    }
    if (!j.is_object()) throw drm::ConfigError("config must be a flat JSON object");
    return j;
}

// Config-file value fills in when the flag was not given on the command line.
template <typename T>
void apply(const CLI::Option* opt, T& var, const json& cfg, const std::string& key) {
    if (opt->count() == 0 && cfg.contains(key)) var = cfg.at(key).get<T>();
}

void write_json(const json& j, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw drm::DataError("cannot write " + path);
    out << j.dump(2) << "\n";
}

struct CovCli {
    std::string config_path;
    drm::CovConfig cc;
    CLI::Option *o_corr, *o_var, *o_vra, *o_spec, *o_win, *o_novra, *o_contemp;
    bool no_vra = false;
    bool contemporaneous = false;

    void add(CLI::App* cmd) {
        o_corr = cmd->add_option("--corr-halflife", cc.corr_halflife,
                                 "correlation EWMA halflife in days");
        o_var = cmd->add_option("--var-halflife", cc.var_halflife, "variance EWMA halflife");
        o_vra = cmd->add_option("--vra-halflife", cc.vra_halflife,
                                "volatility regime adjustment halflife");
        o_spec = cmd->add_option("--specific-halflife", cc.specific_halflife,
                                 "specific variance EWMA halflife");
        o_win = cmd->add_option("--window", cc.window, "max factor-return observations");
        o_novra = cmd->add_flag("--no-vra", no_vra, "disable volatility regime adjustment");
        o_contemp = cmd->add_flag("--contemporaneous", contemporaneous,
                                  "regress same-day returns instead of next-day");
    }
    void resolve(const json& cfg) {
        apply(o_corr, cc.corr_halflife, cfg, "corr_halflife");
        apply(o_var, cc.var_halflife, cfg, "var_halflife");
        apply(o_vra, cc.vra_halflife, cfg, "vra_halflife");
        apply(o_spec, cc.specific_halflife, cfg, "specific_halflife");
        apply(o_win, cc.window, cfg, "window");
        apply(o_novra, no_vra, cfg, "no_vra");
        apply(o_contemp, contemporaneous, cfg, "contemporaneous");
        cc.vra_enabled = !no_vra;
        cc.forward_alignment = !contemporaneous;
    }
};

int run(int argc, char** argv) {
    CLI::App app{"latent-factor risk model pipeline"};
    app.require_subcommand(1);

    // ---- synth ----
    auto* synth = app.add_subcommand("synth", "generate a synthetic market panel");
    std::string sy_spec, sy_out, sy_config;
    std::uint64_t sy_seed = 0;
    synth->add_option("--spec", sy_spec, "synthetic market spec JSON")->required();
    synth->add_option("--out", sy_out, "output directory")->required();
    auto* sy_seed_opt = synth->add_option("--seed", sy_seed, "rng seed override");

    // ---- train ----
    auto* train = app.add_subcommand("train", "train the factor network");
    std::string tr_panel, tr_out, tr_config, tr_resume;
    std::string tr_train_end, tr_valid_end, tr_test_end;
    drm::NetConfig net;
    drm::TrainConfig tc;
    train->add_option("--panel", tr_panel, "panel CSV")->required();
    train->add_option("--out", tr_out, "output directory")->required();
    train->add_option("--config", tr_config, "flat JSON config file");
    train->add_option("--resume", tr_resume, "checkpoint to warm-start from");
    auto* o_tre = train->add_option("--train-end", tr_train_end, "last training date");
    auto* o_vae = train->add_option("--valid-end", tr_valid_end, "last validation date");
    auto* o_tee = train->add_option("--test-end", tr_test_end, "last test date");
    auto* o_k = train->add_option("--k", net.K, "total factor count");
    auto* o_k1 = train->add_option("--k1", net.K1, "plain-branch factor count");
    auto* o_hidden = train->add_option("--hidden", net.hidden, "recurrent state size");
    auto* o_layers = train->add_option("--layers", net.layers, "recurrent layers");
    auto* o_lookback = train->add_option("--lookback", net.lookback, "history window length");
    auto* o_dropout = train->add_option("--dropout", net.gat_dropout, "attention dropout");
    bool no_gat = false;
    auto* o_nogat = train->add_flag("--no-gat", no_gat, "disable the attention branch");
    auto* o_lr = train->add_option("--lr", tc.learning_rate, "learning rate");
    auto* o_lambda = train->add_option("--lambda", tc.loss.lambda, "multicollinearity penalty");
    auto* o_h = train->add_option("--horizons", tc.loss.H, "forward return horizons");
    auto* o_acc = train->add_option("--accumulation", tc.accumulation, "dates per update");
    auto* o_epochs = train->add_option("--max-epochs", tc.max_epochs, "epoch cap");
    auto* o_patience = train->add_option("--patience", tc.early_stop_patience, "early stop patience");
    auto* o_smooth = train->add_option("--smoothing", tc.smoothing, "factor smoothing coefficient");
    auto* o_seed = train->add_option("--seed", tc.seed, "rng seed");

    // ---- factors ----
    auto* factors = app.add_subcommand("factors", "emit factor matrices for a date range");
    std::string fa_model = "drm", fa_panel, fa_out, fa_ckpt, fa_begin, fa_end, fa_config;
    int fa_k = 10, fa_window = 252;
    double fa_smoothing = 0.99;
    std::uint64_t fa_seed = 0;
    factors->add_option("--model", fa_model, "drm, frm, or srm")
        ->check(CLI::IsMember({"drm", "frm", "srm"}));
    factors->add_option("--panel", fa_panel, "panel CSV")->required();
    factors->add_option("--out", fa_out, "output factor CSV")->required();
    factors->add_option("--checkpoint", fa_ckpt, "trained checkpoint (drm)");
    factors->add_option("--config", fa_config, "flat JSON config file");
    auto* o_fk = factors->add_option("--k", fa_k, "component count (srm)");
    auto* o_fwin = factors->add_option("--window", fa_window, "trailing window (srm)");
    auto* o_fsm = factors->add_option("--smoothing", fa_smoothing, "exponential smoothing (drm)");
    auto* o_fseed = factors->add_option("--seed", fa_seed, "recorded in output metadata");
    factors->add_option("--begin", fa_begin, "first date (default: first usable)");
    factors->add_option("--end", fa_end, "last date inclusive (default: last)");

    // ---- cov ----
    auto* cov = app.add_subcommand("cov", "estimate the stock covariance matrix");
    std::string cv_panel, cv_factors, cv_out, cv_meta;
    std::uint64_t cv_seed = 0;
    CovCli cv_cov;
    cov->add_option("--panel", cv_panel, "panel CSV")->required();
    cov->add_option("--factors", cv_factors, "factor CSV")->required();
    cov->add_option("--out", cv_out, "covariance CSV")->required();
    cov->add_option("--meta", cv_meta, "estimation metadata JSON")->required();
    cov->add_option("--config", cv_cov.config_path, "flat JSON config file");
    cov->add_option("--seed", cv_seed, "recorded in output metadata");
    cv_cov.add(cov);

    // ---- backtest ----
    auto* backtest = app.add_subcommand("backtest", "minimum variance backtest");
    std::string bt_panel, bt_factors, bt_weights, bt_summary;
    std::uint64_t bt_seed = 0;
    drm::BacktestConfig bt;
    CovCli bt_cov;
    bool bt_long_only = false;
    backtest->add_option("--panel", bt_panel, "panel CSV")->required();
    backtest->add_option("--factors", bt_factors, "factor CSV")->required();
    backtest->add_option("--out-weights", bt_weights, "weights CSV")->required();
    backtest->add_option("--out-summary", bt_summary, "summary JSON")->required();
    backtest->add_option("--config", bt_cov.config_path, "flat JSON config file");
    auto* o_reb = backtest->add_option("--rebalance", bt.rebalance_days, "days between rebalances");
    auto* o_minh = backtest->add_option("--min-history", bt.min_history,
                                        "factor dates before the first rebalance");
    auto* o_lo = backtest->add_flag("--long-only", bt_long_only, "no short selling");
    backtest->add_option("--seed", bt_seed, "recorded in output metadata");
    bt_cov.add(backtest);

    // ---- report ----
    auto* report = app.add_subcommand("report", "factor quality metrics");
    std::string rp_panel, rp_factors, rp_out, rp_r2csv, rp_config;
    std::uint64_t rp_seed = 0;
    bool rp_contemp = false;
    report->add_option("--panel", rp_panel, "panel CSV")->required();
    report->add_option("--factors", rp_factors, "factor CSV")->required();
    report->add_option("--out", rp_out, "metrics JSON")->required();
    report->add_option("--r2-csv", rp_r2csv, "per-date explained variance CSV");
    report->add_option("--config", rp_config, "flat JSON config file");
    report->add_option("--seed", rp_seed, "recorded in output metadata");
    auto* o_rpc = report->add_flag("--contemporaneous", rp_contemp,
                                   "regress same-day returns instead of next-day");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        app.exit(e);
        return 0;
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;  // usage errors map to exit code 2
    }

    if (synth->parsed()) {
        std::ifstream in(sy_spec);
        if (!in) throw drm::ConfigError("cannot open spec file: " + sy_spec);
        json j;
        try {
            in >> j;
        } catch (const std::exception& e) {
            throw drm::ConfigError(std::string("bad spec file: ") + e.what());
        }
        drm::SynthSpec spec = drm::SynthSpec::from_json(j);
        if (sy_seed_opt->count()) spec.seed = sy_seed;
        fs::create_directories(sy_out);
        auto [panel, gt] = drm::generate_panel(spec);
        drm::write_panel(panel, sy_out + "/panel.csv");
        drm::write_ground_truth(gt, sy_out);
        json meta = spec.to_json();
        meta["n_rows"] = panel.report.total_rows;
        write_json(meta, sy_out + "/synth_meta.json");
        return 0;
    }

    if (train->parsed()) {
        json cfg = load_config(tr_config);
        apply(o_tre, tr_train_end, cfg, "train_end");
        apply(o_vae, tr_valid_end, cfg, "valid_end");
        apply(o_tee, tr_test_end, cfg, "test_end");
        apply(o_k, net.K, cfg, "k");
        apply(o_k1, net.K1, cfg, "k1");
        apply(o_hidden, net.hidden, cfg, "hidden");
        apply(o_layers, net.layers, cfg, "layers");
        apply(o_lookback, net.lookback, cfg, "lookback");
        apply(o_dropout, net.gat_dropout, cfg, "dropout");
        apply(o_nogat, no_gat, cfg, "no_gat");
        apply(o_lr, tc.learning_rate, cfg, "lr");
        apply(o_lambda, tc.loss.lambda, cfg, "lambda");
        apply(o_h, tc.loss.H, cfg, "horizons");
        apply(o_acc, tc.accumulation, cfg, "accumulation");
        apply(o_epochs, tc.max_epochs, cfg, "max_epochs");
        apply(o_patience, tc.early_stop_patience, cfg, "patience");
        apply(o_smooth, tc.smoothing, cfg, "smoothing");
        apply(o_seed, tc.seed, cfg, "seed");
        if (no_gat) {
            net.gat_enabled = false;
            net.K1 = net.K;
        }
        if (tr_train_end.empty() || tr_valid_end.empty() || tr_test_end.empty())
            throw drm::ConfigError("train requires --train-end, --valid-end, --test-end");

        auto panel = drm::load_panel(tr_panel);
        net.P = panel.n_features;
        auto splits = drm::split(panel, {tr_train_end, tr_valid_end, tr_test_end});

        std::optional<drm::ModelParams> warm;
        if (!tr_resume.empty()) {
            auto [rnet, rparams] = drm::load_checkpoint(tr_resume);
            if (rnet.to_json() != net.to_json())
                throw drm::ConfigError("resume checkpoint config differs from requested config");
            warm = std::move(rparams);
        }

        fs::create_directories(tr_out);
        auto [params, rep] = drm::train(panel, splits, net, tc, warm ? &*warm : nullptr);
        drm::save_checkpoint(tr_out + "/checkpoint.json", net, params);
        json jr = rep.to_json();
        jr["net"] = net.to_json();
        jr["splits"] = {{"train_end", tr_train_end},
                        {"valid_end", tr_valid_end},
                        {"test_end", tr_test_end}};
        jr["resumed_from"] = tr_resume;
        write_json(jr, tr_out + "/training_report.json");
        return 0;
    }

    if (factors->parsed()) {
        json cfg = load_config(fa_config);
        apply(o_fk, fa_k, cfg, "k");
        apply(o_fwin, fa_window, cfg, "window");
        apply(o_fsm, fa_smoothing, cfg, "smoothing");
        apply(o_fseed, fa_seed, cfg, "seed");
        auto panel = drm::load_panel(fa_panel);
        int begin = fa_begin.empty() ? 0 : panel.date_index(fa_begin);
        int end = fa_end.empty() ? static_cast<int>(panel.dates.size()) - 1
                                 : panel.date_index(fa_end);
        if (begin < 0) throw drm::DataError("begin date not in panel: " + fa_begin);
        if (end < 0) throw drm::DataError("end date not in panel: " + fa_end);

        std::vector<drm::FactorMatrix> fms;
        json meta = {{"model", fa_model}, {"seed", fa_seed}, {"panel", fa_panel}};
        if (fa_model == "frm") {
            for (int t = begin; t <= end; ++t)
                fms.push_back(drm::frm_factors(panel, panel.dates[t]));
        } else if (fa_model == "srm") {
            meta["k"] = fa_k;
            meta["window"] = fa_window;
            for (int t = std::max(begin, fa_window - 1); t <= end; ++t)
                fms.push_back(drm::srm_factors(panel, panel.dates[t], fa_window, fa_k));
        } else {
            if (fa_ckpt.empty()) throw drm::ConfigError("--model drm requires --checkpoint");
            auto [cnet, cparams] = drm::load_checkpoint(fa_ckpt);
            meta["checkpoint"] = fa_ckpt;
            meta["smoothing"] = fa_smoothing;
            meta["net"] = cnet.to_json();
            fms = drm::infer_factors(cparams, cnet, panel, begin, end + 1, fa_smoothing);
        }
        if (fms.empty()) throw drm::InsufficientHistory("no usable dates in the requested range");
        drm::write_factor_matrices(fms, fa_out);
        write_json(meta, fa_out + ".meta.json");
        return 0;
    }

    if (cov->parsed()) {
        json cfg = load_config(cv_cov.config_path);
        cv_cov.resolve(cfg);
        auto panel = drm::load_panel(cv_panel);
        auto fms = drm::load_factor_matrices(cv_factors);
        auto est = drm::estimate_covariance(fms, panel, cv_cov.cc);
        drm::write_covariance(est, cv_out, cv_meta, cv_cov.cc, cv_seed);
        return 0;
    }

    if (backtest->parsed()) {
        json cfg = load_config(bt_cov.config_path);
        bt_cov.resolve(cfg);
        apply(o_reb, bt.rebalance_days, cfg, "rebalance");
        apply(o_minh, bt.min_history, cfg, "min_history");
        apply(o_lo, bt_long_only, cfg, "long_only");
        bt.long_only = bt_long_only;
        bt.cov = bt_cov.cc;
        auto panel = drm::load_panel(bt_panel);
        auto fms = drm::load_factor_matrices(bt_factors);
        auto res = drm::run_backtest(fms, panel, bt);
        drm::write_backtest(res, bt_weights, bt_summary, bt_seed);
        return 0;
    }

    if (report->parsed()) {
        json cfg = load_config(rp_config);
        apply(o_rpc, rp_contemp, cfg, "contemporaneous");
        auto panel = drm::load_panel(rp_panel);
        auto fms = drm::load_factor_matrices(rp_factors);
        std::vector<std::pair<std::string, double>> r2rows;
        json metrics = drm::run_report(fms, panel, !rp_contemp, &r2rows);
        metrics["seed"] = rp_seed;
        write_json(metrics, rp_out);
        if (!rp_r2csv.empty()) {
            std::ofstream out(rp_r2csv);
            if (!out) throw drm::DataError("cannot write " + rp_r2csv);
            out.precision(17);
            out << "date,r2\n";
            for (const auto& [d, v] : r2rows) out << d << ',' << v << "\n";
        }
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const drm::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const drm::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const drm::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

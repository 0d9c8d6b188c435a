#pragma once

#include <fstream>
#include <sstream>

#include "drm/baselines.hpp"
#include "drm/diagnostics.hpp"
#include "drm/portfolio.hpp"
#include "drm/riskmodel.hpp"
#include "drm/trainer.hpp"

namespace drm {

// Factor matrix CSV: date,stock_id,f1..fK with full double precision.
inline void write_factor_matrices(const std::vector<FactorMatrix>& factors,
                                  const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out.precision(17);
    int K = factors.empty() ? 0 : static_cast<int>(factors[0].values.cols());
    out << "date,stock_id";
    for (int k = 1; k <= K; ++k) out << ",f" << k;
    out << "\n";
    for (const auto& fm : factors)
        for (std::size_t i = 0; i < fm.stock_ids.size(); ++i) {
            out << fm.date << ',' << fm.stock_ids[i];
            for (int k = 0; k < fm.values.cols(); ++k) out << ',' << fm.values(i, k);
            out << "\n";
        }
}

inline std::vector<FactorMatrix> load_factor_matrices(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path);
    std::string header;
    if (!std::getline(in, header)) throw DataError("empty factor file: " + path);
    int K = 0;
    {
        std::stringstream ss(header);
        std::string col;
        std::vector<std::string> cols;
        while (std::getline(ss, col, ',')) cols.push_back(col);
        if (cols.size() < 2 || cols[0] != "date" || cols[1] != "stock_id")
            throw DataError("bad factor file header: " + path);
        K = static_cast<int>(cols.size()) - 2;
    }
    std::vector<FactorMatrix> out;
    std::map<std::string, std::vector<std::pair<std::string, VectorXd>>> by_date;
    std::vector<std::string> date_order;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string date, id, field;
        std::getline(ss, date, ',');
        std::getline(ss, id, ',');
        VectorXd v(K);
        for (int k = 0; k < K; ++k) {
            if (!std::getline(ss, field, ',')) throw DataError("short row in " + path);
            v(k) = std::stod(field);
        }
        if (by_date.find(date) == by_date.end()) date_order.push_back(date);
        by_date[date].emplace_back(id, v);
    }
    for (const auto& date : date_order) {
        const auto& rows = by_date.at(date);
        FactorMatrix fm;
        fm.date = date;
        fm.values.resize(rows.size(), K);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            fm.stock_ids.push_back(rows[i].first);
            fm.values.row(i) = rows[i].second.transpose();
        }
        out.push_back(std::move(fm));
    }
    return out;
}

struct CovConfig {
    double corr_halflife = 240;
    double var_halflife = 60;
    double vra_halflife = 20;
    double specific_halflife = 60;
    int window = 504;
    bool vra_enabled = true;
    int vra_min_history = 20;  // dates of factor returns before bias stats start
    bool forward_alignment = true;

    nlohmann::json to_json() const {
        return {{"corr_halflife", corr_halflife}, {"var_halflife", var_halflife},
                {"vra_halflife", vra_halflife},   {"specific_halflife", specific_halflife},
                {"window", window},               {"vra_enabled", vra_enabled},
                {"vra_min_history", vra_min_history},
                {"forward_alignment", forward_alignment}};
    }
};

struct CovarianceEstimate {
    std::string date;
    std::vector<std::string> stock_ids;
    std::vector<std::string> column_labels;  // country, industries, styles
    MatrixXd exposures;                      // N x (1+J+K)
    MatrixXd sigma_b;
    VectorXd delta;
    MatrixXd sigma;
    double vra_multiplier = 1.0;
    bool psd_repaired = false;
};

// Full-design exposures [country | industry dummies | styles] for the stocks
// of a factor matrix, using the series' global industry label order.
inline MatrixXd full_exposures(const FactorMatrix& fm, const PanelDataset& panel,
                               const std::vector<std::string>& industry_labels) {
    int t = panel.date_index(fm.date);
    if (t < 0) throw DataError("factor date not in panel: " + fm.date);
    const int N = static_cast<int>(fm.stock_ids.size());
    const int J = static_cast<int>(industry_labels.size());
    const int K = static_cast<int>(fm.values.cols());
    std::map<std::string, int> label_ix;
    for (int j = 0; j < J; ++j) label_ix[industry_labels[j]] = j;
    MatrixXd X = MatrixXd::Zero(N, 1 + J + K);
    X.col(0).setOnes();
    for (int i = 0; i < N; ++i) {
        auto it = label_ix.find(panel.obs[t].at(fm.stock_ids[i]).industry);
        if (it != label_ix.end()) X(i, 1 + it->second) = 1.0;
    }
    X.rightCols(K) = fm.values;
    return X;
}

// Covariance estimate at the last factor date, from the factor-return series
// of all earlier dates.
inline CovarianceEstimate estimate_covariance(const std::vector<FactorMatrix>& factors,
                                              const PanelDataset& panel, const CovConfig& cc) {
    if (factors.empty()) throw DataError("estimate_covariance: no factor dates");
    const FactorMatrix& at = factors.back();
    // Under forward alignment the factor matrix at date t regresses returns
    // at t+1, so including the estimation date itself would peek one day into
    // the future; contemporaneous alignment may use it.
    std::vector<FactorMatrix> history(factors.begin(),
                                      cc.forward_alignment ? factors.end() - 1 : factors.end());
    auto series = factor_return_series(history, panel, cc.forward_alignment);
    if (series.dates.size() < 2) throw InsufficientHistory("need >= 2 factor return dates");

    const int T = static_cast<int>(series.dates.size());
    const int M = series.width();
    MatrixXd B(T, M);
    for (int t = 0; t < T; ++t) B.row(t) = series.coef[t].transpose();

    CovarianceEstimate out;
    out.date = at.date;
    out.stock_ids = at.stock_ids;
    out.column_labels.push_back("country");
    for (const auto& l : series.industry_labels) out.column_labels.push_back(l);
    for (int k = 0; k < series.n_styles; ++k)
        out.column_labels.push_back("f" + std::to_string(k + 1));

    out.sigma_b = factor_covariance(B, cc.corr_halflife, cc.var_halflife, cc.window,
                                    &out.psd_repaired);

    if (cc.vra_enabled && T > cc.vra_min_history + 1) {
        // sequential one-step-ahead EWMA variance forecasts per factor
        const int start = cc.vra_min_history;
        MatrixXd pred(T - start, M), real(T - start, M);
        bool ok = true;
        for (int k = 0; k < M && ok; ++k) {
            double mean = 0, var = 0;
            const double a = std::pow(0.5, 1.0 / cc.var_halflife);
            // prime with the first `start` observations
            for (int t = 0; t < start; ++t) {
                double d = B(t, k) - mean;
                mean = a * mean + (1 - a) * B(t, k);
                var = a * var + (1 - a) * d * d;
            }
            for (int t = start; t < T; ++t) {
                if (var <= 0) {
                    ok = false;
                    break;
                }
                pred(t - start, k) = std::sqrt(var);
                real(t - start, k) = B(t, k);
                double d = B(t, k) - mean;
                mean = a * mean + (1 - a) * B(t, k);
                var = a * var + (1 - a) * d * d;
            }
        }
        if (ok) {
            auto vra = volatility_regime_adjust(real, pred, out.sigma_b, cc.vra_halflife);
            out.sigma_b = vra.sigma_b;
            out.vra_multiplier = vra.multiplier;
        }
    }

    out.delta = specific_variance(series.residuals, at.stock_ids, cc.specific_halflife);
    out.exposures = full_exposures(at, panel, series.industry_labels);
    out.sigma = assemble_covariance(out.exposures, out.sigma_b, out.delta);
    return out;
}

inline void write_covariance(const CovarianceEstimate& est, const std::string& csv_path,
                             const std::string& meta_path, const CovConfig& cc,
                             std::uint64_t seed = 0) {
    {
        std::ofstream out(csv_path);
        if (!out) throw DataError("cannot write " + csv_path);
        out.precision(17);
        out << "stock_id";
        for (const auto& id : est.stock_ids) out << ',' << id;
        out << "\n";
        for (std::size_t i = 0; i < est.stock_ids.size(); ++i) {
            out << est.stock_ids[i];
            for (int j = 0; j < est.sigma.cols(); ++j) out << ',' << est.sigma(i, j);
            out << "\n";
        }
    }
    nlohmann::json meta = cc.to_json();
    meta["date"] = est.date;
    meta["vra_multiplier"] = est.vra_multiplier;
    meta["psd_repaired"] = est.psd_repaired;
    meta["n_stocks"] = est.stock_ids.size();
    meta["n_factors"] = est.column_labels.size();
    meta["seed"] = seed;
    std::ofstream out(meta_path);
    if (!out) throw DataError("cannot write " + meta_path);
    out << meta.dump(2) << "\n";
}

struct BacktestConfig {
    int rebalance_days = 20;
    int min_history = 40;  // factor dates needed before the first rebalance
    bool long_only = false;
    CovConfig cov;
};

struct BacktestResult {
    std::vector<PortfolioWeights> schedule;
    double annualized_vol = 0;
    double equal_weight_vol = 0;
    double turnover = 0;  // mean one-way turnover across rebalances
};

inline BacktestResult run_backtest(const std::vector<FactorMatrix>& factors,
                                   const PanelDataset& panel, const BacktestConfig& bc) {
    if (bc.rebalance_days < 1) throw ConfigError("rebalance_days >= 1");
    BacktestResult out;
    std::vector<PortfolioWeights> equal;
    std::map<std::string, double> prev_w;
    std::vector<double> turnovers;
    for (std::size_t i = bc.min_history; i < factors.size(); i += bc.rebalance_days) {
        std::vector<FactorMatrix> upto(factors.begin(), factors.begin() + i + 1);
        auto est = estimate_covariance(upto, panel, bc.cov);
        PortfolioWeights pw = bc.long_only ? gmv_long_only(est.sigma) : gmv_weights(est.sigma);
        pw.date = est.date;
        pw.stock_ids = est.stock_ids;
        out.schedule.push_back(pw);

        PortfolioWeights eq;
        eq.date = est.date;
        eq.stock_ids = est.stock_ids;
        eq.w = VectorXd::Constant(est.stock_ids.size(), 1.0 / est.stock_ids.size());
        equal.push_back(eq);

        if (!prev_w.empty()) {
            double t = 0;
            for (std::size_t s = 0; s < pw.stock_ids.size(); ++s) {
                auto it = prev_w.find(pw.stock_ids[s]);
                t += std::abs(pw.w(s) - (it == prev_w.end() ? 0.0 : it->second));
            }
            turnovers.push_back(0.5 * t);
        }
        prev_w.clear();
        for (std::size_t s = 0; s < pw.stock_ids.size(); ++s) prev_w[pw.stock_ids[s]] = pw.w(s);
    }
    if (out.schedule.empty()) throw InsufficientHistory("no rebalance dates in range");
    out.annualized_vol = realized_vol(out.schedule, panel);
    out.equal_weight_vol = realized_vol(equal, panel);
    if (!turnovers.empty()) {
        for (double t : turnovers) out.turnover += t;
        out.turnover /= turnovers.size();
    }
    return out;
}

inline void write_backtest(const BacktestResult& res, const std::string& weights_path,
                           const std::string& summary_path, std::uint64_t seed = 0) {
    {
        std::ofstream out(weights_path);
        if (!out) throw DataError("cannot write " + weights_path);
        out.precision(17);
        out << "date,stock_id,weight\n";
        for (const auto& pw : res.schedule)
            for (std::size_t i = 0; i < pw.stock_ids.size(); ++i)
                out << pw.date << ',' << pw.stock_ids[i] << ',' << pw.w(i) << "\n";
    }
    nlohmann::json j = {{"annualized_vol", res.annualized_vol},
                        {"equal_weight_vol", res.equal_weight_vol},
                        {"turnover", res.turnover},
                        {"n_rebalances", res.schedule.size()},
                        {"first_date", res.schedule.front().date},
                        {"last_date", res.schedule.back().date},
                        {"seed", seed}};
    std::ofstream out(summary_path);
    if (!out) throw DataError("cannot write " + summary_path);
    out << j.dump(2) << "\n";
}

// Metrics mirroring the factor-quality tables: per-factor significance, VIF,
// stability, and the cross-sectional R^2 series.
inline nlohmann::json run_report(const std::vector<FactorMatrix>& factors,
                                 const PanelDataset& panel, bool forward_alignment = true,
                                 std::vector<std::pair<std::string, double>>* r2_csv = nullptr) {
    auto series = factor_return_series(factors, panel, forward_alignment);
    if (series.dates.empty()) throw DataError("report: no feasible regression dates");
    auto sig = significance_stats(series);
    auto vif = vif_report(factors);
    auto ac = autocorrelation(factors);

    double r2_mean = 0;
    for (double v : series.r2) r2_mean += v;
    r2_mean /= series.r2.size();
    if (r2_csv)
        for (std::size_t d = 0; d < series.dates.size(); ++d)
            r2_csv->emplace_back(series.dates[d], series.r2[d]);

    const int J = static_cast<int>(series.industry_labels.size());
    nlohmann::json per_factor = nlohmann::json::array();
    for (int k = 0; k < series.n_styles; ++k) {
        per_factor.push_back({{"factor", "f" + std::to_string(k + 1)},
                              {"mean_t", sig.mean_abs_t[1 + J + k]},
                              {"pct_t_gt2", sig.pct_above_2[1 + J + k]},
                              {"vif", vif.mean_vif[k]},
                              {"autocorr", ac[k]}});
    }
    return {{"r2_mean", r2_mean},
            {"n_dates", series.dates.size()},
            {"dates_skipped", series.skipped_dates.size()},
            {"vif_dates_skipped", vif.dates_skipped},
            {"t_dates_excluded", sig.dates_excluded},
            {"factors", per_factor}};
}

}  // namespace drm

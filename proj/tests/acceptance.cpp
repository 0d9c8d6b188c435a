// Acceptance suite: one line per criterion, nonzero exit if any fail.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include "drm/pipeline.hpp"
#include "drm/synth.hpp"

using namespace drm;
using Eigen::MatrixXd;
using Eigen::VectorXd;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void criterion(int number, const std::string& name, bool (*fn)()) {
    auto t0 = std::chrono::steady_clock::now();
    bool ok = false;
    std::string err;
    try {
        ok = fn();
    } catch (const std::exception& e) {
        err = e.what();
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::ostringstream line;
    line << (ok ? "[PASS] " : "[FAIL] ") << number << ". " << name << " (" << secs << "s)";
    if (!ok && !err.empty()) line << " error: " << err;
    std::cout << line.str() << std::endl;
    if (!ok) ++g_failures;
}

MatrixXd standardized_matrix(int N, int K, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    MatrixXd F(N, K);
    for (int i = 0; i < N; ++i)
        for (int k = 0; k < K; ++k) F(i, k) = g(rng);
    VectorXd caps = VectorXd::Ones(N);
    for (int k = 0; k < K; ++k) F.col(k) = norm_op(F.col(k), caps);
    return F;
}

// 1. VIF trace identity vs per-column brute force.
bool c1_vif_identity() {
    std::mt19937_64 rng(101);
    for (int rep = 0; rep < 100; ++rep) {
        MatrixXd F = standardized_matrix(200, 8, rng);
        double trace = vif_trace(F);
        double total = vif_bruteforce(F).sum();
        if (std::abs(trace - total) > 1e-8 * std::abs(total)) return false;
    }
    return true;
}

// 2. End-to-end analytic parameter gradients vs central finite differences.
bool c2_gradient() {
    const int N = 30, P = 6, K = 4, L = 5, H = 2;
    NetConfig net;
    net.P = P;
    net.hidden = 6;
    net.layers = 1;
    net.K = K;
    net.K1 = 2;
    net.lookback = L;
    net.gat_dropout = 0.0;
    LossConfig lc;
    lc.H = H;
    lc.lambda = 0.01;

    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> g;
        ModelParams params = init_params(net, seed);
        DateSample s;
        s.caps.resize(N);
        s.industries.resize(N);
        s.y_current.resize(N);
        for (int i = 0; i < N; ++i) {
            s.caps(i) = 0.5 + std::abs(g(rng));
            s.industries[i] = "I" + std::to_string(i % 3);
            s.y_current(i) = 0.01 * g(rng);
        }
        for (int l = 0; l < L; ++l) {
            MatrixXd X(N, P);
            for (int i = 0; i < N; ++i)
                for (int j = 0; j < P; ++j) X(i, j) = g(rng);
            s.history.push_back(X);
        }
        for (int h = 0; h < H; ++h) {
            VectorXd y(N);
            for (int i = 0; i < N; ++i) y(i) = 0.01 * g(rng);
            s.forward_returns.push_back(y);
        }

        std::map<std::string, MatrixXd> grads;
        date_loss(params, net, s, lc, &grads, nullptr);

        const double step = 1e-5;
        std::uniform_int_distribution<int> pick(0, 1 << 20);
        for (auto& [key, grad] : grads) {
            MatrixXd& tensor = params.at(key);
            for (int probe = 0; probe < 3; ++probe) {
                int i = pick(rng) % tensor.rows();
                int j = pick(rng) % tensor.cols();
                double orig = tensor(i, j);
                auto central = [&](double h) {
                    tensor(i, j) = orig + h;
                    double up = date_loss(params, net, s, lc, nullptr, nullptr);
                    tensor(i, j) = orig - h;
                    double dn = date_loss(params, net, s, lc, nullptr, nullptr);
                    tensor(i, j) = orig;
                    return (up - dn) / (2 * h);
                };
                auto rel = [&](double fd) {
                    return std::abs(grad(i, j) - fd) / std::max(std::abs(fd), 1e-6);
                };
                if (rel(central(step)) > 1e-4) {
                    // a 1e-5 step can straddle an activation kink; a genuine
                    // gradient bug persists as the step shrinks
                    if (rel(central(1e-7)) > 1e-4) return false;
                }
            }
        }
    }
    return true;
}

// 3. r_squared vs an explicit normal-equations solve.
bool c3_projection() {
    std::mt19937_64 rng(303);
    std::normal_distribution<double> g;
    for (int rep = 0; rep < 100; ++rep) {
        const int N = 40 + rep % 20, K = 2 + rep % 5;
        MatrixXd F(N, K);
        VectorXd y(N);
        for (int i = 0; i < N; ++i) {
            for (int k = 0; k < K; ++k) F(i, k) = g(rng);
            y(i) = g(rng);
        }
        double got = r_squared(F, y, 1e-12);
        VectorXd beta = (F.transpose() * F).fullPivLu().solve(F.transpose() * y);
        double want = 1.0 - (y - F * beta).squaredNorm() / y.squaredNorm();
        if (std::abs(got - want) > 1e-10) return false;
    }
    return true;
}

VectorXd enumeration_oracle(const MatrixXd& sigma) {
    const int N = sigma.rows();
    double best = std::numeric_limits<double>::infinity();
    VectorXd best_w;
    for (int mask = 1; mask < (1 << N); ++mask) {
        std::vector<int> idx;
        for (int i = 0; i < N; ++i)
            if (mask & (1 << i)) idx.push_back(i);
        const int m = static_cast<int>(idx.size());
        MatrixXd sub(m, m);
        for (int a = 0; a < m; ++a)
            for (int b = 0; b < m; ++b) sub(a, b) = sigma(idx[a], idx[b]);
        Eigen::FullPivLU<MatrixXd> lu(sub);
        if (!lu.isInvertible()) continue;
        VectorXd x = lu.solve(VectorXd::Ones(m));
        if (std::abs(x.sum()) < 1e-14) continue;
        VectorXd ws = x / x.sum();
        if ((ws.array() < -1e-10).any()) continue;
        VectorXd w = VectorXd::Zero(N);
        for (int a = 0; a < m; ++a) w(idx[a]) = ws(a);
        double obj = w.dot(sigma * w);
        if (obj < best) {
            best = obj;
            best_w = w;
        }
    }
    return best_w;
}

// 4. GMV closed form vs long-only solver vs enumeration.
bool c4_gmv() {
    std::mt19937_64 rng(404);
    std::normal_distribution<double> g;
    for (int rep = 0; rep < 50; ++rep) {
        const int N = 4 + rep % 9;  // 4..12
        MatrixXd A(N, N);
        for (int i = 0; i < N; ++i)
            for (int j = 0; j < N; ++j) A(i, j) = g(rng);
        MatrixXd sigma = A * A.transpose() / N + 0.05 * MatrixXd::Identity(N, N);

        auto un = gmv_weights(sigma);
        auto lo = gmv_long_only(sigma, 1e-9);
        if ((un.w.array() >= 0).all()) {
            if ((lo.w - un.w).cwiseAbs().maxCoeff() > 1e-7) return false;
        }
        VectorXd oracle = enumeration_oracle(sigma);
        if (oracle.size() != N) return false;
        double got = lo.w.dot(sigma * lo.w);
        double want = oracle.dot(sigma * oracle);
        if (std::abs(got - want) > 1e-7) return false;
    }
    return true;
}

// 5. Zero-sum industry constraint and constrained-LS oracle.
bool c5_regression() {
    std::mt19937_64 rng(505);
    std::normal_distribution<double> g;
    for (int rep = 0; rep < 50; ++rep) {
        const int N = 80, J = 5, K = 4;
        MatrixXd S(N, K);
        VectorXd y(N);
        std::vector<std::string> inds(N);
        std::vector<std::string> labels;
        for (int j = 0; j < J; ++j) labels.push_back("I" + std::to_string(j));
        for (int i = 0; i < N; ++i) {
            for (int k = 0; k < K; ++k) S(i, k) = g(rng);
            y(i) = g(rng);
            inds[i] = labels[i % J];
        }
        auto r = cross_sectional_regress(S, inds, y);

        double zsum = 0;
        for (int j = 0; j < J; ++j) zsum += r.coef(1 + j);
        if (std::abs(zsum) > 1e-10) return false;

        // KKT oracle for min ||y - X b||^2 s.t. sum of industry coefs = 0
        const int p = 1 + J + K;
        MatrixXd X = MatrixXd::Zero(N, p);
        X.col(0).setOnes();
        for (int i = 0; i < N; ++i)
            for (int j = 0; j < J; ++j)
                if (inds[i] == labels[j]) X(i, 1 + j) = 1.0;
        X.rightCols(K) = S;
        MatrixXd kkt = MatrixXd::Zero(p + 1, p + 1);
        kkt.topLeftCorner(p, p) = X.transpose() * X;
        for (int j = 0; j < J; ++j) {
            kkt(1 + j, p) = 1.0;
            kkt(p, 1 + j) = 1.0;
        }
        VectorXd rhs = VectorXd::Zero(p + 1);
        rhs.head(p) = X.transpose() * y;
        VectorXd oracle = kkt.fullPivLu().solve(rhs).head(p);
        if ((r.coef - oracle).cwiseAbs().maxCoeff() > 1e-8) return false;
    }
    return true;
}

// Shared synthetic market for criteria 6, 7, 9.
struct Market {
    PanelDataset panel;
    GroundTruth gt;
    Splits splits;
    Market() {
        SynthSpec s;
        s.seed = 42;
        auto pair = generate_panel(s);
        panel = std::move(pair.first);
        gt = std::move(pair.second);
        splits = split(panel, {panel.dates[499], panel.dates[624], panel.dates[749]});
    }
};

Market& market() {
    static Market m;
    return m;
}

double mean_test_r2(const std::vector<FactorMatrix>& fms, const PanelDataset& panel,
                    int test_begin) {
    std::vector<FactorMatrix> test;
    for (const auto& f : fms)
        if (panel.date_index(f.date) >= test_begin) test.push_back(f);
    return r2_series(test, panel, true).mean;
}

std::vector<FactorMatrix> train_and_infer(const Market& m, int H, double lambda,
                                          std::uint64_t seed, int hidden, int lookback,
                                          int max_epochs, int infer_begin = 625) {
    NetConfig net;
    net.P = 10;
    net.K = 4;
    net.K1 = 2;
    net.hidden = hidden;
    net.layers = 1;
    net.lookback = lookback;
    net.gat_dropout = 0.0;
    TrainConfig tc;
    tc.loss.H = H;
    tc.loss.lambda = lambda;
    tc.learning_rate = 3e-3;
    tc.accumulation = 8;
    tc.max_epochs = max_epochs;
    tc.early_stop_patience = 8;
    tc.seed = seed;
    auto [params, rep] = train(m.panel, m.splits, net, tc);
    return infer_factors(params, net, m.panel, infer_begin, 750, 0.0);
}

// 6. Learned factors vs ground-truth oracle and the pass-through baseline.
bool c6_recovery() {
    Market& m = market();

    std::vector<FactorMatrix> truth;
    for (int t = 625; t < 750; ++t) {
        FactorMatrix fm;
        fm.date = m.panel.dates[t];
        fm.stock_ids = m.panel.stock_ids;
        fm.values = m.gt.exposures[t];
        truth.push_back(fm);
    }
    double oracle = mean_test_r2(truth, m.panel, 625);

    std::vector<FactorMatrix> frm;
    for (int t = 625; t < 750; ++t) frm.push_back(frm_factors(m.panel, m.panel.dates[t]));
    double frm_r2 = mean_test_r2(frm, m.panel, 625);

    auto learned = train_and_infer(m, 5, 0.01, 1, 16, 10, 40);
    double learned_r2 = mean_test_r2(learned, m.panel, 625);

    std::cout << "       held-out R^2: learned " << learned_r2 << ", oracle " << oracle
              << ", pass-through " << frm_r2 << std::endl;
    return learned_r2 >= 0.9 * oracle && learned_r2 > frm_r2;
}

// 7. Ablation directionality: horizons vs stability, lambda vs VIF, PCA K vs R^2.
bool c7_ablations() {
    Market& m = market();

    // (a) factor stability: multi-horizon training beats single-horizon.
    // The horizon effect needs a trained net, so these runs get more epochs
    // than the quick penalty-sweep runs below.
    double ac20 = 0, ac1 = 0;
    for (std::uint64_t seed : {1, 2, 3}) {
        auto f20 = train_and_infer(m, 20, 0.01, seed, 8, 6, 20, 500);
        auto f1 = train_and_infer(m, 1, 0.01, seed, 8, 6, 20, 500);
        for (double v : autocorrelation(f20)) ac20 += v / 4.0 / 3.0;
        for (double v : autocorrelation(f1)) ac1 += v / 4.0 / 3.0;
    }
    std::cout << "       mean autocorr: H=20 " << ac20 << ", H=1 " << ac1 << std::endl;
    if (!(ac20 > ac1)) return false;

    // (b) mean VIF non-increasing in the penalty weight
    double prev_vif = std::numeric_limits<double>::infinity();
    for (double lambda : {0.001, 0.01, 0.1}) {
        double mean_vif = 0;
        for (std::uint64_t seed : {1, 2, 3}) {
            auto f = train_and_infer(m, 5, lambda, seed, 8, 6, 6);
            auto rep = vif_report(f);
            for (double v : rep.mean_vif) mean_vif += v / rep.mean_vif.size() / 3.0;
        }
        std::cout << "       lambda " << lambda << " mean VIF " << mean_vif << std::endl;
        if (mean_vif > prev_vif + 1e-9) return false;
        prev_vif = mean_vif;
    }

    // (c) PCA baseline in-sample R^2 monotone in K
    auto cs = cross_section(m.panel, m.panel.dates[700]);
    double prev = -1;
    for (int K : {1, 2, 4, 8}) {
        auto fm = srm_factors(m.panel, m.panel.dates[700], 252, K);
        double r2 = r_squared(fm.values, cs.returns, 1e-10);
        if (r2 < prev - 1e-10) return false;
        prev = r2;
    }
    return true;
}

// 8. Covariance pipeline invariants.
bool c8_covariance() {
    Market& m = market();
    std::vector<FactorMatrix> frm;
    for (int t = 400; t < 700; ++t) frm.push_back(frm_factors(m.panel, m.panel.dates[t]));

    CovConfig cc;
    for (int last : {200, 240, 280, 299}) {
        std::vector<FactorMatrix> upto(frm.begin(), frm.begin() + last + 1);
        auto est = estimate_covariance(upto, m.panel, cc);
        if ((est.sigma - est.sigma.transpose()).cwiseAbs().maxCoeff() > 1e-12) return false;
        Eigen::SelfAdjointEigenSolver<MatrixXd> es(est.sigma);
        if (es.eigenvalues().minCoeff() < -1e-10) return false;
    }

    // EWMA estimators reduce to sample moments in the infinite-halflife limit
    std::mt19937_64 rng(808);
    std::normal_distribution<double> g;
    const int T = 150;
    MatrixXd B(T, 3);
    for (int t = 0; t < T; ++t)
        for (int k = 0; k < 3; ++k) B(t, k) = 0.01 * g(rng);
    double inf = std::numeric_limits<double>::infinity();
    MatrixXd S = factor_covariance(B, inf, inf, T);
    VectorXd mean = B.colwise().mean();
    MatrixXd centered = B.rowwise() - mean.transpose();
    MatrixXd sample = centered.transpose() * centered / T;
    if ((S - sample).cwiseAbs().maxCoeff() > 1e-10) return false;

    // calibrated forecasts give a unit regime multiplier
    MatrixXd pred = MatrixXd::Constant(60, 4, 0.02);
    auto vra = volatility_regime_adjust(pred, pred, MatrixXd::Identity(4, 4));
    return std::abs(vra.multiplier - 1.0) <= 1e-12;
}

// 9. Minimum variance portfolio vs equal weight out of sample.
bool c9_portfolio() {
    Market& m = market();
    std::vector<FactorMatrix> frm;
    for (int t = 400; t < 750; ++t) frm.push_back(frm_factors(m.panel, m.panel.dates[t]));
    BacktestConfig bc;
    bc.min_history = 150;
    bc.rebalance_days = 20;
    auto res = run_backtest(frm, m.panel, bc);
    std::cout << "       annualized vol: minimum variance " << res.annualized_vol
              << ", equal weight " << res.equal_weight_vol << std::endl;
    return res.annualized_vol <= res.equal_weight_vol;
}

// 10. Bit-identical artifacts across two full pipeline runs.
bool c10_determinism() {
    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    fs::path base = fs::temp_directory_path() / "drm_acceptance_det";
    fs::remove_all(base);

    auto run_once = [&](const fs::path& dir) {
        fs::create_directories(dir);
        SynthSpec spec;
        spec.n_stocks = 25;
        spec.n_dates = 120;
        spec.n_features = 5;
        spec.k_true = 3;
        spec.seed = 9;
        auto [panel, gt] = generate_panel(spec);
        write_panel(panel, (dir / "panel.csv").string());

        NetConfig net;
        net.P = 5;
        net.K = 3;
        net.K1 = 1;
        net.hidden = 6;
        net.layers = 1;
        net.lookback = 6;
        net.gat_dropout = 0.5;
        TrainConfig tc;
        tc.loss.H = 3;
        tc.accumulation = 8;
        tc.max_epochs = 2;
        tc.seed = 11;
        auto splits = split(panel, {panel.dates[79], panel.dates[99], panel.dates[119]});
        auto [params, rep] = train(panel, splits, net, tc);
        save_checkpoint((dir / "checkpoint.json").string(), net, params);

        auto fms = infer_factors(params, net, panel, 100, 120, 0.99);
        write_factor_matrices(fms, (dir / "factors.csv").string());

        nlohmann::json report = run_report(fms, panel, true);
        std::ofstream out(dir / "report.json");
        out << report.dump(2) << "\n";
    };
    run_once(base / "a");
    run_once(base / "b");

    bool ok = true;
    for (const char* f : {"panel.csv", "checkpoint.json", "factors.csv", "report.json"}) {
        if (slurp(base / "a" / f) != slurp(base / "b" / f)) {
            std::cout << "       mismatch in " << f << std::endl;
            ok = false;
        }
    }
    fs::remove_all(base);
    return ok;
}

}  // namespace

int main() {
    criterion(1, "multicollinearity trace identity matches per-column brute force", c1_vif_identity);
    criterion(2, "analytic network gradients match finite differences", c2_gradient);
    criterion(3, "projection explained variance matches normal equations", c3_projection);
    criterion(4, "minimum variance weights match closed form and enumeration", c4_gmv);
    criterion(5, "zero-sum industry regression matches the constrained oracle", c5_regression);
    criterion(6, "learned factors recover the synthetic market", c6_recovery);
    criterion(7, "ablations move in the documented directions", c7_ablations);
    criterion(8, "covariance pipeline invariants hold", c8_covariance);
    criterion(9, "minimum variance beats equal weight out of sample", c9_portfolio);
    criterion(10, "fixed seeds give bit-identical artifacts", c10_determinism);

    std::cout << (g_failures == 0 ? "all criteria passed" : "criteria failed") << std::endl;
    return g_failures == 0 ? 0 : 1;
}

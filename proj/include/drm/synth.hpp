#pragma once

#include <Eigen/Dense>
#include <random>
#include <string>
#include <vector>

#include "drm/errors.hpp"
#include "drm/network.hpp"
#include "drm/panel.hpp"

namespace drm {

struct SynthSpec {
    int n_stocks = 100;
    int n_dates = 750;
    int n_features = 10;
    int k_true = 4;
    // Per-factor return volatilities (diagonal Sigma_B_true); resized with
    // a decaying default if shorter than k_true.
    std::vector<double> factor_vols = {0.02, 0.016, 0.012, 0.006};
    double idio_vol_min = 0.01;
    double idio_vol_max = 0.02;
    double feature_noise = 0.5;  // std of observation noise on the driver features
    double phi = 0.99;           // AR(1) persistence of the latent drivers
    int n_industries = 5;
    std::uint64_t seed = 0;

    void validate() const {
        if (n_stocks < 2 || n_dates < 2 || n_features < 1 || k_true < 1 || n_industries < 1)
            throw InvalidSpec("dimensions must be positive");
        if (k_true > n_features) throw InvalidSpec("k_true must not exceed n_features");
        if (phi < 0 || phi >= 1) throw InvalidSpec("phi in [0,1)");
        if (idio_vol_min < 0 || idio_vol_max < idio_vol_min) throw InvalidSpec("idio vol range");
        for (double v : factor_vols)
            if (v < 0) throw InvalidSpec("factor vols must be nonnegative");
    }

    nlohmann::json to_json() const {
        return {{"n_stocks", n_stocks}, {"n_dates", n_dates}, {"n_features", n_features},
                {"k_true", k_true},     {"factor_vols", factor_vols},
                {"idio_vol_min", idio_vol_min}, {"idio_vol_max", idio_vol_max},
                {"feature_noise", feature_noise}, {"phi", phi},
                {"n_industries", n_industries}, {"seed", seed}};
    }
    static SynthSpec from_json(const nlohmann::json& j) {
        SynthSpec s;
        if (j.contains("n_stocks")) s.n_stocks = j["n_stocks"];
        if (j.contains("n_dates")) s.n_dates = j["n_dates"];
        if (j.contains("n_features")) s.n_features = j["n_features"];
        if (j.contains("k_true")) s.k_true = j["k_true"];
        if (j.contains("factor_vols")) s.factor_vols = j["factor_vols"].get<std::vector<double>>();
        if (j.contains("idio_vol_min")) s.idio_vol_min = j["idio_vol_min"];
        if (j.contains("idio_vol_max")) s.idio_vol_max = j["idio_vol_max"];
        if (j.contains("feature_noise")) s.feature_noise = j["feature_noise"];
        if (j.contains("phi")) s.phi = j["phi"];
        if (j.contains("n_industries")) s.n_industries = j["n_industries"];
        if (j.contains("seed")) s.seed = j["seed"];
        return s;
    }
};

struct GroundTruth {
    std::vector<std::string> dates;
    std::vector<std::string> stock_ids;
    std::vector<MatrixXd> exposures;      // per date, N x K_true, normalized
    std::vector<VectorXd> factor_returns; // per date, K_true
    VectorXd delta_true;                  // per stock idiosyncratic variance
};

namespace detail {

// ISO date arithmetic, enough for synthetic calendars.
inline std::string iso_date(int year, int month, int day) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", year, month, day);
    return buf;
}

inline std::vector<std::string> make_dates(int n) {
    static const int mdays[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    int y = 2015, m = 1, d = 1;
    std::vector<std::string> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        out.push_back(iso_date(y, m, d));
        int md = mdays[m - 1];
        if (m == 2 && (y % 4 == 0 && (y % 100 != 0 || y % 400 == 0))) md = 29;
        if (++d > md) {
            d = 1;
            if (++m > 12) { m = 1; ++y; }
        }
    }
    return out;
}

}  // namespace detail

// Generate returns from the linear factor model y = F b + u with persistent
// exposures. The first k_true-1 exposures are AR(1) drivers observed in the
// features with noise; the last is a squared-driver term (nonlinear-size
// style) that no single input feature carries linearly.
inline std::pair<PanelDataset, GroundTruth> generate_panel(const SynthSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> gauss;
    const int N = spec.n_stocks, T = spec.n_dates, P = spec.n_features, K = spec.k_true;

    std::vector<double> vols = spec.factor_vols;
    while (static_cast<int>(vols.size()) < K) vols.push_back(vols.empty() ? 0.01 : vols.back() * 0.8);

    PanelDataset panel;
    GroundTruth gt;
    panel.n_features = P;
    panel.dates = detail::make_dates(T);
    gt.dates = panel.dates;
    for (int i = 0; i < N; ++i) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "S%04d", i);
        panel.stock_ids.push_back(buf);
    }
    gt.stock_ids = panel.stock_ids;

    VectorXd caps(N);
    std::vector<std::string> industry(N);
    for (int i = 0; i < N; ++i) {
        caps(i) = std::exp(1.5 * gauss(rng));
        industry[i] = "IND" + std::to_string(i % spec.n_industries);
    }
    gt.delta_true.resize(N);
    std::uniform_real_distribution<double> ivol(spec.idio_vol_min, spec.idio_vol_max);
    for (int i = 0; i < N; ++i) {
        double v = ivol(rng);
        gt.delta_true(i) = v * v;
    }

    // Latent AR(1) drivers, stationary unit variance. Driver 0 also powers
    // the squared exposure; extra drivers act as pure-noise distractor
    // features so the feature panel has full width P.
    const int n_drivers = std::max(K - 1, 1);
    const int n_distract = P - n_drivers;
    MatrixXd z = MatrixXd::Zero(N, n_drivers);
    MatrixXd distract = MatrixXd::Zero(N, std::max(n_distract, 0));
    for (int i = 0; i < N; ++i) {
        for (int k = 0; k < n_drivers; ++k) z(i, k) = gauss(rng);
        for (int k = 0; k < n_distract; ++k) distract(i, k) = gauss(rng);
    }
    const double innov = std::sqrt(1.0 - spec.phi * spec.phi);

    panel.obs.resize(T);
    gt.exposures.reserve(T);
    gt.factor_returns.reserve(T);
    for (int t = 0; t < T; ++t) {
        if (t > 0) {
            for (int i = 0; i < N; ++i) {
                for (int k = 0; k < n_drivers; ++k)
                    z(i, k) = spec.phi * z(i, k) + innov * gauss(rng);
                for (int k = 0; k < n_distract; ++k)
                    distract(i, k) = spec.phi * distract(i, k) + innov * gauss(rng);
            }
        }
        // raw exposures: drivers, plus the centered squared driver
        MatrixXd expo_raw(N, K);
        for (int k = 0; k < K - 1; ++k) expo_raw.col(k) = z.col(k);
        expo_raw.col(K - 1) = ((z.col(0).array().square() - 1.0) / std::sqrt(2.0)).matrix();
        if (K == 1) expo_raw.col(0) = z.col(0);
        MatrixXd expo(N, K);
        for (int k = 0; k < K; ++k) expo.col(k) = norm_op(expo_raw.col(k), caps);

        VectorXd b(K);
        for (int k = 0; k < K; ++k) b(k) = vols[k] * gauss(rng);
        VectorXd u(N);
        for (int i = 0; i < N; ++i) u(i) = std::sqrt(gt.delta_true(i)) * gauss(rng);
        VectorXd y = expo * b + u;

        gt.exposures.push_back(expo);
        gt.factor_returns.push_back(b);

        for (int i = 0; i < N; ++i) {
            Observation o;
            o.features.resize(P);
            for (int k = 0; k < n_drivers; ++k)
                o.features[k] = z(i, k) + spec.feature_noise * gauss(rng);
            for (int k = 0; k < n_distract; ++k)
                o.features[n_drivers + k] = distract(i, k);
            o.ret = y(i);
            o.cap_weight = caps(i);
            o.industry = industry[i];
            o.valid = true;
            panel.obs[t][panel.stock_ids[i]] = o;
        }
        panel.report.total_rows += N;
        panel.report.valid_rows += N;
    }
    return {panel, gt};
}

inline void write_ground_truth(const GroundTruth& gt, const std::string& dir) {
    {
        std::ofstream out(dir + "/truth_exposures.csv");
        out.precision(17);
        out << "date,stock_id";
        for (std::size_t k = 0; k < static_cast<std::size_t>(gt.exposures[0].cols()); ++k)
            out << ",g" << k + 1;
        out << "\n";
        for (std::size_t t = 0; t < gt.dates.size(); ++t)
            for (std::size_t i = 0; i < gt.stock_ids.size(); ++i) {
                out << gt.dates[t] << ',' << gt.stock_ids[i];
                for (int k = 0; k < gt.exposures[t].cols(); ++k)
                    out << ',' << gt.exposures[t](i, k);
                out << "\n";
            }
    }
    {
        std::ofstream out(dir + "/truth_factor_returns.csv");
        out.precision(17);
        out << "date";
        for (int k = 0; k < gt.factor_returns[0].size(); ++k) out << ",b" << k + 1;
        out << "\n";
        for (std::size_t t = 0; t < gt.dates.size(); ++t) {
            out << gt.dates[t];
            for (int k = 0; k < gt.factor_returns[t].size(); ++k)
                out << ',' << gt.factor_returns[t](k);
            out << "\n";
        }
    }
    {
        std::ofstream out(dir + "/truth_specific_variance.csv");
        out.precision(17);
        out << "stock_id,delta\n";
        for (std::size_t i = 0; i < gt.stock_ids.size(); ++i)
            out << gt.stock_ids[i] << ',' << gt.delta_true(i) << "\n";
    }
}

}  // namespace drm

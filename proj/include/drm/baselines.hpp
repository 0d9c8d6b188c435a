#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "drm/errors.hpp"
#include "drm/network.hpp"
#include "drm/panel.hpp"

namespace drm {

// Pass-through style model: the day's raw features, column-normalized.
inline FactorMatrix frm_factors(const PanelDataset& panel, const std::string& date) {
    auto cs = cross_section(panel, date);
    FactorMatrix fm;
    fm.date = date;
    fm.stock_ids = cs.stock_ids;
    const int N = cs.features.rows(), P = cs.features.cols();
    fm.values.resize(N, P);
    for (int k = 0; k < P; ++k) fm.values.col(k) = norm_op(cs.features.col(k), cs.caps);
    return fm;
}

// Statistical model: top-K eigenvectors of the trailing-window return
// covariance. Stocks with any gap inside the window are dropped for the date.
// Each exposure column is sign-fixed (largest-magnitude entry positive) and
// normalized like every other factor column.
inline FactorMatrix srm_factors(const PanelDataset& panel, const std::string& date,
                                int window = 252, int K = 10, bool use_correlation = false) {
    int t = panel.date_index(date);
    if (t < 0) throw DataError("date not in panel: " + date);
    if (t - window + 1 < 0)
        throw InsufficientHistory("need " + std::to_string(window) + " dates before " + date);
    if (K < 1) throw ConfigError("srm_factors: K >= 1");

    // stocks with a full valid return history over [t-window+1, t]
    std::vector<std::string> ids;
    for (const auto& [id, o] : panel.obs[t]) {
        if (!o.valid) continue;
        bool full = true;
        for (int d = t - window + 1; d < t && full; ++d) {
            auto it = panel.obs[d].find(id);
            if (it == panel.obs[d].end() || !it->second.valid) full = false;
        }
        if (full) ids.push_back(id);
    }
    const int N = static_cast<int>(ids.size());
    if (N < K) throw InsufficientHistory("fewer full-history stocks than components");

    MatrixXd R(window, N);
    for (int d = 0; d < window; ++d)
        for (int i = 0; i < N; ++i) R(d, i) = panel.obs[t - window + 1 + d].at(ids[i]).ret;
    VectorXd mean = R.colwise().mean();
    MatrixXd C = R.rowwise() - mean.transpose();
    MatrixXd cov = C.transpose() * C / window;
    if (use_correlation) {
        VectorXd sd = cov.diagonal().cwiseSqrt();
        for (int i = 0; i < N; ++i)
            for (int j = 0; j < N; ++j) {
                double d = sd(i) * sd(j);
                cov(i, j) = d > 0 ? cov(i, j) / d : (i == j ? 1.0 : 0.0);
            }
    }

    Eigen::SelfAdjointEigenSolver<MatrixXd> es(cov);
    if (es.info() != Eigen::Success) throw RankDeficient("eigendecomposition failed");

    VectorXd caps(N);
    for (int i = 0; i < N; ++i) caps(i) = panel.obs[t].at(ids[i]).cap_weight;

    FactorMatrix fm;
    fm.date = date;
    fm.stock_ids = ids;
    fm.values.resize(N, K);
    for (int k = 0; k < K; ++k) {
        VectorXd v = es.eigenvectors().col(N - 1 - k);  // descending eigenvalue order
        int imax = 0;
        for (int i = 1; i < N; ++i)
            if (std::abs(v(i)) > std::abs(v(imax))) imax = i;
        if (v(imax) < 0) v = -v;
        fm.values.col(k) = norm_op(v, caps);
    }
    return fm;
}

}  // namespace drm

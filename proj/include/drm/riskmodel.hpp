#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "drm/errors.hpp"
#include "drm/network.hpp"
#include "drm/panel.hpp"

namespace drm {

struct RegressionResult {
    VectorXd coef;       // 1 + J + K: country, industries (in label order), styles
    VectorXd tstats;     // same layout; NaN where undefined
    VectorXd residuals;  // N
    double r2 = 0;
    std::vector<std::string> industry_labels;
};

// Cross-sectional least squares on [country | industry dummies | styles] with
// the industry coefficients constrained to zero sum. The constraint is
// eliminated by substituting the last industry coefficient with minus the sum
// of the others; coefficient covariance is mapped back through the same
// restriction matrix for the t-stats.
inline RegressionResult cross_sectional_regress(const MatrixXd& styles,
                                                const std::vector<std::string>& industries,
                                                const VectorXd& y,
                                                const VectorXd* weights = nullptr) {
    const int N = styles.rows(), K = styles.cols();
    if (static_cast<int>(industries.size()) != N || y.size() != N)
        throw DimensionMismatch("cross_sectional_regress inputs");

    std::vector<std::string> labels;
    {
        std::set<std::string> s(industries.begin(), industries.end());
        labels.assign(s.begin(), s.end());
    }
    const int J = static_cast<int>(labels.size());
    std::map<std::string, int> label_ix;
    for (int j = 0; j < J; ++j) label_ix[labels[j]] = j;

    const int n_full = 1 + J + K;
    const int n_free = 1 + (J - 1) + K;  // eliminated system
    if (N <= n_free) throw RankDeficient("need N > 1 + (J-1) + K");

    // Restriction matrix R: full coefficients = R * free coefficients.
    MatrixXd R = MatrixXd::Zero(n_full, n_free);
    R(0, 0) = 1.0;
    for (int j = 0; j + 1 < J; ++j) {
        R(1 + j, 1 + j) = 1.0;
        R(1 + (J - 1), 1 + j) -= 1.0;  // last industry = -sum of others
    }
    for (int k = 0; k < K; ++k) R(1 + J + k, 1 + (J - 1) + k) = 1.0;

    MatrixXd X(N, n_full);
    X.col(0).setOnes();
    X.middleCols(1, J).setZero();
    for (int i = 0; i < N; ++i) X(i, 1 + label_ix.at(industries[i])) = 1.0;
    X.rightCols(K) = styles;

    MatrixXd Xr = X * R;
    MatrixXd W = weights ? MatrixXd(weights->asDiagonal()) : MatrixXd();
    MatrixXd G = weights ? MatrixXd(Xr.transpose() * W * Xr) : MatrixXd(Xr.transpose() * Xr);
    Eigen::FullPivLU<MatrixXd> lu(G);
    if (!lu.isInvertible()) throw RankDeficient("restricted normal equations singular");
    VectorXd rhs = weights ? VectorXd(Xr.transpose() * W * y) : VectorXd(Xr.transpose() * y);
    VectorXd gamma = lu.solve(rhs);

    RegressionResult out;
    out.industry_labels = labels;
    out.coef = R * gamma;
    out.residuals = y - X * out.coef;

    const int dof = N - n_free;
    double sse = weights ? out.residuals.dot(W * out.residuals) : out.residuals.squaredNorm();
    double sigma2 = dof > 0 ? sse / dof : 0.0;
    MatrixXd cov_full = sigma2 * R * lu.inverse() * R.transpose();
    out.tstats.resize(n_full);
    for (int i = 0; i < n_full; ++i) {
        double se = std::sqrt(std::max(cov_full(i, i), 0.0));
        out.tstats(i) = se > 0 ? out.coef(i) / se : std::numeric_limits<double>::quiet_NaN();
    }
    double tss = y.squaredNorm();
    out.r2 = tss > 0 ? 1.0 - out.residuals.squaredNorm() / tss : 0.0;
    return out;
}

struct FactorReturnSeries {
    std::vector<std::string> dates;       // regression dates (return dates)
    std::vector<std::string> industry_labels;  // global label order
    std::vector<VectorXd> coef;           // per date, 1 + J + K (global layout)
    std::vector<VectorXd> tstats;
    std::vector<std::map<std::string, double>> residuals;  // per date, stock -> u
    std::vector<double> r2;
    int n_styles = 0;
    std::vector<std::string> skipped_dates;

    int width() const { return 1 + static_cast<int>(industry_labels.size()) + n_styles; }
};

// Regress returns on [country | industries | styles] per date. Forward
// alignment (default): factors known at end of day t explain returns on day
// t+1; contemporaneous mode regresses the same date's returns.
inline FactorReturnSeries factor_return_series(const std::vector<FactorMatrix>& factors,
                                               const PanelDataset& panel,
                                               bool forward_alignment = true,
                                               bool sqrt_cap_weights = false) {
    FactorReturnSeries out;
    if (factors.empty()) return out;
    out.n_styles = static_cast<int>(factors[0].values.cols());

    // collect global industry label set over all involved dates
    std::set<std::string> labels;
    for (const auto& fm : factors) {
        int t = panel.date_index(fm.date);
        if (t < 0) continue;
        for (const auto& id : fm.stock_ids) labels.insert(panel.obs[t].at(id).industry);
    }
    out.industry_labels.assign(labels.begin(), labels.end());
    std::map<std::string, int> label_ix;
    for (std::size_t j = 0; j < out.industry_labels.size(); ++j)
        label_ix[out.industry_labels[j]] = static_cast<int>(j);
    const int J = static_cast<int>(out.industry_labels.size());

    for (const auto& fm : factors) {
        int t = panel.date_index(fm.date);
        if (t < 0) continue;
        int tr = forward_alignment ? t + 1 : t;
        if (tr >= static_cast<int>(panel.dates.size())) continue;

        // stocks present in the factor matrix and valid on the return date
        std::vector<int> rows;
        std::vector<std::string> inds;
        std::vector<double> rets, caps;
        for (std::size_t i = 0; i < fm.stock_ids.size(); ++i) {
            auto it = panel.obs[tr].find(fm.stock_ids[i]);
            if (it == panel.obs[tr].end() || !it->second.valid) continue;
            const auto& base = panel.obs[t].at(fm.stock_ids[i]);
            rows.push_back(static_cast<int>(i));
            inds.push_back(base.industry);
            rets.push_back(it->second.ret);
            caps.push_back(base.cap_weight);
        }
        const int N = static_cast<int>(rows.size());
        const int K = out.n_styles;
        if (N <= 1 + J - 1 + K) {
            out.skipped_dates.push_back(fm.date);
            continue;
        }
        MatrixXd S(N, K);
        VectorXd y(N);
        for (int i = 0; i < N; ++i) {
            S.row(i) = fm.values.row(rows[i]);
            y(i) = rets[i];
        }
        if (y.squaredNorm() == 0) {
            out.skipped_dates.push_back(fm.date);
            continue;
        }
        RegressionResult r;
        try {
            if (sqrt_cap_weights) {
                VectorXd w(N);
                for (int i = 0; i < N; ++i) w(i) = std::sqrt(caps[i]);
                r = cross_sectional_regress(S, inds, y, &w);
            } else {
                r = cross_sectional_regress(S, inds, y);
            }
        } catch (const NumericalError&) {
            out.skipped_dates.push_back(fm.date);
            continue;
        }
        // map local industry layout into the global layout
        VectorXd coef = VectorXd::Zero(out.width());
        VectorXd ts = VectorXd::Constant(out.width(), std::numeric_limits<double>::quiet_NaN());
        coef(0) = r.coef(0);
        ts(0) = r.tstats(0);
        for (std::size_t j = 0; j < r.industry_labels.size(); ++j) {
            int gj = label_ix.at(r.industry_labels[j]);
            coef(1 + gj) = r.coef(1 + j);
            ts(1 + gj) = r.tstats(1 + j);
        }
        for (int k = 0; k < K; ++k) {
            coef(1 + J + k) = r.coef(1 + r.industry_labels.size() + k);
            ts(1 + J + k) = r.tstats(1 + r.industry_labels.size() + k);
        }
        std::map<std::string, double> resid;
        for (int i = 0; i < N; ++i) resid[fm.stock_ids[rows[i]]] = r.residuals(i);

        out.dates.push_back(panel.dates[tr]);
        out.coef.push_back(std::move(coef));
        out.tstats.push_back(std::move(ts));
        out.residuals.push_back(std::move(resid));
        out.r2.push_back(r.r2);
    }
    return out;
}

// Exponential weights, most recent first: w_k proportional to 0.5^(k/halflife).
inline VectorXd ewma_weights(double halflife, int n) {
    if (halflife <= 0 || n < 1) throw ConfigError("ewma_weights: halflife > 0, n >= 1");
    VectorXd w(n);
    if (std::isinf(halflife)) {
        w.setOnes();
    } else {
        for (int k = 0; k < n; ++k) w(k) = std::pow(0.5, k / halflife);
    }
    return w / w.sum();
}

namespace detail {

// Weighted mean/covariance with weights aligned most-recent-first against the
// last rows of the sample block.
inline MatrixXd weighted_covariance(const MatrixXd& B, const VectorXd& w) {
    const int T = B.rows(), M = B.cols();
    VectorXd mean = VectorXd::Zero(M);
    for (int t = 0; t < T; ++t) mean += w(T - 1 - t) * B.row(t).transpose();
    MatrixXd cov = MatrixXd::Zero(M, M);
    for (int t = 0; t < T; ++t) {
        VectorXd d = B.row(t).transpose() - mean;
        cov += w(T - 1 - t) * d * d.transpose();
    }
    return cov;
}

inline MatrixXd psd_clip(const MatrixXd& S, bool* repaired = nullptr) {
    MatrixXd sym = 0.5 * (S + S.transpose());
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(sym);
    VectorXd ev = es.eigenvalues();
    if (ev.minCoeff() >= 0) {
        if (repaired) *repaired = false;
        return sym;
    }
    if (repaired) *repaired = true;
    VectorXd cl = ev.cwiseMax(0.0);
    return es.eigenvectors() * cl.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

// EWMA correlations (long halflife) combined with EWMA variances (short
// halflife): Sigma_B[i,j] = rho_ij * sigma_i * sigma_j, clipped to PSD.
inline MatrixXd factor_covariance(const MatrixXd& B_full, double corr_halflife = 240,
                                  double var_halflife = 60, int window = 504,
                                  bool* psd_repaired = nullptr) {
    if (window < 2) throw ConfigError("factor_covariance: window >= 2");
    MatrixXd B = B_full.rows() > window ? MatrixXd(B_full.bottomRows(window)) : B_full;
    const int T = B.rows();
    if (T < 2) throw InsufficientHistory("factor_covariance needs T >= 2");
    VectorXd wc = ewma_weights(corr_halflife, T);
    VectorXd wv = ewma_weights(var_halflife, T);
    MatrixXd cov_c = detail::weighted_covariance(B, wc);
    MatrixXd cov_v = detail::weighted_covariance(B, wv);
    const int M = B.cols();
    MatrixXd out(M, M);
    for (int i = 0; i < M; ++i) {
        for (int j = 0; j < M; ++j) {
            double denom = std::sqrt(cov_c(i, i) * cov_c(j, j));
            double rho = i == j ? 1.0 : (denom > 0 ? cov_c(i, j) / denom : 0.0);
            out(i, j) = rho * std::sqrt(cov_v(i, i) * cov_v(j, j));
        }
    }
    return detail::psd_clip(out, psd_repaired);
}

struct VraResult {
    double multiplier = 1.0;
    MatrixXd sigma_b;  // variances scaled by multiplier^2, correlations untouched
    std::vector<double> bias_stats;
};

// Cross-sectional bias statistic B_t = sqrt(mean_k (b_kt/sigma_kt)^2);
// lambda = sqrt(EWMA of B_t^2). predicted_vols row t must be the forecast
// formed before observing realized row t.
inline VraResult volatility_regime_adjust(const MatrixXd& realized, const MatrixXd& predicted_vols,
                                          const MatrixXd& sigma_b, double halflife = 20) {
    const int T = realized.rows(), M = realized.cols();
    if (predicted_vols.rows() != T || predicted_vols.cols() != M)
        throw DimensionMismatch("volatility_regime_adjust inputs");
    VraResult out;
    for (int t = 0; t < T; ++t) {
        double acc = 0;
        for (int k = 0; k < M; ++k) {
            double s = predicted_vols(t, k);
            if (s <= 0) throw ZeroPredictedVol();
            acc += (realized(t, k) / s) * (realized(t, k) / s);
        }
        out.bias_stats.push_back(std::sqrt(acc / M));
    }
    VectorXd w = ewma_weights(halflife, T);
    double lam2 = 0;
    for (int t = 0; t < T; ++t) lam2 += w(T - 1 - t) * out.bias_stats[t] * out.bias_stats[t];
    out.multiplier = std::sqrt(lam2);
    out.sigma_b = out.multiplier * out.multiplier * sigma_b;
    return out;
}

// Per-stock EWMA variance of residuals; stocks with under min_obs history
// fall back to the cross-sectional median (flagged via fallback_ids).
inline VectorXd specific_variance(const std::vector<std::map<std::string, double>>& residuals,
                                  const std::vector<std::string>& stock_ids,
                                  double halflife = 60, int min_obs = 2,
                                  std::vector<std::string>* fallback_ids = nullptr) {
    const int N = static_cast<int>(stock_ids.size());
    VectorXd delta = VectorXd::Constant(N, -1.0);
    std::vector<double> ok_values;
    for (int i = 0; i < N; ++i) {
        std::vector<double> u;
        for (const auto& day : residuals) {
            auto it = day.find(stock_ids[i]);
            if (it != day.end()) u.push_back(it->second);
        }
        if (static_cast<int>(u.size()) < min_obs) continue;
        const int T = static_cast<int>(u.size());
        VectorXd w = ewma_weights(halflife, T);
        double mean = 0;
        for (int t = 0; t < T; ++t) mean += w(T - 1 - t) * u[t];
        double var = 0;
        for (int t = 0; t < T; ++t) var += w(T - 1 - t) * (u[t] - mean) * (u[t] - mean);
        delta(i) = var;
        ok_values.push_back(var);
    }
    double median = 0;
    if (!ok_values.empty()) {
        std::nth_element(ok_values.begin(), ok_values.begin() + ok_values.size() / 2,
                         ok_values.end());
        median = ok_values[ok_values.size() / 2];
    }
    for (int i = 0; i < N; ++i) {
        if (delta(i) < 0) {
            delta(i) = median;
            if (fallback_ids) fallback_ids->push_back(stock_ids[i]);
        }
    }
    return delta;
}

// Sigma = F Sigma_B F' + diag(delta)
inline MatrixXd assemble_covariance(const MatrixXd& exposures, const MatrixXd& sigma_b,
                                    const VectorXd& delta) {
    if (exposures.cols() != sigma_b.rows() || sigma_b.rows() != sigma_b.cols() ||
        exposures.rows() != delta.size())
        throw DimensionMismatch("assemble_covariance inputs");
    if ((delta.array() < 0).any()) throw DimensionMismatch("delta must be nonnegative");
    MatrixXd sigma = exposures * sigma_b * exposures.transpose();
    sigma = 0.5 * (sigma + sigma.transpose());
    sigma += MatrixXd(delta.asDiagonal());
    return sigma;
}

}  // namespace drm

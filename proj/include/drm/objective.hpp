#pragma once

#include <Eigen/Dense>
#include <vector>

#include "drm/errors.hpp"

namespace drm {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class TargetMode { PerHorizon, CurrentDate };

struct LossConfig {
    double lambda = 0.01;
    int H = 20;
    double ridge_eps = 1e-6;
    TargetMode target_mode = TargetMode::PerHorizon;

    void validate() const {
        if (lambda < 0) throw ConfigError("loss config: lambda >= 0");
        if (H < 1) throw ConfigError("loss config: H >= 1");
        if (ridge_eps <= 0) throw ConfigError("loss config: ridge_eps > 0");
    }
};

namespace detail {

inline Eigen::LDLT<MatrixXd> gram_solver(const MatrixXd& F, double ridge_eps) {
    const int K = F.cols();
    MatrixXd G = F.transpose() * F + ridge_eps * MatrixXd::Identity(K, K);
    Eigen::LDLT<MatrixXd> ldlt(G);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
        throw SingularNormalEquations();
    return ldlt;
}

}  // namespace detail

// Least-squares fit of y onto col(F) with a small ridge on the Gram matrix.
inline VectorXd projection_fit(const MatrixXd& F, const VectorXd& y, double ridge_eps = 1e-6) {
    if (F.rows() != y.size()) throw DimensionMismatch("projection_fit F rows vs y");
    if (F.rows() <= F.cols()) throw DimensionMismatch("projection_fit needs N > K");
    auto ldlt = detail::gram_solver(F, ridge_eps);
    return F * ldlt.solve(F.transpose() * y);
}

inline double r_squared(const MatrixXd& F, const VectorXd& y, double ridge_eps = 1e-6) {
    double yy = y.squaredNorm();
    if (yy <= 0) throw ZeroReturns();
    VectorXd yhat = projection_fit(F, y, ridge_eps);
    return 1.0 - (y - yhat).squaredNorm() / yy;
}

// Sum of per-column VIFs via the trace identity N*tr((F'F)^-1); valid for
// columns standardized to F_k'F_k = N.
inline double vif_trace(const MatrixXd& F) {
    const int N = F.rows();
    MatrixXd G = F.transpose() * F;
    Eigen::FullPivLU<MatrixXd> lu(G);
    if (!lu.isInvertible()) throw SingularGram();
    return N * lu.inverse().trace();
}

// Per-factor VIFs via K explicit regressions; the oracle for vif_trace.
inline VectorXd vif_bruteforce(const MatrixXd& F) {
    const int N = F.rows(), K = F.cols();
    VectorXd out(K);
    for (int i = 0; i < K; ++i) {
        MatrixXd rest(N, K - 1);
        int at = 0;
        for (int j = 0; j < K; ++j)
            if (j != i) rest.col(at++) = F.col(j);
        VectorXd target = F.col(i);
        double tss = target.squaredNorm();
        double rss;
        if (K == 1) {
            rss = tss;
        } else {
            MatrixXd G = rest.transpose() * rest;
            Eigen::FullPivLU<MatrixXd> lu(G);
            if (!lu.isInvertible()) throw SingularGram();
            VectorXd beta = lu.solve(rest.transpose() * target);
            rss = (target - rest * beta).squaredNorm();
        }
        if (rss < 1e-12 * tss) throw SingularGram();
        out(i) = tss / rss;  // 1/(1-R^2) with centered-through-origin convention
    }
    return out;
}

// (1/H) sum_h ||y_{t+h} - P y_target||^2 / ||y_{t+h}||^2 where P projects onto
// col(F). Per-horizon mode targets y_{t+h} itself.
// `y_current` (the date-t return vector) is required in current-date target mode,
// where every horizon term projects y_t rather than y_{t+h}.
inline double multitask_loss(const MatrixXd& F, const std::vector<VectorXd>& forward_returns,
                             const LossConfig& cfg, const VectorXd* y_current = nullptr) {
    cfg.validate();
    if (static_cast<int>(forward_returns.size()) < cfg.H) throw MissingHorizon(cfg.H);
    auto ldlt = detail::gram_solver(F, cfg.ridge_eps);
    double acc = 0;
    VectorXd yhat_literal;
    if (cfg.target_mode == TargetMode::CurrentDate) {
        if (!y_current) throw ConfigError("current-date target mode requires the current-date returns");
        yhat_literal = F * ldlt.solve(F.transpose() * *y_current);
    }
    for (int h = 0; h < cfg.H; ++h) {
        const VectorXd& y = forward_returns[h];
        if (y.size() != F.rows()) throw DimensionMismatch("multitask_loss horizon size");
        double yy = y.squaredNorm();
        if (yy <= 0) throw ZeroReturns();
        VectorXd yhat = cfg.target_mode == TargetMode::CurrentDate
                            ? yhat_literal
                            : VectorXd(F * ldlt.solve(F.transpose() * y));
        acc += (y - yhat).squaredNorm() / yy;
    }
    return acc / cfg.H;
}

inline double total_loss(const MatrixXd& F, const std::vector<VectorXd>& forward_returns,
                         const LossConfig& cfg, const VectorXd* y_current = nullptr) {
    double data = multitask_loss(F, forward_returns, cfg, y_current);
    auto ldlt = detail::gram_solver(F, cfg.ridge_eps);
    double tr = ldlt.solve(MatrixXd::Identity(F.cols(), F.cols())).trace();
    return data + cfg.lambda * tr;
}

// Exact gradient of total_loss with respect to F.
//
// For one horizon term ||r||^2/||y_h||^2 with r = y_h - F beta and
// beta = G^-1 F' y_tgt (G = F'F + eps I):
//   d||r||^2/dF = -2 [ r beta' + y_tgt a' - F (beta a' + a beta') ],
//   a = G^-1 F' r.
// For the regularizer, d tr(G^-1) = -tr(G^-1 dG G^-1) gives -2 lambda F G^-2.
inline MatrixXd loss_gradient(const MatrixXd& F, const std::vector<VectorXd>& forward_returns,
                              const LossConfig& cfg, const VectorXd* y_current = nullptr) {
    cfg.validate();
    if (cfg.target_mode == TargetMode::CurrentDate && !y_current)
        throw ConfigError("current-date target mode requires the current-date returns");
    if (static_cast<int>(forward_returns.size()) < cfg.H) throw MissingHorizon(cfg.H);
    const int K = F.cols();
    auto ldlt = detail::gram_solver(F, cfg.ridge_eps);
    MatrixXd grad = MatrixXd::Zero(F.rows(), K);
    for (int h = 0; h < cfg.H; ++h) {
        const VectorXd& y = forward_returns[h];
        const VectorXd& y_tgt = cfg.target_mode == TargetMode::CurrentDate ? *y_current : y;
        double yy = y.squaredNorm();
        if (yy <= 0) throw ZeroReturns();
        VectorXd beta = ldlt.solve(F.transpose() * y_tgt);
        VectorXd r = y - F * beta;
        VectorXd a = ldlt.solve(F.transpose() * r);
        MatrixXd g = r * beta.transpose() + y_tgt * a.transpose() -
                     F * (beta * a.transpose() + a * beta.transpose());
        grad += (-2.0 / yy) * g;
    }
    grad /= cfg.H;
    if (cfg.lambda > 0) {
        MatrixXd Ginv = ldlt.solve(MatrixXd::Identity(K, K));
        grad += -2.0 * cfg.lambda * F * (Ginv * Ginv);
    }
    return grad;
}

}  // namespace drm

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "drm/errors.hpp"
#include "drm/panel.hpp"

namespace drm {

struct PortfolioWeights {
    std::string date;
    std::vector<std::string> stock_ids;
    VectorXd w;
    bool ridge_applied = false;
};

// Closed-form global minimum variance: w = Sigma^-1 1 / (1' Sigma^-1 1).
// A ridge of 1e-10 * tr(Sigma)/N is loaded when the plain factorization
// fails, and flagged on the result.
inline PortfolioWeights gmv_weights(const MatrixXd& sigma) {
    const int N = sigma.rows();
    if (N == 0 || sigma.cols() != N) throw DimensionMismatch("gmv_weights: square Sigma");
    PortfolioWeights out;
    VectorXd ones = VectorXd::Ones(N);
    Eigen::LDLT<MatrixXd> ldlt(sigma);
    VectorXd x;
    if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
        x = ldlt.solve(ones);
    }
    if (x.size() == 0 || !x.allFinite() || std::abs(ones.dot(x)) < 1e-300) {
        double ridge = 1e-10 * sigma.trace() / N;
        if (!(ridge > 0)) throw SingularCovariance();
        Eigen::LDLT<MatrixXd> ldlt2(sigma + ridge * MatrixXd::Identity(N, N));
        if (ldlt2.info() != Eigen::Success) throw SingularCovariance();
        x = ldlt2.solve(ones);
        if (!x.allFinite() || std::abs(ones.dot(x)) < 1e-300) throw SingularCovariance();
        out.ridge_applied = true;
    }
    out.w = x / ones.dot(x);
    return out;
}

namespace detail {

// Euclidean projection onto the probability simplex {w >= 0, sum w = 1}.
inline VectorXd project_simplex(const VectorXd& v) {
    const int N = v.size();
    std::vector<double> u(v.data(), v.data() + N);
    std::sort(u.begin(), u.end(), std::greater<double>());
    double css = 0;
    double theta = 0;
    int rho = 0;
    for (int i = 0; i < N; ++i) {
        css += u[i];
        double t = (css - 1.0) / (i + 1);
        if (u[i] - t > 0) {
            rho = i + 1;
            theta = t;
        }
    }
    (void)rho;
    return (v.array() - theta).max(0.0).matrix();
}

}  // namespace detail

// Long-only GMV by projected gradient on the simplex with an accelerated
// (FISTA) schedule; terminates on the KKT residual of the constrained QP.
inline PortfolioWeights gmv_long_only(const MatrixXd& sigma, double tol = 1e-8,
                                      long max_iters = 100000) {
    const int N = sigma.rows();
    if (N == 0 || sigma.cols() != N) throw DimensionMismatch("gmv_long_only: square Sigma");

    // unconstrained solution feasible means no work to do
    try {
        PortfolioWeights un = gmv_weights(sigma);
        if ((un.w.array() >= -1e-12).all()) {
            un.w = un.w.cwiseMax(0.0);
            un.w /= un.w.sum();
            return un;
        }
    } catch (const SingularCovariance&) {
        // fall through to the iterative path
    }

    Eigen::SelfAdjointEigenSolver<MatrixXd> es(sigma);
    double L = std::max(es.eigenvalues().maxCoeff(), 1e-30);
    double step = 1.0 / L;

    VectorXd w = VectorXd::Constant(N, 1.0 / N);
    VectorXd z = w, w_prev = w;
    double t_acc = 1.0;

    auto kkt_residual = [&](const VectorXd& x) {
        VectorXd g = 2.0 * (sigma * x);
        // multiplier for the budget constraint from the active coordinates
        double mu = 0;
        int n_act = 0;
        for (int i = 0; i < N; ++i) {
            if (x(i) > 1e-12) {
                mu += g(i);
                ++n_act;
            }
        }
        if (n_act == 0) return std::numeric_limits<double>::infinity();
        mu /= n_act;
        double r = 0;
        for (int i = 0; i < N; ++i) {
            if (x(i) > 1e-12)
                r = std::max(r, std::abs(g(i) - mu));  // stationarity on support
            else
                r = std::max(r, std::max(0.0, mu - g(i)));  // dual feasibility
        }
        r = std::max(r, std::abs(x.sum() - 1.0));
        return r;
    };

    // Active-set refinement seeded by the current iterate: solve the
    // equality-constrained problem on the working support, drop the most
    // negative coordinate while infeasible, add the most dual-infeasible
    // coordinate while suboptimal.
    auto polish = [&](const VectorXd& x) -> std::optional<VectorXd> {
        std::set<int> support;
        for (int i = 0; i < N; ++i)
            if (x(i) > 1e-10) support.insert(i);
        if (support.empty()) support.insert(0);
        for (int pass = 0; pass < 4 * N; ++pass) {
            std::vector<int> idx(support.begin(), support.end());
            const int m = static_cast<int>(idx.size());
            MatrixXd sub(m, m);
            for (int a = 0; a < m; ++a)
                for (int b = 0; b < m; ++b) sub(a, b) = sigma(idx[a], idx[b]);
            Eigen::FullPivLU<MatrixXd> lu(sub);
            if (!lu.isInvertible()) return std::nullopt;
            VectorXd s = lu.solve(VectorXd::Ones(m));
            if (std::abs(s.sum()) < 1e-300) return std::nullopt;
            s /= s.sum();
            int worst = -1;
            double worst_v = -1e-12;
            for (int a = 0; a < m; ++a)
                if (s(a) < worst_v) {
                    worst_v = s(a);
                    worst = a;
                }
            if (worst >= 0) {
                if (m == 1) return std::nullopt;
                support.erase(idx[worst]);
                continue;
            }
            VectorXd cand = VectorXd::Zero(N);
            for (int a = 0; a < m; ++a) cand(idx[a]) = std::max(s(a), 0.0);
            cand /= cand.sum();
            if (kkt_residual(cand) < tol) return cand;
            // add the coordinate whose dual feasibility is most violated
            VectorXd g = 2.0 * (sigma * cand);
            double mu = 0;
            for (int a = 0; a < m; ++a) mu += g(idx[a]);
            mu /= m;
            int add = -1;
            double viol = tol * 0.5;
            for (int i = 0; i < N; ++i)
                if (!support.count(i) && mu - g(i) > viol) {
                    viol = mu - g(i);
                    add = i;
                }
            if (add < 0) return std::nullopt;
            support.insert(add);
        }
        return std::nullopt;
    };

    for (long it = 0; it < max_iters; ++it) {
        VectorXd grad = 2.0 * (sigma * z);
        w_prev = w;
        w = detail::project_simplex(z - step * grad);
        double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t_acc * t_acc));
        z = w + ((t_acc - 1.0) / t_next) * (w - w_prev);
        t_acc = t_next;
        if (it % 10 == 0) {
            if (kkt_residual(w) < tol) {
                PortfolioWeights out;
                out.w = w;
                return out;
            }
            if (auto c = polish(w)) {
                PortfolioWeights out;
                out.w = *c;
                return out;
            }
        }
    }
    if (kkt_residual(w) < tol) {
        PortfolioWeights out;
        out.w = w;
        return out;
    }
    throw NonConvergence("long-only GMV did not reach KKT tolerance");
}

// Annualized volatility of the daily portfolio returns implied by a weight
// schedule: weights set on date d apply to returns from d+1 until the next
// rebalance date.
inline double realized_vol(const std::vector<PortfolioWeights>& schedule, const PanelDataset& panel,
                           double annualization = 252.0) {
    if (schedule.empty()) throw NoOverlap("no portfolio dates");
    std::vector<double> rets;
    const int T = static_cast<int>(panel.dates.size());
    for (std::size_t s = 0; s < schedule.size(); ++s) {
        int d0 = panel.date_index(schedule[s].date);
        if (d0 < 0) throw NoOverlap("weight date missing from panel: " + schedule[s].date);
        int d1 = s + 1 < schedule.size() ? panel.date_index(schedule[s + 1].date) : T - 1;
        for (int t = d0 + 1; t <= d1 && t < T; ++t) {
            double r = 0;
            for (std::size_t i = 0; i < schedule[s].stock_ids.size(); ++i) {
                auto it = panel.obs[t].find(schedule[s].stock_ids[i]);
                if (it == panel.obs[t].end() || !it->second.valid)
                    throw NoOverlap("held stock missing return on " + panel.dates[t]);
                r += schedule[s].w(i) * it->second.ret;
            }
            rets.push_back(r);
        }
    }
    if (rets.empty()) throw NoOverlap("no out-of-sample returns for the weight schedule");
    double mean = 0;
    for (double r : rets) mean += r;
    mean /= rets.size();
    double var = 0;
    for (double r : rets) var += (r - mean) * (r - mean);
    var /= rets.size();
    return std::sqrt(var) * std::sqrt(annualization);
}

}  // namespace drm

#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "drm/errors.hpp"
#include "drm/objective.hpp"
#include "drm/riskmodel.hpp"

namespace drm {

struct SignificanceStats {
    std::vector<double> mean_abs_t;  // per coefficient
    std::vector<double> pct_above_2;
    int dates_used = 0;
    int dates_excluded = 0;  // degenerate fits with undefined t
};

// Mean |t| and the fraction of dates with |t| > 2 per coefficient. Dates
// where a coefficient's t-stat is undefined (zero residual variance) are
// excluded for that coefficient and counted once in the report.
inline SignificanceStats significance_stats(const FactorReturnSeries& series) {
    if (series.dates.empty()) throw DataError("significance_stats: no regression dates");
    const int W = series.width();
    SignificanceStats out;
    out.mean_abs_t.assign(W, 0.0);
    out.pct_above_2.assign(W, 0.0);
    std::vector<int> counts(W, 0);
    for (std::size_t d = 0; d < series.dates.size(); ++d) {
        bool any_bad = false;
        for (int i = 0; i < W; ++i) {
            double t = series.tstats[d](i);
            if (!std::isfinite(t)) {
                any_bad = true;
                continue;
            }
            out.mean_abs_t[i] += std::abs(t);
            if (std::abs(t) > 2.0) out.pct_above_2[i] += 1.0;
            ++counts[i];
        }
        if (any_bad)
            ++out.dates_excluded;
        else
            ++out.dates_used;
    }
    for (int i = 0; i < W; ++i) {
        if (counts[i] > 0) {
            out.mean_abs_t[i] /= counts[i];
            out.pct_above_2[i] /= counts[i];
        } else {
            out.mean_abs_t[i] = std::numeric_limits<double>::quiet_NaN();
            out.pct_above_2[i] = std::numeric_limits<double>::quiet_NaN();
        }
    }
    return out;
}

// Per-factor mean lag cross-sectional Pearson correlation between
// consecutive factor matrices, over stocks present on both dates.
inline std::vector<double> autocorrelation(const std::vector<FactorMatrix>& factors, int lag = 1) {
    if (static_cast<int>(factors.size()) < lag + 1)
        throw NoOverlap("autocorrelation needs at least lag+1 dates");
    const int K = static_cast<int>(factors[0].values.cols());
    std::vector<double> acc(K, 0.0);
    int pairs = 0;
    for (std::size_t d = lag; d < factors.size(); ++d) {
        const auto& prev = factors[d - lag];
        const auto& cur = factors[d];
        std::map<std::string, int> prev_ix;
        for (std::size_t i = 0; i < prev.stock_ids.size(); ++i)
            prev_ix[prev.stock_ids[i]] = static_cast<int>(i);
        std::vector<std::pair<int, int>> shared;  // (cur row, prev row)
        for (std::size_t i = 0; i < cur.stock_ids.size(); ++i) {
            auto it = prev_ix.find(cur.stock_ids[i]);
            if (it != prev_ix.end()) shared.emplace_back(static_cast<int>(i), it->second);
        }
        if (shared.size() < 2) continue;
        const int n = static_cast<int>(shared.size());
        bool ok = true;
        std::vector<double> corr(K);
        for (int k = 0; k < K && ok; ++k) {
            VectorXd a(n), b(n);
            for (int i = 0; i < n; ++i) {
                a(i) = cur.values(shared[i].first, k);
                b(i) = prev.values(shared[i].second, k);
            }
            a.array() -= a.mean();
            b.array() -= b.mean();
            double denom = std::sqrt(a.squaredNorm() * b.squaredNorm());
            if (denom == 0) {
                ok = false;
                break;
            }
            corr[k] = a.dot(b) / denom;
        }
        if (!ok) continue;
        for (int k = 0; k < K; ++k) acc[k] += corr[k];
        ++pairs;
    }
    if (pairs == 0) throw NoOverlap("no usable consecutive date pairs");
    for (int k = 0; k < K; ++k) acc[k] /= pairs;
    return acc;
}

struct R2Series {
    std::vector<std::string> dates;
    std::vector<double> r2;
    double mean = 0;
};

// Per-date cross-sectional R^2 of the full country+industry+styles regression.
inline R2Series r2_series(const std::vector<FactorMatrix>& factors, const PanelDataset& panel,
                          bool forward_alignment = true) {
    auto series = factor_return_series(factors, panel, forward_alignment);
    R2Series out;
    out.dates = series.dates;
    out.r2 = series.r2;
    if (out.r2.empty()) throw DataError("r2_series: no feasible regression dates");
    for (double v : out.r2) out.mean += v;
    out.mean /= out.r2.size();
    return out;
}

struct VifReport {
    std::vector<double> mean_vif;  // per factor column
    int dates_used = 0;
    int dates_skipped = 0;  // singular Gram
};

// Brute-force per-factor VIFs averaged over dates; singular dates skipped
// and counted.
inline VifReport vif_report(const std::vector<FactorMatrix>& factors) {
    if (factors.empty()) throw DataError("vif_report: no factor dates");
    const int K = static_cast<int>(factors[0].values.cols());
    VifReport out;
    out.mean_vif.assign(K, 0.0);
    for (const auto& fm : factors) {
        VectorXd v;
        try {
            v = vif_bruteforce(fm.values);
        } catch (const NumericalError&) {
            ++out.dates_skipped;
            continue;
        }
        for (int k = 0; k < K; ++k) out.mean_vif[k] += v(k);
        ++out.dates_used;
    }
    if (out.dates_used == 0) throw SingularGram();
    for (int k = 0; k < K; ++k) out.mean_vif[k] /= out.dates_used;
    return out;
}

}  // namespace drm

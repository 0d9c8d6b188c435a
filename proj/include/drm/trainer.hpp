#pragma once

#include <algorithm>
#include <chrono>
#include <optional>
#include <random>

#include "drm/network.hpp"
#include "drm/objective.hpp"
#include "drm/panel.hpp"

namespace drm {

struct TrainConfig {
    double learning_rate = 2e-4;
    int accumulation = 64;  // dates per parameter update
    int max_epochs = 100;
    int early_stop_patience = 10;
    double smoothing = 0.99;
    bool smoothing_weights_previous = true;  // s on prev smoothed value; toggle flips it
    std::uint64_t seed = 0;
    LossConfig loss;
    bool dropout_in_training = true;

    void validate() const {
        if (learning_rate <= 0) throw ConfigError("train config: learning_rate > 0");
        if (accumulation < 1) throw ConfigError("train config: accumulation >= 1");
        if (smoothing < 0 || smoothing >= 1) throw ConfigError("train config: smoothing in [0,1)");
        loss.validate();
    }

    nlohmann::json to_json() const {
        return {{"learning_rate", learning_rate}, {"accumulation", accumulation},
                {"max_epochs", max_epochs},       {"early_stop_patience", early_stop_patience},
                {"smoothing", smoothing},
                {"smoothing_weights_previous", smoothing_weights_previous},
                {"seed", seed},
                {"lambda", loss.lambda},
                {"H", loss.H},
                {"ridge_eps", loss.ridge_eps},
                {"dropout_in_training", dropout_in_training}};
    }
};

struct TrainingReport {
    std::vector<double> train_loss;  // per epoch
    std::vector<double> valid_loss;  // per epoch
    int best_epoch = -1;
    double best_valid_loss = 0;
    double wall_seconds = 0;
    std::uint64_t seed = 0;
    nlohmann::json config_echo;

    nlohmann::json to_json() const {
        return {{"train_loss", train_loss}, {"valid_loss", valid_loss},
                {"best_epoch", best_epoch}, {"best_valid_loss", best_valid_loss},
                {"wall_seconds", wall_seconds}, {"seed", seed}, {"config", config_echo}};
    }
};

// A date's training sample: the fixed stock set present through the lookback
// window and all forward horizons, plus the aligned return vectors.
struct DateSample {
    int date_index = 0;
    std::vector<std::string> stock_ids;
    std::vector<MatrixXd> history;  // L x (N x P), oldest first
    VectorXd caps;                  // at the sample date
    std::vector<std::string> industries;
    VectorXd y_current;
    std::vector<VectorXd> forward_returns;  // H vectors
};

// Stocks valid on every date in [t-L+1, t+H]; returns nullopt when the
// window leaves the panel or too few stocks survive.
inline std::optional<DateSample> build_sample(const PanelDataset& panel, int t, int lookback,
                                              int horizons, int min_stocks) {
    const int T = static_cast<int>(panel.dates.size());
    if (t - lookback + 1 < 0 || t + horizons >= T) return std::nullopt;
    std::vector<std::string> ids;
    for (const auto& [id, o] : panel.obs[t])
        if (o.valid) ids.push_back(id);
    auto alive = [&](const std::string& id, int d) {
        auto it = panel.obs[d].find(id);
        return it != panel.obs[d].end() && it->second.valid;
    };
    std::vector<std::string> keep;
    for (const auto& id : ids) {
        bool ok = true;
        for (int d = t - lookback + 1; d <= t + horizons && ok; ++d)
            if (d != t && !alive(id, d)) ok = false;
        if (ok) keep.push_back(id);
    }
    if (static_cast<int>(keep.size()) < min_stocks) return std::nullopt;

    DateSample s;
    s.date_index = t;
    s.stock_ids = keep;  // map iteration order is sorted
    const int N = static_cast<int>(keep.size()), P = panel.n_features;
    for (int d = t - lookback + 1; d <= t; ++d) {
        MatrixXd X(N, P);
        for (int i = 0; i < N; ++i) {
            const auto& o = panel.obs[d].at(keep[i]);
            for (int j = 0; j < P; ++j) X(i, j) = o.features[j];
        }
        s.history.push_back(std::move(X));
    }
    s.caps.resize(N);
    s.industries.resize(N);
    s.y_current.resize(N);
    for (int i = 0; i < N; ++i) {
        const auto& o = panel.obs[t].at(keep[i]);
        s.caps(i) = o.cap_weight;
        s.industries[i] = o.industry;
        s.y_current(i) = o.ret;
    }
    for (int h = 1; h <= horizons; ++h) {
        VectorXd y(N);
        for (int i = 0; i < N; ++i) y(i) = panel.obs[t + h].at(keep[i]).ret;
        s.forward_returns.push_back(std::move(y));
    }
    return s;
}

namespace detail {

struct AdamState {
    std::map<std::string, MatrixXd> m, v;
    long step = 0;
};

inline void adam_update(ModelParams& params, const std::map<std::string, MatrixXd>& grads,
                        AdamState& st, double lr, double beta1 = 0.9, double beta2 = 0.999,
                        double eps = 1e-8) {
    ++st.step;
    const double bc1 = 1.0 - std::pow(beta1, st.step);
    const double bc2 = 1.0 - std::pow(beta2, st.step);
    for (auto& [k, g] : grads) {
        MatrixXd& p = params.at(k);
        if (st.m.find(k) == st.m.end()) {
            st.m[k] = MatrixXd::Zero(p.rows(), p.cols());
            st.v[k] = MatrixXd::Zero(p.rows(), p.cols());
        }
        st.m[k] = beta1 * st.m[k] + (1 - beta1) * g;
        st.v[k] = beta2 * st.v[k] + (1 - beta2) * g.cwiseProduct(g);
        MatrixXd mhat = st.m[k] / bc1;
        MatrixXd vhat = st.v[k] / bc2;
        p.array() -= lr * mhat.array() / (vhat.array().sqrt() + eps);
    }
}

}  // namespace detail

// Loss on one date, gradients accumulated into `grads` when non-null.
inline double date_loss(const ModelParams& params, const NetConfig& net, const DateSample& s,
                        const LossConfig& lc, std::map<std::string, MatrixXd>* grads,
                        std::mt19937_64* dropout_rng) {
    ForwardTape ft;
    forward_on_tape(ft, params, net, s.history, s.caps, s.industries, dropout_rng);
    const MatrixXd& F = ft.tape.value(ft.factors);
    double loss = total_loss(F, s.forward_returns, lc, &s.y_current);
    if (grads) {
        MatrixXd dF = loss_gradient(F, s.forward_returns, lc, &s.y_current);
        ft.tape.backward(ft.factors, dF);
        for (const auto& [k, var] : ft.param_vars) {
            auto it = grads->find(k);
            if (it == grads->end())
                (*grads)[k] = ft.tape.grad(var);
            else
                it->second += ft.tape.grad(var);
        }
    }
    return loss;
}

inline std::pair<ModelParams, TrainingReport> train(const PanelDataset& panel,
                                                    const Splits& splits, const NetConfig& net,
                                                    const TrainConfig& tc,
                                                    const ModelParams* warm_start = nullptr) {
    net.validate();
    tc.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const int min_stocks = net.K + 2;

    std::vector<DateSample> train_samples, valid_samples;
    for (int t = splits.train.begin; t < splits.train.end; ++t) {
        // keep horizons inside the training range
        if (t + tc.loss.H >= splits.train.end) break;
        if (auto s = build_sample(panel, t, net.lookback, tc.loss.H, min_stocks))
            train_samples.push_back(std::move(*s));
    }
    for (int t = splits.valid.begin; t < splits.valid.end; ++t) {
        if (t + tc.loss.H >= splits.valid.end) break;
        if (auto s = build_sample(panel, t, net.lookback, tc.loss.H, min_stocks))
            valid_samples.push_back(std::move(*s));
    }
    if (train_samples.empty())
        throw InsufficientHistory("no training date supplies lookback " +
                                  std::to_string(net.lookback) + " and horizon " +
                                  std::to_string(tc.loss.H));

    ModelParams params = warm_start ? *warm_start : init_params(net, tc.seed);
    detail::AdamState adam;
    std::mt19937_64 rng(tc.seed ^ 0x9e3779b97f4a7c15ULL);
    TrainingReport report;
    report.seed = tc.seed;
    report.config_echo = tc.to_json();

    ModelParams best = params;
    double best_valid = std::numeric_limits<double>::infinity();
    int best_epoch = -1, since_best = 0;

    std::vector<int> order(train_samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    for (int epoch = 0; epoch < tc.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0;
        std::map<std::string, MatrixXd> grads;
        int in_window = 0;
        for (std::size_t oi = 0; oi < order.size(); ++oi) {
            const DateSample& s = train_samples[order[oi]];
            std::mt19937_64* drop = tc.dropout_in_training && net.gat_dropout > 0 ? &rng : nullptr;
            double l = date_loss(params, net, s, tc.loss, &grads, drop);
            if (!std::isfinite(l)) throw DivergedLoss();
            epoch_loss += l;
            if (++in_window == tc.accumulation || oi + 1 == order.size()) {
                for (auto& [k, g] : grads) g /= in_window;
                detail::adam_update(params, grads, adam, tc.learning_rate);
                grads.clear();
                in_window = 0;
            }
        }
        report.train_loss.push_back(epoch_loss / train_samples.size());

        double vloss = 0;
        if (!valid_samples.empty()) {
            for (const auto& s : valid_samples)
                vloss += date_loss(params, net, s, tc.loss, nullptr, nullptr);
            vloss /= valid_samples.size();
        } else {
            vloss = report.train_loss.back();
        }
        report.valid_loss.push_back(vloss);

        if (vloss < best_valid) {
            best_valid = vloss;
            best = params;
            best_epoch = epoch;
            since_best = 0;
        } else if (++since_best >= tc.early_stop_patience) {
            break;
        }
    }
    report.best_epoch = best_epoch;
    report.best_valid_loss = best_valid;
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {best, report};
}

// Factor matrices for the given date range, exponentially smoothed then
// re-normalized so the factor-matrix invariants hold per date.
inline std::vector<FactorMatrix> infer_factors(const ModelParams& params, const NetConfig& net,
                                               const PanelDataset& panel, int date_begin,
                                               int date_end, double smoothing,
                                               bool smoothing_weights_previous = true) {
    std::vector<FactorMatrix> out;
    std::map<std::string, VectorXd> prev;  // per stock, smoothed K-vector
    for (int t = date_begin; t < date_end; ++t) {
        auto s = build_sample(panel, t, net.lookback, 0, net.K + 2);
        if (!s) continue;
        MatrixXd raw = forward(params, net, s->history, s->caps, s->industries);
        const int N = raw.rows(), K = raw.cols();
        MatrixXd sm(N, K);
        for (int i = 0; i < N; ++i) {
            auto it = prev.find(s->stock_ids[i]);
            if (it == prev.end()) {
                sm.row(i) = raw.row(i);
            } else if (smoothing_weights_previous) {
                sm.row(i) = smoothing * it->second.transpose() + (1 - smoothing) * raw.row(i);
            } else {
                sm.row(i) = (1 - smoothing) * it->second.transpose() + smoothing * raw.row(i);
            }
        }
        for (int i = 0; i < N; ++i) prev[s->stock_ids[i]] = sm.row(i).transpose();
        FactorMatrix fm;
        fm.date = panel.dates[t];
        fm.stock_ids = s->stock_ids;
        fm.values.resize(N, K);
        for (int k = 0; k < K; ++k) fm.values.col(k) = norm_op(sm.col(k), s->caps);
        out.push_back(std::move(fm));
    }
    return out;
}

}  // namespace drm

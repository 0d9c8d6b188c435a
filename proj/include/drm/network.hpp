#pragma once

#include <Eigen/Dense>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "drm/errors.hpp"
#include "drm/tape.hpp"
#include "json.hpp"

namespace drm {

enum class Neighborhood { Full, IndustryMask };

struct NetConfig {
    int P = 10;
    int hidden = 32;
    int layers = 2;
    int K = 10;
    int K1 = 5;  // branch-A (plain GRU) factor count; branch B gets K - K1
    int lookback = 60;
    double gat_dropout = 0.5;
    bool gat_enabled = true;
    Neighborhood neighborhood = Neighborhood::Full;
    double leaky_slope = 0.2;
    bool self_feature_gat = false;  // aggregate alpha_ij * W x_i instead of W x_j

    void validate() const {
        if (P < 1 || hidden < 1 || layers < 1 || K < 1 || lookback < 1)
            throw ConfigError("net config: dimensions must be positive");
        if (K1 < 0 || K1 > K) throw ConfigError("net config: require 0 <= K1 <= K");
        if (gat_enabled && (K1 < 1 || K1 > K - 1))
            throw ConfigError("net config: require 1 <= K1 <= K-1 with GAT enabled");
        if (gat_dropout < 0 || gat_dropout >= 1)
            throw ConfigError("net config: dropout in [0,1)");
    }

    nlohmann::json to_json() const {
        return {{"P", P},        {"hidden", hidden},
                {"layers", layers}, {"K", K},
                {"K1", K1},      {"lookback", lookback},
                {"gat_dropout", gat_dropout}, {"gat_enabled", gat_enabled},
                {"neighborhood", neighborhood == Neighborhood::Full ? "full" : "industry-mask"},
                {"leaky_slope", leaky_slope}, {"self_feature_gat", self_feature_gat}};
    }
    static NetConfig from_json(const nlohmann::json& j) {
        NetConfig c;
        c.P = j.at("P");
        c.hidden = j.at("hidden");
        c.layers = j.at("layers");
        c.K = j.at("K");
        c.K1 = j.at("K1");
        c.lookback = j.at("lookback");
        c.gat_dropout = j.at("gat_dropout");
        c.gat_enabled = j.at("gat_enabled");
        c.neighborhood = j.at("neighborhood") == "full" ? Neighborhood::Full
                                                        : Neighborhood::IndustryMask;
        c.leaky_slope = j.at("leaky_slope");
        c.self_feature_gat = j.at("self_feature_gat");
        return c;
    }
};

// Named parameter tensors, ordered by key for deterministic iteration.
struct ModelParams {
    std::map<std::string, MatrixXd> tensors;
    std::uint64_t seed = 0;

    MatrixXd& at(const std::string& k) {
        auto it = tensors.find(k);
        if (it == tensors.end()) throw ConfigError("unknown parameter tensor: " + k);
        return it->second;
    }
    const MatrixXd& at(const std::string& k) const {
        auto it = tensors.find(k);
        if (it == tensors.end()) throw ConfigError("unknown parameter tensor: " + k);
        return it->second;
    }
};

struct FactorMatrix {
    std::string date;
    std::vector<std::string> stock_ids;
    MatrixXd values;  // N x K
};

// Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)], fan_in = rows.
inline MatrixXd init_tensor(int rows, int cols, int fan_in, std::mt19937_64& rng) {
    double b = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-b, b);
    MatrixXd m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = dist(rng);
    return m;
}

inline ModelParams init_params(const NetConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    ModelParams p;
    p.seed = seed;
    auto add = [&](const std::string& k, int r, int c, int fan) {
        p.tensors[k] = init_tensor(r, c, fan, rng);
    };
    for (const char* br : {"a", "b"}) {
        for (int l = 0; l < cfg.layers; ++l) {
            int in = l == 0 ? cfg.P : cfg.hidden;
            std::string pre = std::string("gru_") + br + ".l" + std::to_string(l) + ".";
            for (const char* g : {"z", "r", "c"}) {
                add(pre + "W" + g, in, cfg.hidden, in);
                add(pre + "U" + g, cfg.hidden, cfg.hidden, cfg.hidden);
                add(pre + "b" + g, 1, cfg.hidden, cfg.hidden);
            }
        }
        std::string pre = std::string("attn_") + br + ".";
        add(pre + "Wa", cfg.hidden, cfg.hidden, cfg.hidden);
        add(pre + "v", cfg.hidden, 1, cfg.hidden);
    }
    if (cfg.gat_enabled) {
        add("gat.W", cfg.P, cfg.P, cfg.P);
        add("gat.a1", cfg.P, 1, cfg.P);
        add("gat.a2", cfg.P, 1, cfg.P);
    }
    if (cfg.K1 > 0) add("proj_q", cfg.hidden, cfg.K1, cfg.hidden);
    if (cfg.K - cfg.K1 > 0) add("proj_qt", cfg.hidden, cfg.K - cfg.K1, cfg.hidden);
    return p;
}

// ---------------------------------------------------------------------------
// Plain (non-tape) building blocks; these are the unit-testable operations.
// ---------------------------------------------------------------------------

struct GruLayerWeights {
    MatrixXd Wz, Uz, bz, Wr, Ur, br, Wc, Uc, bc;
};

inline GruLayerWeights gru_layer(const ModelParams& p, const std::string& branch, int layer) {
    std::string pre = "gru_" + branch + ".l" + std::to_string(layer) + ".";
    return {p.at(pre + "Wz"), p.at(pre + "Uz"), p.at(pre + "bz"),
            p.at(pre + "Wr"), p.at(pre + "Ur"), p.at(pre + "br"),
            p.at(pre + "Wc"), p.at(pre + "Uc"), p.at(pre + "bc")};
}

inline VectorXd sigmoid_vec(const VectorXd& x) {
    return (1.0 / (1.0 + (-x.array()).exp())).matrix();
}

// Single GRU step: z and r via sigmoid, candidate via tanh,
// h = z .* h_prev + (1 - z) .* candidate.
inline VectorXd gru_cell(const GruLayerWeights& w, const VectorXd& x, const VectorXd& h_prev) {
    if (w.Wz.rows() != x.size() || w.Uz.rows() != h_prev.size())
        throw DimensionMismatch("gru_cell input sizes");
    VectorXd z = sigmoid_vec(w.Wz.transpose() * x + w.Uz.transpose() * h_prev + w.bz.transpose());
    VectorXd r = sigmoid_vec(w.Wr.transpose() * x + w.Ur.transpose() * h_prev + w.br.transpose());
    VectorXd c = (w.Wc.transpose() * x + w.Uc.transpose() * r.cwiseProduct(h_prev) +
                  w.bc.transpose()).array().tanh();
    return z.cwiseProduct(h_prev) + (VectorXd::Ones(z.size()) - z).cwiseProduct(c);
}

// Additive-score attention over L hidden states: s_t = v' tanh(Wa' h_t),
// softmax over t, weighted sum.
inline VectorXd temporal_attention(const std::vector<VectorXd>& hiddens, const MatrixXd& Wa,
                                   const VectorXd& v) {
    const int L = static_cast<int>(hiddens.size());
    if (L < 1) throw DimensionMismatch("temporal_attention needs L >= 1");
    VectorXd scores(L);
    for (int t = 0; t < L; ++t)
        scores(t) = v.dot((Wa.transpose() * hiddens[t]).array().tanh().matrix());
    VectorXd w = (scores.array() - scores.maxCoeff()).exp();
    w /= w.sum();
    VectorXd out = VectorXd::Zero(hiddens[0].size());
    for (int t = 0; t < L; ++t) out += w(t) * hiddens[t];
    return out;
}

inline MatrixXd neighborhood_mask(int N, Neighborhood kind,
                                  const std::vector<std::string>& industries) {
    if (kind == Neighborhood::Full) return MatrixXd::Ones(N, N);
    MatrixXd m = MatrixXd::Zero(N, N);
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < N; ++j)
            if (industries[i] == industries[j]) m(i, j) = 1.0;
    return m;
}

// e_ij = LeakyReLU(a1 . W x_i + a2 . W x_j), row-softmax over the neighborhood.
inline MatrixXd gat_coefficients(const MatrixXd& X, const MatrixXd& W, const VectorXd& a1,
                                 const VectorXd& a2, const MatrixXd& mask,
                                 double slope = 0.2) {
    const int N = X.rows();
    MatrixXd XW = X * W;
    VectorXd s1 = XW * a1;
    VectorXd s2 = XW * a2;
    MatrixXd alpha(N, N);
    for (int i = 0; i < N; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < N; ++j) {
            if (mask(i, j) == 0) continue;
            double e = s1(i) + s2(j);
            if (e < 0) e *= slope;
            alpha(i, j) = e;
            mx = std::max(mx, e);
        }
        if (!std::isfinite(mx)) throw EmptyNeighborhood(i);
        double sum = 0;
        for (int j = 0; j < N; ++j) {
            alpha(i, j) = mask(i, j) != 0 ? std::exp(alpha(i, j) - mx) : 0.0;
            sum += alpha(i, j);
        }
        alpha.row(i) /= sum;
    }
    return alpha;
}

// x~_i = LeakyReLU(sum_j alpha_ij W x_j); self-feature mode uses W x_i inside
// the sum instead (which collapses to LeakyReLU(W x_i) since rows sum to 1).
inline MatrixXd gat_aggregate(const MatrixXd& X, const MatrixXd& alpha, const MatrixXd& W,
                              double slope = 0.2, bool self_feature = false) {
    MatrixXd XW = X * W;
    MatrixXd agg = self_feature ? XW : MatrixXd(alpha * XW);
    return agg.unaryExpr([slope](double x) { return x >= 0 ? x : slope * x; });
}

// Cap-weighted zero mean, equal-weighted unit std (divisor N).
inline VectorXd norm_op(const VectorXd& v, const VectorXd& caps) {
    if (v.size() < 2) throw DimensionMismatch("norm_op needs N >= 2");
    if ((caps.array() <= 0).any()) throw ConfigError("norm_op: caps must be positive");
    VectorXd w = caps / caps.sum();
    VectorXd u = v.array() - w.dot(v);
    double sd = std::sqrt(u.squaredNorm() / v.size());
    if (sd < 1e-14) throw ZeroVariance();
    return u / sd;
}

// ---------------------------------------------------------------------------
// Tape-based forward pass (training path). The plain forward() below runs the
// same graph and discards the tape, so inference and training agree exactly.
// ---------------------------------------------------------------------------

struct ForwardTape {
    Tape tape;
    Tape::Var factors = -1;                      // N x K output node
    std::map<std::string, Tape::Var> param_vars; // leaf per parameter tensor
};

// feature_history: L matrices of shape N x P, oldest first, fixed stock set.
// When `train_rng` is non-null, attention dropout is sampled from it.
inline void forward_on_tape(ForwardTape& ft, const ModelParams& params, const NetConfig& cfg,
                            const std::vector<MatrixXd>& history, const VectorXd& caps,
                            const std::vector<std::string>& industries,
                            std::mt19937_64* train_rng = nullptr) {
    cfg.validate();
    const int L = static_cast<int>(history.size());
    if (L != cfg.lookback) throw DimensionMismatch("history length vs lookback");
    const int N = history[0].rows();
    if (N < 2) throw DataError("forward needs at least 2 stocks");
    Tape& t = ft.tape;

    for (const auto& [k, m] : params.tensors) ft.param_vars[k] = t.leaf(m);
    auto P = [&](const std::string& k) { return ft.param_vars.at(k); };

    std::vector<Tape::Var> x_raw(L);
    for (int s = 0; s < L; ++s) x_raw[s] = t.constant(history[s]);

    // Branch-B inputs: residual against the GAT aggregate (shared weights
    // applied at every time stamp); raw features when GAT is disabled.
    std::vector<Tape::Var> x_res(L);
    if (cfg.gat_enabled) {
        MatrixXd mask = neighborhood_mask(N, cfg.neighborhood, industries);
        Tape::Var ones_row = t.constant(MatrixXd::Ones(1, N));
        Tape::Var ones_col = t.constant(MatrixXd::Ones(N, 1));
        for (int s = 0; s < L; ++s) {
            Tape::Var XW = t.matmul(x_raw[s], P("gat.W"));
            Tape::Var s1 = t.matmul(XW, P("gat.a1"));  // N x 1
            Tape::Var s2 = t.matmul(XW, P("gat.a2"));  // N x 1
            // e_ij = s1_i + s2_j
            Tape::Var e = t.add(t.matmul(s1, ones_row), t.matmul(ones_col, t.transpose(s2)));
            Tape::Var alpha = t.softmax_rows(t.leaky_relu(e, cfg.leaky_slope), mask);
            if (train_rng && cfg.gat_dropout > 0) {
                // Drop attention edges, keep the self edge, re-normalize rows.
                std::bernoulli_distribution keep(1.0 - cfg.gat_dropout);
                MatrixXd drop(N, N);
                for (int i = 0; i < N; ++i)
                    for (int j = 0; j < N; ++j)
                        drop(i, j) = (i == j || keep(*train_rng)) ? 1.0 : 0.0;
                alpha = t.normalize_rows(t.cwise_mul(alpha, t.constant(drop)));
            }
            Tape::Var agg = cfg.self_feature_gat ? t.leaky_relu(XW, cfg.leaky_slope)
                                                 : t.leaky_relu(t.matmul(alpha, XW), cfg.leaky_slope);
            x_res[s] = t.sub(x_raw[s], agg);
        }
    } else {
        x_res = x_raw;
    }

    // Stacked GRU over the window, then temporal attention, per branch.
    auto run_branch = [&](const char* br, const std::vector<Tape::Var>& inputs) {
        std::vector<Tape::Var> layer_in = inputs;
        std::vector<Tape::Var> hiddens;  // top-layer hidden state per step
        for (int l = 0; l < cfg.layers; ++l) {
            std::string pre = std::string("gru_") + br + ".l" + std::to_string(l) + ".";
            Tape::Var h = t.constant(MatrixXd::Zero(N, cfg.hidden));
            std::vector<Tape::Var> outs(L);
            for (int s = 0; s < L; ++s) {
                Tape::Var z = t.sigmoid(t.add_bias(
                    t.add(t.matmul(layer_in[s], P(pre + "Wz")), t.matmul(h, P(pre + "Uz"))),
                    P(pre + "bz")));
                Tape::Var r = t.sigmoid(t.add_bias(
                    t.add(t.matmul(layer_in[s], P(pre + "Wr")), t.matmul(h, P(pre + "Ur"))),
                    P(pre + "br")));
                Tape::Var c = t.tanh(t.add_bias(
                    t.add(t.matmul(layer_in[s], P(pre + "Wc")),
                          t.matmul(t.cwise_mul(r, h), P(pre + "Uc"))),
                    P(pre + "bc")));
                h = t.add(t.cwise_mul(z, h), t.cwise_mul(t.affine(z, -1.0, 1.0), c));
                outs[s] = h;
            }
            layer_in = outs;
            hiddens = outs;
        }
        // Temporal attention: s_t = v' tanh(Wa' h_t), softmax over t.
        std::string pre = std::string("attn_") + br + ".";
        std::vector<Tape::Var> score_cols(L);
        for (int s = 0; s < L; ++s)
            score_cols[s] = t.matmul(t.tanh(t.matmul(hiddens[s], P(pre + "Wa"))), P(pre + "v"));
        Tape::Var scores = t.concat_cols(score_cols);  // N x L
        Tape::Var w = t.softmax_rows(scores, MatrixXd::Ones(N, L));
        Tape::Var out = t.scale_rows(hiddens[0], t.col(w, 0));
        for (int s = 1; s < L; ++s)
            out = t.add(out, t.scale_rows(hiddens[s], t.col(w, s)));
        return out;  // N x hidden
    };

    VectorXd capw = caps / caps.sum();
    std::vector<Tape::Var> blocks;
    if (cfg.K1 > 0) {
        Tape::Var ha = run_branch("a", x_raw);
        blocks.push_back(t.norm_cols(t.matmul(ha, P("proj_q")), capw));
    }
    if (cfg.K - cfg.K1 > 0) {
        Tape::Var hb = run_branch("b", x_res);
        blocks.push_back(t.norm_cols(t.matmul(hb, P("proj_qt")), capw));
    }
    ft.factors = blocks.size() == 1 ? blocks[0] : t.concat_cols(blocks);
}

// Deterministic inference-path forward (no dropout).
inline MatrixXd forward(const ModelParams& params, const NetConfig& cfg,
                        const std::vector<MatrixXd>& history, const VectorXd& caps,
                        const std::vector<std::string>& industries) {
    ForwardTape ft;
    forward_on_tape(ft, params, cfg, history, caps, industries, nullptr);
    return ft.tape.value(ft.factors);
}

// ---------------------------------------------------------------------------
// Checkpoint container: config + named tensors (row-major) + rng seed.
// ---------------------------------------------------------------------------

inline nlohmann::json checkpoint_json(const NetConfig& cfg, const ModelParams& params) {
    nlohmann::json j;
    j["version"] = 1;
    j["config"] = cfg.to_json();
    j["seed"] = params.seed;
    for (const auto& [k, m] : params.tensors) {
        std::vector<double> data;
        data.reserve(m.size());
        for (int i = 0; i < m.rows(); ++i)
            for (int c = 0; c < m.cols(); ++c) data.push_back(m(i, c));
        j["tensors"][k] = {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
    }
    return j;
}

inline void save_checkpoint(const std::string& path, const NetConfig& cfg,
                            const ModelParams& params) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out << checkpoint_json(cfg, params).dump();
}

inline std::pair<NetConfig, ModelParams> load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    nlohmann::json j = nlohmann::json::parse(in);
    NetConfig cfg = NetConfig::from_json(j.at("config"));
    ModelParams p;
    p.seed = j.at("seed");
    for (auto& [k, tj] : j.at("tensors").items()) {
        int rows = tj.at("rows"), cols = tj.at("cols");
        std::vector<double> data = tj.at("data");
        MatrixXd m(rows, cols);
        int at = 0;
        for (int i = 0; i < rows; ++i)
            for (int c = 0; c < cols; ++c) m(i, c) = data[at++];
        p.tensors[k] = m;
    }
    return {cfg, p};
}

}  // namespace drm

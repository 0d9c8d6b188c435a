#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <vector>

#include "drm/errors.hpp"

namespace drm {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Reverse-mode autodiff over dense matrices. Nodes are appended in
// evaluation order; backward() walks the tape in reverse. One tape per
// forward pass, values owned by the tape.
class Tape {
  public:
    using Var = int;

    struct Node {
        MatrixXd value;
        MatrixXd grad;
        bool needs_grad = true;
        std::function<void(Tape&, const Node&)> backward;
    };

    const MatrixXd& value(Var v) const { return nodes_[v].value; }
    const MatrixXd& grad(Var v) const { return nodes_[v].grad; }
    std::size_t size() const { return nodes_.size(); }

    Var leaf(const MatrixXd& m) { return push(m, nullptr, true); }
    Var constant(const MatrixXd& m) { return push(m, nullptr, false); }

    Var matmul(Var a, Var b) {
        MatrixXd v = value(a) * value(b);
        return push(std::move(v), [a, b](Tape& t, const Node& n) {
            t.accum(a, n.grad * t.value(b).transpose());
            t.accum(b, t.value(a).transpose() * n.grad);
        });
    }

    Var transpose(Var a) {
        MatrixXd v = value(a).transpose();
        return push(std::move(v), [a](Tape& t, const Node& n) { t.accum(a, n.grad.transpose()); });
    }

    Var add(Var a, Var b) {
        MatrixXd v = value(a) + value(b);
        return push(std::move(v), [a, b](Tape& t, const Node& n) {
            t.accum(a, n.grad);
            t.accum(b, n.grad);
        });
    }

    Var sub(Var a, Var b) {
        MatrixXd v = value(a) - value(b);
        return push(std::move(v), [a, b](Tape& t, const Node& n) {
            t.accum(a, n.grad);
            t.accum(b, -n.grad);
        });
    }

    Var cwise_mul(Var a, Var b) {
        MatrixXd v = value(a).cwiseProduct(value(b));
        return push(std::move(v), [a, b](Tape& t, const Node& n) {
            t.accum(a, n.grad.cwiseProduct(t.value(b)));
            t.accum(b, n.grad.cwiseProduct(t.value(a)));
        });
    }

    // c0 + c1 * x, elementwise
    Var affine(Var a, double c1, double c0) {
        MatrixXd v = (value(a).array() * c1 + c0).matrix();
        return push(std::move(v), [a, c1](Tape& t, const Node& n) { t.accum(a, c1 * n.grad); });
    }

    Var sigmoid(Var a) {
        MatrixXd v = (1.0 / (1.0 + (-value(a).array()).exp())).matrix();
        Var out = push(v, nullptr);
        nodes_[out].backward = [a, out](Tape& t, const Node& n) {
            const auto& y = t.value(out).array();
            t.accum(a, (n.grad.array() * y * (1.0 - y)).matrix());
        };
        return out;
    }

    Var tanh(Var a) {
        MatrixXd v = value(a).array().tanh().matrix();
        Var out = push(v, nullptr);
        nodes_[out].backward = [a, out](Tape& t, const Node& n) {
            const auto& y = t.value(out).array();
            t.accum(a, (n.grad.array() * (1.0 - y * y)).matrix());
        };
        return out;
    }

    Var leaky_relu(Var a, double slope) {
        MatrixXd v = value(a).unaryExpr([slope](double x) { return x >= 0 ? x : slope * x; });
        return push(std::move(v), [a, slope](Tape& t, const Node& n) {
            MatrixXd g = n.grad;
            const MatrixXd& x = t.value(a);
            for (int i = 0; i < g.rows(); ++i)
                for (int j = 0; j < g.cols(); ++j)
                    if (x(i, j) < 0) g(i, j) *= slope;
            t.accum(a, g);
        });
    }

    // M (N x h) plus a 1 x h bias row broadcast over rows.
    Var add_bias(Var m, Var bias) {
        MatrixXd v = value(m).rowwise() + value(bias).row(0);
        return push(std::move(v), [m, bias](Tape& t, const Node& n) {
            t.accum(m, n.grad);
            t.accum(bias, n.grad.colwise().sum());
        });
    }

    // Row-wise softmax restricted to entries where mask != 0; masked-out
    // entries get weight 0. Each row must have at least one unmasked entry.
    Var softmax_rows(Var a, const MatrixXd& mask) {
        const MatrixXd& x = value(a);
        MatrixXd y(x.rows(), x.cols());
        for (int i = 0; i < x.rows(); ++i) {
            double m = -std::numeric_limits<double>::infinity();
            for (int j = 0; j < x.cols(); ++j)
                if (mask(i, j) != 0) m = std::max(m, x(i, j));
            if (!std::isfinite(m)) throw EmptyNeighborhood(i);
            double s = 0;
            for (int j = 0; j < x.cols(); ++j) {
                y(i, j) = mask(i, j) != 0 ? std::exp(x(i, j) - m) : 0.0;
                s += y(i, j);
            }
            y.row(i) /= s;
        }
        Var out = push(y, nullptr);
        nodes_[out].backward = [a, out](Tape& t, const Node& n) {
            const MatrixXd& y2 = t.value(out);
            MatrixXd g(y2.rows(), y2.cols());
            for (int i = 0; i < y2.rows(); ++i) {
                double dot = n.grad.row(i).dot(y2.row(i));
                g.row(i) = y2.row(i).cwiseProduct((n.grad.row(i).array() - dot).matrix());
            }
            t.accum(a, g);
        };
        return out;
    }

    // y_ij = x_ij / sum_k x_ik (used to re-normalize attention after dropout)
    Var normalize_rows(Var a) {
        const MatrixXd& x = value(a);
        VectorXd s = x.rowwise().sum();
        MatrixXd y = x.array().colwise() / s.array();
        Var out = push(y, nullptr);
        nodes_[out].backward = [a, out, s](Tape& t, const Node& n) {
            const MatrixXd& y2 = t.value(out);
            MatrixXd g(y2.rows(), y2.cols());
            for (int i = 0; i < y2.rows(); ++i) {
                double dot = n.grad.row(i).dot(y2.row(i));
                g.row(i) = (n.grad.row(i).array() - dot).matrix() / s(i);
            }
            t.accum(a, g);
        };
        return out;
    }

    // diag(c) * M with c an N x 1 column.
    Var scale_rows(Var m, Var c) {
        MatrixXd v = value(m).array().colwise() * value(c).col(0).array();
        return push(std::move(v), [m, c](Tape& t, const Node& n) {
            t.accum(m, (n.grad.array().colwise() * t.value(c).col(0).array()).matrix());
            t.accum(c, (n.grad.cwiseProduct(t.value(m))).rowwise().sum());
        });
    }

    Var col(Var m, int j) {
        MatrixXd v = value(m).col(j);
        return push(std::move(v), [m, j](Tape& t, const Node& n) {
            MatrixXd g = MatrixXd::Zero(t.value(m).rows(), t.value(m).cols());
            g.col(j) = n.grad;
            t.accum(m, g);
        });
    }

    Var concat_cols(const std::vector<Var>& vars) {
        int rows = value(vars[0]).rows();
        int cols = 0;
        for (Var v : vars) {
            if (value(v).rows() != rows) throw DimensionMismatch("concat_cols row counts");
            cols += value(v).cols();
        }
        MatrixXd out(rows, cols);
        int at = 0;
        for (Var v : vars) {
            out.middleCols(at, value(v).cols()) = value(v);
            at += value(v).cols();
        }
        return push(std::move(out), [vars](Tape& t, const Node& n) {
            int at2 = 0;
            for (Var v : vars) {
                int w = t.value(v).cols();
                t.accum(v, n.grad.middleCols(at2, w));
                at2 += w;
            }
        });
    }

    // Column-wise normalization to cap-weighted zero mean and equal-weighted
    // unit standard deviation (population convention). caps must sum to 1.
    Var norm_cols(Var m, const VectorXd& capw) {
        const MatrixXd& x = value(m);
        const int N = x.rows(), K = x.cols();
        if (N < 2) throw DimensionMismatch("norm_cols needs N >= 2");
        MatrixXd u(N, K);
        VectorXd sigma(K);
        for (int k = 0; k < K; ++k) {
            double mean = capw.dot(x.col(k));
            u.col(k) = x.col(k).array() - mean;
            sigma(k) = std::sqrt(u.col(k).squaredNorm() / N);
            if (sigma(k) < 1e-14) throw ZeroVariance();
        }
        MatrixXd y = u.array().rowwise() / sigma.transpose().array();
        Var out = push(y, nullptr);
        nodes_[out].backward = [m, capw, u, sigma](Tape& t, const Node& n) {
            const int N2 = u.rows(), K2 = u.cols();
            MatrixXd g(N2, K2);
            for (int k = 0; k < K2; ++k) {
                const double s = sigma(k);
                // d/du of u/sigma(u), then chain through the cap-weighted demeaning:
                // dL/dv_j = gu_j - capw_j * sum_i gu_i
                VectorXd gu = n.grad.col(k) / s -
                              u.col(k) * (u.col(k).dot(n.grad.col(k)) / (N2 * s * s * s));
                g.col(k) = gu - capw * gu.sum();
            }
            t.accum(m, g);
        };
        return out;
    }

    // Propagate seed gradient at `v` back to all reachable nodes.
    void backward(Var v, const MatrixXd& seed) {
        for (auto& n : nodes_)
            n.grad = MatrixXd::Zero(n.value.rows(), n.value.cols());
        nodes_[v].grad = seed;
        for (int i = v; i >= 0; --i)
            if (nodes_[i].backward && nodes_[i].grad.cwiseAbs().sum() != 0)
                nodes_[i].backward(*this, nodes_[i]);
    }

  private:
    Var push(MatrixXd v, std::function<void(Tape&, const Node&)> bw, bool needs = true) {
        Node n;
        n.value = std::move(v);
        n.needs_grad = needs;
        n.backward = std::move(bw);
        nodes_.push_back(std::move(n));
        return static_cast<Var>(nodes_.size() - 1);
    }

    void accum(Var v, const MatrixXd& g) {
        if (nodes_[v].needs_grad) nodes_[v].grad += g;
    }

    std::vector<Node> nodes_;
};

}  // namespace drm

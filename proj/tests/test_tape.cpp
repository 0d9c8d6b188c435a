#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "drm/tape.hpp"

using namespace drm;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd randm(int r, int c, std::mt19937_64& rng) {
    std::normal_distribution<double> d;
    MatrixXd m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = d(rng);
    return m;
}

// Scalar-valued graph builder: returns (output_var, tape) given leaf values.
// Checks d(sum of weighted output)/d(leaf) against central differences.
template <typename Builder>
void check_gradient(std::vector<MatrixXd> leaves, Builder build, double tol = 1e-6) {
    Tape t;
    std::vector<Tape::Var> vars;
    for (auto& m : leaves) vars.push_back(t.leaf(m));
    Tape::Var out = build(t, vars);
    std::mt19937_64 rng(7);
    MatrixXd seed = randm(t.value(out).rows(), t.value(out).cols(), rng);
    t.backward(out, seed);

    auto eval = [&](const std::vector<MatrixXd>& ls) {
        Tape t2;
        std::vector<Tape::Var> vs;
        for (auto& m : ls) vs.push_back(t2.leaf(m));
        Tape::Var o = build(t2, vs);
        return seed.cwiseProduct(t2.value(o)).sum();
    };

    const double h = 1e-6;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        for (int i = 0; i < leaves[li].rows(); ++i) {
            for (int j = 0; j < leaves[li].cols(); ++j) {
                auto lp = leaves, lm = leaves;
                lp[li](i, j) += h;
                lm[li](i, j) -= h;
                double fd = (eval(lp) - eval(lm)) / (2 * h);
                double an = t.grad(vars[li])(i, j);
                CHECK(an == Catch::Approx(fd).margin(tol).epsilon(1e-5));
            }
        }
    }
}

}  // namespace

TEST_CASE("matmul/add/sub/cwise gradients") {
    std::mt19937_64 rng(1);
    check_gradient({randm(3, 4, rng), randm(4, 2, rng), randm(3, 2, rng)},
                   [](Tape& t, const std::vector<Tape::Var>& v) {
                       return t.sub(t.matmul(v[0], v[1]), t.cwise_mul(v[2], v[2]));
                   });
}

TEST_CASE("activations and bias broadcast") {
    std::mt19937_64 rng(2);
    check_gradient({randm(5, 3, rng), randm(1, 3, rng)},
                   [](Tape& t, const std::vector<Tape::Var>& v) {
                       return t.tanh(t.add_bias(t.sigmoid(v[0]), v[1]));
                   });
    check_gradient({randm(4, 4, rng)}, [](Tape& t, const std::vector<Tape::Var>& v) {
        return t.leaky_relu(v[0], 0.2);
    });
}

TEST_CASE("softmax rows with mask") {
    std::mt19937_64 rng(3);
    MatrixXd mask(3, 3);
    mask << 1, 1, 0, 1, 1, 1, 0, 1, 1;
    check_gradient({randm(3, 3, rng)}, [mask](Tape& t, const std::vector<Tape::Var>& v) {
        return t.softmax_rows(v[0], mask);
    });
    Tape t;
    auto s = t.softmax_rows(t.leaf(MatrixXd::Random(3, 3)), mask);
    for (int i = 0; i < 3; ++i) CHECK(t.value(s).row(i).sum() == Catch::Approx(1.0).epsilon(1e-12));
    CHECK(t.value(s)(0, 2) == 0.0);
}

TEST_CASE("normalize_rows, scale_rows, col, concat, transpose") {
    std::mt19937_64 rng(4);
    MatrixXd pos = randm(3, 3, rng).array().abs() + 0.5;
    check_gradient({pos}, [](Tape& t, const std::vector<Tape::Var>& v) {
        return t.normalize_rows(v[0]);
    });
    check_gradient({randm(4, 3, rng), randm(4, 1, rng)},
                   [](Tape& t, const std::vector<Tape::Var>& v) {
                       return t.scale_rows(v[0], v[1]);
                   });
    check_gradient({randm(4, 3, rng)}, [](Tape& t, const std::vector<Tape::Var>& v) {
        return t.concat_cols({t.col(v[0], 2), t.transpose(t.matmul(v[0], t.transpose(v[0])))});
    });
}

TEST_CASE("norm_cols value and gradient") {
    std::mt19937_64 rng(5);
    MatrixXd x = randm(6, 2, rng);
    VectorXd caps(6);
    caps << 1, 2, 3, 1, 1, 2;
    VectorXd capw = caps / caps.sum();
    Tape t;
    auto out = t.norm_cols(t.leaf(x), capw);
    const MatrixXd& y = t.value(out);
    for (int k = 0; k < 2; ++k) {
        CHECK(capw.dot(y.col(k)) == Catch::Approx(0.0).margin(1e-12));
        CHECK(std::sqrt(y.col(k).squaredNorm() / 6) == Catch::Approx(1.0).epsilon(1e-12));
    }
    check_gradient({x}, [capw](Tape& t2, const std::vector<Tape::Var>& v) {
        return t2.norm_cols(v[0], capw);
    });
}

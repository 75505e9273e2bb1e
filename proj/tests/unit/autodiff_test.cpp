#include "doctest.h"

#include <cmath>
#include <functional>
#include <vector>

#include "autodiff.hpp"

using namespace mollae;
using Mat = ad::Mat;

namespace {

using Builder = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

double eval_scalar(const std::vector<Mat>& inputs, const Builder& f) {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    vars.reserve(inputs.size());
    for (const auto& m : inputs) vars.push_back(tape.constant(m));
    return f(tape, vars).val()(0, 0);
}

// Central-difference gradient check of a scalar-valued builder against the
// reverse-mode result, entry by entry.
void fd_check(const std::vector<Mat>& inputs, const Builder& f, double eps = 1e-5, double tol = 1e-5) {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    vars.reserve(inputs.size());
    for (const auto& m : inputs) vars.push_back(tape.constant(m));
    ad::Var root = f(tape, vars);
    REQUIRE(root.rows() == 1);
    REQUIRE(root.cols() == 1);
    tape.backward(root);
    std::vector<Mat> analytic;
    analytic.reserve(vars.size());
    for (const auto& v : vars) analytic.push_back(tape.grad_of(v));

    for (std::size_t i = 0; i < inputs.size(); ++i) {
        for (Eigen::Index r = 0; r < inputs[i].rows(); ++r) {
            for (Eigen::Index c = 0; c < inputs[i].cols(); ++c) {
                std::vector<Mat> plus = inputs, minus = inputs;
                plus[i](r, c) += eps;
                minus[i](r, c) -= eps;
                const double fd = (eval_scalar(plus, f) - eval_scalar(minus, f)) / (2.0 * eps);
                const double a = analytic[i](r, c);
                const double denom = std::max(1e-8, std::abs(a) + std::abs(fd));
                INFO("input ", i, " entry (", r, ",", c, ") analytic ", a, " fd ", fd);
                CHECK(std::abs(a - fd) / denom < tol);
            }
        }
    }
}

Mat weights(Eigen::Index r, Eigen::Index c) {
    Mat w(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) w(i, j) = 0.3 + 0.17 * static_cast<double>(i * c + j);
    return w;
}

// Weighted scalar readout so the incoming gradient is non-uniform.
ad::Var readout(ad::Tape& tape, ad::Var v) {
    return ad::sum(ad::mul(v, tape.constant(weights(v.rows(), v.cols()))));
}

Mat testmat(Eigen::Index r, Eigen::Index c, double lo, double hi, uint64_t seed) {
    Rng rng(seed);
    Mat m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = lo + (hi - lo) * rng.uniform();
    return m;
}

}  // namespace

TEST_CASE("elementwise op gradients match finite differences") {
    const Mat a = testmat(2, 3, -1.5, 1.5, 11);
    const Mat b = testmat(2, 3, 0.5, 2.0, 12);  // bounded away from 0 for div/log

    fd_check({a, b}, [](ad::Tape& t, const std::vector<ad::Var>& v) { return readout(t, ad::add(v[0], v[1])); });
    fd_check({a, b}, [](ad::Tape& t, const std::vector<ad::Var>& v) { return readout(t, ad::sub(v[0], v[1])); });
    fd_check({a, b}, [](ad::Tape& t, const std::vector<ad::Var>& v) { return readout(t, ad::mul(v[0], v[1])); });
    fd_check({a, b}, [](ad::Tape& t, const std::vector<ad::Var>& v) { return readout(t, ad::div(v[0], v[1])); });
    fd_check({a}, [](ad::Tape& t, const std::vector<ad::Var>& v) { return readout(t, ad::neg(v[0])); });
    fd_check({a}, [](ad::Tape& t, const std::vector<ad::Var>& v) { return readout(t, ad::add_scalar(v[0], 2.5)); });
    fd_check({a}, [](ad::Tape& t, const std::vector<ad::Var>& v) { return readout(t, ad::scale(v[0], -1.7)); });
    fd_check({a}, [](ad::Tape& t, const std::vector<ad::Var>& v) { return readout(t, ad::square(v[0])); });
    fd_check({b}, [](ad::Tape& t, const std::vector<ad::Var>& v) { return readout(t, ad::sqrt_off(v[0], 0.1)); });
    fd_check({a}, [](ad::Tape& t, const std::vector<ad::Var>& v) { return readout(t, ad::exp(v[0])); });
    fd_check({b}, [](ad::Tape& t, const std::vector<ad::Var>& v) { return readout(t, ad::log(v[0])); });
    fd_check({a}, [](ad::Tape& t, const std::vector<ad::Var>& v) { return readout(t, ad::silu(v[0])); });
    fd_check({a}, [](ad::Tape& t, const std::vector<ad::Var>& v) { return readout(t, ad::softplus(v[0])); });

    // relu kink avoided: entries bounded away from 0
    Mat r = a;
    for (Eigen::Index i = 0; i < r.size(); ++i) {
        double& x = r.data()[i];
        if (std::abs(x) < 0.2) x = (x >= 0 ? 0.2 : -0.2);
    }
    fd_check({r}, [](ad::Tape& t, const std::vector<ad::Var>& v) { return readout(t, ad::relu(v[0])); });
}

TEST_CASE("elementwise op values") {
    ad::Tape tape;
    Mat a(1, 3);
    a << -1.0, 0.0, 2.0;
    ad::Var v = tape.constant(a);
    CHECK(ad::relu(v).val()(0, 0) == 0.0);
    CHECK(ad::relu(v).val()(0, 2) == 2.0);
    const double sig = 1.0 / (1.0 + std::exp(1.0));
    CHECK(ad::silu(v).val()(0, 0) == doctest::Approx(-sig).epsilon(1e-12));
    CHECK(ad::softplus(v).val()(0, 1) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(ad::sqrt_off(tape.constant(Mat::Zero(1, 1)), 4.0).val()(0, 0) == doctest::Approx(2.0));
}

TEST_CASE("structural op gradients match finite differences") {
    const Mat a = testmat(2, 3, -1.0, 1.0, 21);
    const Mat b = testmat(3, 4, -1.0, 1.0, 22);
    const Mat row = testmat(1, 3, -1.0, 1.0, 23);
    const Mat col = testmat(2, 1, 0.2, 1.5, 24);

    fd_check({a, b}, [](ad::Tape& t, const std::vector<ad::Var>& v) { return readout(t, ad::matmul(v[0], v[1])); });
    fd_check({a}, [](ad::Tape& t, const std::vector<ad::Var>& v) { return readout(t, ad::transpose(v[0])); });
    fd_check({a, row},
             [](ad::Tape& t, const std::vector<ad::Var>& v) { return readout(t, ad::add_rowvec(v[0], v[1])); });
    fd_check({a, col},
             [](ad::Tape& t, const std::vector<ad::Var>& v) { return readout(t, ad::mul_colbcast(v[0], v[1])); });

    // repeated gather index exercises gradient accumulation into one row
    fd_check({a}, [](ad::Tape& t, const std::vector<ad::Var>& v) {
        return readout(t, ad::gather_rows(v[0], {1, 0, 1, 1}));
    });
    // colliding scatter targets must sum
    fd_check({b}, [](ad::Tape& t, const std::vector<ad::Var>& v) {
        return readout(t, ad::scatter_add_rows(v[0], {0, 2, 0}, 4));
    });
    fd_check({a, a}, [](ad::Tape& t, const std::vector<ad::Var>& v) {
        return readout(t, ad::concat_cols({v[0], v[1]}));
    });
    fd_check({a, a}, [](ad::Tape& t, const std::vector<ad::Var>& v) {
        return readout(t, ad::concat_rows({v[0], v[1]}));
    });
    fd_check({b}, [](ad::Tape& t, const std::vector<ad::Var>& v) { return readout(t, ad::slice_cols(v[0], 1, 2)); });
    fd_check({b}, [](ad::Tape& t, const std::vector<ad::Var>& v) { return readout(t, ad::slice_rows(v[0], 1, 2)); });
}

TEST_CASE("structural op values") {
    ad::Tape tape;
    Mat a(2, 2);
    a << 1, 2, 3, 4;
    ad::Var v = tape.constant(a);
    CHECK(ad::transpose(v).val()(0, 1) == 3.0);
    ad::Var g = ad::gather_rows(v, {1, 1, 0});
    CHECK(g.rows() == 3);
    CHECK(g.val()(0, 0) == 3.0);
    CHECK(g.val()(2, 1) == 2.0);
    ad::Var s = ad::scatter_add_rows(v, {1, 1}, 3);
    CHECK(s.val()(0, 0) == 0.0);
    CHECK(s.val()(1, 0) == 4.0);  // rows 0 and 1 summed into row 1
    CHECK(s.val()(1, 1) == 6.0);
    ad::Var cc = ad::concat_cols({v, v});
    CHECK(cc.cols() == 4);
    CHECK(cc.val()(1, 3) == 4.0);
}

TEST_CASE("reduction gradients and values") {
    const Mat a = testmat(3, 4, -2.0, 2.0, 31);
    fd_check({a}, [](ad::Tape& t, const std::vector<ad::Var>& v) {
        (void)t;
        return ad::sum(v[0]);
    });
    fd_check({a}, [](ad::Tape& t, const std::vector<ad::Var>& v) { return readout(t, ad::rowwise_sum(v[0])); });
    fd_check({a}, [](ad::Tape& t, const std::vector<ad::Var>& v) { return readout(t, ad::colwise_mean(v[0])); });

    ad::Tape tape;
    ad::Var v = tape.constant(a);
    CHECK(ad::sum(v).val()(0, 0) == doctest::Approx(a.sum()).epsilon(1e-14));
    CHECK(ad::rowwise_sum(v).val()(1, 0) == doctest::Approx(a.row(1).sum()).epsilon(1e-14));
    CHECK(ad::colwise_mean(v).val()(0, 2) == doctest::Approx(a.col(2).mean()).epsilon(1e-14));
}

TEST_CASE("softmax family values and gradients") {
    const Mat a = testmat(3, 4, -3.0, 3.0, 41);

    ad::Tape tape;
    ad::Var v = tape.constant(a);
    Mat sm = ad::softmax_rows(v).val();
    for (Eigen::Index r = 0; r < sm.rows(); ++r) {
        CHECK(sm.row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(sm.row(r).minCoeff() > 0.0);
    }
    Mat lsm = ad::log_softmax_rows(v).val();
    CHECK((lsm.array().exp().matrix() - sm).cwiseAbs().maxCoeff() < 1e-12);
    Mat lse = ad::logsumexp_rows(v).val();
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
        CHECK(lse(r, 0) == doctest::Approx(std::log(a.row(r).array().exp().sum())).epsilon(1e-12));
    }

    // -inf entries contribute nothing to logsumexp
    Mat inf_row(1, 3);
    inf_row << -std::numeric_limits<double>::infinity(), 0.0, -std::numeric_limits<double>::infinity();
    CHECK(ad::logsumexp_rows(tape.constant(inf_row)).val()(0, 0) == doctest::Approx(0.0));

    fd_check({a}, [](ad::Tape& t, const std::vector<ad::Var>& v2) { return readout(t, ad::softmax_rows(v2[0])); });
    fd_check({a}, [](ad::Tape& t, const std::vector<ad::Var>& v2) { return readout(t, ad::log_softmax_rows(v2[0])); });
    fd_check({a}, [](ad::Tape& t, const std::vector<ad::Var>& v2) { return readout(t, ad::logsumexp_rows(v2[0])); });

    const Mat blocks = testmat(6, 2, -2.0, 2.0, 42);
    ad::Var bs = ad::block_softmax(tape.constant(blocks), 3);
    for (Eigen::Index c = 0; c < 2; ++c) {
        CHECK(bs.val().block(0, c, 3, 1).sum() == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(bs.val().block(3, c, 3, 1).sum() == doctest::Approx(1.0).epsilon(1e-12));
    }
    fd_check({blocks},
             [](ad::Tape& t, const std::vector<ad::Var>& v2) { return readout(t, ad::block_softmax(v2[0], 3)); });
}

TEST_CASE("layer norm, masked residual, centering") {
    const Mat a = testmat(3, 5, -2.0, 2.0, 51);
    const Mat gain = testmat(1, 5, 0.5, 1.5, 52);
    const Mat bias = testmat(1, 5, -0.5, 0.5, 53);

    ad::Tape tape;
    ad::Var ln = ad::layer_norm_rows(tape.constant(a), tape.constant(Mat::Ones(1, 5)), tape.constant(Mat::Zero(1, 5)));
    for (Eigen::Index r = 0; r < 3; ++r) {
        CHECK(ln.val().row(r).mean() == doctest::Approx(0.0).epsilon(1e-12));
        const double var = (ln.val().row(r).array() - ln.val().row(r).mean()).square().mean();
        CHECK(var == doctest::Approx(1.0).epsilon(1e-3));  // eps in the denominator shifts it slightly
    }
    fd_check({a, gain, bias}, [](ad::Tape& t, const std::vector<ad::Var>& v) {
        return readout(t, ad::layer_norm_rows(v[0], v[1], v[2]));
    });

    const Mat x = testmat(4, 3, -1.0, 1.0, 54);
    const Mat d = testmat(4, 3, -1.0, 1.0, 55);
    std::vector<uint8_t> mask = {1, 0, 1, 0};
    ad::Var masked = ad::add_rows_masked(tape.constant(x), tape.constant(d), mask);
    CHECK(masked.val().row(1) == x.row(1));  // bit-identical copy through
    CHECK(masked.val().row(3) == x.row(3));
    CHECK((masked.val().row(0) - (x.row(0) + d.row(0))).cwiseAbs().maxCoeff() == 0.0);
    fd_check({x, d}, [mask](ad::Tape& t, const std::vector<ad::Var>& v) {
        return readout(t, ad::add_rows_masked(v[0], v[1], mask));
    });

    ad::Var centered = ad::center_cols(tape.constant(x));
    CHECK(centered.val().colwise().mean().cwiseAbs().maxCoeff() < 1e-15);
    fd_check({x}, [](ad::Tape& t, const std::vector<ad::Var>& v) { return readout(t, ad::center_cols(v[0])); });
}

TEST_CASE("parameter leaves accumulate gradients and dedup") {
    ad::ParamRegistry reg;
    ad::Param& p = reg.add("w", 2, 2);
    p.value << 1.0, 2.0, 3.0, 4.0;

    ad::Tape tape;
    ad::Var w1 = tape.leaf(p);
    ad::Var w2 = tape.leaf(p);
    CHECK(w1.id == w2.id);  // same node: one leaf per Param per tape

    ad::Var loss = ad::sum(ad::add(w1, ad::square(w2)));  // d/dw = 1 + 2w
    tape.backward(loss);
    CHECK(p.grad(0, 0) == doctest::Approx(1.0 + 2.0 * 1.0));
    CHECK(p.grad(1, 1) == doctest::Approx(1.0 + 2.0 * 4.0));

    // a second backward pass accumulates on top
    ad::Tape tape2;
    tape2.backward(ad::sum(tape2.leaf(p)));
    CHECK(p.grad(0, 0) == doctest::Approx(2.0 + 2.0 * 1.0));

    reg.zero_grads();
    CHECK(p.grad.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("registry norm and clipping") {
    ad::ParamRegistry reg;
    ad::Param& a = reg.add("a", 1, 2);
    ad::Param& b = reg.add("b", 1, 1);
    a.grad << 3.0, 0.0;
    b.grad << 4.0;
    CHECK(reg.grad_norm() == doctest::Approx(5.0));

    reg.clip_grad_norm(10.0);  // below the cap: untouched
    CHECK(a.grad(0, 0) == 3.0);

    reg.clip_grad_norm(2.5);  // scaled by 0.5
    CHECK(a.grad(0, 0) == doctest::Approx(1.5));
    CHECK(b.grad(0, 0) == doctest::Approx(2.0));
    CHECK(reg.grad_norm() == doctest::Approx(2.5));

    CHECK(reg.find("a") == &a);
    CHECK(reg.find("missing") == nullptr);
    CHECK(reg.scalar_count() == 3);
    CHECK_THROWS(reg.add("a", 1, 1));  // duplicate name
}

TEST_CASE("backward requires a scalar root") {
    ad::Tape tape;
    ad::Var v = tape.constant(Mat::Ones(2, 2));
    CHECK_THROWS(tape.backward(v));
}

TEST_CASE("init helpers") {
    Rng rng(7);
    ad::ParamRegistry reg;
    ad::Param& w = reg.add("w", 64, 32);
    ad::init_xavier_uniform(w, rng);
    const double bound = std::sqrt(6.0 / (64 + 32));
    CHECK(w.value.cwiseAbs().maxCoeff() <= bound);
    CHECK(w.value.cwiseAbs().maxCoeff() > 0.5 * bound);  // actually spread out
    CHECK(std::abs(w.value.mean()) < 0.05);

    ad::Param& n = reg.add("n", 100, 100);
    ad::init_normal(n, rng, 0.01);
    const double sd = std::sqrt((n.value.array() - n.value.mean()).square().mean());
    CHECK(sd == doctest::Approx(0.01).epsilon(0.05));

    ad::init_zero(n);
    CHECK(n.value.cwiseAbs().maxCoeff() == 0.0);
}

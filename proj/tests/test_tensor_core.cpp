#include "oracles.hpp"

#include "gkd/autodiff.hpp"
#include "gkd/fft.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace gkd;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng)
{
    std::normal_distribution<Scalar> nd;
    Tensor t(std::move(shape));
    for (Index i = 0; i < t.size(); ++i) t[i] = nd(rng);
    return t;
}

RowMatrix as_matrix(const Tensor& t, Index r, Index c) { return t.matrix(r, c); }

/// Gradient of `build(tape, x)` (a scalar) wrt x, analytic and numeric.
std::pair<Vector, Vector> gradients(const Tensor& x0, const std::function<Var(Tape&, Var)>& build)
{
    Tape tape;
    Var x = tape.leaf(x0, true);
    tape.backward(build(tape, x));
    const Vector analytic = tape.grad(x);
    const Vector numeric = oracle::finite_difference(
        [&](const Vector& v) {
            Tape t;
            return build(t, t.leaf(Tensor(x0.shape(), v), false)).value()[0];
        },
        x0.data());
    return {analytic, numeric};
}

} // namespace

TEST_CASE("tensor invariants")
{
    CHECK_THROWS_AS(Tensor({2, 0}), std::invalid_argument);
    CHECK_THROWS_AS(Tensor({2, 2}, Vector::Zero(3)), std::invalid_argument);
    Tensor t({2, 3});
    CHECK(t.size() == 6);
    t.set_requires_grad(true);
    CHECK(t.grad().size() == t.size());
    Tensor bad({2}, {1.0, std::nan("")});
    CHECK_THROWS_AS(bad.check_finite("test"), std::domain_error);
}

TEST_CASE("matmul examples")
{
    Tape tape;
    Var eye = tape.constant(Tensor({2, 2}, {1, 0, 0, 1}));
    Var m = tape.constant(Tensor({2, 2}, {1, 2, 3, 4}));
    CHECK(matmul(eye, m).value().data() == m.value().data());
    Var sel = tape.constant(Tensor({2, 2}, {1, 0, 0, 0}));
    Var col = tape.constant(Tensor({2, 1}, {5, 7}));
    const Tensor out = matmul(sel, col).value();
    CHECK(out[0] == 5.0);
    CHECK(out[1] == 0.0);
    CHECK_THROWS_AS(matmul(m, tape.constant(Tensor({3, 1}))), std::invalid_argument);

    std::mt19937_64 rng(3);
    for (int rep = 0; rep < 20; ++rep) {
        const Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
        const RowMatrix ref = oracle::matmul(as_matrix(a, 3, 4), as_matrix(b, 4, 2));
        Tape t;
        const Tensor c = matmul(t.constant(a), t.constant(b)).value();
        CHECK((as_matrix(c, 3, 2) - ref).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("matmul backward rules")
{
    std::mt19937_64 rng(4);
    const Tensor a0 = random_tensor({3, 4}, rng), b0 = random_tensor({4, 2}, rng), g0 = random_tensor({3, 2}, rng);
    Tape tape;
    Var a = tape.leaf(a0, true), b = tape.leaf(b0, true);
    tape.backward(sum(mul(matmul(a, b), tape.constant(g0))));
    const RowMatrix dc = as_matrix(g0, 3, 2);
    const RowMatrix da = dc * as_matrix(b0, 4, 2).transpose();
    const RowMatrix db = as_matrix(a0, 3, 4).transpose() * dc;
    CHECK((Eigen::Map<const RowMatrix>(tape.grad(a).data(), 3, 4) - da).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((Eigen::Map<const RowMatrix>(tape.grad(b).data(), 4, 2) - db).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("conv2d examples")
{
    std::mt19937_64 rng(5);
    const Tensor x = random_tensor({1, 3, 5, 5}, rng);
    Tape tape;
    Tensor ident({3, 3, 1, 1});
    for (Index c = 0; c < 3; ++c) ident[c * 3 + c] = 1.0;
    CHECK(conv2d(tape.constant(x), tape.constant(ident), Var{}).value().data() == x.data());
    const Tensor zero = conv2d(tape.constant(x), tape.constant(Tensor({2, 3, 3, 3})), Var{}).value();
    CHECK(zero.data().isZero(0.0));
    CHECK_THROWS_AS(conv2d(tape.constant(x), tape.constant(ident), Var{}, {0, 0}), std::invalid_argument);
    CHECK_THROWS_AS(conv2d(tape.constant(x), tape.constant(Tensor({2, 2, 3, 3})), Var{}), std::invalid_argument);

    struct Case {
        Index stride, pad;
    };
    for (Case c : {Case{1, 0}, Case{1, 1}, Case{2, 1}, Case{2, 0}}) {
        const Tensor k = random_tensor({2, 3, 3, 3}, rng);
        Index ho = 0, wo = 0;
        const auto ref = oracle::conv2d(std::vector<Scalar>(x.data().begin(), x.data().end()), 1, 3, 5, 5,
                                        std::vector<Scalar>(k.data().begin(), k.data().end()), 2, 3, 3, c.stride, c.pad, ho, wo);
        const Tensor y = conv2d(tape.constant(x), tape.constant(k), Var{}, {c.stride, c.pad}).value();
        REQUIRE(y.shape() == Shape{1, 2, ho, wo});
        for (Index i = 0; i < y.size(); ++i) CHECK(std::abs(y[i] - ref[static_cast<std::size_t>(i)]) < 1e-10);
    }
}

TEST_CASE("conv2d, pooling and linear gradients match finite differences")
{
    std::mt19937_64 rng(6);
    const Tensor w = random_tensor({2, 3, 3, 3}, rng), b = random_tensor({2}, rng);
    const Tensor x0 = random_tensor({2, 3, 4, 4}, rng);
    const Tensor probe = random_tensor({2, 2, 2, 2}, rng);
    auto net = [&](Tape& t, Var x) {
        Var y = avg_pool2(conv2d(x, t.constant(w), t.constant(b), {1, 1}));
        return sum(mul(y, t.constant(probe)));
    };
    auto [a, n] = gradients(x0, net);
    CHECK(oracle::relative_error(a, n) < 1e-6);

    auto wrt_w = [&](Tape& t, Var wv) {
        Var y = conv2d(t.constant(x0), wv, t.constant(b), {2, 1});
        return sum(mul(y, y));
    };
    auto [aw, nw] = gradients(w, wrt_w);
    CHECK(oracle::relative_error(aw, nw) < 1e-6);

    const Tensor lw = random_tensor({3, 5}, rng), lb = random_tensor({3}, rng), lx = random_tensor({4, 5}, rng);
    auto lin = [&](Tape& t, Var x) {
        Var y = linear(x, t.constant(lw), t.constant(lb));
        return mean(cross_entropy_rows(y, std::vector<int>{0, 2, 1, 1}));
    };
    auto [al, nl] = gradients(lx, lin);
    CHECK(oracle::relative_error(al, nl) < 1e-6);

    const Tensor u0 = random_tensor({1, 2, 2, 3}, rng), up_probe = random_tensor({1, 2, 4, 6}, rng);
    auto up = [&](Tape& t, Var x) { return sum(mul(upsample2(x), t.constant(up_probe))); };
    auto [au, nu] = gradients(u0, up);
    CHECK(oracle::relative_error(au, nu) < 1e-6);

    auto gap = [&](Tape& t, Var x) {
        Var p = global_avg_pool(x);
        return sum(mul(p, p));
    };
    auto [ag, ng] = gradients(x0, gap);
    CHECK(oracle::relative_error(ag, ng) < 1e-6);
}

TEST_CASE("softmax examples and properties")
{
    for (Scalar t : {0.1, 1.0, 7.0}) {
        const Vector s = softmax(Vector::Zero(2), t);
        CHECK(s[0] == doctest::Approx(0.5));
        CHECK(s[1] == doctest::Approx(0.5));
    }
    Vector z(2);
    z << std::log(1.0), std::log(3.0);
    const Vector s = softmax(z, 1.0);
    CHECK(std::abs(s[0] - 0.25) < 1e-15);
    CHECK(std::abs(s[1] - 0.75) < 1e-15);
    Vector hot(2);
    hot << 10.0, 0.0;
    CHECK((softmax(hot, 1e6) - Vector::Constant(2, 0.5)).cwiseAbs().maxCoeff() < 1e-5);
    CHECK_THROWS_AS(softmax(z, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(softmax(z, -1.0), std::invalid_argument);

    std::mt19937_64 rng(8);
    std::normal_distribution<Scalar> nd(0.0, 5.0);
    std::uniform_real_distribution<Scalar> ut(0.05, 50.0);
    for (int rep = 0; rep < 200; ++rep) {
        Vector v(7);
        for (Index i = 0; i < 7; ++i) v[i] = nd(rng);
        const Scalar t = ut(rng);
        const Vector p = softmax(v, t);
        CHECK(std::abs(p.sum() - 1.0) < 1e-12);
        Index a = 0, b = 0;
        v.maxCoeff(&a);
        p.maxCoeff(&b);
        CHECK(a == b);
    }
    Vector huge(3);
    huge << 1000.0, 999.0, -1000.0;
    CHECK(softmax(huge).allFinite());
}

TEST_CASE("fft examples")
{
    Vector delta = Vector::Zero(4);
    delta[0] = 1.0;
    const Spectrum s = rfft(delta);
    for (Index i = 0; i < s.size(); ++i) {
        CHECK(std::abs(s[i].real() - 1.0) < 1e-15);
        CHECK(std::abs(s[i].imag()) < 1e-15);
    }
    std::mt19937_64 rng(9);
    std::normal_distribution<Scalar> nd;
    Vector v(16);
    for (Index i = 0; i < 16; ++i) v[i] = nd(rng);
    CHECK((irfft(rfft(v)) - v).cwiseAbs().maxCoeff() < 1e-9);

    for (Index e : {1, 5, 8, 12, 64, 100, 256}) {
        Vector a(e), b(e);
        for (Index i = 0; i < e; ++i) {
            a[i] = nd(rng);
            b[i] = nd(rng);
        }
        CHECK((circular_convolve_fft(a, b) - oracle::circular_convolution(a, b)).cwiseAbs().maxCoeff() < 1e-8);
    }
}

TEST_CASE("fft is forward-only")
{
    Tape tape;
    Var frozen = tape.constant(Tensor({3}, {1, 2, 3}));
    CHECK(forward_only_value(frozen).size() == 3);
    Var live = tape.leaf(Tensor({3}, {1, 2, 3}), true);
    CHECK_THROWS_AS(forward_only_value(live), std::logic_error);
}

TEST_CASE("backward examples and contract")
{
    std::mt19937_64 rng(10);
    const Tensor x0 = random_tensor({5}, rng);
    {
        Tape tape;
        Var x = tape.leaf(x0, true);
        tape.backward(sum(x));
        CHECK(tape.grad(x) == Vector::Ones(5));
    }
    {
        Tape tape;
        Var x = tape.leaf(x0, true);
        tape.backward(sum(mul(x, x)));
        CHECK((tape.grad(x) - 2.0 * x0.data()).cwiseAbs().maxCoeff() < 1e-15);
        CHECK_THROWS_AS(tape.backward(sum(x)), std::logic_error);
        tape.reset_grads();
        tape.backward(sum(x));
        CHECK(tape.grad(x) == Vector::Ones(5));
    }
    {
        Tape tape;
        Var x = tape.leaf(x0, true);
        CHECK_THROWS_AS(tape.backward(x), std::invalid_argument);
        CHECK_THROWS_AS(tape.backward(Var{}), std::logic_error);
        Tape other;
        Var y = other.leaf(x0, true);
        CHECK_THROWS_AS(add(x, y), std::logic_error);
    }
    {
        Tape tape;
        Var x = tape.leaf(Tensor({2}, {1.0, -1.0}), true);
        CHECK_THROWS_AS(scale(x, std::numeric_limits<Scalar>::infinity()), std::domain_error);
    }
}

TEST_CASE("composed ops: gradients match finite differences")
{
    std::mt19937_64 rng(11);
    const Tensor x0 = random_tensor({3, 4}, rng);
    const Tensor other = random_tensor({3, 4}, rng);
    auto f = [&](Tape& t, Var x) {
        Var a = softmax_rows(add(x, t.constant(other)), 2.5);
        Var b = transpose(concat_cols(std::vector<Var>{a, scale(x, 0.3)}));
        Var c = slice_rows(reshape(b, {8, 3}), 2, 4);
        Var d = sum_rows(mul(c, c));
        std::vector<Var> parts{d, add_scalar(d, 1.0)};
        std::vector<Scalar> w{0.7, -0.2};
        return add(mean(weighted_sum(parts, w)), mse(x, other));
    };
    auto [a, n] = gradients(x0, f);
    CHECK(oracle::relative_error(a, n) < 1e-6);
}

TEST_CASE("determinism: identical inputs give bitwise-identical forward and backward")
{
    std::mt19937_64 r1(12), r2(12);
    const Tensor x1 = random_tensor({2, 3, 6, 6}, r1), w1 = random_tensor({4, 3, 3, 3}, r1);
    const Tensor x2 = random_tensor({2, 3, 6, 6}, r2), w2 = random_tensor({4, 3, 3, 3}, r2);
    auto run = [](const Tensor& x, const Tensor& w) {
        Tape t;
        Var wv = t.leaf(w, true);
        Var y = relu(conv2d(t.constant(x), wv, Var{}, {1, 1}));
        Var loss = mean(mul(y, y));
        t.backward(loss);
        return std::make_pair(loss.value().checksum(), Tensor({w.size()}, t.grad(wv)).checksum());
    };
    CHECK(run(x1, w1) == run(x2, w2));
}

#include "checks.hpp"

#include <doctest.h>

using namespace gkd;

TEST_CASE("cross_entropy examples")
{
    CHECK(std::abs(cross_entropy(Vector::Zero(2), 0) - std::log(2.0)) < 1e-15);
    Vector z(2);
    z << 20, -20;
    CHECK(cross_entropy(z, 0) < 1e-8);
    CHECK_THROWS_AS(cross_entropy(z, 2), std::out_of_range);
    CHECK_THROWS_AS(cross_entropy(z, -1), std::out_of_range);
    std::mt19937_64 rng(1);
    for (int i = 0; i < 100; ++i) {
        const Vector l = check::gaussian_vector(7, rng, 2.0);
        CHECK(std::abs(cross_entropy(l, i % 7) - oracle::cross_entropy(l, i % 7)) < 1e-12);
    }
}

TEST_CASE("ProbDist and GroundCost contracts")
{
    CHECK_THROWS_AS(ProbDist::from(Vector::Ones(3)), std::invalid_argument);
    Vector neg(2);
    neg << 1.5, -0.5;
    CHECK_THROWS_AS(ProbDist::from(neg), std::invalid_argument);
    CHECK(ProbDist::from(Vector::Constant(4, 0.25)).size() == 4);
    RowMatrix asym(2, 2);
    asym << 0, 1, 2, 0;
    CHECK_THROWS_AS(GroundCost::from(asym), std::invalid_argument);
    RowMatrix diag(2, 2);
    diag << 1, 1, 1, 0;
    CHECK_THROWS_AS(GroundCost::from(diag), std::invalid_argument);
    CHECK(GroundCost::class_index(5, 0.25).matrix() == oracle::index_cost(5, 0.25));
}

TEST_CASE("softened targets")
{
    std::mt19937_64 rng(2);
    for (int i = 0; i < 50; ++i) {
        const Vector l = check::gaussian_vector(6, rng, 3.0);
        Index a = 0, b = 0;
        l.maxCoeff(&a);
        for (Scalar t : {0.5, 1.0, 4.0, 20.0}) {
            ProbDist::softened(l, t).p().maxCoeff(&b);
            CHECK(a == b);
        }
        CHECK((ProbDist::softened(l, 1e8).p() - Vector::Constant(6, 1.0 / 6)).cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("em_distance_1d examples")
{
    Vector a(2), b(2);
    a << 1, 0;
    b << 0, 1;
    CHECK(em_distance_1d(a, a) == 0.0);
    CHECK(em_distance_1d(a, b) == 1.0);
    CHECK_THROWS_AS(em_distance_1d(a, Vector::Constant(3, 1.0 / 3)), std::invalid_argument);
    std::mt19937_64 rng(3);
    for (int i = 0; i < 200; ++i) {
        const Vector mu = check::random_dist(5, rng), eta = check::random_dist(5, rng);
        CHECK(std::abs(em_distance_1d(mu, eta) - oracle::transport_lp(mu, eta, oracle::index_cost(5, 1.0))) < 1e-8);
        CHECK(std::abs(em_distance_1d(mu, eta, 0.25) - oracle::transport_lp(mu, eta, oracle::index_cost(5, 0.25))) < 1e-8);
    }
}

TEST_CASE("em_distance_1d subgradient")
{
    std::mt19937_64 rng(4);
    for (int i = 0; i < 50; ++i) {
        const Vector mu = check::random_dist(6, rng);
        Vector eta = check::random_dist(6, rng);
        if (check::kink_distance(mu, eta) < 1e-3) continue;
        const Vector g = em_distance_1d_grad_eta(mu, eta, 0.2);
        const Vector n = oracle::finite_difference([&](const Vector& e) { return em_distance_1d(mu, e, 0.2); }, eta);
        CHECK(oracle::relative_error(g, n) < 1e-6);
    }
    // At a tie the subgradient is zero in that coordinate's cumulative term.
    Vector p(3);
    p << 0.2, 0.3, 0.5;
    CHECK(em_distance_1d_grad_eta(p, p).isZero(0.0));
}

TEST_CASE("sinkhorn examples")
{
    std::mt19937_64 rng(5);
    const GroundCost c10 = GroundCost::class_index(10, 1.0);
    for (int i = 0; i < 10; ++i) {
        const ProbDist p = ProbDist::from(check::random_dist(10, rng));
        const SinkhornResult self = em_distance_sinkhorn(p, p, c10, 0.05, 5000);
        CHECK(self.cost <= 0.05 * std::log(10.0) + 1e-6);
        const SinkhornResult zero = em_distance_sinkhorn(p, ProbDist::from(check::random_dist(10, rng)), GroundCost::from(RowMatrix::Zero(10, 10)), 0.1, 100);
        CHECK(std::abs(zero.cost) < 1e-12);
        const ProbDist q = ProbDist::from(check::random_dist(10, rng));
        const SinkhornResult r = em_distance_sinkhorn(p, q, c10, 1e-3, 200000);
        CHECK(r.converged);
        CHECK(std::abs(r.cost - em_distance_1d(p, q)) < 1e-2);
        CHECK(std::abs(r.plan.rowwise().sum().sum() - 1.0) < 1e-6);
    }
    const ProbDist p = ProbDist::from(check::random_dist(10, rng)), q = ProbDist::from(check::random_dist(10, rng));
    CHECK_THROWS_AS((void)em_distance_sinkhorn(p, q, c10, 0.0, 10), std::invalid_argument);
    CHECK_THROWS_AS((void)em_distance_sinkhorn(p, q, c10, 0.1, 0), std::invalid_argument);
    const SinkhornResult starved = em_distance_sinkhorn(p, q, c10, 1e-3, 1);
    CHECK_FALSE(starved.converged);
}

TEST_CASE("optimal transport acceptance properties")
{
    const check::Outcome o = check::transport_correctness(12);
    INFO(o.detail);
    CHECK(o.pass);
}

TEST_CASE("mmd examples and properties")
{
    const check::Outcome o = check::mmd_correctness(13);
    INFO(o.detail);
    CHECK(o.pass);

    std::mt19937_64 rng(6);
    const RowMatrix a = RowMatrix::NullaryExpr(4, 6, [&] { return check::gaussian_vector(1, rng)[0]; });
    const RowMatrix d = RowMatrix::NullaryExpr(3, 6, [&] { return check::gaussian_vector(1, rng)[0]; });
    CHECK_THROWS_AS(mmd_gaussian(a, RowMatrix::Zero(3, 5), 1.0), std::invalid_argument);
    CHECK_THROWS_AS(mmd_gaussian(a, d, 0.0), std::invalid_argument);
    // Invariance under channel permutation on either side.
    RowMatrix ap = a;
    ap.row(0).swap(ap.row(3));
    RowMatrix dp = d;
    dp.row(0).swap(dp.row(2));
    CHECK(std::abs(mmd_gaussian(a, d, 0.9) - mmd_gaussian(ap, dp, 0.9)) < 1e-12);
    CHECK(mmd_gaussian(a, d, 0.9) >= -1e-9);
}

TEST_CASE("mmd gradient matches finite differences")
{
    std::mt19937_64 rng(7);
    for (int i = 0; i < 20; ++i) {
        const RowMatrix x = RowMatrix::NullaryExpr(3, 5, [&] { return check::gaussian_vector(1, rng)[0]; });
        const RowMatrix y = RowMatrix::NullaryExpr(4, 5, [&] { return check::gaussian_vector(1, rng)[0]; });
        const RowMatrix g = mmd_statistic_grad_x(x, y, 1.1);
        const Vector n = oracle::finite_difference(
            [&](const Vector& v) { return mmd_statistic(Eigen::Map<const RowMatrix>(v.data(), 3, 5), y, 1.1); },
            Eigen::Map<const Vector>(x.data(), x.size()));
        CHECK(oracle::relative_error(Eigen::Map<const Vector>(g.data(), g.size()), n) < 1e-6);
    }
}

TEST_CASE("median heuristic")
{
    RowMatrix two(2, 3);
    two << 0, 0, 0, 0, 2, 0;
    CHECK(median_heuristic_bandwidth(two) == 2.0);
    CHECK(median_heuristic_bandwidth(RowMatrix::Ones(5, 4)) == 1.0);
    CHECK_THROWS_AS(median_heuristic_bandwidth(RowMatrix::Ones(1, 4)), std::invalid_argument);
    std::mt19937_64 rng(8);
    for (Index n : {5, 6, 9}) {
        const RowMatrix v = RowMatrix::NullaryExpr(n, 7, [&] { return check::gaussian_vector(1, rng)[0]; });
        CHECK(std::abs(median_heuristic_bandwidth(v) - oracle::median_pairwise_distance(v)) < 1e-12);
    }
}

TEST_CASE("gradient suite over every loss surface")
{
    const check::Outcome o = check::gradient_suite(14, 10);
    INFO(o.detail);
    CHECK(o.pass);
}

#include "checks.hpp"

#include "gkd/optim.hpp"

#include <doctest.h>

#include <numeric>

using namespace gkd;

TEST_CASE("logits graph: single teacher is vanilla distillation")
{
    std::mt19937_64 rng(1);
    for (int i = 0; i < 20; ++i) {
        LogitsGraph g(1, {2.5});
        CHECK(g.incoming_weights()(0, 0) == 1.0);
        const Vector s = check::gaussian_vector(6, rng), t = check::gaussian_vector(6, rng, 3.0);
        const std::vector<Vector> ts{t};
        const Scalar expect = oracle::transport_lp(oracle::softmax(t / 2.5), oracle::softmax(s), oracle::index_cost(6, 0.2));
        CHECK(std::abs(logits_graph_loss(s, ts, g) - expect) < 1e-10);
    }
}

TEST_CASE("logits graph: identical logits give zero loss")
{
    std::mt19937_64 rng(2);
    LogitsGraph g(3, {1.0, 1.0, 1.0});
    g.raw_params() = check::gaussian_tensor({3, 3}, rng);
    const Vector s = check::gaussian_vector(5, rng);
    const std::vector<Vector> ts{s, s, s};
    CHECK(std::abs(logits_graph_loss(s, ts, g)) < 1e-15);
}

TEST_CASE("logits graph: hand-summed two-teacher digraph")
{
    std::mt19937_64 rng(3);
    LogitsGraph g(2, {2.0, 3.0});
    g.set_edge(0, 0, true);  // add a self-loop so that each row has two weights
    g.raw_params() = Tensor({2, 2}, {0.3, -0.8, 1.1, 0.2});
    const Vector s = check::gaussian_vector(4, rng);
    const std::vector<Vector> ts{check::gaussian_vector(4, rng, 2.0), check::gaussian_vector(4, rng, 2.0)};
    const Scalar l0 = oracle::transport_lp(oracle::softmax(ts[0] / 2.0), oracle::softmax(s), oracle::index_cost(4, 1.0 / 3));
    const Scalar l1 = oracle::transport_lp(oracle::softmax(ts[1] / 3.0), oracle::softmax(s), oracle::index_cost(4, 1.0 / 3));
    // Row 0 (into teacher 0): senders 0 and 1. Row 1: sender 0 only.
    const Scalar a = std::exp(0.3), b = std::exp(-0.8);
    const Scalar row0 = (a * l0 + b * l1) / (a + b);
    const Scalar row1 = l0;
    CHECK(std::abs(logits_graph_loss(s, ts, g) - (row0 + row1) / 2.0) < 1e-10);
    const RowMatrix adj = g.adjacency();
    CHECK(std::abs(adj(1, 0) - b / (a + b)) < 1e-15);  // G_l[m][n] = e_{m->n}
}

TEST_CASE("logits graph: row-stochastic weights and mask contract")
{
    LogitsGraph fresh(4);
    const RowMatrix w = fresh.incoming_weights();
    for (Index m = 0; m < 4; ++m)
        for (Index n = 0; n < 4; ++n) CHECK(w(m, n) == doctest::Approx(m == n ? 0.0 : 1.0 / 3));
    const WeightTable table = edge_weight_report(fresh, {"S", "M", "T", "P"});
    CHECK(table.weights.rows() == 4);
    CHECK(table.to_text().find('S') != std::string::npos);

    std::mt19937_64 rng(4);
    LogitsGraph g(4);
    g.raw_params() = check::gaussian_tensor({4, 4}, rng, 3.0);
    g.set_edge(2, 1, false);
    const RowMatrix wm = g.incoming_weights();
    CHECK(wm(1, 2) == 0.0);
    CHECK(std::abs(wm.row(1).sum() - 1.0) < 1e-12);
    const RowMatrix raw = g.raw_params().matrix(4, 4);
    CHECK(std::abs(wm(1, 0) - std::exp(raw(1, 0)) / (std::exp(raw(1, 0)) + std::exp(raw(1, 3)))) < 1e-12);
    CHECK_THROWS_AS(g.set_edge(4, 0, true), std::out_of_range);
}

TEST_CASE("logits graph is equivariant to teacher relabeling")
{
    std::mt19937_64 rng(5);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<Scalar> temps{1.5, 2.0, 3.0, 4.5};
        LogitsGraph g(4, temps);
        g.raw_params() = check::gaussian_tensor({4, 4}, rng);
        const Vector s = check::gaussian_vector(5, rng);
        std::vector<Vector> ts;
        for (int t = 0; t < 4; ++t) ts.push_back(check::gaussian_vector(5, rng, 2.0));

        std::vector<Index> perm{0, 1, 2, 3};
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<Scalar> ptemps(4);
        std::vector<Vector> pts(4);
        for (Index i = 0; i < 4; ++i) {
            ptemps[static_cast<std::size_t>(i)] = temps[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
            pts[static_cast<std::size_t>(i)] = ts[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
        }
        LogitsGraph pg(4, ptemps);
        const RowMatrix raw = g.raw_params().matrix(4, 4);
        for (Index i = 0; i < 4; ++i)
            for (Index j = 0; j < 4; ++j) pg.raw_params()[i * 4 + j] = raw(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
        CHECK(std::abs(logits_graph_loss(s, ts, g) - logits_graph_loss(s, pts, pg)) < 1e-12);
    }
}

TEST_CASE("repr graph examples")
{
    std::mt19937_64 rng(6);
    const Index s = 4, ck = 2;
    {
        ReprGraph g(2, ck);
        CHECK(g.vertices() == 1);
        CHECK(g.weights()[0] == 1.0);
        BilinearVertex v{0, 0, 1, l2_normalize(check::gaussian_vector(ck * s, rng))};
        const RowMatrix student = RowMatrix::NullaryExpr(3, s, [&] { return check::gaussian_vector(1, rng)[0]; });
        const Tensor soft = soften_vertices(std::span<const BilinearVertex>(&v, 1), g);
        const RowMatrix d = soft.matrix(ck, s);
        CHECK(std::abs(repr_graph_loss(student, std::span<const BilinearVertex>(&v, 1), g, 0.9) - mmd_gaussian(student, d, 0.9)) < 1e-15);
    }
    {
        ReprGraph g(4, ck);
        CHECK(g.vertices() == 6);
        for (Index k = 0; k < 6; ++k) CHECK(g.weights()[k] == doctest::Approx(1.0 / 6).epsilon(1e-15));
    }
    {
        // Three vertices with hand-set parameters.
        ReprGraph g(3, ck, {2.0, 1.0, 4.0});
        g.raw_params() = Tensor({1, 3}, {0.4, -0.2, 1.0});
        std::vector<BilinearVertex> vs;
        for (Index k = 0; k < 3; ++k) vs.push_back({k, 0, 1, l2_normalize(check::gaussian_vector(ck * s, rng))});
        const RowMatrix student = RowMatrix::NullaryExpr(3, s, [&] { return check::gaussian_vector(1, rng)[0]; });
        const Scalar temps[] = {2.0, 1.0, 4.0}, raw[] = {0.4, -0.2, 1.0};
        Scalar z = 0, total = 0;
        for (int k = 0; k < 3; ++k) z += std::exp(raw[k] / temps[k]);
        RowMatrix soft_student(3, s);
        for (Index r = 0; r < 3; ++r) soft_student.row(r) = oracle::softmax(student.row(r).transpose()).transpose();
        for (int k = 0; k < 3; ++k) {
            RowMatrix d(ck, s);
            for (Index c = 0; c < ck; ++c) d.row(c) = oracle::softmax(vs[static_cast<std::size_t>(k)].v.segment(c * s, s) / temps[k]).transpose();
            total += std::exp(raw[k] / temps[k]) / z * oracle::mmd(soft_student, d, 0.7);
        }
        CHECK(std::abs(repr_graph_loss(student, vs, g, 0.7) - total) < 1e-10);
    }
    {
        ReprGraph g(3, 3);
        std::vector<BilinearVertex> vs;
        for (Index k = 0; k < 3; ++k) vs.push_back({k, 0, 1, Vector::Ones(8)});
        CHECK_THROWS_AS(soften_vertices(vs, g), std::invalid_argument);
    }
    CHECK_THROWS_AS(ReprGraph(1, 2), std::invalid_argument);
}

TEST_CASE("repr graph with vector edges stays normalized")
{
    std::mt19937_64 rng(7);
    ReprGraph g(4, 2, {}, 3);
    g.raw_params() = check::gaussian_tensor({3, 6}, rng);
    CHECK(std::abs(g.weights().sum() - 1.0) < 1e-12);
    const WeightTable t = edge_weight_report(g);
    CHECK(t.weights.cols() == 6);
    CHECK(std::abs(t.weights.sum() - 1.0) < 1e-12);
}

TEST_CASE("graph acceptance contracts")
{
    const check::Outcome o = check::graph_contracts(15);
    INFO(o.detail);
    CHECK(o.pass);
}

TEST_CASE("learned edges favour the teacher that carries the ground truth (5 seeds)")
{
    const Index n = 64, c = 5, teachers = 4;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        std::mt19937_64 rng(seed);
        std::uniform_int_distribution<int> lab(0, static_cast<int>(c) - 1);
        std::vector<int> labels(static_cast<std::size_t>(n));
        for (int& y : labels) y = lab(rng);
        std::vector<RowMatrix> tl;
        RowMatrix oracle_teacher = RowMatrix::Zero(n, c);
        for (Index i = 0; i < n; ++i) oracle_teacher(i, labels[static_cast<std::size_t>(i)]) = 12.0;
        tl.push_back(oracle_teacher);
        for (Index t = 1; t < teachers; ++t) tl.push_back(RowMatrix::NullaryExpr(n, c, [&] { return 4.0 * check::gaussian_vector(1, rng)[0]; }));

        LogitsGraph g(teachers);
        Tensor logits = check::gaussian_tensor({n, c}, rng, 0.1);
        Adam adam({0.05});
        for (int step = 0; step < 300; ++step) {
            Tape tape;
            Var s = tape.leaf(logits, true);
            Var raw = tape.leaf(g.raw_params(), true);
            Var ce = mean(cross_entropy_rows(s, labels));
            Var soft = mean(logits_graph_loss(s, tl, g, raw));
            std::vector<Var> parts{ce, soft};
            std::vector<Scalar> w{0.4, 0.6};
            tape.backward(weighted_sum(parts, w));
            logits.grad() = tape.grad(s);
            g.raw_params().grad() = tape.grad(raw);
            adam.step({{"s", &logits}, {"g", &g.raw_params()}}, 0.05);
        }
        const RowMatrix w = g.incoming_weights();
        for (Index m = 1; m < teachers; ++m) {
            INFO("seed " << seed << " receiver " << m << " weights " << w.row(m));
            for (Index k = 1; k < teachers; ++k)
                if (k != m) CHECK(w(m, 0) > w(m, k));
        }
    }
}

#include "gkd/distill_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace gkd {

ProbDist ProbDist::from(Vector p)
{
    if (p.size() < 1) throw std::invalid_argument("empty probability vector");
    if ((p.array() < 0.0).any()) throw std::invalid_argument("probability vector has negative entries");
    if (std::abs(p.sum() - 1.0) > 1e-9) throw std::invalid_argument("probability vector does not sum to one");
    return ProbDist(std::move(p));
}

ProbDist ProbDist::softened(const Eigen::Ref<const Vector>& logits, Scalar temperature)
{
    return ProbDist(softmax(logits, temperature));
}

GroundCost GroundCost::from(RowMatrix cost)
{
    if (cost.rows() != cost.cols()) throw std::invalid_argument("ground cost must be square");
    for (Index i = 0; i < cost.rows(); ++i) {
        if (cost(i, i) != 0.0) throw std::invalid_argument("ground cost must have a zero diagonal");
        for (Index j = 0; j < cost.cols(); ++j)
            if (cost(i, j) < 0.0 || cost(i, j) != cost(j, i)) throw std::invalid_argument("ground cost must be symmetric and nonnegative");
    }
    return GroundCost(std::move(cost));
}

GroundCost GroundCost::class_index(Index c, Scalar step)
{
    RowMatrix m(c, c);
    for (Index i = 0; i < c; ++i)
        for (Index j = 0; j < c; ++j) m(i, j) = step * static_cast<Scalar>(std::abs(i - j));
    return GroundCost(std::move(m));
}

Scalar cross_entropy(const Eigen::Ref<const Vector>& logits, int label)
{
    if (label < 0 || label >= logits.size()) throw std::out_of_range("cross_entropy: label out of range");
    const Scalar m = logits.maxCoeff();
    return m + std::log((logits.array() - m).exp().sum()) - logits[label];
}

Scalar em_distance_1d(const Eigen::Ref<const Vector>& mu, const Eigen::Ref<const Vector>& eta, Scalar step)
{
    if (mu.size() != eta.size()) throw std::invalid_argument("em_distance_1d: length mismatch");
    Scalar cum = 0.0, total = 0.0;
    for (Index k = 0; k + 1 < mu.size(); ++k) {
        cum += mu[k] - eta[k];
        total += std::abs(cum);
    }
    return step * total;
}

Scalar em_distance_1d(const ProbDist& mu, const ProbDist& eta, Scalar step) { return em_distance_1d(mu.p(), eta.p(), step); }

Vector em_distance_1d_grad_eta(const Eigen::Ref<const Vector>& mu, const Eigen::Ref<const Vector>& eta, Scalar step)
{
    if (mu.size() != eta.size()) throw std::invalid_argument("em_distance_1d: length mismatch");
    const Index c = mu.size();
    Vector sign = Vector::Zero(c);
    Scalar cum = 0.0;
    for (Index k = 0; k + 1 < c; ++k) {
        cum += mu[k] - eta[k];
        sign[k] = (cum > 0) - (cum < 0);
    }
    // d/dη_j Σ_k |C_k| = −Σ_{k >= j} sign(C_k)
    Vector g(c);
    Scalar tail = 0.0;
    for (Index j = c; j-- > 0;) {
        tail += sign[j];
        g[j] = -step * tail;
    }
    return g;
}

namespace {

Scalar log_sum_exp(const Eigen::Ref<const Vector>& v)
{
    const Scalar m = v.maxCoeff();
    if (!std::isfinite(m)) return m;
    return m + std::log((v.array() - m).exp().sum());
}

} // namespace

SinkhornResult em_distance_sinkhorn(const ProbDist& mu, const ProbDist& eta, const GroundCost& cost, Scalar reg, int iters, Scalar tol)
{
    if (!(reg > 0.0)) throw std::invalid_argument("sinkhorn regularization must be positive");
    if (iters < 1) throw std::invalid_argument("sinkhorn needs at least one iteration");
    const Index c = mu.size();
    if (eta.size() != c || cost.size() != c) throw std::invalid_argument("sinkhorn: dimension mismatch");

    // Restrict to the supports; zero-mass rows/columns carry no plan entries.
    std::vector<Index> rows, cols;
    for (Index i = 0; i < c; ++i) {
        if (mu.p()[i] > 0.0) rows.push_back(i);
        if (eta.p()[i] > 0.0) cols.push_back(i);
    }
    const Index r = static_cast<Index>(rows.size()), k = static_cast<Index>(cols.size());
    RowMatrix C(r, k);
    Vector log_a(r), log_b(k);
    for (Index i = 0; i < r; ++i) {
        log_a[i] = std::log(mu.p()[rows[i]]);
        for (Index j = 0; j < k; ++j) C(i, j) = cost.matrix()(rows[i], cols[j]);
    }
    for (Index j = 0; j < k; ++j) log_b[j] = std::log(eta.p()[cols[j]]);

    SinkhornResult res;
    Vector f = Vector::Zero(r), g = Vector::Zero(k);
    Scalar eps = std::max(reg, C.maxCoeff());
    Vector tmp_r(k), tmp_c(r);
    auto plan_log = [&](Index i, Index j, Scalar e) { return (f[i] + g[j] - C(i, j)) / e; };
    while (true) {
        bool stage_done = false;
        while (res.iterations < iters) {
            ++res.iterations;
            for (Index i = 0; i < r; ++i) {
                for (Index j = 0; j < k; ++j) tmp_r[j] = (g[j] - C(i, j)) / eps;
                f[i] = eps * (log_a[i] - log_sum_exp(tmp_r));
            }
            for (Index j = 0; j < k; ++j) {
                for (Index i = 0; i < r; ++i) tmp_c[i] = (f[i] - C(i, j)) / eps;
                g[j] = eps * (log_b[j] - log_sum_exp(tmp_c));
            }
            Scalar err = 0.0;
            for (Index i = 0; i < r; ++i) {
                Scalar row = 0.0;
                for (Index j = 0; j < k; ++j) row += std::exp(plan_log(i, j, eps));
                err += std::abs(row - std::exp(log_a[i]));
            }
            res.marginal_error = err;
            if (err < tol) {
                stage_done = true;
                break;
            }
        }
        if (eps <= reg || !stage_done) {
            res.converged = stage_done && eps <= reg;
            break;
        }
        eps = std::max(reg, eps * 0.5);
    }

    res.plan = RowMatrix::Zero(c, c);
    for (Index i = 0; i < r; ++i)
        for (Index j = 0; j < k; ++j) {
            const Scalar p = std::exp(plan_log(i, j, eps));
            res.plan(rows[i], cols[j]) = p;
            res.cost += p * C(i, j);
        }
    return res;
}

namespace {

RowMatrix gaussian_gram(const Eigen::Ref<const RowMatrix>& a, const Eigen::Ref<const RowMatrix>& b, Scalar bw)
{
    RowMatrix k(a.rows(), b.rows());
    const Scalar inv = 1.0 / (2.0 * bw * bw);
    for (Index i = 0; i < a.rows(); ++i)
        for (Index j = 0; j < b.rows(); ++j) k(i, j) = std::exp(-(a.row(i) - b.row(j)).squaredNorm() * inv);
    return k;
}

void check_mmd_args(const Eigen::Ref<const RowMatrix>& x, const Eigen::Ref<const RowMatrix>& y, Scalar bw)
{
    if (x.cols() != y.cols())
        throw std::invalid_argument("mmd: channel vectors have different lengths (" + std::to_string(x.cols()) + " vs " +
                                    std::to_string(y.cols()) + ")");
    if (!(bw > 0.0)) throw std::invalid_argument("mmd: bandwidth must be positive");
    if (x.rows() < 1 || y.rows() < 1) throw std::invalid_argument("mmd: empty channel set");
}

} // namespace

Scalar mmd_statistic(const Eigen::Ref<const RowMatrix>& x, const Eigen::Ref<const RowMatrix>& y, Scalar bandwidth)
{
    check_mmd_args(x, y, bandwidth);
    return gaussian_gram(x, x, bandwidth).mean() + gaussian_gram(y, y, bandwidth).mean() -
           2.0 * gaussian_gram(x, y, bandwidth).mean();
}

RowMatrix mmd_statistic_grad_x(const Eigen::Ref<const RowMatrix>& x, const Eigen::Ref<const RowMatrix>& y, Scalar bandwidth)
{
    check_mmd_args(x, y, bandwidth);
    const auto p = static_cast<Scalar>(x.rows()), q = static_cast<Scalar>(y.rows());
    const Scalar b2 = bandwidth * bandwidth;
    const RowMatrix kxx = gaussian_gram(x, x, bandwidth);
    const RowMatrix kxy = gaussian_gram(x, y, bandwidth);
    // ∂/∂x_p K(x_p, z) = −K·(x_p − z)/bw²
    RowMatrix g = -(2.0 / (p * p * b2)) * (kxx.rowwise().sum().asDiagonal() * x - kxx * x);
    g += (2.0 / (p * q * b2)) * (kxy.rowwise().sum().asDiagonal() * x - kxy * y);
    return g;
}

Scalar mmd_gaussian(const Eigen::Ref<const RowMatrix>& student_channels, const Eigen::Ref<const RowMatrix>& vertex_channels,
                    Scalar bandwidth)
{
    check_mmd_args(student_channels, vertex_channels, bandwidth);
    return mmd_statistic(softmax_rows(student_channels), vertex_channels, bandwidth);
}

Scalar median_heuristic_bandwidth(const Eigen::Ref<const RowMatrix>& vectors)
{
    const Index n = vectors.rows();
    if (n < 2) throw std::invalid_argument("median heuristic needs at least two vectors");
    std::vector<Scalar> d;
    d.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
    for (Index i = 0; i < n; ++i)
        for (Index j = i + 1; j < n; ++j) d.push_back((vectors.row(i) - vectors.row(j)).norm());
    const std::size_t mid = d.size() / 2;
    std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid), d.end());
    Scalar med = d[mid];
    if (d.size() % 2 == 0) med = 0.5 * (med + *std::max_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid)));
    return med < 1e-12 ? 1.0 : med;
}

Var em_distance_rows(Var eta, const RowMatrix& mu, Scalar step)
{
    const Index c = eta.shape().back();
    const Index n = eta.size() / c;
    if (mu.rows() != n || mu.cols() != c) throw std::invalid_argument("em_distance_rows: target shape mismatch");
    auto e = eta.value().matrix(n, c);
    Tensor out({n});
    for (Index i = 0; i < n; ++i) out[i] = em_distance_1d(mu.row(i).transpose(), e.row(i).transpose(), step);
    return eta.tape()->record(std::move(out), {eta}, [mu, n, c, step](const GradContext& ctx) {
        auto e = ctx.inputs[0]->matrix(n, c);
        Eigen::Map<RowMatrix> g(ctx.input_grads[0]->data(), n, c);
        for (Index i = 0; i < n; ++i)
            g.row(i) += ctx.out_grad[i] * em_distance_1d_grad_eta(mu.row(i).transpose(), e.row(i).transpose(), step).transpose();
    }, "em_distance");
}

Var mmd_rows(Var softened_student, const Tensor& vertex_channels, Scalar bandwidth)
{
    const Shape& xs = softened_student.shape();
    const Shape& ys = vertex_channels.shape();
    if (xs.size() != 3 || ys.size() != 4) throw std::invalid_argument("mmd_rows expects [N, C_s, S] and [N, K, C_k, S]");
    const Index n = xs[0], cs = xs[1], s = xs[2], nv = ys[1], ck = ys[2];
    if (ys[0] != n) throw std::invalid_argument("mmd_rows: batch size mismatch");
    if (ys[3] != s)
        throw std::invalid_argument("mmd_rows: student spatial size " + std::to_string(s) + " differs from vertex channel length " +
                                    std::to_string(ys[3]));
    if (!(bandwidth > 0.0)) throw std::invalid_argument("mmd: bandwidth must be positive");
    Tensor out({n, nv});
    const Scalar* xd = softened_student.value().data().data();
    const Scalar* yd = vertex_channels.data().data();
    for (Index i = 0; i < n; ++i) {
        Eigen::Map<const RowMatrix> x(xd + i * cs * s, cs, s);
        for (Index k = 0; k < nv; ++k) {
            Eigen::Map<const RowMatrix> y(yd + (i * nv + k) * ck * s, ck, s);
            out[i * nv + k] = mmd_statistic(x, y, bandwidth);
        }
    }
    return softened_student.tape()->record(std::move(out), {softened_student},
                                            [vertex_channels, n, cs, s, nv, ck, bandwidth](const GradContext& ctx) {
        const Scalar* xd = ctx.inputs[0]->data().data();
        const Scalar* yd = vertex_channels.data().data();
        for (Index i = 0; i < n; ++i) {
            Eigen::Map<const RowMatrix> x(xd + i * cs * s, cs, s);
            Eigen::Map<RowMatrix> gx(ctx.input_grads[0]->data() + i * cs * s, cs, s);
            for (Index k = 0; k < nv; ++k) {
                const Scalar up = ctx.out_grad[i * nv + k];
                if (up == 0.0) continue;
                Eigen::Map<const RowMatrix> y(yd + (i * nv + k) * ck * s, ck, s);
                gx += up * mmd_statistic_grad_x(x, y, bandwidth);
            }
        }
    }, "mmd");
}

Var mmd_gaussian(Var student_channels, const Tensor& vertex_channels, Scalar bandwidth)
{
    return mmd_rows(softmax_rows(student_channels, 1.0), vertex_channels, bandwidth);
}

} // namespace gkd

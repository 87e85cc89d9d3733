#pragma once

#include "gkd/autodiff.hpp"

#include <span>

namespace gkd {

/// Nonnegative vector summing to one (within 1e-9).
class ProbDist {
public:
    static ProbDist from(Vector p);
    /// softmax(logits / temperature)
    static ProbDist softened(const Eigen::Ref<const Vector>& logits, Scalar temperature = 1.0);

    const Vector& p() const { return p_; }
    Index size() const { return p_.size(); }

private:
    explicit ProbDist(Vector p) : p_(std::move(p)) {}
    Vector p_;
};

/// Symmetric, nonnegative, zero-diagonal c×c transport cost.
class GroundCost {
public:
    static GroundCost from(RowMatrix cost);
    /// cost[i][j] = step·|i − j|.
    static GroundCost class_index(Index c, Scalar step = 1.0);

    const RowMatrix& matrix() const { return cost_; }
    Index size() const { return cost_.rows(); }

private:
    explicit GroundCost(RowMatrix c) : cost_(std::move(c)) {}
    RowMatrix cost_;
};

/// Default ground-metric spacing for class distributions: |i − j| / (c − 1).
inline Scalar normalized_class_step(Index c) { return c > 1 ? 1.0 / static_cast<Scalar>(c - 1) : 1.0; }

Scalar cross_entropy(const Eigen::Ref<const Vector>& logits, int label);

/// Exact W1 under cost step·|i − j|: step · Σ_k |cumsum(μ − η)_k|.
Scalar em_distance_1d(const ProbDist& mu, const ProbDist& eta, Scalar step = 1.0);
Scalar em_distance_1d(const Eigen::Ref<const Vector>& mu, const Eigen::Ref<const Vector>& eta, Scalar step = 1.0);
/// Subgradient with respect to η (sign of the cumulative sum, zero at exact ties).
Vector em_distance_1d_grad_eta(const Eigen::Ref<const Vector>& mu, const Eigen::Ref<const Vector>& eta, Scalar step = 1.0);

struct SinkhornResult {
    Scalar cost = 0.0;        // <P, C> of the entropic plan
    bool converged = false;
    int iterations = 0;
    Scalar marginal_error = 0.0;  // L1 row-marginal violation at exit
    RowMatrix plan;
};

/// Log-domain Sinkhorn with ε-scaling down to `reg`. `iters` bounds the total
/// number of scaling sweeps; running out is reported through `converged`.
[[nodiscard]] SinkhornResult em_distance_sinkhorn(const ProbDist& mu, const ProbDist& eta, const GroundCost& cost, Scalar reg,
                                                  int iters, Scalar tol = 1e-9);

/// Biased (V-statistic) Gaussian-kernel MMD² between the rows of X and Y:
/// mean K(X,X) + mean K(Y,Y) − 2 mean K(X,Y), K(a,b) = exp(−||a−b||² / (2 bw²)).
Scalar mmd_statistic(const Eigen::Ref<const RowMatrix>& x, const Eigen::Ref<const RowMatrix>& y, Scalar bandwidth);
RowMatrix mmd_statistic_grad_x(const Eigen::Ref<const RowMatrix>& x, const Eigen::Ref<const RowMatrix>& y, Scalar bandwidth);

/// MMD between student channels (softmaxed over space here) and pre-softened vertex channels.
Scalar mmd_gaussian(const Eigen::Ref<const RowMatrix>& student_channels, const Eigen::Ref<const RowMatrix>& vertex_channels,
                    Scalar bandwidth);

/// Median of all pairwise Euclidean distances between rows; 1.0 when that median is below 1e-12.
Scalar median_heuristic_bandwidth(const Eigen::Ref<const RowMatrix>& vectors);

// Tape ops.

/// Per-row W1 between constant targets μ [N, c] and probabilities η [N, c] -> [N].
Var em_distance_rows(Var eta, const RowMatrix& mu, Scalar step);

/// Per-sample, per-vertex MMD between softened student channels x [N, C_s, S]
/// and constant vertex channels y [N, K, C_k, S] -> [N, K].
Var mmd_rows(Var softened_student, const Tensor& vertex_channels, Scalar bandwidth);

/// mmd_rows after a spatial softmax of raw student channels [N, C_s, S].
Var mmd_gaussian(Var student_channels, const Tensor& vertex_channels, Scalar bandwidth);

} // namespace gkd

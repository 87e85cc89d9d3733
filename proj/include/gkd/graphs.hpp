#pragma once

#include "gkd/distill_metrics.hpp"
#include "gkd/sketch.hpp"

#include <string>
#include <vector>

namespace gkd {

using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr Scalar kDefaultTemperature = 4.0;

/// Directed graph over teachers. Row m of the parameter/mask matrices lists the
/// edges pointing *into* vertex m, so the effective weights are a masked
/// row-softmax: incoming(m, n) = e_{n→m}, each row summing to one.
class LogitsGraph {
public:
    explicit LogitsGraph(Index n_teachers, std::vector<Scalar> temperatures = {});

    Index size() const { return n_; }
    Tensor& raw_params() { return raw_; }
    const Tensor& raw_params() const { return raw_; }
    const BoolMatrix& mask() const { return mask_; }
    /// Enable or disable edge sender → receiver.
    void set_edge(Index sender, Index receiver, bool present);
    const std::vector<Scalar>& temperatures() const { return temperatures_; }

    /// W(m, n) = e_{n→m}; masked entries are exactly zero.
    RowMatrix incoming_weights() const;
    /// Adjacency in sender-major layout: G(m, n) = e_{m→n}.
    RowMatrix adjacency() const { return incoming_weights().transpose(); }
    /// Vertices with at least one incoming edge.
    Index receiving_vertices() const;

private:
    Index n_;
    Tensor raw_;
    BoolMatrix mask_;
    std::vector<Scalar> temperatures_;
};

/// Row softmax restricted to `mask`; rows without any edge stay zero.
RowMatrix masked_softmax_rows(const Eigen::Ref<const RowMatrix>& raw, const BoolMatrix& mask);
Var masked_softmax_rows(Var raw, const BoolMatrix& mask);

/// Per-sample logits-graph imitation loss [N, 1]:
///   (1/|U|) Σ_m Σ_{n→m} e_{n→m} · W1(softmax(t_n / T_n), softmax(s)).
/// The 1/|U| factor makes equal parameters reproduce the plain mean over edges.
Var logits_graph_loss(Var student_logits, std::span<const RowMatrix> teacher_logits, const LogitsGraph& graph, Var raw_params);

/// Single-sample value of the same loss.
Scalar logits_graph_loss(const Vector& student_logits, std::span<const Vector> teacher_logits, const LogitsGraph& graph);

/// Per-edge losses W1(μ_n, η) for one sample, indexed by sender.
Vector logits_edge_losses(const Vector& student_logits, std::span<const Vector> teacher_logits, const LogitsGraph& graph);

/// Weighting over the C(|Π|, 2) bilinear vertices. Parameters are [b, K]: the
/// default b = 1 is one scalar per vertex; b > 1 keeps per-dimension edge
/// vectors, softmaxed over vertices per dimension and averaged.
class ReprGraph {
public:
    ReprGraph(Index n_teachers, Index vertex_channels, std::vector<Scalar> temperatures = {}, Index edge_dims = 1);

    Index vertices() const { return k_; }
    Index vertex_channels() const { return channels_; }
    Index edge_dims() const { return b_; }
    Tensor& raw_params() { return raw_; }
    const Tensor& raw_params() const { return raw_; }
    const std::vector<Scalar>& temperatures() const { return temperatures_; }

    /// softmax(raw / 𝒯) over vertices (averaged over edge dims); sums to one.
    Vector weights() const;

private:
    Index n_teachers_;
    Index k_;
    Index channels_;
    Index b_;
    Tensor raw_;
    std::vector<Scalar> temperatures_;
};

/// Vertex k -> softmax over space of each of the C_k channel rows of V_k / T_k: [K, C_k, S].
Tensor soften_vertices(std::span<const BilinearVertex> vertices, const ReprGraph& graph);

/// Per-sample representation-graph loss [N, 1]: Σ_k w_k · MMD(σ(R_s), D_k).
/// `student_channels` is the raw tap [N, C_s, S]; `softened` is [N, K, C_k, S].
Var repr_graph_loss(Var student_channels, const Tensor& softened, const ReprGraph& graph, Var raw_params, Scalar bandwidth);

Scalar repr_graph_loss(const RowMatrix& student_channels, std::span<const BilinearVertex> vertices, const ReprGraph& graph,
                       Scalar bandwidth);

/// Current effective weights in row-normalized form.
struct WeightTable {
    std::string name;
    std::vector<std::string> row_labels;
    std::vector<std::string> col_labels;
    RowMatrix weights;

    std::string to_text() const;
    /// Compact single-cell rendering for CSV: rows separated by '|', entries by ' '.
    std::string to_cell() const;
};

WeightTable edge_weight_report(const LogitsGraph& graph, const std::vector<std::string>& teacher_names = {});
WeightTable edge_weight_report(const ReprGraph& graph, const std::vector<std::string>& vertex_names = {});

} // namespace gkd

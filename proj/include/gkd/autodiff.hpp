#pragma once

#include "gkd/tensor.hpp"

#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace gkd {

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
public:
    Var() = default;

    bool valid() const { return tape_ != nullptr; }
    Tape* tape() const { return tape_; }
    int id() const { return id_; }

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    Index size() const { return value().size(); }
    bool requires_grad() const;

private:
    friend class Tape;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    int id_ = -1;
};

/// What a backward rule sees: the upstream gradient and the recorded operands.
/// `input_grads[i]` is null when input i does not need a gradient.
struct GradContext {
    const Vector& out_grad;
    const Tensor& out;
    std::vector<const Tensor*> inputs;
    std::vector<Vector*> input_grads;
};

using BackwardFn = std::function<void(const GradContext&)>;

/// Single-owner, append-only record of forward operations.
///
/// Nodes are stored in creation order, which is a topological order because an
/// op can only consume handles that already exist. backward() walks the list
/// in reverse exactly once; a second call without reset_grads() is an error.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor value, bool requires_grad = false);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    /// Append an op node. The output requires grad iff any input does; in that
    /// case `backward` is kept, otherwise it is dropped.
    Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward, const char* op_name);

    const Tensor& value(Var v) const;
    bool requires_grad(Var v) const;
    /// Gradient of the last backward() target with respect to `v` (zeros if unreached).
    Vector grad(Var v) const;

    void backward(Var loss);
    bool backward_done() const { return backward_done_; }
    void reset_grads();

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Vector grad;
        bool requires_grad = false;
        std::vector<int> inputs;
        BackwardFn backward;
        std::string op;
    };

    const Node& node(Var v) const;

    std::deque<Node> nodes_;
    bool backward_done_ = false;
};

// Elementwise and reductions.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, Scalar s);
Var add_scalar(Var a, Scalar s);
Var sum(Var a);
Var mean(Var a);
Var relu(Var a);
/// Row sums of a [rows, cols] view -> [rows, 1].
Var sum_rows(Var a);
/// Weighted combination Σ_i w_i·x_i of same-shaped operands with constant weights.
Var weighted_sum(std::span<const Var> xs, std::span<const Scalar> weights);

// Shape manipulation.
Var reshape(Var a, Shape shape);
/// Concatenate [N, k_i] operands along columns.
Var concat_cols(std::span<const Var> parts);
/// Rows [begin, begin+count) of the leading dimension.
Var slice_rows(Var a, Index begin, Index count);
Var transpose(Var a);

// Linear algebra.
Var matmul(Var a, Var b);
/// x [N, in] · wᵀ [in, out] + b [out].
Var linear(Var x, Var w, Var b);

// Convolutional primitives on [N, C, H, W].
struct Conv2dOptions {
    Index stride = 1;
    Index padding = 0;
};
Var conv2d(Var x, Var w, Var b, Conv2dOptions opt = {});
Var avg_pool2(Var x);
Var upsample2(Var x);
/// [N, C, H, W] -> [N, C].
Var global_avg_pool(Var x);

/// Softmax over the last dimension with temperature; rows are stabilized by max subtraction.
Var softmax_rows(Var z, Scalar temperature = 1.0);
/// Per-row cross entropy of logits [N, c] against integer labels -> [N].
Var cross_entropy_rows(Var logits, std::span<const int> labels);
/// Mean squared error against a constant target of the same size.
Var mse(Var a, const Tensor& target);

/// Plain helpers shared by ops and by loss code.
RowMatrix softmax_rows(const Eigen::Ref<const RowMatrix>& z, Scalar temperature = 1.0);
Vector softmax(const Eigen::Ref<const Vector>& z, Scalar temperature = 1.0);

} // namespace gkd

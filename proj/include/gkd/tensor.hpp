#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

namespace gkd {

using Scalar = double;
using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Shape = std::vector<Index>;

Index shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major n-dimensional array of doubles with an optional gradient slot.
///
/// Multi-dimensional data is laid out row-major (last index fastest), so a
/// [N, C, H, W] tensor is the usual NCHW block.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, Vector data);
    Tensor(Shape shape, std::initializer_list<Scalar> values);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor filled(Shape shape, Scalar value);
    static Tensor from_matrix(const RowMatrix& m);
    static Tensor from_vector(const Vector& v);

    const Shape& shape() const { return shape_; }
    Index rank() const { return static_cast<Index>(shape_.size()); }
    Index dim(Index i) const { return shape_.at(static_cast<std::size_t>(i)); }
    Index size() const { return data_.size(); }

    Vector& data() { return data_; }
    const Vector& data() const { return data_; }
    Scalar& operator[](Index i) { return data_[i]; }
    Scalar operator[](Index i) const { return data_[i]; }

    Eigen::Map<RowMatrix> matrix(Index rows, Index cols);
    Eigen::Map<const RowMatrix> matrix(Index rows, Index cols) const;
    /// View as [dim(0), size/dim(0)].
    Eigen::Map<const RowMatrix> rows_view() const;
    Eigen::Map<RowMatrix> rows_view();

    Tensor reshaped(Shape shape) const;

    bool requires_grad() const { return requires_grad_; }
    void set_requires_grad(bool on);
    bool has_grad() const { return grad_.has_value(); }
    Vector& grad();
    const Vector& grad() const;
    void zero_grad();
    void clear_grad() { grad_.reset(); }

    bool all_finite() const { return data_.allFinite(); }
    /// Throws std::domain_error naming `where` if any entry is NaN or Inf.
    void check_finite(const char* where) const;

    /// FNV-1a over the raw bytes of the data (shape included).
    std::uint64_t checksum() const;

private:
    Shape shape_;
    Vector data_;
    std::optional<Vector> grad_;
    bool requires_grad_ = false;
};

/// Keep large tensor buffers on the heap instead of fresh mmaps per allocation
/// (page faults dominate small-batch training otherwise). No-op off glibc.
void tune_allocator();

std::uint64_t fnv1a(const void* bytes, std::size_t n, std::uint64_t seed = 1469598103934665603ULL);

} // namespace gkd

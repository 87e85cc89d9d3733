#include "gkd/tensor.hpp"

#include <sstream>
#include <stdexcept>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace gkd {

Index shape_size(const Shape& shape)
{
    Index n = 1;
    for (Index d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor dims must be positive, got " + shape_string(shape));
        n *= d;
    }
    return n;
}

std::string shape_string(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(Vector::Zero(shape_size(shape_))) {}

Tensor::Tensor(Shape shape, Vector data) : shape_(std::move(shape)), data_(std::move(data))
{
    if (shape_size(shape_) != data_.size())
        throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                                    shape_string(shape_));
}

Tensor::Tensor(Shape shape, std::initializer_list<Scalar> values) : shape_(std::move(shape)), data_(values.size())
{
    Index i = 0;
    for (Scalar v : values) data_[i++] = v;
    if (shape_size(shape_) != data_.size())
        throw std::invalid_argument("tensor initializer length does not match shape " + shape_string(shape_));
}

Tensor Tensor::filled(Shape shape, Scalar value)
{
    Tensor t(std::move(shape));
    t.data_.setConstant(value);
    return t;
}

Tensor Tensor::from_matrix(const RowMatrix& m)
{
    Tensor t({m.rows(), m.cols()});
    t.matrix(m.rows(), m.cols()) = m;
    return t;
}

Tensor Tensor::from_vector(const Vector& v) { return Tensor({v.size()}, v); }

Eigen::Map<RowMatrix> Tensor::matrix(Index rows, Index cols)
{
    if (rows * cols != size()) throw std::invalid_argument("matrix view does not cover tensor " + shape_string(shape_));
    return Eigen::Map<RowMatrix>(data_.data(), rows, cols);
}

Eigen::Map<const RowMatrix> Tensor::matrix(Index rows, Index cols) const
{
    if (rows * cols != size()) throw std::invalid_argument("matrix view does not cover tensor " + shape_string(shape_));
    return Eigen::Map<const RowMatrix>(data_.data(), rows, cols);
}

Eigen::Map<const RowMatrix> Tensor::rows_view() const { return matrix(dim(0), size() / dim(0)); }
Eigen::Map<RowMatrix> Tensor::rows_view() { return matrix(dim(0), size() / dim(0)); }

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

void Tensor::set_requires_grad(bool on)
{
    requires_grad_ = on;
    if (!on) grad_.reset();
}

Vector& Tensor::grad()
{
    if (!grad_) grad_ = Vector::Zero(data_.size());
    return *grad_;
}

const Vector& Tensor::grad() const
{
    if (!grad_) throw std::logic_error("tensor has no gradient");
    return *grad_;
}

void Tensor::zero_grad()
{
    if (grad_) grad_->setZero();
}

void Tensor::check_finite(const char* where) const
{
    if (!all_finite()) throw std::domain_error(std::string("non-finite value produced by ") + where);
}

void tune_allocator()
{
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    mallopt(M_TOP_PAD, 64 << 20);
#endif
}

std::uint64_t fnv1a(const void* bytes, std::size_t n, std::uint64_t seed)
{
    auto* p = static_cast<const unsigned char*>(bytes);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

std::uint64_t Tensor::checksum() const
{
    std::uint64_t h = fnv1a(shape_.data(), shape_.size() * sizeof(Index));
    return fnv1a(data_.data(), static_cast<std::size_t>(data_.size()) * sizeof(Scalar), h);
}

} // namespace gkd

#pragma once

#include "gkd/fft.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace gkd {

/// Frozen Count Sketch hash: bucket h[i] in [0, e) and sign s[i] in {-1, +1}
/// for every input coordinate i.
struct SketchParams {
    std::vector<Index> h;
    std::vector<int> s;
    Index e = 0;

    Index input_length() const { return static_cast<Index>(h.size()); }
    void validate() const;

    static SketchParams draw(Index input_length, Index e, std::mt19937_64& rng);
};

/// out[j] = sum over i with h[i] == j of s[i] * x[i].
template <typename Derived>
Vector count_sketch(const Eigen::MatrixBase<Derived>& x, const SketchParams& p)
{
    if (x.size() != p.input_length())
        throw std::invalid_argument("count_sketch: input length " + std::to_string(x.size()) + " does not match sketch length " +
                                    std::to_string(p.input_length()));
    Vector out = Vector::Zero(p.e);
    for (Index i = 0; i < x.size(); ++i) out[p.h[static_cast<std::size_t>(i)]] += p.s[static_cast<std::size_t>(i)] * x(i);
    return out;
}

/// Tensor Sketch of the outer product x ⊗ y: circular convolution of the two
/// count sketches, evaluated as IFFT(FFT(Ψ(x)) ⊙ FFT(Ψ(y))).
template <typename DerivedX, typename DerivedY>
Vector compact_bilinear(const Eigen::MatrixBase<DerivedX>& x, const Eigen::MatrixBase<DerivedY>& y, const SketchParams& p1,
                        const SketchParams& p2)
{
    if (p1.e != p2.e) throw std::invalid_argument("compact_bilinear: sketch output dimensions differ");
    return circular_convolve_fft(count_sketch(x, p1), count_sketch(y, p2));
}

template <typename Derived>
Vector signed_sqrt(const Eigen::MatrixBase<Derived>& psi)
{
    return psi.unaryExpr([](Scalar v) { return v > 0 ? std::sqrt(v) : (v < 0 ? -std::sqrt(-v) : 0.0); });
}

inline constexpr Scalar kNormEpsilon = 1e-12;

/// z / ||z||; vectors with norm at or below 1e-12 come back unchanged.
template <typename Derived>
Vector l2_normalize(const Eigen::MatrixBase<Derived>& z)
{
    const Scalar n = z.norm();
    if (n <= kNormEpsilon) return z;
    return z / n;
}

struct BilinearVertex {
    Index k = 0;       // 0-based vertex index
    Index first = 0;   // teacher m
    Index second = 0;  // teacher n, first < second
    Vector v;          // unit norm, or all zero
};

/// Sketch hashes for the two operand positions of every pooled pair.
/// With `shared`, both slots carry the same draw.
struct SketchBank {
    SketchParams first;
    SketchParams second;
    bool shared = false;

    static SketchBank draw(Index input_length, Index e, std::uint64_t seed, bool shared);
};

/// Unordered teacher pairs (m < n) in lexicographic order.
std::vector<std::pair<Index, Index>> teacher_pairs(Index n_teachers);

/// One vertex per unordered pair: l2_normalize(signed_sqrt(compact_bilinear(R_m, R_n))).
std::vector<BilinearVertex> build_vertices(std::span<const Vector> features, const SketchBank& bank);

} // namespace gkd

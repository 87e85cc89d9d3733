#pragma once

#include "gkd/autodiff.hpp"

#include <complex>

namespace gkd {

using Spectrum = Eigen::VectorXcd;

/// Real-input DFT, full length-n spectrum. Any n >= 1 (mixed radix, no power-of-two requirement).
Spectrum rfft(const Eigen::Ref<const Vector>& v);
/// Inverse of rfft; the imaginary residue is discarded.
Vector irfft(const Spectrum& spectrum);

/// Circular convolution of two equal-length vectors through the frequency domain.
Vector circular_convolve_fft(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b);

/// The FFT has no backward rule. Reading a tape value through it is only
/// allowed for values that do not carry gradients; anything else throws.
Vector forward_only_value(Var v);

} // namespace gkd

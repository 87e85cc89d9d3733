#include "gkd/fft.hpp"

#include <unsupported/Eigen/FFT>

#include <stdexcept>

namespace gkd {

Spectrum rfft(const Eigen::Ref<const Vector>& v)
{
    if (v.size() < 1) throw std::invalid_argument("rfft of an empty vector");
    if (v.size() == 1) return v.cast<std::complex<Scalar>>();  // kissfft cannot plan length 1
    Eigen::FFT<Scalar> fft;
    Vector in = v;
    Spectrum out;
    fft.fwd(out, in);
    return out;
}

Vector irfft(const Spectrum& spectrum)
{
    if (spectrum.size() < 1) throw std::invalid_argument("irfft of an empty spectrum");
    if (spectrum.size() == 1) return spectrum.real();
    Eigen::FFT<Scalar> fft;
    Spectrum time;
    Spectrum in = spectrum;
    fft.inv(time, in);
    return time.real();
}

Vector circular_convolve_fft(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b)
{
    if (a.size() != b.size()) throw std::invalid_argument("circular convolution of vectors with different lengths");
    const Spectrum fa = rfft(a);
    const Spectrum fb = rfft(b);
    return irfft(fa.cwiseProduct(fb));
}

Vector forward_only_value(Var v)
{
    if (v.requires_grad())
        throw std::logic_error("FFT path is forward-only; detach the operand (it must not require gradients)");
    return v.value().data();
}

} // namespace gkd

#include "cante/dsp.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <numbers>
#include <vector>

#include "cante/error.hpp"

namespace cante::dsp {

Eigen::VectorXd hann(Eigen::Index n) {
  Eigen::VectorXd w(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / n);
  }
  return w;
}

Eigen::Index next_pow2(Eigen::Index n) {
  Eigen::Index p = 1;
  while (p < n) p <<= 1;
  return p;
}

struct RealFft::Impl {
  Eigen::FFT<double> fft;
  std::vector<double> in;
  std::vector<std::complex<double>> out;
};

RealFft::RealFft(Eigen::Index size) : size_(size), impl_(std::make_unique<Impl>()) {
  if (size < 2) throw ArgumentError("FFT size must be at least 2");
  impl_->fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  impl_->in.resize(static_cast<std::size_t>(size));
}

RealFft::~RealFft() = default;
RealFft::RealFft(RealFft&&) noexcept = default;
RealFft& RealFft::operator=(RealFft&&) noexcept = default;

Eigen::VectorXcd RealFft::forward(const Eigen::Ref<const Eigen::VectorXd>& frame) {
  if (frame.size() > size_) throw ArgumentError("frame longer than FFT size");
  std::fill(impl_->in.begin(), impl_->in.end(), 0.0);
  for (Eigen::Index i = 0; i < frame.size(); ++i) impl_->in[static_cast<std::size_t>(i)] = frame[i];
  impl_->fft.fwd(impl_->out, impl_->in);
  Eigen::VectorXcd result(bins());
  for (Eigen::Index k = 0; k < bins(); ++k) result[k] = impl_->out[static_cast<std::size_t>(k)];
  return result;
}

}  // namespace cante::dsp

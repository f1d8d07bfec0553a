#pragma once

#include <Eigen/Core>

#include <complex>
#include <memory>

namespace cante::dsp {

/// Periodic Hann window of length n.
Eigen::VectorXd hann(Eigen::Index n);

Eigen::Index next_pow2(Eigen::Index n);

/// One-sided real FFT of a fixed size (n/2 + 1 bins). Not thread-safe; use
/// one instance per thread.
class RealFft {
 public:
  explicit RealFft(Eigen::Index size);
  ~RealFft();
  RealFft(RealFft&&) noexcept;
  RealFft& operator=(RealFft&&) noexcept;

  Eigen::Index size() const { return size_; }
  Eigen::Index bins() const { return size_ / 2 + 1; }

  /// `frame` shorter than size() is zero-padded.
  Eigen::VectorXcd forward(const Eigen::Ref<const Eigen::VectorXd>& frame);

 private:
  struct Impl;
  Eigen::Index size_;
  std::unique_ptr<Impl> impl_;
};

}  // namespace cante::dsp

#pragma once

#include <cmath>
#include <vector>

#include "cante/nn/autograd.hpp"

namespace cante::nn {

struct AdamParams {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Scalar>
class Adam {
 public:
  Adam(std::vector<Var<Scalar>> params, AdamParams hp = {}) : params_(std::move(params)), hp_(hp) {
    for (const auto& p : params_) {
      m_.push_back(Tensor<Scalar>::zeros(p.shape()));
      v_.push_back(Tensor<Scalar>::zeros(p.shape()));
    }
  }

  /// One bias-corrected update. Parameters without a gradient see a zero one.
  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(hp_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(hp_.beta2, static_cast<double>(t_));
    const Scalar b1 = static_cast<Scalar>(hp_.beta1), b2 = static_cast<Scalar>(hp_.beta2);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Var<Scalar>& p = params_[i];
      auto& m = m_[i].array();
      auto& v = v_[i].array();
      if (p.grad().size() == p.value().size()) {
        const auto& g = p.grad().array();
        m = b1 * m + (Scalar(1) - b1) * g;
        v = b2 * v + (Scalar(1) - b2) * g.square();
      } else {
        m *= b1;
        v *= b2;
      }
      const Scalar lr = static_cast<Scalar>(hp_.lr);
      const Scalar eps = static_cast<Scalar>(hp_.eps);
      p.mutable_value().array() -=
          lr * (m / static_cast<Scalar>(c1)) / ((v / static_cast<Scalar>(c2)).sqrt() + eps);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  long steps() const { return t_; }
  const AdamParams& params() const { return hp_; }

 private:
  std::vector<Var<Scalar>> params_;
  AdamParams hp_;
  std::vector<Tensor<Scalar>> m_, v_;
  long t_ = 0;
};

}  // namespace cante::nn

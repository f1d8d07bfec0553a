#pragma once

#include <Eigen/QR>

#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "cante/nn/ops.hpp"
#include "cante/random.hpp"

namespace cante::nn {

// Initialisers.

template <typename Scalar>
Tensor<Scalar> uniform_init(Shape shape, double bound, Rng& rng) {
  Tensor<Scalar> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(rng.uniform(-bound, bound));
  return t;
}

/// He-uniform: U(-b, b) with b = sqrt(6 / fan_in).
template <typename Scalar>
Tensor<Scalar> he_uniform(Shape shape, Index fan_in, Rng& rng) {
  return uniform_init<Scalar>(std::move(shape), std::sqrt(6.0 / static_cast<double>(fan_in)), rng);
}

template <typename Scalar>
Tensor<Scalar> xavier_uniform(Shape shape, Index fan_in, Index fan_out, Rng& rng) {
  return uniform_init<Scalar>(std::move(shape),
                              std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)), rng);
}

/// Random orthogonal n x n matrix (QR of a Gaussian matrix, sign-corrected).
inline Eigen::MatrixXd orthogonal_matrix(Index n, Rng& rng) {
  Eigen::MatrixXd a(n, n);
  for (Index i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ();
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Index j = 0; j < n; ++j) {
    if (r(j, j) < 0) q.col(j) *= -1.0;
  }
  return q;
}

/// Recurrent weight [H, blocks * H] made of independent orthogonal blocks.
template <typename Scalar>
Tensor<Scalar> orthogonal_blocks(Index hidden, Index blocks, Rng& rng) {
  Tensor<Scalar> t({hidden, blocks * hidden});
  auto m = t.matrix(hidden, blocks * hidden);
  for (Index b = 0; b < blocks; ++b) {
    m.middleCols(b * hidden, hidden) = orthogonal_matrix(hidden, rng).cast<Scalar>();
  }
  return t;
}

/// Owner of named parameters, buffers and child modules.
template <typename Scalar>
class Module {
 public:
  using NamedVar = std::pair<std::string, Var<Scalar>>;
  using NamedBuffer = std::pair<std::string, Tensor<Scalar>*>;

  Module() = default;
  virtual ~Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;

  void set_training(bool on) {
    training_ = on;
    for (auto& child : children_) child.second->set_training(on);
  }
  bool training() const { return training_; }

  std::vector<NamedVar> named_parameters() const {
    std::vector<NamedVar> out(params_);
    for (const auto& [name, child] : children_) {
      for (auto& [n, v] : child->named_parameters()) out.emplace_back(name + "." + n, v);
    }
    return out;
  }

  std::vector<NamedBuffer> named_buffers() const {
    std::vector<NamedBuffer> out;
    for (const auto& [name, buf] : buffers_) out.emplace_back(name, buf.get());
    for (const auto& [name, child] : children_) {
      for (auto& [n, b] : child->named_buffers()) out.emplace_back(name + "." + n, b);
    }
    return out;
  }

  std::vector<Var<Scalar>> parameters() const {
    std::vector<Var<Scalar>> out;
    for (auto& nv : named_parameters()) out.push_back(nv.second);
    return out;
  }

  Index parameter_count() const {
    Index n = 0;
    for (const auto& v : parameters()) n += v.value().size();
    return n;
  }

  void zero_grad() {
    for (auto& v : parameters()) v.zero_grad();
  }

 protected:
  Var<Scalar> register_parameter(std::string name, Tensor<Scalar> init) {
    params_.emplace_back(std::move(name), Var<Scalar>::leaf(std::move(init), true));
    return params_.back().second;
  }

  Tensor<Scalar>* register_buffer(std::string name, Tensor<Scalar> init) {
    buffers_.emplace_back(std::move(name), std::make_unique<Tensor<Scalar>>(std::move(init)));
    return buffers_.back().second.get();
  }

  template <typename M>
  M* register_module(std::string name, std::unique_ptr<M> module) {
    M* raw = module.get();
    children_.emplace_back(std::move(name), std::move(module));
    return raw;
  }

 private:
  bool training_ = true;
  std::vector<NamedVar> params_;
  std::vector<std::pair<std::string, std::unique_ptr<Tensor<Scalar>>>> buffers_;
  std::vector<std::pair<std::string, std::unique_ptr<Module>>> children_;
};

template <typename Scalar>
class Linear : public Module<Scalar> {
 public:
  Linear(Index in, Index out, Rng& rng) {
    weight = this->register_parameter("weight", he_uniform<Scalar>({in, out}, in, rng));
    bias = this->register_parameter("bias", Tensor<Scalar>({out}));
  }
  Var<Scalar> operator()(const Var<Scalar>& x) const { return linear(x, weight, bias); }

  Var<Scalar> weight, bias;
};

template <typename Scalar>
class Conv2d : public Module<Scalar> {
 public:
  Conv2d(Index in, Index out, Index kernel, Index stride, Index pad, bool with_bias, Rng& rng)
      : geometry{kernel, kernel, stride, stride, pad, pad} {
    const Index fan_in = in * kernel * kernel;
    weight = this->register_parameter("weight",
                                      he_uniform<Scalar>({out, in, kernel, kernel}, fan_in, rng));
    if (with_bias) bias = this->register_parameter("bias", Tensor<Scalar>({out}));
  }
  Var<Scalar> operator()(const Var<Scalar>& x) const { return conv2d(x, weight, bias, geometry); }

  Conv2dGeometry geometry;
  Var<Scalar> weight, bias;
};

template <typename Scalar>
class BatchNorm2d : public Module<Scalar> {
 public:
  explicit BatchNorm2d(Index channels) {
    gamma = this->register_parameter("weight", Tensor<Scalar>::constant({channels}, Scalar(1)));
    beta = this->register_parameter("bias", Tensor<Scalar>({channels}));
    running_mean = this->register_buffer("running_mean", Tensor<Scalar>({channels}));
    running_var =
        this->register_buffer("running_var", Tensor<Scalar>::constant({channels}, Scalar(1)));
  }
  Var<Scalar> operator()(const Var<Scalar>& x) const {
    return batch_norm2d(x, gamma, beta, *running_mean, *running_var, this->training());
  }

  Var<Scalar> gamma, beta;
  Tensor<Scalar>* running_mean = nullptr;
  Tensor<Scalar>* running_var = nullptr;
};

/// Projects every step of a sequence [T, N, D] at once: returns [T*N, K].
template <typename Scalar>
Var<Scalar> project_steps(const Var<Scalar>& seq, const Var<Scalar>& w, const Var<Scalar>& b) {
  detail::require_rank(seq, 3, "project_steps");
  return linear(reshape(seq, Shape{seq.dim(0) * seq.dim(1), seq.dim(2)}), w, b);
}

/// Single-layer GRU with reset gate applied after the hidden projection.
template <typename Scalar>
class GRULayer : public Module<Scalar> {
 public:
  GRULayer(Index input, Index hidden, Rng& rng) : hidden_(hidden) {
    w_ih = this->register_parameter("w_ih",
                                    xavier_uniform<Scalar>({input, 3 * hidden}, input, hidden, rng));
    w_hh = this->register_parameter("w_hh", orthogonal_blocks<Scalar>(hidden, 3, rng));
    b_ih = this->register_parameter("b_ih", Tensor<Scalar>({3 * hidden}));
    b_hh = this->register_parameter("b_hh", Tensor<Scalar>({3 * hidden}));
  }

  /// Hidden state for each step of seq [T, N, D].
  std::vector<Var<Scalar>> operator()(const Var<Scalar>& seq) const {
    const Index t_len = seq.dim(0), n = seq.dim(1), h = hidden_;
    Var<Scalar> gx = project_steps(seq, w_ih, b_ih);
    Var<Scalar> state = Var<Scalar>::leaf(Tensor<Scalar>({n, h}));
    std::vector<Var<Scalar>> out;
    out.reserve(static_cast<std::size_t>(t_len));
    for (Index t = 0; t < t_len; ++t) {
      Var<Scalar> x = slice_rows(gx, t * n, n);
      Var<Scalar> g = linear(state, w_hh, b_hh);
      Var<Scalar> r = sigmoid(add(slice_cols(x, 0, h), slice_cols(g, 0, h)));
      Var<Scalar> z = sigmoid(add(slice_cols(x, h, h), slice_cols(g, h, h)));
      Var<Scalar> cand = tanh(add(slice_cols(x, 2 * h, h), mul(r, slice_cols(g, 2 * h, h))));
      state = add(cand, mul(z, sub(state, cand)));
      out.push_back(state);
    }
    return out;
  }

  Index hidden() const { return hidden_; }
  Var<Scalar> w_ih, w_hh, b_ih, b_hh;

 private:
  Index hidden_;
};

/// Stacked GRU; returns the top layer's hidden state for every step.
template <typename Scalar>
class GRU : public Module<Scalar> {
 public:
  GRU(Index input, Index hidden, int layers, Rng& rng) {
    if (layers < 1) throw ConfigError("GRU needs at least one layer");
    for (int l = 0; l < layers; ++l) {
      layers_.push_back(this->register_module(
          "layer" + std::to_string(l),
          std::make_unique<GRULayer<Scalar>>(l == 0 ? input : hidden, hidden, rng)));
    }
  }

  std::vector<Var<Scalar>> operator()(const Var<Scalar>& seq) const {
    std::vector<Var<Scalar>> states = (*layers_[0])(seq);
    for (std::size_t l = 1; l < layers_.size(); ++l) states = (*layers_[l])(stack_steps(states));
    return states;
  }

 private:
  std::vector<GRULayer<Scalar>*> layers_;
};

/// Single-direction LSTM with gate order input, forget, cell, output.
template <typename Scalar>
class LSTM : public Module<Scalar> {
 public:
  LSTM(Index input, Index hidden, Rng& rng) : hidden_(hidden) {
    w_ih = this->register_parameter("w_ih",
                                    xavier_uniform<Scalar>({input, 4 * hidden}, input, hidden, rng));
    w_hh = this->register_parameter("w_hh", orthogonal_blocks<Scalar>(hidden, 4, rng));
    Tensor<Scalar> b({4 * hidden});
    b.array().segment(hidden, hidden).setConstant(Scalar(1));
    bias = this->register_parameter("bias", std::move(b));
  }

  /// Hidden state for each step of seq [T, N, D], indexed by time. When
  /// `reverse` is set the sequence is consumed from the last step backwards.
  std::vector<Var<Scalar>> operator()(const Var<Scalar>& seq, bool reverse = false) const {
    const Index t_len = seq.dim(0), n = seq.dim(1), h = hidden_;
    Var<Scalar> gx = project_steps(seq, w_ih, bias);
    Var<Scalar> state, cell;
    std::vector<Var<Scalar>> out(static_cast<std::size_t>(t_len));
    for (Index k = 0; k < t_len; ++k) {
      const Index t = reverse ? t_len - 1 - k : k;
      Var<Scalar> gates = slice_rows(gx, t * n, n);
      if (state.defined()) gates = add(gates, matmul(state, w_hh));
      Var<Scalar> i = sigmoid(slice_cols(gates, 0, h));
      Var<Scalar> f = sigmoid(slice_cols(gates, h, h));
      Var<Scalar> g = tanh(slice_cols(gates, 2 * h, h));
      Var<Scalar> o = sigmoid(slice_cols(gates, 3 * h, h));
      cell = cell.defined() ? add(mul(f, cell), mul(i, g)) : mul(i, g);
      state = mul(o, tanh(cell));
      out[static_cast<std::size_t>(t)] = state;
    }
    return out;
  }

  Index hidden() const { return hidden_; }
  Var<Scalar> w_ih, w_hh, bias;

 private:
  Index hidden_;
};

template <typename Scalar>
struct BLSTMOutput {
  std::vector<Var<Scalar>> steps;  // [N, 2H] per time step
  Var<Scalar> final;               // forward final state ++ backward final state
};

template <typename Scalar>
class BLSTM : public Module<Scalar> {
 public:
  BLSTM(Index input, Index hidden, Rng& rng) {
    forward = this->register_module("forward", std::make_unique<LSTM<Scalar>>(input, hidden, rng));
    backward = this->register_module("backward", std::make_unique<LSTM<Scalar>>(input, hidden, rng));
  }

  BLSTMOutput<Scalar> operator()(const Var<Scalar>& seq) const {
    std::vector<Var<Scalar>> f = (*forward)(seq, false);
    std::vector<Var<Scalar>> b = (*backward)(seq, true);
    BLSTMOutput<Scalar> out;
    for (std::size_t t = 0; t < f.size(); ++t) out.steps.push_back(concat_cols<Scalar>({f[t], b[t]}));
    out.final = concat_cols<Scalar>({f.back(), b.front()});
    return out;
  }

  LSTM<Scalar>* forward = nullptr;
  LSTM<Scalar>* backward = nullptr;
};

}  // namespace cante::nn

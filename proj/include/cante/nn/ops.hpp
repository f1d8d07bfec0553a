#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "cante/nn/autograd.hpp"
#include "cante/random.hpp"

namespace cante::nn {

namespace detail {

template <typename Scalar>
void require_same_shape(const Var<Scalar>& a, const Var<Scalar>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()) + " differ");
  }
}

template <typename Scalar>
void require_rank(const Var<Scalar>& a, int rank, const char* op) {
  if (a.value().ndim() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(a.shape()));
  }
}

inline Index pooled_size(Index in, Index k, Index stride, Index pad) {
  return (in + 2 * pad - k) / stride + 1;
}

}  // namespace detail

// Elementwise arithmetic.

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape(a, b, "add");
  Tensor<Scalar> out(a.shape(), a.value().array() + b.value().array());
  return make_op<Scalar>(std::move(out), {a, b}, [](Node<Scalar>& self) {
    accumulate(self, 0, self.grad.array());
    accumulate(self, 1, self.grad.array());
  });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor<Scalar> out(a.shape(), a.value().array() - b.value().array());
  return make_op<Scalar>(std::move(out), {a, b}, [](Node<Scalar>& self) {
    accumulate(self, 0, self.grad.array());
    accumulate(self, 1, -self.grad.array());
  });
}

template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor<Scalar> out(a.shape(), a.value().array() * b.value().array());
  return make_op<Scalar>(std::move(out), {a, b}, [](Node<Scalar>& self) {
    accumulate(self, 0, self.grad.array() * self.parents[1]->value.array());
    accumulate(self, 1, self.grad.array() * self.parents[0]->value.array());
  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar s) {
  Tensor<Scalar> out(a.shape(), a.value().array() * s);
  return make_op<Scalar>(std::move(out), {a},
                         [s](Node<Scalar>& self) { accumulate(self, 0, self.grad.array() * s); });
}

/// Adds b[c] along axis 1 of x with shape [N, C, ...].
template <typename Scalar>
Var<Scalar> add_channel_bias(const Var<Scalar>& x, const Var<Scalar>& b) {
  const Index n = x.dim(0), c = x.dim(1);
  if (b.value().size() != c) throw ShapeError("add_channel_bias: bias length mismatch");
  const Index inner = x.value().size() / (n * c);
  Tensor<Scalar> out = x.value();
  MatrixMap<Scalar> o = out.matrix(n * c, inner);
  for (Index i = 0; i < n * c; ++i) o.row(i).array() += b.value()[i % c];
  return make_op<Scalar>(std::move(out), {x, b}, [n, c, inner](Node<Scalar>& self) {
    accumulate(self, 0, self.grad.array());
    if (wants_grad(self, 1)) {
      ConstMatrixMap<Scalar> g = self.grad.cmatrix(n * c, inner);
      Eigen::Array<Scalar, Eigen::Dynamic, 1> db = Eigen::Array<Scalar, Eigen::Dynamic, 1>::Zero(c);
      for (Index i = 0; i < n * c; ++i) db[i % c] += g.row(i).sum();
      accumulate(self, 1, db);
    }
  });
}

// Activations.

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& x) {
  Tensor<Scalar> out(x.shape(), x.value().array().max(Scalar(0)));
  return make_op<Scalar>(std::move(out), {x}, [](Node<Scalar>& self) {
    accumulate(self, 0,
               (self.parents[0]->value.array() > Scalar(0)).select(self.grad.array(), Scalar(0)));
  });
}

template <typename Scalar>
Var<Scalar> elu(const Var<Scalar>& x, Scalar alpha = Scalar(1)) {
  const auto& v = x.value().array();
  Tensor<Scalar> out(x.shape(), (v > Scalar(0)).select(v, alpha * (v.exp() - Scalar(1))));
  return make_op<Scalar>(std::move(out), {x}, [alpha](Node<Scalar>& self) {
    const auto& in = self.parents[0]->value.array();
    const auto& y = self.value.array();
    accumulate(self, 0, self.grad.array() * (in > Scalar(0)).select(Scalar(1), y + alpha));
  });
}

template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& x) {
  Tensor<Scalar> out(x.shape(), Scalar(1) / (Scalar(1) + (-x.value().array()).exp()));
  return make_op<Scalar>(std::move(out), {x}, [](Node<Scalar>& self) {
    const auto& y = self.value.array();
    accumulate(self, 0, self.grad.array() * y * (Scalar(1) - y));
  });
}

template <typename Scalar>
Var<Scalar> tanh(const Var<Scalar>& x) {
  Tensor<Scalar> out(x.shape(), x.value().array().tanh());
  return make_op<Scalar>(std::move(out), {x}, [](Node<Scalar>& self) {
    const auto& y = self.value.array();
    accumulate(self, 0, self.grad.array() * (Scalar(1) - y.square()));
  });
}

// Linear algebra.

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw ShapeError("matmul: inner dimensions differ");
  Tensor<Scalar> out({m, n});
  out.matrix(m, n).noalias() = a.value().matrix(m, k) * b.value().matrix(k, n);
  return make_op<Scalar>(std::move(out), {a, b}, [m, k, n](Node<Scalar>& self) {
    ConstMatrixMap<Scalar> g = self.grad.cmatrix(m, n);
    if (wants_grad(self, 0)) {
      self.parents[0]->ensure_grad().matrix(m, k).noalias() +=
          g * self.parents[1]->value.matrix(k, n).transpose();
    }
    if (wants_grad(self, 1)) {
      self.parents[1]->ensure_grad().matrix(k, n).noalias() +=
          self.parents[0]->value.matrix(m, k).transpose() * g;
    }
  });
}

/// y = x W + b with x [N, D], W [D, H], b [H].
template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& w, const Var<Scalar>& b) {
  detail::require_rank(x, 2, "linear");
  const Index n = x.dim(0), d = x.dim(1), h = w.dim(1);
  if (w.dim(0) != d || b.value().size() != h) throw ShapeError("linear: weight shape mismatch");
  Tensor<Scalar> out({n, h});
  auto o = out.matrix(n, h);
  o.noalias() = x.value().matrix(n, d) * w.value().matrix(d, h);
  o.rowwise() += b.value().matrix(1, h).row(0);
  return make_op<Scalar>(std::move(out), {x, w, b}, [n, d, h](Node<Scalar>& self) {
    ConstMatrixMap<Scalar> g = self.grad.cmatrix(n, h);
    if (wants_grad(self, 0)) {
      self.parents[0]->ensure_grad().matrix(n, d).noalias() +=
          g * self.parents[1]->value.matrix(d, h).transpose();
    }
    if (wants_grad(self, 1)) {
      self.parents[1]->ensure_grad().matrix(d, h).noalias() +=
          self.parents[0]->value.matrix(n, d).transpose() * g;
    }
    if (wants_grad(self, 2)) {
      self.parents[2]->ensure_grad().matrix(1, h).row(0) += g.colwise().sum();
    }
  });
}

// Convolution and pooling on [N, C, H, W].

struct Conv2dGeometry {
  Index kernel_h = 3, kernel_w = 3;
  Index stride_h = 1, stride_w = 1;
  Index pad_h = 0, pad_w = 0;
};

namespace detail {

template <typename Scalar>
void im2col(const Scalar* x, Index c, Index h, Index w, const Conv2dGeometry& g, Index oh, Index ow,
            Scalar* cols) {
  for (Index ci = 0; ci < c; ++ci) {
    for (Index ki = 0; ki < g.kernel_h; ++ki) {
      for (Index kj = 0; kj < g.kernel_w; ++kj) {
        Scalar* row = cols + ((ci * g.kernel_h + ki) * g.kernel_w + kj) * oh * ow;
        for (Index y = 0; y < oh; ++y) {
          const Index iy = y * g.stride_h - g.pad_h + ki;
          Scalar* dst = row + y * ow;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + ow, Scalar(0));
            continue;
          }
          const Scalar* src = x + (ci * h + iy) * w;
          if (g.stride_w == 1) {
            // Valid outputs form one contiguous run when the stride is 1.
            const Index shift = kj - g.pad_w;
            const Index lo = std::clamp<Index>(-shift, 0, ow);
            const Index hi = std::clamp<Index>(w - shift, lo, ow);
            std::fill(dst, dst + lo, Scalar(0));
            std::copy(src + lo + shift, src + hi + shift, dst + lo);
            std::fill(dst + hi, dst + ow, Scalar(0));
            continue;
          }
          for (Index xo = 0; xo < ow; ++xo) {
            const Index ix = xo * g.stride_w - g.pad_w + kj;
            dst[xo] = (ix >= 0 && ix < w) ? src[ix] : Scalar(0);
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im(const Scalar* cols, Index c, Index h, Index w, const Conv2dGeometry& g, Index oh,
            Index ow, Scalar* dx) {
  for (Index ci = 0; ci < c; ++ci) {
    for (Index ki = 0; ki < g.kernel_h; ++ki) {
      for (Index kj = 0; kj < g.kernel_w; ++kj) {
        const Scalar* row = cols + ((ci * g.kernel_h + ki) * g.kernel_w + kj) * oh * ow;
        for (Index y = 0; y < oh; ++y) {
          const Index iy = y * g.stride_h - g.pad_h + ki;
          if (iy < 0 || iy >= h) continue;
          Scalar* dst = dx + (ci * h + iy) * w;
          const Scalar* src = row + y * ow;
          if (g.stride_w == 1) {
            const Index shift = kj - g.pad_w;
            const Index lo = std::clamp<Index>(-shift, 0, ow);
            const Index hi = std::clamp<Index>(w - shift, lo, ow);
            for (Index xo = lo; xo < hi; ++xo) dst[xo + shift] += src[xo];
            continue;
          }
          for (Index xo = 0; xo < ow; ++xo) {
            const Index ix = xo * g.stride_w - g.pad_w + kj;
            if (ix >= 0 && ix < w) dst[ix] += src[xo];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 2-D cross-correlation. x [N, C, H, W], weight [F, C, kh, kw], bias [F] or undefined.
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias,
                   const Conv2dGeometry& geo) {
  detail::require_rank(x, 4, "conv2d");
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index f = weight.dim(0);
  if (weight.dim(1) != c || weight.dim(2) != geo.kernel_h || weight.dim(3) != geo.kernel_w) {
    throw ShapeError("conv2d: weight " + shape_string(weight.shape()) + " does not fit input " +
                     shape_string(x.shape()));
  }
  const Index oh = detail::pooled_size(h, geo.kernel_h, geo.stride_h, geo.pad_h);
  const Index ow = detail::pooled_size(w, geo.kernel_w, geo.stride_w, geo.pad_w);
  if (oh <= 0 || ow <= 0) throw ShapeError("conv2d: input too small for kernel");
  const Index ckk = c * geo.kernel_h * geo.kernel_w;
  const Index plane = oh * ow;

  Tensor<Scalar> out({n, f, oh, ow});
  RowMatrix<Scalar> cols(ckk, plane);
  ConstMatrixMap<Scalar> wm = weight.value().cmatrix(f, ckk);
  for (Index s = 0; s < n; ++s) {
    detail::im2col(x.value().data() + s * c * h * w, c, h, w, geo, oh, ow, cols.data());
    MatrixMap<Scalar> o(out.data() + s * f * plane, f, plane);
    o.noalias() = wm * cols;
    if (bias.defined()) o.colwise() += bias.value().matrix(f, 1).col(0);
  }

  std::vector<Var<Scalar>> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  return make_op<Scalar>(std::move(out), std::move(parents), [=](Node<Scalar>& self) {
    const Tensor<Scalar>& xin = self.parents[0]->value;
    ConstMatrixMap<Scalar> wmat = self.parents[1]->value.cmatrix(f, ckk);
    const bool gx = wants_grad(self, 0), gw = wants_grad(self, 1);
    const bool gb = self.parents.size() > 2 && wants_grad(self, 2);
    RowMatrix<Scalar> buf(ckk, plane);
    for (Index s = 0; s < n; ++s) {
      ConstMatrixMap<Scalar> g(self.grad.data() + s * f * plane, f, plane);
      if (gw) {
        detail::im2col(xin.data() + s * c * h * w, c, h, w, geo, oh, ow, buf.data());
        self.parents[1]->ensure_grad().matrix(f, ckk).noalias() += g * buf.transpose();
      }
      if (gb) self.parents[2]->ensure_grad().matrix(f, 1).col(0) += g.rowwise().sum();
      if (gx) {
        buf.noalias() = wmat.transpose() * g;
        detail::col2im(buf.data(), c, h, w, geo, oh, ow,
                       self.parents[0]->ensure_grad().data() + s * c * h * w);
      }
    }
  });
}

/// Max pooling; padded cells never win and ties resolve to the first cell in scan order.
template <typename Scalar>
Var<Scalar> max_pool2d(const Var<Scalar>& x, Index kernel, Index stride, Index pad = 0) {
  detail::require_rank(x, 4, "max_pool2d");
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index oh = detail::pooled_size(h, kernel, stride, pad);
  const Index ow = detail::pooled_size(w, kernel, stride, pad);
  if (oh <= 0 || ow <= 0) throw ShapeError("max_pool2d: input too small for kernel");
  Tensor<Scalar> out({n, c, oh, ow});
  std::vector<Index> argmax(static_cast<std::size_t>(out.size()));
  const Scalar* in = x.value().data();
  Index o = 0;
  for (Index p = 0; p < n * c; ++p) {
    const Scalar* plane = in + p * h * w;
    for (Index y = 0; y < oh; ++y) {
      for (Index xo = 0; xo < ow; ++xo, ++o) {
        Scalar best = -std::numeric_limits<Scalar>::infinity();
        Index best_i = -1;
        for (Index ki = 0; ki < kernel; ++ki) {
          const Index iy = y * stride - pad + ki;
          if (iy < 0 || iy >= h) continue;
          for (Index kj = 0; kj < kernel; ++kj) {
            const Index ix = xo * stride - pad + kj;
            if (ix < 0 || ix >= w) continue;
            const Scalar v = plane[iy * w + ix];
            if (best_i < 0 || v > best) {
              best = v;
              best_i = p * h * w + iy * w + ix;
            }
          }
        }
        out[o] = best;
        argmax[static_cast<std::size_t>(o)] = best_i;
      }
    }
  }
  return make_op<Scalar>(std::move(out), {x}, [argmax = std::move(argmax)](Node<Scalar>& self) {
    if (!wants_grad(self, 0)) return;
    Tensor<Scalar>& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += self.grad[static_cast<Index>(i)];
  });
}

/// Mean over all spatial positions: [N, C, H, W] to [N, C].
template <typename Scalar>
Var<Scalar> global_avg_pool(const Var<Scalar>& x) {
  detail::require_rank(x, 4, "global_avg_pool");
  const Index n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<Scalar> out({n, c});
  out.matrix(n * c, 1).col(0) = x.value().matrix(n * c, hw).rowwise().mean();
  return make_op<Scalar>(std::move(out), {x}, [n, c, hw](Node<Scalar>& self) {
    if (!wants_grad(self, 0)) return;
    auto g = self.parents[0]->ensure_grad().matrix(n * c, hw);
    g.colwise() += self.grad.matrix(n * c, 1).col(0) / Scalar(hw);
  });
}

// Normalisation and regularisation.

struct BatchNormState {
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Batch normalisation over [N, C, H, W] per channel. In training mode the
/// batch statistics are used and running estimates are updated in place.
template <typename Scalar>
Var<Scalar> batch_norm2d(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                         Tensor<Scalar>& running_mean, Tensor<Scalar>& running_var, bool training,
                         const BatchNormState& cfg = {}) {
  detail::require_rank(x, 4, "batch_norm2d");
  const Index n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (gamma.value().size() != c || beta.value().size() != c) {
    throw ShapeError("batch_norm2d: parameter length mismatch");
  }
  const Scalar eps = static_cast<Scalar>(cfg.eps);
  using Vec = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  Vec mean(c), inv_std(c);
  if (training) {
    if (n < 2) throw ShapeError("batch_norm2d: training needs a batch of at least 2");
    const Index m = n * hw;
    Vec var(c);
    for (Index ch = 0; ch < c; ++ch) {
      Scalar s = 0;
      for (Index s_i = 0; s_i < n; ++s_i) s += x.value().matrix(n * c, hw).row(s_i * c + ch).sum();
      mean[ch] = s / Scalar(m);
      Scalar q = 0;
      for (Index s_i = 0; s_i < n; ++s_i) {
        q += (x.value().matrix(n * c, hw).row(s_i * c + ch).array() - mean[ch]).square().sum();
      }
      var[ch] = q / Scalar(m);
    }
    inv_std = (var + eps).rsqrt();
    const Scalar mom = static_cast<Scalar>(cfg.momentum);
    running_mean.array() = (Scalar(1) - mom) * running_mean.array() + mom * mean;
    running_var.array() =
        (Scalar(1) - mom) * running_var.array() + mom * var * (Scalar(m) / Scalar(m - 1));
  } else {
    mean = running_mean.array();
    inv_std = (running_var.array() + eps).rsqrt();
  }

  Tensor<Scalar> xhat(x.shape());
  Tensor<Scalar> out(x.shape());
  {
    ConstMatrixMap<Scalar> xi = x.value().cmatrix(n * c, hw);
    auto xh = xhat.matrix(n * c, hw);
    auto o = out.matrix(n * c, hw);
    for (Index r = 0; r < n * c; ++r) {
      const Index ch = r % c;
      xh.row(r).array() = (xi.row(r).array() - mean[ch]) * inv_std[ch];
      o.row(r).array() = xh.row(r).array() * gamma.value()[ch] + beta.value()[ch];
    }
  }
  return make_op<Scalar>(
      std::move(out), {x, gamma, beta},
      [n, c, hw, training, inv_std, xhat = std::move(xhat)](Node<Scalar>& self) {
        ConstMatrixMap<Scalar> g = self.grad.cmatrix(n * c, hw);
        ConstMatrixMap<Scalar> xh = xhat.cmatrix(n * c, hw);
        Vec sum_g = Vec::Zero(c), sum_gx = Vec::Zero(c);
        for (Index r = 0; r < n * c; ++r) {
          sum_g[r % c] += g.row(r).sum();
          sum_gx[r % c] += (g.row(r).array() * xh.row(r).array()).sum();
        }
        if (wants_grad(self, 1)) accumulate(self, 1, sum_gx);
        if (wants_grad(self, 2)) accumulate(self, 2, sum_g);
        if (!wants_grad(self, 0)) return;
        const auto& gamma_v = self.parents[1]->value;
        auto dx = self.parents[0]->ensure_grad().matrix(n * c, hw);
        const Scalar m = Scalar(n * hw);
        for (Index r = 0; r < n * c; ++r) {
          const Index ch = r % c;
          const Scalar k = gamma_v[ch] * inv_std[ch];
          if (training) {
            dx.row(r).array() += k * (g.row(r).array() - sum_g[ch] / m -
                                      xh.row(r).array() * (sum_gx[ch] / m));
          } else {
            dx.row(r).array() += k * g.row(r).array();
          }
        }
      });
}

/// Inverted dropout; identity outside training.
template <typename Scalar>
Var<Scalar> dropout(const Var<Scalar>& x, double p, Rng& rng, bool training) {
  if (p < 0.0 || p >= 1.0) throw ArgumentError("dropout probability must lie in [0, 1)");
  if (!training || p == 0.0) return x;
  const Scalar keep_scale = static_cast<Scalar>(1.0 / (1.0 - p));
  Eigen::Array<Scalar, Eigen::Dynamic, 1> mask(x.value().size());
  for (Index i = 0; i < mask.size(); ++i) mask[i] = rng.bernoulli(1.0 - p) ? keep_scale : Scalar(0);
  Tensor<Scalar> out(x.shape(), x.value().array() * mask);
  return make_op<Scalar>(std::move(out), {x}, [mask = std::move(mask)](Node<Scalar>& self) {
    accumulate(self, 0, self.grad.array() * mask);
  });
}

// Reshaping and sequence plumbing.

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& x, Shape shape) {
  Tensor<Scalar> out = x.value().reshaped(std::move(shape));
  return make_op<Scalar>(std::move(out), {x},
                         [](Node<Scalar>& self) { accumulate(self, 0, self.grad.array()); });
}

/// Columns [start, start + len) of a matrix [N, K].
template <typename Scalar>
Var<Scalar> slice_cols(const Var<Scalar>& x, Index start, Index len) {
  detail::require_rank(x, 2, "slice_cols");
  const Index n = x.dim(0), k = x.dim(1);
  if (start < 0 || len < 0 || start + len > k) throw ShapeError("slice_cols: range out of bounds");
  Tensor<Scalar> out({n, len});
  out.matrix(n, len) = x.value().matrix(n, k).middleCols(start, len);
  return make_op<Scalar>(std::move(out), {x}, [n, k, start, len](Node<Scalar>& self) {
    if (!wants_grad(self, 0)) return;
    self.parents[0]->ensure_grad().matrix(n, k).middleCols(start, len) += self.grad.matrix(n, len);
  });
}

/// Rows [start, start + len) along the leading axis.
template <typename Scalar>
Var<Scalar> slice_rows(const Var<Scalar>& x, Index start, Index len) {
  const Index rows = x.dim(0);
  if (start < 0 || len < 0 || start + len > rows) throw ShapeError("slice_rows: range out of bounds");
  const Index inner = x.value().size() / rows;
  Shape shape = x.shape();
  shape[0] = len;
  Tensor<Scalar> out(shape, x.value().array().segment(start * inner, len * inner));
  return make_op<Scalar>(std::move(out), {x}, [start, len, inner](Node<Scalar>& self) {
    if (!wants_grad(self, 0)) return;
    self.parents[0]->ensure_grad().array().segment(start * inner, len * inner) += self.grad.array();
  });
}

/// Concatenates matrices [N, K_i] along columns.
template <typename Scalar>
Var<Scalar> concat_cols(const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: nothing to concatenate");
  const Index n = parts[0].dim(0);
  std::vector<Index> widths;
  Index total = 0;
  for (const auto& p : parts) {
    detail::require_rank(p, 2, "concat_cols");
    if (p.dim(0) != n) throw ShapeError("concat_cols: row counts differ");
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  Tensor<Scalar> out({n, total});
  auto o = out.matrix(n, total);
  Index at = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    o.middleCols(at, widths[i]) = parts[i].value().matrix(n, widths[i]);
    at += widths[i];
  }
  return make_op<Scalar>(std::move(out), parts, [n, total, widths](Node<Scalar>& self) {
    ConstMatrixMap<Scalar> g = self.grad.cmatrix(n, total);
    Index off = 0;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      if (wants_grad(self, i)) {
        self.parents[i]->ensure_grad().matrix(n, widths[i]) += g.middleCols(off, widths[i]);
      }
      off += widths[i];
    }
  });
}

/// Stacks T matrices [N, D] into a sequence [T, N, D].
template <typename Scalar>
Var<Scalar> stack_steps(const std::vector<Var<Scalar>>& steps) {
  if (steps.empty()) throw ShapeError("stack_steps: empty sequence");
  const Shape& s0 = steps[0].shape();
  const Index inner = steps[0].value().size();
  Tensor<Scalar> out({static_cast<Index>(steps.size()), s0[0], s0[1]});
  for (std::size_t t = 0; t < steps.size(); ++t) {
    if (steps[t].shape() != s0) throw ShapeError("stack_steps: step shapes differ");
    out.array().segment(static_cast<Index>(t) * inner, inner) = steps[t].value().array();
  }
  return make_op<Scalar>(std::move(out), steps, [inner](Node<Scalar>& self) {
    for (std::size_t t = 0; t < self.parents.size(); ++t) {
      accumulate(self, t, self.grad.array().segment(static_cast<Index>(t) * inner, inner));
    }
  });
}

/// Step t of a sequence [T, N, D] as [N, D].
template <typename Scalar>
Var<Scalar> step(const Var<Scalar>& seq, Index t) {
  detail::require_rank(seq, 3, "step");
  return reshape(slice_rows(seq, t, 1), Shape{seq.dim(1), seq.dim(2)});
}

/// Averages the frequency axis of [N, C, H, W] into a sequence [W, N, C].
template <typename Scalar>
Var<Scalar> freq_mean_sequence(const Var<Scalar>& x) {
  detail::require_rank(x, 4, "freq_mean_sequence");
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<Scalar> out({w, n, c});
  const Scalar* in = x.value().data();
  for (Index s = 0; s < n; ++s)
    for (Index ch = 0; ch < c; ++ch)
      for (Index r = 0; r < h; ++r) {
        const Scalar* row = in + ((s * c + ch) * h + r) * w;
        for (Index t = 0; t < w; ++t) out[(t * n + s) * c + ch] += row[t] / Scalar(h);
      }
  return make_op<Scalar>(std::move(out), {x}, [n, c, h, w](Node<Scalar>& self) {
    if (!wants_grad(self, 0)) return;
    Scalar* g = self.parents[0]->ensure_grad().data();
    for (Index s = 0; s < n; ++s)
      for (Index ch = 0; ch < c; ++ch)
        for (Index r = 0; r < h; ++r) {
          Scalar* row = g + ((s * c + ch) * h + r) * w;
          for (Index t = 0; t < w; ++t) row[t] += self.grad[(t * n + s) * c + ch] / Scalar(h);
        }
  });
}

/// Flattens channels and frequency of [N, C, H, W] into a sequence [W, N, C*H].
template <typename Scalar>
Var<Scalar> freq_flatten_sequence(const Var<Scalar>& x) {
  detail::require_rank(x, 4, "freq_flatten_sequence");
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index d = c * h;
  Tensor<Scalar> out({w, n, d});
  const Scalar* in = x.value().data();
  for (Index s = 0; s < n; ++s)
    for (Index f = 0; f < d; ++f) {
      const Scalar* row = in + (s * d + f) * w;
      for (Index t = 0; t < w; ++t) out[(t * n + s) * d + f] = row[t];
    }
  return make_op<Scalar>(std::move(out), {x}, [n, d, w](Node<Scalar>& self) {
    if (!wants_grad(self, 0)) return;
    Scalar* g = self.parents[0]->ensure_grad().data();
    for (Index s = 0; s < n; ++s)
      for (Index f = 0; f < d; ++f) {
        Scalar* row = g + (s * d + f) * w;
        for (Index t = 0; t < w; ++t) row[t] += self.grad[(t * n + s) * d + f];
      }
  });
}

// Losses and reductions.

template <typename Scalar>
Tensor<Scalar> softmax_rows(const Tensor<Scalar>& logits) {
  const Index n = logits.dim(0), k = logits.dim(1);
  Tensor<Scalar> out(logits.shape());
  auto o = out.matrix(n, k);
  ConstMatrixMap<Scalar> l = logits.cmatrix(n, k);
  for (Index i = 0; i < n; ++i) {
    o.row(i) = (l.row(i).array() - l.row(i).maxCoeff()).exp().matrix();
    o.row(i) /= o.row(i).sum();
  }
  return out;
}

template <typename Scalar>
Var<Scalar> softmax(const Var<Scalar>& logits) {
  detail::require_rank(logits, 2, "softmax");
  const Index n = logits.dim(0), k = logits.dim(1);
  return make_op<Scalar>(softmax_rows(logits.value()), {logits}, [n, k](Node<Scalar>& self) {
    if (!wants_grad(self, 0)) return;
    ConstMatrixMap<Scalar> y = self.value.cmatrix(n, k);
    ConstMatrixMap<Scalar> g = self.grad.cmatrix(n, k);
    auto dx = self.parents[0]->ensure_grad().matrix(n, k);
    for (Index i = 0; i < n; ++i) {
      const Scalar dot = (g.row(i).array() * y.row(i).array()).sum();
      dx.row(i).array() += y.row(i).array() * (g.row(i).array() - dot);
    }
  });
}

/// Mean negative log-likelihood of integer labels under softmax(logits).
template <typename Scalar>
Var<Scalar> cross_entropy(const Var<Scalar>& logits, const std::vector<int>& labels) {
  detail::require_rank(logits, 2, "cross_entropy");
  const Index n = logits.dim(0), k = logits.dim(1);
  if (static_cast<Index>(labels.size()) != n) throw ShapeError("cross_entropy: label count mismatch");
  ConstMatrixMap<Scalar> l = logits.value().cmatrix(n, k);
  Scalar loss = 0;
  for (Index i = 0; i < n; ++i) {
    if (labels[static_cast<std::size_t>(i)] < 0 || labels[static_cast<std::size_t>(i)] >= k) {
      throw ArgumentError("cross_entropy: label out of range");
    }
    const Scalar mx = l.row(i).maxCoeff();
    const Scalar lse = mx + std::log((l.row(i).array() - mx).exp().sum());
    loss += lse - l(i, labels[static_cast<std::size_t>(i)]);
  }
  Tensor<Scalar> out = Tensor<Scalar>::constant({1}, loss / Scalar(n));
  return make_op<Scalar>(std::move(out), {logits}, [n, k, labels](Node<Scalar>& self) {
    if (!wants_grad(self, 0)) return;
    Tensor<Scalar> p = softmax_rows(self.parents[0]->value);
    auto pm = p.matrix(n, k);
    for (Index i = 0; i < n; ++i) pm(i, labels[static_cast<std::size_t>(i)]) -= Scalar(1);
    accumulate(self, 0, p.array() * (self.grad[0] / Scalar(n)));
  });
}

/// Sum of x weighted elementwise by a constant tensor.
template <typename Scalar>
Var<Scalar> weighted_sum(const Var<Scalar>& x, const Tensor<Scalar>& weights) {
  if (weights.shape() != x.shape()) throw ShapeError("weighted_sum: shape mismatch");
  Tensor<Scalar> out = Tensor<Scalar>::constant({1}, (x.value().array() * weights.array()).sum());
  return make_op<Scalar>(std::move(out), {x}, [weights](Node<Scalar>& self) {
    accumulate(self, 0, weights.array() * self.grad[0]);
  });
}

}  // namespace cante::nn

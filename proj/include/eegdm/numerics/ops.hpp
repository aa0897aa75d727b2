#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "eegdm/numerics/autograd.hpp"
#include "eegdm/numerics/tensor.hpp"

// Differentiable tensor operations. Each op computes its value eagerly and
// records a hand-written backward closure on the tape.
namespace eegdm::ops {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;
template <class T>
using MapVec = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <class T>
using CMapVec = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

inline void require(bool cond, const char* op, const std::string& what) {
  if (!cond) throw std::invalid_argument(std::string(op) + ": " + what);
}

template <class T>
void require_same(const Var<T>& a, const Var<T>& b, const char* op) {
  require(a.shape() == b.shape(), op, "shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

template <class T, class F, class G>
Var<T> unary(const Var<T>& x, F f, G dfdx_from_xy) {
  Tensor<T> y(x.shape());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xv[i]);
  return record<T>(std::move(y), {x}, [dfdx_from_xy](Node<T>& self) {
    auto* gx = self.parent_grad(0);
    if (!gx) return;
    const auto& xv = self.parent_value(0);
    for (std::size_t i = 0; i < self.value.size(); ++i) (*gx)[i] += self.grad[i] * dfdx_from_xy(xv[i], self.value[i]);
  });
}

}  // namespace detail

template <class T>
Var<T> constant(Tensor<T> v) {
  return Var<T>(std::move(v), false);
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require_same(a, b, "add");
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] + b.value()[i];
  return record<T>(std::move(y), {a, b}, [](Node<T>& self) {
    for (std::size_t k = 0; k < 2; ++k)
      if (auto* g = self.parent_grad(k))
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::require_same(a, b, "sub");
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] - b.value()[i];
  return record<T>(std::move(y), {a, b}, [](Node<T>& self) {
    if (auto* g = self.parent_grad(0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
    if (auto* g = self.parent_grad(1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] -= self.grad[i];
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::require_same(a, b, "mul");
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] * b.value()[i];
  return record<T>(std::move(y), {a, b}, [](Node<T>& self) {
    const auto& av = self.parent_value(0);
    const auto& bv = self.parent_value(1);
    if (auto* g = self.parent_grad(0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * bv[i];
    if (auto* g = self.parent_grad(1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * av[i];
  });
}

template <class T>
Var<T> scale(const Var<T>& x, T s) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x.value()[i] * s;
  return record<T>(std::move(y), {x}, [s](Node<T>& self) {
    if (auto* g = self.parent_grad(0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * s;
  });
}

template <class T>
Var<T> relu(const Var<T>& x) {
  return detail::unary<T>(x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Var<T> tanh(const Var<T>& x) {
  return detail::unary<T>(x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
  return detail::unary<T>(x, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T y) { return y * (T(1) - y); });
}

// Exact (erf-based) GELU.
template <class T>
Var<T> gelu(const Var<T>& x) {
  return detail::unary<T>(
      x, [](T v) { return T(0.5) * v * (T(1) + std::erf(v * T(std::numbers::sqrt2 / 2))); },
      [](T v, T) {
        const T cdf = T(0.5) * (T(1) + std::erf(v * T(std::numbers::sqrt2 / 2)));
        const T pdf = std::exp(T(-0.5) * v * v) * T(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
        return cdf + v * pdf;
      });
}

template <class T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  return record<T>(x.value().reshaped(std::move(shape)), {x}, [](Node<T>& self) {
    if (auto* g = self.parent_grad(0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
  });
}

template <class T>
Var<T> sum(const Var<T>& x) {
  T s{};
  for (T v : x.value().values()) s += v;
  return record<T>(Tensor<T>::scalar(s), {x}, [](Node<T>& self) {
    if (auto* g = self.parent_grad(0))
      for (auto& v : g->values()) v += self.grad[0];
  });
}

template <class T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

template <class T>
Var<T> sum_squares(const Var<T>& x) {
  T s{};
  for (T v : x.value().values()) s += v * v;
  return record<T>(Tensor<T>::scalar(s), {x}, [](Node<T>& self) {
    if (auto* g = self.parent_grad(0)) {
      const auto& xv = self.parent_value(0);
      for (std::size_t i = 0; i < xv.size(); ++i) (*g)[i] += T(2) * xv[i] * self.grad[0];
    }
  });
}

// Mean of squared differences over every element.
template <class T>
Var<T> mse(const Var<T>& pred, const Var<T>& target) {
  detail::require_same(pred, target, "mse");
  const std::size_t n = pred.size();
  detail::require(n > 0, "mse", "empty input");
  T s{};
  for (std::size_t i = 0; i < n; ++i) {
    const T d = pred.value()[i] - target.value()[i];
    s += d * d;
  }
  return record<T>(Tensor<T>::scalar(s / static_cast<T>(n)), {pred, target}, [n](Node<T>& self) {
    const auto& p = self.parent_value(0);
    const auto& t = self.parent_value(1);
    const T c = T(2) * self.grad[0] / static_cast<T>(n);
    if (auto* g = self.parent_grad(0))
      for (std::size_t i = 0; i < n; ++i) (*g)[i] += c * (p[i] - t[i]);
    if (auto* g = self.parent_grad(1))
      for (std::size_t i = 0; i < n; ++i) (*g)[i] -= c * (p[i] - t[i]);
  });
}

// y[..., o] = sum_i x[..., i] W[o, i] + b[o]. `b` may be undefined.
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b = {}) {
  detail::require(w.value().rank() == 2, "linear", "weight must be 2-D");
  const std::size_t dout = w.dim(0), din = w.dim(1);
  detail::require(x.value().rank() >= 1 && x.shape().back() == din, "linear",
                  "input " + shape_string(x.shape()) + " vs weight " + shape_string(w.shape()));
  detail::require(!b.defined() || (b.size() == dout), "linear", "bias size");
  const std::size_t rows = x.size() / din;
  Shape out_shape = x.shape();
  out_shape.back() = dout;
  Tensor<T> y(out_shape);
  {
    detail::CMapMat<T> X(x.value().data(), rows, din);
    detail::CMapMat<T> W(w.value().data(), dout, din);
    detail::MapMat<T> Y(y.data(), rows, dout);
    Y.noalias() = X * W.transpose();
    if (b.defined()) Y.rowwise() += detail::CMapVec<T>(b.value().data(), dout).transpose();
  }
  return record<T>(std::move(y), {x, w, b}, [rows, din, dout](Node<T>& self) {
    detail::CMapMat<T> G(self.grad.data(), rows, dout);
    if (auto* gx = self.parent_grad(0)) {
      detail::MapMat<T> GX(gx->data(), rows, din);
      GX.noalias() += G * detail::CMapMat<T>(self.parent_value(1).data(), dout, din);
    }
    if (auto* gw = self.parent_grad(1)) {
      detail::MapMat<T> GW(gw->data(), dout, din);
      GW.noalias() += G.transpose() * detail::CMapMat<T>(self.parent_value(0).data(), rows, din);
    }
    if (self.parents.size() > 2 && self.parents[2]) {
      // fixed-order sums: Eigen's vectorized reductions peel by address
      if (auto* gb = self.parent_grad(2))
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < dout; ++j) (*gb)[j] += self.grad[r * dout + j];
    }
  });
}

// Pointwise (kernel-size-1) convolution over (B, Hin, L) -> (B, Hout, L).
template <class T>
Var<T> conv1x1(const Var<T>& x, const Var<T>& w, const Var<T>& b = {}) {
  detail::require(x.value().rank() == 3, "conv1x1", "input must be (B, H, L)");
  detail::require(w.value().rank() == 2 && w.dim(1) == x.dim(1), "conv1x1",
                  "input " + shape_string(x.shape()) + " vs weight " + shape_string(w.shape()));
  const std::size_t batch = x.dim(0), hin = x.dim(1), len = x.dim(2), hout = w.dim(0);
  detail::require(!b.defined() || b.size() == hout, "conv1x1", "bias size");
  Tensor<T> y(Shape{batch, hout, len});
  detail::CMapMat<T> W(w.value().data(), hout, hin);
  for (std::size_t n = 0; n < batch; ++n) {
    detail::CMapMat<T> X(x.value().data() + n * hin * len, hin, len);
    detail::MapMat<T> Y(y.data() + n * hout * len, hout, len);
    Y.noalias() = W * X;
    if (b.defined()) Y.colwise() += detail::CMapVec<T>(b.value().data(), hout);
  }
  return record<T>(std::move(y), {x, w, b}, [batch, hin, hout, len](Node<T>& self) {
    detail::CMapMat<T> W(self.parent_value(1).data(), hout, hin);
    auto* gx = self.parent_grad(0);
    auto* gw = self.parent_grad(1);
    Tensor<T>* gb = self.parents.size() > 2 && self.parents[2] ? self.parent_grad(2) : nullptr;
    for (std::size_t n = 0; n < batch; ++n) {
      detail::CMapMat<T> G(self.grad.data() + n * hout * len, hout, len);
      if (gx) detail::MapMat<T>(gx->data() + n * hin * len, hin, len).noalias() += W.transpose() * G;
      if (gw) {
        detail::CMapMat<T> X(self.parent_value(0).data() + n * hin * len, hin, len);
        detail::MapMat<T>(gw->data(), hout, hin).noalias() += G * X.transpose();
      }
      if (gb)
        for (std::size_t h = 0; h < hout; ++h) {
          T acc{};
          for (std::size_t l = 0; l < len; ++l) acc += G(h, l);
          (*gb)[h] += acc;
        }
    }
  });
}

// Channels [start, start + count) of a (B, H, L) tensor.
template <class T>
Var<T> slice_channels(const Var<T>& x, std::size_t start, std::size_t count) {
  detail::require(x.value().rank() == 3 && start + count <= x.dim(1), "slice_channels", "range out of bounds");
  const std::size_t batch = x.dim(0), h = x.dim(1), len = x.dim(2);
  Tensor<T> y(Shape{batch, count, len});
  for (std::size_t n = 0; n < batch; ++n)
    std::copy_n(x.value().data() + (n * h + start) * len, count * len, y.data() + n * count * len);
  return record<T>(std::move(y), {x}, [batch, h, len, start, count](Node<T>& self) {
    if (auto* g = self.parent_grad(0))
      for (std::size_t n = 0; n < batch; ++n) {
        T* dst = g->data() + (n * h + start) * len;
        const T* src = self.grad.data() + n * count * len;
        for (std::size_t i = 0; i < count * len; ++i) dst[i] += src[i];
      }
  });
}

// x (B, H, L) + c (B, H) broadcast over L.
template <class T>
Var<T> add_over_time(const Var<T>& x, const Var<T>& c) {
  detail::require(x.value().rank() == 3 && c.value().rank() == 2 && c.dim(0) == x.dim(0) && c.dim(1) == x.dim(1),
                  "add_over_time", "shape mismatch " + shape_string(x.shape()) + " vs " + shape_string(c.shape()));
  const std::size_t rows = x.dim(0) * x.dim(1), len = x.dim(2);
  Tensor<T> y(x.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t t = 0; t < len; ++t) y[r * len + t] = x.value()[r * len + t] + c.value()[r];
  return record<T>(std::move(y), {x, c}, [rows, len](Node<T>& self) {
    if (auto* g = self.parent_grad(0))
      for (std::size_t i = 0; i < rows * len; ++i) (*g)[i] += self.grad[i];
    if (auto* g = self.parent_grad(1))
      for (std::size_t r = 0; r < rows; ++r) {
        T s{};
        for (std::size_t t = 0; t < len; ++t) s += self.grad[r * len + t];
        (*g)[r] += s;
      }
  });
}

// x (B, H, L) scaled per channel by d (H).
template <class T>
Var<T> channel_scale(const Var<T>& x, const Var<T>& d) {
  detail::require(x.value().rank() == 3 && d.size() == x.dim(1), "channel_scale", "shape mismatch");
  const std::size_t batch = x.dim(0), h = x.dim(1), len = x.dim(2);
  Tensor<T> y(x.shape());
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t c = 0; c < h; ++c)
      for (std::size_t t = 0; t < len; ++t) {
        const std::size_t i = (n * h + c) * len + t;
        y[i] = x.value()[i] * d.value()[c];
      }
  return record<T>(std::move(y), {x, d}, [batch, h, len](Node<T>& self) {
    auto* gx = self.parent_grad(0);
    auto* gd = self.parent_grad(1);
    const auto& xv = self.parent_value(0);
    const auto& dv = self.parent_value(1);
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t c = 0; c < h; ++c)
        for (std::size_t t = 0; t < len; ++t) {
          const std::size_t i = (n * h + c) * len + t;
          if (gx) (*gx)[i] += self.grad[i] * dv[c];
          if (gd) (*gd)[c] += self.grad[i] * xv[i];
        }
  });
}

// Rows of `table` (V, E) selected by ids -> (ids.size(), E).
template <class T>
Var<T> gather_rows(const Var<T>& table, const std::vector<int>& ids) {
  detail::require(table.value().rank() == 2, "gather_rows", "table must be 2-D");
  const std::size_t vocab = table.dim(0), width = table.dim(1);
  Tensor<T> y(Shape{ids.size(), width});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= vocab)
      throw std::out_of_range("gather_rows: id " + std::to_string(ids[r]) + " outside table of " +
                              std::to_string(vocab));
    std::copy_n(table.value().data() + ids[r] * width, width, y.data() + r * width);
  }
  return record<T>(std::move(y), {table}, [ids, width](Node<T>& self) {
    if (auto* g = self.parent_grad(0))
      for (std::size_t r = 0; r < ids.size(); ++r)
        for (std::size_t j = 0; j < width; ++j) (*g)[ids[r] * width + j] += self.grad[r * width + j];
  });
}

// (S, D) -> (B, S, D) by replication; gradients sum over B.
template <class T>
Var<T> repeat_batch(const Var<T>& x, std::size_t batch) {
  Shape shape{batch};
  shape.insert(shape.end(), x.shape().begin(), x.shape().end());
  const std::size_t n = x.size();
  Tensor<T> y(shape);
  for (std::size_t b = 0; b < batch; ++b) std::copy_n(x.value().data(), n, y.data() + b * n);
  return record<T>(std::move(y), {x}, [batch, n](Node<T>& self) {
    if (auto* g = self.parent_grad(0))
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < n; ++i) (*g)[i] += self.grad[b * n + i];
  });
}

// x (B, ...) + p (...) broadcast over the leading axis.
template <class T>
Var<T> add_broadcast(const Var<T>& x, const Var<T>& p) {
  const std::size_t n = p.size();
  detail::require(n > 0 && x.size() % n == 0 &&
                      Shape(x.shape().begin() + 1, x.shape().end()) == p.shape(),
                  "add_broadcast", "shape mismatch " + shape_string(x.shape()) + " vs " + shape_string(p.shape()));
  const std::size_t batch = x.size() / n;
  Tensor<T> y(x.shape());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < n; ++i) y[b * n + i] = x.value()[b * n + i] + p.value()[i];
  return record<T>(std::move(y), {x, p}, [batch, n](Node<T>& self) {
    if (auto* g = self.parent_grad(0))
      for (std::size_t i = 0; i < batch * n; ++i) (*g)[i] += self.grad[i];
    if (auto* g = self.parent_grad(1))
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < n; ++i) (*g)[i] += self.grad[b * n + i];
  });
}

// Mean over the token axis: (B, S, D) -> (B, D).
template <class T>
Var<T> mean_tokens(const Var<T>& x) {
  detail::require(x.value().rank() == 3 && x.dim(1) > 0, "mean_tokens", "input must be (B, S, D)");
  const std::size_t batch = x.dim(0), seq = x.dim(1), width = x.dim(2);
  Tensor<T> y(Shape{batch, width});
  const T inv = T(1) / static_cast<T>(seq);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t s = 0; s < seq; ++s)
      for (std::size_t j = 0; j < width; ++j) y[b * width + j] += x.value()[(b * seq + s) * width + j] * inv;
  return record<T>(std::move(y), {x}, [batch, seq, width, inv](Node<T>& self) {
    if (auto* g = self.parent_grad(0))
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t s = 0; s < seq; ++s)
          for (std::size_t j = 0; j < width; ++j) (*g)[(b * seq + s) * width + j] += self.grad[b * width + j] * inv;
  });
}

// Concatenation along axis 1 of (B, L_i, D) tensors -> (B, sum L_i, D).
template <class T>
Var<T> concat_tokens(const std::vector<Var<T>>& parts) {
  detail::require(!parts.empty(), "concat_tokens", "no inputs");
  const std::size_t batch = parts[0].dim(0), width = parts[0].dim(2);
  std::vector<std::size_t> offsets{0};
  for (const auto& p : parts) {
    detail::require(p.value().rank() == 3 && p.dim(0) == batch && p.dim(2) == width, "concat_tokens",
                    "inputs must share (B, *, D)");
    offsets.push_back(offsets.back() + p.dim(1));
  }
  const std::size_t total = offsets.back();
  Tensor<T> y(Shape{batch, total, width});
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const std::size_t len = parts[i].dim(1);
    for (std::size_t b = 0; b < batch; ++b)
      std::copy_n(parts[i].value().data() + b * len * width, len * width,
                  y.data() + (b * total + offsets[i]) * width);
  }
  return record<T>(std::move(y), parts, [batch, width, total, offsets](Node<T>& self) {
    for (std::size_t i = 0; i + 1 < offsets.size(); ++i) {
      auto* g = self.parent_grad(i);
      if (!g) continue;
      const std::size_t len = offsets[i + 1] - offsets[i];
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t k = 0; k < len * width; ++k)
          (*g)[b * len * width + k] += self.grad[(b * total + offsets[i]) * width + k];
    }
  });
}

// Layer normalization over the last axis with affine gain and bias.
template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
  const std::size_t width = x.shape().back();
  detail::require(gamma.size() == width && beta.size() == width, "layer_norm", "affine size mismatch");
  const std::size_t rows = x.size() / width;
  Tensor<T> y(x.shape());
  std::vector<T> xhat(x.size()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.value().data() + r * width;
    T mu{};
    for (std::size_t j = 0; j < width; ++j) mu += xr[j];
    mu /= static_cast<T>(width);
    T var{};
    for (std::size_t j = 0; j < width; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<T>(width);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < width; ++j) {
      xhat[r * width + j] = (xr[j] - mu) * inv_std[r];
      y[r * width + j] = xhat[r * width + j] * gamma.value()[j] + beta.value()[j];
    }
  }
  return record<T>(std::move(y), {x, gamma, beta},
                   [rows, width, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
                     auto* gx = self.parent_grad(0);
                     auto* gg = self.parent_grad(1);
                     auto* gb = self.parent_grad(2);
                     const auto& gam = self.parent_value(1);
                     std::vector<T> dxhat(width);
                     for (std::size_t r = 0; r < rows; ++r) {
                       const T* dy = self.grad.data() + r * width;
                       const T* xh = xhat.data() + r * width;
                       T m1{}, m2{};
                       for (std::size_t j = 0; j < width; ++j) {
                         if (gg) (*gg)[j] += dy[j] * xh[j];
                         if (gb) (*gb)[j] += dy[j];
                         dxhat[j] = dy[j] * gam[j];
                         m1 += dxhat[j];
                         m2 += dxhat[j] * xh[j];
                       }
                       if (!gx) continue;
                       m1 /= static_cast<T>(width);
                       m2 /= static_cast<T>(width);
                       for (std::size_t j = 0; j < width; ++j)
                         (*gx)[r * width + j] += inv_std[r] * (dxhat[j] - m1 - xh[j] * m2);
                     }
                   });
}

// Row-wise softmax of a (B, K) tensor (not recorded; used for probabilities).
template <class T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  const std::size_t k = logits.shape().back();
  const std::size_t rows = logits.size() / k;
  Tensor<T> p(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* z = logits.data() + r * k;
    const T mx = *std::max_element(z, z + k);
    T s{};
    for (std::size_t j = 0; j < k; ++j) s += (p[r * k + j] = std::exp(z[j] - mx));
    for (std::size_t j = 0; j < k; ++j) p[r * k + j] /= s;
  }
  return p;
}

}  // namespace eegdm::ops

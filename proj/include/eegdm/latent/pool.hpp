#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "eegdm/numerics/autograd.hpp"
#include "eegdm/numerics/ops.hpp"
#include "eegdm/numerics/tensor.hpp"

namespace eegdm {

enum class PoolKind { average, std };

inline PoolKind parse_pool_kind(const std::string& s) {
  if (s == "std") return PoolKind::std;
  if (s == "avg" || s == "average" || s == "mean") return PoolKind::average;
  throw std::invalid_argument("unknown pool kind '" + s + "' (expected std or avg)");
}
inline const char* to_string(PoolKind k) { return k == PoolKind::std ? "std" : "avg"; }

// Per-segment latent activities (C, n, L, H).
struct LatentTensor {
  Tensor<float> values;
  std::string segment_id;
  std::string tap = "gate";
  std::string mode = "noiseless";
  int step = 1;

  std::size_t channels() const { return values.dim(0); }
  std::size_t layers() const { return values.dim(1); }
  std::size_t length() const { return values.dim(2); }
  std::size_t width() const { return values.dim(3); }
};

// Pooled tokens (C, n, p, H) with window = L / p.
struct PooledLatents {
  Tensor<float> values;
  PoolKind kind = PoolKind::std;
  std::size_t window = 0;

  std::size_t channels() const { return values.dim(0); }
  std::size_t layers() const { return values.dim(1); }
  std::size_t pools() const { return values.dim(2); }
  std::size_t width() const { return values.dim(3); }
};

namespace detail {

// Mean or population std of `n` samples spaced by `stride`. Samples are
// summed in sorted order, so any reordering inside the window gives the
// same bits.
template <class T>
double window_stat(const T* x, std::size_t n, std::size_t stride, PoolKind kind) {
  thread_local std::vector<double> buf;
  buf.resize(n);
  for (std::size_t k = 0; k < n; ++k) buf[k] = static_cast<double>(x[k * stride]);
  std::sort(buf.begin(), buf.end());
  double mean = 0.0;
  for (double v : buf) mean += v;
  mean /= static_cast<double>(n);
  if (kind == PoolKind::average) return mean;
  double var = 0.0;
  for (double v : buf) var += (v - mean) * (v - mean);
  return std::sqrt(var / static_cast<double>(n));
}

inline void check_pools(std::size_t len, std::size_t pools) {
  if (pools == 0 || len % pools != 0)
    throw std::invalid_argument("pool: length " + std::to_string(len) + " not divisible by p=" + std::to_string(pools));
}

}  // namespace detail

inline PooledLatents pool(const LatentTensor& latents, std::size_t pools, PoolKind kind) {
  const auto& v = latents.values;
  if (v.rank() != 4) throw std::invalid_argument("pool: latents must be (C, n, L, H)");
  const std::size_t c = v.dim(0), n = v.dim(1), len = v.dim(2), h = v.dim(3);
  detail::check_pools(len, pools);
  const std::size_t w = len / pools;
  PooledLatents out{Tensor<float>(Shape{c, n, pools, h}), kind, w};
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t li = 0; li < n; ++li)
      for (std::size_t q = 0; q < pools; ++q)
        for (std::size_t hi = 0; hi < h; ++hi) {
          const float* x = v.data() + ((ci * n + li) * len + q * w) * h + hi;
          out.values[((ci * n + li) * pools + q) * h + hi] = static_cast<float>(detail::window_stat(x, w, h, kind));
        }
  return out;
}

namespace ops {

// Pools a block tap (S*C, H, L) over p windows and regroups it as fusion
// input (S*p, C, H). Differentiable.
template <class T>
Var<T> pool_group(const Var<T>& tap, std::size_t segments, std::size_t pools, PoolKind kind) {
  detail::require(tap.value().rank() == 3 && segments > 0 && tap.dim(0) % segments == 0, "pool_group",
                  "tap must be (S*C, H, L)");
  const std::size_t c = tap.dim(0) / segments, h = tap.dim(1), len = tap.dim(2);
  eegdm::detail::check_pools(len, pools);
  const std::size_t w = len / pools;
  Tensor<T> y(Shape{segments * pools, c, h});
  auto out_index = [=](std::size_t s, std::size_t ci, std::size_t hi, std::size_t q) {
    return ((s * pools + q) * c + ci) * h + hi;
  };
  for (std::size_t s = 0; s < segments; ++s)
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t hi = 0; hi < h; ++hi)
        for (std::size_t q = 0; q < pools; ++q) {
          const T* x = tap.value().data() + ((s * c + ci) * h + hi) * len + q * w;
          y[out_index(s, ci, hi, q)] = static_cast<T>(eegdm::detail::window_stat(x, w, 1, kind));
        }
  return record<T>(std::move(y), {tap}, [=](Node<T>& self) {
    auto* g = self.parent_grad(0);
    if (!g) return;
    const auto& xv = self.parent_value(0);
    for (std::size_t s = 0; s < segments; ++s)
      for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t hi = 0; hi < h; ++hi)
          for (std::size_t q = 0; q < pools; ++q) {
            const std::size_t base = ((s * c + ci) * h + hi) * len + q * w;
            const std::size_t oi = out_index(s, ci, hi, q);
            const T go = self.grad[oi];
            if (kind == PoolKind::average) {
              for (std::size_t k = 0; k < w; ++k) (*g)[base + k] += go / static_cast<T>(w);
              continue;
            }
            const T sd = self.value[oi];
            if (sd == T(0)) continue;
            T mean{};
            for (std::size_t k = 0; k < w; ++k) mean += xv[base + k];
            mean /= static_cast<T>(w);
            for (std::size_t k = 0; k < w; ++k) (*g)[base + k] += go * (xv[base + k] - mean) / (static_cast<T>(w) * sd);
          }
  });
}

}  // namespace ops

// Fusion-group inputs for layer i from a stack of pooled segments
// (S, C, n, p, H): returns (S*p, C, H).
template <class T>
Tensor<T> fusion_group(const Tensor<float>& stacked, std::size_t layer) {
  if (stacked.rank() != 5) throw std::invalid_argument("fusion_group: expected (S, C, n, p, H)");
  const std::size_t s = stacked.dim(0), c = stacked.dim(1), n = stacked.dim(2), p = stacked.dim(3),
                    h = stacked.dim(4);
  if (layer >= n) throw std::out_of_range("fusion_group: layer index out of range");
  Tensor<T> out(Shape{s * p, c, h});
  for (std::size_t si = 0; si < s; ++si)
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t q = 0; q < p; ++q)
        for (std::size_t hi = 0; hi < h; ++hi)
          out[((si * p + q) * c + ci) * h + hi] =
              static_cast<T>(stacked[(((si * c + ci) * n + layer) * p + q) * h + hi]);
  return out;
}

}  // namespace eegdm

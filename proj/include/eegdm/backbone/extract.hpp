#pragma once

#include <algorithm>
#include <stdexcept>
#include <vector>

#include "eegdm/backbone/ssmdp.hpp"
#include "eegdm/diffusion/process.hpp"
#include "eegdm/latent/pool.hpp"

namespace eegdm {

struct ExtractionSpec {
  ExtractionMode mode = ExtractionMode::noiseless;
  int step = 1;
};

// Full latent tensor (C, n, L, H) of one segment x0 (C, L). Each EEG channel
// row is an independent example sharing the backbone weights.
template <class T>
LatentTensor collect_latents(const SSMDP<T>& model, const Tensor<float>& x0, const std::vector<int>& channel_ids,
                             const ExtractionSpec& spec, const NoiseSchedule& sched) {
  if (x0.rank() != 2) throw std::invalid_argument("collect_latents: segment must be (C, L)");
  const std::size_t c = x0.dim(0), len = x0.dim(1), n = model.num_layers(), h = model.config().tap_width();
  auto [signal, t] = extraction_input(x0.cast<T>(), spec.mode, spec.step, sched);
  LatentTensor out;
  out.values = Tensor<float>(Shape{c, n, len, h});
  out.tap = to_string(model.config().tap);
  out.mode = to_string(spec.mode);
  out.step = t;
  NoGradGuard no_grad;
  model.forward(Var<T>(std::move(signal)), std::vector<int>(c, t), channel_ids,
                [&](std::size_t layer, const Var<T>& tap) {
                  for (std::size_t ci = 0; ci < c; ++ci)
                    for (std::size_t hi = 0; hi < h; ++hi)
                      for (std::size_t k = 0; k < len; ++k)
                        out.values[((ci * n + layer) * len + k) * h + hi] =
                            static_cast<float>(tap.value()[(ci * h + hi) * len + k]);
                });
  return out;
}

// Pooled latents (S, C, n, p, H) for a stack of segments (S, C, L), pooling
// each block tap as soon as it is produced so the full (C, n, L, H) tensor is
// never held. `chunk` segments share one backbone pass.
template <class T>
Tensor<float> extract_pooled(const SSMDP<T>& model, const Tensor<float>& segments, const std::vector<int>& channel_ids,
                             const ExtractionSpec& spec, const NoiseSchedule& sched, std::size_t pools, PoolKind kind,
                             std::size_t chunk = 8) {
  if (segments.rank() != 3) throw std::invalid_argument("extract_pooled: segments must be (S, C, L)");
  const std::size_t s_total = segments.dim(0), c = segments.dim(1), len = segments.dim(2);
  if (channel_ids.size() != c) throw std::invalid_argument("extract_pooled: one channel id per channel required");
  const std::size_t n = model.num_layers(), h = model.config().tap_width();
  detail::check_pools(len, pools);
  const std::size_t w = len / pools;
  Tensor<float> out(Shape{s_total, c, n, pools, h});
  NoGradGuard no_grad;
  chunk = std::max<std::size_t>(1, chunk);
  for (std::size_t s0 = 0; s0 < s_total; s0 += chunk) {
    const std::size_t s1 = std::min(s_total, s0 + chunk), rows = (s1 - s0) * c;
    Tensor<T> x(Shape{rows, len});
    for (std::size_t i = 0; i < rows * len; ++i) x[i] = static_cast<T>(segments[s0 * c * len + i]);
    auto [signal, t] = extraction_input(x, spec.mode, spec.step, sched);
    std::vector<int> ids(rows);
    for (std::size_t r = 0; r < rows; ++r) ids[r] = channel_ids[r % c];
    model.forward(Var<T>(std::move(signal)), std::vector<int>(rows, t), ids,
                  [&](std::size_t layer, const Var<T>& tap) {
                    for (std::size_t r = 0; r < rows; ++r) {
                      const std::size_t si = s0 + r / c, ci = r % c;
                      for (std::size_t hi = 0; hi < h; ++hi)
                        for (std::size_t q = 0; q < pools; ++q) {
                          const T* xp = tap.value().data() + (r * h + hi) * len + q * w;
                          out[(((si * c + ci) * n + layer) * pools + q) * h + hi] =
                              static_cast<float>(detail::window_stat(xp, w, 1, kind));
                        }
                    }
                  });
  }
  return out;
}

}  // namespace eegdm

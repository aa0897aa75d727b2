#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "eegdm/numerics/tensor.hpp"
#include "eegdm/signal/compand.hpp"
#include "eegdm/signal/filter.hpp"

namespace eegdm {

// Fixed-length multichannel windows sharing channel count, length and rate.
struct SegmentBatch {
  Tensor<float> signals;  // (batch, channels, samples), normalized units
  std::vector<int> labels;
  double sample_rate = 200.0;
  std::vector<int> channel_ids;  // one id per channel

  std::size_t size() const { return signals.rank() == 3 ? signals.dim(0) : 0; }
  std::size_t channels() const { return signals.dim(1); }
  std::size_t samples() const { return signals.dim(2); }

  std::span<const float> segment(std::size_t b) const {
    const std::size_t n = channels() * samples();
    return signals.values().subspan(b * n, n);
  }

  void validate(int num_classes) const {
    if (signals.rank() != 3) throw std::invalid_argument("SegmentBatch: signals must be (batch, channels, samples)");
    if (labels.size() != size()) throw std::invalid_argument("SegmentBatch: one label per segment required");
    if (channel_ids.size() != channels()) throw std::invalid_argument("SegmentBatch: one id per channel required");
    if (!(sample_rate > 0)) throw std::invalid_argument("SegmentBatch: sample rate must be positive");
    for (int l : labels)
      if (l < 0 || l >= num_classes) throw std::out_of_range("SegmentBatch: label " + std::to_string(l) + " out of range");
  }
};

inline std::size_t resampled_length(std::size_t n, double old_rate, double new_rate) {
  return static_cast<std::size_t>(std::llround(static_cast<double>(n) * new_rate / old_rate));
}

// Linear-interpolation resampling of one channel. Output sample k sits at
// input position k * old_rate / new_rate.
template <class T>
std::vector<T> resample_linear(std::span<const T> x, double old_rate, double new_rate) {
  if (!(old_rate > 0) || !(new_rate > 0)) throw std::invalid_argument("resample: rates must be positive");
  const std::size_t n_out = resampled_length(x.size(), old_rate, new_rate);
  if (n_out < 2 || x.size() < 2) throw std::invalid_argument("resample: output shorter than 2 samples");
  std::vector<T> out(n_out);
  if (old_rate == new_rate) {
    std::copy(x.begin(), x.end(), out.begin());
    return out;
  }
  const double step = old_rate / new_rate;
  for (std::size_t k = 0; k < n_out; ++k) {
    const double pos = static_cast<double>(k) * step;
    const std::size_t i = static_cast<std::size_t>(pos);
    if (i + 1 >= x.size()) {
      out[k] = x.back();
      continue;
    }
    const double frac = pos - static_cast<double>(i);
    out[k] = static_cast<T>((1.0 - frac) * x[i] + frac * x[i + 1]);
  }
  return out;
}

inline SegmentBatch resample(const SegmentBatch& batch, double new_rate) {
  if (!(new_rate > 0)) throw std::invalid_argument("resample: new rate must be positive");
  const std::size_t n_out = resampled_length(batch.samples(), batch.sample_rate, new_rate);
  if (n_out < 2) throw std::invalid_argument("resample: new rate leaves fewer than 2 samples");
  SegmentBatch out;
  out.labels = batch.labels;
  out.channel_ids = batch.channel_ids;
  out.sample_rate = new_rate;
  out.signals = Tensor<float>(Shape{batch.size(), batch.channels(), n_out});
  const std::size_t rows = batch.size() * batch.channels();
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = batch.signals.values().subspan(r * batch.samples(), batch.samples());
    auto res = resample_linear<float>(row, batch.sample_rate, new_rate);
    std::copy(res.begin(), res.end(), out.signals.data() + r * n_out);
  }
  return out;
}

struct PreprocessConfig {
  double highpass_hz = 0.1;
  double lowpass_hz = 75.0;
  double notch_hz = 50.0;
  double notch_q = 30.0;
  int highpass_order = 4;
  int lowpass_order = 8;
  double target_rate = 200.0;
  double amplitude_scale = 100.0;
  double window_seconds = 5.0;
  bool compand = true;
  double mu = kMuLaw;
};

// Band-pass + notch chain for `rate`; edges at or above Nyquist are skipped.
inline std::vector<Biquad> preprocessing_filters(const PreprocessConfig& cfg, double rate) {
  std::vector<Biquad> chain;
  if (cfg.highpass_hz > 0 && cfg.highpass_hz < rate / 2) {
    auto hp = butterworth_highpass(cfg.highpass_order, cfg.highpass_hz, rate);
    chain.insert(chain.end(), hp.begin(), hp.end());
  }
  if (cfg.lowpass_hz > 0 && cfg.lowpass_hz < rate / 2) {
    auto lp = butterworth_lowpass(cfg.lowpass_order, cfg.lowpass_hz, rate);
    chain.insert(chain.end(), lp.begin(), lp.end());
  }
  if (cfg.notch_hz > 0 && cfg.notch_hz < rate / 2) chain.push_back(notch(cfg.notch_hz, cfg.notch_q, rate));
  return chain;
}

inline std::size_t window_samples(const PreprocessConfig& cfg) {
  return static_cast<std::size_t>(std::llround(cfg.window_seconds * cfg.target_rate));
}

// filter -> resample -> scale -> segment -> compand. `raw` is (channels,
// samples) in microvolts; every produced window carries `label`.
inline SegmentBatch preprocess(const Tensor<float>& raw, double raw_rate, const PreprocessConfig& cfg = {},
                               int label = 0) {
  if (!(raw_rate > 0)) throw std::invalid_argument("preprocess: raw rate must be positive");
  if (raw.rank() != 2) throw std::invalid_argument("preprocess: raw must be (channels, samples)");
  const std::size_t channels = raw.dim(0), n_raw = raw.dim(1);
  const auto chain = preprocessing_filters(cfg, raw_rate);
  const std::size_t window = window_samples(cfg);
  const std::size_t n_res = resampled_length(n_raw, raw_rate, cfg.target_rate);
  if (window == 0 || n_res < window) throw std::invalid_argument("preprocess: recording shorter than one window");
  const std::size_t n_windows = n_res / window;

  std::vector<std::vector<double>> rows(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    std::vector<double> x(raw.data() + c * n_raw, raw.data() + (c + 1) * n_raw);
    apply_cascade<double>(chain, x);
    rows[c] = resample_linear<double>(x, raw_rate, cfg.target_rate);
  }

  SegmentBatch out;
  out.sample_rate = cfg.target_rate;
  out.labels.assign(n_windows, label);
  for (std::size_t c = 0; c < channels; ++c) out.channel_ids.push_back(static_cast<int>(c));
  out.signals = Tensor<float>(Shape{n_windows, channels, window});
  for (std::size_t w = 0; w < n_windows; ++w)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t k = 0; k < window; ++k) {
        double v = rows[c][w * window + k] / cfg.amplitude_scale;
        if (cfg.compand) v = mu_law_compand(v, cfg.mu);
        out.signals[(w * channels + c) * window + k] = static_cast<float>(v);
      }
  return out;
}

}  // namespace eegdm

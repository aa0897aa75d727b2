#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "eegdm/numerics/random.hpp"
#include "eegdm/signal/manifest.hpp"
#include "eegdm/signal/segment.hpp"
#include "eegdm/signal/segment_io.hpp"

namespace eegdm {

// One additive ingredient of a synthetic class, in microvolts.
struct SynthComponent {
  enum class Kind { oscillation, spikes, noise };
  Kind kind = Kind::oscillation;
  double freq_lo = 10.0;  // oscillation band (Hz)
  double freq_hi = 10.0;
  double amplitude = 100.0;  // peak amplitude, or noise std
  double spike_rate = 1.0;   // spikes per second
  double spike_width = 0.03; // seconds
};

struct ClassRecipe {
  std::string name;
  std::vector<SynthComponent> components;
};

inline SynthComponent oscillation(double lo, double hi, double amplitude) {
  return {SynthComponent::Kind::oscillation, lo, hi, amplitude};
}

inline SynthComponent spike_train(double rate, double amplitude, double width = 0.03) {
  SynthComponent c;
  c.kind = SynthComponent::Kind::spikes;
  c.amplitude = amplitude;
  c.spike_rate = rate;
  c.spike_width = width;
  return c;
}

inline SynthComponent broadband_noise(double stddev) {
  SynthComponent c;
  c.kind = SynthComponent::Kind::noise;
  c.amplitude = stddev;
  return c;
}

// Three oscillation-band classes (delta-, alpha- and beta-like rhythms).
inline std::vector<ClassRecipe> default_recipes() {
  return {
      {"delta", {oscillation(2.0, 4.0, 120.0)}},
      {"alpha", {oscillation(9.5, 10.5, 100.0)}},
      {"beta", {oscillation(18.0, 24.0, 80.0)}},
  };
}

struct SynthConfig {
  std::vector<ClassRecipe> recipes = default_recipes();
  std::size_t n_per_class = 100;    // train + valid segments per class
  std::size_t test_per_class = 0;   // additional held-out test segments
  double valid_fraction = 0.2;
  std::vector<double> class_weights;  // relative class sizes; empty = balanced
  std::size_t channels = 4;
  std::size_t samples = 1000;
  double rate = 200.0;
  double background_std = 10.0;
  std::uint64_t seed = 0;
};

// Raw (channels, samples) recording in microvolts for one segment.
inline Tensor<float> synth_raw(const ClassRecipe& recipe, std::size_t channels, std::size_t samples, double rate,
                               double background_std, Rng& rng) {
  Tensor<float> raw(Shape{channels, samples});
  std::vector<double> x(samples);
  for (const auto& comp : recipe.components) {
    const double seg_gain = rng.uniform(0.7, 1.3);
    const double freq = rng.uniform(comp.freq_lo, std::max(comp.freq_lo, comp.freq_hi));
    std::vector<double> spike_times;
    if (comp.kind == SynthComponent::Kind::spikes) {
      if (!(comp.spike_rate > 0.0)) throw std::invalid_argument("synth: spike rate must be positive");
      const double duration = static_cast<double>(samples) / rate;
      for (double t = rng.uniform(0.0, 1.0 / comp.spike_rate); t < duration; t += 1.0 / comp.spike_rate)
        spike_times.push_back(t + rng.uniform(-0.1, 0.1) / comp.spike_rate);
    }
    for (std::size_t c = 0; c < channels; ++c) {
      const double ch_gain = rng.uniform(0.6, 1.0);
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      for (std::size_t k = 0; k < samples; ++k) {
        const double t = static_cast<double>(k) / rate;
        double v = 0.0;
        switch (comp.kind) {
          case SynthComponent::Kind::oscillation:
            v = comp.amplitude * seg_gain * ch_gain * std::sin(2.0 * std::numbers::pi * freq * t + phase);
            break;
          case SynthComponent::Kind::spikes:
            for (double s : spike_times) {
              const double z = (t - s) / comp.spike_width;
              v += comp.amplitude * seg_gain * ch_gain * std::exp(-0.5 * z * z);
            }
            break;
          case SynthComponent::Kind::noise:
            v = rng.normal(0.0, comp.amplitude);
            break;
        }
        raw[c * samples + k] += static_cast<float>(v);
      }
    }
  }
  for (auto& v : raw.values()) v += static_cast<float>(rng.normal(0.0, background_std));
  return raw;
}

// Preprocessed (channels, samples) segment for class `label`.
inline Tensor<float> synth_segment(const SynthConfig& cfg, int label, Rng& rng) {
  const auto raw = synth_raw(cfg.recipes.at(label), cfg.channels, cfg.samples, cfg.rate, cfg.background_std, rng);
  PreprocessConfig pp;
  pp.target_rate = cfg.rate;
  pp.window_seconds = static_cast<double>(cfg.samples) / cfg.rate;
  auto batch = preprocess(raw, cfg.rate, pp, label);
  return batch.signals.reshaped(Shape{cfg.channels, cfg.samples});
}

// Per-class segment counts for a per-class budget `n` (train + valid by
// default), scaled by the relative class weights.
inline std::vector<std::size_t> class_counts(const SynthConfig& cfg, std::optional<std::size_t> n = std::nullopt) {
  const std::size_t k = cfg.recipes.size(), per = n.value_or(cfg.n_per_class);
  std::vector<std::size_t> counts(k, per);
  if (!cfg.class_weights.empty() && per > 0) {
    std::vector<double> w(k);
    for (std::size_t c = 0; c < k; ++c) w[c] = cfg.class_weights[std::min(c, cfg.class_weights.size() - 1)];
    const double wmax = *std::max_element(w.begin(), w.end());
    for (std::size_t c = 0; c < k; ++c)
      counts[c] = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(double(per) * w[c] / wmax)));
  }
  return counts;
}

// Writes a deterministic synthetic dataset plus manifest.json under `root`.
inline DatasetManifest synth_dataset(const SynthConfig& cfg, const std::filesystem::path& root) {
  if (cfg.recipes.size() < 2) throw std::invalid_argument("synth_dataset: at least two class recipes required");
  for (const auto& r : cfg.recipes)
    if (r.components.empty()) throw std::invalid_argument("synth_dataset: empty recipe '" + r.name + "'");
  if (cfg.n_per_class == 0 || cfg.channels == 0 || cfg.samples < 2 || !(cfg.rate > 0))
    throw std::invalid_argument("synth_dataset: invalid geometry");
  if (!(cfg.valid_fraction >= 0.0 && cfg.valid_fraction < 1.0))
    throw std::invalid_argument("synth_dataset: valid fraction must lie in [0, 1)");

  DatasetManifest m;
  m.num_classes = static_cast<int>(cfg.recipes.size());
  for (const auto& r : cfg.recipes) m.class_names.push_back(r.name);
  m.channels = cfg.channels;
  m.samples = cfg.samples;
  m.rate = cfg.rate;
  m.seed = cfg.seed;
  for (const char* s : DatasetManifest::kSplits) m.splits[s];

  const Rng master(cfg.seed);
  const auto counts = class_counts(cfg), test_counts = class_counts(cfg, cfg.test_per_class);
  auto emit = [&](const std::string& split, int label, std::size_t index, std::uint64_t stream) {
    Rng rng = master.split(stream);
    char name[64];
    std::snprintf(name, sizeof name, "%s/c%d_%05zu.seg", split.c_str(), label, index);
    write_segment(root / name, Segment{synth_segment(cfg, label, rng), cfg.rate, label});
    m.splits[split].push_back({name, label});
  };
  for (int label = 0; label < m.num_classes; ++label) {
    const std::size_t n = counts[label];
    const std::size_t n_valid = static_cast<std::size_t>(std::llround(n * cfg.valid_fraction));
    for (std::size_t i = 0; i < n; ++i)
      emit(i < n - n_valid ? "train" : "valid", label, i, (static_cast<std::uint64_t>(label) << 32) | i);
    for (std::size_t i = 0; i < test_counts[label]; ++i)
      emit("test", label, i, (static_cast<std::uint64_t>(label) << 32) | (1ULL << 31) | i);
  }
  save_manifest(root / "manifest.json", m);
  return m;
}

}  // namespace eegdm

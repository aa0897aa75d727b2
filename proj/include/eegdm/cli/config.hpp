#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "eegdm/backbone/ssmdp.hpp"
#include "eegdm/diffusion/process.hpp"
#include "eegdm/latent/pool.hpp"
#include "eegdm/lft/lft.hpp"
#include "eegdm/numerics/errors.hpp"
#include "eegdm/signal/synth.hpp"
#include "eegdm/training/optim.hpp"

namespace eegdm::cli {

using Json = nlohmann::ordered_json;

// Flat map of dotted keys. Every key has a typed default; files and flags may
// only override known keys, and values are coerced to the default's type.
class RunConfig {
 public:
  RunConfig() {
    auto& d = values_;
    d["seed"] = 0u;
    d["threads"] = 1u;
    d["data.root"] = "data";
    d["run.dir"] = "run";

    const SynthConfig synth;
    d["synth.n_per_class"] = synth.n_per_class;
    d["synth.test_per_class"] = 20u;
    d["synth.valid_fraction"] = synth.valid_fraction;
    d["synth.channels"] = synth.channels;
    d["synth.samples"] = synth.samples;
    d["synth.rate"] = synth.rate;
    d["synth.classes"] = synth.recipes.size();
    d["synth.imbalance"] = "";

    const auto bb = SSMDPConfig{}.to_json();
    for (const auto& [k, v] : bb.items()) d["backbone." + k] = v;
    d["backbone.num_eeg_channels"] = 0u;  // 0: taken from the dataset

    add_optim("pretrain", OptimConfig::pretrain());
    d["pretrain.valid_rows"] = 256u;
    d["pretrain.resume"] = true;

    d["extract.tap"] = "gate";
    d["extract.pool"] = "std";
    d["extract.pools"] = 5u;
    d["extract.mode"] = "noiseless";
    d["extract.step"] = 1;
    d["extract.chunk"] = 8u;

    const LFTConfig lft;
    d["lft.encoder_blocks"] = lft.encoder_blocks;
    d["lft.heads"] = lft.heads;
    d["lft.dim"] = lft.dim;
    d["lft.mlp_hidden"] = lft.mlp_hidden;
    d["lft.tokens"] = lft.tokens;
    d["lft.dropout"] = 0.1;
    d["lft.fusion"] = "base";
    d["lft.layers"] = "all";
    d["lft.compensate"] = true;

    add_optim("finetune", OptimConfig::finetune());
    d["finetune.smoothing"] = 0.1;
    d["finetune.class_weights"] = false;
    d["finetune.seeds"] = 5u;
    d["finetune.patience"] = 3u;
    d["finetune.min_epochs"] = 20u;
    d["finetune.early_stop"] = true;

    d["eval.split"] = "test";
    d["eval.resample_test"] = 0.0;

    d["generate.count"] = 4u;
    d["generate.label"] = 0;
    d["generate.samples"] = 1000u;
    d["generate.rate"] = 200.0;
  }

  // Accepts flat dotted keys or nested objects (flattened with dots).
  void merge_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path.string());
    Json j;
    try {
      j = Json::parse(is);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("bad config file " + path.string() + ": " + e.what());
    }
    if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
    merge(j, "");
  }

  void set(const std::string& key, const Json& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    *it = coerce(key, *it, value);
  }

  // String form, as given on the command line.
  void set_text(const std::string& key, const std::string& text) {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    if (it->is_string()) {
      *it = text;
      return;
    }
    Json parsed;
    try {
      parsed = Json::parse(text);
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("value '" + text + "' for '" + key + "' is not a " + it->type_name());
    }
    *it = coerce(key, *it, parsed);
  }

  template <class T>
  T get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->get<T>();
  }
  std::string str(const std::string& key) const { return get<std::string>(key); }
  std::size_t size(const std::string& key) const { return get<std::size_t>(key); }
  double num(const std::string& key) const { return get<double>(key); }
  bool flag(const std::string& key) const { return get<bool>(key); }
  std::uint64_t seed() const { return get<std::uint64_t>("seed"); }

  const Json& values() const { return values_; }

  std::filesystem::path data_root() const { return str("data.root"); }
  std::filesystem::path run_dir() const { return str("run.dir"); }

 private:
  void add_optim(const std::string& prefix, const OptimConfig& o) {
    const auto j = o.to_json();
    for (const auto& [k, v] : j.items()) values_[prefix + "." + k] = v;
  }

  void merge(const Json& j, const std::string& prefix) {
    for (const auto& [k, v] : j.items()) {
      const std::string key = prefix.empty() ? k : prefix + "." + k;
      if (v.is_object())
        merge(v, key);
      else
        set(key, v);
    }
  }

  static Json coerce(const std::string& key, const Json& current, const Json& v) {
    const bool ok = current.is_string()            ? v.is_string()
                    : current.is_boolean()         ? v.is_boolean()
                    : current.is_number_unsigned() ? v.is_number_unsigned() || (v.is_number_integer() && v >= 0)
                    : current.is_number_integer()  ? v.is_number_integer()
                    : current.is_number()          ? v.is_number()
                                                   : true;
    if (!ok) throw ConfigError("config key '" + key + "' expects a " + std::string(current.type_name()));
    if (current.is_number_float()) return v.get<double>();
    return v;
  }

  Json values_ = Json::object();
};

// Typed views over a RunConfig. Each one validates what it builds.

inline std::vector<double> parse_ratio(const std::string& text) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto next = text.find(':', pos);
    const auto part = text.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
    try {
      std::size_t used = 0;
      const double v = std::stod(part, &used);
      if (used != part.size() || !(v > 0)) throw std::invalid_argument(part);
      out.push_back(v);
    } catch (const std::exception&) {
      throw ConfigError("bad imbalance ratio '" + text + "' (expected e.g. 10:1)");
    }
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  return out;
}

inline SynthConfig synth_config(const RunConfig& rc) {
  SynthConfig s;
  const auto k = rc.size("synth.classes");
  if (k < 2 || k > s.recipes.size())
    throw ConfigError("synth.classes must be between 2 and " + std::to_string(s.recipes.size()));
  s.recipes.resize(k);
  s.n_per_class = rc.size("synth.n_per_class");
  s.test_per_class = rc.size("synth.test_per_class");
  s.valid_fraction = rc.num("synth.valid_fraction");
  s.channels = rc.size("synth.channels");
  s.samples = rc.size("synth.samples");
  s.rate = rc.num("synth.rate");
  s.seed = rc.seed();
  if (const auto ratio = rc.str("synth.imbalance"); !ratio.empty()) s.class_weights = parse_ratio(ratio);
  if (!s.n_per_class || !s.channels || s.samples < 2 || !(s.rate > 0))
    throw ConfigError("synth geometry must be positive");
  if (!(s.valid_fraction >= 0 && s.valid_fraction < 1)) throw ConfigError("synth.valid_fraction must lie in [0, 1)");
  return s;
}

inline SSMDPConfig backbone_config(const RunConfig& rc, std::size_t dataset_channels) {
  Json j = Json::object();
  for (const auto& [k, v] : rc.values().items())
    if (k.rfind("backbone.", 0) == 0) j[k.substr(9)] = v;
  if (j["num_eeg_channels"].get<std::size_t>() == 0) j["num_eeg_channels"] = dataset_channels;
  try {
    auto c = SSMDPConfig::from_json(j);
    c.validate();
    make_schedule(c.schedule, c.steps);
    return c;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

inline OptimConfig optim_config(const RunConfig& rc, const std::string& prefix) {
  Json j = Json::object();
  for (const auto& [k, v] : rc.values().items())
    if (k.rfind(prefix + ".", 0) == 0) j[k.substr(prefix.size() + 1)] = v;
  const OptimConfig base = prefix == "pretrain" ? OptimConfig::pretrain() : OptimConfig::finetune();
  try {
    auto o = OptimConfig::from_json(j, base);
    o.validate();
    return o;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

struct ExtractSettings {
  TapKind tap = TapKind::gate;
  PoolKind pool = PoolKind::std;
  std::size_t pools = 5;
  ExtractionMode mode = ExtractionMode::noiseless;
  int step = 1;
  std::size_t chunk = 8;

  // Directory name of the latent cache for these settings.
  std::string tag() const {
    return std::string(to_string(tap)) + "-" + to_string(pool) + "-" + to_string(mode) + "-s" + std::to_string(step) +
           "-p" + std::to_string(pools);
  }
};

inline ExtractSettings extract_settings(const RunConfig& rc) {
  ExtractSettings s;
  try {
    s.tap = parse_tap_kind(rc.str("extract.tap"));
    s.pool = parse_pool_kind(rc.str("extract.pool"));
    s.mode = parse_extraction_mode(rc.str("extract.mode"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  s.pools = rc.size("extract.pools");
  s.step = rc.get<int>("extract.step");
  s.chunk = std::max<std::size_t>(1, rc.size("extract.chunk"));
  if (!s.pools) throw ConfigError("extract.pools must be positive");
  const int steps = rc.get<int>("backbone.steps");
  if (s.step < 1 || s.step > steps)
    throw ConfigError("extract.step must lie in [1, " + std::to_string(steps) + "]");
  return s;
}

struct FinetuneSettings {
  std::string layers = "all";
  FusionKind fusion = FusionKind::base;
  bool compensate = true;
  bool class_weighted = false;
  std::vector<std::uint64_t> seeds;

  std::string tag(const ExtractSettings& x) const {
    return x.tag() + "-" + layers + "-" + to_string(fusion) + (class_weighted ? "-cw" : "");
  }
};

inline FinetuneSettings finetune_settings(const RunConfig& rc) {
  FinetuneSettings f;
  f.layers = rc.str("lft.layers");
  try {
    f.fusion = parse_fusion_kind(rc.str("lft.fusion"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  f.compensate = rc.flag("lft.compensate");
  f.class_weighted = rc.flag("finetune.class_weights");
  const auto n = rc.size("finetune.seeds");
  if (!n) throw ConfigError("finetune.seeds must be positive");
  for (std::size_t i = 0; i < n; ++i) f.seeds.push_back(rc.seed() + i);
  return f;
}

// LFT geometry for latents of the given shape, before any layer restriction.
inline LFTConfig reference_lft(const RunConfig& rc, std::size_t layers, std::size_t pools, std::size_t width,
                               std::size_t channels, std::size_t classes) {
  LFTConfig c;
  c.fusion_blocks = layers;
  c.encoder_blocks = rc.size("lft.encoder_blocks");
  c.heads = rc.size("lft.heads");
  c.dim = rc.size("lft.dim");
  c.mlp_hidden = rc.size("lft.mlp_hidden");
  c.tokens = rc.size("lft.tokens");
  c.dropout = rc.num("lft.dropout");
  c.pools = pools;
  c.latent_width = width;
  c.channels = channels;
  c.num_classes = classes;
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

// Checks every typed view without touching data.
inline void validate(const RunConfig& rc) {
  synth_config(rc);
  backbone_config(rc, 1);
  optim_config(rc, "pretrain");
  optim_config(rc, "finetune");
  extract_settings(rc);
  finetune_settings(rc);
  reference_lft(rc, 1, 1, 1, 1, 2);
  if (rc.size("threads") == 0) throw ConfigError("threads must be positive");
  if (rc.num("eval.resample_test") < 0) throw ConfigError("eval.resample_test must be non-negative");
  const auto split = rc.str("eval.split");
  if (split != "train" && split != "valid" && split != "test") throw ConfigError("eval.split must be train, valid or test");
}

}  // namespace eegdm::cli

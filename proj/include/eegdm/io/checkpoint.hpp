#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "eegdm/numerics/errors.hpp"
#include "eegdm/numerics/module.hpp"
#include "eegdm/signal/segment_io.hpp"

// Checkpoint directory:
//   manifest.json     {format, version, kind, config, meta, tensors[], optimizer}
//   raw/<name>.f32    little-endian float32 values, row-major
//   ema/<name>.f32    EMA shadow of the same tensor
//   adam/<name>.m.f32, adam/<name>.v.f32   optional optimizer moments
namespace eegdm {

inline constexpr const char* kCheckpointFormat = "eegdm-checkpoint";
inline constexpr int kCheckpointVersion = 1;

struct CheckpointTensor {
  std::string name;
  bool decay = true;
  Tensor<float> raw;
  std::optional<Tensor<float>> ema;
  std::optional<Tensor<float>> adam_m, adam_v;
};

struct Checkpoint {
  std::string kind;  // "ssmdp" or "lft"
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();
  std::vector<CheckpointTensor> tensors;
  std::size_t optimizer_steps = 0;

  bool has_ema() const { return !tensors.empty() && tensors.front().ema.has_value(); }
  bool has_optimizer() const { return !tensors.empty() && tensors.front().adam_m.has_value(); }

  const CheckpointTensor& find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return t;
    throw DataError("checkpoint has no tensor '" + name + "'");
  }
};

namespace detail {

inline void write_blob(const std::filesystem::path& path, const Tensor<float>& t) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  write_f32le(os, t.values());
  if (!os) throw DataError("write failed for " + path.string());
}

inline Tensor<float> read_blob(const std::filesystem::path& path, const Shape& shape) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  Tensor<float> t(shape);
  read_f32le(is, t.values());
  if (is.peek() != std::char_traits<char>::eof()) throw DataError("trailing bytes in " + path.string());
  return t;
}

inline nlohmann::ordered_json shape_json(const Shape& s) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (auto d : s) j.push_back(d);
  return j;
}

}  // namespace detail

// Builds a checkpoint from live parameters, an optional EMA shadow (same
// order) and optional Adam moments.
inline Checkpoint make_checkpoint(std::string kind, nlohmann::ordered_json config, const ParamList<float>& params,
                                  const std::vector<Tensor<float>>* ema = nullptr,
                                  const std::vector<Tensor<float>>* adam_m = nullptr,
                                  const std::vector<Tensor<float>>* adam_v = nullptr, std::size_t adam_steps = 0) {
  Checkpoint c;
  c.kind = std::move(kind);
  c.config = std::move(config);
  c.optimizer_steps = adam_steps;
  for (std::size_t i = 0; i < params.size(); ++i) {
    CheckpointTensor t{params[i].name, params[i].decay, params[i].var.value(), {}, {}, {}};
    if (ema) t.ema = ema->at(i);
    if (adam_m && adam_v) {
      t.adam_m = adam_m->at(i);
      t.adam_v = adam_v->at(i);
    }
    c.tensors.push_back(std::move(t));
  }
  return c;
}

inline void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& c) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "raw");
  if (c.has_ema()) fs::create_directories(dir / "ema");
  if (c.has_optimizer()) fs::create_directories(dir / "adam");
  nlohmann::ordered_json index = nlohmann::ordered_json::array();
  for (const auto& t : c.tensors) {
    nlohmann::ordered_json e{{"name", t.name}, {"shape", detail::shape_json(t.raw.shape())}, {"decay", t.decay}};
    e["raw"] = "raw/" + t.name + ".f32";
    detail::write_blob(dir / e["raw"].get<std::string>(), t.raw);
    if (t.ema) {
      e["ema"] = "ema/" + t.name + ".f32";
      detail::write_blob(dir / e["ema"].get<std::string>(), *t.ema);
    }
    if (t.adam_m && t.adam_v) {
      e["adam_m"] = "adam/" + t.name + ".m.f32";
      e["adam_v"] = "adam/" + t.name + ".v.f32";
      detail::write_blob(dir / e["adam_m"].get<std::string>(), *t.adam_m);
      detail::write_blob(dir / e["adam_v"].get<std::string>(), *t.adam_v);
    }
    index.push_back(std::move(e));
  }
  nlohmann::ordered_json m{{"format", kCheckpointFormat}, {"version", kCheckpointVersion}, {"kind", c.kind}};
  m["config"] = c.config;
  m["meta"] = c.meta;
  m["tensors"] = std::move(index);
  if (c.has_optimizer()) m["optimizer"] = {{"type", "adamw"}, {"steps", c.optimizer_steps}};
  // manifest last, so a directory with a manifest is complete
  std::ofstream os(dir / "manifest.json", std::ios::trunc);
  if (!os) throw DataError("cannot write " + (dir / "manifest.json").string());
  os << m.dump(2) << '\n';
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto mpath = dir / "manifest.json";
  std::ifstream is(mpath);
  if (!is) throw DataError("missing checkpoint: " + mpath.string());
  nlohmann::ordered_json m;
  try {
    m = nlohmann::ordered_json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad checkpoint manifest " + mpath.string() + ": " + e.what());
  }
  if (m.value("format", std::string()) != kCheckpointFormat) throw DataError("not a checkpoint: " + mpath.string());
  if (m.value("version", 0) != kCheckpointVersion)
    throw DataError("unsupported checkpoint version in " + mpath.string());
  Checkpoint c;
  c.kind = m.at("kind").get<std::string>();
  c.config = m.at("config");
  c.meta = m.value("meta", nlohmann::ordered_json::object());
  if (m.contains("optimizer")) c.optimizer_steps = m["optimizer"].value("steps", std::size_t{0});
  for (const auto& e : m.at("tensors")) {
    const Shape shape = e.at("shape").get<Shape>();
    CheckpointTensor t{e.at("name").get<std::string>(), e.value("decay", true),
                       detail::read_blob(dir / e.at("raw").get<std::string>(), shape), {}, {}, {}};
    if (e.contains("ema")) t.ema = detail::read_blob(dir / e["ema"].get<std::string>(), shape);
    if (e.contains("adam_m") && e.contains("adam_v")) {
      t.adam_m = detail::read_blob(dir / e["adam_m"].get<std::string>(), shape);
      t.adam_v = detail::read_blob(dir / e["adam_v"].get<std::string>(), shape);
    }
    c.tensors.push_back(std::move(t));
  }
  return c;
}

enum class WeightSet { raw, ema };

// Copies raw or EMA weights into `params`, matching by name and shape.
inline void load_weights(const Checkpoint& c, const ParamList<float>& params, WeightSet which = WeightSet::ema) {
  if (params.size() != c.tensors.size())
    throw DataError("checkpoint has " + std::to_string(c.tensors.size()) + " tensors, model has " +
                    std::to_string(params.size()));
  for (const auto& p : params) {
    const auto& t = c.find(p.name);
    if (t.raw.shape() != p.var.shape())
      throw DataError("shape mismatch for '" + p.name + "': checkpoint " + shape_string(t.raw.shape()) + " vs model " +
                      shape_string(p.var.shape()));
    Var<float> v = p.var;
    if (which == WeightSet::ema) {
      if (!t.ema) throw DataError("checkpoint has no EMA weights for '" + p.name + "'");
      v.mutable_value() = *t.ema;
    } else {
      v.mutable_value() = t.raw;
    }
  }
}

// Tensors of one kind in parameter order.
inline std::vector<Tensor<float>> checkpoint_tensors(const Checkpoint& c, const ParamList<float>& params,
                                                     const std::string& which) {
  std::vector<Tensor<float>> out;
  for (const auto& p : params) {
    const auto& t = c.find(p.name);
    const std::optional<Tensor<float>>* src = which == "ema" ? &t.ema : which == "adam_m" ? &t.adam_m : &t.adam_v;
    if (!src->has_value()) throw DataError("checkpoint lacks " + which + " for '" + p.name + "'");
    out.push_back(**src);
  }
  return out;
}

// 64-bit FNV-1a, used for cache fingerprints.
class Fnv1a {
 public:
  Fnv1a& add(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ULL;
    }
    return *this;
  }
  Fnv1a& add(const std::string& s) {
    add(s.data(), s.size());
    const char sep = '\x1f';
    return add(&sep, 1);
  }
  Fnv1a& add_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot read " + path.string());
    std::vector<char> buf(1 << 16);
    while (is) {
      is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
      add(buf.data(), static_cast<std::size_t>(is.gcount()));
    }
    return *this;
  }
  std::uint64_t value() const { return h_; }
  std::string hex() const {
    char s[17];
    std::snprintf(s, sizeof s, "%016llx", static_cast<unsigned long long>(h_));
    return s;
  }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

// Fingerprint of a checkpoint directory: manifest plus every blob it lists.
inline std::string checkpoint_fingerprint(const std::filesystem::path& dir) {
  Fnv1a h;
  h.add_file(dir / "manifest.json");
  std::ifstream is(dir / "manifest.json");
  const auto m = nlohmann::json::parse(is);
  for (const auto& e : m.at("tensors")) {
    h.add_file(dir / e.at("raw").get<std::string>());
    if (e.contains("ema")) h.add_file(dir / e["ema"].get<std::string>());
  }
  return h.hex();
}

}  // namespace eegdm

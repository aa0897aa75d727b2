#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "eegdm/io/checkpoint.hpp"
#include "eegdm/latent/pool.hpp"

// Pooled latents for one dataset split:
//   <split>.f32   (S, C, n, p, H) float32 little-endian
//   <split>.json  sidecar {S, C, n, p, H, pool_kind, tap, mode, step, rate,
//                 labels, fingerprint}
namespace eegdm {

struct LatentSplit {
  Tensor<float> values;  // (S, C, n, p, H)
  std::vector<int> labels;
  PoolKind pool = PoolKind::std;
  std::string tap = "gate";
  std::string mode = "noiseless";
  int step = 1;
  double rate = 0.0;
  std::string fingerprint;

  std::size_t segments() const { return values.dim(0); }
  std::size_t channels() const { return values.dim(1); }
  std::size_t layers() const { return values.dim(2); }
  std::size_t pools() const { return values.dim(3); }
  std::size_t width() const { return values.dim(4); }

  nlohmann::ordered_json sidecar() const {
    nlohmann::ordered_json j{{"S", segments()}, {"C", channels()}, {"n", layers()},       {"p", pools()},
                             {"H", width()},    {"pool_kind", to_string(pool)},          {"tap", tap},
                             {"mode", mode},    {"step", step},     {"rate", detail::rate_json(rate)}};
    j["labels"] = labels;
    j["fingerprint"] = fingerprint;
    return j;
  }
};

inline std::filesystem::path latent_blob_path(const std::filesystem::path& dir, const std::string& split) {
  return dir / (split + ".f32");
}
inline std::filesystem::path latent_sidecar_path(const std::filesystem::path& dir, const std::string& split) {
  return dir / (split + ".json");
}

inline void save_latent_split(const std::filesystem::path& dir, const std::string& split, const LatentSplit& s) {
  if (s.values.rank() != 5) throw std::invalid_argument("latent cache: values must be (S, C, n, p, H)");
  if (s.labels.size() != s.segments()) throw std::invalid_argument("latent cache: one label per segment required");
  std::filesystem::create_directories(dir);
  detail::write_blob(latent_blob_path(dir, split), s.values);
  std::ofstream os(latent_sidecar_path(dir, split), std::ios::trunc);
  if (!os) throw DataError("cannot write latent sidecar in " + dir.string());
  os << s.sidecar().dump(2) << '\n';
}

inline LatentSplit load_latent_split(const std::filesystem::path& dir, const std::string& split) {
  std::ifstream is(latent_sidecar_path(dir, split));
  if (!is) throw DataError("missing latent cache for split '" + split + "' in " + dir.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad latent sidecar: " + std::string(e.what()));
  }
  LatentSplit s;
  const Shape shape{j.at("S").get<std::size_t>(), j.at("C").get<std::size_t>(), j.at("n").get<std::size_t>(),
                    j.at("p").get<std::size_t>(), j.at("H").get<std::size_t>()};
  s.values = detail::read_blob(latent_blob_path(dir, split), shape);
  s.labels = j.at("labels").get<std::vector<int>>();
  s.pool = parse_pool_kind(j.at("pool_kind").get<std::string>());
  s.tap = j.at("tap").get<std::string>();
  s.mode = j.value("mode", s.mode);
  s.step = j.at("step").get<int>();
  s.rate = j.value("rate", 0.0);
  s.fingerprint = j.value("fingerprint", std::string());
  if (s.labels.size() != s.segments()) throw DataError("latent sidecar label count does not match S");
  return s;
}

// Sidecar fingerprint of an existing cache entry, if any.
inline std::optional<std::string> cached_fingerprint(const std::filesystem::path& dir, const std::string& split) {
  std::ifstream is(latent_sidecar_path(dir, split));
  if (!is || !std::filesystem::exists(latent_blob_path(dir, split))) return std::nullopt;
  try {
    return nlohmann::json::parse(is).value("fingerprint", std::string());
  } catch (const nlohmann::json::exception&) {
    return std::nullopt;
  }
}

}  // namespace eegdm

#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "eegdm/numerics/errors.hpp"
#include "eegdm/signal/segment.hpp"
#include "eegdm/signal/segment_io.hpp"

namespace eegdm {

struct ManifestEntry {
  std::string path;  // relative to the manifest directory
  int label = 0;
};

struct DatasetManifest {
  static constexpr const char* kSplits[] = {"train", "valid", "test"};

  int num_classes = 0;
  std::vector<std::string> class_names;
  std::size_t channels = 0;
  std::size_t samples = 0;
  double rate = 0.0;
  std::uint64_t seed = 0;
  std::map<std::string, std::vector<ManifestEntry>> splits;

  std::vector<int> histogram(const std::string& split) const {
    std::vector<int> h(num_classes, 0);
    if (auto it = splits.find(split); it != splits.end())
      for (const auto& e : it->second) ++h.at(e.label);
    return h;
  }

  // Class counts over every split.
  std::vector<int> histogram() const {
    std::vector<int> h(num_classes, 0);
    for (const auto& [name, entries] : splits)
      for (const auto& e : entries) ++h.at(e.label);
    return h;
  }

  std::size_t file_count() const {
    std::size_t n = 0;
    for (const auto& [name, entries] : splits) n += entries.size();
    return n;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["num_classes"] = num_classes;
    j["class_names"] = class_names;
    j["channels"] = channels;
    j["samples"] = samples;
    j["rate"] = detail::rate_json(rate);
    j["seed"] = seed;
    j["histogram"] = histogram();
    nlohmann::ordered_json sp = nlohmann::ordered_json::object();
    nlohmann::ordered_json hist = nlohmann::ordered_json::object();
    for (const char* name : kSplits) {
      nlohmann::ordered_json list = nlohmann::ordered_json::array();
      if (auto it = splits.find(name); it != splits.end())
        for (const auto& e : it->second) list.push_back({{"path", e.path}, {"label", e.label}});
      sp[name] = std::move(list);
      hist[name] = histogram(name);
    }
    j["split_histograms"] = std::move(hist);
    j["splits"] = std::move(sp);
    return j;
  }

  static DatasetManifest from_json(const nlohmann::json& j) {
    DatasetManifest m;
    m.num_classes = j.at("num_classes").get<int>();
    m.class_names = j.value("class_names", std::vector<std::string>{});
    m.channels = j.at("channels").get<std::size_t>();
    m.samples = j.at("samples").get<std::size_t>();
    m.rate = j.at("rate").get<double>();
    m.seed = j.value("seed", std::uint64_t{0});
    for (const auto& [name, list] : j.at("splits").items())
      for (const auto& e : list) m.splits[name].push_back({e.at("path").get<std::string>(), e.at("label").get<int>()});
    return m;
  }
};

inline void save_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write manifest " + path.string());
  os << m.to_json().dump(2) << '\n';
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open manifest " + path.string());
  try {
    return DatasetManifest::from_json(nlohmann::json::parse(is));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad manifest " + path.string() + ": " + e.what());
  }
}

// Loads every segment of `split` into one batch; paths resolve against `root`.
inline SegmentBatch load_split(const DatasetManifest& m, const std::filesystem::path& root, const std::string& split) {
  auto it = m.splits.find(split);
  if (it == m.splits.end() || it->second.empty()) throw DataError("split '" + split + "' is empty");
  const auto& entries = it->second;
  SegmentBatch batch;
  batch.sample_rate = m.rate;
  batch.signals = Tensor<float>(Shape{entries.size(), m.channels, m.samples});
  for (std::size_t c = 0; c < m.channels; ++c) batch.channel_ids.push_back(static_cast<int>(c));
  const std::size_t n = m.channels * m.samples;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto seg = read_segment(root / entries[i].path);
    if (seg.signal.dim(0) != m.channels || seg.signal.dim(1) != m.samples || seg.rate != m.rate)
      throw DataError("segment " + entries[i].path + " does not match manifest geometry");
    std::copy_n(seg.signal.data(), n, batch.signals.data() + i * n);
    batch.labels.push_back(seg.label);
  }
  batch.validate(m.num_classes);
  return batch;
}

}  // namespace eegdm

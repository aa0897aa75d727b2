#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "eegdm/numerics/errors.hpp"
#include "eegdm/numerics/tensor.hpp"

namespace eegdm {

namespace detail {

inline void write_f32le(std::ostream& os, std::span<const float> values) {
  std::vector<char> buf(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) buf[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xffu);
  }
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

inline void read_f32le(std::istream& is, std::span<float> values) {
  std::vector<unsigned char> buf(values.size() * 4);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(is.gcount()) != buf.size()) throw DataError("truncated float payload");
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(buf[i * 4 + b]) << (8 * b);
    values[i] = std::bit_cast<float>(bits);
  }
}

inline nlohmann::ordered_json rate_json(double rate) {
  if (rate == std::floor(rate) && std::abs(rate) < 1e15) return static_cast<std::int64_t>(rate);
  return rate;
}

}  // namespace detail

struct Segment {
  Tensor<float> signal;  // (channels, samples)
  double rate = 0.0;
  int label = 0;
};

// One JSON header line followed by channels * samples little-endian float32
// values in channel-major order.
inline void write_segment(const std::filesystem::path& path, const Segment& seg) {
  if (seg.signal.rank() != 2) throw std::invalid_argument("write_segment: signal must be (channels, samples)");
  nlohmann::ordered_json header;
  header["channels"] = seg.signal.dim(0);
  header["samples"] = seg.signal.dim(1);
  header["rate"] = detail::rate_json(seg.rate);
  header["label"] = seg.label;
  header["dtype"] = "f32le";
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write segment " + path.string());
  os << header.dump() << '\n';
  detail::write_f32le(os, seg.signal.values());
  if (!os) throw DataError("failed writing segment " + path.string());
}

inline Segment read_segment(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open segment " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw DataError("missing segment header in " + path.string());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad segment header in " + path.string() + ": " + e.what());
  }
  if (header.value("dtype", std::string{}) != "f32le") throw DataError("unsupported dtype in " + path.string());
  Segment seg;
  const auto channels = header.at("channels").get<std::size_t>();
  const auto samples = header.at("samples").get<std::size_t>();
  seg.rate = header.at("rate").get<double>();
  seg.label = header.at("label").get<int>();
  seg.signal = Tensor<float>(Shape{channels, samples});
  detail::read_f32le(is, seg.signal.values());
  return seg;
}

}  // namespace eegdm

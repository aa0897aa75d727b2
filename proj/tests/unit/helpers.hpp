#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>

#include "eegdm/numerics/random.hpp"
#include "eegdm/numerics/tensor.hpp"

namespace testutil {

// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("eegdm_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

template <class T = double>
eegdm::Tensor<T> randn(eegdm::Shape s, eegdm::Rng& rng, double scale = 1.0) {
  eegdm::Tensor<T> t(std::move(s));
  for (auto& v : t.values()) v = static_cast<T>(rng.normal(0.0, scale));
  return t;
}

// Power at `freq` of x sampled at `rate`, by direct DFT projection.
inline double tone_power(const float* x, std::size_t n, double freq, double rate) {
  double re = 0, im = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double ph = 2.0 * 3.14159265358979323846 * freq * double(k) / rate;
    re += x[k] * std::cos(ph);
    im -= x[k] * std::sin(ph);
  }
  return (re * re + im * im) / double(n);
}

}  // namespace testutil

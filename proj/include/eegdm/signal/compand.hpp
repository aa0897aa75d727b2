#pragma once

#include <cmath>
#include <span>
#include <stdexcept>

namespace eegdm {

inline constexpr double kMuLaw = 255.0;

// Identity inside [-1, 1]; logarithmic compression of the tails outside it.
inline double mu_law_compand(double x, double mu = kMuLaw) {
  if (std::isnan(x)) throw std::invalid_argument("mu_law_compand: NaN input");
  const double ax = std::abs(x);
  if (ax <= 1.0) return x;
  return std::copysign(std::log1p(mu * ax) / std::log1p(mu), x);
}

template <class T>
void mu_law_compand_inplace(std::span<T> xs, double mu = kMuLaw) {
  for (auto& v : xs) v = static_cast<T>(mu_law_compand(static_cast<double>(v), mu));
}

}  // namespace eegdm

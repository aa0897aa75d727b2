#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "eegdm/numerics/fft.hpp"
#include "eegdm/numerics/random.hpp"

namespace eegdm {

using cplx = std::complex<double>;

// Exact ratio new_rate / old_rate. Kept rational so that retargeting by r and
// then by 1/r restores the original step bit for bit.
struct RateRatio {
  std::int64_t num = 1;
  std::int64_t den = 1;

  RateRatio() = default;
  RateRatio(std::int64_t n, std::int64_t d) : num(n), den(d) {
    if (num <= 0 || den <= 0) throw std::invalid_argument("RateRatio: ratio must be positive");
    const auto g = std::gcd(num, den);
    num /= g;
    den /= g;
  }

  // Continued-fraction approximation of a positive double.
  static RateRatio from_double(double r, double tol = 1e-12, std::int64_t max_den = 1'000'000'000) {
    if (!(r > 0) || !std::isfinite(r)) throw std::invalid_argument("retarget_rate: ratio must be positive");
    std::int64_t h0 = 0, h1 = 1, k0 = 1, k1 = 0;
    double x = r;
    for (int it = 0; it < 64; ++it) {
      const double a = std::floor(x);
      const auto ai = static_cast<std::int64_t>(a);
      const std::int64_t h2 = ai * h1 + h0, k2 = ai * k1 + k0;
      if (k2 > max_den) break;
      h0 = h1, h1 = h2, k0 = k1, k1 = k2;
      if (std::abs(static_cast<double>(h1) / static_cast<double>(k1) - r) <= tol * r) break;
      const double frac = x - a;
      if (frac < 1e-15) break;
      x = 1.0 / frac;
    }
    return RateRatio(h1, k1);
  }

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  RateRatio inverse() const { return RateRatio(den, num); }
  RateRatio operator*(const RateRatio& o) const {
    const auto g1 = std::gcd(num, o.den), g2 = std::gcd(o.num, den);
    return RateRatio((num / g1) * (o.num / g2), (den / g2) * (o.den / g1));
  }
  bool operator==(const RateRatio&) const = default;
};

// Single diagonal state-space system x -> y with A_i = -exp(rho_i) + i imag_i.
struct S4DLayer {
  std::vector<double> rho;
  std::vector<double> a_imag;
  std::vector<cplx> b;
  std::vector<cplx> c;
  double d = 1.0;
  double log_dt = std::log(1e-2);
  RateRatio rate;  // cumulative new_rate / old_rate

  std::size_t state_dim() const { return rho.size(); }
  cplx a(std::size_t i) const { return {-std::exp(rho[i]), a_imag[i]}; }
  double dt() const {
    return std::exp(log_dt) * static_cast<double>(rate.den) / static_cast<double>(rate.num);
  }

  bool operator==(const S4DLayer&) const = default;
};

// A_k = -1/2 + i pi k, B = 1, C ~ CN(0, 1) / sqrt(N), D = 1, dt log-uniform.
inline S4DLayer init_diag_lin(std::size_t state_dim, Rng& rng, double dt_min = 1e-3, double dt_max = 1e-1) {
  if (state_dim == 0) throw std::invalid_argument("init_diag_lin: state_dim must be >= 1");
  S4DLayer layer;
  layer.rho.assign(state_dim, std::log(0.5));
  layer.a_imag.resize(state_dim);
  layer.b.assign(state_dim, cplx(1.0, 0.0));
  layer.c.resize(state_dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(state_dim));
  for (std::size_t k = 0; k < state_dim; ++k) {
    layer.a_imag[k] = std::numbers::pi * static_cast<double>(k);
    // unit-variance complex normal: each part has variance 1/2
    const double re = rng.normal(0.0, std::sqrt(0.5)), im = rng.normal(0.0, std::sqrt(0.5));
    layer.c[k] = cplx(re, im) * scale;
  }
  layer.log_dt = rng.uniform(std::log(dt_min), std::log(dt_max));
  return layer;
}

struct Discretized {
  std::vector<cplx> a_bar;
  std::vector<cplx> b_bar;
};

// Zero-order hold: A_bar = exp(dt A), B_bar = (A_bar - 1) / A * B.
inline Discretized discretize_zoh(const S4DLayer& layer) {
  const double dt = layer.dt();
  if (!(dt > 0)) throw std::invalid_argument("discretize_zoh: step must be positive");
  Discretized out;
  out.a_bar.resize(layer.state_dim());
  out.b_bar.resize(layer.state_dim());
  for (std::size_t i = 0; i < layer.state_dim(); ++i) {
    const cplx a = layer.a(i);
    if (a == cplx(0.0, 0.0)) throw std::invalid_argument("discretize_zoh: A_i = 0");
    out.a_bar[i] = std::exp(dt * a);
    out.b_bar[i] = (out.a_bar[i] - 1.0) / a * layer.b[i];
  }
  return out;
}

// K[j] = Re sum_i C_i A_bar_i^j B_bar_i for j < length.
inline std::vector<double> materialize_kernel(const S4DLayer& layer, std::size_t length) {
  const auto disc = discretize_zoh(layer);
  std::vector<double> k(length, 0.0);
  for (std::size_t i = 0; i < layer.state_dim(); ++i) {
    cplx w = layer.c[i] * disc.b_bar[i];
    const cplx z = disc.a_bar[i];
    for (std::size_t j = 0; j < length; ++j) {
      k[j] += w.real();
      w *= z;
    }
  }
  return k;
}

// Linear convolution of x with the causal kernel via a zero-padded real FFT
// of length next_pow2(2L), plus the D skip term.
template <class T>
std::vector<T> apply_conv(const S4DLayer& layer, std::span<const T> x) {
  const std::size_t len = x.size();
  if (len == 0) return {};
  const auto kernel = materialize_kernel(layer, len);
  const std::size_t n = next_pow2(2 * len);
  auto& fft = RealFft<T>::get(n);
  std::vector<T> kt(kernel.begin(), kernel.end());
  std::vector<std::complex<T>> xs(fft.bins()), ks(fft.bins());
  fft.forward(x, xs);
  fft.forward(kt, ks);
  for (std::size_t f = 0; f < xs.size(); ++f) xs[f] *= ks[f];
  std::vector<T> y(len);
  fft.inverse(xs, y);
  const T inv_n = T(1) / static_cast<T>(n);
  const T d = static_cast<T>(layer.d);
  for (std::size_t t = 0; t < len; ++t) y[t] = y[t] * inv_n + d * x[t];
  return y;
}

// h_k = A_bar h_{k-1} + B_bar x_k, y_k = Re(C h_k) + D x_k.
template <class T>
std::vector<T> apply_recurrent(const S4DLayer& layer, std::span<const T> x) {
  using ct = std::complex<T>;
  const auto disc = discretize_zoh(layer);
  const std::size_t n = layer.state_dim();
  std::vector<ct> h(n), ab(n), bb(n), c(n);
  for (std::size_t i = 0; i < n; ++i) {
    ab[i] = ct(disc.a_bar[i]);
    bb[i] = ct(disc.b_bar[i]);
    c[i] = ct(layer.c[i]);
  }
  std::vector<T> y(x.size());
  const T d = static_cast<T>(layer.d);
  for (std::size_t k = 0; k < x.size(); ++k) {
    T acc{};
    for (std::size_t i = 0; i < n; ++i) {
      h[i] = ab[i] * h[i] + bb[i] * x[k];
      acc += (c[i] * h[i]).real();
    }
    y[k] = acc + d * x[k];
  }
  return y;
}

// Forward layer on x plus backward layer on the time-reversed x.
template <class T>
std::vector<T> bidirectional_apply(const S4DLayer& fwd, const S4DLayer& bwd, std::span<const T> x) {
  if (fwd.state_dim() != bwd.state_dim()) throw std::invalid_argument("bidirectional_apply: state_dim mismatch");
  auto y = apply_conv<T>(fwd, x);
  std::vector<T> xr(x.rbegin(), x.rend());
  auto yr = apply_conv<T>(bwd, xr);
  for (std::size_t t = 0; t < y.size(); ++t) y[t] += yr[y.size() - 1 - t];
  return y;
}

// Same continuous system sampled at ratio * old rate: dt' = dt / ratio.
inline S4DLayer retarget_rate(const S4DLayer& layer, const RateRatio& ratio) {
  S4DLayer out = layer;
  out.rate = layer.rate * ratio;
  return out;
}

inline S4DLayer retarget_rate(const S4DLayer& layer, double ratio) {
  return retarget_rate(layer, RateRatio::from_double(ratio));
}

}  // namespace eegdm

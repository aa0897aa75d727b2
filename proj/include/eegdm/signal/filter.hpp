#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace eegdm {

// Normalized second-order section (a0 == 1), transposed direct form II.
struct Biquad {
  double b0 = 1, b1 = 0, b2 = 0, a1 = 0, a2 = 0;

  // Gain of the section at frequency `freq` for sample rate `rate`.
  double magnitude(double freq, double rate) const {
    const double w = 2.0 * std::numbers::pi * freq / rate;
    const double cr = std::cos(w), sr = std::sin(w), c2 = std::cos(2 * w), s2 = std::sin(2 * w);
    const double nr = b0 + b1 * cr + b2 * c2, ni = -(b1 * sr + b2 * s2);
    const double dr = 1.0 + a1 * cr + a2 * c2, di = -(a1 * sr + a2 * s2);
    return std::sqrt((nr * nr + ni * ni) / (dr * dr + di * di));
  }
};

namespace detail {

inline Biquad normalized(double b0, double b1, double b2, double a0, double a1, double a2) {
  return Biquad{b0 / a0, b1 / a0, b2 / a0, a1 / a0, a2 / a0};
}

inline void check_cutoff(double cutoff, double rate, const char* what) {
  if (!(rate > 0) || !(cutoff > 0) || cutoff >= rate / 2)
    throw std::invalid_argument(std::string(what) + ": cutoff must lie in (0, rate/2)");
}

// Pole-pair quality factors of an even-order Butterworth prototype.
inline std::vector<double> butterworth_q(int order) {
  if (order < 2 || order % 2) throw std::invalid_argument("butterworth: order must be even and >= 2");
  std::vector<double> qs;
  for (int k = 0; k < order / 2; ++k)
    qs.push_back(1.0 / (2.0 * std::cos(std::numbers::pi * (2.0 * k + 1.0) / (2.0 * order))));
  return qs;
}

}  // namespace detail

// Bilinear-transform Butterworth sections (RBJ forms with prewarped cutoff).
inline std::vector<Biquad> butterworth_lowpass(int order, double cutoff, double rate) {
  detail::check_cutoff(cutoff, rate, "butterworth_lowpass");
  const double w0 = 2.0 * std::numbers::pi * cutoff / rate, cw = std::cos(w0), sw = std::sin(w0);
  std::vector<Biquad> out;
  for (double q : detail::butterworth_q(order)) {
    const double alpha = sw / (2.0 * q);
    out.push_back(detail::normalized((1 - cw) / 2, 1 - cw, (1 - cw) / 2, 1 + alpha, -2 * cw, 1 - alpha));
  }
  return out;
}

inline std::vector<Biquad> butterworth_highpass(int order, double cutoff, double rate) {
  detail::check_cutoff(cutoff, rate, "butterworth_highpass");
  const double w0 = 2.0 * std::numbers::pi * cutoff / rate, cw = std::cos(w0), sw = std::sin(w0);
  std::vector<Biquad> out;
  for (double q : detail::butterworth_q(order)) {
    const double alpha = sw / (2.0 * q);
    out.push_back(detail::normalized((1 + cw) / 2, -(1 + cw), (1 + cw) / 2, 1 + alpha, -2 * cw, 1 - alpha));
  }
  return out;
}

inline Biquad notch(double freq, double q, double rate) {
  detail::check_cutoff(freq, rate, "notch");
  const double w0 = 2.0 * std::numbers::pi * freq / rate, cw = std::cos(w0);
  const double alpha = std::sin(w0) / (2.0 * q);
  return detail::normalized(1, -2 * cw, 1, 1 + alpha, -2 * cw, 1 - alpha);
}

inline double cascade_magnitude(const std::vector<Biquad>& sections, double freq, double rate) {
  double g = 1.0;
  for (const auto& s : sections) g *= s.magnitude(freq, rate);
  return g;
}

// Causal, forward-only filtering in double precision.
template <class T>
void apply_cascade(const std::vector<Biquad>& sections, std::span<T> x) {
  for (const auto& s : sections) {
    double z1 = 0, z2 = 0;
    for (auto& v : x) {
      const double in = static_cast<double>(v);
      const double out = s.b0 * in + z1;
      z1 = s.b1 * in - s.a1 * out + z2;
      z2 = s.b2 * in - s.a2 * out;
      v = static_cast<T>(out);
    }
  }
}

}  // namespace eegdm

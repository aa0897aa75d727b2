#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace eegdm {

// Cumulative signal fractions alpha_bar_1..alpha_bar_T of a diffusion
// process. Step 0 denotes the clean signal (alpha_bar_0 = 1).
class NoiseSchedule {
 public:
  NoiseSchedule() = default;

  explicit NoiseSchedule(std::vector<double> alpha_bar) : alpha_bar_(std::move(alpha_bar)) {
    if (alpha_bar_.empty()) throw std::invalid_argument("NoiseSchedule: T must be >= 1");
    for (std::size_t i = 0; i < alpha_bar_.size(); ++i) {
      if (!(alpha_bar_[i] > 0.0 && alpha_bar_[i] < 1.0))
        throw std::invalid_argument("NoiseSchedule: alpha_bar must lie in (0, 1)");
      if (i && !(alpha_bar_[i] < alpha_bar_[i - 1]))
        throw std::invalid_argument("NoiseSchedule: alpha_bar must be strictly decreasing");
    }
  }

  int steps() const noexcept { return static_cast<int>(alpha_bar_.size()); }

  void check_step(int t) const {
    if (t < 1 || t > steps())
      throw std::out_of_range("diffusion step " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
  }

  double alpha_bar(int t) const {
    if (t == 0) return 1.0;
    check_step(t);
    return alpha_bar_[t - 1];
  }
  double sqrt_alpha_bar(int t) const { return std::sqrt(alpha_bar(t)); }
  double sqrt_one_minus_alpha_bar(int t) const { return std::sqrt(1.0 - alpha_bar(t)); }

  double beta(int t) const {
    check_step(t);
    return 1.0 - alpha_bar(t) / alpha_bar(t - 1);
  }

  // Posterior variance (1 - ab_{t-1}) / (1 - ab_t) * beta_t used by the sampler.
  double sigma2(int t) const {
    check_step(t);
    return (1.0 - alpha_bar(t - 1)) / (1.0 - alpha_bar(t)) * beta(t);
  }

  const std::vector<double>& values() const noexcept { return alpha_bar_; }

 private:
  std::vector<double> alpha_bar_;
};

// alpha_bar_t = f(t) / f(0), f(t) = cos^2(((t/T + s) / (1 + s)) * pi/2),
// clipped into [1e-5, 1 - 1e-5].
inline NoiseSchedule cosine_schedule(int steps, double s = 0.008) {
  if (steps < 1) throw std::invalid_argument("cosine_schedule: T must be >= 1");
  auto f = [&](double t) {
    const double c = std::cos((t / steps + s) / (1.0 + s) * std::numbers::pi / 2.0);
    return c * c;
  };
  const double f0 = f(0.0);
  std::vector<double> ab(steps);
  for (int t = 1; t <= steps; ++t) ab[t - 1] = std::clamp(f(t) / f0, 1e-5, 1.0 - 1e-5);
  return NoiseSchedule(std::move(ab));
}

// alpha_bar_t = prod_{i <= t} (1 - beta_i) with beta linearly spaced.
inline NoiseSchedule linear_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw std::invalid_argument("linear_schedule: T must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw std::invalid_argument("linear_schedule: need 0 < beta_start <= beta_end < 1");
  std::vector<double> ab(steps);
  double prod = 1.0;
  for (int t = 1; t <= steps; ++t) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(t - 1) / (steps - 1);
    prod *= 1.0 - (beta_start + (beta_end - beta_start) * frac);
    ab[t - 1] = prod;
  }
  return NoiseSchedule(std::move(ab));
}

// DDPM's 1e-4..0.02 linear range rescaled to T steps (same total noise as
// the 1000-step reference).
inline NoiseSchedule linear_schedule(int steps) {
  const double scale = 1000.0 / steps;
  return linear_schedule(steps, std::min(1e-4 * scale, 0.5), std::min(0.02 * scale, 0.999));
}

inline NoiseSchedule make_schedule(const std::string& kind, int steps) {
  if (kind == "cosine") return cosine_schedule(steps);
  if (kind == "linear") return linear_schedule(steps);
  throw std::invalid_argument("unknown noise schedule '" + kind + "'");
}

// CSV with columns t, alpha_bar, sqrt_alpha_bar, sigma.
inline void write_schedule_csv(const std::filesystem::path& path, const NoiseSchedule& sched) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "t,alpha_bar,sqrt_alpha_bar,sigma\n" << std::setprecision(10);
  for (int t = 1; t <= sched.steps(); ++t)
    os << t << ',' << sched.alpha_bar(t) << ',' << sched.sqrt_alpha_bar(t) << ',' << std::sqrt(sched.sigma2(t))
       << '\n';
}

}  // namespace eegdm

#pragma once

#include <cmath>
#include <concepts>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "eegdm/diffusion/schedule.hpp"
#include "eegdm/numerics/autograd.hpp"
#include "eegdm/numerics/ops.hpp"
#include "eegdm/numerics/random.hpp"
#include "eegdm/numerics/tensor.hpp"

namespace eegdm {

// Velocity predictor Phi(x_t, t, channel): rows of x are independent signals.
template <class M, class T>
concept VelocityModel = requires(M& m, const Var<T>& x, const std::vector<int>& steps, const std::vector<int>& ch) {
  { m(x, steps, ch) } -> std::convertible_to<Var<T>>;
};

namespace detail {
template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape()) throw std::invalid_argument(std::string(what) + ": shape mismatch");
}
}  // namespace detail

// sqrt(ab) x0 + sqrt(1 - ab) eps
template <class T>
Tensor<T> forward_sample(const Tensor<T>& x0, const Tensor<T>& eps, double alpha_bar) {
  detail::require_same_shape(x0, eps, "forward_sample");
  const T a = static_cast<T>(std::sqrt(alpha_bar)), s = static_cast<T>(std::sqrt(1.0 - alpha_bar));
  Tensor<T> xt(x0.shape());
  for (std::size_t i = 0; i < xt.size(); ++i) xt[i] = a * x0[i] + s * eps[i];
  return xt;
}

template <class T>
Tensor<T> forward_sample(const Tensor<T>& x0, int t, const Tensor<T>& eps, const NoiseSchedule& sched) {
  sched.check_step(t);
  return forward_sample(x0, eps, sched.alpha_bar(t));
}

// sqrt(ab) eps - sqrt(1 - ab) x0
template <class T>
Tensor<T> velocity_target(const Tensor<T>& x0, const Tensor<T>& eps, double alpha_bar) {
  detail::require_same_shape(x0, eps, "velocity_target");
  const T a = static_cast<T>(std::sqrt(alpha_bar)), s = static_cast<T>(std::sqrt(1.0 - alpha_bar));
  Tensor<T> v(x0.shape());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a * eps[i] - s * x0[i];
  return v;
}

template <class T>
Tensor<T> velocity_target(const Tensor<T>& x0, const Tensor<T>& eps, int t, const NoiseSchedule& sched) {
  sched.check_step(t);
  return velocity_target(x0, eps, sched.alpha_bar(t));
}

// x0 = sqrt(ab) x_t - sqrt(1 - ab) v
template <class T>
Tensor<T> predict_x0(const Tensor<T>& xt, const Tensor<T>& v, double alpha_bar) {
  detail::require_same_shape(xt, v, "predict_x0");
  const T a = static_cast<T>(std::sqrt(alpha_bar)), s = static_cast<T>(std::sqrt(1.0 - alpha_bar));
  Tensor<T> x0(xt.shape());
  for (std::size_t i = 0; i < x0.size(); ++i) x0[i] = a * xt[i] - s * v[i];
  return x0;
}

// eps = sqrt(1 - ab) x_t + sqrt(ab) v
template <class T>
Tensor<T> predict_eps(const Tensor<T>& xt, const Tensor<T>& v, double alpha_bar) {
  detail::require_same_shape(xt, v, "predict_eps");
  const T a = static_cast<T>(std::sqrt(alpha_bar)), s = static_cast<T>(std::sqrt(1.0 - alpha_bar));
  Tensor<T> eps(xt.shape());
  for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = s * xt[i] + a * v[i];
  return eps;
}

// Per-row noising draws for one loss evaluation.
template <class T>
struct NoisedBatch {
  Tensor<T> xt;
  Tensor<T> target;
  std::vector<int> steps;
};

// Row r draws t ~ U{1..T} and eps ~ N(0, I) from rng.split(r), so draws do
// not depend on how rows are scheduled.
template <class T>
NoisedBatch<T> noise_rows(const Tensor<T>& x0, const NoiseSchedule& sched, const Rng& rng) {
  if (x0.rank() != 2 || x0.dim(0) == 0) throw std::invalid_argument("diffusion_loss: empty batch");
  const std::size_t rows = x0.dim(0), len = x0.dim(1);
  NoisedBatch<T> out{Tensor<T>(x0.shape()), Tensor<T>(x0.shape()), std::vector<int>(rows)};
  for (std::size_t r = 0; r < rows; ++r) {
    Rng row_rng = rng.split(r);
    const int t = static_cast<int>(row_rng.uniform_int(1, sched.steps()));
    out.steps[r] = t;
    const double ab = sched.alpha_bar(t);
    const T a = static_cast<T>(std::sqrt(ab)), s = static_cast<T>(std::sqrt(1.0 - ab));
    for (std::size_t k = 0; k < len; ++k) {
      const T e = static_cast<T>(row_rng.normal());
      const T x = x0[r * len + k];
      out.xt[r * len + k] = a * x + s * e;
      out.target[r * len + k] = a * e - s * x;
    }
  }
  return out;
}

// Mean over rows and time of (v_t - Phi(x_t, t))^2 for x0 of shape (rows, L).
template <class T, VelocityModel<T> M>
Var<T> diffusion_loss(M& model, const Tensor<T>& x0, const std::vector<int>& channel_ids, const NoiseSchedule& sched,
                      const Rng& rng) {
  if (x0.rank() != 2 || x0.dim(0) == 0) throw std::invalid_argument("diffusion_loss: empty batch");
  if (channel_ids.size() != x0.dim(0)) throw std::invalid_argument("diffusion_loss: one channel id per row required");
  auto noised = noise_rows(x0, sched, rng);
  Var<T> pred = model(Var<T>(std::move(noised.xt)), noised.steps, channel_ids);
  return ops::mse(pred, Var<T>(std::move(noised.target)));
}

// Ancestral sampling with the v-parameterization: x_T ~ N(0, I), then for
// t = T..1: x0_hat = sqrt(ab_t) x_t - sqrt(1 - ab_t) v_hat, step to the
// posterior mean and add sigma_t noise except at t = 1.
template <class T, VelocityModel<T> M>
Tensor<T> ancestral_sample(M& model, const NoiseSchedule& sched, std::size_t rows, std::size_t length,
                           const std::vector<int>& channel_ids, Rng& rng) {
  if (channel_ids.size() != rows) throw std::invalid_argument("ancestral_sample: one channel id per row required");
  NoGradGuard no_grad;
  Tensor<T> x(Shape{rows, length});
  for (auto& v : x.values()) v = static_cast<T>(rng.normal());
  for (int t = sched.steps(); t >= 1; --t) {
    const std::vector<int> steps(rows, t);
    const Tensor<T> v = model(Var<T>(x), steps, channel_ids).value();
    const double ab = sched.alpha_bar(t), ab_prev = sched.alpha_bar(t - 1);
    const Tensor<T> x0 = predict_x0(x, v, ab);
    const double beta = sched.beta(t);
    const double c0 = std::sqrt(ab_prev) * beta / (1.0 - ab);
    const double ct = std::sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab);
    const double sigma = std::sqrt(sched.sigma2(t));
    for (std::size_t i = 0; i < x.size(); ++i) {
      double mean = c0 * x0[i] + ct * x[i];
      if (t > 1) mean += sigma * rng.normal();
      x[i] = static_cast<T>(mean);
    }
  }
  return x;
}

enum class ExtractionMode { none, noiseless };

inline ExtractionMode parse_extraction_mode(const std::string& s) {
  if (s == "none") return ExtractionMode::none;
  if (s == "noiseless") return ExtractionMode::noiseless;
  throw std::invalid_argument("unknown extraction mode '" + s + "'");
}

inline const char* to_string(ExtractionMode m) { return m == ExtractionMode::none ? "none" : "noiseless"; }

// Signal and conditioning step fed to the backbone for latent extraction:
// none -> (x0, 0); noiseless -> (sqrt(ab_t) x0, t).
template <class T>
std::pair<Tensor<T>, int> extraction_input(const Tensor<T>& x0, ExtractionMode mode, int t, const NoiseSchedule& sched) {
  if (mode == ExtractionMode::none) return {x0, 0};
  sched.check_step(t);
  Tensor<T> zero(x0.shape());
  return {forward_sample(x0, zero, sched.alpha_bar(t)), t};
}

}  // namespace eegdm

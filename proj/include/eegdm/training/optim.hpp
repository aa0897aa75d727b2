#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "eegdm/numerics/errors.hpp"
#include "eegdm/numerics/module.hpp"

namespace eegdm {

struct OptimConfig {
  double lr = 1e-4;  // constant-schedule rate
  double weight_decay = 0.0;
  double beta1 = 0.99;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;
  double ema_decay = 0.999;
  std::string schedule = "constant";  // constant | one_cycle
  double initial_lr = 1e-5;
  double peak_lr = 5e-4;
  double final_lr = 1e-6;
  double warmup_epochs = 5.0;
  std::size_t epochs = 100;
  std::size_t batch_size = 108;

  void validate() const {
    if (!(beta1 > 0 && beta1 < 1) || !(beta2 > 0 && beta2 < 1))
      throw std::invalid_argument("optim: betas must lie in (0, 1)");
    if (!(clip_norm > 0)) throw std::invalid_argument("optim: clip_norm must be positive");
    if (!(ema_decay >= 0 && ema_decay < 1)) throw std::invalid_argument("optim: ema_decay must lie in [0, 1)");
    if (!(eps > 0) || weight_decay < 0) throw std::invalid_argument("optim: eps must be positive, decay >= 0");
    if (schedule != "constant" && schedule != "one_cycle")
      throw std::invalid_argument("optim: unknown schedule '" + schedule + "'");
    if (schedule == "constant" && !(lr > 0)) throw std::invalid_argument("optim: lr must be positive");
    if (schedule == "one_cycle" && !(initial_lr > 0 && peak_lr > 0 && final_lr >= 0 && warmup_epochs >= 0))
      throw std::invalid_argument("optim: invalid one-cycle rates");
    if (!epochs || !batch_size) throw std::invalid_argument("optim: epochs and batch_size must be positive");
  }

  // Diffusion pretraining defaults.
  static OptimConfig pretrain() { return {}; }

  // Classifier fine-tuning defaults.
  static OptimConfig finetune() {
    OptimConfig c;
    c.weight_decay = 0.05;
    c.beta1 = 0.9;
    c.beta2 = 0.98;
    c.clip_norm = 3.0;
    c.schedule = "one_cycle";
    c.epochs = 50;
    c.batch_size = 256;
    return c;
  }

  nlohmann::ordered_json to_json() const {
    return {{"lr", lr},
            {"weight_decay", weight_decay},
            {"beta1", beta1},
            {"beta2", beta2},
            {"eps", eps},
            {"clip_norm", clip_norm},
            {"ema_decay", ema_decay},
            {"schedule", schedule},
            {"initial_lr", initial_lr},
            {"peak_lr", peak_lr},
            {"final_lr", final_lr},
            {"warmup_epochs", warmup_epochs},
            {"epochs", epochs},
            {"batch_size", batch_size}};
  }

  // Fields absent from `j` keep the values of `base`.
  static OptimConfig from_json(const nlohmann::json& j, OptimConfig c) {
    c.lr = j.value("lr", c.lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.eps = j.value("eps", c.eps);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.ema_decay = j.value("ema_decay", c.ema_decay);
    c.schedule = j.value("schedule", c.schedule);
    c.initial_lr = j.value("initial_lr", c.initial_lr);
    c.peak_lr = j.value("peak_lr", c.peak_lr);
    c.final_lr = j.value("final_lr", c.final_lr);
    c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    return c;
  }
};

// Linear warmup initial -> peak over [0, warmup], then cosine decay to
// `floor` at total_steps.
inline double one_cycle_lr(std::size_t step, std::size_t total_steps, std::size_t warmup_steps, double initial,
                           double peak, double floor) {
  if (total_steps == 0) throw std::invalid_argument("one_cycle_lr: total_steps must be positive");
  if (step > total_steps) throw std::invalid_argument("one_cycle_lr: step beyond total_steps");
  warmup_steps = std::min(warmup_steps, total_steps);
  if (step < warmup_steps)
    return initial + (peak - initial) * static_cast<double>(step) / static_cast<double>(warmup_steps);
  if (warmup_steps == total_steps) return peak;
  const double progress =
      static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return floor + 0.5 * (peak - floor) * (1.0 + std::cos(std::numbers::pi * progress));
}

// Learning rate at optimizer step `step` of `total_steps` for `cfg`.
inline double scheduled_lr(const OptimConfig& cfg, std::size_t step, std::size_t total_steps,
                           std::size_t steps_per_epoch) {
  if (cfg.schedule == "constant") return cfg.lr;
  const auto warmup = static_cast<std::size_t>(std::llround(cfg.warmup_epochs * static_cast<double>(steps_per_epoch)));
  return one_cycle_lr(step, total_steps, warmup, cfg.initial_lr, cfg.peak_lr, cfg.final_lr);
}

// Scales every gradient by threshold / norm when the global L2 norm exceeds
// the threshold. Returns the norm before clipping.
template <class T>
double clip_by_global_norm(const ParamList<T>& params, double threshold) {
  if (!(threshold > 0)) throw std::invalid_argument("clip_by_global_norm: threshold must be positive");
  double sq = 0.0;
  for (const auto& p : params)
    if (p.var.has_grad())
      for (T g : p.var.grad().values()) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (norm > threshold) {
    const T s = static_cast<T>(threshold / norm);
    for (const auto& p : params)
      if (p.var.has_grad()) {
        Var<T> v = p.var;
        for (auto& g : v.mutable_grad().values()) g *= s;
      }
  }
  return norm;
}

// AdamW with decoupled weight decay: theta <- theta - lr*wd*theta for
// parameters with decay set, then the bias-corrected Adam step.
template <class T>
class AdamW {
 public:
  AdamW(ParamList<T> params, const OptimConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
    cfg_.validate();
    for (const auto& p : params_) {
      m_.emplace_back(p.var.shape());
      v_.emplace_back(p.var.shape());
    }
  }

  // Applies one update with learning rate `lr`. Parameters that received no
  // gradient are left untouched. A non-finite gradient aborts the step
  // before any parameter changes.
  void step(double lr) {
    for (const auto& p : params_)
      if (p.var.has_grad())
        for (T g : p.var.grad().values())
          if (!std::isfinite(static_cast<double>(g)))
            throw NumericError("non-finite gradient in parameter '" + p.name + "' at step " +
                               std::to_string(t_ + 1));
    ++t_;
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T c1 = static_cast<T>(1.0 - std::pow(cfg_.beta1, static_cast<double>(t_)));
    const T c2 = static_cast<T>(1.0 - std::pow(cfg_.beta2, static_cast<double>(t_)));
    const T lr_t = static_cast<T>(lr), eps = static_cast<T>(cfg_.eps);
    const T shrink = static_cast<T>(lr * cfg_.weight_decay);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Var<T> var = params_[i].var;
      if (!var.has_grad()) continue;
      auto& theta = var.mutable_value();
      const auto& g = var.grad();
      auto& m = m_[i];
      auto& v = v_[i];
      const bool decay = params_[i].decay && cfg_.weight_decay > 0;
      for (std::size_t k = 0; k < theta.size(); ++k) {
        if (decay) theta[k] -= shrink * theta[k];
        m[k] = b1 * m[k] + (T(1) - b1) * g[k];
        v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
        const T mhat = m[k] / c1, vhat = v[k] / c2;
        theta[k] -= lr_t * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }

  void zero_grad() { zero_grads(params_); }

  std::size_t steps() const { return t_; }
  const ParamList<T>& parameters() const { return params_; }
  const std::vector<Tensor<T>>& first_moments() const { return m_; }
  const std::vector<Tensor<T>>& second_moments() const { return v_; }

  // Restores moments and the step counter (resume).
  void load_state(std::size_t t, std::vector<Tensor<T>> m, std::vector<Tensor<T>> v) {
    if (m.size() != params_.size() || v.size() != params_.size())
      throw std::invalid_argument("AdamW: optimizer state does not match parameters");
    for (std::size_t i = 0; i < params_.size(); ++i)
      if (m[i].shape() != params_[i].var.shape() || v[i].shape() != params_[i].var.shape())
        throw std::invalid_argument("AdamW: moment shape mismatch for " + params_[i].name);
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
  }

 private:
  ParamList<T> params_;
  OptimConfig cfg_;
  std::vector<Tensor<T>> m_, v_;
  std::size_t t_ = 0;
};

// ema <- decay * ema + (1 - decay) * theta, elementwise.
template <class T>
void ema_update(Tensor<T>& ema, const Tensor<T>& theta, double decay) {
  if (ema.shape() != theta.shape()) throw std::invalid_argument("ema_update: shape mismatch");
  const T d = static_cast<T>(decay), rest = static_cast<T>(1.0 - decay);
  for (std::size_t i = 0; i < ema.size(); ++i) ema[i] = d * ema[i] + rest * theta[i];
}

// Shadow copy of a parameter list updated by exponential moving average.
template <class T>
class Ema {
 public:
  explicit Ema(const ParamList<T>& params, double decay) : decay_(decay) {
    if (!(decay >= 0 && decay < 1)) throw std::invalid_argument("Ema: decay must lie in [0, 1)");
    for (const auto& p : params) shadow_.push_back({p.name, p.var.value()});
  }

  void update(const ParamList<T>& params) {
    check(params);
    for (std::size_t i = 0; i < params.size(); ++i) ema_update(shadow_[i].second, params[i].var.value(), decay_);
  }

  // Writes the averaged values into `params` (same layout).
  void copy_to(const ParamList<T>& params) const {
    check(params);
    for (std::size_t i = 0; i < params.size(); ++i) {
      Var<T> v = params[i].var;
      v.mutable_value() = shadow_[i].second;
    }
  }

  const std::vector<std::pair<std::string, Tensor<T>>>& values() const { return shadow_; }
  std::vector<std::pair<std::string, Tensor<T>>>& values() { return shadow_; }
  double decay() const { return decay_; }

 private:
  void check(const ParamList<T>& params) const {
    if (params.size() != shadow_.size()) throw std::invalid_argument("Ema: parameter count changed");
    for (std::size_t i = 0; i < params.size(); ++i)
      if (params[i].name != shadow_[i].first || params[i].var.shape() != shadow_[i].second.shape())
        throw std::invalid_argument("Ema: layout mismatch at " + params[i].name);
  }

  double decay_;
  std::vector<std::pair<std::string, Tensor<T>>> shadow_;
};

}  // namespace eegdm

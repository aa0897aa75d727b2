#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "eegdm/backbone/ssmdp.hpp"
#include "eegdm/diffusion/process.hpp"
#include "eegdm/io/checkpoint.hpp"
#include "eegdm/io/latent_cache.hpp"
#include "eegdm/lft/lft.hpp"
#include "eegdm/metrics/metrics.hpp"
#include "eegdm/signal/segment.hpp"
#include "eegdm/training/early_stop.hpp"
#include "eegdm/training/log.hpp"
#include "eegdm/training/loss.hpp"
#include "eegdm/training/optim.hpp"

namespace eegdm {

// Every (segment, channel) pair of a batch as one single-channel example:
// rows (S*C, L) and the matching channel ids.
struct ChannelRows {
  Tensor<float> x;
  std::vector<int> ids;
};

inline ChannelRows to_rows(const SegmentBatch& batch) {
  const std::size_t s = batch.size(), c = batch.channels(), len = batch.samples();
  ChannelRows r{batch.signals.reshaped(Shape{s * c, len}), {}};
  r.ids.reserve(s * c);
  for (std::size_t i = 0; i < s * c; ++i) r.ids.push_back(batch.channel_ids.at(i % c));
  return r;
}

namespace detail {

inline std::vector<std::size_t> shuffled(std::size_t n, Rng rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng.engine());
  return idx;
}

// Leading-axis gather of a row-major tensor.
template <class T>
Tensor<T> gather_leading(const Tensor<T>& x, const std::vector<std::size_t>& idx, std::size_t begin, std::size_t end) {
  Shape shape = x.shape();
  const std::size_t row = x.size() / shape[0];
  shape[0] = end - begin;
  Tensor<T> out(shape);
  for (std::size_t i = begin; i < end; ++i) std::copy_n(x.data() + idx[i] * row, row, out.data() + (i - begin) * row);
  return out;
}

inline void check_finite(double loss, std::size_t step) {
  if (!std::isfinite(loss)) throw NumericError("non-finite loss at step " + std::to_string(step));
}

}  // namespace detail

// Diffusion pretraining of an SSMDP with AdamW, gradient clipping and EMA.
class Pretrainer {
 public:
  Pretrainer(SSMDP<float>& model, const OptimConfig& cfg, std::uint64_t seed)
      : model_(model), cfg_(cfg), seed_(seed), rng_(seed), opt_(model.parameters(), cfg),
        ema_(model.parameters(), cfg.ema_decay), sched_(make_schedule(model.config().schedule, model.config().steps)) {
    cfg_.validate();
  }

  // Continues from a checkpoint written by checkpoint(): weights, EMA,
  // optimizer moments, and the epoch and step counters.
  void resume(const Checkpoint& c) {
    const auto params = model_.parameters();
    load_weights(c, params, WeightSet::raw);
    auto ema = checkpoint_tensors(c, params, "ema");
    for (std::size_t i = 0; i < ema.size(); ++i) ema_.values()[i].second = std::move(ema[i]);
    if (c.has_optimizer())
      opt_.load_state(c.optimizer_steps, checkpoint_tensors(c, params, "adam_m"), checkpoint_tensors(c, params, "adam_v"));
    epoch_ = c.meta.value("epoch", std::size_t{0});
    step_ = c.meta.value("step", std::size_t{0});
  }

  // One pass over the rows in shuffled mini-batches; returns the mean loss.
  double run_epoch(const ChannelRows& rows) {
    const std::size_t n = rows.x.dim(0), bs = cfg_.batch_size;
    if (n == 0) throw DataError("pretraining split is empty");
    const auto order = detail::shuffled(n, rng_.split(0x5eed0000ULL + epoch_));
    const auto params = model_.parameters();
    const std::size_t spe = (n + bs - 1) / bs, total = cfg_.epochs * spe;
    double sum = 0.0;
    for (std::size_t b0 = 0; b0 < n; b0 += bs) {
      const std::size_t b1 = std::min(n, b0 + bs);
      const auto x = detail::gather_leading(rows.x, order, b0, b1);
      std::vector<int> ids;
      for (std::size_t i = b0; i < b1; ++i) ids.push_back(rows.ids[order[i]]);
      zero_grads(params);
      const auto loss = diffusion_loss(model_, x, ids, sched_, rng_.split(step_));
      const double lv = loss.value()[0];
      detail::check_finite(lv, step_);
      backward(loss);
      clip_by_global_norm(params, cfg_.clip_norm);
      last_lr_ = scheduled_lr(cfg_, std::min(step_, total), total, spe);
      opt_.step(last_lr_);
      ema_.update(params);
      sum += lv * static_cast<double>(b1 - b0);
      ++step_;
    }
    ++epoch_;
    return sum / static_cast<double>(n);
  }

  // Diffusion loss of the EMA weights on fixed draws.
  double validate(const ChannelRows& rows, std::size_t max_rows = 0) const {
    auto shadow = model_.clone();
    ema_.copy_to(shadow.parameters());
    const std::size_t n = max_rows ? std::min(max_rows, rows.x.dim(0)) : rows.x.dim(0);
    const std::size_t bs = cfg_.batch_size;
    const Rng vrng(seed_ ^ 0x7a11dULL);
    NoGradGuard no_grad;
    double sum = 0.0;
    for (std::size_t b0 = 0; b0 < n; b0 += bs) {
      const std::size_t b1 = std::min(n, b0 + bs);
      Tensor<float> x(Shape{b1 - b0, rows.x.dim(1)});
      std::copy_n(rows.x.data() + b0 * rows.x.dim(1), x.size(), x.data());
      const std::vector<int> ids(rows.ids.begin() + b0, rows.ids.begin() + b1);
      sum += diffusion_loss(shadow, x, ids, sched_, vrng.split(b0)).value()[0] * static_cast<double>(b1 - b0);
    }
    return sum / static_cast<double>(n);
  }

  Checkpoint checkpoint() const {
    const auto params = model_.parameters();
    std::vector<Tensor<float>> ema;
    for (const auto& [name, t] : ema_.values()) ema.push_back(t);
    auto c = make_checkpoint("ssmdp", model_.config().to_json(), params, &ema, &opt_.first_moments(),
                             &opt_.second_moments(), opt_.steps());
    c.meta = {{"epoch", epoch_}, {"step", step_}, {"seed", seed_}, {"rate_num", model_.rate().num},
              {"rate_den", model_.rate().den}, {"optim", cfg_.to_json()}};
    return c;
  }

  // Writes the EMA weights into the live model (end of training).
  void apply_ema() { ema_.copy_to(model_.parameters()); }

  std::size_t epoch() const { return epoch_; }
  std::size_t step() const { return step_; }
  double last_lr() const { return last_lr_; }
  const NoiseSchedule& schedule() const { return sched_; }

 private:
  SSMDP<float>& model_;
  OptimConfig cfg_;
  std::uint64_t seed_;
  Rng rng_;
  AdamW<float> opt_;
  Ema<float> ema_;
  NoiseSchedule sched_;
  std::size_t epoch_ = 0, step_ = 0;
  double last_lr_ = 0.0;
};

struct FinetuneOptions {
  OptimConfig optim = OptimConfig::finetune();
  std::uint64_t seed = 0;
  double smoothing = 0.1;
  bool class_weighted = false;
  bool early_stop = true;
  std::size_t patience = 3;
  std::size_t min_epochs = 20;
  std::size_t eval_batch = 256;
};

struct FinetuneResult {
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  double best_score = 0.0;
  bool stopped_early = false;
  std::vector<double> train_loss;
  std::vector<double> valid_kappa;
  std::vector<Tensor<float>> best_raw, best_ema;
  std::size_t steps = 0;
};

// Class probabilities (S, K) for a pooled stack, evaluated in chunks.
inline Tensor<float> predict(const LFT<float>& model, const Tensor<float>& stacked, std::size_t batch = 256) {
  const std::size_t s = stacked.dim(0), k = model.config().num_classes;
  Tensor<float> out(Shape{s, k});
  std::vector<std::size_t> idx(s);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t b0 = 0; b0 < s; b0 += batch) {
    const std::size_t b1 = std::min(s, b0 + batch);
    const auto p = model.probabilities(detail::gather_leading(stacked, idx, b0, b1));
    std::copy_n(p.data(), p.size(), out.data() + b0 * k);
  }
  return out;
}

// Trains the LFT on pooled latents. With a validation split, the EMA weights
// are scored by Cohen's kappa each epoch, early stopping applies, and the
// model ends holding the EMA weights of the best epoch. Without one, the
// final EMA weights are kept.
inline FinetuneResult finetune_lft(LFT<float>& model, const LatentSplit& train, const LatentSplit* valid,
                                   const FinetuneOptions& opt, TrainLog* log = nullptr,
                                   const std::function<void(const FinetuneResult&)>& on_epoch = {}) {
  const std::size_t n = train.segments(), k = model.config().num_classes;
  if (n == 0) throw DataError("fine-tuning split is empty");
  opt.optim.validate();
  const auto params = model.parameters();
  AdamW<float> adam(params, opt.optim);
  Ema<float> ema(params, opt.optim.ema_decay);
  const auto weights = opt.class_weighted ? class_weights(label_counts(train.labels, k)) : std::vector<double>{};
  EarlyStopping stopper(opt.patience, opt.min_epochs);
  const Rng rng(opt.seed);
  const std::size_t bs = opt.optim.batch_size, spe = (n + bs - 1) / bs, total = opt.optim.epochs * spe;
  auto shadow = model.clone();
  FinetuneResult res;
  auto snapshot = [&] {
    res.best_raw.clear();
    res.best_ema.clear();
    for (const auto& p : params) res.best_raw.push_back(p.var.value());
    for (const auto& [name, t] : ema.values()) res.best_ema.push_back(t);
  };
  for (std::size_t epoch = 1; epoch <= opt.optim.epochs; ++epoch) {
    const auto order = detail::shuffled(n, rng.split(epoch));
    double sum = 0.0;
    for (std::size_t b0 = 0; b0 < n; b0 += bs) {
      const std::size_t b1 = std::min(n, b0 + bs);
      const auto x = detail::gather_leading(train.values, order, b0, b1);
      std::vector<int> y;
      for (std::size_t i = b0; i < b1; ++i) y.push_back(train.labels[order[i]]);
      Rng drop_rng = rng.split(0xd209000000ULL + res.steps);
      zero_grads(params);
      const auto loss = ops::smoothed_weighted_ce(model.forward(x, DropoutCtx{model.config().dropout, &drop_rng}), y,
                                                  opt.smoothing, weights);
      const double lv = loss.value()[0];
      detail::check_finite(lv, res.steps);
      backward(loss);
      clip_by_global_norm(params, opt.optim.clip_norm);
      adam.step(scheduled_lr(opt.optim, res.steps, total, spe));
      ema.update(params);
      sum += lv * static_cast<double>(b1 - b0);
      ++res.steps;
    }
    const double mean_loss = sum / static_cast<double>(n);
    res.train_loss.push_back(mean_loss);
    res.epochs_run = epoch;
    std::optional<double> kappa;
    bool stop = false;
    if (valid) {
      ema.copy_to(shadow.parameters());
      const auto probs = predict(shadow, valid->values, opt.eval_batch);
      kappa = cohen_kappa(confusion(valid->labels, argmax_rows(probs), k));
      res.valid_kappa.push_back(*kappa);
      stop = stopper.update(*kappa);
      if (stopper.improved_last()) snapshot();
      res.best_epoch = stopper.best_epoch();
      res.best_score = stopper.best_score();
    }
    if (log)
      log->write(epoch, res.steps, scheduled_lr(opt.optim, std::min(res.steps, total), total, spe), mean_loss, kappa,
                 {{"seed", opt.seed}});
    if (on_epoch) on_epoch(res);
    if (stop && opt.early_stop) {
      res.stopped_early = true;
      break;
    }
  }
  if (!valid) {
    snapshot();
    res.best_epoch = res.epochs_run;
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Var<float> v = params[i].var;
    v.mutable_value() = res.best_ema[i];
  }
  return res;
}

// Checkpoint of a fine-tuned LFT: raw and EMA weights of the selected epoch.
inline Checkpoint lft_checkpoint(const LFT<float>& model, const FinetuneResult& res,
                                 nlohmann::ordered_json meta = nlohmann::ordered_json::object()) {
  const auto params = model.parameters();
  auto c = make_checkpoint("lft", model.config().to_json(), params, &res.best_ema);
  for (std::size_t i = 0; i < params.size() && i < res.best_raw.size(); ++i) c.tensors[i].raw = res.best_raw[i];
  meta["best_epoch"] = res.best_epoch;
  meta["best_kappa"] = res.best_score;
  meta["epochs_run"] = res.epochs_run;
  meta["stopped_early"] = res.stopped_early;
  c.meta = std::move(meta);
  return c;
}

}  // namespace eegdm

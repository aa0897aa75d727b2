#include <gtest/gtest.h>

#include <cmath>

#include "eegdm/training/trainer.hpp"
#include "helpers.hpp"

using namespace eegdm;

namespace {

SSMDPConfig tiny_backbone() {
  SSMDPConfig c;
  c.n_layers = 2;
  c.residual_channels = c.gate_channels = c.filter_channels = 8;
  c.state_dim = 8;
  c.embed_dim = 8;
  c.steps = 20;
  c.num_eeg_channels = 2;
  return c;
}

// Noisy sinusoids, one row per (segment, channel).
ChannelRows sine_rows(std::size_t rows, std::size_t len, std::uint64_t seed) {
  Rng rng(seed);
  ChannelRows r{Tensor<float>(Shape{rows, len}), {}};
  for (std::size_t i = 0; i < rows; ++i) {
    const double f = rng.uniform(2.0, 8.0), ph = rng.uniform(0.0, 6.28);
    for (std::size_t k = 0; k < len; ++k)
      r.x.values()[i * len + k] = static_cast<float>(std::sin(6.2831853 * f * double(k) / double(len) + ph));
    r.ids.push_back(static_cast<int>(i % 2));
  }
  return r;
}

OptimConfig quick_optim() {
  auto o = OptimConfig::pretrain();
  o.lr = 3e-3;
  o.beta1 = 0.9;
  o.batch_size = 8;
  o.epochs = 10;
  o.ema_decay = 0.9;
  return o;
}

LFTConfig toy_lft() {
  LFTConfig c;
  c.fusion_blocks = 2;
  c.encoder_blocks = 1;
  c.heads = 2;
  c.dim = 8;
  c.mlp_hidden = 16;
  c.tokens = 2;
  c.num_classes = 3;
  c.pools = 2;
  c.latent_width = 6;
  c.channels = 2;
  c.dropout = 0.0;
  return c;
}

// Class k shifts feature k of every latent vector.
LatentSplit toy_latents(std::size_t s, const LFTConfig& c, std::uint64_t seed) {
  Rng rng(seed);
  LatentSplit out;
  out.values = testutil::randn<float>({s, c.channels, c.fusion_blocks, c.pools, c.latent_width}, rng);
  const std::size_t per = out.values.size() / s;
  for (std::size_t i = 0; i < s; ++i) {
    const int y = static_cast<int>(i % c.num_classes);
    out.labels.push_back(y);
    for (std::size_t j = 0; j < per; j += c.latent_width) out.values.values()[i * per + j + y] += 1.5f;
  }
  return out;
}

double train_accuracy(const LFT<float>& m, const LatentSplit& s) {
  const auto pred = argmax_rows(predict(m, s.values));
  std::size_t ok = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == s.labels[i];
  return double(ok) / double(pred.size());
}

bool same_values(const Checkpoint& a, const Checkpoint& b) {
  for (std::size_t i = 0; i < a.tensors.size(); ++i) {
    const auto x = a.tensors[i].raw.values(), y = b.tensors[i].raw.values();
    if (!std::equal(x.begin(), x.end(), y.begin())) return false;
    const auto ex = a.tensors[i].ema->values(), ey = b.tensors[i].ema->values();
    if (!std::equal(ex.begin(), ex.end(), ey.begin())) return false;
  }
  return true;
}

}  // namespace

TEST(Pretrainer, RowsFromBatch) {
  SegmentBatch b;
  b.signals = Tensor<float>(Shape{2, 3, 4});
  for (std::size_t i = 0; i < b.signals.size(); ++i) b.signals.values()[i] = float(i);
  b.channel_ids = {7, 8, 9};
  b.labels = {0, 1};
  const auto r = to_rows(b);
  EXPECT_EQ(r.x.shape(), (Shape{6, 4}));
  EXPECT_EQ(r.ids, (std::vector<int>{7, 8, 9, 7, 8, 9}));
  EXPECT_EQ(r.x.values()[4 * 4], 16.0f);
}

TEST(Pretrainer, LossDecreasesOnToyData) {
  SSMDP<float> model(tiny_backbone(), 1);
  const auto rows = sine_rows(32, 64, 2);
  Pretrainer trainer(model, quick_optim(), 3);
  const double v0 = trainer.validate(rows);
  std::vector<double> losses;
  for (int e = 0; e < 10; ++e) losses.push_back(trainer.run_epoch(rows));
  const double v1 = trainer.validate(rows);
  EXPECT_LT((losses[7] + losses[8] + losses[9]) / 3, (losses[0] + losses[1]) / 2);
  EXPECT_LT(v1, v0);
  EXPECT_EQ(trainer.step(), 40u);
  EXPECT_EQ(trainer.epoch(), 10u);
}

TEST(Pretrainer, SameSeedSameWeights) {
  const auto rows = sine_rows(16, 32, 4);
  SSMDP<float> a(tiny_backbone(), 1), b(tiny_backbone(), 1);
  Pretrainer ta(a, quick_optim(), 9), tb(b, quick_optim(), 9);
  for (int e = 0; e < 2; ++e) EXPECT_EQ(ta.run_epoch(rows), tb.run_epoch(rows));
  EXPECT_TRUE(same_values(ta.checkpoint(), tb.checkpoint()));
  SSMDP<float> c(tiny_backbone(), 1);
  Pretrainer tc(c, quick_optim(), 10);
  tc.run_epoch(rows);
  tc.run_epoch(rows);
  EXPECT_FALSE(same_values(ta.checkpoint(), tc.checkpoint()));
}

TEST(Pretrainer, ResumeMatchesUninterruptedRun) {
  testutil::TempDir dir("resume");
  const auto rows = sine_rows(16, 32, 5);
  SSMDP<float> a(tiny_backbone(), 1);
  Pretrainer ta(a, quick_optim(), 11);
  for (int e = 0; e < 3; ++e) ta.run_epoch(rows);

  SSMDP<float> b(tiny_backbone(), 1);
  Pretrainer tb(b, quick_optim(), 11);
  for (int e = 0; e < 2; ++e) tb.run_epoch(rows);
  save_checkpoint(dir.path(), tb.checkpoint());

  SSMDP<float> c(tiny_backbone(), 99);
  Pretrainer tc(c, quick_optim(), 11);
  tc.resume(load_checkpoint(dir.path()));
  EXPECT_EQ(tc.epoch(), 2u);
  EXPECT_EQ(tc.step(), 4u);
  tc.run_epoch(rows);
  EXPECT_TRUE(same_values(ta.checkpoint(), tc.checkpoint()));
}

TEST(Pretrainer, NonFiniteLossAborts) {
  SSMDP<float> model(tiny_backbone(), 1);
  auto rows = sine_rows(8, 32, 6);
  rows.x.values()[3] = std::nanf("");
  Pretrainer trainer(model, quick_optim(), 1);
  EXPECT_THROW(trainer.run_epoch(rows), NumericError);
}

TEST(Finetune, OverfitsSmallSetWithin500Steps) {
  const auto cfg = toy_lft();
  const auto train = toy_latents(64, cfg, 1);
  LFT<float> model(cfg, 2);
  FinetuneOptions opt;
  opt.optim.schedule = "constant";
  opt.optim.lr = 3e-3;
  opt.optim.weight_decay = 0.0;
  opt.optim.batch_size = 16;
  opt.optim.epochs = 125;  // 500 steps
  opt.optim.ema_decay = 0.9;
  opt.smoothing = 0.0;
  const auto res = finetune_lft(model, train, nullptr, opt);
  EXPECT_EQ(res.steps, 500u);
  EXPECT_GE(train_accuracy(model, train), 0.95);
  EXPECT_LT(res.train_loss.back(), res.train_loss.front());
}

TEST(Finetune, EarlyStoppingKeepsBestEpoch) {
  const auto cfg = toy_lft();
  const auto train = toy_latents(48, cfg, 3), valid = toy_latents(24, cfg, 4);
  LFT<float> model(cfg, 5);
  FinetuneOptions opt;
  opt.optim.batch_size = 16;
  opt.optim.epochs = 40;
  opt.optim.ema_decay = 0.9;
  opt.seed = 6;
  const auto res = finetune_lft(model, train, &valid, opt);
  ASSERT_EQ(res.valid_kappa.size(), res.epochs_run);
  const auto best = std::max_element(res.valid_kappa.begin(), res.valid_kappa.end());
  EXPECT_EQ(res.best_epoch, std::size_t(best - res.valid_kappa.begin()) + 1);
  EXPECT_DOUBLE_EQ(res.best_score, *best);
  if (res.stopped_early) {
    EXPECT_GT(res.epochs_run, 20u);
    // patience only counts epochs after the minimum
    EXPECT_EQ(res.epochs_run - std::max<std::size_t>(res.best_epoch, 20), 3u);
  }
  // the model holds the EMA weights of the best epoch
  const auto probs = predict(model, valid.values);
  EXPECT_DOUBLE_EQ(cohen_kappa(confusion(valid.labels, argmax_rows(probs), cfg.num_classes)), res.best_score);
}

TEST(Finetune, SameSeedSameResult) {
  const auto cfg = toy_lft();
  const auto train = toy_latents(32, cfg, 7);
  FinetuneOptions opt;
  opt.optim.batch_size = 8;
  opt.optim.epochs = 3;
  LFT<float> a(cfg, 1), b(cfg, 1);
  const auto ra = finetune_lft(a, train, nullptr, opt), rb = finetune_lft(b, train, nullptr, opt);
  EXPECT_EQ(ra.train_loss, rb.train_loss);
}

#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "eegdm/backbone/extract.hpp"
#include "eegdm/cli/config.hpp"
#include "eegdm/io/checkpoint.hpp"
#include "eegdm/io/latent_cache.hpp"
#include "eegdm/metrics/metrics.hpp"
#include "eegdm/numerics/parallel.hpp"
#include "eegdm/signal/manifest.hpp"
#include "eegdm/training/trainer.hpp"

namespace eegdm::cli {

namespace fs = std::filesystem;

// Progress lines go here when set; results are returned as JSON.
struct Context {
  std::ostream* progress = nullptr;

  template <class... A>
  void say(const A&... parts) const {
    if (!progress) return;
    ((*progress) << ... << parts) << '\n';
    progress->flush();
  }
};

inline fs::path manifest_path(const RunConfig& rc) { return rc.data_root() / "manifest.json"; }
inline fs::path backbone_dir(const RunConfig& rc) { return rc.run_dir() / "backbone"; }
inline fs::path latent_dir(const RunConfig& rc) { return rc.run_dir() / "latents" / extract_settings(rc).tag(); }
inline fs::path lft_dir(const RunConfig& rc) {
  return rc.run_dir() / "lft" / finetune_settings(rc).tag(extract_settings(rc));
}
inline fs::path seed_dir(const fs::path& dir, std::uint64_t seed) { return dir / ("seed_" + std::to_string(seed)); }

inline bool split_present(const DatasetManifest& m, const std::string& split) {
  auto it = m.splits.find(split);
  return it != m.splits.end() && !it->second.empty();
}

// Writes a checkpoint into a sibling directory first and swaps it in, so an
// interrupted save never leaves a half-written checkpoint behind.
inline void replace_checkpoint(const fs::path& dir, const Checkpoint& c) {
  const fs::path tmp = dir.string() + ".tmp";
  fs::remove_all(tmp);
  save_checkpoint(tmp, c);
  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

inline void apply_threads(const RunConfig& rc) { set_num_threads(rc.size("threads")); }

// ---------------------------------------------------------------- synth

inline Json cmd_synth(const RunConfig& rc, const Context& ctx = {}) {
  const auto cfg = synth_config(rc);
  const auto root = rc.data_root();
  ctx.say("synth: writing dataset to ", root.string());
  const auto m = synth_dataset(cfg, root);
  Json out{{"command", "synth"}, {"root", root.string()}, {"seed", rc.seed()}, {"files", m.file_count()}};
  out["histogram"] = m.histogram();
  Json splits = Json::object();
  for (const char* s : DatasetManifest::kSplits) splits[s] = m.histogram(s);
  out["split_histograms"] = std::move(splits);
  return out;
}

// ---------------------------------------------------------------- backbone

struct LoadedBackbone {
  SSMDP<float> model;
  std::string fingerprint;
  double rate = 0.0;  // sampling rate the weights were trained at
};

// EMA weights of the pretrained backbone, with the tap overridden by the
// extraction settings (the tap does not change the parameters).
inline LoadedBackbone load_backbone(const RunConfig& rc, std::optional<TapKind> tap = std::nullopt) {
  const auto dir = backbone_dir(rc);
  if (!fs::exists(dir / "manifest.json")) throw DataError("missing backbone checkpoint in " + dir.string());
  const auto c = load_checkpoint(dir);
  if (c.kind != "ssmdp") throw DataError("checkpoint in " + dir.string() + " is not a backbone");
  auto cfg = SSMDPConfig::from_json(c.config);
  if (tap) cfg.tap = *tap;
  LoadedBackbone b{SSMDP<float>(cfg, 0), checkpoint_fingerprint(dir), c.meta.value("train_rate", 0.0)};
  load_weights(c, b.model.parameters(), c.has_ema() ? WeightSet::ema : WeightSet::raw);
  b.model.set_rate(RateRatio(c.meta.value("rate_num", std::int64_t{1}), c.meta.value("rate_den", std::int64_t{1})));
  return b;
}

inline Json cmd_pretrain(const RunConfig& rc, const Context& ctx = {}) {
  apply_threads(rc);
  const auto m = load_manifest(manifest_path(rc));
  const auto cfg = backbone_config(rc, m.channels);
  const auto optim = optim_config(rc, "pretrain");
  const auto train = to_rows(load_split(m, rc.data_root(), "train"));
  const std::optional<ChannelRows> valid =
      split_present(m, "valid") ? std::optional(to_rows(load_split(m, rc.data_root(), "valid"))) : std::nullopt;

  const auto dir = backbone_dir(rc);
  fs::create_directories(rc.run_dir());
  SSMDP<float> model(cfg, rc.seed());
  Pretrainer trainer(model, optim, rc.seed());
  bool resumed = false;
  if (rc.flag("pretrain.resume") && fs::exists(dir / "manifest.json")) {
    const auto c = load_checkpoint(dir);
    if (c.kind != "ssmdp" || SSMDPConfig::from_json(c.config).to_json() != cfg.to_json())
      throw ConfigError("existing checkpoint in " + dir.string() + " has a different backbone config");
    trainer.resume(c);
    resumed = true;
    ctx.say("pretrain: resuming at epoch ", trainer.epoch(), " step ", trainer.step());
  }
  write_schedule_csv(rc.run_dir() / "schedule.csv", trainer.schedule());
  TrainLog log(rc.run_dir() / "pretrain_log.jsonl", resumed);
  const std::size_t valid_rows = rc.size("pretrain.valid_rows");

  std::vector<double> losses;
  std::optional<double> first_valid, last_valid;
  while (trainer.epoch() < optim.epochs) {
    const double loss = trainer.run_epoch(train);
    losses.push_back(loss);
    std::optional<double> vloss;
    if (valid && valid_rows) {
      vloss = trainer.validate(*valid, valid_rows);
      if (!first_valid) first_valid = vloss;
      last_valid = vloss;
    }
    log.write(trainer.epoch(), trainer.step(), trainer.last_lr(), loss, vloss, {{"seed", rc.seed()}});
    auto c = trainer.checkpoint();
    c.meta["train_rate"] = m.rate;
    replace_checkpoint(dir, c);
    ctx.say("pretrain: epoch ", trainer.epoch(), "/", optim.epochs, " loss ", loss,
            vloss ? " valid " + std::to_string(*vloss) : std::string());
  }
  Json out{{"command", "pretrain"}, {"checkpoint", dir.string()}, {"seed", rc.seed()}, {"resumed", resumed},
           {"epochs", trainer.epoch()},  {"steps", trainer.step()}};
  out["parameters"] = model.parameter_count();
  out["initial_loss"] = losses.empty() ? Json(nullptr) : Json(losses.front());
  out["final_loss"] = losses.empty() ? Json(nullptr) : Json(losses.back());
  out["initial_valid_loss"] = first_valid ? Json(*first_valid) : Json(nullptr);
  out["final_valid_loss"] = last_valid ? Json(*last_valid) : Json(nullptr);
  return out;
}

// ---------------------------------------------------------------- extract

// Cache key: backbone weights, dataset files, split and extraction settings.
inline std::string extraction_fingerprint(const std::string& backbone_fp, const DatasetManifest& m,
                                          const fs::path& root, const std::string& split, const ExtractSettings& x,
                                          double eval_rate) {
  Fnv1a h;
  h.add(backbone_fp).add(split).add(x.tag()).add(std::to_string(eval_rate));
  h.add(m.to_json().dump());
  for (const auto& e : m.splits.at(split)) h.add_file(root / e.path);
  return h.hex();
}

// Pooled latents of one split, from the cache when its fingerprint matches.
// A positive `eval_rate` resamples the split and retargets the backbone.
inline LatentSplit latents_for(const RunConfig& rc, LoadedBackbone& bb, const DatasetManifest& m,
                               const std::string& split, double eval_rate, bool* reused, const Context& ctx) {
  const auto x = extract_settings(rc);
  const auto dir = latent_dir(rc);
  const std::string key = eval_rate > 0 ? split + "@" + detail::rate_json(eval_rate).dump() + "hz" : split;
  const auto fp = extraction_fingerprint(bb.fingerprint, m, rc.data_root(), split, x, eval_rate);
  if (cached_fingerprint(dir, key) == fp) {
    if (reused) *reused = true;
    return load_latent_split(dir, key);
  }
  if (reused) *reused = false;
  auto batch = load_split(m, rc.data_root(), split);
  const RateRatio base = bb.model.rate();
  if (eval_rate > 0 && eval_rate != batch.sample_rate) {
    batch = resample(batch, eval_rate);
    bb.model.retarget(RateRatio::from_double(eval_rate / m.rate));
  }
  if (batch.samples() % x.pools)
    throw ConfigError("segment length " + std::to_string(batch.samples()) + " is not divisible by " +
                      std::to_string(x.pools) + " pools");
  ctx.say("extract: ", key, " (", batch.size(), " segments)");
  const auto sched = make_schedule(bb.model.config().schedule, bb.model.config().steps);
  LatentSplit s;
  s.values = extract_pooled(bb.model, batch.signals, batch.channel_ids, ExtractionSpec{x.mode, x.step}, sched, x.pools,
                            x.pool, x.chunk);
  bb.model.set_rate(base);
  s.labels = batch.labels;
  s.pool = x.pool;
  s.tap = to_string(x.tap);
  s.mode = to_string(x.mode);
  s.step = x.step;
  s.rate = batch.sample_rate;
  s.fingerprint = fp;
  save_latent_split(dir, key, s);
  return s;
}

inline Json cmd_extract(const RunConfig& rc, const Context& ctx = {}) {
  apply_threads(rc);
  const auto x = extract_settings(rc);
  const auto m = load_manifest(manifest_path(rc));
  auto bb = load_backbone(rc, x.tap);
  Json splits = Json::object();
  for (const char* split : DatasetManifest::kSplits) {
    if (!split_present(m, split)) continue;
    bool reused = false;
    const auto s = latents_for(rc, bb, m, split, 0.0, &reused, ctx);
    splits[split] = {{"status", reused ? "cached" : "written"}, {"shape", detail::shape_json(s.values.shape())}};
  }
  Json out{{"command", "extract"}, {"cache", latent_dir(rc).string()}, {"tap", to_string(x.tap)},
           {"pool", to_string(x.pool)}, {"mode", to_string(x.mode)},   {"step", x.step}};
  out["splits"] = std::move(splits);
  return out;
}

// ---------------------------------------------------------------- finetune / eval

inline void check_cache_matches(const LatentSplit& s, const ExtractSettings& x) {
  if (s.pool != x.pool || s.tap != to_string(x.tap) || s.mode != to_string(x.mode) || s.step != x.step ||
      s.pools() != x.pools)
    throw ConfigError("latent cache was built with different extraction settings");
}

inline MetricReport evaluate_model(const LFT<float>& model, const LatentSplit& split,
                                   const std::vector<std::size_t>& layers) {
  const auto probs = predict(model, restrict_layers(split.values, layers));
  std::ostringstream warnings;
  return evaluate_probabilities(probs, split.labels, &warnings);
}

inline Json cmd_finetune(const RunConfig& rc, const Context& ctx = {}) {
  apply_threads(rc);
  const auto x = extract_settings(rc);
  const auto f = finetune_settings(rc);
  auto optim = optim_config(rc, "finetune");
  const auto m = load_manifest(manifest_path(rc));
  auto bb = load_backbone(rc, x.tap);
  const auto train = latents_for(rc, bb, m, "train", 0.0, nullptr, ctx);
  check_cache_matches(train, x);
  const bool has_valid = split_present(m, "valid");
  std::optional<LatentSplit> valid;
  if (has_valid) valid = latents_for(rc, bb, m, "valid", 0.0, nullptr, ctx);
  const std::string eval_split = split_present(m, "test") ? "test" : (has_valid ? "valid" : "train");
  const auto test = latents_for(rc, bb, m, eval_split, 0.0, nullptr, ctx);

  std::vector<std::size_t> layers;
  try {
    layers = layer_subset(train.layers(), f.layers);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("lft.layers: ") + e.what());
  }
  LatentSplit train_r = train;
  train_r.values = restrict_layers(train.values, layers);
  std::optional<LatentSplit> valid_r;
  if (valid) {
    valid_r = *valid;
    valid_r->values = restrict_layers(valid->values, layers);
  }
  const auto reference = reference_lft(rc, train.layers(), train.pools(), train.width(), train.channels(),
                                       static_cast<std::size_t>(m.num_classes));
  const auto lcfg = variant_config(reference, layers.size(), f.fusion, f.compensate);

  FinetuneOptions opt;
  opt.optim = optim;
  opt.smoothing = rc.num("finetune.smoothing");
  opt.class_weighted = f.class_weighted;
  opt.early_stop = rc.flag("finetune.early_stop");
  opt.patience = rc.size("finetune.patience");
  opt.min_epochs = rc.size("finetune.min_epochs");

  const auto dir = lft_dir(rc);
  fs::create_directories(dir);
  std::vector<MetricReport> reports;
  Json extra = Json::array();
  for (const auto seed : f.seeds) {
    opt.seed = seed;
    LFT<float> model(lcfg, seed);
    const auto sdir = seed_dir(dir, seed);
    fs::create_directories(sdir);
    TrainLog log(sdir / "train_log.jsonl");
    ctx.say("finetune: seed ", seed, " (", model.parameter_count(), " parameters, ", lcfg.encoder_blocks,
            " encoder blocks)");
    const auto res = finetune_lft(model, train_r, valid_r ? &*valid_r : nullptr, opt, &log,
                                  [&](const FinetuneResult& r) {
                                    ctx.say("  epoch ", r.epochs_run, " loss ", r.train_loss.back(),
                                            r.valid_kappa.empty() ? std::string()
                                                                  : " kappa " + std::to_string(r.valid_kappa.back()));
                                  });
    Json meta{{"seed", seed}, {"layers", layers}, {"layer_spec", f.layers}, {"backbone", bb.fingerprint}};
    meta["extract"] = {{"tap", to_string(x.tap)}, {"pool", to_string(x.pool)}, {"mode", to_string(x.mode)},
                       {"step", x.step}, {"pools", x.pools}};
    replace_checkpoint(sdir, lft_checkpoint(model, res, meta));
    reports.push_back(evaluate_model(model, test, layers));
    extra.push_back({{"seed", seed}, {"epochs", res.epochs_run}, {"best_epoch", res.best_epoch},
                     {"stopped_early", res.stopped_early}});
  }
  auto out = summarize_runs(reports, f.seeds);
  for (std::size_t i = 0; i < reports.size(); ++i) out["runs"][i]["training"] = extra[i];
  Json report{{"command", "finetune"}, {"split", eval_split}, {"model_dir", dir.string()},
              {"fusion", to_string(f.fusion)}, {"layers", f.layers}, {"fusion_blocks", lcfg.fusion_blocks},
              {"encoder_blocks", lcfg.encoder_blocks}, {"parameters", lft_parameter_count(lcfg)}};
  report.update(out);
  std::ofstream(dir / "metrics.json") << report.dump(2) << '\n';
  return report;
}

inline Json cmd_eval(const RunConfig& rc, const Context& ctx = {}) {
  apply_threads(rc);
  const auto x = extract_settings(rc);
  const auto f = finetune_settings(rc);
  const auto m = load_manifest(manifest_path(rc));
  const auto split = rc.str("eval.split");
  if (!split_present(m, split)) throw DataError("split '" + split + "' is empty");
  const double rate = rc.num("eval.resample_test");
  const auto dir = lft_dir(rc);
  auto bb = load_backbone(rc, x.tap);
  const auto latents = latents_for(rc, bb, m, split, rate, nullptr, ctx);
  check_cache_matches(latents, x);

  std::vector<MetricReport> reports;
  for (const auto seed : f.seeds) {
    const auto sdir = seed_dir(dir, seed);
    if (!fs::exists(sdir / "manifest.json")) throw DataError("missing fine-tuned model " + sdir.string());
    const auto c = load_checkpoint(sdir);
    if (c.kind != "lft") throw DataError("checkpoint in " + sdir.string() + " is not an LFT");
    if (c.meta.value("backbone", std::string()) != bb.fingerprint)
      throw DataError("model in " + sdir.string() + " was trained on a different backbone");
    LFT<float> model(LFTConfig::from_json(c.config), 0);
    load_weights(c, model.parameters(), WeightSet::ema);
    const auto layers = c.meta.at("layers").get<std::vector<std::size_t>>();
    reports.push_back(evaluate_model(model, latents, layers));
  }
  Json report{{"command", "eval"}, {"split", split}, {"model_dir", dir.string()},
              {"rate", rate > 0 ? rate : m.rate}};
  report.update(summarize_runs(reports, f.seeds));
  std::ostringstream name;
  name << "eval_" << split;
  if (rate > 0) name << "_" << detail::rate_json(rate).dump() << "hz";
  std::ofstream(dir / (name.str() + ".json")) << report.dump(2) << '\n';
  return report;
}

// ---------------------------------------------------------------- generate

inline Json cmd_generate(const RunConfig& rc, const Context& ctx = {}) {
  apply_threads(rc);
  auto bb = load_backbone(rc);
  std::size_t channels = bb.model.config().num_eeg_channels;
  std::size_t samples = rc.size("generate.samples");
  double rate = rc.num("generate.rate");
  if (fs::exists(manifest_path(rc))) {
    const auto m = load_manifest(manifest_path(rc));
    channels = m.channels;
    samples = m.samples;
    rate = m.rate;
  }
  const std::size_t count = rc.size("generate.count");
  if (!count) throw ConfigError("generate.count must be positive");
  const auto out_dir = rc.run_dir() / "generated";
  fs::create_directories(out_dir);
  const auto sched = make_schedule(bb.model.config().schedule, bb.model.config().steps);
  write_schedule_csv(out_dir / "schedule.csv", sched);

  std::vector<int> ids(count * channels);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i % channels);
  Rng rng = Rng(rc.seed()).split(0x9e4e);
  ctx.say("generate: ", count, " segments of ", channels, "x", samples);
  const auto x = ancestral_sample<float>(bb.model, sched, ids.size(), samples, ids, rng);

  std::ofstream wave(out_dir / "waveforms.csv", std::ios::trunc);
  wave << "segment,channel,sample,time,value\n" << std::setprecision(8);
  Json files = Json::array();
  for (std::size_t s = 0; s < count; ++s) {
    Tensor<float> sig(Shape{channels, samples});
    std::copy_n(x.data() + s * channels * samples, channels * samples, sig.data());
    char name[32];
    std::snprintf(name, sizeof name, "gen_%04zu.seg", s);
    write_segment(out_dir / name, Segment{sig, rate, rc.get<int>("generate.label")});
    files.push_back(name);
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t k = 0; k < samples; ++k)
        wave << s << ',' << c << ',' << k << ',' << static_cast<double>(k) / rate << ',' << sig[c * samples + k]
             << '\n';
  }
  return Json{{"command", "generate"}, {"dir", out_dir.string()}, {"seed", rc.seed()}, {"files", files}};
}

}  // namespace eegdm::cli

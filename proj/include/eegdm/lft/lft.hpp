#pragma once

#include <cstdlib>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "eegdm/attention/blocks.hpp"
#include "eegdm/latent/pool.hpp"
#include "eegdm/numerics/module.hpp"

namespace eegdm {

// base: per-layer decoder fusion into N tokens per pool.
// none: every (C, n, p) latent token goes straight to the encoder.
// mean: latents averaged over the layer axis, then the encoder.
enum class FusionKind { base, none, mean };

inline FusionKind parse_fusion_kind(const std::string& s) {
  if (s == "base") return FusionKind::base;
  if (s == "none") return FusionKind::none;
  if (s == "mean") return FusionKind::mean;
  throw std::invalid_argument("unknown fusion '" + s + "' (expected base, none or mean)");
}
inline const char* to_string(FusionKind k) {
  return k == FusionKind::base ? "base" : k == FusionKind::none ? "none" : "mean";
}

struct LFTConfig {
  std::size_t fusion_blocks = 20;  // one per backbone layer in use
  std::size_t encoder_blocks = 8;
  std::size_t heads = 8;
  std::size_t dim = 128;
  std::size_t mlp_hidden = 512;
  std::size_t tokens = 16;
  std::size_t num_classes = 6;
  std::size_t pools = 5;
  std::size_t latent_width = 128;
  std::size_t channels = 22;
  FusionKind fusion = FusionKind::base;
  double dropout = 0.0;

  void validate() const {
    if (!fusion_blocks || !heads || !dim || !mlp_hidden || !tokens || !pools || !latent_width || !channels)
      throw std::invalid_argument("LFTConfig: all sizes must be positive");
    if (num_classes < 2) throw std::invalid_argument("LFTConfig: need at least 2 classes");
    if (dim % heads) throw std::invalid_argument("LFTConfig: dim must be divisible by heads");
    if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("LFTConfig: dropout must be in [0, 1)");
  }

  // Encoder sequence length per sample.
  std::size_t sequence_length() const {
    switch (fusion) {
      case FusionKind::base: return pools * tokens;
      case FusionKind::none: return pools * fusion_blocks * channels;
      case FusionKind::mean: return pools * channels;
    }
    return 0;
  }

  nlohmann::ordered_json to_json() const {
    return {{"fusion_blocks", fusion_blocks}, {"encoder_blocks", encoder_blocks}, {"heads", heads},
            {"dim", dim},                     {"mlp_hidden", mlp_hidden},         {"tokens", tokens},
            {"num_classes", num_classes},     {"pools", pools},                   {"latent_width", latent_width},
            {"channels", channels},           {"fusion", to_string(fusion)},      {"dropout", dropout}};
  }

  static LFTConfig from_json(const nlohmann::json& j) {
    LFTConfig c;
    c.fusion_blocks = j.value("fusion_blocks", c.fusion_blocks);
    c.encoder_blocks = j.value("encoder_blocks", c.encoder_blocks);
    c.heads = j.value("heads", c.heads);
    c.dim = j.value("dim", c.dim);
    c.mlp_hidden = j.value("mlp_hidden", c.mlp_hidden);
    c.tokens = j.value("tokens", c.tokens);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.pools = j.value("pools", c.pools);
    c.latent_width = j.value("latent_width", c.latent_width);
    c.channels = j.value("channels", c.channels);
    c.fusion = parse_fusion_kind(j.value("fusion", std::string(to_string(c.fusion))));
    c.dropout = j.value("dropout", c.dropout);
    return c;
  }
};

// Closed-form trainable parameter count of an LFT built from `cfg`.
inline std::size_t lft_parameter_count(const LFTConfig& cfg) {
  const std::size_t d = cfg.dim, m = cfg.mlp_hidden;
  const std::size_t mha = 4 * (d * d + d), mlp = 2 * d * m + m + d, ln = 2 * d;
  const std::size_t dec = 2 * mha + mlp + 4 * ln, enc = mha + mlp + 2 * ln;
  std::size_t n = cfg.encoder_blocks * enc + cfg.sequence_length() * d + ln + d * cfg.num_classes + cfg.num_classes;
  if (cfg.latent_width != d) n += cfg.latent_width * d + d;
  if (cfg.fusion == FusionKind::base) n += cfg.fusion_blocks * dec + cfg.tokens * d;
  return n;
}

// Encoder depth for `variant` whose parameter count is closest to
// `reference`; ties go to the deeper model.
inline std::size_t compensated_encoder_depth(const LFTConfig& reference, LFTConfig variant,
                                             std::size_t max_depth = 256) {
  const auto target = static_cast<long double>(lft_parameter_count(reference));
  std::size_t best = 1;
  long double best_gap = std::numeric_limits<long double>::infinity();
  for (std::size_t depth = 1; depth <= max_depth; ++depth) {
    variant.encoder_blocks = depth;
    const long double gap = std::abs(static_cast<long double>(lft_parameter_count(variant)) - target);
    if (gap <= best_gap) {
      best_gap = gap;
      best = depth;
    }
  }
  return best;
}

// Layer subset by name for an n-layer backbone: all, first-half,
// second-half, q1..q4, or a comma-separated index list.
inline std::vector<std::size_t> layer_subset(std::size_t n, const std::string& spec) {
  auto range = [](std::size_t a, std::size_t b) {
    std::vector<std::size_t> out;
    for (std::size_t i = a; i < b; ++i) out.push_back(i);
    return out;
  };
  std::vector<std::size_t> out;
  if (spec == "all") out = range(0, n);
  else if (spec == "first-half") out = range(0, n / 2);
  else if (spec == "second-half") out = range(n / 2, n);
  else if (spec.size() == 2 && spec[0] == 'q' && spec[1] >= '1' && spec[1] <= '4') {
    const std::size_t k = static_cast<std::size_t>(spec[1] - '1');
    out = range(k * n / 4, (k + 1) * n / 4);
  } else {
    std::size_t pos = 0;
    while (pos < spec.size()) {
      const auto comma = spec.find(',', pos);
      const auto item = spec.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
      std::size_t used = 0;
      unsigned long v = 0;
      try {
        v = std::stoul(item, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (item.empty() || used != item.size())
        throw std::invalid_argument("layer subset: cannot parse '" + spec + "'");
      if (v >= n) throw std::out_of_range("layer subset: index " + item + " outside [0, " + std::to_string(n) + ")");
      out.push_back(v);
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
  }
  if (out.empty()) throw std::invalid_argument("layer subset '" + spec + "' is empty for n=" + std::to_string(n));
  return out;
}

// Restricts the layer axis of pooled latents (C, n, p, H).
inline PooledLatents layer_subset(const PooledLatents& pooled, const std::vector<std::size_t>& subset) {
  if (subset.empty()) throw std::invalid_argument("layer subset is empty");
  const std::size_t c = pooled.channels(), n = pooled.layers(), p = pooled.pools(), h = pooled.width();
  PooledLatents out{Tensor<float>(Shape{c, subset.size(), p, h}), pooled.kind, pooled.window};
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t j = 0; j < subset.size(); ++j) {
      if (subset[j] >= n) throw std::out_of_range("layer subset index outside the layer axis");
      std::copy_n(pooled.values.data() + (ci * n + subset[j]) * p * h, p * h,
                  out.values.data() + (ci * subset.size() + j) * p * h);
    }
  return out;
}

// Same restriction on a stack (S, C, n, p, H).
inline Tensor<float> restrict_layers(const Tensor<float>& stacked, const std::vector<std::size_t>& subset) {
  if (stacked.rank() != 5) throw std::invalid_argument("restrict_layers: expected (S, C, n, p, H)");
  if (subset.empty()) throw std::invalid_argument("layer subset is empty");
  const std::size_t s = stacked.dim(0), c = stacked.dim(1), n = stacked.dim(2), ph = stacked.dim(3) * stacked.dim(4);
  Tensor<float> out(Shape{s, c, subset.size(), stacked.dim(3), stacked.dim(4)});
  for (std::size_t sc = 0; sc < s * c; ++sc)
    for (std::size_t j = 0; j < subset.size(); ++j) {
      if (subset[j] >= n) throw std::out_of_range("layer subset index outside the layer axis");
      std::copy_n(stacked.data() + (sc * n + subset[j]) * ph, ph, out.data() + (sc * subset.size() + j) * ph);
    }
  return out;
}

template <class T>
class LFT {
 public:
  LFT(LFTConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const std::size_t d = cfg_.dim;
    Rng rng(seed);
    Rng r_in = rng.split(1), r_tok = rng.split(2), r_pos = rng.split(3), r_head = rng.split(4);
    if (cfg_.latent_width != d) {
      in_w_ = uniform_param<T>(Shape{d, cfg_.latent_width}, cfg_.latent_width, r_in);
      in_b_ = uniform_param<T>(Shape{d}, cfg_.latent_width, r_in);
    }
    if (cfg_.fusion == FusionKind::base) {
      tokens_ = truncated_normal_param(Shape{cfg_.tokens, d}, r_tok);
      for (std::size_t i = 0; i < cfg_.fusion_blocks; ++i) {
        Rng r = rng.split(100 + i);
        decoders_.emplace_back(d, cfg_.heads, cfg_.mlp_hidden, r);
      }
    }
    pos_ = truncated_normal_param(Shape{cfg_.sequence_length(), d}, r_pos);
    for (std::size_t i = 0; i < cfg_.encoder_blocks; ++i) {
      Rng r = rng.split(10000 + i);
      encoders_.emplace_back(d, cfg_.heads, cfg_.mlp_hidden, r);
    }
    final_ln_ = LayerNorm<T>(d);
    head_w_ = uniform_param<T>(Shape{cfg_.num_classes, d}, d, r_head);
    head_b_ = uniform_param<T>(Shape{cfg_.num_classes}, d, r_head);
  }

  const LFTConfig& config() const { return cfg_; }

  // Logits (S, K) from per-layer groups, each (S*p, C, H) as produced by
  // fusion_group or ops::pool_group.
  Var<T> forward_groups(const std::vector<Var<T>>& groups, std::size_t samples, const DropoutCtx& drop = {}) const {
    check_groups(groups, samples);
    const std::size_t d = cfg_.dim, p = cfg_.pools, c = groups[0].dim(1), h = cfg_.latent_width;
    Var<T> seq;
    switch (cfg_.fusion) {
      case FusionKind::base:
        seq = ops::reshape(fuse(groups, drop), Shape{samples, p * cfg_.tokens, d});
        break;
      case FusionKind::none:
        seq = project(ops::reshape(ops::concat_tokens(groups), Shape{samples, p * groups.size() * c, h}));
        break;
      case FusionKind::mean: {
        Var<T> acc = groups[0];
        for (std::size_t i = 1; i < groups.size(); ++i) acc = ops::add(acc, groups[i]);
        acc = ops::scale(acc, T(1) / static_cast<T>(groups.size()));
        seq = project(ops::reshape(acc, Shape{samples, p * c, h}));
        break;
      }
    }
    return classify(seq, drop);
  }

  // Logits (S, K) from a pooled stack (S, C, n, p, H).
  Var<T> forward(const Tensor<float>& stacked, const DropoutCtx& drop = {}) const {
    if (stacked.rank() != 5) throw std::invalid_argument("LFT: expected pooled latents (S, C, n, p, H)");
    std::vector<Var<T>> groups;
    for (std::size_t i = 0; i < stacked.dim(2); ++i) groups.emplace_back(fusion_group<T>(stacked, i));
    return forward_groups(groups, stacked.dim(0), drop);
  }

  // Class probabilities (S, K).
  Tensor<T> probabilities(const Tensor<float>& stacked) const {
    NoGradGuard no_grad;
    return ops::softmax_rows(forward(stacked).value());
  }

  // Routes N fresh copies of the fusion tokens through decoder block i with
  // group i as context. groups: (B, C, H) each; returns (B, N, dim).
  Var<T> fuse(const std::vector<Var<T>>& groups, const DropoutCtx& drop = {}) const {
    if (cfg_.fusion != FusionKind::base) throw std::logic_error("LFT: fuse needs the base fusion module");
    if (groups.size() != decoders_.size())
      throw std::invalid_argument("LFT: " + std::to_string(groups.size()) + " layer groups for " +
                                  std::to_string(decoders_.size()) + " fusion blocks");
    Var<T> x = ops::repeat_batch(tokens_, groups[0].dim(0));
    for (std::size_t i = 0; i < decoders_.size(); ++i) x = decoders_[i](x, project(groups[i]), drop);
    return x;
  }

  // Encoder classifier over token sequences (S, seq, dim) -> logits (S, K).
  Var<T> classify(const Var<T>& seq, const DropoutCtx& drop = {}) const {
    if (seq.value().rank() != 3 || seq.dim(1) != cfg_.sequence_length() || seq.dim(2) != cfg_.dim)
      throw std::invalid_argument("LFT: encoder input " + shape_string(seq.shape()) + " does not match sequence " +
                                  std::to_string(cfg_.sequence_length()) + " x " + std::to_string(cfg_.dim));
    Var<T> x = drop(ops::add_broadcast(seq, pos_));
    for (const auto& enc : encoders_) x = enc(x, drop);
    return ops::linear(ops::mean_tokens(final_ln_(x)), head_w_, head_b_);
  }

  ParamList<T> parameters() const {
    ParamList<T> out;
    if (in_w_.defined()) {
      out.push_back({"input.w", in_w_});
      out.push_back({"input.b", in_b_, false});
    }
    if (tokens_.defined()) out.push_back({"fusion_tokens", tokens_, false});
    for (std::size_t i = 0; i < decoders_.size(); ++i)
      append(out, "fusion." + std::to_string(i) + ".", decoders_[i].parameters());
    out.push_back({"pos_embed", pos_});
    for (std::size_t i = 0; i < encoders_.size(); ++i)
      append(out, "encoder." + std::to_string(i) + ".", encoders_[i].parameters());
    append(out, "final_ln.", final_ln_.parameters());
    out.push_back({"head.w", head_w_});
    out.push_back({"head.b", head_b_, false});
    return out;
  }

  std::size_t parameter_count() const { return count_parameters(parameters()); }

  // Independent copy with the same weights.
  LFT clone() const {
    LFT copy(cfg_, 0);
    copy_values(copy.parameters(), parameters());
    return copy;
  }

  // Direct access for tests and diagnostics.
  const std::vector<DecoderBlock<T>>& decoders() const { return decoders_; }
  const Var<T>& fusion_tokens() const { return tokens_; }

 private:
  static Var<T> truncated_normal_param(Shape shape, Rng& rng) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.values()) v = static_cast<T>(rng.truncated_normal(0.02));
    return Var<T>::parameter(std::move(t));
  }

  Var<T> project(const Var<T>& x) const { return in_w_.defined() ? ops::linear(x, in_w_, in_b_) : x; }

  void check_groups(const std::vector<Var<T>>& groups, std::size_t samples) const {
    if (groups.size() != cfg_.fusion_blocks)
      throw std::invalid_argument("LFT: " + std::to_string(groups.size()) + " layer groups, config expects " +
                                  std::to_string(cfg_.fusion_blocks));
    for (const auto& g : groups) {
      if (g.value().rank() != 3 || g.dim(0) != samples * cfg_.pools || g.dim(2) != cfg_.latent_width ||
          g.dim(1) != groups[0].dim(1))
        throw std::invalid_argument("LFT: group " + shape_string(g.shape()) + " does not match (" +
                                    std::to_string(samples * cfg_.pools) + ", C, " +
                                    std::to_string(cfg_.latent_width) + ")");
      if (cfg_.fusion != FusionKind::base && g.dim(1) != cfg_.channels)
        throw std::invalid_argument("LFT: " + std::to_string(g.dim(1)) + " channels, config expects " +
                                    std::to_string(cfg_.channels));
    }
  }

  LFTConfig cfg_;
  Var<T> in_w_, in_b_, tokens_, pos_, head_w_, head_b_;
  std::vector<DecoderBlock<T>> decoders_;
  std::vector<EncoderBlock<T>> encoders_;
  LayerNorm<T> final_ln_;
};

// Config for a layer subset and fusion variant of `reference`, with the
// encoder deepened to keep the parameter count close to the reference.
inline LFTConfig variant_config(const LFTConfig& reference, std::size_t used_layers, FusionKind fusion,
                                bool compensate = true) {
  LFTConfig v = reference;
  v.fusion_blocks = used_layers;
  v.fusion = fusion;
  if (compensate && (used_layers != reference.fusion_blocks || fusion != reference.fusion))
    v.encoder_blocks = compensated_encoder_depth(reference, v);
  v.validate();
  return v;
}

}  // namespace eegdm

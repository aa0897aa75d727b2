#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "eegdm/diffusion/schedule.hpp"
#include "eegdm/numerics/autograd.hpp"
#include "eegdm/numerics/module.hpp"
#include "eegdm/numerics/ops.hpp"
#include "eegdm/numerics/random.hpp"
#include "eegdm/ssm/bank.hpp"

namespace eegdm {

enum class TapKind { gate, filter };
enum class TapPoint { pre_cond, post_cond };

inline TapKind parse_tap_kind(const std::string& s) {
  if (s == "gate") return TapKind::gate;
  if (s == "filter") return TapKind::filter;
  throw std::invalid_argument("unknown tap '" + s + "' (expected gate or filter)");
}
inline const char* to_string(TapKind k) { return k == TapKind::gate ? "gate" : "filter"; }

inline TapPoint parse_tap_point(const std::string& s) {
  if (s == "pre_cond") return TapPoint::pre_cond;
  if (s == "post_cond") return TapPoint::post_cond;
  throw std::invalid_argument("unknown tap point '" + s + "' (expected pre_cond or post_cond)");
}
inline const char* to_string(TapPoint p) { return p == TapPoint::pre_cond ? "pre_cond" : "post_cond"; }

struct SSMDPConfig {
  std::size_t n_layers = 20;
  std::size_t residual_channels = 128;
  std::size_t gate_channels = 128;
  std::size_t filter_channels = 128;
  std::size_t state_dim = 128;
  std::size_t embed_dim = 128;
  int steps = 50;
  std::size_t num_eeg_channels = 22;
  std::string schedule = "cosine";
  TapKind tap = TapKind::gate;
  TapPoint tap_point = TapPoint::pre_cond;

  void validate() const {
    if (!n_layers || !residual_channels || !gate_channels || !filter_channels || !state_dim || !embed_dim ||
        steps < 1 || !num_eeg_channels)
      throw std::invalid_argument("SSMDPConfig: all sizes must be positive");
    if (gate_channels != filter_channels)
      throw std::invalid_argument("SSMDPConfig: gate and filter widths must match for the gated product");
    if (embed_dim % 2) throw std::invalid_argument("SSMDPConfig: embed_dim must be even");
  }

  std::size_t tap_width() const { return tap == TapKind::gate ? gate_channels : filter_channels; }

  nlohmann::ordered_json to_json() const {
    return {{"n_layers", n_layers},
            {"residual_channels", residual_channels},
            {"gate_channels", gate_channels},
            {"filter_channels", filter_channels},
            {"state_dim", state_dim},
            {"embed_dim", embed_dim},
            {"steps", steps},
            {"num_eeg_channels", num_eeg_channels},
            {"schedule", schedule},
            {"tap", to_string(tap)},
            {"tap_point", to_string(tap_point)}};
  }

  static SSMDPConfig from_json(const nlohmann::json& j) {
    SSMDPConfig c;
    c.n_layers = j.value("n_layers", c.n_layers);
    c.residual_channels = j.value("residual_channels", c.residual_channels);
    c.gate_channels = j.value("gate_channels", c.gate_channels);
    c.filter_channels = j.value("filter_channels", c.filter_channels);
    c.state_dim = j.value("state_dim", c.state_dim);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.steps = j.value("steps", c.steps);
    c.num_eeg_channels = j.value("num_eeg_channels", c.num_eeg_channels);
    c.schedule = j.value("schedule", c.schedule);
    c.tap = parse_tap_kind(j.value("tap", std::string(to_string(c.tap))));
    c.tap_point = parse_tap_point(j.value("tap_point", std::string(to_string(c.tap_point))));
    return c;
  }
};

// Interleaved [sin(t w_0), cos(t w_0), sin(t w_1), ...] with
// w_k = 10000^(-k / (dim / 2)).
inline std::vector<double> step_embedding(int t, std::size_t dim) {
  if (dim % 2) throw std::invalid_argument("step_embedding: dim must be even");
  if (t < 0) throw std::invalid_argument("step_embedding: step must be >= 0");
  const std::size_t half = dim / 2;
  std::vector<double> e(dim);
  for (std::size_t k = 0; k < half; ++k) {
    const double w = std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(half));
    e[2 * k] = std::sin(t * w);
    e[2 * k + 1] = std::cos(t * w);
  }
  return e;
}

namespace ops {

// tanh(filter) * sigmoid(gate) for s = [gate; filter] along the channel axis
// of (B, 2H, L); returns (B, H, L).
template <class T>
Var<T> gated_activation(const Var<T>& s) {
  detail::require(s.value().rank() == 3 && s.dim(1) % 2 == 0, "gated_activation", "input must be (B, 2H, L)");
  const std::size_t batch = s.dim(0), h = s.dim(1) / 2, len = s.dim(2);
  Tensor<T> y(Shape{batch, h, len});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < h * len; ++i) {
      const T g = s.value()[b * 2 * h * len + i];
      const T f = s.value()[b * 2 * h * len + h * len + i];
      y[b * h * len + i] = std::tanh(f) / (T(1) + std::exp(-g));
    }
  return record<T>(std::move(y), {s}, [batch, h, len](Node<T>& self) {
    auto* gs = self.parent_grad(0);
    if (!gs) return;
    const auto& sv = self.parent_value(0);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < h * len; ++i) {
        const std::size_t gi = b * 2 * h * len + i, fi = gi + h * len;
        const T sig = T(1) / (T(1) + std::exp(-sv[gi]));
        const T th = std::tanh(sv[fi]);
        const T go = self.grad[b * h * len + i];
        (*gs)[gi] += go * th * sig * (T(1) - sig);
        (*gs)[fi] += go * sig * (T(1) - th * th);
      }
  });
}

}  // namespace ops

// One gated residual block: pointwise Hres -> 2H, per-channel bidirectional
// S4D over [gate; filter], conditioning add, tanh * sigmoid, pointwise
// H -> 2 Hres split into residual and skip.
template <class T>
struct GatedBlock {
  Var<T> in_w, in_b;
  BidirectionalS4D<T> s4;
  Var<T> cond_w, cond_b;
  Var<T> out_w, out_b;

  GatedBlock() = default;
  GatedBlock(const SSMDPConfig& cfg, Rng& rng) {
    const std::size_t hres = cfg.residual_channels, h2 = cfg.gate_channels + cfg.filter_channels;
    Rng r0 = rng.split(0), r1 = rng.split(1), r2 = rng.split(2), r3 = rng.split(3);
    in_w = uniform_param<T>({h2, hres}, hres, r0);
    in_b = uniform_param<T>({h2}, hres, r0);
    s4 = BidirectionalS4D<T>(h2, cfg.state_dim, r1);
    cond_w = uniform_param<T>({h2, cfg.embed_dim}, cfg.embed_dim, r2);
    cond_b = uniform_param<T>({h2}, cfg.embed_dim, r2);
    out_w = uniform_param<T>({2 * hres, cfg.gate_channels}, cfg.gate_channels, r3);
    out_b = uniform_param<T>({2 * hres}, cfg.gate_channels, r3);
  }

  ParamList<T> parameters() const {
    ParamList<T> out{{"in.w", in_w}, {"in.b", in_b, false}};
    append(out, "s4.", s4.parameters());
    out.push_back({"cond.w", cond_w});
    out.push_back({"cond.b", cond_b, false});
    out.push_back({"out.w", out_w});
    out.push_back({"out.b", out_b, false});
    return out;
  }
};

template <class T>
struct BlockOutput {
  Var<T> residual;  // (B, Hres, L), already (u + res) / sqrt(2)
  Var<T> skip;      // (B, Hres, L)
  Var<T> tap_gate;  // (B, Hg, L)
  Var<T> tap_filter;
};

template <class T>
BlockOutput<T> block_forward(const GatedBlock<T>& blk, const SSMDPConfig& cfg, const Var<T>& u, const Var<T>& cond) {
  const std::size_t hres = cfg.residual_channels, hg = cfg.gate_channels, hf = cfg.filter_channels;
  if (u.value().rank() != 3 || u.dim(1) != hres)
    throw std::invalid_argument("block_forward: hidden must be (B, " + std::to_string(hres) + ", L), got " +
                                shape_string(u.shape()));
  if (cond.value().rank() != 2 || cond.dim(0) != u.dim(0) || cond.dim(1) != cfg.embed_dim)
    throw std::invalid_argument("block_forward: conditioning shape mismatch " + shape_string(cond.shape()));
  auto h = ops::conv1x1(u, blk.in_w, blk.in_b);
  auto s = blk.s4(h);
  BlockOutput<T> out;
  if (cfg.tap_point == TapPoint::pre_cond) {
    out.tap_gate = ops::slice_channels(s, 0, hg);
    out.tap_filter = ops::slice_channels(s, hg, hf);
  }
  s = ops::add_over_time(s, ops::linear(cond, blk.cond_w, blk.cond_b));
  if (cfg.tap_point == TapPoint::post_cond) {
    out.tap_gate = ops::slice_channels(s, 0, hg);
    out.tap_filter = ops::slice_channels(s, hg, hf);
  }
  auto z = ops::gated_activation(s);
  auto o = ops::conv1x1(z, blk.out_w, blk.out_b);
  out.residual = ops::scale(ops::add(u, ops::slice_channels(o, 0, hres)), static_cast<T>(1.0 / std::sqrt(2.0)));
  out.skip = ops::slice_channels(o, hres, hres);
  return out;
}

// Velocity predictor over independent single-channel rows.
template <class T>
class SSMDP {
 public:
  // Called with (block index, tap (B, H, L)) during forward when provided.
  using TapSink = std::function<void(std::size_t, const Var<T>&)>;

  SSMDP() = default;
  SSMDP(const SSMDPConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    const Rng root(seed);
    Rng r_in = root.split(1), r_emb = root.split(2), r_head = root.split(3);
    input_w_ = uniform_param<T>({cfg_.residual_channels, 1}, 1, r_in);
    input_b_ = uniform_param<T>({cfg_.residual_channels}, 1, r_in);
    Tensor<T> emb(Shape{cfg_.num_eeg_channels, cfg_.embed_dim});
    for (auto& v : emb.values()) v = static_cast<T>(r_emb.normal());
    channel_embed_ = Var<T>::parameter(std::move(emb));
    for (std::size_t i = 0; i < cfg_.n_layers; ++i) {
      Rng rb = root.split(1000 + i);
      blocks_.emplace_back(cfg_, rb);
    }
    head_w_ = uniform_param<T>({1, cfg_.residual_channels}, cfg_.residual_channels, r_head);
    head_b_ = uniform_param<T>({1}, cfg_.residual_channels, r_head);
  }

  const SSMDPConfig& config() const { return cfg_; }
  std::size_t num_layers() const { return blocks_.size(); }

  // x (B, L) noised rows, one diffusion step and one EEG channel id per row.
  Var<T> forward(const Var<T>& x, const std::vector<int>& steps, const std::vector<int>& channel_ids,
                 const TapSink& sink = {}, std::size_t max_blocks = SIZE_MAX) const {
    if (x.value().rank() != 2) throw std::invalid_argument("ssmdp: input must be (rows, L)");
    const std::size_t batch = x.dim(0), len = x.dim(1);
    if (steps.size() != batch || channel_ids.size() != batch)
      throw std::invalid_argument("ssmdp: one step and one channel id per row required");
    for (int id : channel_ids)
      if (id < 0 || static_cast<std::size_t>(id) >= cfg_.num_eeg_channels)
        throw std::out_of_range("ssmdp: unknown channel id " + std::to_string(id));

    Tensor<T> step_emb(Shape{batch, cfg_.embed_dim});
    for (std::size_t b = 0; b < batch; ++b) {
      const auto e = step_embedding(steps[b], cfg_.embed_dim);
      for (std::size_t k = 0; k < cfg_.embed_dim; ++k) step_emb[b * cfg_.embed_dim + k] = static_cast<T>(e[k]);
    }
    auto cond = ops::add(ops::gather_rows(channel_embed_, channel_ids), ops::constant(std::move(step_emb)));

    auto u = ops::relu(ops::conv1x1(ops::reshape(x, Shape{batch, 1, len}), input_w_, input_b_));
    Var<T> skip_sum;
    const std::size_t n_run = std::min(max_blocks, blocks_.size());
    for (std::size_t i = 0; i < n_run; ++i) {
      auto out = block_forward(blocks_[i], cfg_, u, cond);
      if (sink) sink(i, cfg_.tap == TapKind::gate ? out.tap_gate : out.tap_filter);
      u = out.residual;
      skip_sum = skip_sum.defined() ? ops::add(skip_sum, out.skip) : out.skip;
    }
    if (n_run < blocks_.size()) return {};
    auto head = ops::relu(ops::scale(skip_sum, static_cast<T>(1.0 / std::sqrt(static_cast<double>(n_run)))));
    auto y = ops::conv1x1(head, head_w_, head_b_);
    return ops::reshape(y, Shape{batch, len});
  }

  Var<T> operator()(const Var<T>& x, const std::vector<int>& steps, const std::vector<int>& channel_ids) const {
    return forward(x, steps, channel_ids);
  }

  ParamList<T> parameters() const {
    ParamList<T> out{{"input.w", input_w_}, {"input.b", input_b_, false}, {"channel_embed", channel_embed_}};
    for (std::size_t i = 0; i < blocks_.size(); ++i) append(out, "blocks." + std::to_string(i) + ".", blocks_[i].parameters());
    out.push_back({"head.w", head_w_});
    out.push_back({"head.b", head_b_, false});
    return out;
  }

  std::size_t parameter_count() const { return count_parameters(parameters()); }

  // Rescale every S4D step for data sampled at ratio * the training rate.
  void retarget(const RateRatio& ratio) {
    for (auto& b : blocks_) b.s4.retarget(ratio);
  }
  void set_rate(const RateRatio& rate) {
    for (auto& b : blocks_) b.s4.set_rate(rate);
  }
  RateRatio rate() const { return blocks_.empty() ? RateRatio{} : blocks_.front().s4.rate(); }

  std::vector<GatedBlock<T>>& blocks() { return blocks_; }
  const std::vector<GatedBlock<T>>& blocks() const { return blocks_; }

  // Deep copy with independent parameter storage.
  SSMDP clone() const {
    SSMDP out(cfg_, 0);
    auto src = parameters();
    auto dst = out.parameters();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i].var.mutable_value() = src[i].var.value();
    out.set_rate(rate());
    return out;
  }

 private:
  SSMDPConfig cfg_;
  Var<T> input_w_, input_b_, channel_embed_;
  std::vector<GatedBlock<T>> blocks_;
  Var<T> head_w_, head_b_;
};

}  // namespace eegdm

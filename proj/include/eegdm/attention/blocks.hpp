#pragma once

#include <stdexcept>
#include <string>

#include "eegdm/attention/attention.hpp"
#include "eegdm/numerics/module.hpp"

namespace eegdm {

// Dropout settings threaded through blocks. Inactive unless rate > 0 and an
// rng is supplied (training).
struct DropoutCtx {
  double rate = 0.0;
  Rng* rng = nullptr;

  template <class T>
  Var<T> operator()(const Var<T>& x) const {
    return (rate > 0.0 && rng) ? ops::dropout(x, rate, *rng) : x;
  }
};

template <class T>
struct LayerNorm {
  Var<T> gamma, beta;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t dim)
      : gamma(constant_param<T>(Shape{dim}, T(1))), beta(constant_param<T>(Shape{dim}, T(0))) {}

  Var<T> operator()(const Var<T>& x) const { return ops::layer_norm(x, gamma, beta); }

  ParamList<T> parameters() const { return {{"gamma", gamma}, {"beta", beta, false}}; }
};

template <class T>
struct MultiHeadAttention {
  std::size_t heads = 1;
  Var<T> wq, bq, wk, bk, wv, bv, wo, bo;

  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t dim, std::size_t n_heads, Rng& rng) : heads(n_heads) {
    if (n_heads == 0 || dim % n_heads != 0)
      throw std::invalid_argument("multi-head attention: dim " + std::to_string(dim) + " not divisible by " +
                                  std::to_string(n_heads) + " heads");
    for (Var<T>* w : {&wq, &wk, &wv, &wo}) *w = uniform_param<T>(Shape{dim, dim}, dim, rng);
    for (Var<T>* b : {&bq, &bk, &bv, &bo}) *b = uniform_param<T>(Shape{dim}, dim, rng);
  }

  std::size_t dim() const { return wq.dim(0); }

  // queries (B, L1, d), context (B, L2, d) -> (B, L1, d).
  Var<T> operator()(const Var<T>& queries, const Var<T>& context) const {
    const auto q = ops::linear(queries, wq, bq);
    const auto k = ops::linear(context, wk, bk);
    const auto v = ops::linear(context, wv, bv);
    return ops::linear(ops::multi_head_sdpa(q, k, v, heads), wo, bo);
  }

  ParamList<T> parameters() const {
    return {{"wq", wq}, {"bq", bq, false}, {"wk", wk}, {"bk", bk, false},
            {"wv", wv}, {"bv", bv, false}, {"wo", wo}, {"bo", bo, false}};
  }
};

// Unbatched multi-head attention of S1 (L1, d) over S2 (L2, d).
template <class T>
Tensor<T> multi_head(const Tensor<T>& s1, const Tensor<T>& s2, const MultiHeadAttention<T>& mha) {
  if (s1.rank() != 2 || s2.rank() != 2 || s1.dim(1) != mha.dim() || s2.dim(1) != mha.dim())
    throw std::invalid_argument("multi_head: inputs must be (L, " + std::to_string(mha.dim()) + ")");
  NoGradGuard no_grad;
  const auto out = mha(Var<T>(s1.reshaped(Shape{1, s1.dim(0), s1.dim(1)})),
                       Var<T>(s2.reshaped(Shape{1, s2.dim(0), s2.dim(1)})));
  return out.value().reshaped(Shape{s1.dim(0), s1.dim(1)});
}

template <class T>
struct Mlp {
  Var<T> w1, b1, w2, b2;

  Mlp() = default;
  Mlp(std::size_t dim, std::size_t hidden, Rng& rng)
      : w1(uniform_param<T>(Shape{hidden, dim}, dim, rng)),
        b1(uniform_param<T>(Shape{hidden}, dim, rng)),
        w2(uniform_param<T>(Shape{dim, hidden}, hidden, rng)),
        b2(uniform_param<T>(Shape{dim}, hidden, rng)) {}

  Var<T> operator()(const Var<T>& x, const DropoutCtx& drop = {}) const {
    return ops::linear(drop(ops::gelu(ops::linear(x, w1, b1))), w2, b2);
  }

  ParamList<T> parameters() const { return {{"w1", w1}, {"b1", b1, false}, {"w2", w2}, {"b2", b2, false}}; }
};

// Pre-norm encoder block: x + attn(ln(x)), then x + mlp(ln(x)).
template <class T>
struct EncoderBlock {
  LayerNorm<T> ln_attn, ln_mlp;
  MultiHeadAttention<T> attn;
  Mlp<T> mlp;

  EncoderBlock() = default;
  EncoderBlock(std::size_t dim, std::size_t heads, std::size_t hidden, Rng& rng)
      : ln_attn(dim), ln_mlp(dim), attn(dim, heads, rng), mlp(dim, hidden, rng) {}

  Var<T> operator()(const Var<T>& x, const DropoutCtx& drop = {}) const {
    const auto h = ln_attn(x);
    const auto y = ops::add(x, drop(attn(h, h)));
    return ops::add(y, drop(mlp(ln_mlp(y), drop)));
  }

  ParamList<T> parameters() const {
    ParamList<T> out;
    append(out, "ln_attn.", ln_attn.parameters());
    append(out, "attn.", attn.parameters());
    append(out, "ln_mlp.", ln_mlp.parameters());
    append(out, "mlp.", mlp.parameters());
    return out;
  }
};

// Pre-norm decoder block without masking: self-attention over the queries,
// cross-attention from queries to the context tokens, then MLP.
template <class T>
struct DecoderBlock {
  LayerNorm<T> ln_self, ln_query, ln_context, ln_mlp;
  MultiHeadAttention<T> self_attn, cross_attn;
  Mlp<T> mlp;

  DecoderBlock() = default;
  DecoderBlock(std::size_t dim, std::size_t heads, std::size_t hidden, Rng& rng)
      : ln_self(dim), ln_query(dim), ln_context(dim), ln_mlp(dim),
        self_attn(dim, heads, rng), cross_attn(dim, heads, rng), mlp(dim, hidden, rng) {}

  // x (B, N, d) queries, context (B, C, d).
  Var<T> operator()(const Var<T>& x, const Var<T>& context, const DropoutCtx& drop = {}) const {
    const auto h = ln_self(x);
    auto y = ops::add(x, drop(self_attn(h, h)));
    y = ops::add(y, drop(cross_attn(ln_query(y), ln_context(context))));
    return ops::add(y, drop(mlp(ln_mlp(y), drop)));
  }

  ParamList<T> parameters() const {
    ParamList<T> out;
    append(out, "ln_self.", ln_self.parameters());
    append(out, "self_attn.", self_attn.parameters());
    append(out, "ln_query.", ln_query.parameters());
    append(out, "ln_context.", ln_context.parameters());
    append(out, "cross_attn.", cross_attn.parameters());
    append(out, "ln_mlp.", ln_mlp.parameters());
    append(out, "mlp.", mlp.parameters());
    return out;
  }
};

}  // namespace eegdm

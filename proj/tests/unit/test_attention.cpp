#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "eegdm/attention/blocks.hpp"
#include "eegdm/numerics/gradcheck.hpp"
#include "helpers.hpp"

using namespace eegdm;

namespace {

// Reference multi-head attention by explicit loops over heads.
Tensor<double> naive_multi_head(const Tensor<double>& s1, const Tensor<double>& s2,
                                const MultiHeadAttention<double>& m) {
  const std::size_t l1 = s1.dim(0), l2 = s2.dim(0), d = s1.dim(1), dh = d / m.heads;
  auto proj = [&](const Tensor<double>& x, const Var<double>& w, const Var<double>& b) {
    Tensor<double> y(Shape{x.dim(0), d});
    for (std::size_t r = 0; r < x.dim(0); ++r)
      for (std::size_t o = 0; o < d; ++o) {
        double acc = b.value()[o];
        for (std::size_t i = 0; i < d; ++i) acc += w.value()[o * d + i] * x[r * d + i];
        y[r * d + o] = acc;
      }
    return y;
  };
  auto q = proj(s1, m.wq, m.bq), k = proj(s2, m.wk, m.bk), v = proj(s2, m.wv, m.bv);
  Tensor<double> cat(Shape{l1, d});
  for (std::size_t h = 0; h < m.heads; ++h) {
    Tensor<double> qh(Shape{l1, dh}), kh(Shape{l2, dh}), vh(Shape{l2, dh});
    for (std::size_t r = 0; r < l1; ++r)
      for (std::size_t c = 0; c < dh; ++c) qh[r * dh + c] = q[r * d + h * dh + c];
    for (std::size_t r = 0; r < l2; ++r)
      for (std::size_t c = 0; c < dh; ++c) {
        kh[r * dh + c] = k[r * d + h * dh + c];
        vh[r * dh + c] = v[r * d + h * dh + c];
      }
    auto oh = attention(qh, kh, vh);
    for (std::size_t r = 0; r < l1; ++r)
      for (std::size_t c = 0; c < dh; ++c) cat[r * d + h * dh + c] = oh[r * dh + c];
  }
  return proj(cat, m.wo, m.bo);
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(Attention, WeightRowsSumToOne) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    auto w = attention_weights(testutil::randn({3, 4}, rng), testutil::randn({5, 4}, rng));
    for (std::size_t i = 0; i < 3; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 5; ++j) {
        EXPECT_GE(w[i * 5 + j], 0.0);
        s += w[i * 5 + j];
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(Attention, SingleKeyReplicatesValueRow) {
  Rng rng(2);
  auto v = testutil::randn({1, 4}, rng);
  auto out = attention(testutil::randn({6, 4}, rng), testutil::randn({1, 4}, rng), v);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(out[i * 4 + c], v[c], 1e-12);
}

TEST(Attention, EqualScoresGiveColumnMean) {
  Rng rng(3);
  Tensor<double> q(Shape{2, 3}), k(Shape{4, 3}, 1.0);
  auto v = testutil::randn({4, 3}, rng);
  auto out = attention(q, k, v);
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0;
    for (std::size_t j = 0; j < 4; ++j) mean += v[j * 3 + c] / 4;
    EXPECT_NEAR(out[c], mean, 1e-12);
    EXPECT_NEAR(out[3 + c], mean, 1e-12);
  }
}

TEST(Attention, ShiftInvariantScores) {
  // adding a constant to every score in a row: a shared offset in K along Q
  Rng rng(4);
  auto q = testutil::randn({2, 3}, rng);
  auto k = testutil::randn({5, 3}, rng);
  Tensor<double> q1(Shape{1, 3}, std::vector<double>{1, 0, 0});
  Tensor<double> k_shift = k;
  for (std::size_t j = 0; j < 5; ++j) k_shift[j * 3] += 2.5;
  auto a = attention_weights(q1, k), b = attention_weights(q1, k_shift);
  EXPECT_LT(max_abs_diff(a, b), 1e-12);
  auto s = ops::softmax_rows(q);
  for (auto& x : q.values()) x += 7.0;
  EXPECT_LT(max_abs_diff(s, ops::softmax_rows(q)), 1e-12);
}

TEST(Attention, Errors) {
  Tensor<double> q(Shape{2, 3}), k(Shape{0, 3}), v(Shape{0, 3});
  EXPECT_THROW(attention(q, k, v), std::invalid_argument);
  EXPECT_THROW(attention(q, Tensor<double>(Shape{2, 4}), Tensor<double>(Shape{2, 4})), std::invalid_argument);
  Rng rng(5);
  EXPECT_THROW(MultiHeadAttention<double>(10, 3, rng), std::invalid_argument);
}

TEST(MultiHead, MatchesPerHeadLoops) {
  Rng rng(6);
  MultiHeadAttention<double> m(8, 4, rng);
  auto s1 = testutil::randn({3, 8}, rng), s2 = testutil::randn({5, 8}, rng);
  auto out = multi_head(s1, s2, m);
  EXPECT_EQ(out.shape(), (Shape{3, 8}));
  EXPECT_LT(max_abs_diff(out, naive_multi_head(s1, s2, m)), 1e-12);
}

TEST(MultiHead, SingleHeadIsAttentionThenOutputMap) {
  Rng rng(7);
  MultiHeadAttention<double> m(6, 1, rng);
  auto s1 = testutil::randn({4, 6}, rng);
  EXPECT_LT(max_abs_diff(multi_head(s1, s1, m), naive_multi_head(s1, s1, m)), 1e-12);
}

TEST(MultiHead, CrossAttentionKeyValuePermutationInvariance) {
  Rng rng(8);
  MultiHeadAttention<double> m(16, 4, rng);
  for (int trial = 0; trial < 20; ++trial) {
    auto s1 = testutil::randn({5, 16}, rng), s2 = testutil::randn({7, 16}, rng);
    std::vector<std::size_t> perm(7);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    Tensor<double> s2p(s2.shape());
    for (std::size_t r = 0; r < 7; ++r) std::copy_n(s2.data() + perm[r] * 16, 16, s2p.data() + r * 16);
    EXPECT_LT(max_abs_diff(multi_head(s1, s2, m), multi_head(s1, s2p, m)), 1e-6);
  }
}

TEST(MultiHead, SdpaGradientsMatchFiniteDifferences) {
  Rng rng(9);
  auto q = Var<double>::parameter(testutil::randn({2, 3, 8}, rng));
  auto k = Var<double>::parameter(testutil::randn({2, 5, 8}, rng));
  auto v = Var<double>::parameter(testutil::randn({2, 5, 8}, rng));
  auto w = Var<double>(testutil::randn({2, 3, 8}, rng));
  auto res = grad_check({{"q", q}, {"k", k}, {"v", v}},
                        [&] { return ops::sum(ops::mul(ops::multi_head_sdpa(q, k, v, 2), w)); });
  EXPECT_LT(res.max_rel_error, 1e-3) << res.worst_param << "[" << res.worst_index << "]";
}

TEST(Blocks, DecoderAndEncoderGradients) {
  Rng rng(10);
  DecoderBlock<double> dec(8, 2, 16, rng);
  EncoderBlock<double> enc(8, 2, 16, rng);
  auto x = Var<double>::parameter(testutil::randn({2, 3, 8}, rng));
  auto ctx = Var<double>::parameter(testutil::randn({2, 4, 8}, rng));
  auto w = Var<double>(testutil::randn({2, 3, 8}, rng));
  std::vector<NamedVar> params{{"x", x}, {"ctx", ctx}};
  for (auto& p : dec.parameters()) params.push_back({"dec." + p.name, p.var});
  for (auto& p : enc.parameters()) params.push_back({"enc." + p.name, p.var});
  // key biases have an exactly zero gradient, so use the absolute floor
  auto res = grad_check(params, [&] { return ops::sum(ops::mul(enc(dec(x, ctx)), w)); }, 1e-5, kModelGradFloor);
  EXPECT_LT(res.max_rel_error, 1e-3) << res.worst_param << "[" << res.worst_index << "] " << res.worst_analytic
                                     << " vs " << res.worst_numeric;
}

TEST(Blocks, ParameterCounts) {
  Rng rng(11);
  EXPECT_EQ(count_parameters(MultiHeadAttention<float>(128, 8, rng).parameters()), 66048u);
  EXPECT_EQ(count_parameters(EncoderBlock<float>(128, 8, 512, rng).parameters()), 198272u);
  EXPECT_EQ(count_parameters(DecoderBlock<float>(128, 8, 512, rng).parameters()), 264832u);
}

TEST(Blocks, BiasesAndNormsAreDecayExempt) {
  Rng rng(12);
  for (const auto& p : DecoderBlock<float>(8, 2, 16, rng).parameters()) {
    const bool exempt = p.name.find(".b") != std::string::npos;
    EXPECT_EQ(p.decay, !exempt) << p.name;
  }
}

TEST(Blocks, DropoutOnlyWhenConfigured) {
  Rng rng(13);
  EncoderBlock<double> enc(8, 2, 16, rng);
  auto x = Var<double>(testutil::randn({1, 4, 8}, rng));
  NoGradGuard g;
  auto a = enc(x), b = enc(x, DropoutCtx{0.5, nullptr});
  EXPECT_EQ(max_abs_diff(a.value(), b.value()), 0.0);
  Rng drop_rng(1);
  auto c = enc(x, DropoutCtx{0.5, &drop_rng});
  EXPECT_GT(max_abs_diff(a.value(), c.value()), 0.0);
}

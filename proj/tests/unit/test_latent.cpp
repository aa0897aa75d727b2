#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "eegdm/latent/pool.hpp"
#include "eegdm/numerics/gradcheck.hpp"
#include "helpers.hpp"

using namespace eegdm;

namespace {

LatentTensor window_latent(std::vector<float> w) {
  LatentTensor l;
  const std::size_t n = w.size();
  l.values = Tensor<float>(Shape{1, 1, n, 1}, std::move(w));
  return l;
}

LatentTensor random_latent(Rng& rng, std::size_t c, std::size_t n, std::size_t len, std::size_t h) {
  LatentTensor l;
  l.values = testutil::randn<float>({c, n, len, h}, rng);
  return l;
}

}  // namespace

TEST(Pool, Examples) {
  EXPECT_EQ(pool(window_latent({3, 3, 3, 3}), 1, PoolKind::std).values[0], 0.0f);
  EXPECT_FLOAT_EQ(pool(window_latent({1, 2, 3, 4}), 1, PoolKind::average).values[0], 2.5f);
  EXPECT_FLOAT_EQ(pool(window_latent({1, -1, 1, -1}), 1, PoolKind::std).values[0], 1.0f);
  EXPECT_THROW(pool(window_latent({1, 2, 3}), 2, PoolKind::std), std::invalid_argument);
  EXPECT_THROW(pool(window_latent({1, 2, 3}), 0, PoolKind::std), std::invalid_argument);
}

TEST(Pool, ShapeAndWindow) {
  Rng rng(1);
  auto p = pool(random_latent(rng, 2, 3, 20, 4), 5, PoolKind::std);
  EXPECT_EQ(p.values.shape(), (Shape{2, 3, 5, 4}));
  EXPECT_EQ(p.window, 4u);
  EXPECT_EQ(p.window * p.pools(), 20u);
}

TEST(Pool, WindowPermutationInvariance) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    auto lat = random_latent(rng, 2, 2, 12, 3);
    auto perm = lat;
    // shuffle time indices inside each of the 3 windows
    std::vector<std::size_t> idx(4);
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t q = 0; q < 3; ++q) {
          std::iota(idx.begin(), idx.end(), 0);
          std::shuffle(idx.begin(), idx.end(), rng.engine());
          for (std::size_t k = 0; k < 4; ++k)
            for (std::size_t h = 0; h < 3; ++h)
              perm.values.at({c, n, q * 4 + k, h}) = lat.values.at({c, n, q * 4 + idx[k], h});
        }
    for (auto kind : {PoolKind::average, PoolKind::std}) {
      auto a = pool(lat, 3, kind), b = pool(perm, 3, kind);
      for (std::size_t i = 0; i < a.values.size(); ++i) EXPECT_EQ(a.values[i], b.values[i]);
    }
  }
}

TEST(Pool, ScalingAndSign) {
  Rng rng(3);
  auto lat = random_latent(rng, 2, 2, 10, 3);
  auto scaled = lat;
  const float k = -2.5f;
  for (auto& v : scaled.values.values()) v *= k;
  auto a = pool(lat, 5, PoolKind::average), as = pool(scaled, 5, PoolKind::average);
  auto s = pool(lat, 5, PoolKind::std), ss = pool(scaled, 5, PoolKind::std);
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    EXPECT_NEAR(as.values[i], k * a.values[i], 1e-5);
    EXPECT_NEAR(ss.values[i], std::abs(k) * s.values[i], 1e-5);
    EXPECT_GE(s.values[i], 0.0f);
  }
}

TEST(Pool, WindowOfOne) {
  Rng rng(4);
  auto lat = random_latent(rng, 1, 2, 6, 2);
  auto a = pool(lat, 6, PoolKind::average), s = pool(lat, 6, PoolKind::std);
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    EXPECT_EQ(a.values[i], lat.values[i]);
    EXPECT_EQ(s.values[i], 0.0f);
  }
}

TEST(PoolGroup, MatchesPoolAndFusionGroup) {
  Rng rng(5);
  const std::size_t S = 2, C = 3, H = 4, L = 12, P = 3;
  auto tap = testutil::randn({S * C, H, L}, rng);
  auto g = ops::pool_group(Var<double>(tap), S, P, PoolKind::std);
  EXPECT_EQ(g.shape(), (Shape{S * P, C, H}));
  // same via LatentTensor layout with a single layer
  Tensor<float> stacked(Shape{S, C, 1, P, H});
  for (std::size_t s = 0; s < S; ++s) {
    LatentTensor lat;
    lat.values = Tensor<float>(Shape{C, 1, L, H});
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t k = 0; k < L; ++k) lat.values.at({c, 0, k, h}) = float(tap[((s * C + c) * H + h) * L + k]);
    auto p = pool(lat, P, PoolKind::std);
    std::copy(p.values.storage().begin(), p.values.storage().end(), stacked.data() + s * C * P * H);
  }
  auto fg = fusion_group<double>(stacked, 0);
  for (std::size_t i = 0; i < fg.size(); ++i) EXPECT_NEAR(fg[i], g.value()[i], 1e-5);
  EXPECT_THROW(fusion_group<double>(stacked, 1), std::out_of_range);
}

TEST(PoolGroup, Gradients) {
  Rng rng(6);
  auto tap = Var<double>::parameter(testutil::randn({4, 3, 8}, rng));
  auto w = Var<double>(testutil::randn({4, 2, 3}, rng));
  for (auto kind : {PoolKind::average, PoolKind::std}) {
    auto res = grad_check({{"tap", tap}}, [&] { return ops::sum(ops::mul(ops::pool_group(tap, 2, 2, kind), w)); });
    EXPECT_LT(res.max_rel_error, 1e-3) << to_string(kind);
  }
}

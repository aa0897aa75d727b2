#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "eegdm/diffusion/process.hpp"
#include "eegdm/diffusion/schedule.hpp"
#include "helpers.hpp"

using namespace eegdm;

namespace {

double cosine_reference(int t, int steps, double s = 0.008) {
  auto f = [&](double u) {
    const long double c = std::cos((u / steps + s) / (1.0L + s) * std::numbers::pi_v<long double> / 2.0L);
    return c * c;
  };
  return static_cast<double>(f(t) / f(0));
}

// Predicts the exact velocity for data concentrated at x0 = c.
struct DeltaOracle {
  const NoiseSchedule* sched;
  double c;
  Var<double> operator()(const Var<double>& x, const std::vector<int>& steps, const std::vector<int>&) const {
    Tensor<double> v(x.shape());
    const std::size_t len = x.dim(1);
    for (std::size_t r = 0; r < x.dim(0); ++r) {
      const double ab = sched->alpha_bar(steps[r]);
      for (std::size_t k = 0; k < len; ++k) {
        const double eps = (x.value()[r * len + k] - std::sqrt(ab) * c) / std::sqrt(1 - ab);
        v[r * len + k] = std::sqrt(ab) * eps - std::sqrt(1 - ab) * c;
      }
    }
    return Var<double>(std::move(v));
  }
};

struct ZeroModel {
  Var<double> operator()(const Var<double>& x, const std::vector<int>&, const std::vector<int>&) const {
    return Var<double>(Tensor<double>(x.shape()));
  }
};

}  // namespace

TEST(CosineSchedule, MatchesClosedFormAndDecreases) {
  auto s = cosine_schedule(50);
  EXPECT_EQ(s.steps(), 50);
  EXPECT_EQ(s.alpha_bar(0), 1.0);
  for (int t = 1; t <= 50; ++t) EXPECT_NEAR(s.alpha_bar(t), std::clamp(cosine_reference(t, 50), 1e-5, 1 - 1e-5), 1e-14);
  for (int t = 2; t <= 50; ++t) EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
  EXPECT_NEAR(s.alpha_bar(25), 0.4938, 1e-4);
  EXPECT_LT(s.alpha_bar(50), 0.01);
  EXPECT_THROW(cosine_schedule(0), std::invalid_argument);
}

TEST(CosineSchedule, FirstStepCloseToOne) {
  EXPECT_GE(cosine_schedule(50).alpha_bar(1), 0.999);
}

TEST(LinearSchedule, Examples) {
  EXPECT_NEAR(linear_schedule(1, 0.1, 0.1).alpha_bar(1), 0.9, 1e-15);
  EXPECT_NEAR(linear_schedule(2, 0.1, 0.2).alpha_bar(2), 0.72, 1e-15);
  EXPECT_THROW(linear_schedule(5, 0.0, 0.1), std::invalid_argument);
  EXPECT_THROW(linear_schedule(5, 0.2, 0.1), std::invalid_argument);
  EXPECT_THROW(linear_schedule(5, 0.1, 1.0), std::invalid_argument);
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    const double b0 = rng.uniform(1e-4, 0.3), b1 = rng.uniform(b0, 0.9);
    auto s = linear_schedule(int(rng.uniform_int(1, 100)), b0, b1);
    for (int t = 1; t <= s.steps(); ++t) {
      EXPECT_GT(s.alpha_bar(t), 0.0);
      EXPECT_LT(s.alpha_bar(t), 1.0);
      if (t > 1) {
        EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
      }
    }
  }
}

TEST(Schedule, DerivedQuantities) {
  auto s = cosine_schedule(50);
  for (int t = 1; t <= 50; ++t) {
    EXPECT_NEAR(s.beta(t), 1 - s.alpha_bar(t) / s.alpha_bar(t - 1), 1e-15);
    EXPECT_GE(s.sigma2(t), 0.0);
    EXPECT_LE(s.sigma2(t), s.beta(t) + 1e-15);
  }
  EXPECT_EQ(s.sigma2(1), 0.0);
  EXPECT_THROW(s.alpha_bar(51), std::out_of_range);
  EXPECT_THROW(s.beta(0), std::out_of_range);
  EXPECT_THROW(make_schedule("quadratic", 10), std::invalid_argument);
}

TEST(Schedule, CsvDump) {
  testutil::TempDir dir("csv");
  write_schedule_csv(dir / "s.csv", cosine_schedule(5));
  auto text = testutil::slurp(dir / "s.csv");
  EXPECT_EQ(text.substr(0, text.find('\n')), "t,alpha_bar,sqrt_alpha_bar,sigma");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 6);
}

TEST(ForwardSample, Examples) {
  Tensor<double> x0(Shape{1}, 1.0), eps(Shape{1}, 0.5);
  EXPECT_DOUBLE_EQ(forward_sample(x0, eps, 1.0)[0], 1.0);
  EXPECT_NEAR(forward_sample(x0, eps, 0.64)[0], 1.1, 1e-15);
  Tensor<double> zero(Shape{1});
  auto s = cosine_schedule(50);
  EXPECT_NEAR(forward_sample(x0, 7, zero, s)[0], std::sqrt(s.alpha_bar(7)), 1e-15);
  EXPECT_THROW(forward_sample(x0, 0, zero, s), std::out_of_range);
  EXPECT_THROW(forward_sample(x0, 51, zero, s), std::out_of_range);
}

TEST(VelocityTarget, Examples) {
  Tensor<double> x0(Shape{1}, 1.0), eps(Shape{1}, 0.3), zero(Shape{1});
  EXPECT_DOUBLE_EQ(velocity_target(x0, eps, 1.0)[0], 0.3);
  EXPECT_DOUBLE_EQ(velocity_target(x0, eps, 0.0)[0], -1.0);
  EXPECT_NEAR(velocity_target(x0, zero, 0.25)[0], -std::sqrt(0.75), 1e-15);
  EXPECT_NEAR(velocity_target(x0, zero, 0.25)[0], -0.8660, 1e-4);
}

TEST(Diffusion, RecoveryIdentities) {
  Rng rng(21);
  auto s = cosine_schedule(50);
  for (int t = 1; t <= 50; ++t) {
    auto x0 = testutil::randn({4, 16}, rng), eps = testutil::randn({4, 16}, rng);
    auto xt = forward_sample(x0, t, eps, s);
    auto v = velocity_target(x0, eps, t, s);
    auto rx = predict_x0(xt, v, s.alpha_bar(t));
    auto re = predict_eps(xt, v, s.alpha_bar(t));
    for (std::size_t i = 0; i < x0.size(); ++i) {
      EXPECT_NEAR(rx[i], x0[i], 1e-12);
      EXPECT_NEAR(re[i], eps[i], 1e-12);
    }
  }
}

TEST(Diffusion, ForwardSampleMoments) {
  Rng rng(31);
  const double ab = 0.36, x0v = 2.0;
  const std::size_t n = 10000;
  Tensor<double> x0(Shape{n}, x0v);
  auto eps = testutil::randn({n}, rng);
  auto xt = forward_sample(x0, eps, ab);
  double m = 0, v = 0;
  for (double x : xt.values()) m += x;
  m /= n;
  for (double x : xt.values()) v += (x - m) * (x - m);
  const double sd = std::sqrt(v / n);
  EXPECT_NEAR(m, std::sqrt(ab) * x0v, 0.02 * std::sqrt(ab) * x0v);
  EXPECT_NEAR(sd, std::sqrt(1 - ab), 0.02 * std::sqrt(1 - ab));
}

TEST(DiffusionLoss, PerfectPredictorIsZero) {
  auto s = cosine_schedule(50);
  Tensor<double> x0(Shape{8, 5}, 0.7);
  DeltaOracle oracle{&s, 0.7};
  auto loss = diffusion_loss(oracle, x0, std::vector<int>(8, 0), s, Rng(4));
  EXPECT_NEAR(loss.value().item(), 0.0, 1e-20);
}

TEST(DiffusionLoss, ZeroModelMatchesMonteCarloExpectation) {
  auto s = cosine_schedule(50);
  Rng rng(8);
  const std::size_t rows = 10000;
  auto x0 = testutil::randn({rows, 1}, rng, 1.5);
  double ex2 = 0;
  for (double v : x0.values()) ex2 += v * v;
  ex2 /= rows;
  double expect = 0;
  for (int t = 1; t <= 50; ++t) expect += (s.alpha_bar(t) + (1 - s.alpha_bar(t)) * ex2) / 50.0;
  ZeroModel zero;
  const Rng loss_rng(77);
  const double loss = diffusion_loss(zero, x0, std::vector<int>(rows, 0), s, loss_rng).value().item();
  auto noised = noise_rows(x0, s, loss_rng);
  double m = 0, m2 = 0;
  for (double v : noised.target.values()) m += v * v, m2 += v * v * v * v;
  m /= rows, m2 /= rows;
  const double se = std::sqrt((m2 - m * m) / rows);
  EXPECT_NEAR(loss, m, 1e-9);
  EXPECT_NEAR(loss, expect, 3 * se);
  EXPECT_GE(loss, 0.0);
}

TEST(DiffusionLoss, Errors) {
  auto s = cosine_schedule(10);
  ZeroModel zero;
  EXPECT_THROW(diffusion_loss(zero, Tensor<double>(Shape{0, 4}), {}, s, Rng(1)), std::invalid_argument);
  EXPECT_THROW(diffusion_loss(zero, Tensor<double>(Shape{2, 4}), {0}, s, Rng(1)), std::invalid_argument);
}

TEST(DiffusionLoss, StepsAreUniformOverRange) {
  auto s = cosine_schedule(50);
  Tensor<double> x0(Shape{20000, 1});
  auto noised = noise_rows(x0, s, Rng(5));
  std::vector<int> hist(51, 0);
  for (int t : noised.steps) {
    ASSERT_GE(t, 1);
    ASSERT_LE(t, 50);
    ++hist[t];
  }
  for (int t = 1; t <= 50; ++t) EXPECT_NEAR(hist[t], 400, 100);
}

TEST(AncestralSample, PerfectOracleConvergesToDelta) {
  auto s = cosine_schedule(50);
  DeltaOracle oracle{&s, 0.8};
  Rng rng(12);
  auto x = ancestral_sample<double>(oracle, s, 100, 4, std::vector<int>(100, 0), rng);
  EXPECT_EQ(x.shape(), (Shape{100, 4}));
  double err = 0;
  for (double v : x.values()) err += v - 0.8;
  EXPECT_LT(std::abs(err / x.size()), 0.05);
}

TEST(AncestralSample, SameSeedSameOutput) {
  auto s = cosine_schedule(20);
  DeltaOracle oracle{&s, -0.3};
  Rng a(3), b(3);
  auto xa = ancestral_sample<double>(oracle, s, 3, 8, {0, 0, 0}, a);
  auto xb = ancestral_sample<double>(oracle, s, 3, 8, {0, 0, 0}, b);
  EXPECT_EQ(xa.storage(), xb.storage());
}

TEST(ExtractionInput, Modes) {
  auto s = cosine_schedule(50);
  Rng rng(2);
  auto x0 = testutil::randn({3, 10}, rng);
  auto [none_x, none_t] = extraction_input(x0, ExtractionMode::none, 1, s);
  EXPECT_EQ(none_t, 0);
  EXPECT_EQ(none_x.storage(), x0.storage());
  auto [x1, t1] = extraction_input(x0, ExtractionMode::noiseless, 1, s);
  auto [x3, t3] = extraction_input(x0, ExtractionMode::noiseless, 3, s);
  EXPECT_EQ(t1, 1);
  EXPECT_EQ(t3, 3);
  const double scale1 = std::sqrt(std::clamp(cosine_reference(1, 50), 1e-5, 1 - 1e-5));
  for (std::size_t i = 0; i < x0.size(); ++i) {
    EXPECT_NEAR(x1[i], scale1 * x0[i], 1e-12);
    EXPECT_LT(std::abs(x3[i]), std::abs(x1[i]) + 1e-15);
  }
  EXPECT_THROW(extraction_input(x0, ExtractionMode::noiseless, 0, s), std::out_of_range);
  EXPECT_EQ(parse_extraction_mode("noiseless"), ExtractionMode::noiseless);
  EXPECT_THROW(parse_extraction_mode("noisy"), std::invalid_argument);
}

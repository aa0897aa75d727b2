#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "eegdm/numerics/gradcheck.hpp"
#include "eegdm/signal/segment.hpp"
#include "eegdm/ssm/bank.hpp"
#include "eegdm/ssm/s4d.hpp"
#include "helpers.hpp"

using namespace eegdm;

namespace {

S4DLayer random_layer(Rng& rng, std::size_t n) {
  auto layer = init_diag_lin(n, rng);
  for (auto& r : layer.rho) r = std::log(rng.uniform(0.1, 2.0));
  for (auto& b : layer.b) b = {rng.normal(), rng.normal()};
  layer.d = rng.normal();
  return layer;
}

S4DLayer scalar_layer(double a, double dt, cplx c = 1.0, cplx b = 1.0) {
  S4DLayer l;
  l.rho = {std::log(-a)};
  l.a_imag = {0.0};
  l.b = {b};
  l.c = {c};
  l.d = 0.0;
  l.log_dt = std::log(dt);
  return l;
}

template <class T>
double max_diff(const std::vector<T>& a, const std::vector<T>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

}  // namespace

TEST(DiagLin, Examples) {
  Rng rng(1);
  auto l = init_diag_lin(4, rng);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_NEAR(l.a(k).real(), -0.5, 1e-15);
    EXPECT_NEAR(l.a(k).imag(), std::numbers::pi * k, 1e-15);
    EXPECT_EQ(l.b[k], cplx(1.0, 0.0));
  }
  EXPECT_EQ(l.d, 1.0);
  EXPECT_GE(l.dt(), 1e-3);
  EXPECT_LE(l.dt(), 1e-1);
  Rng r1(9), r2(9);
  EXPECT_EQ(init_diag_lin(8, r1), init_diag_lin(8, r2));
  EXPECT_THROW(init_diag_lin(0, rng), std::invalid_argument);
}

TEST(DiagLin, StatisticsOfC) {
  Rng rng(2);
  auto l = init_diag_lin(4096, rng);
  double p = 0;
  for (auto c : l.c) p += std::norm(c);
  EXPECT_NEAR(p, 1.0, 0.1);  // sum |C|^2 = N * (1/N)
  double lo = 1, hi = 0;
  for (int i = 0; i < 2000; ++i) {
    Rng r = rng.split(i);
    double dt = init_diag_lin(1, r).dt();
    lo = std::min(lo, dt), hi = std::max(hi, dt);
  }
  EXPECT_LT(lo, 1.2e-3);
  EXPECT_GT(hi, 0.09);
}

TEST(Zoh, ClosedForm) {
  auto l = scalar_layer(-1.0, std::log(2.0));
  auto d = discretize_zoh(l);
  EXPECT_NEAR(std::abs(d.a_bar[0] - 0.5), 0.0, 1e-12);
  EXPECT_NEAR(std::abs(d.b_bar[0] - 0.5), 0.0, 1e-12);
  auto small = discretize_zoh(scalar_layer(-1.0, 1e-12));
  EXPECT_NEAR(small.a_bar[0].real(), 1.0, 1e-11);
  EXPECT_NEAR(std::abs(small.b_bar[0]), 0.0, 1e-11);
}

TEST(Kernel, Examples) {
  // A_bar = 0.5 and B_bar = 1: A = -ln 2 / dt, B chosen so (A_bar - 1)/A B = 1
  const double dt = 0.1, a = -std::log(2.0) / dt;
  auto l = scalar_layer(a, dt, 1.0, cplx(a / (0.5 - 1.0)));
  auto k = materialize_kernel(l, 4);
  const double expect[] = {1, 0.5, 0.25, 0.125};
  for (int j = 0; j < 4; ++j) EXPECT_NEAR(k[j], expect[j], 1e-12);
  l.c = {0.0};
  for (double v : materialize_kernel(l, 16)) EXPECT_EQ(v, 0.0);
}

TEST(Kernel, DecayBound) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    auto l = random_layer(rng, 8);
    auto d = discretize_zoh(l);
    double amp = 0, rmax = 0;
    for (std::size_t i = 0; i < 8; ++i) {
      amp += std::abs(l.c[i] * d.b_bar[i]);
      rmax = std::max(rmax, std::abs(d.a_bar[i]));
    }
    EXPECT_LT(rmax, 1.0);
    auto k = materialize_kernel(l, 64);
    for (std::size_t j = 0; j < 64; ++j) EXPECT_LE(std::abs(k[j]), amp * std::pow(rmax, j) + 1e-12);
  }
}

TEST(Conv, ImpulseAndZero) {
  Rng rng(5);
  auto l = random_layer(rng, 6);
  std::vector<double> x(32, 0.0);
  x[0] = 1.0;
  auto y = apply_conv<double>(l, x);
  auto k = materialize_kernel(l, 32);
  for (std::size_t j = 0; j < 32; ++j) EXPECT_NEAR(y[j], k[j] + (j == 0 ? l.d : 0.0), 1e-12);
  l.d = 0;
  for (double v : apply_conv<double>(l, std::vector<double>(32, 0.0))) EXPECT_EQ(v, 0.0);
  for (double v : apply_recurrent<double>(l, std::vector<double>(32, 0.0))) EXPECT_EQ(v, 0.0);
}

TEST(Recurrent, SingleStep) {
  Rng rng(6);
  auto l = random_layer(rng, 5);
  auto d = discretize_zoh(l);
  cplx s = 0;
  for (std::size_t i = 0; i < 5; ++i) s += l.c[i] * d.b_bar[i];
  auto y = apply_recurrent<double>(l, std::vector<double>{1.0});
  EXPECT_NEAR(y[0], s.real() + l.d, 1e-14);
}

TEST(ConvRecurrent, EquivalenceProperty) {
  Rng rng(7);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = rng.uniform_int(1, 16), len = rng.uniform_int(1, 128);
    auto l = random_layer(rng, n);
    auto xd = testutil::randn({len}, rng);
    std::vector<double> xv(xd.values().begin(), xd.values().end());
    std::vector<float> xf(xv.begin(), xv.end());
    EXPECT_LT(max_diff(apply_conv<double>(l, xv), apply_recurrent<double>(l, xv)), 1e-10);
    EXPECT_LT(max_diff(apply_conv<float>(l, xf), apply_recurrent<float>(l, xf)), 1e-4);
  }
}

TEST(Bidirectional, ZeroBackwardCReducesToForward) {
  Rng rng(8);
  auto f = random_layer(rng, 4), b = random_layer(rng, 4);
  for (auto& c : b.c) c = 0;
  b.d = 0;
  auto x = testutil::randn({50}, rng);
  std::vector<double> xv(x.values().begin(), x.values().end());
  EXPECT_LT(max_diff(bidirectional_apply<double>(f, b, xv), apply_conv<double>(f, xv)), 1e-12);
}

TEST(Bidirectional, PalindromeSymmetry) {
  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    auto f = random_layer(rng, 6);
    const std::size_t half = rng.uniform_int(1, 40);
    auto h = testutil::randn({half}, rng);
    std::vector<double> x(h.values().begin(), h.values().end());
    x.insert(x.end(), x.rbegin(), x.rend());
    auto y = bidirectional_apply<double>(f, f, x);
    ASSERT_EQ(y.size(), x.size());
    for (std::size_t t = 0; t < y.size(); ++t) EXPECT_NEAR(y[t], y[y.size() - 1 - t], 1e-10);
  }
  auto l = init_diag_lin(4, rng);
  EXPECT_THROW(bidirectional_apply<double>(l, init_diag_lin(3, rng), std::vector<double>(4)), std::invalid_argument);
}

TEST(RateRatio, ContinuedFraction) {
  EXPECT_EQ(RateRatio::from_double(0.95), RateRatio(19, 20));
  EXPECT_EQ(RateRatio::from_double(2.0), RateRatio(2, 1));
  EXPECT_EQ(RateRatio::from_double(190.0 / 200.0).inverse(), RateRatio(20, 19));
  EXPECT_THROW(RateRatio::from_double(0.0), std::invalid_argument);
  EXPECT_THROW(RateRatio::from_double(-1.0), std::invalid_argument);
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const double r = std::exp(rng.uniform(-3, 3));
    EXPECT_NEAR(RateRatio::from_double(r).value(), r, 1e-11 * r);
  }
}

TEST(Retarget, Identities) {
  Rng rng(10);
  auto l = random_layer(rng, 8);
  EXPECT_EQ(discretize_zoh(retarget_rate(l, 1.0)).a_bar, discretize_zoh(l).a_bar);
  auto half = discretize_zoh(retarget_rate(l, 2.0));
  auto full = discretize_zoh(l);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(std::abs(half.a_bar[i] * half.a_bar[i] - full.a_bar[i]), 0.0, 1e-12);
  for (int i = 0; i < 50; ++i) {
    const double r = std::exp(rng.uniform(-2, 2));
    auto back = retarget_rate(retarget_rate(l, r), 1.0 / r);
    EXPECT_EQ(back, l);
    EXPECT_EQ(back.dt(), l.dt());
  }
  EXPECT_THROW(retarget_rate(l, 0.0), std::invalid_argument);
  auto slow = retarget_rate(l, 0.95);
  EXPECT_NEAR(slow.dt(), l.dt() / 0.95, 1e-15);
  EXPECT_EQ(slow.c, l.c);
  EXPECT_EQ(slow.d, l.d);
}

TEST(Retarget, ResampledSineCorrelates) {
  Rng rng(11);
  auto l = init_diag_lin(16, rng);
  l.log_dt = std::log(0.05);
  const std::size_t n = 1000;
  std::vector<double> x(n);
  for (std::size_t k = 0; k < n; ++k) x[k] = std::sin(2 * std::numbers::pi * 3.0 * k / 200.0);
  auto y = apply_conv<double>(l, x);
  auto y_res = resample_linear<double>(y, 200, 190);
  auto x_res = resample_linear<double>(x, 200, 190);
  auto y_ret = apply_conv<double>(retarget_rate(l, 190.0 / 200.0), x_res);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t k = 100; k < y_res.size(); ++k) {
    sxy += y_res[k] * y_ret[k];
    sxx += y_res[k] * y_res[k];
    syy += y_ret[k] * y_ret[k];
  }
  EXPECT_GT(sxy / std::sqrt(sxx * syy), 0.99);
}

TEST(Bank, KernelMatchesLayerApi) {
  Rng rng(12);
  auto bank = S4DBank<double>::init(5, 7, rng);
  bank.rate = RateRatio(19, 20);
  auto k = ops::s4d_kernel(bank, 40);
  for (std::size_t h = 0; h < 5; ++h) {
    auto ref = materialize_kernel(bank.layer(h), 40);
    for (std::size_t j = 0; j < 40; ++j) EXPECT_NEAR(k.value()[h * 40 + j], ref[j], 1e-12);
  }
  auto l = bank.layer(2);
  l.d = 3.0;
  bank.set_layer(2, l);
  EXPECT_EQ(bank.layer(2).d, 3.0);
}

TEST(Bank, KernelGradientMatchesFiniteDifferences) {
  Rng rng(13);
  auto bank = S4DBank<double>::init(3, 4, rng);
  for (auto& v : bank.rho.mutable_value().values()) v = std::log(rng.uniform(0.2, 1.5));
  for (auto& v : bank.log_dt.mutable_value().values()) v = std::log(rng.uniform(0.02, 0.3));
  auto w = Var<double>(testutil::randn({3, 24}, rng));
  auto loss = [&] { return ops::sum(ops::mul(ops::s4d_kernel(bank, 24), w)); };
  auto res = grad_check({{"rho", bank.rho}, {"c", bank.c}, {"log_dt", bank.log_dt}}, loss);
  EXPECT_LT(res.max_rel_error, 1e-3) << res.worst_param << "[" << res.worst_index << "]";
}

TEST(Bank, BidirectionalMatchesLayerApiAndGradients) {
  Rng rng(14);
  BidirectionalS4D<double> s4(3, 4, rng);
  auto x = Var<double>::parameter(testutil::randn({2, 3, 20}, rng));
  auto y = s4(x);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t h = 0; h < 3; ++h) {
      std::vector<double> row(x.value().data() + (b * 3 + h) * 20, x.value().data() + (b * 3 + h + 1) * 20);
      auto ref = bidirectional_apply<double>(s4.forward_bank().layer(h), s4.backward_bank().layer(h), row);
      for (std::size_t t = 0; t < 20; ++t) EXPECT_NEAR(y.value()[(b * 3 + h) * 20 + t], ref[t], 1e-12);
    }
  auto w = Var<double>(testutil::randn({2, 3, 20}, rng));
  std::vector<NamedVar> params{{"x", x}};
  for (auto& p : s4.parameters()) params.push_back({p.name, p.var});
  auto res = grad_check(params, [&] { return ops::sum(ops::mul(s4(x), w)); });
  EXPECT_LT(res.max_rel_error, 1e-3) << res.worst_param << "[" << res.worst_index << "]";
}

TEST(Bank, InferenceCacheInvalidatesOnChange) {
  Rng rng(15);
  BidirectionalS4D<float> s4(2, 4, rng);
  auto x = Var<float>(testutil::randn<float>({1, 2, 16}, rng));
  NoGradGuard guard;
  auto y1 = s4(x).value();
  auto y2 = s4(x).value();
  EXPECT_EQ(y1.storage(), y2.storage());
  s4.forward_bank().c.mutable_value()[0] += 0.5f;
  auto y3 = s4(x).value();
  EXPECT_NE(y1.storage(), y3.storage());
  s4.retarget(RateRatio(1, 2));
  auto y4 = s4(x).value();
  EXPECT_NE(y3.storage(), y4.storage());
  s4.retarget(RateRatio(2, 1));
  EXPECT_EQ(s4(x).value().storage(), y3.storage());
}

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "eegdm/signal/compand.hpp"
#include "eegdm/signal/filter.hpp"
#include "eegdm/signal/manifest.hpp"
#include "eegdm/signal/segment.hpp"
#include "eegdm/signal/segment_io.hpp"
#include "eegdm/signal/synth.hpp"
#include "helpers.hpp"

using namespace eegdm;
using testutil::TempDir;

TEST(Compand, Examples) {
  EXPECT_EQ(mu_law_compand(0.0), 0.0);
  EXPECT_EQ(mu_law_compand(0.5), 0.5);
  EXPECT_NEAR(mu_law_compand(2.0), std::log(511.0) / std::log(256.0), 1e-12);
  EXPECT_NEAR(mu_law_compand(2.0), 1.12465, 1e-5);
  EXPECT_THROW(mu_law_compand(std::nan("")), std::invalid_argument);
}

TEST(Compand, OddMonotoneContinuous) {
  Rng rng(1);
  EXPECT_EQ(mu_law_compand(1.0), 1.0);
  EXPECT_NEAR(mu_law_compand(std::nextafter(1.0, 2.0)), 1.0, 1e-12);
  double prev = -1e9;
  for (int i = 0; i < 2000; ++i) {
    const double x = -20.0 + 40.0 * i / 1999.0;
    EXPECT_EQ(mu_law_compand(-x), -mu_law_compand(x));
    const double y = mu_law_compand(x);
    EXPECT_GT(y, prev);
    prev = y;
  }
}

TEST(Filter, LowpassAttenuatesHundredHertzAtFiveHundred) {
  const double rate = 500.0;
  const std::size_t n = 5000;
  std::vector<double> x(n);
  for (std::size_t k = 0; k < n; ++k) x[k] = std::sin(2.0 * std::numbers::pi * 100.0 * k / rate);
  PreprocessConfig cfg;
  apply_cascade<double>(preprocessing_filters(cfg, rate), x);
  double peak = 0;
  for (std::size_t k = n / 2; k < n; ++k) peak = std::max(peak, std::abs(x[k]));
  EXPECT_GT(-20.0 * std::log10(peak), 20.0);
}

TEST(Filter, PassbandAndNotch) {
  PreprocessConfig cfg;
  const auto chain = preprocessing_filters(cfg, 200.0);
  EXPECT_NEAR(cascade_magnitude(chain, 10.0, 200.0), 1.0, 0.02);
  EXPECT_LT(cascade_magnitude(chain, 50.0, 200.0), 1e-3);
  EXPECT_LT(cascade_magnitude(chain, 0.0, 200.0), 1e-9);
}

TEST(Preprocess, DcOffsetDecaysTowardZero) {
  PreprocessConfig cfg;
  cfg.compand = false;
  const std::size_t n = 200 * 120;
  Tensor<float> raw(Shape{1, n}, 500.0f);
  auto batch = preprocess(raw, 200.0, cfg);
  const auto last = batch.segment(batch.size() - 1);
  double mean = 0;
  for (float v : last) mean += v;
  mean /= last.size();
  EXPECT_LT(std::abs(mean), 0.05 * 5.0);
  auto first = batch.segment(0);
  EXPECT_LT(std::abs(mean), std::abs(double(first[0])) + 1e-9);
}

TEST(Preprocess, FiveSecondsGiveThousandSamples) {
  Tensor<float> raw(Shape{2, 1000});
  auto batch = preprocess(raw, 200.0);
  EXPECT_EQ(batch.size(), 1u);
  EXPECT_EQ(batch.samples(), 1000u);
  Tensor<float> raw500(Shape{2, 2600});
  EXPECT_EQ(preprocess(raw500, 500.0).samples(), 1000u);
  EXPECT_THROW(preprocess(Tensor<float>(Shape{2, 999}), 200.0), std::invalid_argument);
  EXPECT_THROW(preprocess(raw, 0.0), std::invalid_argument);
}

TEST(Preprocess, Deterministic) {
  Rng rng(4);
  auto raw = testutil::randn<float>({3, 2000}, rng, 150.0);
  auto a = preprocess(raw, 250.0), b = preprocess(raw, 250.0);
  EXPECT_EQ(a.signals.storage(), b.signals.storage());
}

TEST(Resample, LengthArithmeticAndIdentity) {
  SegmentBatch b;
  Rng rng(2);
  b.signals = testutil::randn<float>({2, 3, 1000}, rng);
  b.labels = {0, 1};
  b.channel_ids = {0, 1, 2};
  b.sample_rate = 200;
  auto same = resample(b, 200);
  EXPECT_EQ(same.signals.storage(), b.signals.storage());
  EXPECT_EQ(resample(b, 100).samples(), 500u);
  EXPECT_EQ(resample(b, 190).samples(), 950u);
  EXPECT_THROW(resample(b, 0.1), std::invalid_argument);
  EXPECT_THROW(resample(b, -1), std::invalid_argument);
}

TEST(Resample, SineMatchesAnalyticResampling) {
  const std::size_t n = 1000;
  std::vector<double> x(n);
  for (std::size_t k = 0; k < n; ++k) x[k] = std::sin(2 * std::numbers::pi * 5.0 * k / 200.0 + 0.3);
  auto y = resample_linear<double>(x, 200.0, 190.0);
  double sxy = 0, sxx = 0, syy = 0, mx = 0, my = 0;
  std::vector<double> ref(y.size());
  for (std::size_t k = 0; k < y.size(); ++k) ref[k] = std::sin(2 * std::numbers::pi * 5.0 * k / 190.0 + 0.3);
  for (std::size_t k = 0; k < y.size(); ++k) mx += y[k], my += ref[k];
  mx /= y.size(), my /= y.size();
  for (std::size_t k = 0; k < y.size(); ++k) {
    sxy += (y[k] - mx) * (ref[k] - my);
    sxx += (y[k] - mx) * (y[k] - mx);
    syy += (ref[k] - my) * (ref[k] - my);
  }
  EXPECT_GT(sxy / std::sqrt(sxx * syy), 0.999);
}

TEST(SegmentIo, RoundTripAndHeader) {
  TempDir dir("seg");
  Rng rng(8);
  Segment s{testutil::randn<float>({3, 17}, rng), 200.0, 2};
  write_segment(dir / "a.seg", s);
  auto bytes = testutil::slurp(dir / "a.seg");
  const auto nl = bytes.find('\n');
  EXPECT_EQ(bytes.substr(0, nl), R"({"channels":3,"samples":17,"rate":200,"label":2,"dtype":"f32le"})");
  EXPECT_EQ(bytes.size(), nl + 1 + 3 * 17 * 4);
  auto back = read_segment(dir / "a.seg");
  EXPECT_EQ(back.signal.storage(), s.signal.storage());
  EXPECT_EQ(back.label, 2);
  EXPECT_EQ(back.rate, 200.0);
  // little-endian payload: first float bytes
  float v0 = s.signal[0];
  std::uint32_t bits = std::bit_cast<std::uint32_t>(v0);
  EXPECT_EQ(static_cast<unsigned char>(bytes[nl + 1]), bits & 0xff);
}

TEST(SegmentIo, Errors) {
  TempDir dir("segerr");
  EXPECT_THROW(read_segment(dir / "missing.seg"), DataError);
  {
    std::ofstream os(dir / "trunc.seg", std::ios::binary);
    os << R"({"channels":2,"samples":4,"rate":200,"label":0,"dtype":"f32le"})" << '\n' << "abc";
  }
  EXPECT_THROW(read_segment(dir / "trunc.seg"), DataError);
  {
    std::ofstream os(dir / "bad.seg", std::ios::binary);
    os << "not json\n";
  }
  EXPECT_THROW(read_segment(dir / "bad.seg"), DataError);
}

TEST(Synth, ThreeByHundredGivesThreeHundredFiles) {
  TempDir dir("synth");
  SynthConfig cfg;
  cfg.seed = 7;
  auto m = synth_dataset(cfg, dir.path());
  EXPECT_EQ(m.file_count(), 300u);
  EXPECT_EQ(m.histogram(), (std::vector<int>{100, 100, 100}));
  EXPECT_EQ(m.histogram("train"), (std::vector<int>{80, 80, 80}));
  EXPECT_EQ(m.histogram("valid"), (std::vector<int>{20, 20, 20}));
  std::size_t n = 0;
  for (auto& e : std::filesystem::recursive_directory_iterator(dir.path()))
    n += e.path().extension() == ".seg";
  EXPECT_EQ(n, 300u);
  auto loaded = load_manifest(dir / "manifest.json");
  EXPECT_EQ(loaded.file_count(), 300u);
  auto train = load_split(loaded, dir.path(), "train");
  EXPECT_EQ(train.size(), 240u);
  EXPECT_EQ(train.channels(), 4u);
  EXPECT_EQ(train.samples(), 1000u);
  EXPECT_THROW(load_split(loaded, dir.path(), "test"), DataError);
}

TEST(Synth, SameSeedByteIdentical) {
  TempDir a("sa"), b("sb");
  SynthConfig cfg;
  cfg.n_per_class = 5;
  cfg.test_per_class = 2;
  cfg.seed = 99;
  auto ma = synth_dataset(cfg, a.path());
  synth_dataset(cfg, b.path());
  for (const auto& [split, entries] : ma.splits)
    for (const auto& e : entries) EXPECT_EQ(testutil::slurp(a / e.path), testutil::slurp(b / e.path)) << e.path;
  EXPECT_EQ(testutil::slurp(a / "manifest.json"), testutil::slurp(b / "manifest.json"));
}

TEST(Synth, ErrorsOnBadRecipes) {
  TempDir dir("synerr");
  SynthConfig cfg;
  cfg.recipes = {cfg.recipes[0]};
  EXPECT_THROW(synth_dataset(cfg, dir.path()), std::invalid_argument);
  cfg.recipes = default_recipes();
  cfg.recipes[1].components.clear();
  EXPECT_THROW(synth_dataset(cfg, dir.path()), std::invalid_argument);
}

TEST(Synth, ImbalanceRatio) {
  SynthConfig cfg;
  cfg.recipes.pop_back();
  cfg.class_weights = {10, 1};
  auto c = class_counts(cfg);
  EXPECT_EQ(c[0], 100u);
  EXPECT_EQ(c[1], 10u);
}

TEST(Synth, TenHertzPeakDominatesEverySegment) {
  SynthConfig cfg;
  Rng master(5);
  for (int i = 0; i < 20; ++i) {
    Rng rng = master.split(i);
    auto seg = synth_segment(cfg, 1, rng);
    for (std::size_t c = 0; c < cfg.channels; ++c) {
      const float* x = seg.data() + c * cfg.samples;
      double best_f = 0, best_p = -1;
      for (double f = 0.6; f < 90.0; f += 0.2) {
        const double p = testutil::tone_power(x, cfg.samples, f, cfg.rate);
        if (p > best_p) best_p = p, best_f = f;
      }
      EXPECT_NEAR(best_f, 10.0, 0.7) << "segment " << i << " channel " << c;
    }
  }
}

TEST(Synth, BandPowerFeaturesAreSeparable) {
  SynthConfig cfg;
  cfg.channels = 2;
  const double bands[3][2] = {{1, 5}, {8, 13}, {16, 28}};
  auto features = [&](const Tensor<float>& seg) {
    std::vector<double> f(3, 0.0);
    for (std::size_t c = 0; c < cfg.channels; ++c)
      for (int b = 0; b < 3; ++b)
        for (double fr = bands[b][0]; fr <= bands[b][1]; fr += 0.5)
          f[b] += testutil::tone_power(seg.data() + c * cfg.samples, cfg.samples, fr, cfg.rate);
    for (auto& v : f) v = std::log(v + 1e-12);
    return f;
  };
  Rng master(17);
  std::vector<std::vector<double>> centroid(3, std::vector<double>(3, 0.0));
  const int n_train = 20, n_test = 20;
  for (int label = 0; label < 3; ++label)
    for (int i = 0; i < n_train; ++i) {
      Rng rng = master.split(label * 1000 + i);
      auto f = features(synth_segment(cfg, label, rng));
      for (int b = 0; b < 3; ++b) centroid[label][b] += f[b] / n_train;
    }
  int correct = 0;
  for (int label = 0; label < 3; ++label)
    for (int i = 0; i < n_test; ++i) {
      Rng rng = master.split(label * 1000 + 500 + i);
      auto f = features(synth_segment(cfg, label, rng));
      int best = 0;
      double best_d = 1e300;
      for (int k = 0; k < 3; ++k) {
        double d = 0;
        for (int b = 0; b < 3; ++b) d += (f[b] - centroid[k][b]) * (f[b] - centroid[k][b]);
        if (d < best_d) best_d = d, best = k;
      }
      correct += best == label;
    }
  EXPECT_GT(correct / double(3 * n_test), 0.95);
}

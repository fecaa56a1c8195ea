#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <vector>

#include "ecgtrust/rng.hpp"
#include "ecgtrust/transforms.hpp"
#include "test_oracles.hpp"

namespace ecgtrust::transforms {
namespace {

using std::numbers::pi;

std::vector<double> random_signal(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> x(n);
  for (double& v : x) v = rng.normal();
  return x;
}

TEST(FftFeatures, ConstantSignalHasNoEnergy) {
  const auto f = fft_features(std::vector<double>(512, 3.3), 128);
  ASSERT_EQ(f.size(), 128u);
  for (double v : f) EXPECT_LT(std::abs(v), 1e-9);
}

TEST(FftFeatures, SineLandsInOracleBin) {
  const std::size_t n = 1000;
  for (std::size_t k0 : {5u, 40u, 123u, 300u}) {
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = std::sin(2.0 * pi * k0 * i / n);
    const auto power = oracle::dft_power(x);
    const auto k_peak = static_cast<std::size_t>(std::max_element(power.begin() + 1, power.end()) - power.begin());
    ASSERT_EQ(k_peak, k0);
    // Equal-width coefficient groups over the n/2 + 1 one-sided coefficients.
    const std::size_t half = n / 2 + 1;
    std::size_t expect_bin = 0;
    while ((expect_bin + 1) * half / 128 <= k_peak) ++expect_bin;
    const auto f = fft_features(x, 128);
    EXPECT_EQ(static_cast<std::size_t>(std::max_element(f.begin(), f.end()) - f.begin()), expect_bin);
  }
}

TEST(FftFeatures, ParsevalBeforeNormalization) {
  for (std::size_t n : {256u, 999u, 1000u}) {
    const auto x = random_signal(n, n);
    const auto y = detrend_linear(x);
    double time_energy = 0.0;
    for (double v : y) time_energy += v * v;
    const auto e = spectrum_bin_energy(x, 128);
    double bin_energy = 0.0;
    for (double v : e) bin_energy += v;
    EXPECT_NEAR(bin_energy, time_energy, 1e-6 * time_energy);
  }
}

TEST(FftFeatures, OffsetInvariantAndUnitNorm) {
  const auto x = random_signal(1000, 4);
  auto shifted = x;
  for (double& v : shifted) v += 12.5;
  const auto a = fft_features(x);
  const auto b = fft_features(shifted);
  double norm = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NEAR(a[i], b[i], 1e-9);
    norm += a[i] * a[i];
  }
  EXPECT_NEAR(norm, 1.0, 1e-12);
}

TEST(FftFeatures, RejectsShortSignal) {
  EXPECT_THROW(fft_features(std::vector<double>(255, 1.0), 128), std::invalid_argument);
}

TEST(FftFeatures, VjpMatchesFiniteDifferences) {
  const std::size_t n = 300;
  const std::size_t bins = 16;
  const auto x = random_signal(n, 21);
  const auto w = random_signal(bins, 22);
  const auto g = fft_features_vjp(x, w, bins);
  auto objective = [&](const std::vector<double>& s) {
    const auto f = fft_features(s, bins);
    double acc = 0.0;
    for (std::size_t b = 0; b < bins; ++b) acc += f[b] * w[b];
    return acc;
  };
  const double h = 1e-5;
  for (std::size_t i = 0; i < n; i += 7) {
    auto xp = x;
    auto xm = x;
    xp[i] += h;
    xm[i] -= h;
    const double fd = (objective(xp) - objective(xm)) / (2.0 * h);
    EXPECT_NEAR(g[i], fd, 1e-6 + 1e-4 * std::abs(fd)) << i;
  }
}

TEST(Cwt, ZeroSignalZeroScalogram) {
  const auto cfg = CwtConfig::for_band(250.0);
  const Grid g = cwt_scalogram(std::vector<double>(1000, 0.0), cfg);
  ASSERT_EQ(g.rows, 32u);
  ASSERT_EQ(g.cols, 32u);
  for (double v : g.values) EXPECT_EQ(v, 0.0);
}

TEST(Cwt, SinePeaksAtMatchingScale) {
  const double fs = 250.0;
  const auto cfg = CwtConfig::for_band(fs);
  const double step = std::log(cfg.scales[1] / cfg.scales[0]);
  for (double f : {3.0, 10.0, 25.0}) {
    std::vector<double> x(1000);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(2.0 * pi * f * i / fs);
    const Grid p = cwt_power(x, cfg);
    // Average over the central half to avoid edge effects.
    std::size_t best = 0;
    double best_e = -1.0;
    for (std::size_t r = 0; r < p.rows; ++r) {
      double e = 0.0;
      for (std::size_t c = p.cols / 4; c < 3 * p.cols / 4; ++c) e += p.at(r, c);
      if (e > best_e) {
        best_e = e;
        best = r;
      }
    }
    const double analytic_scale = cfg.center_freq * fs / f;
    EXPECT_LE(std::abs(std::log(cfg.scales[best] / analytic_scale)), step + 1e-12) << f;
  }
}

TEST(Cwt, NonNegativeAndQuadratic) {
  const auto cfg = CwtConfig::for_band(250.0);
  const auto x = random_signal(1000, 9);
  auto x2 = x;
  for (double& v : x2) v *= 2.0;
  const Grid a = cwt_scalogram(x, cfg);
  const Grid b = cwt_scalogram(x2, cfg);
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    EXPECT_GE(a.values[i], 0.0);
    EXPECT_NEAR(b.values[i], 4.0 * a.values[i], 1e-6 * std::max(1e-12, 4.0 * a.values[i]));
  }
}

TEST(Cwt, RejectsScaleLongerThanSignal) {
  const auto cfg = CwtConfig::for_band(250.0);
  EXPECT_THROW(cwt_scalogram(std::vector<double>(500, 1.0), cfg), std::invalid_argument);
  CwtConfig bad = cfg;
  std::swap(bad.scales[0], bad.scales[1]);
  EXPECT_THROW(cwt_scalogram(std::vector<double>(1000, 1.0), bad), std::invalid_argument);
}

TEST(Resize, Examples) {
  Grid corners(2, 2);
  corners.values = {0, 1, 1, 2};
  const Grid r = resize_bilinear(corners, 3);
  EXPECT_DOUBLE_EQ(r.at(1, 1), 1.0);

  const Grid c(5, 7, 2.25);
  for (double v : resize_bilinear(c, 11).values) EXPECT_EQ(v, 2.25);

  Grid g(4, 4);
  for (std::size_t i = 0; i < g.values.size(); ++i) g.values[i] = static_cast<double>(i * i % 7);
  EXPECT_EQ(resize_bilinear(g, 4).values, g.values);
  EXPECT_THROW(resize_bilinear(g, 1), std::invalid_argument);
}

TEST(Resize, BoundedByInputRange) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    Grid g(3 + trial % 5, 4 + trial % 3);
    for (double& v : g.values) v = rng.uniform(-3, 3);
    const auto [lo, hi] = std::minmax_element(g.values.begin(), g.values.end());
    for (double v : resize_bilinear(g, 9).values) {
      EXPECT_GE(v, *lo - 1e-12);
      EXPECT_LE(v, *hi + 1e-12);
    }
  }
}

TEST(Features, ShapesAndRoundTrip) {
  const auto x = random_signal(1100, 5);
  const FeatureConfig cfg;
  const FeatureBundle b = make_features(x, cfg);
  EXPECT_EQ(b.time_vec.size(), 1000u);
  EXPECT_EQ(b.freq_vec.size(), 128u);
  EXPECT_EQ(b.scalogram.rows, 32u);
  EXPECT_EQ(b.scalogram.cols, 32u);
  EXPECT_DOUBLE_EQ(*std::max_element(b.scalogram.values.begin(), b.scalogram.values.end()), 1.0);

  const auto dir = std::filesystem::temp_directory_path() / "ecgtrust_bundle_io";
  std::filesystem::create_directories(dir);
  save_bundle(b, dir / "rec0");
  const FeatureBundle back = load_bundle(dir / "rec0");
  auto close = [](const std::vector<double>& u, const std::vector<double>& v) {
    if (u.size() != v.size()) return false;
    for (std::size_t i = 0; i < u.size(); ++i) {
      if (std::abs(u[i] - v[i]) > 1e-12 * std::max(1.0, std::abs(u[i]))) return false;
    }
    return true;
  };
  EXPECT_TRUE(close(back.time_vec, b.time_vec));
  EXPECT_TRUE(close(back.freq_vec, b.freq_vec));
  EXPECT_TRUE(close(back.scalogram.values, b.scalogram.values));
  EXPECT_EQ(back.scalogram.rows, 32u);
}

TEST(Features, StandardizeFitPadsAndCrops) {
  const std::vector<double> x = {1, 2, 3, 4};
  const auto padded = standardize_fit(x, 6);
  ASSERT_EQ(padded.size(), 6u);
  EXPECT_EQ(padded[4], 0.0);
  EXPECT_EQ(padded[5], 0.0);
  double mean = 0.0;
  for (std::size_t i = 0; i < 4; ++i) mean += padded[i];
  EXPECT_NEAR(mean, 0.0, 1e-12);
  EXPECT_EQ(standardize_fit(x, 2).size(), 2u);
}

}  // namespace
}  // namespace ecgtrust::transforms

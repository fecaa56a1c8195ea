#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include "ecgtrust/rng.hpp"
#include "ecgtrust/stats.hpp"
#include "ecgtrust/trust.hpp"
#include "test_oracles.hpp"

namespace ecgtrust::trust {
namespace {

std::vector<double> normal_vec(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

// Beat-like mask: a run of `on` samples every `period` samples, starting at `phase`.
Mask periodic_mask(std::size_t n, std::size_t period, std::size_t on, std::size_t phase) {
  Mask m(n, 0);
  for (std::size_t i = 0; i < n; ++i) m[i] = ((i + period - phase % period) % period) < on ? 1 : 0;
  return m;
}

// Irregular beat-like mask: runs of 60-89 samples separated by gaps of 100-249.
Mask jittered_mask(std::size_t n, Rng& rng) {
  Mask m(n, 0);
  std::size_t pos = rng.below(100);
  while (pos < n) {
    const std::size_t len = 60 + rng.below(30);
    for (std::size_t i = pos; i < std::min(n, pos + len); ++i) m[i] = 1;
    pos += len + 100 + rng.below(150);
  }
  return m;
}

// Smoothed non-negative noise: an AR(1) magnitude process.
std::vector<double> smooth_noise(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  double state = 0.0;
  for (double& x : v) {
    state = 0.9 * state + rng.normal();
    x = std::abs(state);
  }
  return v;
}

TEST(MiContinuous, SelfInformationIsLogBins) {
  const auto x = normal_vec(2000, 1);
  const auto r = mi_continuous(x, x, 16);
  EXPECT_NEAR(r.nats, std::log(16.0), 0.05 * std::log(16.0));
  EXPECT_FALSE(r.degenerate);
}

TEST(MiContinuous, IndependentNoiseNearZero) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto x = normal_vec(2000, 10 + s);
    const auto y = normal_vec(2000, 100 + s);
    EXPECT_LT(mi_continuous(x, y, 16).nats, 0.05);
  }
}

TEST(MiContinuous, BinaryPerfectCorrelationIsLn2) {
  const auto x = normal_vec(1000, 2);
  const auto r = mi_continuous(x, x, 2, false);
  EXPECT_NEAR(r.nats, std::numbers::ln2, 1e-6);
  // The corrected estimate adds (K-1)/(2n) for a perfect two-bin channel.
  EXPECT_NEAR(mi_continuous(x, x, 2, true).nats, std::numbers::ln2 + 1.0 / 2000.0, 1e-12);
}

TEST(MiContinuous, DegenerateAndInvalid) {
  const std::vector<double> c(100, 3.0);
  const auto x = normal_vec(100, 3);
  const auto r = mi_continuous(c, x, 16);
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.nats, 0.0);
  EXPECT_THROW(mi_continuous(normal_vec(63, 1), normal_vec(63, 2), 16), std::invalid_argument);
  EXPECT_THROW(mi_continuous(normal_vec(100, 1), normal_vec(99, 2), 16), std::invalid_argument);
}

TEST(DiscreteMi, Examples) {
  EXPECT_NEAR(discrete_mi({{0.06, 0.14}, {0.24, 0.56}}), 0.0, 1e-15);
  EXPECT_NEAR(discrete_mi({{0.5, 0.0}, {0.0, 0.5}}), std::numbers::ln2, 1e-15);
  EXPECT_THROW(discrete_mi({{0.5, 0.4}}), std::invalid_argument);
  EXPECT_THROW(discrete_mi({{1.2, -0.2}}), std::invalid_argument);
}

TEST(DiscreteMi, DataProcessingInequality) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::vector<double>> joint(4, std::vector<double>(8));
    double total = 0.0;
    for (auto& row : joint) {
      for (double& p : row) {
        p = rng.uniform() < 0.2 ? 0.0 : rng.uniform();
        total += p;
      }
    }
    for (auto& row : joint) {
      for (double& p : row) p /= total;
    }
    const std::size_t n_out = 1 + rng.below(8);
    std::vector<std::size_t> g(8);
    for (auto& v : g) v = rng.below(n_out);
    std::vector<std::vector<double>> pushed(4, std::vector<double>(n_out, 0.0));
    for (std::size_t a = 0; a < 4; ++a) {
      for (std::size_t z = 0; z < 8; ++z) pushed[a][g[z]] += joint[a][z];
    }
    EXPECT_LE(discrete_mi(pushed), discrete_mi(joint) + 1e-12);
  }
}

TEST(Ami, IdenticalIndependentAndBounded) {
  Rng rng(5);
  std::vector<int> a(1000);
  for (int& v : a) v = static_cast<int>(rng.below(4));
  EXPECT_NEAR(ami(a, a).value, 1.0, 1e-12);
  for (std::size_t kb : {2u, 3u, 8u}) {
    std::vector<int> b(1000);
    for (int& v : b) v = static_cast<int>(rng.below(kb));
    EXPECT_LT(std::abs(ami(a, b).value), 0.02) << kb;
  }
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 20 + rng.below(200);
    std::vector<int> x(n);
    std::vector<int> y(n);
    const auto kx = 2 + rng.below(4);
    const auto ky = 2 + rng.below(4);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = static_cast<int>(rng.below(kx));
      y[i] = rng.uniform() < 0.5 ? x[i] % static_cast<int>(ky) : static_cast<int>(rng.below(ky));
    }
    EXPECT_LE(ami(x, y).value, nmi_labels(x, y) + 1e-9);
  }
  const std::vector<int> single(10, 1);
  const std::vector<int> other = {0, 1, 0, 1, 0, 1, 0, 1, 0, 1};
  EXPECT_TRUE(ami(single, other).degenerate);
}

TEST(Ami, ExpectedMiMatchesSmallExactEnumeration) {
  // Oracle: average MI over all permutations of b for a tiny labeling.
  std::vector<int> a = {0, 0, 1, 1, 1, 2};
  std::vector<int> b = {0, 1, 1, 0, 0, 1};
  std::vector<int> perm = b;
  std::sort(perm.begin(), perm.end());
  double total = 0.0;
  double count = 0.0;
  do {
    total += labels_mi(a, perm);
    count += 1.0;
  } while (std::next_permutation(perm.begin(), perm.end()));
  const double emi = total / count;
  const double mi = labels_mi(a, b);
  auto entropy = [](const std::vector<int>& v) {
    std::map<int, double> c;
    for (int x : v) c[x] += 1.0;
    double h = 0.0;
    for (auto& [k, n] : c) h -= n / v.size() * std::log(n / v.size());
    return h;
  };
  const double expected = (mi - emi) / (std::max(entropy(a), entropy(b)) - emi);
  EXPECT_NEAR(ami(a, b).value, expected, 1e-12);
}

TEST(Ami, InvariantUnderJointCircularShift) {
  Rng rng(6);
  std::vector<int> a(300);
  std::vector<int> b(300);
  for (std::size_t i = 0; i < 300; ++i) {
    a[i] = static_cast<int>(rng.below(3));
    b[i] = rng.uniform() < 0.6 ? a[i] : static_cast<int>(rng.below(3));
  }
  std::vector<int> sa(300);
  std::vector<int> sb(300);
  for (std::size_t i = 0; i < 300; ++i) {
    sa[(i + 77) % 300] = a[i];
    sb[(i + 77) % 300] = b[i];
  }
  EXPECT_NEAR(ami(a, b).value, ami(sa, sb).value, 1e-12);
}

TEST(WindowedNmi, ProportionalSaliencyIsOne) {
  const Mask m = periodic_mask(1000, 200, 70, 30);
  std::vector<double> s(m.begin(), m.end());
  const auto r = windowed_nmi(s, m, 50);
  EXPECT_NEAR(r.value, 1.0, 1e-9);
  // Proportional per window, different within windows.
  Rng rng(7);
  std::vector<double> s2(1000, 0.0);
  for (std::size_t w = 0; w < 20; ++w) {
    double occupancy = 0.0;
    for (std::size_t i = 0; i < 50; ++i) occupancy += m[w * 50 + i];
    std::vector<double> raw(50);
    double sum = 0.0;
    for (double& v : raw) sum += (v = rng.uniform());
    for (std::size_t i = 0; i < 50; ++i) s2[w * 50 + i] = raw[i] / sum * occupancy;
  }
  EXPECT_NEAR(windowed_nmi(s2, m, 50).value, 1.0, 1e-9);
}

TEST(WindowedNmi, UniformSaliencyNearZero) {
  const Mask m = periodic_mask(5000, 230, 80, 10);
  const std::vector<double> s(5000, 0.7);
  EXPECT_LT(windowed_nmi(s, m, 50).value, 0.05);
}

TEST(WindowedNmi, BoundedDegenerateAndShiftInvariant) {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const Mask m = periodic_mask(600, 150 + rng.below(60), 40 + rng.below(40), rng.below(100));
    const auto s = smooth_noise(600, rng);
    const auto r = windowed_nmi(s, m, 50);
    EXPECT_GE(r.value, 0.0);
    EXPECT_LE(r.value, 1.0);
    std::vector<double> ss(600);
    Mask sm(600);
    const std::size_t shift = 50 * (1 + rng.below(11));
    for (std::size_t i = 0; i < 600; ++i) {
      ss[(i + shift) % 600] = s[i];
      sm[(i + shift) % 600] = m[i];
    }
    EXPECT_NEAR(windowed_nmi(ss, sm, 50).raw, r.raw, 1e-9);
  }
  const std::vector<double> s(100, 1.0);
  EXPECT_TRUE(windowed_nmi(s, Mask(100, 0), 10).degenerate);
  EXPECT_TRUE(windowed_nmi(s, Mask(100, 1), 10).degenerate);
  EXPECT_THROW(windowed_nmi(s, Mask(99, 1), 10), std::invalid_argument);
}

AlignmentMetric raw_nmi(std::size_t window) {
  return [window](std::span<const double> s, const Mask& m) { return windowed_nmi(s, m, window).raw; };
}

TEST(Permutation, UpperTailConventionAndFloor) {
  Rng rng(19);
  const Mask m = jittered_mask(1000, rng);
  const std::vector<double> s(1000, 1.0);
  // A metric whose observed value is always the minimum.
  int call = 0;
  const AlignmentMetric rising = [&call](std::span<const double>, const Mask&) { return static_cast<double>(call++); };
  EXPECT_DOUBLE_EQ(permutation_pvalue(rising, s, m, 100), 1.0);
  const std::vector<double> exact(m.begin(), m.end());
  const double p = permutation_pvalue(raw_nmi(50), exact, m, 500, NullScheme::CircularShift, 3);
  EXPECT_DOUBLE_EQ(p, 1.0 / 501.0);
  const double pb = permutation_pvalue(raw_nmi(50), exact, m, 500, NullScheme::BlockShuffle, 3, 50);
  EXPECT_LE(pb, 0.01);
  EXPECT_THROW(permutation_pvalue(raw_nmi(50), exact, m, 99), std::invalid_argument);
}

TEST(Permutation, CalibratedUnderIndependence) {
  Rng rng(9);
  std::vector<double> ps;
  for (int trial = 0; trial < 200; ++trial) {
    const Mask m = jittered_mask(500, rng);
    const auto s = smooth_noise(500, rng);
    const double p = permutation_pvalue(raw_nmi(50), s, m, 200, NullScheme::CircularShift, 1000 + trial);
    EXPECT_GE(p, 1.0 / 201.0);
    ps.push_back(p);
  }
  EXPECT_LT(ks_uniform_statistic(ps), ks_critical_5pct(ps.size()));
}

TEST(Permutation, PowerGrowsWithLength) {
  Rng rng(10);
  for (std::size_t n : {250u, 1000u}) {
    const Mask m = jittered_mask(n, rng);
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) s[i] = std::max(0.0, (m[i] ? 1.0 : 0.0) + 0.3 * rng.normal());
    const double p = permutation_pvalue(raw_nmi(50), s, m, 1000, NullScheme::CircularShift, 11);
    if (n == 1000) EXPECT_LE(p, 0.01);
    EXPECT_LE(p, 0.05) << n;
  }
}

TEST(Overlap, DiceIouExamples) {
  std::vector<double> s(100, 0.0);
  Mask m(100, 0);
  for (std::size_t i = 0; i < 10; ++i) {
    s[i] = 1.0;
    m[i] = 1;
  }
  auto r = dice_iou_at_k(s, m, 10.0);
  EXPECT_DOUBLE_EQ(r.dice, 1.0);
  EXPECT_DOUBLE_EQ(r.iou, 1.0);

  Mask far(100, 0);
  for (std::size_t i = 50; i < 60; ++i) far[i] = 1;
  r = dice_iou_at_k(s, far, 10.0);
  EXPECT_DOUBLE_EQ(r.dice, 0.0);
  EXPECT_DOUBLE_EQ(r.iou, 0.0);

  Mask half(100, 0);
  for (std::size_t i = 5; i < 15; ++i) half[i] = 1;
  r = dice_iou_at_k(s, half, 10.0);
  EXPECT_DOUBLE_EQ(r.dice, 0.5);
  EXPECT_DOUBLE_EQ(r.iou, 1.0 / 3.0);

  r = dice_iou_at_k(s, Mask(100, 0), 10.0);
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.dice, 0.0);
  EXPECT_THROW(dice_iou_at_k(s, m, 0.0), std::invalid_argument);
}

TEST(Overlap, TiesKeepEarlierIndices) {
  const std::vector<double> s(20, 1.0);
  const Mask top = top_k_indicator(s, 10.0);
  EXPECT_EQ(top[0], 1);
  EXPECT_EQ(top[1], 1);
  EXPECT_EQ(std::count(top.begin(), top.end(), 1), 2);
}

TEST(Overlap, IouIsDiceOverTwoMinusDice) {
  Rng rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 50 + rng.below(300);
    std::vector<double> s(n);
    for (double& v : s) v = rng.uniform();
    Mask m(n);
    for (auto& v : m) v = rng.uniform() < 0.3 ? 1 : 0;
    m[0] = 1;
    const auto r = dice_iou_at_k(s, m, 1.0 + 30.0 * rng.uniform());
    EXPECT_NEAR(r.iou, r.dice / (2.0 - r.dice), 1e-12);
  }
}

TEST(Kappa, PerfectIndependentAndBelowDice) {
  std::vector<double> s(100, 0.0);
  Mask m(100, 0);
  for (std::size_t i = 20; i < 30; ++i) {
    s[i] = 1.0;
    m[i] = 1;
  }
  EXPECT_DOUBLE_EQ(kappa_at_k(s, m, 10.0).value, 1.0);

  Rng rng(13);
  std::vector<double> noise(2000);
  for (double& v : noise) v = rng.uniform();
  Mask indep(2000, 0);
  for (std::size_t i = 0; i < 200; ++i) indep[rng.below(2000)] = 1;
  EXPECT_LT(std::abs(kappa_at_k(noise, indep, 10.0).value), 0.05);

  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> sal(500);
    for (double& v : sal) v = rng.uniform();
    Mask sparse(500, 0);
    for (std::size_t i = 0; i < 25 + rng.below(50); ++i) sparse[rng.below(500)] = 1;
    sparse[rng.below(500)] = 1;
    EXPECT_LE(kappa_at_k(sal, sparse, 10.0).value, dice_iou_at_k(sal, sparse, 10.0).dice + 1e-12);
  }
  EXPECT_TRUE(kappa_at_k(std::vector<double>(10, 1.0), Mask(10, 1), 100.0).degenerate);
}

TEST(Monotonicity, MetricsNonDecreasingInLambda) {
  Rng rng(14);
  const std::vector<double> lambdas = {0.0, 0.25, 0.5, 1.0, 2.0};
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 500 + rng.below(500);
    const Mask m = periodic_mask(n, 150 + rng.below(100), 30 + rng.below(60), rng.below(100));
    const auto s = smooth_noise(n, rng);
    const auto tr = monotonicity_harness(s, m, lambdas, 50, 10.0);
    EXPECT_NEAR(tr.nmi[0], windowed_nmi(s, m, 50).raw, 1e-12);
    EXPECT_DOUBLE_EQ(tr.dice[0], dice_iou_at_k(s, m, 10.0).dice);
    const Mask top = top_k_indicator(s, 10.0);
    const double a = static_cast<double>(std::count(top.begin(), top.end(), 1));
    const double b = static_cast<double>(std::count(m.begin(), m.end(), 1));
    const double tie_step = 2.0 / (a + b);
    for (std::size_t i = 1; i < lambdas.size(); ++i) {
      EXPECT_GE(tr.nmi[i], tr.nmi[i - 1] - 1e-9);
      EXPECT_GE(tr.dice[i], tr.dice[i - 1] - tie_step - 1e-12);
    }
  }
  EXPECT_THROW(monotonicity_harness(std::vector<double>(10, 1.0), Mask(10, 1), {1.0, 0.5}, 5), std::invalid_argument);
}

TEST(Stats, CohensD) {
  const std::vector<double> a = {2, 4};
  const std::vector<double> b = {1, 3};
  EXPECT_NEAR(cohens_d(a, b), 1.0 / std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(cohens_d(a, b), 0.7071, 1e-4);
  EXPECT_DOUBLE_EQ(cohens_d(a, a), 0.0);
  const std::vector<double> one = {0, 2};
  const std::vector<double> zero = {-1, 1};
  EXPECT_NEAR(cohens_d(one, zero), 1.0 / std::sqrt(2.0), 1e-12);
  Rng rng(15);
  for (int t = 0; t < 50; ++t) {
    auto x = normal_vec(5 + rng.below(10), 200 + t);
    auto y = normal_vec(5 + rng.below(10), 300 + t);
    EXPECT_NEAR(cohens_d(x, y), -cohens_d(y, x), 1e-12);
  }
  const std::vector<double> flat = {1, 1, 1};
  EXPECT_THROW(cohens_d(flat, flat), std::domain_error);
  EXPECT_THROW(cohens_d(std::vector<double>{1.0}, a), std::invalid_argument);
}

TEST(Stats, MeansOneVersusZeroWithUnitSd) {
  const std::vector<double> a = {0.0, 2.0};
  const std::vector<double> b = {-1.0, 1.0};
  // Both groups have sd sqrt(2); scale to unit pooled sd.
  std::vector<double> as;
  std::vector<double> bs;
  for (double v : a) as.push_back(1.0 + (v - 1.0) / std::sqrt(2.0));
  for (double v : b) bs.push_back(v / std::sqrt(2.0));
  EXPECT_NEAR(cohens_d(as, bs), 1.0, 1e-12);
}

TEST(Stats, BootstrapCi) {
  const std::vector<double> c(10, 0.25);
  const auto ci = bootstrap_ci(c, 500, 0.95, 1);
  EXPECT_DOUBLE_EQ(ci.low, 0.25);
  EXPECT_DOUBLE_EQ(ci.high, 0.25);
  const auto x = normal_vec(40, 16);
  const auto r = bootstrap_ci(x, 1000, 0.95, 2);
  const double m = mean(x);
  EXPECT_LE(r.low, m);
  EXPECT_GE(r.high, m);
  const auto again = bootstrap_ci(x, 1000, 0.95, 2);
  EXPECT_EQ(again.low, r.low);
  EXPECT_THROW(bootstrap_ci(std::vector<double>{}, 10), std::invalid_argument);
}

TEST(Stats, BootstrapCoverage) {
  int covered = 0;
  for (int trial = 0; trial < 200; ++trial) {
    Rng rng(5000 + static_cast<std::uint64_t>(trial));
    std::vector<double> x(30);
    for (double& v : x) v = rng.normal(2.0, 1.5);
    const auto ci = bootstrap_ci(x, 1000, 0.95, static_cast<std::uint64_t>(trial));
    covered += (ci.low <= 2.0 && 2.0 <= ci.high) ? 1 : 0;
  }
  const double coverage = covered / 200.0;
  EXPECT_GE(coverage, 0.90);
  EXPECT_LE(coverage, 0.99);
}

TEST(Stats, PairedTTest) {
  const std::vector<double> a = {1.0, 3.0};
  const std::vector<double> b = {0.0, 0.0};
  const auto r = paired_t_test(a, b);
  EXPECT_NEAR(r.t, 2.0, 1e-12);
  EXPECT_DOUBLE_EQ(r.df, 1.0);
  // Cauchy tail: P(|T| > 2) = 1 - 2 atan(2) / pi.
  EXPECT_NEAR(r.p_value, 1.0 - 2.0 * std::atan(2.0) / std::numbers::pi, 1e-12);
  EXPECT_NEAR(r.p_value, 0.295, 1e-3);

  const auto x = normal_vec(12, 17);
  std::vector<double> up = x;
  for (std::size_t i = 0; i < up.size(); ++i) up[i] += 0.5 + 0.01 * static_cast<double>(i);
  EXPECT_GT(paired_t_test(up, x).t, 0.0);
  EXPECT_LT(paired_t_test(x, up).t, 0.0);
  EXPECT_THROW(paired_t_test(x, x), std::domain_error);
}

TEST(Stats, BinomialBandAndKs) {
  const auto band = binomial_band(100, 0.25);
  EXPECT_LT(band.low, 0.25);
  EXPECT_GT(band.high, 0.25);
  EXPECT_NEAR(band.low, 0.17, 0.02);
  EXPECT_NEAR(band.high, 0.34, 0.02);
  std::vector<double> grid;
  for (int i = 0; i < 100; ++i) grid.push_back((i + 0.5) / 100.0);
  EXPECT_NEAR(ks_uniform_statistic(grid), 0.005, 1e-12);
  EXPECT_NEAR(ks_critical_5pct(200), 1.358 / std::sqrt(200.0), 2e-3);
}

SanityStats passing_sanity(const EatThresholds& t) {
  return {t.alpha, 0.1, true, 0.25, t.alpha};
}

AlignmentReport passing_alignment(const EatThresholds& t) {
  AlignmentReport r;
  r.windowed_nmi = t.tau;
  r.p_perm = t.alpha;
  r.ci_low = 0.01;
  r.ci_high = 0.2;
  return r;
}

std::vector<explain::AttackReport> passing_attacks(const EatThresholds& t) {
  std::vector<explain::AttackReport> out;
  for (double e : t.epsilons) {
    explain::AttackReport r;
    r.epsilon = e;
    r.flip_rate = t.rho;
    r.delta_p_true = -t.gamma;
    r.saliency_cosine = t.phi;
    r.n = 10;
    out.push_back(r);
  }
  return out;
}

EatInputs boundary_inputs() {
  EatInputs in;
  in.sanity = passing_sanity(in.thresholds);
  in.alignment = passing_alignment(in.thresholds);
  in.attacks = passing_attacks(in.thresholds);
  in.branch_similarity = in.thresholds.phi_arch;
  return in;
}

TEST(Eat, BoundaryValuesPass) {
  const auto v = certify_eat(boundary_inputs());
  EXPECT_TRUE(v.c1_fidelity);
  EXPECT_TRUE(v.c2_dependence);
  EXPECT_TRUE(v.c3_robustness);
  EXPECT_TRUE(v.c4_architecture);
  EXPECT_TRUE(v.overall);
  const auto j = verdict_to_json(v);
  EXPECT_EQ(j["thresholds"]["tau"], 0.2);
  EXPECT_EQ(j["overall"], true);
}

TEST(Eat, SingleFailuresFlipOverall) {
  auto in = boundary_inputs();
  in.alignment->p_perm = 0.2;
  auto v = certify_eat(in);
  EXPECT_FALSE(v.c2_dependence);
  EXPECT_FALSE(v.overall);

  in = boundary_inputs();
  in.attacks[1].flip_rate = 0.09;
  v = certify_eat(in);
  EXPECT_FALSE(v.c3_robustness);
  EXPECT_FALSE(v.overall);
  EXPECT_TRUE(v.c1_fidelity && v.c2_dependence && v.c4_architecture);

  in = boundary_inputs();
  in.sanity->shuffled_within_band = false;
  EXPECT_FALSE(certify_eat(in).c1_fidelity);
}

TEST(Eat, MissingInputsAreRejected) {
  auto in = boundary_inputs();
  in.sanity.reset();
  EXPECT_THROW(certify_eat(in), std::invalid_argument);
  in = boundary_inputs();
  in.alignment.reset();
  EXPECT_THROW(certify_eat(in), std::invalid_argument);
  in = boundary_inputs();
  in.branch_similarity.reset();
  EXPECT_THROW(certify_eat(in), std::invalid_argument);
  in = boundary_inputs();
  in.attacks.pop_back();
  EXPECT_THROW(certify_eat(in), std::invalid_argument);
}

TEST(Eat, ImprovingAStatisticNeverFlipsPassToFail) {
  Rng rng(18);
  for (int trial = 0; trial < 300; ++trial) {
    auto in = boundary_inputs();
    // Random perturbation around the thresholds.
    in.sanity->randomized_p = rng.uniform(0.0, 0.1);
    in.sanity->shuffled_alignment_p = rng.uniform(0.0, 0.1);
    in.alignment->windowed_nmi = rng.uniform(0.1, 0.3);
    in.alignment->p_perm = rng.uniform(0.0, 0.1);
    in.alignment->ci_low = rng.uniform(-0.05, 0.05);
    for (auto& a : in.attacks) {
      a.flip_rate = rng.uniform(0.0, 0.1);
      a.delta_p_true = rng.uniform(-0.1, 0.1);
      a.saliency_cosine = rng.uniform(0.8, 1.0);
    }
    in.branch_similarity = rng.uniform(0.3, 0.7);
    const bool before = certify_eat(in).overall;
    auto better = in;
    switch (rng.below(8)) {
      case 0: better.sanity->randomized_p += 0.05; break;
      case 1: better.sanity->shuffled_alignment_p += 0.05; break;
      case 2: better.alignment->windowed_nmi += 0.05; break;
      case 3: better.alignment->p_perm = std::max(0.0, better.alignment->p_perm - 0.05); break;
      case 4: better.alignment->ci_low += 0.02; break;
      case 5: better.attacks[0].flip_rate = std::max(0.0, better.attacks[0].flip_rate - 0.03); break;
      case 6: better.attacks[0].saliency_cosine = std::min(1.0, better.attacks[0].saliency_cosine + 0.05); break;
      default: *better.branch_similarity += 0.1; break;
    }
    if (before) EXPECT_TRUE(certify_eat(better).overall);
  }
}

TEST(Eat, ThresholdsJsonRoundTripRejectsUnknownKeys) {
  EatThresholds t;
  t.tau = 0.3;
  t.epsilons = {0.01};
  const auto back = thresholds_from_json(thresholds_to_json(t));
  EXPECT_EQ(back.tau, 0.3);
  EXPECT_EQ(back.epsilons, t.epsilons);
  EXPECT_THROW(thresholds_from_json(nlohmann::json{{"taus", 0.1}}), std::invalid_argument);
  EXPECT_THROW(thresholds_from_json(nlohmann::json{{"epsilons", std::vector<double>{}}}), std::invalid_argument);
}

}  // namespace
}  // namespace ecgtrust::trust

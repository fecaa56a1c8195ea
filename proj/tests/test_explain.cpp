#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "ecgtrust/explain.hpp"
#include "ecgtrust/metrics.hpp"
#include "ecgtrust/rng.hpp"
#include "ecgtrust/train.hpp"
#include "ecgtrust/transforms.hpp"
#include "ecgtrust/trust.hpp"
#include "gradcheck.hpp"

namespace ecgtrust::explain {
namespace {

using models::ArchKind;
using models::MicroNet;
using models::ModelInput;

Mask random_mask(std::size_t n, double p, std::uint64_t seed) {
  Rng rng(seed);
  Mask m(n);
  for (auto& v : m) v = rng.uniform() < p ? 1 : 0;
  return m;
}

// Small trained classifier on a 3-class problem in `dim` dimensions.
struct Trained {
  MicroNet net;
  models::Dataset data;
};

Trained trained_dense(std::size_t dim, std::size_t hidden, std::uint64_t seed) {
  Rng rng(seed);
  models::Dataset d;
  for (int i = 0; i < 90; ++i) {
    const int y = i % 3;
    std::vector<double> x(dim);
    for (std::size_t k = 0; k < dim; ++k) x[k] = rng.normal(k % 3 == static_cast<std::size_t>(y) ? 1.0 : 0.0, 0.8);
    d.inputs.push_back({x});
    d.labels.push_back(y);
  }
  MicroNet net = models::build_branch(ArchKind::DenseHead, {1, dim}, hidden, 3, seed + 1);
  models::calibrate_standardization(net, d.inputs);
  models::TrainConfig cfg;
  cfg.lr = 1e-2;
  cfg.max_epochs = 40;
  cfg.seed = seed;
  return {models::train(net, d, cfg).net, d};
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

TEST(Smoothing, IdentityConstantAndPeakOrder) {
  const std::vector<double> v = {1, 5, 2, 8};
  EXPECT_EQ(gaussian_smooth(v, 0.0), v);
  const std::vector<double> c(50, 3.0);
  for (double x : gaussian_smooth(c, 5.0)) EXPECT_NEAR(x, 3.0, 1e-12);

  // Isolated peaks 6 sigma apart (beyond the 4 sigma support of each other).
  std::vector<double> peaks(200, 0.0);
  const std::vector<std::size_t> at = {40, 70, 100, 130, 160};
  const std::vector<double> h = {3.0, 1.0, 5.0, 2.0, 4.0};
  for (std::size_t i = 0; i < at.size(); ++i) peaks[at[i]] = h[i];
  const auto sm = gaussian_smooth(peaks, 5.0);
  for (std::size_t i = 0; i < at.size(); ++i) {
    for (std::size_t j = 0; j < at.size(); ++j) {
      if (h[i] > h[j]) EXPECT_GT(sm[at[i]], sm[at[j]]);
    }
  }
  EXPECT_THROW(gaussian_smooth(v, -1.0), std::invalid_argument);
}

TEST(Saliency, LinearModelIsAbsoluteWeightRow) {
  const MicroNet net = models::build_branch(ArchKind::DenseHead, {1, 12}, 0, 3, 5);
  const auto w = net.slice_values("head.weight");
  const ModelInput x = testing_util::random_input(net, 1);
  for (std::size_t c = 0; c < 3; ++c) {
    const SaliencyMap m = saliency_grad(net, x, 0, c, 0.0);
    std::vector<double> a(12);
    for (std::size_t i = 0; i < 12; ++i) a[i] = std::abs(w[c * 12 + i]);
    const double lo = *std::min_element(a.begin(), a.end());
    const double hi = *std::max_element(a.begin(), a.end());
    for (std::size_t i = 0; i < 12; ++i) EXPECT_NEAR(m.values[i], (a[i] - lo) / (hi - lo), 1e-12);
    EXPECT_EQ(m.class_index, c);
  }
}

TEST(Saliency, NormalizedBoundsAndDegenerateFlag) {
  for (const auto& net : testing_util::all_kinds(4)) {
    const ModelInput x = testing_util::random_input(net, 2);
    const SaliencyMap m = saliency_grad(net, x, 0, 1);
    EXPECT_EQ(m.values.size(), x[0].size());
    EXPECT_DOUBLE_EQ(*std::min_element(m.values.begin(), m.values.end()), 0.0);
    EXPECT_DOUBLE_EQ(*std::max_element(m.values.begin(), m.values.end()), 1.0);
  }
  MicroNet flat = models::build_branch(ArchKind::DenseHead, {1, 8}, 0, 2, 1);
  for (double& v : flat.slice_values("head.weight")) v = 0.0;
  const SaliencyMap m = saliency_grad(flat, testing_util::random_input(flat, 3), 0, 0);
  EXPECT_TRUE(m.degenerate);
  for (double v : m.values) EXPECT_EQ(v, 0.0);
}

TEST(SmoothGrad, ZeroNoiseIsPlainSaliencyAndSeeded) {
  const auto nets = testing_util::all_kinds(5);
  const MicroNet& net = nets[0];
  const ModelInput x = testing_util::random_input(net, 4);
  EXPECT_EQ(smoothgrad(net, x, 0, 2, 25, 0.0, 9).values, saliency_grad(net, x, 0, 2).values);
  EXPECT_EQ(smoothgrad(net, x, 0, 2, 1, 0.3, 9).values, smoothgrad(net, x, 0, 2, 1, 0.3, 9).values);
  EXPECT_THROW(smoothgrad(net, x, 0, 2, 0, 0.3, 9), std::invalid_argument);
}

TEST(SmoothGrad, VarianceShrinksWithMoreSamples) {
  const auto nets = testing_util::all_kinds(6);
  const MicroNet& net = nets[0];
  const ModelInput x = testing_util::random_input(net, 5);
  auto spread = [&](std::size_t n) {
    std::vector<std::vector<double>> maps;
    for (std::uint64_t s = 0; s < 12; ++s) maps.push_back(smoothgrad(net, x, 0, 1, n, 0.5, 100 + s).values);
    double total = 0.0;
    for (std::size_t i = 0; i < maps[0].size(); ++i) {
      double mu = 0.0;
      for (const auto& m : maps) mu += m[i] / maps.size();
      for (const auto& m : maps) total += (m[i] - mu) * (m[i] - mu);
    }
    return total;
  };
  EXPECT_LT(spread(64), spread(4));
}

TEST(IntegratedGradients, ZeroPathAndLinearClosedForm) {
  const MicroNet lin = models::build_branch(ArchKind::DenseHead, {1, 9}, 0, 3, 8);
  const auto w = lin.slice_values("head.weight");
  const ModelInput x = testing_util::random_input(lin, 6);
  const ModelInput b = testing_util::random_input(lin, 7);
  const auto zero = integrated_gradients(lin, x, x, 1);
  for (double v : zero[0]) EXPECT_EQ(v, 0.0);
  const auto ig = integrated_gradients(lin, x, b, 2, 16);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(ig[0][i], w[2 * 9 + i] * (x[0][i] - b[0][i]), 1e-12);
  EXPECT_THROW(integrated_gradients(lin, x, b, 2, 0), std::invalid_argument);
  EXPECT_THROW(integrated_gradients(lin, x, {std::vector<double>(8, 0.0)}, 2), std::invalid_argument);
}

TEST(IntegratedGradients, CompletenessWithinOnePercent) {
  for (const auto& net : testing_util::all_kinds(7)) {
    for (std::uint64_t s = 0; s < 3; ++s) {
      const ModelInput x = testing_util::random_input(net, 20 + s);
      ModelInput base = x;
      for (auto& v : base) std::fill(v.begin(), v.end(), 0.0);
      const std::size_t c = s % net.n_classes();
      const double diff = net.forward(x).logits[c] - net.forward(base).logits[c];
      if (std::abs(diff) < 1e-3) continue;
      const auto ig = integrated_gradients(net, x, base, c, 256);
      double total = 0.0;
      for (const auto& v : ig) {
        for (double a : v) total += a;
      }
      EXPECT_LT(std::abs(total - diff) / std::abs(diff), 0.01) << models::arch_name(net.kind());
    }
  }
}

TEST(IntegratedGradients, AdditiveFusionSplitsAcrossBranches) {
  const MicroNet a = models::build_branch(ArchKind::TimeConv, {1, 64}, 6, 4, 1);
  const MicroNet b = models::build_branch(ArchKind::FreqAttn, {1, 32}, 5, 4, 2);
  MicroNet fused = models::build_fused(a, b);
  const ModelInput x = testing_util::random_input(fused, 8);
  const ModelInput base = {std::vector<double>(64, 0.0), std::vector<double>(32, 0.0)};
  const auto joint = integrated_gradients(fused, x, base, 3);
  // Each branch alone: the other input held at its baseline.
  const auto only_a = integrated_gradients(fused, {x[0], base[1]}, base, 3);
  const auto only_b = integrated_gradients(fused, {base[0], x[1]}, base, 3);
  for (std::size_t m = 0; m < 2; ++m) {
    const auto& single = m == 0 ? only_a[0] : only_b[1];
    double scale = 0.0;
    for (double v : single) scale = std::max(scale, std::abs(v));
    EXPECT_LT(max_abs_diff(joint[m], single), 1e-6 * scale);
  }
  // Ablate branch b: zero its block of head columns.
  auto w = fused.slice_values("head.weight");
  const std::size_t latent = fused.latent_dim();
  for (std::size_t k = 0; k < 4; ++k) {
    for (std::size_t i = 6; i < latent; ++i) w[k * latent + i] = 0.0;
  }
  const auto ablated = integrated_gradients(fused, x, base, 3);
  for (double v : ablated[1]) EXPECT_EQ(v, 0.0);
  double na = 0.0;
  for (double v : ablated[0]) na += std::abs(v);
  EXPECT_GT(na, 0.0);
}

TEST(SanityRandomized, SelfComparisonIsOne) {
  const auto t = trained_dense(30, 8, 1);
  std::vector<ModelInput> xs(t.data.inputs.begin(), t.data.inputs.begin() + 10);
  const auto self = saliency_association(t.net, t.net, xs, 0, 1, 200);
  for (double c : self.per_sample) EXPECT_NEAR(c, 1.0, 1e-12);
  EXPECT_NEAR(self.mean_cosine, 1.0, 1e-12);
  const auto r = sanity_randomized_weights(t.net, xs, 0, 2, 200);
  for (double c : r.per_sample) {
    EXPECT_GE(c, -1.0);
    EXPECT_LE(c, 1.0);
  }
  EXPECT_GT(r.p_value, 0.0);
  EXPECT_LE(r.p_value, 1.0);
}

TEST(SanityShuffled, PermutationPreservesLabelsAndAccuracyIsNearChance) {
  Rng rng(3);
  models::Dataset train;
  models::Dataset val;
  std::vector<Mask> masks;
  for (int i = 0; i < 160; ++i) {
    const int y = i % 4;
    std::vector<double> x(40);
    for (std::size_t k = 0; k < 40; ++k) x[k] = rng.normal(k / 10 == static_cast<std::size_t>(y) ? 1.5 : 0.0, 0.5);
    auto& d = i < 120 ? train : val;
    d.inputs.push_back({x});
    d.labels.push_back(y);
    if (i >= 120) masks.push_back(random_mask(40, 0.3, 100 + i));
  }
  MicroNet init = models::build_branch(ArchKind::DenseHead, {1, 40}, 8, 4, 4);
  models::calibrate_standardization(init, train.inputs);
  models::TrainConfig cfg;
  cfg.lr = 1e-2;
  cfg.max_epochs = 30;
  const auto r = sanity_shuffled_labels(init, train, val, masks, 0, cfg, 5, 5, 200);
  auto a = r.permuted_labels;
  auto b = train.labels;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  EXPECT_EQ(a, b);
  EXPECT_NE(r.permuted_labels, train.labels);
  EXPECT_DOUBLE_EQ(r.chance, 0.25);
  EXPECT_LT(r.band_low, 0.25);
  EXPECT_GT(r.band_high, 0.25);
  EXPECT_GE(r.alignment_p, 1.0 / 201.0);
  EXPECT_GE(r.saliency_variance, 0.0);
}

TEST(Fgsm, ZeroBudgetEmptyMaskAndBounds) {
  const auto t = trained_dense(20, 8, 2);
  const ModelInput& x = t.data.inputs[0];
  const Mask m = random_mask(20, 0.4, 1);
  EXPECT_EQ(fgsm_stt(t.net, x, 0, m, 0.0, 0), x);
  EXPECT_EQ(fgsm_stt(t.net, x, 0, Mask(20, 0), 0.3, 0), x);
  const auto adv = fgsm_stt(t.net, x, 0, m, 0.05, 1);
  for (std::size_t i = 0; i < 20; ++i) {
    if (!m[i]) EXPECT_EQ(adv[0][i], x[0][i]);
    EXPECT_LE(std::abs(adv[0][i] - x[0][i]), 0.05 + 1e-15);
  }
  EXPECT_THROW(fgsm_stt(t.net, x, 0, m, -0.1, 1), std::invalid_argument);
  EXPECT_THROW(fgsm_stt(t.net, x, 0, Mask(19, 1), 0.1, 1), std::invalid_argument);
}

TEST(Fgsm, LinearModelClosedForm) {
  const MicroNet lin = models::build_branch(ArchKind::DenseHead, {1, 10}, 0, 3, 9);
  const auto w = lin.slice_values("head.weight");
  const ModelInput x = testing_util::random_input(lin, 9);
  const Mask m = random_mask(10, 0.6, 2);
  const std::size_t y = 1;
  const auto p = lin.forward(x).probs;
  const auto adv = fgsm_stt(lin, x, 0, m, 0.1, y);
  for (std::size_t i = 0; i < 10; ++i) {
    double g = 0.0;
    for (std::size_t c = 0; c < 3; ++c) g += (p[c] - (c == y ? 1.0 : 0.0)) * w[c * 10 + i];
    const double expected = x[0][i] + (m[i] ? 0.1 * ((g > 0) - (g < 0)) : 0.0);
    EXPECT_DOUBLE_EQ(adv[0][i], expected);
  }
}

TEST(Pgd, SingleFullStepIsFgsmAndProjectionHolds) {
  const auto t = trained_dense(20, 8, 3);
  const Mask m = random_mask(20, 0.5, 3);
  for (std::size_t i = 0; i < 10; ++i) {
    const ModelInput& x = t.data.inputs[i];
    const auto y = static_cast<std::size_t>(t.data.labels[i]);
    EXPECT_EQ(pgd_stt(t.net, x, 0, m, 0.07, 1, 0.07, y), fgsm_stt(t.net, x, 0, m, 0.07, y));
    const auto adv = pgd_stt(t.net, x, 0, m, 0.07, 10, 0.03, y);
    for (std::size_t k = 0; k < 20; ++k) {
      EXPECT_LE(std::abs(adv[0][k] - x[0][k]), 0.07 + 1e-12);
      if (!m[k]) EXPECT_EQ(adv[0][k], x[0][k]);
    }
  }
  EXPECT_THROW(pgd_stt(t.net, t.data.inputs[0], 0, m, 0.1, 0, 0.1, 0), std::invalid_argument);
}

TEST(Pgd, NeverWorseThanFgsmAtEqualBudget) {
  for (std::uint64_t seed : {4u, 5u}) {
    const auto t = trained_dense(20, 8, seed);
    const Mask m = random_mask(20, 0.5, seed);
    for (std::size_t i = 0; i < 30; ++i) {
      const ModelInput& x = t.data.inputs[i];
      const auto y = static_cast<std::size_t>(t.data.labels[i]);
      for (double eps : {0.01, 0.05, 0.2}) {
        const double lf = models::cross_entropy(t.net, fgsm_stt(t.net, x, 0, m, eps, y), y);
        const double lp = models::cross_entropy(t.net, pgd_stt(t.net, x, 0, m, eps, 10, eps / 4.0, y), y);
        EXPECT_GE(lp, lf - 1e-9) << "seed " << seed << " sample " << i << " eps " << eps;
      }
    }
  }
}

TEST(AttackReport, ZeroBudgetIsIdentity) {
  const auto t = trained_dense(20, 8, 6);
  models::Dataset d = t.data.subset({0, 1, 2, 3, 4, 5});
  std::vector<Mask> masks(6, random_mask(20, 0.4, 6));
  for (AttackKind k : {AttackKind::FgsmStt, AttackKind::PgdStt}) {
    const auto r = attack_report(t.net, d, masks, 0, {k, 0.0}, 1.0);
    EXPECT_EQ(r.flip_rate, 0.0);
    EXPECT_EQ(r.delta_p_true, 0.0);
    EXPECT_DOUBLE_EQ(r.saliency_cosine, 1.0);
    EXPECT_DOUBLE_EQ(r.dice_at_k, 1.0);
    EXPECT_EQ(r.n, 6u);
  }
  EXPECT_THROW(attack_report(t.net, models::Dataset{}, {}, 0, {}), std::invalid_argument);
}

TEST(AttackReport, LossAscentLowersTrueClassProbability) {
  const auto t = trained_dense(20, 8, 7);
  std::vector<Mask> masks(t.data.size(), random_mask(20, 0.5, 7));
  for (double eps : {0.05, 0.2}) {
    const auto r = attack_report(t.net, t.data, masks, 0, {AttackKind::PgdStt, eps}, 1.0);
    EXPECT_LE(r.delta_p_true, 0.0);
    EXPECT_GE(r.flip_rate, 0.0);
    EXPECT_LE(r.flip_rate, 1.0);
  }
}

TEST(AttackReport, ZeroWeightOnMaskMeansNoEffect) {
  // Linear model whose weights vanish on the masked coordinates.
  MicroNet lin = models::build_branch(ArchKind::DenseHead, {1, 16}, 0, 3, 10);
  const Mask m = random_mask(16, 0.5, 10);
  auto w = lin.slice_values("head.weight");
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < 16; ++i) {
      if (m[i]) w[c * 16 + i] = 0.0;
    }
  }
  models::Dataset d;
  for (std::uint64_t s = 0; s < 12; ++s) {
    d.inputs.push_back(testing_util::random_input(lin, 50 + s));
    d.labels.push_back(static_cast<int>(s % 3));
  }
  std::vector<Mask> masks(d.size(), m);
  for (double eps : {0.005, 0.01, 0.02, 0.05, 1.0}) {
    for (AttackKind k : {AttackKind::FgsmStt, AttackKind::PgdStt}) {
      const auto r = attack_report(lin, d, masks, 0, {k, eps});
      EXPECT_EQ(r.flip_rate, 0.0);
      EXPECT_LT(std::abs(r.delta_p_true), 1e-9);
    }
  }
}

TEST(BranchSimilarity, DuplicatedBranchesAgree) {
  const MicroNet a = models::build_branch(ArchKind::TimeConv, {1, 256}, 6, 4, 11);
  MicroNet fused = models::build_fused(a, a);
  Rng rng(12);
  std::vector<std::vector<double>> xs;
  std::vector<Mask> masks;
  std::vector<int> classes;
  for (int i = 0; i < 4; ++i) {
    std::vector<double> x(256);
    for (double& v : x) v = rng.normal();
    xs.push_back(x);
    masks.push_back(random_mask(256, 0.3, 200 + i));
    classes.push_back(i % 4);
  }
  const std::vector<trust::InputView> views = {trust::InputView::Time, trust::InputView::Time};
  const auto r = trust::branch_similarity(fused, xs, classes, masks, views, 16);
  EXPECT_NEAR(r.median, 1.0, 1e-6);
  EXPECT_EQ(r.skipped, 0u);

  auto w = fused.slice_values("head.weight");
  for (std::size_t k = 0; k < 4; ++k) {
    for (std::size_t i = 6; i < 12; ++i) w[k * 12 + i] = 0.0;
  }
  const auto attr = trust::branch_attributions(fused, xs[0], masks[0], 1, views, 16);
  double nb = 0.0;
  for (double v : attr[1]) nb += v * v;
  EXPECT_LT(std::sqrt(nb), 1e-9);
  EXPECT_THROW(trust::branch_similarity(fused, xs, classes, masks, views, 16), std::runtime_error);
}

TEST(BranchSimilarity, TimeAndSpectralBranchesInRange) {
  const MicroNet a = models::build_branch(ArchKind::TimeConv, {1, 256}, 6, 4, 13);
  const MicroNet b = models::build_branch(ArchKind::FreqAttn, {1, 32}, 5, 4, 14);
  const MicroNet fused = models::build_fused(a, b);
  Rng rng(15);
  std::vector<std::vector<double>> xs;
  std::vector<Mask> masks;
  std::vector<int> classes;
  for (int i = 0; i < 3; ++i) {
    std::vector<double> x(256);
    for (std::size_t t = 0; t < x.size(); ++t) x[t] = std::sin(0.2 * t + i) + 0.3 * rng.normal();
    xs.push_back(x);
    masks.push_back(random_mask(256, 0.3, 300 + i));
    classes.push_back(i);
  }
  const auto r = trust::branch_similarity(fused, xs, classes, masks,
                                          {trust::InputView::Time, trust::InputView::FftFeatures}, 8, 32);
  for (double c : r.per_sample) {
    EXPECT_GE(c, -1.0);
    EXPECT_LE(c, 1.0);
  }
}

}  // namespace
}  // namespace ecgtrust::explain

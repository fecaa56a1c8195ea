#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "ecgtrust/fusion.hpp"
#include "ecgtrust/metrics.hpp"
#include "ecgtrust/rng.hpp"
#include "gradcheck.hpp"

namespace ecgtrust::fusion {
namespace {

transforms::FeatureBundle toy_bundle(double base) {
  transforms::FeatureBundle b;
  b.time_vec.assign(1000, base);
  b.freq_vec.assign(128, base + 1.0);
  b.scalogram = transforms::Grid(4, 4, base + 2.0);
  return b;
}

std::vector<double> random_probs(Rng& rng, std::size_t c) {
  std::vector<double> p(c);
  double s = 0.0;
  for (double& v : p) {
    v = rng.uniform() + 1e-3;
    s += v;
  }
  for (double& v : p) v /= s;
  return p;
}

std::vector<double> one_hot(std::size_t c, std::size_t k) {
  std::vector<double> p(c, 0.0);
  p[k] = 1.0;
  return p;
}

TEST(EarlyFuse, ConcatenatesInSelectedOrder) {
  const auto m = early_fuse_dataset({toy_bundle(0.0), toy_bundle(5.0)}, {0, 1}, {Modality::Time, Modality::Freq});
  ASSERT_EQ(m.rows(), 2u);
  EXPECT_EQ(m.cols(), 1128u);
  EXPECT_EQ(m.X[1][999], 5.0);
  EXPECT_EQ(m.X[1][1000], 6.0);

  const auto single = early_fuse_dataset({toy_bundle(1.0)}, {3}, {Modality::Freq, Modality::Scalogram});
  EXPECT_EQ(single.rows(), 1u);
  EXPECT_EQ(single.cols(), 144u);
  EXPECT_EQ(single.X[0][0], 2.0);
  EXPECT_EQ(single.X[0][128], 3.0);

  EXPECT_THROW(early_fuse_dataset({toy_bundle(0.0)}, {0}, {}), std::invalid_argument);
  EXPECT_THROW(early_fuse_dataset({toy_bundle(0.0)}, {0}, {Modality::Time}), std::invalid_argument);
}

TEST(LateFuse, Examples) {
  EXPECT_EQ(late_fuse_predict({{0.7, 0.3}, {0.1, 0.9}, {0.5, 0.5}}, {{1.0, 0.0, 0.0}}),
            (std::vector<double>{0.7, 0.3}));
  const auto sym = late_fuse_predict({{0.8, 0.2}, {0.2, 0.8}}, {{0.5, 0.5}});
  EXPECT_NEAR(sym[0], 0.5, 1e-15);
  EXPECT_NEAR(sym[1], 0.5, 1e-15);
  const auto t11 = late_fuse_predict({{1.0, 0.0}, {0.0, 1.0}, {0.5, 0.5}}, {{0.3, 0.3, 0.4}});
  EXPECT_NEAR(t11[0], 0.5, 1e-15);
  EXPECT_NEAR(t11[1], 0.5, 1e-15);
  EXPECT_THROW(late_fuse_predict({{0.5, 0.5}, {0.2, 0.3, 0.5}}, {{0.5, 0.5}}), std::invalid_argument);
  EXPECT_THROW(late_fuse_predict({{0.5, 0.5}}, {{0.5, 0.5}}), std::invalid_argument);
  EXPECT_THROW(late_fuse_predict({{0.5, 0.5}, {0.5, 0.5}}, {{0.6, 0.6}}), std::invalid_argument);
}

TEST(LateFuse, ConvexBoundsAndPermutationInvariance) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::vector<double>> probs = {random_probs(rng, 4), random_probs(rng, 4), random_probs(rng, 4)};
    const double a = rng.uniform();
    const double b = (1.0 - a) * rng.uniform();
    const FusionWeights w{{a, b, 1.0 - a - b}};
    const auto out = late_fuse_predict(probs, w);
    for (std::size_t k = 0; k < 4; ++k) {
      const double lo = std::min({probs[0][k], probs[1][k], probs[2][k]});
      const double hi = std::max({probs[0][k], probs[1][k], probs[2][k]});
      EXPECT_GE(out[k], lo - 1e-15);
      EXPECT_LE(out[k], hi + 1e-15);
    }
    const auto perm = late_fuse_predict({probs[2], probs[0], probs[1]}, {{w.alphas[2], w.alphas[0], w.alphas[1]}});
    EXPECT_EQ(metrics::argmax(perm), metrics::argmax(out));
  }
}

TEST(GridSearch, LatticeCountAndConvexity) {
  const auto lattice = simplex_lattice(3, 0.05);
  EXPECT_EQ(lattice.size(), 231u);
  EXPECT_EQ(simplex_lattice(2, 0.05).size(), 21u);
  for (const auto& a : lattice) {
    double s = 0.0;
    for (double v : a) {
      s += v;
      EXPECT_NEAR(v * 20.0, std::round(v * 20.0), 1e-12);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  EXPECT_TRUE(std::is_sorted(lattice.begin(), lattice.end()));
  EXPECT_THROW(simplex_lattice(3, 0.0), std::invalid_argument);
  EXPECT_THROW(simplex_lattice(3, 1.5), std::invalid_argument);
  EXPECT_THROW(simplex_lattice(3, 0.3), std::invalid_argument);
}

TEST(GridSearch, PerfectFirstBranchIsTheVertex) {
  Rng rng(2);
  std::vector<int> y;
  BranchProbs probs(3);
  for (int i = 0; i < 40; ++i) {
    const int label = static_cast<int>(rng.below(4));
    y.push_back(label);
    probs[0].push_back(one_hot(4, static_cast<std::size_t>(label)));
    probs[1].push_back(std::vector<double>(4, 0.25));
    probs[2].push_back(one_hot(4, static_cast<std::size_t>((label + 1) % 4)));
  }
  const auto r = grid_search_weights(probs, y, 0.05);
  EXPECT_EQ(r.trace.size(), 231u);
  EXPECT_DOUBLE_EQ(r.best_metrics.accuracy, 1.0);
  // Every candidate with alpha_1 > alpha_3 is perfect; the smallest such tuple wins.
  const auto best = r.best.alphas;
  EXPECT_GT(best[0], best[2]);
  for (const auto& cand : r.trace) {
    if (cand.accuracy == 1.0) {
      EXPECT_LE(best, cand.alphas);
    }
  }
  // With the distractor branch removed, the vertex is optimal too.
  const auto vertex = grid_search_weights({probs[0], probs[1]}, y, 0.05);
  EXPECT_DOUBLE_EQ(vertex.best_metrics.accuracy, 1.0);
}

TEST(GridSearch, OnlyFirstBranchInformativeSelectsIt) {
  Rng rng(3);
  std::vector<int> y;
  BranchProbs probs(3);
  for (int i = 0; i < 60; ++i) {
    const int label = static_cast<int>(rng.below(3));
    y.push_back(label);
    auto good = std::vector<double>(3, 0.1);
    good[static_cast<std::size_t>(label)] = 0.8;
    probs[0].push_back(good);
    probs[1].push_back(one_hot(3, rng.below(3)));
    probs[2].push_back(one_hot(3, rng.below(3)));
  }
  const auto r = grid_search_weights(probs, y, 0.05);
  EXPECT_DOUBLE_EQ(r.best_metrics.accuracy, 1.0);
  double best_acc_with_full_a1 = 0.0;
  for (const auto& cand : r.trace) {
    if (cand.alphas[0] == 1.0) best_acc_with_full_a1 = cand.accuracy;
  }
  EXPECT_DOUBLE_EQ(best_acc_with_full_a1, 1.0);
}

TEST(GridSearch, IdenticalBranchesTieBreakToSmallestTuple) {
  Rng rng(4);
  std::vector<int> y;
  BranchProbs probs(3);
  for (int i = 0; i < 30; ++i) {
    y.push_back(static_cast<int>(rng.below(2)));
    const auto p = random_probs(rng, 2);
    for (auto& b : probs) b.push_back(p);
  }
  const auto r = grid_search_weights(probs, y, 0.05);
  EXPECT_EQ(r.best.alphas, (std::vector<double>{0.0, 0.0, 1.0}));
  EXPECT_NO_THROW(r.best.validate());
}

TEST(GridSearch, TraceCsvHasOneRowPerCandidate) {
  BranchProbs probs = {{{0.6, 0.4}, {0.3, 0.7}}, {{0.5, 0.5}, {0.5, 0.5}}};
  const auto r = grid_search_weights(probs, {0, 1}, 0.25);
  const std::string csv = grid_trace_csv(r);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 6);
  EXPECT_EQ(csv.substr(0, csv.find('\r')), "alpha_1,alpha_2,accuracy,precision,recall,f1");
}

TEST(EntropyGate, Examples) {
  EXPECT_DOUBLE_EQ(entropy_gate({0.0, 1.0, 0.0}), 1.0);
  EXPECT_NEAR(entropy_gate({0.25, 0.25, 0.25, 0.25}), 0.0, 1e-15);
  const ClasswiseGateWeights W{{{1.0, 1.0}, {1.0, 1.0}}};
  const auto out = entropy_gated_fuse({{0.5, 0.5}, {0.9, 0.1}}, W);
  EXPECT_NEAR(out.probs[0], 0.9, 1e-12);
  EXPECT_FALSE(out.uniform_fallback);
  const auto flat = entropy_gated_fuse({{0.5, 0.5}, {0.5, 0.5}}, W);
  EXPECT_TRUE(flat.uniform_fallback);
  EXPECT_EQ(flat.probs, (std::vector<double>{0.5, 0.5}));
  EXPECT_THROW(entropy_gated_fuse({{0.5, 0.5}, {0.9, 0.1}}, {{{1.0, 0.0}, {1.0, 0.0}}}), std::invalid_argument);
  EXPECT_THROW(entropy_gated_fuse({{0.5, 0.5}, {0.9, 0.1}}, {{{1.0, -1.0}, {1.0, 1.0}}}), std::invalid_argument);
}

TEST(EntropyGate, OutputSumsToOne) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    ClasswiseGateWeights W{std::vector<std::vector<double>>(3, std::vector<double>(4))};
    for (auto& row : W.W) {
      for (double& v : row) v = rng.uniform() + 0.01;
    }
    const auto out = entropy_gated_fuse({random_probs(rng, 4), random_probs(rng, 4), random_probs(rng, 4)}, W);
    double s = 0.0;
    for (double v : out.probs) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Classwise, InformativeBranchDominates) {
  Rng rng(6);
  std::vector<int> y;
  BranchProbs probs(3);
  for (int i = 0; i < 80; ++i) {
    const int label = static_cast<int>(rng.below(4));
    y.push_back(label);
    auto good = std::vector<double>(4, 0.1);
    good[static_cast<std::size_t>(label)] = 0.7;
    probs[0].push_back(good);
    probs[1].push_back(one_hot(4, rng.below(4)));
    probs[2].push_back(one_hot(4, rng.below(4)));
  }
  const auto fit = fit_classwise_weights(probs, y, 0.1);
  EXPECT_NO_THROW(fit.weights.validate());
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_GE(fit.weights.W[0][k], fit.weights.W[1][k]);
    EXPECT_GE(fit.weights.W[0][k], fit.weights.W[2][k]);
  }
  EXPECT_DOUBLE_EQ(fit.val_macro_f1, 1.0);
  EXPECT_DOUBLE_EQ(metrics::macro_f1(y, gated_predict(probs, fit.weights), 4), fit.val_macro_f1);
}

TEST(Classwise, UniformBranchesKeepUniformWeights) {
  std::vector<int> y = {0, 1, 2, 0, 1, 2};
  BranchProbs probs(2, std::vector<std::vector<double>>(6, std::vector<double>(3, 1.0 / 3.0)));
  const auto fit = fit_classwise_weights(probs, y, 0.05);
  for (const auto& row : fit.weights.W) {
    for (double v : row) EXPECT_DOUBLE_EQ(v, 0.5);
  }
  const auto again = fit_classwise_weights(probs, y, 0.05);
  EXPECT_EQ(again.weights.W, fit.weights.W);
}

TEST(IntermediateFuse, ShapesAndBothInputsReceiveGradient) {
  using namespace models;
  Rng rng(7);
  const MicroNet a = build_branch(ArchKind::TimeConv, {1, 64}, 6, 3, 1);
  const MicroNet b = build_branch(ArchKind::FreqAttn, {1, 32}, 5, 3, 2);
  Dataset d;
  for (int i = 0; i < 30; ++i) {
    ModelInput x(2);
    x[0].resize(64);
    x[1].resize(32);
    for (double& v : x[0]) v = rng.normal();
    for (double& v : x[1]) v = rng.normal();
    d.inputs.push_back(x);
    d.labels.push_back(i % 3);
  }
  TrainConfig cfg = default_fuse_config();
  EXPECT_DOUBLE_EQ(cfg.lr, 3e-5);
  cfg.max_epochs = 2;
  const auto r = intermediate_fuse(a, b, d, cfg);
  EXPECT_EQ(r.net.latent_dim(), 11u);
  EXPECT_EQ(r.net.kind(), ArchKind::Fused);
  const auto g = grad_input(r.net, d.inputs[0], 1, GradOf::Logit);
  double n0 = 0.0;
  double n1 = 0.0;
  for (double v : g[0]) n0 += v * v;
  for (double v : g[1]) n1 += v * v;
  EXPECT_GT(n0, 0.0);
  EXPECT_GT(n1, 0.0);

  Dataset bad = d;
  bad.inputs[3][1].resize(31);
  EXPECT_THROW(intermediate_fuse(a, b, bad, cfg), std::invalid_argument);
}

}  // namespace
}  // namespace ecgtrust::fusion

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ecgtrust/explain.hpp"
#include "ecgtrust/models.hpp"
#include "ecgtrust/signals.hpp"
#include "ecgtrust/stats.hpp"
#include "json.hpp"

namespace ecgtrust::trust {

/// Rank-based bins: the r-th smallest value (stable order) goes to bin
/// floor(r * n_bins / n).
std::vector<int> equal_frequency_bins(std::span<const double> x, std::size_t n_bins);

struct MiEstimate {
  double nats = 0.0;
  bool degenerate = false;
};

/// Plug-in MI of the equal-frequency binned sequences, optionally with the
/// Miller-Madow correction, floored at 0. Requires n >= 4 * n_bins.
MiEstimate mi_continuous(std::span<const double> x, std::span<const double> s, std::size_t n_bins = 16,
                         bool miller_madow = true);

/// Exact MI of a joint probability table.
double discrete_mi(const std::vector<std::vector<double>>& joint);

/// Plug-in MI of two label sequences.
double labels_mi(std::span<const int> a, std::span<const int> b);
/// MI / max(H_a, H_b); 0 when either labeling is constant.
double nmi_labels(std::span<const int> a, std::span<const int> b);

struct AmiResult {
  double value = 0.0;
  bool degenerate = false;
};

/// Adjusted MI with the hypergeometric expected MI and the max-entropy
/// normalizer.
AmiResult ami(std::span<const int> a, std::span<const int> b);

struct WindowedNmi {
  double value = 0.0;  // clamp(raw, 0, 1)
  double raw = 0.0;
  bool degenerate = false;
};

/// Window distributions: s_j = saliency mass in window j, m_j = mask
/// occupancy, u_j = window length (all normalized). The score is
/// 1 - JS(s, m) / JS(u, m): 1 when s = m, 0 for saliency spread like u.
WindowedNmi windowed_nmi(std::span<const double> saliency, const Mask& mask, std::size_t window);

enum class NullScheme { CircularShift, BlockShuffle };

using AlignmentMetric = std::function<double(std::span<const double>, const Mask&)>;

/// (1 + #{null >= observed}) / (1 + n_perm), where the null permutes the
/// saliency and keeps the mask. block = 0 uses blocks of 1 sample.
double permutation_pvalue(const AlignmentMetric& metric, std::span<const double> saliency, const Mask& mask,
                          std::size_t n_perm = 1000, NullScheme scheme = NullScheme::CircularShift,
                          std::uint64_t seed = 0, std::size_t block = 0);

/// Same test on the mean metric over a set of (saliency, mask) pairs, every
/// sample permuted independently.
double dataset_permutation_pvalue(const AlignmentMetric& metric, const std::vector<std::vector<double>>& saliencies,
                                  const std::vector<Mask>& masks, std::size_t n_perm = 1000,
                                  NullScheme scheme = NullScheme::CircularShift, std::uint64_t seed = 0,
                                  std::size_t block = 0);

/// Indicator of the top round(k% of n) samples (at least one); ties keep
/// the earlier index.
Mask top_k_indicator(std::span<const double> saliency, double k_percent);

struct Overlap {
  double dice = 0.0;
  double iou = 0.0;
  bool degenerate = false;
};

Overlap dice_iou_at_k(std::span<const double> saliency, const Mask& mask, double k_percent = 10.0);

struct Kappa {
  double value = 0.0;
  bool degenerate = false;
};

Kappa kappa_at_k(std::span<const double> saliency, const Mask& mask, double k_percent = 10.0);

struct MonotonicityTrace {
  std::vector<double> lambdas;
  std::vector<double> nmi;
  std::vector<double> dice;
};

/// Metrics of S_lambda = (S + lambda W) / max(S + lambda W) for each lambda.
MonotonicityTrace monotonicity_harness(std::span<const double> saliency, const Mask& mask,
                                       const std::vector<double>& lambdas, std::size_t window,
                                       double k_percent = 10.0);

struct AlignmentReport {
  double mi_nats = 0.0;
  double windowed_nmi = 0.0;
  double ami = 0.0;
  double dice_at_k = 0.0;
  double iou_at_k = 0.0;
  double kappa_at_k = 0.0;
  double p_perm = 1.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::size_t n_perm = 0;
  double k_percent = 10.0;
  std::size_t window = 0;
  std::size_t n = 0;
};

struct AlignmentOptions {
  std::size_t window = 50;
  std::size_t n_perm = 1000;
  double k_percent = 10.0;
  std::size_t n_boot = 1000;
  std::size_t mi_bins = 16;
  std::size_t ami_bins = 4;
  std::uint64_t seed = 0;
};

/// Per-sample metrics summarized by their median. p_perm is the dataset-level
/// circular-shift test of the mean raw windowed score; the bootstrap interval
/// is over the same per-sample raw scores.
AlignmentReport alignment_report(const std::vector<std::vector<double>>& signals,
                                 const std::vector<std::vector<double>>& saliencies, const std::vector<Mask>& masks,
                                 const AlignmentOptions& options);

enum class InputView { Time, FftFeatures };

/// Time-domain IG attribution of each fused input for one sample. Branch m
/// sees view_m(b + a (x - b)) with the other branch held at view(b), where
/// b is x with the mask region zeroed.
std::vector<std::vector<double>> branch_attributions(const models::MicroNet& fused, std::span<const double> x,
                                                     const Mask& mask, std::size_t class_index,
                                                     const std::vector<InputView>& views, std::size_t steps = 64,
                                                     std::size_t n_freq_bins = 128);

struct BranchSimilarity {
  double median = 0.0;
  std::vector<double> per_sample;
  std::size_t skipped = 0;
};

/// Median within-mask cosine between the two branches' attributions.
/// Samples where either attribution has norm < 1e-9 are skipped; throws
/// std::runtime_error when every sample is skipped.
BranchSimilarity branch_similarity(const models::MicroNet& fused, const std::vector<std::vector<double>>& xs,
                                   const std::vector<int>& classes, const std::vector<Mask>& masks,
                                   const std::vector<InputView>& views, std::size_t steps = 64,
                                   std::size_t n_freq_bins = 128);

struct EatThresholds {
  double tau = 0.2;
  double alpha = 0.05;
  double rho = 0.05;
  double gamma = 0.05;
  double phi = 0.90;
  double phi_arch = 0.5;
  std::vector<double> epsilons = {0.005, 0.01, 0.02};

  void validate() const;
};

struct SanityStats {
  double randomized_p = 0.0;
  double randomized_mean_cosine = 0.0;
  bool shuffled_within_band = false;
  double shuffled_val_accuracy = 0.0;
  double shuffled_alignment_p = 0.0;
};

struct EatInputs {
  std::optional<SanityStats> sanity;
  std::optional<AlignmentReport> alignment;
  std::vector<explain::AttackReport> attacks;
  std::optional<double> branch_similarity;
  EatThresholds thresholds;
};

struct EatVerdict {
  bool c1_fidelity = false;
  bool c2_dependence = false;
  bool c3_robustness = false;
  bool c4_architecture = false;
  bool overall = false;
  SanityStats sanity;
  AlignmentReport alignment;
  std::vector<explain::AttackReport> attacks;
  double branch_similarity = 0.0;
  EatThresholds thresholds;
};

/// C1: randomized_p >= alpha, shuffled accuracy within band and shuffled
/// alignment p >= alpha. C2: windowed_nmi >= tau, p_perm <= alpha, ci_low > 0.
/// C3: every report at every epsilon in E has flip_rate <= rho,
/// |delta_p_true| <= gamma and saliency_cosine >= phi. C4: branch similarity
/// >= phi_arch. Threshold comparisons are inclusive. Throws when any input
/// is missing or an epsilon in E has no attack report.
EatVerdict certify_eat(const EatInputs& inputs);

nlohmann::json alignment_to_json(const AlignmentReport& r);
nlohmann::json attack_to_json(const explain::AttackReport& r);
nlohmann::json thresholds_to_json(const EatThresholds& t);
EatThresholds thresholds_from_json(const nlohmann::json& j);
nlohmann::json verdict_to_json(const EatVerdict& v);

}  // namespace ecgtrust::trust

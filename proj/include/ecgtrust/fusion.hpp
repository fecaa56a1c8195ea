#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ecgtrust/balance.hpp"
#include "ecgtrust/models.hpp"
#include "ecgtrust/train.hpp"
#include "ecgtrust/transforms.hpp"

namespace ecgtrust::fusion {

enum class Modality { Time, Freq, Scalogram };

std::string modality_name(Modality m);
Modality parse_modality(const std::string& name);

/// Convex weights over branches.
struct FusionWeights {
  std::vector<double> alphas;

  /// Throws unless every alpha is in [0, 1] and they sum to 1 within 1e-12.
  void validate() const;
};

/// Branch x class gate weights for entropy-gated fusion.
struct ClasswiseGateWeights {
  std::vector<std::vector<double>> W;  // W[branch][class]

  std::size_t n_branches() const { return W.size(); }
  std::size_t n_classes() const { return W.empty() ? 0 : W.front().size(); }
  /// Throws unless W is rectangular, non-negative, and every class column
  /// has a positive entry.
  void validate() const;
};

/// Flattened modality vectors of one record, in `selected` order.
std::vector<double> early_fuse_row(const transforms::FeatureBundle& bundle,
                                   const std::vector<Modality>& selected);

/// One row per bundle. Requires at least two modalities.
balance::LabeledMatrix early_fuse_dataset(const std::vector<transforms::FeatureBundle>& bundles,
                                          const std::vector<int>& labels,
                                          const std::vector<Modality>& selected);

/// Fine-tuning defaults for the fused model.
models::TrainConfig default_fuse_config();

/// Builds the fused model from two trained branches and fine-tunes every
/// trainable parameter on `data` (inputs ordered branch A, branch B).
models::TrainResult intermediate_fuse(const models::MicroNet& branch_a, const models::MicroNet& branch_b,
                                      const models::Dataset& data, const models::TrainConfig& config,
                                      const models::Dataset& validation = {});

/// sum_i alpha_i * probs_i.
std::vector<double> late_fuse_predict(const std::vector<std::vector<double>>& probs_per_branch,
                                      const FusionWeights& w);

/// probs[branch][sample][class].
using BranchProbs = std::vector<std::vector<std::vector<double>>>;

struct GridCandidate {
  std::vector<double> alphas;
  double accuracy = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
};

struct GridSearchResult {
  FusionWeights best;
  GridCandidate best_metrics;
  std::vector<GridCandidate> trace;  // every lattice point, lexicographic order
};

/// All weight vectors on the simplex lattice with spacing `step`, in
/// lexicographic order. 1/step must be an integer.
std::vector<std::vector<double>> simplex_lattice(std::size_t n_branches, double step);

/// Exhaustive accuracy-maximizing search over simplex_lattice. Ties keep the
/// lexicographically smallest weights.
GridSearchResult grid_search_weights(const BranchProbs& probs, const std::vector<int>& y_val, double step = 0.05);

/// g = 1 - H(p) / ln(C), in [0, 1].
double entropy_gate(const std::vector<double>& probs);

struct GatedOutput {
  std::vector<double> probs;
  bool uniform_fallback = false;
};

/// score(c) = sum_m W[m][c] g_m p_m(c), renormalized; uniform when every
/// score is zero.
GatedOutput entropy_gated_fuse(const std::vector<std::vector<double>>& probs_per_branch,
                               const ClasswiseGateWeights& W);

struct ClasswiseFit {
  ClasswiseGateWeights weights;
  double val_macro_f1 = 0.0;
};

/// Starts from uniform W, then tries every simplex lattice point as a column
/// shared by all classes, then refines class columns one at a time, sweeping
/// until a pass changes nothing. Only strict macro-F1 improvements are taken.
ClasswiseFit fit_classwise_weights(const BranchProbs& probs, const std::vector<int>& y_val, double step = 0.05,
                                   std::size_t max_passes = 5);

/// Predictions of entropy-gated fusion over a whole set.
std::vector<int> gated_predict(const BranchProbs& probs, const ClasswiseGateWeights& W);

std::string weights_to_json(const FusionWeights& w);
std::string classwise_to_json(const ClasswiseGateWeights& w);
/// Header alpha_1..alpha_m,accuracy,precision,recall,f1 and one row per candidate.
std::string grid_trace_csv(const GridSearchResult& result);

}  // namespace ecgtrust::fusion

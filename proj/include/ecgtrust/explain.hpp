#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ecgtrust/models.hpp"
#include "ecgtrust/signals.hpp"
#include "ecgtrust/train.hpp"

namespace ecgtrust::explain {

/// Non-negative attribution over the samples of one input slot, min-max
/// normalized to [0, 1].
struct SaliencyMap {
  std::vector<double> values;
  std::size_t class_index = 0;
  double smoothing_sigma = 5.0;
  bool degenerate = false;  // constant raw map; values are all zero
};

/// Gaussian smoothing with a kernel truncated at 4 sigma and renormalized
/// over the in-range taps at the edges. sigma = 0 returns the input.
std::vector<double> gaussian_smooth(std::span<const double> v, double sigma);

/// Smooth, then min-max normalize.
SaliencyMap make_saliency(std::span<const double> raw, std::size_t class_index, double sigma);

/// |d logit_class / d x[slot]|, smoothed and normalized.
SaliencyMap saliency_grad(const models::MicroNet& net, const models::ModelInput& x, std::size_t slot,
                          std::size_t class_index, double sigma = 5.0,
                          models::GradOf of = models::GradOf::Logit);

/// Saliency of the class the model predicts for x.
SaliencyMap saliency_predicted(const models::MicroNet& net, const models::ModelInput& x, std::size_t slot,
                               double sigma = 5.0, models::GradOf of = models::GradOf::Logit);

/// Mean of saliency_grad maps over n copies of x whose slot carries
/// N(0, noise_sigma^2) noise, renormalized. noise_sigma = 0 returns
/// saliency_grad unchanged.
SaliencyMap smoothgrad(const models::MicroNet& net, const models::ModelInput& x, std::size_t slot,
                       std::size_t class_index, std::size_t n = 25, double noise_sigma = 0.1,
                       std::uint64_t seed = 0, double sigma = 5.0, models::GradOf of = models::GradOf::Logit);

/// Signed attributions for every input slot: (x - baseline) times the mean
/// gradient of logit_class at the midpoints of `steps` equal path segments.
models::ModelInput integrated_gradients(const models::MicroNet& net, const models::ModelInput& x,
                                        const models::ModelInput& baseline, std::size_t class_index,
                                        std::size_t steps = 256);

double cosine(std::span<const double> a, std::span<const double> b);

struct RandomizedWeightsCheck {
  std::vector<double> per_sample;  // cosine(trained map, randomized map)
  double mean_cosine = 0.0;
  double mean_abs_cosine = 0.0;
  double p_value = 1.0;  // circular-shift null on the mean cosine
  std::size_t n_perm = 0;
};

/// Compares predicted-class saliency of `trained` with that of
/// randomize_weights(trained, seed) on the same inputs and class.
RandomizedWeightsCheck sanity_randomized_weights(const models::MicroNet& trained,
                                                 const std::vector<models::ModelInput>& xs, std::size_t slot,
                                                 std::uint64_t seed, std::size_t n_perm = 1000,
                                                 double sigma = 5.0, models::GradOf of = models::GradOf::Logit);

/// Same comparison against an explicitly supplied second model.
RandomizedWeightsCheck saliency_association(const models::MicroNet& a, const models::MicroNet& b,
                                            const std::vector<models::ModelInput>& xs, std::size_t slot,
                                            std::uint64_t seed, std::size_t n_perm = 1000, double sigma = 5.0,
                                            models::GradOf of = models::GradOf::Logit);

struct ShuffledLabelCheck {
  std::vector<int> permuted_labels;
  double val_accuracy = 0.0;
  double chance = 0.0;
  double band_low = 0.0;
  double band_high = 1.0;
  bool within_band = false;
  double saliency_variance = 0.0;  // mean per-sample variance of the normalized maps
  double alignment_nmi = 0.0;      // median windowed NMI against the masks
  double alignment_p = 1.0;        // dataset-level circular-shift p-value
};

/// Re-initializes `init` with fresh weights, trains it on `train` with the
/// labels permuted, and evaluates on `val` (true labels and masks).
ShuffledLabelCheck sanity_shuffled_labels(const models::MicroNet& init, const models::Dataset& train,
                                          const models::Dataset& val, const std::vector<Mask>& val_masks,
                                          std::size_t slot, const models::TrainConfig& config, std::uint64_t seed,
                                          std::size_t window, std::size_t n_perm = 1000, double sigma = 5.0,
                                          models::GradOf of = models::GradOf::Logit);

enum class AttackKind { FgsmStt, PgdStt };

std::string attack_name(AttackKind kind);
AttackKind parse_attack(const std::string& name);

struct AttackSpec {
  AttackKind kind = AttackKind::FgsmStt;
  double epsilon = 0.01;
  std::size_t steps = 10;
  double step_size = 0.0;  // 0 means epsilon / 4

  double effective_step() const { return step_size > 0.0 ? step_size : epsilon / 4.0; }
  void validate() const;
};

/// x + epsilon * sign(d loss / d x[slot]) on the mask; other slots untouched.
models::ModelInput fgsm_stt(const models::MicroNet& net, const models::ModelInput& x, std::size_t slot,
                            const Mask& mask, double epsilon, std::size_t true_class);

/// Masked sign ascent on the cross-entropy, projected after every step onto
/// the epsilon box around x restricted to the mask. Returns the highest-loss
/// point among the iterates and the fgsm_stt point.
models::ModelInput pgd_stt(const models::MicroNet& net, const models::ModelInput& x, std::size_t slot,
                           const Mask& mask, double epsilon, std::size_t steps, double step_size,
                           std::size_t true_class);

models::ModelInput run_attack(const models::MicroNet& net, const models::ModelInput& x, std::size_t slot,
                              const Mask& mask, const AttackSpec& spec, std::size_t true_class);

struct AttackReport {
  AttackKind kind = AttackKind::FgsmStt;
  double epsilon = 0.0;
  double flip_rate = 0.0;
  double delta_p_true = 0.0;
  double saliency_cosine = 1.0;
  double dice_at_k = 1.0;
  double iou_at_k = 1.0;
  std::size_t n = 0;
};

/// Attacks every sample of `data` and compares predictions and predicted-class
/// saliency (of the clean prediction) before and after.
AttackReport attack_report(const models::MicroNet& net, const models::Dataset& data, const std::vector<Mask>& masks,
                           std::size_t slot, const AttackSpec& spec, double sigma = 5.0, double k_percent = 10.0,
                           models::GradOf of = models::GradOf::Logit);

}  // namespace ecgtrust::explain

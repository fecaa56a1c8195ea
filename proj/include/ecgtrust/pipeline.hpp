#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecgtrust/balance.hpp"
#include "ecgtrust/explain.hpp"
#include "ecgtrust/fusion.hpp"
#include "ecgtrust/models.hpp"
#include "ecgtrust/signals.hpp"
#include "ecgtrust/train.hpp"
#include "ecgtrust/transforms.hpp"
#include "ecgtrust/trust.hpp"
#include "json.hpp"

namespace ecgtrust::pipeline {

/// Invalid or unreadable configuration (CLI exit code 2).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A stage ran before the stage producing its inputs (CLI exit code 3).
class MissingPrerequisite : public std::runtime_error {
 public:
  MissingPrerequisite(const std::string& stage, const std::string& what)
      : std::runtime_error(what), stage_(stage) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

/// Non-finite numbers or a degenerate statistic where a value is required
/// (CLI exit code 4).
class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataConfig {
  std::size_t n_per_class = 100;  // records of the largest class
  double fs = 250.0;
  int n_beats = 6;
  /// Class sizes relative to n_per_class, in EcgClass order.
  std::vector<double> class_ratio = {1.0, 240.0 / 284.0, 172.0 / 284.0, 233.0 / 284.0};
  std::size_t time_length = 1000;
  std::size_t n_freq_bins = 128;
  std::size_t scalogram_size = 32;
};

struct BalanceConfig {
  std::string method = "adasyn";  // adasyn | smote | none
  std::size_t k = 5;
};

struct BranchConfig {
  models::ArchKind kind = models::ArchKind::TimeConv;
  std::size_t latent = 32;
  models::TrainConfig train;
};

struct ModelsConfig {
  BranchConfig time{models::ArchKind::TimeConv, 32, {}};
  BranchConfig freq{models::ArchKind::FreqAttn, 32, {}};
  BranchConfig scalogram{models::ArchKind::TfConv2d, 32, {}};
  BranchConfig early{models::ArchKind::DenseHead, 32, {}};
};

struct FusionConfig {
  std::vector<std::string> strategies = {"early", "intermediate", "late", "classwise"};
  double grid_step = 0.05;
  models::TrainConfig fine_tune = fusion::default_fuse_config();
};

struct NoiseConfig {
  double gaussian_snr_db = 15.0;
  double wander_hz = 0.15;
  double wander_mv = 0.15;
  double muscle_lo_hz = 20.0;
  double muscle_hi_hz = 50.0;
  double muscle_mv = 0.033;  // about 15 dB below a typical record's RMS
};

struct ExplainConfig {
  double saliency_sigma = 5.0;
  models::GradOf saliency_target = models::GradOf::Logit;  // "logit" | "log_prob"
  std::size_t window = 50;  // fs / 5 at the default rate
  std::size_t n_perm = 1000;
  std::size_t n_boot = 1000;
  double k_percent = 10.0;
  std::size_t ig_steps = 64;
};

struct RunConfig {
  std::uint64_t seed = 7;
  DataConfig data;
  signals::FilterSpec filter;
  signals::DenoiseSpec denoise{4, 0.08};
  BalanceConfig balance;
  ModelsConfig models;
  FusionConfig fusion;
  std::vector<explain::AttackSpec> attacks = {
      {explain::AttackKind::FgsmStt, 0.005}, {explain::AttackKind::FgsmStt, 0.01},
      {explain::AttackKind::FgsmStt, 0.02},  {explain::AttackKind::FgsmStt, 0.05},
      {explain::AttackKind::PgdStt, 0.005},  {explain::AttackKind::PgdStt, 0.01},
      {explain::AttackKind::PgdStt, 0.02},   {explain::AttackKind::PgdStt, 0.05}};
  NoiseConfig noise;
  ExplainConfig explain;
  trust::EatThresholds eat;
  std::string output_dir = "ecgtrust_out";

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Strict parse: every key is optional, unknown keys throw ConfigError.
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& c);
RunConfig load_config(const std::filesystem::path& path);

enum class Split { Train, Val, Test };
std::string split_name(Split s);

struct Corpus {
  std::vector<signals::EcgRecord> records;
  std::vector<Split> split;
};

/// Records for every class with stratified 80/10/10 splits. Throws
/// std::invalid_argument when n_per_class is 0.
Corpus generate_corpus(const RunConfig& config);

/// Band-pass, then wavelet shrinkage.
std::vector<double> preprocess_signal(const signals::EcgRecord& record, const signals::FilterSpec& filter,
                                      const signals::DenoiseSpec& denoise);

transforms::FeatureConfig feature_config(const RunConfig& config);

struct FeatureSet {
  std::vector<transforms::FeatureBundle> bundles;
  std::vector<int> labels;
  std::vector<Mask> masks;  // ST-T masks fitted to the time view
  std::vector<Split> split;

  std::vector<std::size_t> indices(Split s) const;
};

FeatureSet featurize(const std::vector<signals::EcgRecord>& records, const std::vector<Split>& split,
                     const RunConfig& config, const signals::FilterSpec& filter);

/// Modality views as parallel row lists.
struct TrainingSet {
  std::vector<std::vector<double>> time;
  std::vector<std::vector<double>> freq;
  std::vector<std::vector<double>> scalogram;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

TrainingSet select(const FeatureSet& features, Split s);

/// Row layout of the oversampling matrix: time | freq | scalogram.
balance::LabeledMatrix to_matrix(const TrainingSet& set);
TrainingSet from_matrix(const balance::LabeledMatrix& m, std::size_t time_length, std::size_t n_freq_bins);

/// Oversamples the training set with the configured method.
balance::OversampleResult balance_training(const TrainingSet& train, const RunConfig& config);

struct Plausibility {
  double mean_cosine_to_class_mean = 0.0;  // synthetic rows vs real class mean
  double kl_nats = 0.0;                    // pooled feature values, real vs synthetic
  std::size_t n_synthetic = 0;
};

Plausibility plausibility(const balance::OversampleResult& balanced, std::size_t n_original);

enum class ModelSlot { Time, Freq, Scalogram, Early, Intermediate };

/// Inputs for one model, in the model's input order.
models::Dataset make_dataset(const TrainingSet& set, ModelSlot slot);

struct BranchModels {
  models::MicroNet time;
  models::MicroNet freq;
  models::MicroNet scalogram;
};

BranchModels train_branches(const TrainingSet& train, const TrainingSet& val, const RunConfig& config);

struct FusionModels {
  std::optional<models::MicroNet> early;
  std::optional<models::MicroNet> intermediate;
  std::optional<fusion::GridSearchResult> late;
  std::optional<fusion::ClasswiseFit> classwise;
};

FusionModels fit_fusion(const BranchModels& branches, const TrainingSet& train, const TrainingSet& val,
                        const RunConfig& config);

/// Test-set predictions of every available model, keyed by model name
/// (time, freq, scalogram, early, intermediate, late, classwise).
std::map<std::string, std::vector<int>> predict_all(const BranchModels& branches, const FusionModels& fused,
                                                    const TrainingSet& test);

struct EffectSize {
  std::string other;
  double cohens_d = 0.0;
  double diff_ci_low = 0.0;
  double diff_ci_high = 0.0;
};

/// Paired bootstrap of test macro-F1: Cohen's d between the replicate
/// scores of `reference` and every other model, plus the percentile
/// interval of their difference.
std::vector<EffectSize> effect_sizes(const std::map<std::string, std::vector<int>>& predictions,
                                     const std::vector<int>& labels, const std::string& reference,
                                     std::size_t n_boot, std::uint64_t seed);

struct NoiseResult {
  std::string kind;
  double clean_f1 = 0.0;
  double noisy_f1 = 0.0;
  double delta_pp = 0.0;  // percentage points, noisy minus clean
};

/// Injects each noise kind into the raw test records, repeats preprocessing
/// and features, and scores the intermediate-fused model.
std::vector<NoiseResult> noise_robustness(const models::MicroNet& fused, const std::vector<signals::EcgRecord>& test,
                                          const RunConfig& config);

struct CertifyResult {
  trust::SanityStats sanity;
  explain::RandomizedWeightsCheck randomized;
  explain::ShuffledLabelCheck shuffled;
  trust::AlignmentReport alignment;
  trust::BranchSimilarity branch;
  trust::EatVerdict verdict;
};

/// Time-slot saliency maps of the predicted class.
std::vector<std::vector<double>> saliency_maps(const models::MicroNet& net, const std::vector<models::ModelInput>& xs,
                                               double sigma, models::GradOf of = models::GradOf::Logit);

trust::AlignmentReport alignment_for(const models::MicroNet& net, const TrainingSet& test,
                                     const std::vector<Mask>& masks, const RunConfig& config);

std::vector<explain::AttackReport> run_attacks(const models::MicroNet& fused, const TrainingSet& test,
                                               const std::vector<Mask>& masks, const RunConfig& config);

CertifyResult certify(const models::MicroNet& fused, const BranchModels& branches, const TrainingSet& train,
                      const TrainingSet& test, const std::vector<Mask>& test_masks,
                      const std::vector<explain::AttackReport>& attacks, const RunConfig& config);

// Stage runners. Each reads earlier artifacts under config.output_dir,
// writes its own and records them in manifest.json.

inline const std::vector<std::string>& stage_order() {
  static const std::vector<std::string> order = {"preprocess", "balance", "train", "fuse", "attack", "certify"};
  return order;
}

void cmd_gen(const RunConfig& config);
void cmd_pipeline(const RunConfig& config, const std::vector<std::string>& stages);
void cmd_report(const RunConfig& config);

}  // namespace ecgtrust::pipeline

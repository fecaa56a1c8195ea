#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "ecgtrust/models.hpp"

namespace ecgtrust::models {

struct Dataset {
  std::vector<ModelInput> inputs;
  std::vector<int> labels;

  std::size_t size() const { return inputs.size(); }
  Dataset subset(const std::vector<std::size_t>& indices) const;
};

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
  std::size_t batch = 32;
  std::size_t max_epochs = 60;
  std::size_t patience = 10;
  std::uint64_t seed = 0;
  double val_fraction = 0.2;
  /// Per-class loss weights; empty means all ones.
  std::vector<double> class_weights;

  void validate() const;
};

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::vector<double> val_accuracy;
  std::size_t best_epoch = 0;  // index into val_loss of the restored parameters
  bool stopped_early = false;
};

struct TrainResult {
  MicroNet net;
  TrainHistory history;
};

/// Indices of a per-class shuffled split; the second part holds
/// round(fraction * n_c) samples of every class c (at least one when n_c >= 2).
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(
    const std::vector<int>& labels, double fraction, std::uint64_t seed);

/// Adam on mean (class-weighted) cross-entropy over mini-batches. Training
/// uses a stratified split of `data` unless `validation` is non-empty. Stops
/// after max_epochs or when validation loss has not improved for `patience`
/// epochs, and returns the parameters of the best validation epoch.
TrainResult train(MicroNet net, const Dataset& data, const TrainConfig& config,
                  const Dataset& validation = {});

/// Mean (class-weighted) cross-entropy over a dataset.
double mean_loss(const MicroNet& net, const Dataset& data, const std::vector<double>& class_weights = {});

std::vector<int> predict(const MicroNet& net, const std::vector<ModelInput>& inputs);
std::vector<std::vector<double>> predict_proba(const MicroNet& net, const std::vector<ModelInput>& inputs);

}  // namespace ecgtrust::models

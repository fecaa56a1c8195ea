#include "ecgtrust/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

#include "ecgtrust/metrics.hpp"
#include "ecgtrust/rng.hpp"

namespace ecgtrust::models {

namespace {

template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

double weight_of(const std::vector<double>& w, int label) {
  if (w.empty()) return 1.0;
  return w.at(static_cast<std::size_t>(label));
}

}  // namespace

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  Dataset d;
  for (std::size_t i : indices) {
    d.inputs.push_back(inputs.at(i));
    d.labels.push_back(labels.at(i));
  }
  return d;
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: lr must be > 0");
  if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("TrainConfig: betas must lie in (0, 1)");
  }
  if (!(epsilon > 0.0)) throw std::invalid_argument("TrainConfig: epsilon must be > 0");
  if (batch < 1) throw std::invalid_argument("TrainConfig: batch must be >= 1");
  if (patience < 1) throw std::invalid_argument("TrainConfig: patience must be >= 1");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw std::invalid_argument("TrainConfig: val_fraction must lie in (0, 1)");
  for (double w : class_weights) {
    if (!(w > 0.0)) throw std::invalid_argument("TrainConfig: class weights must be > 0");
  }
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(
    const std::vector<int>& labels, double fraction, std::uint64_t seed) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  std::vector<std::size_t> first;
  std::vector<std::size_t> second;
  for (auto& [label, idx] : by_class) {
    Rng rng(seed, static_cast<std::uint64_t>(label) + 1);
    shuffle(idx, rng);
    std::size_t n_second = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size())));
    if (n_second == 0 && idx.size() >= 2) n_second = 1;
    n_second = std::min(n_second, idx.size());
    second.insert(second.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_second));
    first.insert(first.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_second), idx.end());
  }
  std::sort(first.begin(), first.end());
  std::sort(second.begin(), second.end());
  return {first, second};
}

double mean_loss(const MicroNet& net, const Dataset& data, const std::vector<double>& class_weights) {
  if (data.size() == 0) throw std::invalid_argument("mean_loss: empty dataset");
  double total = 0.0;
  double wsum = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double w = weight_of(class_weights, data.labels[i]);
    total += w * cross_entropy(net, data.inputs[i], static_cast<std::size_t>(data.labels[i]));
    wsum += w;
  }
  return total / wsum;
}

std::vector<std::vector<double>> predict_proba(const MicroNet& net, const std::vector<ModelInput>& inputs) {
  std::vector<std::vector<double>> out;
  out.reserve(inputs.size());
  for (const auto& x : inputs) out.push_back(net.forward(x).probs);
  return out;
}

std::vector<int> predict(const MicroNet& net, const std::vector<ModelInput>& inputs) {
  std::vector<int> out;
  out.reserve(inputs.size());
  for (const auto& x : inputs) out.push_back(metrics::argmax(net.forward(x).probs));
  return out;
}

TrainResult train(MicroNet net, const Dataset& data, const TrainConfig& config, const Dataset& validation) {
  config.validate();
  if (data.size() == 0) throw std::invalid_argument("train: empty dataset");
  if (data.inputs.size() != data.labels.size()) throw std::invalid_argument("train: inputs/labels mismatch");
  for (int y : data.labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= net.n_classes()) throw std::invalid_argument("train: label out of range");
  }
  if (!config.class_weights.empty() && config.class_weights.size() != net.n_classes()) {
    throw std::invalid_argument("train: class_weights length must equal n_classes");
  }
  TrainResult result{net, {}};
  if (config.max_epochs == 0) return result;

  Dataset train_set;
  Dataset val_set;
  if (validation.size() > 0) {
    train_set = data;
    val_set = validation;
  } else {
    const auto [tr, va] = stratified_split(data.labels, config.val_fraction, derive_seed(config.seed, "split", 0));
    if (tr.empty() || va.empty()) throw std::invalid_argument("train: dataset too small to split");
    train_set = data.subset(tr);
    val_set = data.subset(va);
  }

  const auto mask = net.trainable_mask();
  const std::size_t n_params = net.params().size();
  std::vector<double> m(n_params, 0.0);
  std::vector<double> v(n_params, 0.0);
  std::size_t step = 0;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<double> best_params = net.params();
  std::size_t since_best = 0;

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    Rng rng(derive_seed(config.seed, "epoch", epoch));
    shuffle(order, rng);
    double epoch_loss = 0.0;
    double epoch_w = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch) {
      const std::size_t end = std::min(order.size(), start + config.batch);
      std::vector<double> grad(n_params, 0.0);
      double wsum = 0.0;
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t i = order[b];
        const double w = weight_of(config.class_weights, train_set.labels[i]);
        const LossGrad lg = cross_entropy_grad(net, train_set.inputs[i], static_cast<std::size_t>(train_set.labels[i]),
                                               false, true);
        for (std::size_t p = 0; p < n_params; ++p) grad[p] += w * lg.grads.params[p];
        epoch_loss += w * lg.loss;
        epoch_w += w;
        wsum += w;
      }
      ++step;
      const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
      auto& params = net.params();
      for (std::size_t p = 0; p < n_params; ++p) {
        if (!mask[p]) continue;
        const double g = grad[p] / wsum;
        m[p] = config.beta1 * m[p] + (1.0 - config.beta1) * g;
        v[p] = config.beta2 * v[p] + (1.0 - config.beta2) * g * g;
        params[p] -= config.lr * (m[p] / c1) / (std::sqrt(v[p] / c2) + config.epsilon);
      }
    }
    result.history.train_loss.push_back(epoch_loss / epoch_w);
    const double val = mean_loss(net, val_set, config.class_weights);
    if (!std::isfinite(val)) throw std::runtime_error("train: validation loss is not finite");
    result.history.val_loss.push_back(val);
    const auto pred = predict(net, val_set.inputs);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == val_set.labels[i];
    result.history.val_accuracy.push_back(static_cast<double>(correct) / static_cast<double>(pred.size()));
    if (val < best_val) {
      best_val = val;
      best_params = net.params();
      result.history.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      result.history.stopped_early = true;
      break;
    }
  }
  net.params() = best_params;
  result.net = std::move(net);
  return result;
}

}  // namespace ecgtrust::models

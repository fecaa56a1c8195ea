#include "ecgtrust/metrics.hpp"

#include <stdexcept>

namespace ecgtrust::metrics {

ClassificationMetrics classification_metrics(std::span<const int> y_true, std::span<const int> y_pred,
                                             int n_classes) {
  if (y_true.size() != y_pred.size()) throw std::invalid_argument("metrics: length mismatch");
  if (y_true.empty()) throw std::invalid_argument("metrics: empty input");
  if (n_classes < 1) throw std::invalid_argument("metrics: n_classes must be >= 1");
  const auto c = static_cast<std::size_t>(n_classes);
  std::vector<double> tp(c, 0.0);
  std::vector<double> pred(c, 0.0);
  std::vector<double> support(c, 0.0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const int t = y_true[i];
    const int p = y_pred[i];
    if (t < 0 || t >= n_classes || p < 0 || p >= n_classes) {
      throw std::invalid_argument("metrics: label out of range");
    }
    support[static_cast<std::size_t>(t)] += 1.0;
    pred[static_cast<std::size_t>(p)] += 1.0;
    if (t == p) {
      tp[static_cast<std::size_t>(t)] += 1.0;
      ++correct;
    }
  }
  ClassificationMetrics m;
  const double n = static_cast<double>(y_true.size());
  m.accuracy = static_cast<double>(correct) / n;
  for (std::size_t k = 0; k < c; ++k) {
    const double precision = pred[k] > 0.0 ? tp[k] / pred[k] : 0.0;
    const double recall = support[k] > 0.0 ? tp[k] / support[k] : 0.0;
    const double f1 = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    m.macro_precision += precision / static_cast<double>(c);
    m.macro_recall += recall / static_cast<double>(c);
    m.macro_f1 += f1 / static_cast<double>(c);
    m.weighted_precision += precision * support[k] / n;
    m.weighted_recall += recall * support[k] / n;
    m.weighted_f1 += f1 * support[k] / n;
  }
  return m;
}

double macro_f1(std::span<const int> y_true, std::span<const int> y_pred, int n_classes) {
  return classification_metrics(y_true, y_pred, n_classes).macro_f1;
}

int argmax(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("argmax: empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return static_cast<int>(best);
}

}  // namespace ecgtrust::metrics

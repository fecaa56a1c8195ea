#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace ecgtrust::metrics {

struct ClassificationMetrics {
  double accuracy = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  double weighted_precision = 0.0;
  double weighted_recall = 0.0;
  double weighted_f1 = 0.0;
};

/// Per-class precision, recall and F1 averaged over classes 0..n_classes-1.
/// A class with no predictions (or no support) contributes 0 for the
/// undefined ratio. Weighted averages use true-class support.
ClassificationMetrics classification_metrics(std::span<const int> y_true, std::span<const int> y_pred,
                                             int n_classes);

double macro_f1(std::span<const int> y_true, std::span<const int> y_pred, int n_classes);

/// Index of the largest entry; ties go to the lower index.
int argmax(std::span<const double> v);

}  // namespace ecgtrust::metrics

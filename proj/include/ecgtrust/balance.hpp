#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ecgtrust::balance {

/// Feature rows with integer class labels.
struct LabeledMatrix {
  std::vector<std::vector<double>> X;
  std::vector<int> y;

  std::size_t rows() const { return X.size(); }
  std::size_t cols() const { return X.empty() ? 0 : X.front().size(); }
  std::map<int, std::size_t> class_counts() const;
  /// Throws unless rows(X) == len(y), all rows share one width and entries are finite.
  void validate() const;
};

/// Indices of the k rows nearest to row i (Euclidean), excluding i itself.
/// Ties are broken by lower index. Requires k < rows.
std::vector<std::size_t> knn_indices(const std::vector<std::vector<double>>& X, std::size_t i,
                                     std::size_t k);

struct OversampleOptions {
  std::size_t k = 5;
  std::uint64_t seed = 0;
  /// When set, every interpolation uses this lambda instead of a U(0,1) draw.
  std::optional<double> fixed_lambda;
};

/// Per-class record of one oversampling pass.
struct ClassReport {
  int label = 0;
  std::vector<std::size_t> sample_indices;  // rows of the input belonging to the class
  std::vector<double> difficulty;           // r_i
  std::vector<double> allocation_exact;     // r_i / sum(r) * G before rounding
  std::vector<std::size_t> allocation;      // G_i
  std::size_t generated = 0;                // G
  bool uniform_fallback = false;            // every r_i was zero
};

struct OversampleReport {
  std::string method;
  int majority_label = 0;
  std::size_t majority_count = 0;
  std::vector<ClassReport> classes;
};

struct OversampleResult {
  LabeledMatrix data;  // original rows first, then synthetic rows class by class
  OversampleReport report;
};

/// Largest-remainder rounding of non-negative shares to integers summing to
/// `total`; equal remainders go to the lower index.
std::vector<std::size_t> largest_remainder(std::span<const double> exact, std::size_t total);

/// Adaptive synthetic oversampling. Every non-majority class is grown to the
/// majority count. Difficulty counts other-class rows among the k nearest
/// neighbours over the whole input; interpolation partners are the
/// min(k, n_class - 1) nearest rows of the same class.
OversampleResult adasyn(const LabeledMatrix& data, const OversampleOptions& options);

/// Same interpolation rule with allocation spread evenly across the class.
OversampleResult smote(const LabeledMatrix& data, const OversampleOptions& options);

/// Histogram KL divergence in nats on shared equal-width bins over the pooled
/// range, with add-one smoothing.
double kl_divergence(std::span<const double> p_samples, std::span<const double> q_samples,
                     std::size_t n_bins);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// CSV with header "label,f0,f1,...".
void save_matrix(const LabeledMatrix& m, const std::filesystem::path& path);
LabeledMatrix load_matrix(const std::filesystem::path& path);

std::string report_to_json(const OversampleReport& report);

}  // namespace ecgtrust::balance

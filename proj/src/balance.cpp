#include "ecgtrust/balance.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "ecgtrust/io.hpp"
#include "ecgtrust/rng.hpp"

namespace ecgtrust::balance {

namespace {

double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t c = 0; c < a.size(); ++c) {
    const double d = a[c] - b[c];
    s += d * d;
  }
  return s;
}

std::vector<std::size_t> nearest_among(const std::vector<std::vector<double>>& X, std::size_t i,
                                       const std::vector<std::size_t>& candidates, std::size_t k) {
  std::vector<std::pair<double, std::size_t>> d;
  d.reserve(candidates.size());
  for (std::size_t j : candidates) {
    if (j != i) d.emplace_back(squared_distance(X[i], X[j]), j);
  }
  if (k > d.size()) throw std::invalid_argument("knn: k exceeds the number of candidate rows");
  std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
  std::vector<std::size_t> out(k);
  for (std::size_t m = 0; m < k; ++m) out[m] = d[m].second;
  return out;
}

enum class Allocation { Adaptive, Uniform };

OversampleResult oversample(const LabeledMatrix& data, const OversampleOptions& options,
                            Allocation scheme) {
  data.validate();
  if (options.k < 1) throw std::invalid_argument("oversample: k must be >= 1");
  if (options.fixed_lambda && !(*options.fixed_lambda >= 0.0 && *options.fixed_lambda <= 1.0)) {
    throw std::invalid_argument("oversample: fixed lambda must lie in [0, 1]");
  }
  const auto counts = data.class_counts();
  if (counts.size() < 2) throw std::invalid_argument("oversample: need at least two classes");
  if (options.k >= data.rows()) throw std::invalid_argument("oversample: k must be < number of rows");

  OversampleResult result;
  result.data = data;
  OversampleReport& report = result.report;
  report.method = scheme == Allocation::Adaptive ? "adasyn" : "smote";
  for (const auto& [label, n] : counts) {
    if (n > report.majority_count) {
      report.majority_count = n;
      report.majority_label = label;
    }
  }

  std::vector<std::size_t> all(data.rows());
  std::iota(all.begin(), all.end(), std::size_t{0});

  for (const auto& [label, n_class] : counts) {
    if (label == report.majority_label) continue;
    ClassReport cr;
    cr.label = label;
    cr.generated = report.majority_count - n_class;
    for (std::size_t i = 0; i < data.rows(); ++i) {
      if (data.y[i] == label) cr.sample_indices.push_back(i);
    }
    if (n_class < 2) {
      throw std::invalid_argument("oversample: class " + std::to_string(label) +
                                  " needs at least 2 samples to interpolate");
    }
    const std::size_t m = cr.sample_indices.size();

    cr.difficulty.assign(m, 0.0);
    if (scheme == Allocation::Adaptive) {
      for (std::size_t s = 0; s < m; ++s) {
        const auto nb = nearest_among(data.X, cr.sample_indices[s], all, options.k);
        std::size_t other = 0;
        for (std::size_t j : nb) other += data.y[j] != label;
        cr.difficulty[s] = static_cast<double>(other) / static_cast<double>(options.k);
      }
    }
    const double total_r = std::accumulate(cr.difficulty.begin(), cr.difficulty.end(), 0.0);
    cr.uniform_fallback = scheme == Allocation::Adaptive && total_r == 0.0;
    cr.allocation_exact.assign(m, 0.0);
    for (std::size_t s = 0; s < m; ++s) {
      const double share = (scheme == Allocation::Adaptive && total_r > 0.0)
                               ? cr.difficulty[s] / total_r
                               : 1.0 / static_cast<double>(m);
      cr.allocation_exact[s] = share * static_cast<double>(cr.generated);
    }
    cr.allocation = largest_remainder(cr.allocation_exact, cr.generated);

    const std::size_t k_gen = std::min(options.k, m - 1);
    Rng rng(options.seed + static_cast<std::uint64_t>(label));
    for (std::size_t s = 0; s < m; ++s) {
      if (cr.allocation[s] == 0) continue;
      const std::size_t i = cr.sample_indices[s];
      const auto partners = nearest_among(data.X, i, cr.sample_indices, k_gen);
      for (std::size_t g = 0; g < cr.allocation[s]; ++g) {
        const std::size_t j = partners[rng.below(k_gen)];
        const double lambda = options.fixed_lambda ? *options.fixed_lambda : rng.uniform();
        std::vector<double> row(data.X[i]);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] += lambda * (data.X[j][c] - data.X[i][c]);
        result.data.X.push_back(std::move(row));
        result.data.y.push_back(label);
      }
    }
    report.classes.push_back(std::move(cr));
  }
  return result;
}

}  // namespace

std::map<int, std::size_t> LabeledMatrix::class_counts() const {
  std::map<int, std::size_t> counts;
  for (int label : y) ++counts[label];
  return counts;
}

void LabeledMatrix::validate() const {
  if (X.size() != y.size()) throw std::invalid_argument("LabeledMatrix: rows(X) != len(y)");
  const std::size_t d = cols();
  for (const auto& row : X) {
    if (row.size() != d) throw std::invalid_argument("LabeledMatrix: ragged rows");
    for (double v : row) {
      if (!std::isfinite(v)) throw std::invalid_argument("LabeledMatrix: non-finite entry");
    }
  }
}

std::vector<std::size_t> knn_indices(const std::vector<std::vector<double>>& X, std::size_t i,
                                     std::size_t k) {
  if (i >= X.size()) throw std::invalid_argument("knn_indices: row index out of range");
  if (k >= X.size()) throw std::invalid_argument("knn_indices: k must be < number of rows");
  std::vector<std::size_t> all(X.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return nearest_among(X, i, all, k);
}

std::vector<std::size_t> largest_remainder(std::span<const double> exact, std::size_t total) {
  std::vector<std::size_t> out(exact.size(), 0);
  if (exact.empty()) {
    if (total != 0) throw std::invalid_argument("largest_remainder: nothing to allocate into");
    return out;
  }
  std::size_t assigned = 0;
  std::vector<std::pair<double, std::size_t>> rem;
  for (std::size_t i = 0; i < exact.size(); ++i) {
    if (!(exact[i] >= 0.0)) throw std::invalid_argument("largest_remainder: negative share");
    const double fl = std::floor(exact[i]);
    out[i] = static_cast<std::size_t>(fl);
    assigned += out[i];
    rem.emplace_back(exact[i] - fl, i);
  }
  if (assigned > total) throw std::invalid_argument("largest_remainder: shares exceed total");
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < total; ++r, ++assigned) ++out[rem[r % rem.size()].second];
  return out;
}

OversampleResult adasyn(const LabeledMatrix& data, const OversampleOptions& options) {
  return oversample(data, options, Allocation::Adaptive);
}

OversampleResult smote(const LabeledMatrix& data, const OversampleOptions& options) {
  return oversample(data, options, Allocation::Uniform);
}

double kl_divergence(std::span<const double> p_samples, std::span<const double> q_samples,
                     std::size_t n_bins) {
  if (n_bins < 2) throw std::invalid_argument("kl_divergence: n_bins must be >= 2");
  if (p_samples.empty() || q_samples.empty()) throw std::invalid_argument("kl_divergence: empty sample set");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (auto s : {p_samples, q_samples}) {
    for (double v : s) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  auto histogram = [&](std::span<const double> s) {
    std::vector<double> h(n_bins, 1.0);
    const double width = (hi - lo) / static_cast<double>(n_bins);
    for (double v : s) {
      std::size_t b = width > 0.0 ? static_cast<std::size_t>((v - lo) / width) : 0;
      h[std::min(b, n_bins - 1)] += 1.0;
    }
    const double total = static_cast<double>(s.size() + n_bins);
    for (double& v : h) v /= total;
    return h;
  };
  const auto p = histogram(p_samples);
  const auto q = histogram(q_samples);
  double kl = 0.0;
  for (std::size_t b = 0; b < n_bins; ++b) kl += p[b] * std::log(p[b] / q[b]);
  return std::max(kl, 0.0);
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine_similarity: length mismatch");
  double ab = 0.0;
  double aa = 0.0;
  double bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) throw std::invalid_argument("cosine_similarity: zero vector");
  return std::clamp(ab / (std::sqrt(aa) * std::sqrt(bb)), -1.0, 1.0);
}

void save_matrix(const LabeledMatrix& m, const std::filesystem::path& path) {
  m.validate();
  std::string text = "label";
  for (std::size_t c = 0; c < m.cols(); ++c) text += ",f" + std::to_string(c);
  text += "\n";
  for (std::size_t r = 0; r < m.rows(); ++r) {
    text += std::to_string(m.y[r]);
    for (double v : m.X[r]) text += "," + io::format_double(v);
    text += "\n";
  }
  io::write_text(path, text);
}

LabeledMatrix load_matrix(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  if (!std::getline(f, line) || line.rfind("label", 0) != 0) {
    throw std::runtime_error("unexpected header in " + path.string());
  }
  LabeledMatrix m;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    m.y.push_back(std::stoi(cell));
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) row.push_back(std::strtod(cell.c_str(), nullptr));
    m.X.push_back(std::move(row));
  }
  m.validate();
  return m;
}

std::string report_to_json(const OversampleReport& report) {
  nlohmann::json j;
  j["method"] = report.method;
  j["majority_label"] = report.majority_label;
  j["majority_count"] = report.majority_count;
  j["classes"] = nlohmann::json::array();
  for (const auto& c : report.classes) {
    nlohmann::json jc;
    jc["label"] = c.label;
    jc["sample_indices"] = c.sample_indices;
    jc["difficulty"] = c.difficulty;
    jc["allocation_exact"] = c.allocation_exact;
    jc["allocation"] = c.allocation;
    jc["generated"] = c.generated;
    jc["uniform_fallback"] = c.uniform_fallback;
    j["classes"].push_back(jc);
  }
  return io::dump_json(j);
}

}  // namespace ecgtrust::balance

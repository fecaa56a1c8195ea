#include "ecgtrust/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ecgtrust/io.hpp"
#include "ecgtrust/metrics.hpp"

namespace ecgtrust::fusion {

namespace {

std::size_t lattice_divisions(double step) {
  if (!(step > 0.0 && step <= 1.0)) throw std::invalid_argument("fusion: grid step must lie in (0, 1]");
  const double inv = 1.0 / step;
  const double n = std::round(inv);
  if (std::abs(n * step - 1.0) > 1e-9) throw std::invalid_argument("fusion: 1/step must be an integer");
  return static_cast<std::size_t>(n);
}

void lattice_rec(std::size_t branch, std::size_t n_branches, std::size_t remaining, std::size_t n,
                 std::vector<std::size_t>& counts, std::vector<std::vector<double>>& out) {
  if (branch + 1 == n_branches) {
    counts[branch] = remaining;
    std::vector<double> alphas(n_branches);
    for (std::size_t i = 0; i < n_branches; ++i) alphas[i] = static_cast<double>(counts[i]) / static_cast<double>(n);
    out.push_back(std::move(alphas));
    return;
  }
  for (std::size_t c = 0; c <= remaining; ++c) {
    counts[branch] = c;
    lattice_rec(branch + 1, n_branches, remaining - c, n, counts, out);
  }
}

// Checks the [branch][sample][class] cube against y and returns (n_samples, n_classes).
std::pair<std::size_t, std::size_t> check_probs(const BranchProbs& probs, const std::vector<int>& y) {
  if (probs.size() < 2 || probs.size() > 3) throw std::invalid_argument("fusion: need 2 or 3 branches");
  const std::size_t n = probs.front().size();
  if (n == 0) throw std::invalid_argument("fusion: empty validation set");
  if (y.size() != n) throw std::invalid_argument("fusion: labels and probabilities differ in length");
  const std::size_t c = probs.front().front().size();
  if (c < 2) throw std::invalid_argument("fusion: need at least two classes");
  for (const auto& branch : probs) {
    if (branch.size() != n) throw std::invalid_argument("fusion: branches differ in sample count");
    for (const auto& p : branch) {
      if (p.size() != c) throw std::invalid_argument("fusion: branches differ in class count");
    }
  }
  for (int label : y) {
    if (label < 0 || static_cast<std::size_t>(label) >= c) throw std::invalid_argument("fusion: label out of range");
  }
  return {n, c};
}

std::vector<std::vector<double>> sample_slice(const BranchProbs& probs, std::size_t i) {
  std::vector<std::vector<double>> out;
  out.reserve(probs.size());
  for (const auto& branch : probs) out.push_back(branch[i]);
  return out;
}

}  // namespace

std::string modality_name(Modality m) {
  switch (m) {
    case Modality::Time: return "time";
    case Modality::Freq: return "freq";
    case Modality::Scalogram: return "scalogram";
  }
  return "time";
}

Modality parse_modality(const std::string& name) {
  if (name == "time") return Modality::Time;
  if (name == "freq") return Modality::Freq;
  if (name == "scalogram") return Modality::Scalogram;
  throw std::invalid_argument("unknown modality: " + name);
}

void FusionWeights::validate() const {
  if (alphas.empty()) throw std::invalid_argument("FusionWeights: empty");
  double sum = 0.0;
  for (double a : alphas) {
    if (!(a >= 0.0 && a <= 1.0)) throw std::invalid_argument("FusionWeights: weights must lie in [0, 1]");
    sum += a;
  }
  if (std::abs(sum - 1.0) > 1e-12) throw std::invalid_argument("FusionWeights: weights must sum to 1");
}

void ClasswiseGateWeights::validate() const {
  if (W.empty() || W.front().empty()) throw std::invalid_argument("ClasswiseGateWeights: empty");
  const std::size_t c = W.front().size();
  for (const auto& row : W) {
    if (row.size() != c) throw std::invalid_argument("ClasswiseGateWeights: ragged matrix");
    for (double v : row) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("ClasswiseGateWeights: weights must be >= 0");
    }
  }
  for (std::size_t k = 0; k < c; ++k) {
    bool any = false;
    for (const auto& row : W) any = any || row[k] > 0.0;
    if (!any) throw std::invalid_argument("ClasswiseGateWeights: class column without a positive weight");
  }
}

std::vector<double> early_fuse_row(const transforms::FeatureBundle& bundle, const std::vector<Modality>& selected) {
  std::vector<double> row;
  for (Modality m : selected) {
    const std::vector<double>& part = m == Modality::Time   ? bundle.time_vec
                                      : m == Modality::Freq ? bundle.freq_vec
                                                            : bundle.scalogram.values;
    row.insert(row.end(), part.begin(), part.end());
  }
  return row;
}

balance::LabeledMatrix early_fuse_dataset(const std::vector<transforms::FeatureBundle>& bundles,
                                          const std::vector<int>& labels, const std::vector<Modality>& selected) {
  if (selected.empty()) throw std::invalid_argument("early_fuse_dataset: no modality selected");
  if (selected.size() < 2) throw std::invalid_argument("early_fuse_dataset: need at least two modalities");
  if (bundles.size() != labels.size()) throw std::invalid_argument("early_fuse_dataset: bundles/labels mismatch");
  balance::LabeledMatrix out;
  out.X.reserve(bundles.size());
  for (const auto& b : bundles) out.X.push_back(early_fuse_row(b, selected));
  out.y = labels;
  out.validate();
  return out;
}

models::TrainConfig default_fuse_config() {
  models::TrainConfig c;
  c.lr = 3e-5;
  return c;
}

models::TrainResult intermediate_fuse(const models::MicroNet& branch_a, const models::MicroNet& branch_b,
                                      const models::Dataset& data, const models::TrainConfig& config,
                                      const models::Dataset& validation) {
  const models::MicroNet fused = models::build_fused(branch_a, branch_b);
  const auto shapes = fused.input_shapes();
  for (const auto& x : data.inputs) {
    if (x.size() != shapes.size() || x[0].size() != shapes[0].size() || x[1].size() != shapes[1].size()) {
      throw std::invalid_argument("intermediate_fuse: dataset inputs do not match the branch input shapes");
    }
  }
  return models::train(fused, data, config, validation);
}

std::vector<double> late_fuse_predict(const std::vector<std::vector<double>>& probs_per_branch,
                                      const FusionWeights& w) {
  w.validate();
  if (probs_per_branch.size() != w.alphas.size()) {
    throw std::invalid_argument("late_fuse_predict: weight count differs from branch count");
  }
  const std::size_t c = probs_per_branch.front().size();
  std::vector<double> out(c, 0.0);
  for (std::size_t m = 0; m < probs_per_branch.size(); ++m) {
    if (probs_per_branch[m].size() != c) throw std::invalid_argument("late_fuse_predict: length mismatch");
    for (std::size_t k = 0; k < c; ++k) out[k] += w.alphas[m] * probs_per_branch[m][k];
  }
  return out;
}

std::vector<std::vector<double>> simplex_lattice(std::size_t n_branches, double step) {
  if (n_branches == 0) throw std::invalid_argument("simplex_lattice: no branches");
  const std::size_t n = lattice_divisions(step);
  std::vector<std::vector<double>> out;
  std::vector<std::size_t> counts(n_branches, 0);
  lattice_rec(0, n_branches, n, n, counts, out);
  return out;
}

GridSearchResult grid_search_weights(const BranchProbs& probs, const std::vector<int>& y_val, double step) {
  const auto [n, c] = check_probs(probs, y_val);
  GridSearchResult result;
  bool have_best = false;
  std::vector<int> pred(n);
  for (auto& alphas : simplex_lattice(probs.size(), step)) {
    const FusionWeights w{alphas};
    for (std::size_t i = 0; i < n; ++i) pred[i] = metrics::argmax(late_fuse_predict(sample_slice(probs, i), w));
    const auto m = metrics::classification_metrics(y_val, pred, static_cast<int>(c));
    GridCandidate cand{std::move(alphas), m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1};
    if (!have_best || cand.accuracy > result.best_metrics.accuracy) {
      result.best_metrics = cand;
      have_best = true;
    }
    result.trace.push_back(std::move(cand));
  }
  result.best.alphas = result.best_metrics.alphas;
  return result;
}

double entropy_gate(const std::vector<double>& probs) {
  if (probs.size() < 2) throw std::invalid_argument("entropy_gate: need at least two classes");
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  const double g = 1.0 - h / std::log(static_cast<double>(probs.size()));
  return std::clamp(g, 0.0, 1.0);
}

GatedOutput entropy_gated_fuse(const std::vector<std::vector<double>>& probs_per_branch,
                               const ClasswiseGateWeights& W) {
  W.validate();
  if (probs_per_branch.size() != W.n_branches()) throw std::invalid_argument("entropy_gated_fuse: branch count mismatch");
  const std::size_t c = W.n_classes();
  GatedOutput out;
  out.probs.assign(c, 0.0);
  for (std::size_t m = 0; m < probs_per_branch.size(); ++m) {
    const auto& p = probs_per_branch[m];
    if (p.size() != c) throw std::invalid_argument("entropy_gated_fuse: class count mismatch");
    const double g = entropy_gate(p);
    for (std::size_t k = 0; k < c; ++k) out.probs[k] += W.W[m][k] * g * p[k];
  }
  double total = 0.0;
  for (double s : out.probs) total += s;
  if (!(total > 0.0)) {
    out.probs.assign(c, 1.0 / static_cast<double>(c));
    out.uniform_fallback = true;
    return out;
  }
  for (double& s : out.probs) s /= total;
  return out;
}

std::vector<int> gated_predict(const BranchProbs& probs, const ClasswiseGateWeights& W) {
  const std::size_t n = probs.front().size();
  std::vector<int> pred(n);
  for (std::size_t i = 0; i < n; ++i) pred[i] = metrics::argmax(entropy_gated_fuse(sample_slice(probs, i), W).probs);
  return pred;
}

ClasswiseFit fit_classwise_weights(const BranchProbs& probs, const std::vector<int>& y_val, double step,
                                   std::size_t max_passes) {
  const auto [n, c] = check_probs(probs, y_val);
  const std::size_t m = probs.size();
  const auto lattice = simplex_lattice(m, step);

  ClasswiseFit fit;
  fit.weights.W.assign(m, std::vector<double>(c, 1.0 / static_cast<double>(m)));
  auto score = [&](const ClasswiseGateWeights& w) {
    return metrics::macro_f1(y_val, gated_predict(probs, w), static_cast<int>(c));
  };
  fit.val_macro_f1 = score(fit.weights);

  // Shared column first: per-class moves alone cannot escape optima where
  // several branches must be muted together.
  for (const auto& column : lattice) {
    ClasswiseGateWeights trial = fit.weights;
    for (std::size_t b = 0; b < m; ++b) trial.W[b].assign(c, column[b]);
    const double f1 = score(trial);
    if (f1 > fit.val_macro_f1) {
      fit.val_macro_f1 = f1;
      fit.weights = std::move(trial);
    }
  }

  for (std::size_t pass = 0; pass < max_passes; ++pass) {
    bool changed = false;
    for (std::size_t k = 0; k < c; ++k) {
      ClasswiseGateWeights trial = fit.weights;
      for (const auto& column : lattice) {
        for (std::size_t b = 0; b < m; ++b) trial.W[b][k] = column[b];
        const double f1 = score(trial);
        if (f1 > fit.val_macro_f1) {
          fit.val_macro_f1 = f1;
          for (std::size_t b = 0; b < m; ++b) fit.weights.W[b][k] = column[b];
          changed = true;
        }
      }
    }
    if (!changed) break;
  }
  return fit;
}

std::string weights_to_json(const FusionWeights& w) {
  return io::dump_json(nlohmann::json{{"alphas", w.alphas}});
}

std::string classwise_to_json(const ClasswiseGateWeights& w) {
  return io::dump_json(nlohmann::json{{"W", w.W}, {"gate_kind", "entropy"}});
}

std::string grid_trace_csv(const GridSearchResult& result) {
  std::string out;
  if (result.trace.empty()) return out;
  std::vector<std::string> header;
  for (std::size_t i = 0; i < result.trace.front().alphas.size(); ++i) header.push_back("alpha_" + std::to_string(i + 1));
  for (const char* h : {"accuracy", "precision", "recall", "f1"}) header.emplace_back(h);
  out += io::csv_row(header);
  for (const auto& cand : result.trace) {
    std::vector<std::string> row;
    for (double a : cand.alphas) row.push_back(io::format_double(a));
    for (double v : {cand.accuracy, cand.macro_precision, cand.macro_recall, cand.macro_f1}) {
      row.push_back(io::format_double(v));
    }
    out += io::csv_row(row);
  }
  return out;
}

}  // namespace ecgtrust::fusion

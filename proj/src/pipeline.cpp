#include "ecgtrust/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "ecgtrust/io.hpp"
#include "ecgtrust/metrics.hpp"
#include "ecgtrust/rng.hpp"
#include "ecgtrust/stats.hpp"

namespace ecgtrust::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "ecgtrust 0.1.0";

// Strict reader for one JSON object: every key must be claimed.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  const json* claim(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void number(const std::string& key, double& out) {
    if (const json* v = claim(key)) {
      if (!v->is_number()) throw ConfigError(where(key) + ": expected a number");
      out = v->get<double>();
    }
  }

  template <typename U>
  void unsigned_int(const std::string& key, U& out) {
    if (const json* v = claim(key)) {
      // Values built in code arrive as signed integers; parsed text as unsigned.
      const bool ok = v->is_number_unsigned() || (v->is_number_integer() && v->get<std::int64_t>() >= 0);
      if (!ok) throw ConfigError(where(key) + ": expected a non-negative integer");
      out = static_cast<U>(v->get<std::uint64_t>());
    }
  }

  void integer(const std::string& key, int& out) {
    if (const json* v = claim(key)) {
      if (!v->is_number_integer()) throw ConfigError(where(key) + ": expected an integer");
      out = v->get<int>();
    }
  }

  void boolean(const std::string& key, bool& out) {
    if (const json* v = claim(key)) {
      if (!v->is_boolean()) throw ConfigError(where(key) + ": expected true or false");
      out = v->get<bool>();
    }
  }

  void string(const std::string& key, std::string& out) {
    if (const json* v = claim(key)) {
      if (!v->is_string()) throw ConfigError(where(key) + ": expected a string");
      out = v->get<std::string>();
    }
  }

  void numbers(const std::string& key, std::vector<double>& out) {
    if (const json* v = claim(key)) {
      if (!v->is_array()) throw ConfigError(where(key) + ": expected an array of numbers");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_number()) throw ConfigError(where(key) + ": expected an array of numbers");
        out.push_back(e.get<double>());
      }
    }
  }

  void strings(const std::string& key, std::vector<std::string>& out) {
    if (const json* v = claim(key)) {
      if (!v->is_array()) throw ConfigError(where(key) + ": expected an array of strings");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_string()) throw ConfigError(where(key) + ": expected an array of strings");
        out.push_back(e.get<std::string>());
      }
    }
  }

  std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw ConfigError("unknown config key '" + where(item.key()) + "'");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_train(const json& j, const std::string& path, models::TrainConfig& t) {
  ObjectReader r(j, path);
  r.number("lr", t.lr);
  r.number("beta1", t.beta1);
  r.number("beta2", t.beta2);
  r.number("epsilon", t.epsilon);
  r.unsigned_int("batch", t.batch);
  r.unsigned_int("max_epochs", t.max_epochs);
  r.unsigned_int("patience", t.patience);
  r.number("val_fraction", t.val_fraction);
  r.numbers("class_weights", t.class_weights);
  r.finish();
}

json train_to_json(const models::TrainConfig& t) {
  return {{"lr", t.lr},           {"beta1", t.beta1},           {"beta2", t.beta2},
          {"epsilon", t.epsilon}, {"batch", t.batch},           {"max_epochs", t.max_epochs},
          {"patience", t.patience}, {"val_fraction", t.val_fraction}, {"class_weights", t.class_weights}};
}

void read_branch(const json& j, const std::string& path, BranchConfig& b) {
  ObjectReader r(j, path);
  if (const json* v = r.claim("kind")) {
    if (!v->is_string()) throw ConfigError(path + ".kind: expected a string");
    try {
      b.kind = models::parse_arch(v->get<std::string>());
    } catch (const std::exception& e) {
      throw ConfigError(path + ".kind: " + e.what());
    }
  }
  r.unsigned_int("latent", b.latent);
  if (const json* v = r.claim("train")) read_train(*v, path + ".train", b.train);
  r.finish();
}

json branch_to_json(const BranchConfig& b) {
  return {{"kind", std::string(models::arch_name(b.kind))}, {"latent", b.latent}, {"train", train_to_json(b.train)}};
}

template <typename F>
void wrap_validation(const std::string& what, F&& f) {
  try {
    f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

std::string record_stem(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "rec_%04zu", i);
  return buf;
}

std::string mask_string(const Mask& m) {
  std::string s(m.size(), '0');
  for (std::size_t i = 0; i < m.size(); ++i) s[i] = m[i] ? '1' : '0';
  return s;
}

Mask parse_mask(const std::string& s) {
  Mask m(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) m[i] = s[i] == '1' ? 1 : 0;
  return m;
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw std::runtime_error("unknown split '" + s + "'");
}

void require_finite(std::span<const double> v, const std::string& what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericalFailure("non-finite value in " + what);
  }
}

void require_finite_net(const models::MicroNet& net, const std::string& what) {
  require_finite(net.params(), what + " parameters");
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

void RunConfig::validate() const {
  if (data.n_per_class < 1) throw ConfigError("data.n_per_class must be >= 1");
  if (!(data.fs >= 100.0)) throw ConfigError("data.fs must be >= 100");
  if (data.n_beats < 1) throw ConfigError("data.n_beats must be >= 1");
  if (data.class_ratio.size() != static_cast<std::size_t>(kNumClasses)) {
    throw ConfigError("data.class_ratio needs one entry per class");
  }
  for (double r : data.class_ratio) {
    if (!(r > 0.0 && r <= 1.0)) throw ConfigError("data.class_ratio entries must lie in (0, 1]");
  }
  if (data.n_freq_bins < 1 || data.time_length < 2 * data.n_freq_bins) {
    throw ConfigError("data.time_length must be >= 2 * data.n_freq_bins");
  }
  if (data.scalogram_size < 8) throw ConfigError("data.scalogram_size must be >= 8");
  wrap_validation("filter", [&] { filter.validate(data.fs); });
  if (denoise.wavelet_levels < 1) throw ConfigError("denoise.wavelet_levels must be >= 1");
  if (!(denoise.threshold >= 0.0)) throw ConfigError("denoise.threshold must be >= 0");
  if (data.time_length < (std::size_t{1} << denoise.wavelet_levels)) {
    throw ConfigError("denoise.wavelet_levels too deep for data.time_length");
  }
  if (balance.method != "adasyn" && balance.method != "smote" && balance.method != "none") {
    throw ConfigError("balance.method must be adasyn, smote or none");
  }
  if (balance.k < 1) throw ConfigError("balance.k must be >= 1");
  wrap_validation("models.time.train", [&] { models.time.train.validate(); });
  wrap_validation("models.freq.train", [&] { models.freq.train.validate(); });
  wrap_validation("models.scalogram.train", [&] { models.scalogram.train.validate(); });
  wrap_validation("models.early.train", [&] { models.early.train.validate(); });
  wrap_validation("fusion.fine_tune", [&] { fusion.fine_tune.validate(); });
  for (const auto& s : fusion.strategies) {
    if (s != "early" && s != "intermediate" && s != "late" && s != "classwise") {
      throw ConfigError("fusion.strategies: unknown strategy '" + s + "'");
    }
  }
  if (!(fusion.grid_step > 0.0 && fusion.grid_step <= 1.0)) throw ConfigError("fusion.grid_step must lie in (0, 1]");
  wrap_validation("fusion.grid_step", [&] { fusion::simplex_lattice(2, fusion.grid_step); });
  for (const auto& a : attacks) wrap_validation("attacks", [&] { a.validate(); });
  if (!(noise.wander_hz > 0.0) || !(noise.muscle_lo_hz > 0.0) || !(noise.muscle_hi_hz > noise.muscle_lo_hz) ||
      !(noise.muscle_hi_hz < data.fs / 2.0)) {
    throw ConfigError("noise: frequencies must be positive, ordered and below fs/2");
  }
  if (!(noise.wander_mv >= 0.0) || !(noise.muscle_mv >= 0.0)) throw ConfigError("noise: amplitudes must be >= 0");
  if (!(explain.saliency_sigma >= 0.0)) throw ConfigError("explain.saliency_sigma must be >= 0");
  if (explain.window < 1 || explain.window > data.time_length) {
    throw ConfigError("explain.window must lie in [1, data.time_length]");
  }
  if (explain.n_perm < 100) throw ConfigError("explain.n_perm must be >= 100");
  if (explain.n_boot < 1) throw ConfigError("explain.n_boot must be >= 1");
  if (!(explain.k_percent > 0.0 && explain.k_percent <= 100.0)) throw ConfigError("explain.k_percent must lie in (0, 100]");
  if (explain.ig_steps < 1) throw ConfigError("explain.ig_steps must be >= 1");
  wrap_validation("eat", [&] { eat.validate(); });
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  ObjectReader r(j, "");
  r.unsigned_int("seed", c.seed);
  if (const json* v = r.claim("data")) {
    ObjectReader d(*v, "data");
    d.unsigned_int("n_per_class", c.data.n_per_class);
    d.number("fs", c.data.fs);
    d.integer("n_beats", c.data.n_beats);
    d.numbers("class_ratio", c.data.class_ratio);
    d.unsigned_int("time_length", c.data.time_length);
    d.unsigned_int("n_freq_bins", c.data.n_freq_bins);
    d.unsigned_int("scalogram_size", c.data.scalogram_size);
    d.finish();
  }
  if (const json* v = r.claim("filter")) {
    ObjectReader f(*v, "filter");
    f.number("lo_hz", c.filter.lo_hz);
    f.number("hi_hz", c.filter.hi_hz);
    f.integer("order", c.filter.order);
    f.boolean("zero_phase", c.filter.zero_phase);
    f.finish();
  }
  if (const json* v = r.claim("denoise")) {
    ObjectReader d(*v, "denoise");
    d.integer("wavelet_levels", c.denoise.wavelet_levels);
    d.number("threshold", c.denoise.threshold);
    d.finish();
  }
  if (const json* v = r.claim("balance")) {
    ObjectReader b(*v, "balance");
    b.string("method", c.balance.method);
    b.unsigned_int("k", c.balance.k);
    b.finish();
  }
  if (const json* v = r.claim("models")) {
    ObjectReader m(*v, "models");
    if (const json* b = m.claim("time")) read_branch(*b, "models.time", c.models.time);
    if (const json* b = m.claim("freq")) read_branch(*b, "models.freq", c.models.freq);
    if (const json* b = m.claim("scalogram")) read_branch(*b, "models.scalogram", c.models.scalogram);
    if (const json* b = m.claim("early")) read_branch(*b, "models.early", c.models.early);
    m.finish();
  }
  if (const json* v = r.claim("fusion")) {
    ObjectReader f(*v, "fusion");
    f.strings("strategies", c.fusion.strategies);
    f.number("grid_step", c.fusion.grid_step);
    if (const json* t = f.claim("fine_tune")) read_train(*t, "fusion.fine_tune", c.fusion.fine_tune);
    f.finish();
  }
  if (const json* v = r.claim("attacks")) {
    if (!v->is_array()) throw ConfigError("attacks: expected an array");
    c.attacks.clear();
    for (std::size_t i = 0; i < v->size(); ++i) {
      ObjectReader a((*v)[i], "attacks[" + std::to_string(i) + "]");
      explain::AttackSpec spec;
      std::string kind = explain::attack_name(spec.kind);
      a.string("kind", kind);
      try {
        spec.kind = explain::parse_attack(kind);
      } catch (const std::exception& e) {
        throw ConfigError(a.where("kind") + ": " + e.what());
      }
      a.number("epsilon", spec.epsilon);
      a.unsigned_int("steps", spec.steps);
      a.number("step_size", spec.step_size);
      a.finish();
      c.attacks.push_back(spec);
    }
  }
  if (const json* v = r.claim("noise")) {
    ObjectReader n(*v, "noise");
    n.number("gaussian_snr_db", c.noise.gaussian_snr_db);
    n.number("wander_hz", c.noise.wander_hz);
    n.number("wander_mv", c.noise.wander_mv);
    n.number("muscle_lo_hz", c.noise.muscle_lo_hz);
    n.number("muscle_hi_hz", c.noise.muscle_hi_hz);
    n.number("muscle_mv", c.noise.muscle_mv);
    n.finish();
  }
  if (const json* v = r.claim("explain")) {
    ObjectReader e(*v, "explain");
    e.number("saliency_sigma", c.explain.saliency_sigma);
    std::string target = c.explain.saliency_target == models::GradOf::Logit ? "logit" : "log_prob";
    e.string("saliency_target", target);
    if (target == "logit") {
      c.explain.saliency_target = models::GradOf::Logit;
    } else if (target == "log_prob") {
      c.explain.saliency_target = models::GradOf::LogProb;
    } else {
      throw ConfigError("explain.saliency_target must be \"logit\" or \"log_prob\"");
    }
    e.unsigned_int("window", c.explain.window);
    e.unsigned_int("n_perm", c.explain.n_perm);
    e.unsigned_int("n_boot", c.explain.n_boot);
    e.number("k_percent", c.explain.k_percent);
    e.unsigned_int("ig_steps", c.explain.ig_steps);
    e.finish();
  }
  if (const json* v = r.claim("eat")) {
    if (!v->is_object()) throw ConfigError("eat: expected an object");
    try {
      c.eat = trust::thresholds_from_json(*v);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("eat: ") + e.what());
    }
  }
  r.string("output_dir", c.output_dir);
  r.finish();
  c.validate();
  return c;
}

json config_to_json(const RunConfig& c) {
  json attacks = json::array();
  for (const auto& a : c.attacks) {
    attacks.push_back(
        {{"kind", explain::attack_name(a.kind)}, {"epsilon", a.epsilon}, {"steps", a.steps}, {"step_size", a.step_size}});
  }
  return {{"seed", c.seed},
          {"data",
           {{"n_per_class", c.data.n_per_class},
            {"fs", c.data.fs},
            {"n_beats", c.data.n_beats},
            {"class_ratio", c.data.class_ratio},
            {"time_length", c.data.time_length},
            {"n_freq_bins", c.data.n_freq_bins},
            {"scalogram_size", c.data.scalogram_size}}},
          {"filter",
           {{"lo_hz", c.filter.lo_hz},
            {"hi_hz", c.filter.hi_hz},
            {"order", c.filter.order},
            {"zero_phase", c.filter.zero_phase}}},
          {"denoise", {{"wavelet_levels", c.denoise.wavelet_levels}, {"threshold", c.denoise.threshold}}},
          {"balance", {{"method", c.balance.method}, {"k", c.balance.k}}},
          {"models",
           {{"time", branch_to_json(c.models.time)},
            {"freq", branch_to_json(c.models.freq)},
            {"scalogram", branch_to_json(c.models.scalogram)},
            {"early", branch_to_json(c.models.early)}}},
          {"fusion",
           {{"strategies", c.fusion.strategies},
            {"grid_step", c.fusion.grid_step},
            {"fine_tune", train_to_json(c.fusion.fine_tune)}}},
          {"attacks", attacks},
          {"noise",
           {{"gaussian_snr_db", c.noise.gaussian_snr_db},
            {"wander_hz", c.noise.wander_hz},
            {"wander_mv", c.noise.wander_mv},
            {"muscle_lo_hz", c.noise.muscle_lo_hz},
            {"muscle_hi_hz", c.noise.muscle_hi_hz},
            {"muscle_mv", c.noise.muscle_mv}}},
          {"explain",
           {{"saliency_sigma", c.explain.saliency_sigma},
            {"saliency_target", c.explain.saliency_target == models::GradOf::Logit ? "logit" : "log_prob"},
            {"window", c.explain.window},
            {"n_perm", c.explain.n_perm},
            {"n_boot", c.explain.n_boot},
            {"k_percent", c.explain.k_percent},
            {"ig_steps", c.explain.ig_steps}}},
          {"eat", trust::thresholds_to_json(c.eat)},
          {"output_dir", c.output_dir}};
}

RunConfig load_config(const fs::path& path) {
  std::string text;
  try {
    text = io::read_text(path);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Data and features

std::string split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Corpus generate_corpus(const RunConfig& config) {
  if (config.data.n_per_class == 0) throw std::invalid_argument("generate_corpus: n_per_class must be >= 1");
  Corpus corpus;
  for (int c = 0; c < kNumClasses; ++c) {
    const auto n = static_cast<std::size_t>(
        std::max<long long>(1, std::llround(static_cast<double>(config.data.n_per_class) * config.data.class_ratio[c])));
    // Per-class shuffle, then 10% test, 10% validation, the rest training.
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(derive_seed(config.seed, "split", static_cast<std::uint64_t>(c)));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    const auto n_test = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n)));
    const auto n_val = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n)));
    std::vector<Split> split(n, Split::Train);
    for (std::size_t i = 0; i < n_test; ++i) split[order[i]] = Split::Test;
    for (std::size_t i = n_test; i < std::min(n, n_test + n_val); ++i) split[order[i]] = Split::Val;
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint64_t seed = derive_seed(config.seed, "record", corpus.records.size());
      corpus.records.push_back(
          signals::synth_ecg(static_cast<EcgClass>(c), config.data.fs, config.data.n_beats, seed));
      corpus.split.push_back(split[i]);
    }
  }
  return corpus;
}

std::vector<double> preprocess_signal(const signals::EcgRecord& record, const signals::FilterSpec& filter,
                                      const signals::DenoiseSpec& denoise) {
  const auto filtered = signals::bandpass(record.samples, record.fs, filter);
  return signals::dwt_denoise(filtered, denoise);
}

transforms::FeatureConfig feature_config(const RunConfig& config) {
  transforms::FeatureConfig fc;
  fc.time_length = config.data.time_length;
  fc.n_freq_bins = config.data.n_freq_bins;
  fc.cwt = transforms::CwtConfig::for_band(config.data.fs, 1.0, 40.0, 32, 1.0, config.data.scalogram_size);
  return fc;
}

std::vector<std::size_t> FeatureSet::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < split.size(); ++i) {
    if (split[i] == s) out.push_back(i);
  }
  return out;
}

FeatureSet featurize(const std::vector<signals::EcgRecord>& records, const std::vector<Split>& split,
                     const RunConfig& config, const signals::FilterSpec& filter) {
  if (records.size() != split.size()) throw std::invalid_argument("featurize: one split entry per record");
  const auto fc = feature_config(config);
  FeatureSet out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto pre = preprocess_signal(records[i], filter, config.denoise);
    out.bundles.push_back(transforms::make_features(pre, fc));
    out.labels.push_back(static_cast<int>(records[i].label));
    out.masks.push_back(transforms::fit_mask(records[i].stt_mask, config.data.time_length));
    out.split.push_back(split[i]);
  }
  return out;
}

TrainingSet select(const FeatureSet& features, Split s) {
  TrainingSet out;
  for (std::size_t i : features.indices(s)) {
    out.time.push_back(features.bundles[i].time_vec);
    out.freq.push_back(features.bundles[i].freq_vec);
    out.scalogram.push_back(features.bundles[i].scalogram.values);
    out.labels.push_back(features.labels[i]);
  }
  return out;
}

balance::LabeledMatrix to_matrix(const TrainingSet& set) {
  balance::LabeledMatrix m;
  for (std::size_t i = 0; i < set.size(); ++i) {
    std::vector<double> row = set.time[i];
    row.insert(row.end(), set.freq[i].begin(), set.freq[i].end());
    row.insert(row.end(), set.scalogram[i].begin(), set.scalogram[i].end());
    m.X.push_back(std::move(row));
    m.y.push_back(set.labels[i]);
  }
  return m;
}

TrainingSet from_matrix(const balance::LabeledMatrix& m, std::size_t time_length, std::size_t n_freq_bins) {
  TrainingSet out;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto& row = m.X[i];
    if (row.size() <= time_length + n_freq_bins) throw std::invalid_argument("from_matrix: row too short");
    const auto t_end = row.begin() + static_cast<std::ptrdiff_t>(time_length);
    const auto f_end = t_end + static_cast<std::ptrdiff_t>(n_freq_bins);
    out.time.emplace_back(row.begin(), t_end);
    out.freq.emplace_back(t_end, f_end);
    out.scalogram.emplace_back(f_end, row.end());
    out.labels.push_back(m.y[i]);
  }
  return out;
}

balance::OversampleResult balance_training(const TrainingSet& train, const RunConfig& config) {
  const auto m = to_matrix(train);
  balance::OversampleOptions opt;
  opt.k = config.balance.k;
  opt.seed = derive_seed(config.seed, "balance");
  if (config.balance.method == "adasyn") return balance::adasyn(m, opt);
  if (config.balance.method == "smote") return balance::smote(m, opt);
  balance::OversampleResult r;
  r.data = m;
  r.report.method = "none";
  return r;
}

Plausibility plausibility(const balance::OversampleResult& balanced, std::size_t n_original) {
  Plausibility p;
  const auto& X = balanced.data.X;
  const auto& y = balanced.data.y;
  if (X.size() <= n_original) return p;
  p.n_synthetic = X.size() - n_original;
  std::map<int, std::vector<double>> means;
  std::map<int, std::size_t> counts;
  for (std::size_t i = 0; i < n_original; ++i) {
    auto& mu = means[y[i]];
    if (mu.empty()) mu.assign(X[i].size(), 0.0);
    for (std::size_t k = 0; k < X[i].size(); ++k) mu[k] += X[i][k];
    ++counts[y[i]];
  }
  for (auto& [label, mu] : means) {
    for (double& v : mu) v /= static_cast<double>(counts[label]);
  }
  std::vector<double> real;
  std::vector<double> synth;
  double cos_sum = 0.0;
  for (std::size_t i = 0; i < X.size(); ++i) {
    if (i < n_original) {
      real.insert(real.end(), X[i].begin(), X[i].end());
      continue;
    }
    synth.insert(synth.end(), X[i].begin(), X[i].end());
    cos_sum += balance::cosine_similarity(X[i], means.at(y[i]));
  }
  p.mean_cosine_to_class_mean = cos_sum / static_cast<double>(p.n_synthetic);
  p.kl_nats = balance::kl_divergence(real, synth, 64);
  return p;
}

models::Dataset make_dataset(const TrainingSet& set, ModelSlot slot) {
  models::Dataset d;
  d.labels = set.labels;
  d.inputs.reserve(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    switch (slot) {
      case ModelSlot::Time: d.inputs.push_back({set.time[i]}); break;
      case ModelSlot::Freq: d.inputs.push_back({set.freq[i]}); break;
      case ModelSlot::Scalogram: d.inputs.push_back({set.scalogram[i]}); break;
      case ModelSlot::Early: {
        std::vector<double> row = set.time[i];
        row.insert(row.end(), set.freq[i].begin(), set.freq[i].end());
        d.inputs.push_back({std::move(row)});
        break;
      }
      case ModelSlot::Intermediate: d.inputs.push_back({set.time[i], set.freq[i]}); break;
    }
  }
  return d;
}

namespace {

models::InputShape shape_for(const TrainingSet& set, ModelSlot slot) {
  switch (slot) {
    case ModelSlot::Time: return {1, set.time.front().size()};
    case ModelSlot::Freq: return {1, set.freq.front().size()};
    case ModelSlot::Scalogram: {
      const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(set.scalogram.front().size()))));
      return {side, side};
    }
    case ModelSlot::Early: return {1, set.time.front().size() + set.freq.front().size()};
    case ModelSlot::Intermediate: break;
  }
  throw std::invalid_argument("shape_for: fused models have two inputs");
}

models::MicroNet fit_branch(const BranchConfig& bc, ModelSlot slot, const TrainingSet& train, const TrainingSet& val,
                            std::uint64_t seed, const std::string& label) {
  if (train.size() == 0) throw std::invalid_argument("fit_branch: empty training set");
  models::MicroNet net = models::build_branch(bc.kind, shape_for(train, slot), bc.latent, kNumClasses,
                                              derive_seed(seed, "init." + label));
  const auto data = make_dataset(train, slot);
  models::calibrate_standardization(net, data.inputs);
  models::TrainConfig tc = bc.train;
  tc.seed = derive_seed(seed, "train." + label);
  auto result = models::train(std::move(net), data, tc, make_dataset(val, slot));
  require_finite_net(result.net, label);
  return std::move(result.net);
}

std::vector<std::vector<double>> proba(const models::MicroNet& net, const TrainingSet& set, ModelSlot slot) {
  return models::predict_proba(net, make_dataset(set, slot).inputs);
}

bool wants(const RunConfig& config, const std::string& strategy) {
  const auto& s = config.fusion.strategies;
  return std::find(s.begin(), s.end(), strategy) != s.end();
}

}  // namespace

BranchModels train_branches(const TrainingSet& train, const TrainingSet& val, const RunConfig& config) {
  return {fit_branch(config.models.time, ModelSlot::Time, train, val, config.seed, "time"),
          fit_branch(config.models.freq, ModelSlot::Freq, train, val, config.seed, "freq"),
          fit_branch(config.models.scalogram, ModelSlot::Scalogram, train, val, config.seed, "scalogram")};
}

FusionModels fit_fusion(const BranchModels& branches, const TrainingSet& train, const TrainingSet& val,
                        const RunConfig& config) {
  FusionModels out;
  if (wants(config, "early")) {
    out.early = fit_branch(config.models.early, ModelSlot::Early, train, val, config.seed, "early");
  }
  if (wants(config, "intermediate")) {
    models::TrainConfig tc = config.fusion.fine_tune;
    tc.seed = derive_seed(config.seed, "train.intermediate");
    auto r = fusion::intermediate_fuse(branches.time, branches.freq, make_dataset(train, ModelSlot::Intermediate), tc,
                                       make_dataset(val, ModelSlot::Intermediate));
    require_finite_net(r.net, "intermediate");
    out.intermediate = std::move(r.net);
  }
  if (wants(config, "late") || wants(config, "classwise")) {
    const fusion::BranchProbs probs = {proba(branches.time, val, ModelSlot::Time),
                                       proba(branches.freq, val, ModelSlot::Freq),
                                       proba(branches.scalogram, val, ModelSlot::Scalogram)};
    if (wants(config, "late")) out.late = fusion::grid_search_weights(probs, val.labels, config.fusion.grid_step);
    if (wants(config, "classwise")) {
      out.classwise = fusion::fit_classwise_weights(probs, val.labels, config.fusion.grid_step);
    }
  }
  return out;
}

std::map<std::string, std::vector<int>> predict_all(const BranchModels& branches, const FusionModels& fused,
                                                    const TrainingSet& test) {
  std::map<std::string, std::vector<int>> out;
  const fusion::BranchProbs probs = {proba(branches.time, test, ModelSlot::Time),
                                     proba(branches.freq, test, ModelSlot::Freq),
                                     proba(branches.scalogram, test, ModelSlot::Scalogram)};
  const char* names[] = {"time", "freq", "scalogram"};
  for (std::size_t b = 0; b < 3; ++b) {
    auto& p = out[names[b]];
    for (const auto& row : probs[b]) p.push_back(metrics::argmax(row));
  }
  if (fused.early) out["early"] = models::predict(*fused.early, make_dataset(test, ModelSlot::Early).inputs);
  if (fused.intermediate) {
    out["intermediate"] = models::predict(*fused.intermediate, make_dataset(test, ModelSlot::Intermediate).inputs);
  }
  if (fused.late) {
    auto& p = out["late"];
    for (std::size_t i = 0; i < test.size(); ++i) {
      p.push_back(metrics::argmax(fusion::late_fuse_predict({probs[0][i], probs[1][i], probs[2][i]}, fused.late->best)));
    }
  }
  if (fused.classwise) out["classwise"] = fusion::gated_predict(probs, fused.classwise->weights);
  return out;
}

std::vector<EffectSize> effect_sizes(const std::map<std::string, std::vector<int>>& predictions,
                                     const std::vector<int>& labels, const std::string& reference,
                                     std::size_t n_boot, std::uint64_t seed) {
  const auto ref = predictions.find(reference);
  if (ref == predictions.end()) throw std::invalid_argument("effect_sizes: no predictions for " + reference);
  const std::size_t n = labels.size();
  if (n == 0 || n_boot < 2) throw std::invalid_argument("effect_sizes: need samples and >= 2 resamples");
  // One shared set of resample indices keeps the comparison paired.
  std::vector<std::vector<std::size_t>> resamples(n_boot, std::vector<std::size_t>(n));
  const Rng base(seed);
  for (std::size_t r = 0; r < n_boot; ++r) {
    Rng rng = base.fork(r);
    for (auto& idx : resamples[r]) idx = rng.below(n);
  }
  auto replicate_f1 = [&](const std::vector<int>& pred) {
    std::vector<double> out(n_boot);
    std::vector<int> yt(n);
    std::vector<int> yp(n);
    for (std::size_t r = 0; r < n_boot; ++r) {
      for (std::size_t i = 0; i < n; ++i) {
        yt[i] = labels[resamples[r][i]];
        yp[i] = pred[resamples[r][i]];
      }
      out[r] = metrics::macro_f1(yt, yp, kNumClasses);
    }
    return out;
  };
  const auto ref_f1 = replicate_f1(ref->second);
  std::vector<EffectSize> out;
  for (const auto& [name, pred] : predictions) {
    if (name == reference) continue;
    const auto other_f1 = replicate_f1(pred);
    EffectSize e;
    e.other = name;
    try {
      e.cohens_d = trust::cohens_d(ref_f1, other_f1);
    } catch (const std::domain_error&) {
      e.cohens_d = 0.0;
    }
    std::vector<double> diff(n_boot);
    for (std::size_t r = 0; r < n_boot; ++r) diff[r] = ref_f1[r] - other_f1[r];
    std::sort(diff.begin(), diff.end());
    e.diff_ci_low = trust::quantile_sorted(diff, 0.025);
    e.diff_ci_high = trust::quantile_sorted(diff, 0.975);
    out.push_back(e);
  }
  return out;
}

std::vector<NoiseResult> noise_robustness(const models::MicroNet& fused, const std::vector<signals::EcgRecord>& test,
                                          const RunConfig& config) {
  if (test.empty()) throw std::invalid_argument("noise_robustness: no test records");
  const std::vector<Split> split(test.size(), Split::Test);
  auto score = [&](const std::vector<signals::EcgRecord>& recs) {
    const auto set = select(featurize(recs, split, config, config.filter), Split::Test);
    const auto pred = models::predict(fused, make_dataset(set, ModelSlot::Intermediate).inputs);
    return metrics::macro_f1(set.labels, pred, kNumClasses);
  };
  const double clean = score(test);
  std::vector<NoiseResult> out;
  const std::pair<signals::NoiseKind, const char*> kinds[] = {{signals::NoiseKind::Gaussian, "gaussian"},
                                                             {signals::NoiseKind::BaselineWander, "baseline_wander"},
                                                             {signals::NoiseKind::Muscle, "muscle"}};
  for (std::size_t k = 0; k < 3; ++k) {
    std::vector<signals::EcgRecord> noisy;
    for (std::size_t i = 0; i < test.size(); ++i) {
      signals::NoiseSpec spec;
      spec.kind = kinds[k].first;
      spec.snr_db = config.noise.gaussian_snr_db;
      spec.wander_hz = config.noise.wander_hz;
      spec.band_lo_hz = config.noise.muscle_lo_hz;
      spec.band_hi_hz = config.noise.muscle_hi_hz;
      spec.amplitude = spec.kind == signals::NoiseKind::Gaussian        ? 1.0
                       : spec.kind == signals::NoiseKind::BaselineWander ? config.noise.wander_mv
                                                                          : config.noise.muscle_mv;
      spec.seed = derive_seed(config.seed, std::string("noise.") + kinds[k].second, i);
      noisy.push_back(signals::inject_noise(test[i], spec));
    }
    NoiseResult r;
    r.kind = kinds[k].second;
    r.clean_f1 = clean;
    r.noisy_f1 = score(noisy);
    r.delta_pp = 100.0 * (r.noisy_f1 - clean);
    out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Explanations and certification

std::vector<std::vector<double>> saliency_maps(const models::MicroNet& net, const std::vector<models::ModelInput>& xs,
                                               double sigma, models::GradOf of) {
  std::vector<std::vector<double>> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(explain::saliency_predicted(net, x, 0, sigma, of).values);
  return out;
}

trust::AlignmentReport alignment_for(const models::MicroNet& net, const TrainingSet& test,
                                     const std::vector<Mask>& masks, const RunConfig& config) {
  const auto data = make_dataset(test, ModelSlot::Intermediate);
  trust::AlignmentOptions opt;
  opt.window = config.explain.window;
  opt.n_perm = config.explain.n_perm;
  opt.k_percent = config.explain.k_percent;
  opt.n_boot = config.explain.n_boot;
  opt.seed = derive_seed(config.seed, "alignment");
  return trust::alignment_report(test.time, saliency_maps(net, data.inputs, config.explain.saliency_sigma, config.explain.saliency_target), masks, opt);
}

std::vector<explain::AttackReport> run_attacks(const models::MicroNet& fused, const TrainingSet& test,
                                               const std::vector<Mask>& masks, const RunConfig& config) {
  const auto data = make_dataset(test, ModelSlot::Intermediate);
  std::vector<explain::AttackReport> out;
  for (const auto& spec : config.attacks) {
    out.push_back(explain::attack_report(fused, data, masks, 0, spec, config.explain.saliency_sigma,
                                         config.explain.k_percent, config.explain.saliency_target));
  }
  return out;
}

CertifyResult certify(const models::MicroNet& fused, const BranchModels& branches, const TrainingSet& train,
                      const TrainingSet& test, const std::vector<Mask>& test_masks,
                      const std::vector<explain::AttackReport>& attacks, const RunConfig& config) {
  (void)branches;
  CertifyResult r;
  const auto data = make_dataset(test, ModelSlot::Intermediate);
  const auto& ex = config.explain;
  r.randomized = explain::sanity_randomized_weights(fused, data.inputs, 0, derive_seed(config.seed, "sanity.randomized"),
                                                    ex.n_perm, ex.saliency_sigma, ex.saliency_target);
  models::TrainConfig tc = config.models.time.train;
  tc.seed = derive_seed(config.seed, "sanity.shuffled.train");
  r.shuffled = explain::sanity_shuffled_labels(fused, make_dataset(train, ModelSlot::Intermediate), data, test_masks, 0,
                                               tc, derive_seed(config.seed, "sanity.shuffled"), ex.window, ex.n_perm,
                                               ex.saliency_sigma, ex.saliency_target);
  r.sanity.randomized_p = r.randomized.p_value;
  r.sanity.randomized_mean_cosine = r.randomized.mean_cosine;
  r.sanity.shuffled_within_band = r.shuffled.within_band;
  r.sanity.shuffled_val_accuracy = r.shuffled.val_accuracy;
  r.sanity.shuffled_alignment_p = r.shuffled.alignment_p;

  r.alignment = alignment_for(fused, test, test_masks, config);

  const auto classes = models::predict(fused, data.inputs);
  r.branch = trust::branch_similarity(fused, test.time, classes, test_masks,
                                      {trust::InputView::Time, trust::InputView::FftFeatures}, ex.ig_steps,
                                      config.data.n_freq_bins);

  trust::EatInputs in;
  in.sanity = r.sanity;
  in.alignment = r.alignment;
  in.attacks = attacks;
  in.branch_similarity = r.branch.median;
  in.thresholds = config.eat;
  r.verdict = trust::certify_eat(in);
  return r;
}

// ---------------------------------------------------------------------------
// Stages and artifacts

namespace {

class Manifest {
 public:
  explicit Manifest(const RunConfig& config) : dir_(config.output_dir), path_(dir_ / "manifest.json") {
    json c = config_to_json(config);
    c.erase("output_dir");
    config_hash_ = io::content_hash(io::dump_json(c));
    if (fs::exists(path_)) {
      try {
        doc_ = io::read_json(path_);
      } catch (const std::exception& e) {
        throw MissingPrerequisite("gen", "unreadable manifest " + path_.string() + ": " + e.what());
      }
    }
    if (!doc_.is_object()) doc_ = json::object();
    if (!doc_.contains("stages")) doc_["stages"] = json::object();
  }

  const fs::path& dir() const { return dir_; }
  fs::path path(const std::string& rel) const { return dir_ / rel; }

  /// Like path(), creating the parent directory for a file about to be written.
  fs::path output(const std::string& rel) const {
    const fs::path p = dir_ / rel;
    fs::create_directories(p.parent_path());
    return p;
  }

  /// Throws MissingPrerequisite unless `stage` completed with this config
  /// and all its artifacts are on disk.
  void require(const std::string& stage, const std::string& needed_by) const {
    const auto& stages = doc_["stages"];
    if (!stages.contains(stage)) {
      throw MissingPrerequisite(stage, "'" + needed_by + "' needs the artifacts of '" + stage + "'; run '" + stage +
                                           "' first");
    }
    const auto& entry = stages[stage];
    if (entry.value("config_hash", std::string()) != config_hash_) {
      throw MissingPrerequisite(stage, "artifacts of '" + stage + "' were produced with a different config; rerun '" +
                                           stage + "'");
    }
    for (const auto& a : entry["artifacts"]) {
      if (!fs::exists(dir_ / a.get<std::string>())) {
        throw MissingPrerequisite(stage, "artifact " + a.get<std::string>() + " of '" + stage + "' is missing; rerun '" +
                                             stage + "'");
      }
    }
  }

  /// Artifacts listed for `stage` that are not on disk (all of them when the
  /// stage never ran).
  std::vector<std::string> missing(const std::string& stage, const std::vector<std::string>& expected) const {
    std::vector<std::string> out;
    const auto& stages = doc_["stages"];
    if (!stages.contains(stage)) return expected;
    for (const auto& a : expected) {
      if (!fs::exists(dir_ / a)) out.push_back(a);
    }
    return out;
  }

  void record(const std::string& stage, const std::vector<std::string>& artifacts, double seconds) {
    doc_["config_hash"] = config_hash_;
    doc_["version"] = kVersion;
    doc_["stages"][stage] = {{"artifacts", artifacts}, {"config_hash", config_hash_}, {"seconds", seconds}};
    io::write_text(path_, io::dump_json(doc_));
  }

  void reset() { doc_ = {{"stages", json::object()}}; }

 private:
  fs::path dir_;
  fs::path path_;
  json doc_;
  std::string config_hash_;
};

class Artifacts {
 public:
  explicit Artifacts(const Manifest& m) : m_(m) {}
  void text(const std::string& rel, std::string_view content) {
    io::write_text(m_.path(rel), content);
    list_.push_back(rel);
  }
  void json_file(const std::string& rel, const json& j) { text(rel, io::dump_json(j)); }
  void note(const std::string& rel) { list_.push_back(rel); }
  const std::vector<std::string>& list() const { return list_; }

 private:
  const Manifest& m_;
  std::vector<std::string> list_;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct GenIndex {
  std::vector<int> labels;
  std::vector<Split> split;
};

GenIndex read_gen_index(const Manifest& m) {
  const json j = io::read_json(m.path("data/splits.json"));
  GenIndex g;
  g.labels = j.at("labels").get<std::vector<int>>();
  for (const auto& s : j.at("split")) g.split.push_back(parse_split(s.get<std::string>()));
  return g;
}

std::vector<signals::EcgRecord> read_records(const Manifest& m, const GenIndex& g, std::optional<Split> only) {
  std::vector<signals::EcgRecord> out;
  for (std::size_t i = 0; i < g.split.size(); ++i) {
    if (only && g.split[i] != *only) continue;
    out.push_back(signals::load_record(m.path("data/records/" + record_stem(i) + ".csv")));
  }
  return out;
}

FeatureSet read_features(const Manifest& m) {
  const json idx = io::read_json(m.path("features/index.json"));
  FeatureSet f;
  f.labels = idx.at("labels").get<std::vector<int>>();
  for (const auto& s : idx.at("split")) f.split.push_back(parse_split(s.get<std::string>()));
  for (const auto& s : idx.at("masks")) f.masks.push_back(parse_mask(s.get<std::string>()));
  for (std::size_t i = 0; i < f.labels.size(); ++i) {
    f.bundles.push_back(transforms::load_bundle(m.path("features/" + record_stem(i))));
  }
  return f;
}

std::vector<Mask> masks_of(const FeatureSet& f, Split s) {
  std::vector<Mask> out;
  for (std::size_t i : f.indices(s)) out.push_back(f.masks[i]);
  return out;
}

BranchModels read_branches(const Manifest& m) {
  return {models::load_params(m.path("models/time.json")), models::load_params(m.path("models/freq.json")),
          models::load_params(m.path("models/scalogram.json"))};
}

json metrics_to_json(const metrics::ClassificationMetrics& c) {
  return {{"accuracy", c.accuracy},
          {"macro_precision", c.macro_precision},
          {"macro_recall", c.macro_recall},
          {"macro_f1", c.macro_f1},
          {"weighted_precision", c.weighted_precision},
          {"weighted_recall", c.weighted_recall},
          {"weighted_f1", c.weighted_f1}};
}

std::string fmt(double v) { return io::format_double(v); }

void stage_gen(const RunConfig& config, Manifest& manifest) {
  const auto t0 = Clock::now();
  const Corpus corpus = generate_corpus(config);
  manifest.reset();
  Artifacts out(manifest);
  json labels = json::array();
  json split = json::array();
  for (std::size_t i = 0; i < corpus.records.size(); ++i) {
    const std::string rel = "data/records/" + record_stem(i) + ".csv";
    signals::save_record(corpus.records[i], manifest.output(rel));
    out.note(rel);
    out.note("data/records/" + signals::sidecar_path(fs::path(rel).filename()).string());
    labels.push_back(static_cast<int>(corpus.records[i].label));
    split.push_back(split_name(corpus.split[i]));
  }
  json counts = json::object();
  for (Split s : {Split::Train, Split::Val, Split::Test}) {
    json per_class = json::array();
    for (int c = 0; c < kNumClasses; ++c) {
      std::size_t n = 0;
      for (std::size_t i = 0; i < corpus.records.size(); ++i) {
        n += corpus.split[i] == s && static_cast<int>(corpus.records[i].label) == c ? 1 : 0;
      }
      per_class.push_back(n);
    }
    counts[split_name(s)] = per_class;
  }
  out.json_file("data/splits.json", {{"labels", labels}, {"split", split}, {"counts", counts}});
  out.json_file("data/config.json", config_to_json(config));
  manifest.record("gen", out.list(), seconds_since(t0));
}

void stage_preprocess(const RunConfig& config, Manifest& manifest) {
  manifest.require("gen", "preprocess");
  const auto t0 = Clock::now();
  const GenIndex g = read_gen_index(manifest);
  const auto records = read_records(manifest, g, std::nullopt);
  const FeatureSet f = featurize(records, g.split, config, config.filter);
  Artifacts out(manifest);
  json masks = json::array();
  json split = json::array();
  for (std::size_t i = 0; i < f.bundles.size(); ++i) {
    require_finite(f.bundles[i].time_vec, "features");
    const std::string stem = "features/" + record_stem(i);
    transforms::save_bundle(f.bundles[i], manifest.output(stem));
    out.note(stem + "_freq.csv");
    out.note(stem + "_scalogram.csv");
    out.note(stem + ".json");
    masks.push_back(mask_string(f.masks[i]));
    split.push_back(split_name(f.split[i]));
  }
  out.json_file("features/index.json", {{"labels", f.labels}, {"split", split}, {"masks", masks}});
  manifest.record("preprocess", out.list(), seconds_since(t0));
}

void stage_balance(const RunConfig& config, Manifest& manifest) {
  manifest.require("preprocess", "balance");
  const auto t0 = Clock::now();
  const FeatureSet f = read_features(manifest);
  const TrainingSet train = select(f, Split::Train);
  const auto balanced = balance_training(train, config);
  const Plausibility p = plausibility(balanced, train.size());
  Artifacts out(manifest);
  balance::save_matrix(balanced.data, manifest.output("balance/train_balanced.csv"));
  out.note("balance/train_balanced.csv");
  out.text("balance/report.json", balance::report_to_json(balanced.report));
  out.json_file("balance/plausibility.json", {{"mean_cosine_to_class_mean", p.mean_cosine_to_class_mean},
                                              {"kl_nats", p.kl_nats},
                                              {"n_synthetic", p.n_synthetic},
                                              {"n_original", train.size()}});
  manifest.record("balance", out.list(), seconds_since(t0));
}

void stage_train(const RunConfig& config, Manifest& manifest) {
  manifest.require("balance", "train");
  const auto t0 = Clock::now();
  const FeatureSet f = read_features(manifest);
  const TrainingSet train = from_matrix(balance::load_matrix(manifest.path("balance/train_balanced.csv")),
                                        config.data.time_length, config.data.n_freq_bins);
  const TrainingSet val = select(f, Split::Val);
  const BranchModels b = train_branches(train, val, config);
  Artifacts out(manifest);
  json val_metrics = json::object();
  const std::pair<const models::MicroNet*, ModelSlot> nets[] = {
      {&b.time, ModelSlot::Time}, {&b.freq, ModelSlot::Freq}, {&b.scalogram, ModelSlot::Scalogram}};
  const char* names[] = {"time", "freq", "scalogram"};
  for (std::size_t k = 0; k < 3; ++k) {
    const std::string rel = std::string("models/") + names[k] + ".json";
    out.text(rel, models::params_to_json(*nets[k].first));
    const auto pred = models::predict(*nets[k].first, make_dataset(val, nets[k].second).inputs);
    val_metrics[names[k]] = metrics_to_json(metrics::classification_metrics(val.labels, pred, kNumClasses));
  }
  out.json_file("train/val_metrics.json", val_metrics);
  manifest.record("train", out.list(), seconds_since(t0));
}

void stage_fuse(const RunConfig& config, Manifest& manifest) {
  manifest.require("train", "fuse");
  const auto t0 = Clock::now();
  const FeatureSet f = read_features(manifest);
  const TrainingSet train = from_matrix(balance::load_matrix(manifest.path("balance/train_balanced.csv")),
                                        config.data.time_length, config.data.n_freq_bins);
  const TrainingSet val = select(f, Split::Val);
  const TrainingSet test = select(f, Split::Test);
  const BranchModels b = read_branches(manifest);
  const FusionModels fm = fit_fusion(b, train, val, config);
  Artifacts out(manifest);
  if (fm.early) out.text("models/early.json", models::params_to_json(*fm.early));
  if (fm.intermediate) out.text("models/intermediate.json", models::params_to_json(*fm.intermediate));
  if (fm.late) {
    out.text("fusion/late_weights.json", fusion::weights_to_json(fm.late->best));
    out.text("fusion/grid_trace.csv", fusion::grid_trace_csv(*fm.late));
  }
  if (fm.classwise) out.text("fusion/classwise.json", fusion::classwise_to_json(fm.classwise->weights));

  const auto preds = predict_all(b, fm, test);
  json m = json::object();
  json p = json::object();
  for (const auto& [name, pred] : preds) {
    m[name] = metrics_to_json(metrics::classification_metrics(test.labels, pred, kNumClasses));
    p[name] = pred;
  }
  out.json_file("fusion/test_metrics.json", m);
  out.json_file("fusion/test_predictions.json", {{"labels", test.labels}, {"predictions", p}});
  if (preds.count("intermediate")) {
    json e = json::array();
    for (const auto& es : effect_sizes(preds, test.labels, "intermediate", 200, derive_seed(config.seed, "effect"))) {
      e.push_back({{"reference", "intermediate"},
                   {"other", es.other},
                   {"cohens_d", es.cohens_d},
                   {"f1_diff_ci_low", es.diff_ci_low},
                   {"f1_diff_ci_high", es.diff_ci_high}});
    }
    out.json_file("fusion/effect_sizes.json", e);
  }
  manifest.record("fuse", out.list(), seconds_since(t0));
}

models::MicroNet read_intermediate(const Manifest& m, const std::string& stage) {
  const fs::path p = m.path("models/intermediate.json");
  if (!fs::exists(p)) {
    throw MissingPrerequisite("fuse", "'" + stage + "' needs the intermediate-fused model; add \"intermediate\" to "
                                      "fusion.strategies and rerun 'fuse'");
  }
  return models::load_params(p);
}

void stage_attack(const RunConfig& config, Manifest& manifest) {
  manifest.require("fuse", "attack");
  const auto t0 = Clock::now();
  const FeatureSet f = read_features(manifest);
  const TrainingSet test = select(f, Split::Test);
  const auto fused = read_intermediate(manifest, "attack");
  const auto reports = run_attacks(fused, test, masks_of(f, Split::Test), config);
  const GenIndex g = read_gen_index(manifest);
  const auto noise = noise_robustness(fused, read_records(manifest, g, Split::Test), config);

  Artifacts out(manifest);
  json rj = json::array();
  std::string csv = io::csv_row({"model", "attack", "epsilon", "flip_rate", "delta_p_true", "saliency_cosine",
                                 "dice_at_k", "iou_at_k", "n"});
  for (const auto& r : reports) {
    rj.push_back(trust::attack_to_json(r));
    csv += io::csv_row({"intermediate", explain::attack_name(r.kind), fmt(r.epsilon), fmt(r.flip_rate),
                        fmt(r.delta_p_true), fmt(r.saliency_cosine), fmt(r.dice_at_k), fmt(r.iou_at_k),
                        std::to_string(r.n)});
  }
  out.json_file("attack/reports.json", rj);
  out.text("attack/adversarial.csv", csv);
  json nj = json::array();
  std::string ncsv = io::csv_row({"noise", "clean_f1", "noisy_f1", "delta_f1_pp"});
  for (const auto& r : noise) {
    nj.push_back({{"noise", r.kind}, {"clean_f1", r.clean_f1}, {"noisy_f1", r.noisy_f1}, {"delta_f1_pp", r.delta_pp}});
    ncsv += io::csv_row({r.kind, fmt(r.clean_f1), fmt(r.noisy_f1), fmt(r.delta_pp)});
  }
  out.json_file("attack/noise.json", nj);
  out.text("attack/noise.csv", ncsv);
  manifest.record("attack", out.list(), seconds_since(t0));
}

std::vector<explain::AttackReport> read_attack_reports(const Manifest& m) {
  std::vector<explain::AttackReport> out;
  for (const auto& j : io::read_json(m.path("attack/reports.json"))) {
    explain::AttackReport r;
    r.kind = explain::parse_attack(j.at("kind").get<std::string>());
    r.epsilon = j.at("epsilon").get<double>();
    r.flip_rate = j.at("flip_rate").get<double>();
    r.delta_p_true = j.at("delta_p_true").get<double>();
    r.saliency_cosine = j.at("saliency_cosine").get<double>();
    r.dice_at_k = j.at("dice_at_k").get<double>();
    r.iou_at_k = j.at("iou_at_k").get<double>();
    r.n = j.at("n").get<std::size_t>();
    out.push_back(r);
  }
  return out;
}

void stage_certify(const RunConfig& config, Manifest& manifest) {
  manifest.require("attack", "certify");
  const auto t0 = Clock::now();
  const FeatureSet f = read_features(manifest);
  const TrainingSet train = from_matrix(balance::load_matrix(manifest.path("balance/train_balanced.csv")),
                                        config.data.time_length, config.data.n_freq_bins);
  const TrainingSet test = select(f, Split::Test);
  const auto fused = read_intermediate(manifest, "certify");
  const auto attacks = read_attack_reports(manifest);
  CertifyResult r;
  try {
    r = certify(fused, read_branches(manifest), train, test, masks_of(f, Split::Test), attacks, config);
  } catch (const std::invalid_argument& e) {
    // A configured epsilon without a matching attack report.
    throw MissingPrerequisite("attack", std::string("certify: ") + e.what() + "; rerun 'attack'");
  }

  Artifacts out(manifest);
  out.json_file("certify/eat_verdict.json", trust::verdict_to_json(r.verdict));
  out.json_file("certify/sanity.json",
                {{"randomized",
                  {{"per_sample_cosine", r.randomized.per_sample},
                   {"mean_cosine", r.randomized.mean_cosine},
                   {"mean_abs_cosine", r.randomized.mean_abs_cosine},
                   {"p_value", r.randomized.p_value},
                   {"n_perm", r.randomized.n_perm}}},
                 {"shuffled",
                  {{"val_accuracy", r.shuffled.val_accuracy},
                   {"chance", r.shuffled.chance},
                   {"band_low", r.shuffled.band_low},
                   {"band_high", r.shuffled.band_high},
                   {"within_band", r.shuffled.within_band},
                   {"saliency_variance", r.shuffled.saliency_variance},
                   {"alignment_nmi", r.shuffled.alignment_nmi},
                   {"alignment_p", r.shuffled.alignment_p}}},
                 {"branch_similarity",
                  {{"median", r.branch.median}, {"per_sample", r.branch.per_sample}, {"skipped", r.branch.skipped}}}});
  const auto& a = r.alignment;
  std::string acsv = io::csv_row({"model", "metric", "value"});
  const std::pair<const char*, double> rows[] = {{"mi_nats", a.mi_nats},       {"windowed_nmi", a.windowed_nmi},
                                                 {"ami", a.ami},               {"dice_at_k", a.dice_at_k},
                                                 {"iou_at_k", a.iou_at_k},     {"kappa_at_k", a.kappa_at_k},
                                                 {"p_perm", a.p_perm},         {"ci_low", a.ci_low},
                                                 {"ci_high", a.ci_high}};
  for (const auto& [name, value] : rows) acsv += io::csv_row({"intermediate", name, fmt(value)});
  out.text("certify/alignment.csv", acsv);

  const auto& v = r.verdict;
  const auto& t = v.thresholds;
  std::string ecsv = io::csv_row({"criterion", "statistic", "value", "threshold", "pass"});
  auto row = [&](const char* c, const std::string& stat, double value, const std::string& thr, bool pass) {
    ecsv += io::csv_row({c, stat, fmt(value), thr, pass ? "PASS" : "FAIL"});
  };
  row("C1", "randomized_p", v.sanity.randomized_p, ">= " + fmt(t.alpha), v.sanity.randomized_p >= t.alpha);
  row("C1", "shuffled_val_accuracy", v.sanity.shuffled_val_accuracy,
      "in [" + fmt(r.shuffled.band_low) + ", " + fmt(r.shuffled.band_high) + "]", v.sanity.shuffled_within_band);
  row("C1", "shuffled_alignment_p", v.sanity.shuffled_alignment_p, ">= " + fmt(t.alpha),
      v.sanity.shuffled_alignment_p >= t.alpha);
  row("C2", "windowed_nmi", a.windowed_nmi, ">= " + fmt(t.tau), a.windowed_nmi >= t.tau);
  row("C2", "p_perm", a.p_perm, "<= " + fmt(t.alpha), a.p_perm <= t.alpha);
  row("C2", "ci_low", a.ci_low, "> 0", a.ci_low > 0.0);
  for (const auto& rep : v.attacks) {
    const bool in_e = std::any_of(t.epsilons.begin(), t.epsilons.end(),
                                  [&](double e) { return std::abs(e - rep.epsilon) <= 1e-12; });
    if (!in_e) continue;
    const std::string tag = explain::attack_name(rep.kind) + "@" + fmt(rep.epsilon);
    row("C3", tag + ".flip_rate", rep.flip_rate, "<= " + fmt(t.rho), rep.flip_rate <= t.rho);
    row("C3", tag + ".delta_p_true", rep.delta_p_true, "|.| <= " + fmt(t.gamma), std::abs(rep.delta_p_true) <= t.gamma);
    row("C3", tag + ".saliency_cosine", rep.saliency_cosine, ">= " + fmt(t.phi), rep.saliency_cosine >= t.phi);
  }
  row("C4", "branch_similarity", v.branch_similarity, ">= " + fmt(t.phi_arch), v.c4_architecture);
  out.text("certify/eat_summary.csv", ecsv);
  manifest.record("certify", out.list(), seconds_since(t0));
}

}  // namespace

void cmd_gen(const RunConfig& config) {
  config.validate();
  Manifest manifest(config);
  stage_gen(config, manifest);
}

void cmd_pipeline(const RunConfig& config, const std::vector<std::string>& stages) {
  config.validate();
  for (const auto& s : stages) {
    if (std::find(stage_order().begin(), stage_order().end(), s) == stage_order().end()) {
      throw ConfigError("unknown stage '" + s + "'");
    }
  }
  Manifest manifest(config);
  // Requested stages always run in pipeline order.
  for (const auto& s : stage_order()) {
    if (std::find(stages.begin(), stages.end(), s) == stages.end()) continue;
    if (s == "preprocess") stage_preprocess(config, manifest);
    if (s == "balance") stage_balance(config, manifest);
    if (s == "train") stage_train(config, manifest);
    if (s == "fuse") stage_fuse(config, manifest);
    if (s == "attack") stage_attack(config, manifest);
    if (s == "certify") stage_certify(config, manifest);
  }
}

void cmd_report(const RunConfig& config) {
  config.validate();
  Manifest manifest(config);
  const std::vector<std::pair<std::string, std::vector<std::string>>> needed = {
      {"fuse", {"fusion/test_metrics.json", "fusion/effect_sizes.json"}},
      {"attack", {"attack/reports.json", "attack/noise.json"}},
      {"certify", {"certify/eat_verdict.json"}}};
  std::vector<std::string> missing;
  std::string first_stage;
  for (const auto& [stage, files] : needed) {
    for (const auto& m : manifest.missing(stage, files)) {
      missing.push_back(stage + ": " + m);
      if (first_stage.empty()) first_stage = stage;
    }
  }
  if (!missing.empty()) {
    std::string msg = "report: incomplete manifest, missing artifacts:";
    for (const auto& m : missing) msg += "\n  " + m;
    throw MissingPrerequisite(first_stage, msg);
  }
  for (const auto& [stage, files] : needed) manifest.require(stage, "report");

  const json model_metrics = io::read_json(manifest.path("fusion/test_metrics.json"));
  const json effects = io::read_json(manifest.path("fusion/effect_sizes.json"));
  const json attacks = io::read_json(manifest.path("attack/reports.json"));
  const json noise = io::read_json(manifest.path("attack/noise.json"));
  const json verdict = io::read_json(manifest.path("certify/eat_verdict.json"));

  Artifacts out(manifest);
  out.json_file("report/summary.json", {{"models", model_metrics},
                                        {"effect_sizes", effects},
                                        {"noise_robustness", noise},
                                        {"attacks", attacks},
                                        {"eat", verdict}});

  std::string csv = io::csv_row({"model", "accuracy", "macro_precision", "macro_recall", "macro_f1",
                                 "weighted_precision", "weighted_recall", "weighted_f1"});
  for (const auto& [name, m] : model_metrics.items()) {
    csv += io::csv_row({name, fmt(m.at("accuracy").get<double>()), fmt(m.at("macro_precision").get<double>()),
                        fmt(m.at("macro_recall").get<double>()), fmt(m.at("macro_f1").get<double>()),
                        fmt(m.at("weighted_precision").get<double>()), fmt(m.at("weighted_recall").get<double>()),
                        fmt(m.at("weighted_f1").get<double>())});
  }
  out.text("report/summary.csv", csv);

  std::ostringstream txt;
  char line[256];
  txt << "Models (test split)\n";
  std::snprintf(line, sizeof(line), "  %-14s %9s %9s %9s\n", "model", "accuracy", "macro_f1", "wtd_f1");
  txt << line;
  for (const auto& [name, m] : model_metrics.items()) {
    std::snprintf(line, sizeof(line), "  %-14s %9.4f %9.4f %9.4f\n", name.c_str(), m.at("accuracy").get<double>(),
                  m.at("macro_f1").get<double>(), m.at("weighted_f1").get<double>());
    txt << line;
  }
  txt << "\nCohen's d of bootstrap macro-F1, intermediate vs\n";
  for (const auto& e : effects) {
    std::snprintf(line, sizeof(line), "  %-14s d = %8.3f  F1 diff 95%% CI [%.4f, %.4f]\n",
                  e.at("other").get<std::string>().c_str(), e.at("cohens_d").get<double>(),
                  e.at("f1_diff_ci_low").get<double>(), e.at("f1_diff_ci_high").get<double>());
    txt << line;
  }
  txt << "\nNoise robustness of the intermediate-fused model\n";
  for (const auto& n : noise) {
    std::snprintf(line, sizeof(line), "  %-16s F1 %.4f -> %.4f (%+.2f pp)\n", n.at("noise").get<std::string>().c_str(),
                  n.at("clean_f1").get<double>(), n.at("noisy_f1").get<double>(), n.at("delta_f1_pp").get<double>());
    txt << line;
  }
  txt << "\nST-T attacks on the intermediate-fused model\n";
  for (const auto& a : attacks) {
    std::snprintf(line, sizeof(line), "  %-9s eps %-6g flip %.4f  dp_true %+.4f  cos %.4f\n",
                  a.at("kind").get<std::string>().c_str(), a.at("epsilon").get<double>(),
                  a.at("flip_rate").get<double>(), a.at("delta_p_true").get<double>(),
                  a.at("saliency_cosine").get<double>());
    txt << line;
  }
  auto verdict_word = [](bool b) { return b ? "PASS" : "FAIL"; };
  txt << "\nEAT certification\n";
  txt << "  C1 sanity fidelity          " << verdict_word(verdict.at("c1_fidelity").at("pass").get<bool>()) << "\n";
  txt << "  C2 informational grounding  " << verdict_word(verdict.at("c2_dependence").at("pass").get<bool>()) << "\n";
  txt << "  C3 bounded robustness       " << verdict_word(verdict.at("c3_robustness").at("pass").get<bool>()) << "\n";
  txt << "  C4 branch faithfulness      " << verdict_word(verdict.at("c4_architecture").at("pass").get<bool>())
      << "\n";
  txt << "  overall                     " << verdict_word(verdict.at("overall").get<bool>()) << "\n";
  out.text("report/summary.txt", txt.str());
  manifest.record("report", out.list(), 0.0);
}

}  // namespace ecgtrust::pipeline

#include "ecgtrust/explain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ecgtrust/metrics.hpp"
#include "ecgtrust/rng.hpp"
#include "ecgtrust/stats.hpp"
#include "ecgtrust/trust.hpp"

namespace ecgtrust::explain {

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void check_slot(const models::ModelInput& x, std::size_t slot) {
  if (slot >= x.size()) throw std::invalid_argument("explain: input slot out of range");
}

void check_attack_args(const models::ModelInput& x, std::size_t slot, const Mask& mask, double epsilon) {
  check_slot(x, slot);
  if (!(epsilon >= 0.0)) throw std::invalid_argument("attack: epsilon must be >= 0");
  if (mask.size() != x[slot].size()) throw std::invalid_argument("attack: mask length must equal the input length");
}

std::vector<double> loss_gradient(const models::MicroNet& net, const models::ModelInput& x, std::size_t slot,
                                  std::size_t true_class) {
  return models::cross_entropy_grad(net, x, true_class, true, false).grads.input[slot];
}

std::size_t predicted_class(const models::MicroNet& net, const models::ModelInput& x) {
  return static_cast<std::size_t>(metrics::argmax(net.forward(x).probs));
}

}  // namespace

std::vector<double> gaussian_smooth(std::span<const double> v, double sigma) {
  if (!(sigma >= 0.0)) throw std::invalid_argument("gaussian_smooth: sigma must be >= 0");
  std::vector<double> out(v.begin(), v.end());
  if (sigma == 0.0 || v.empty()) return out;
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(4.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
    kernel[static_cast<std::size_t>(k + radius)] = std::exp(-0.5 * static_cast<double>(k * k) / (sigma * sigma));
  }
  const auto n = static_cast<std::ptrdiff_t>(v.size());
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    double acc = 0.0;
    double wsum = 0.0;
    for (std::ptrdiff_t k = std::max(-radius, -i); k <= std::min(radius, n - 1 - i); ++k) {
      const double w = kernel[static_cast<std::size_t>(k + radius)];
      acc += w * v[static_cast<std::size_t>(i + k)];
      wsum += w;
    }
    out[static_cast<std::size_t>(i)] = acc / wsum;
  }
  return out;
}

SaliencyMap make_saliency(std::span<const double> raw, std::size_t class_index, double sigma) {
  SaliencyMap map;
  map.class_index = class_index;
  map.smoothing_sigma = sigma;
  map.values = gaussian_smooth(raw, sigma);
  if (map.values.empty()) {
    map.degenerate = true;
    return map;
  }
  const auto [lo_it, hi_it] = std::minmax_element(map.values.begin(), map.values.end());
  const double lo = *lo_it;
  const double range = *hi_it - lo;
  if (!(range > 0.0) || !std::isfinite(range)) {
    std::fill(map.values.begin(), map.values.end(), 0.0);
    map.degenerate = true;
    return map;
  }
  for (double& v : map.values) v = (v - lo) / range;
  return map;
}

SaliencyMap saliency_grad(const models::MicroNet& net, const models::ModelInput& x, std::size_t slot,
                          std::size_t class_index, double sigma, models::GradOf of) {
  check_slot(x, slot);
  auto g = models::grad_input(net, x, class_index, of)[slot];
  for (double& v : g) v = std::abs(v);
  return make_saliency(g, class_index, sigma);
}

SaliencyMap saliency_predicted(const models::MicroNet& net, const models::ModelInput& x, std::size_t slot,
                               double sigma, models::GradOf of) {
  return saliency_grad(net, x, slot, predicted_class(net, x), sigma, of);
}

SaliencyMap smoothgrad(const models::MicroNet& net, const models::ModelInput& x, std::size_t slot,
                       std::size_t class_index, std::size_t n, double noise_sigma, std::uint64_t seed, double sigma,
                       models::GradOf of) {
  check_slot(x, slot);
  if (n < 1) throw std::invalid_argument("smoothgrad: n must be >= 1");
  if (!(noise_sigma >= 0.0)) throw std::invalid_argument("smoothgrad: noise_sigma must be >= 0");
  if (noise_sigma == 0.0) return saliency_grad(net, x, slot, class_index, sigma, of);
  Rng rng(seed);
  std::vector<double> acc(x[slot].size(), 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    models::ModelInput noisy = x;
    for (double& v : noisy[slot]) v += rng.normal(0.0, noise_sigma);
    const SaliencyMap m = saliency_grad(net, noisy, slot, class_index, sigma, of);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += m.values[i];
  }
  for (double& v : acc) v /= static_cast<double>(n);
  SaliencyMap out = make_saliency(acc, class_index, 0.0);
  out.smoothing_sigma = sigma;
  return out;
}

models::ModelInput integrated_gradients(const models::MicroNet& net, const models::ModelInput& x,
                                        const models::ModelInput& baseline, std::size_t class_index,
                                        std::size_t steps) {
  if (steps < 1) throw std::invalid_argument("integrated_gradients: steps must be >= 1");
  if (baseline.size() != x.size()) throw std::invalid_argument("integrated_gradients: baseline shape mismatch");
  for (std::size_t m = 0; m < x.size(); ++m) {
    if (baseline[m].size() != x[m].size()) throw std::invalid_argument("integrated_gradients: baseline shape mismatch");
  }
  models::ModelInput acc;
  for (const auto& xm : x) acc.emplace_back(xm.size(), 0.0);
  models::ModelInput point = x;
  for (std::size_t k = 0; k < steps; ++k) {
    const double a = (static_cast<double>(k) + 0.5) / static_cast<double>(steps);
    for (std::size_t m = 0; m < x.size(); ++m) {
      for (std::size_t i = 0; i < x[m].size(); ++i) point[m][i] = baseline[m][i] + a * (x[m][i] - baseline[m][i]);
    }
    const auto g = models::grad_input(net, point, class_index, models::GradOf::Logit);
    for (std::size_t m = 0; m < x.size(); ++m) {
      for (std::size_t i = 0; i < x[m].size(); ++i) acc[m][i] += g[m][i];
    }
  }
  for (std::size_t m = 0; m < x.size(); ++m) {
    for (std::size_t i = 0; i < x[m].size(); ++i) {
      acc[m][i] *= (x[m][i] - baseline[m][i]) / static_cast<double>(steps);
    }
  }
  return acc;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine: length mismatch");
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 && nb == 0.0) return 1.0;
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

RandomizedWeightsCheck saliency_association(const models::MicroNet& a, const models::MicroNet& b,
                                            const std::vector<models::ModelInput>& xs, std::size_t slot,
                                            std::uint64_t seed, std::size_t n_perm, double sigma,
                                            models::GradOf of) {
  if (xs.empty()) throw std::invalid_argument("saliency_association: empty set");
  if (n_perm < 100) throw std::invalid_argument("saliency_association: n_perm must be >= 100");
  std::vector<std::vector<double>> ma;
  std::vector<std::vector<double>> mb;
  RandomizedWeightsCheck out;
  for (const auto& x : xs) {
    const std::size_t cls = predicted_class(a, x);
    ma.push_back(saliency_grad(a, x, slot, cls, sigma, of).values);
    mb.push_back(saliency_grad(b, x, slot, cls, sigma, of).values);
    out.per_sample.push_back(cosine(ma.back(), mb.back()));
  }
  const double n = static_cast<double>(xs.size());
  for (double c : out.per_sample) {
    out.mean_cosine += c / n;
    out.mean_abs_cosine += std::abs(c) / n;
  }
  const Rng root(derive_seed(seed, "association-null"));
  std::size_t exceed = 0;
  std::vector<double> shifted;
  for (std::size_t p = 0; p < n_perm; ++p) {
    Rng rng = root.fork(p);
    double total = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const std::size_t len = mb[i].size();
      const std::size_t shift = len > 1 ? 1 + static_cast<std::size_t>(rng.below(len - 1)) : 0;
      shifted.assign(len, 0.0);
      for (std::size_t t = 0; t < len; ++t) shifted[(t + shift) % len] = mb[i][t];
      total += cosine(ma[i], shifted);
    }
    if (total / n >= out.mean_cosine) ++exceed;
  }
  out.p_value = static_cast<double>(1 + exceed) / static_cast<double>(1 + n_perm);
  out.n_perm = n_perm;
  return out;
}

RandomizedWeightsCheck sanity_randomized_weights(const models::MicroNet& trained,
                                                 const std::vector<models::ModelInput>& xs, std::size_t slot,
                                                 std::uint64_t seed, std::size_t n_perm, double sigma,
                                                 models::GradOf of) {
  const models::MicroNet randomized = models::randomize_weights(trained, derive_seed(seed, "randomize"));
  return saliency_association(trained, randomized, xs, slot, seed, n_perm, sigma, of);
}

ShuffledLabelCheck sanity_shuffled_labels(const models::MicroNet& init, const models::Dataset& train,
                                          const models::Dataset& val, const std::vector<Mask>& val_masks,
                                          std::size_t slot, const models::TrainConfig& config, std::uint64_t seed,
                                          std::size_t window, std::size_t n_perm, double sigma,
                                          models::GradOf of) {
  if (train.size() == 0 || val.size() == 0) throw std::invalid_argument("sanity_shuffled_labels: empty dataset");
  if (val_masks.size() != val.size()) throw std::invalid_argument("sanity_shuffled_labels: one mask per validation sample");
  ShuffledLabelCheck out;
  out.permuted_labels = train.labels;
  Rng rng(derive_seed(seed, "shuffle-labels"));
  for (std::size_t i = out.permuted_labels.size(); i > 1; --i) {
    std::swap(out.permuted_labels[i - 1], out.permuted_labels[rng.below(i)]);
  }
  models::Dataset shuffled = train;
  shuffled.labels = out.permuted_labels;
  models::TrainConfig cfg = config;
  cfg.seed = derive_seed(seed, "shuffle-train");
  const models::MicroNet fresh = models::randomize_weights(init, derive_seed(seed, "shuffle-init"));
  const models::MicroNet net = models::train(fresh, shuffled, cfg).net;

  const auto pred = models::predict(net, val.inputs);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == val.labels[i];
  out.val_accuracy = static_cast<double>(correct) / static_cast<double>(pred.size());
  out.chance = 1.0 / static_cast<double>(net.n_classes());
  const trust::Interval band = trust::binomial_band(val.size(), out.chance);
  out.band_low = band.low;
  out.band_high = band.high;
  out.within_band = out.val_accuracy >= band.low && out.val_accuracy <= band.high;

  std::vector<std::vector<double>> maps;
  std::vector<double> nmi;
  for (std::size_t i = 0; i < val.size(); ++i) {
    maps.push_back(saliency_predicted(net, val.inputs[i], slot, sigma, of).values);
    const auto& m = maps.back();
    const double mu = std::accumulate(m.begin(), m.end(), 0.0) / static_cast<double>(m.size());
    double var = 0.0;
    for (double v : m) var += (v - mu) * (v - mu);
    out.saliency_variance += var / static_cast<double>(m.size()) / static_cast<double>(val.size());
    nmi.push_back(trust::windowed_nmi(m, val_masks[i], window).value);
  }
  out.alignment_nmi = trust::median(nmi);
  const trust::AlignmentMetric metric = [window](std::span<const double> s, const Mask& mk) {
    return trust::windowed_nmi(s, mk, window).raw;
  };
  out.alignment_p = trust::dataset_permutation_pvalue(metric, maps, val_masks, n_perm, trust::NullScheme::CircularShift,
                                                      derive_seed(seed, "shuffle-null"));
  return out;
}

std::string attack_name(AttackKind kind) { return kind == AttackKind::FgsmStt ? "fgsm_stt" : "pgd_stt"; }

AttackKind parse_attack(const std::string& name) {
  if (name == "fgsm_stt") return AttackKind::FgsmStt;
  if (name == "pgd_stt") return AttackKind::PgdStt;
  throw std::invalid_argument("unknown attack kind: " + name);
}

void AttackSpec::validate() const {
  if (!(epsilon >= 0.0)) throw std::invalid_argument("AttackSpec: epsilon must be >= 0");
  if (!(step_size >= 0.0)) throw std::invalid_argument("AttackSpec: step_size must be >= 0");
  if (kind == AttackKind::PgdStt && steps < 1) throw std::invalid_argument("AttackSpec: PGD needs steps >= 1");
}

models::ModelInput fgsm_stt(const models::MicroNet& net, const models::ModelInput& x, std::size_t slot,
                            const Mask& mask, double epsilon, std::size_t true_class) {
  check_attack_args(x, slot, mask, epsilon);
  models::ModelInput adv = x;
  if (epsilon == 0.0) return adv;
  const auto g = loss_gradient(net, x, slot, true_class);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) adv[slot][i] = x[slot][i] + epsilon * sign(g[i]);
  }
  return adv;
}

models::ModelInput pgd_stt(const models::MicroNet& net, const models::ModelInput& x, std::size_t slot,
                           const Mask& mask, double epsilon, std::size_t steps, double step_size,
                           std::size_t true_class) {
  check_attack_args(x, slot, mask, epsilon);
  if (steps < 1) throw std::invalid_argument("pgd_stt: steps must be >= 1");
  if (!(step_size > 0.0)) throw std::invalid_argument("pgd_stt: step_size must be > 0");
  models::ModelInput adv = x;
  if (epsilon == 0.0) return adv;
  const std::vector<double>& x0 = x[slot];
  // The single full-budget step is a candidate so the result never does
  // worse than fgsm_stt from the same start.
  models::ModelInput best = fgsm_stt(net, x, slot, mask, epsilon, true_class);
  double best_loss = models::cross_entropy(net, best, true_class);
  for (std::size_t s = 0; s < steps; ++s) {
    const auto g = loss_gradient(net, adv, slot, true_class);
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (!mask[i]) continue;
      const double stepped = adv[slot][i] + step_size * sign(g[i]);
      adv[slot][i] = std::clamp(stepped, x0[i] - epsilon, x0[i] + epsilon);
    }
    const double loss = models::cross_entropy(net, adv, true_class);
    if (loss > best_loss) {
      best_loss = loss;
      best = adv;
    }
  }
  return best;
}

models::ModelInput run_attack(const models::MicroNet& net, const models::ModelInput& x, std::size_t slot,
                              const Mask& mask, const AttackSpec& spec, std::size_t true_class) {
  spec.validate();
  if (spec.kind == AttackKind::FgsmStt) return fgsm_stt(net, x, slot, mask, spec.epsilon, true_class);
  if (spec.epsilon == 0.0) return x;
  return pgd_stt(net, x, slot, mask, spec.epsilon, spec.steps, spec.effective_step(), true_class);
}

AttackReport attack_report(const models::MicroNet& net, const models::Dataset& data, const std::vector<Mask>& masks,
                           std::size_t slot, const AttackSpec& spec, double sigma, double k_percent,
                           models::GradOf of) {
  spec.validate();
  if (data.size() == 0) throw std::invalid_argument("attack_report: empty dataset");
  if (masks.size() != data.size()) throw std::invalid_argument("attack_report: one mask per sample");
  AttackReport r;
  r.kind = spec.kind;
  r.epsilon = spec.epsilon;
  r.n = data.size();
  double flips = 0.0;
  double dp = 0.0;
  double cos = 0.0;
  double dice = 0.0;
  double iou = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& x = data.inputs[i];
    const auto y = static_cast<std::size_t>(data.labels[i]);
    const auto p0 = net.forward(x).probs;
    const auto pred0 = static_cast<std::size_t>(metrics::argmax(p0));
    const auto adv = run_attack(net, x, slot, masks[i], spec, y);
    const auto p1 = net.forward(adv).probs;
    flips += static_cast<std::size_t>(metrics::argmax(p1)) != pred0 ? 1.0 : 0.0;
    dp += p1[y] - p0[y];
    const SaliencyMap s0 = saliency_grad(net, x, slot, pred0, sigma, of);
    const SaliencyMap s1 = saliency_grad(net, adv, slot, pred0, sigma, of);
    cos += cosine(s0.values, s1.values);
    const trust::Overlap o = trust::dice_iou_at_k(s1.values, trust::top_k_indicator(s0.values, k_percent), k_percent);
    dice += o.dice;
    iou += o.iou;
  }
  const double n = static_cast<double>(data.size());
  r.flip_rate = flips / n;
  r.delta_p_true = dp / n;
  r.saliency_cosine = cos / n;
  r.dice_at_k = dice / n;
  r.iou_at_k = iou / n;
  return r;
}

}  // namespace ecgtrust::explain

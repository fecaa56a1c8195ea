#include "ecgtrust/trust.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ecgtrust/rng.hpp"
#include "ecgtrust/transforms.hpp"

namespace ecgtrust::trust {

namespace {

double xlogx_ratio(double p, double q) { return p > 0.0 ? p * std::log(p / q) : 0.0; }

double js_divergence(const std::vector<double>& p, const std::vector<double>& q) {
  double d = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    const double mid = 0.5 * (p[j] + q[j]);
    if (mid > 0.0) d += 0.5 * xlogx_ratio(p[j], mid) + 0.5 * xlogx_ratio(q[j], mid);
  }
  return std::max(d, 0.0);
}

std::size_t count_true(const Mask& m) {
  return static_cast<std::size_t>(std::count_if(m.begin(), m.end(), [](std::uint8_t v) { return v != 0; }));
}

// Contingency counts of two labelings with dense relabeled categories.
struct Contingency {
  std::vector<std::vector<double>> n;  // n[i][j]
  std::vector<double> a;
  std::vector<double> b;
  double total = 0.0;
};

Contingency contingency(std::span<const int> x, std::span<const int> y) {
  if (x.size() != y.size()) throw std::invalid_argument("labels: length mismatch");
  if (x.empty()) throw std::invalid_argument("labels: empty input");
  auto relabel = [](std::span<const int> v) {
    std::vector<int> sorted(v.begin(), v.end());
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    std::vector<std::size_t> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      out[i] = static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), v[i]) - sorted.begin());
    }
    return std::make_pair(out, sorted.size());
  };
  const auto [rx, kx] = relabel(x);
  const auto [ry, ky] = relabel(y);
  Contingency c;
  c.n.assign(kx, std::vector<double>(ky, 0.0));
  c.a.assign(kx, 0.0);
  c.b.assign(ky, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    c.n[rx[i]][ry[i]] += 1.0;
    c.a[rx[i]] += 1.0;
    c.b[ry[i]] += 1.0;
  }
  c.total = static_cast<double>(x.size());
  return c;
}

double entropy_of_counts(const std::vector<double>& counts, double total) {
  double h = 0.0;
  for (double c : counts) {
    if (c > 0.0) h -= (c / total) * std::log(c / total);
  }
  return h;
}

double mi_of(const Contingency& c) {
  double mi = 0.0;
  for (std::size_t i = 0; i < c.a.size(); ++i) {
    for (std::size_t j = 0; j < c.b.size(); ++j) {
      const double nij = c.n[i][j];
      if (nij > 0.0) mi += (nij / c.total) * std::log(c.total * nij / (c.a[i] * c.b[j]));
    }
  }
  return mi;
}

// Expected MI under the hypergeometric model of fixed marginals.
double expected_mi(const Contingency& c) {
  const double N = c.total;
  const double lg_n = std::lgamma(N + 1.0);
  double emi = 0.0;
  for (double ai : c.a) {
    for (double bj : c.b) {
      const double lo = std::max(1.0, ai + bj - N);
      const double hi = std::min(ai, bj);
      const double fixed = std::lgamma(ai + 1.0) + std::lgamma(bj + 1.0) + std::lgamma(N - ai + 1.0) +
                           std::lgamma(N - bj + 1.0) - lg_n;
      for (double nij = lo; nij <= hi; nij += 1.0) {
        const double log_p = fixed - std::lgamma(nij + 1.0) - std::lgamma(ai - nij + 1.0) -
                             std::lgamma(bj - nij + 1.0) - std::lgamma(N - ai - bj + nij + 1.0);
        emi += (nij / N) * std::log(N * nij / (ai * bj)) * std::exp(log_p);
      }
    }
  }
  return emi;
}

std::vector<double> permuted(std::span<const double> v, NullScheme scheme, std::size_t block, Rng& rng) {
  const std::size_t n = v.size();
  std::vector<double> out(n);
  if (scheme == NullScheme::CircularShift) {
    const std::size_t shift = n > 1 ? 1 + static_cast<std::size_t>(rng.below(n - 1)) : 0;
    for (std::size_t i = 0; i < n; ++i) out[(i + shift) % n] = v[i];
    return out;
  }
  const std::size_t b = std::max<std::size_t>(block, 1);
  const std::size_t n_full = n / b;
  std::vector<std::size_t> order(n_full);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = n_full; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  std::size_t pos = 0;
  for (std::size_t blk : order) {
    for (std::size_t k = 0; k < b; ++k) out[pos++] = v[blk * b + k];
  }
  for (std::size_t i = n_full * b; i < n; ++i) out[pos++] = v[i];
  return out;
}

void check_pair(std::span<const double> saliency, const Mask& mask) {
  if (saliency.size() != mask.size()) throw std::invalid_argument("saliency and mask differ in length");
  if (saliency.empty()) throw std::invalid_argument("empty saliency");
}

double cosine_within(const std::vector<double>& a, const std::vector<double>& b, const Mask& mask, double& na,
                     double& nb) {
  double dot = 0.0;
  na = 0.0;
  nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!mask[i]) continue;
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / (na * nb), -1.0, 1.0);
}

}  // namespace

std::vector<int> equal_frequency_bins(std::span<const double> x, std::size_t n_bins) {
  if (n_bins == 0) throw std::invalid_argument("equal_frequency_bins: n_bins must be >= 1");
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return x[i] < x[j]; });
  std::vector<int> bins(x.size());
  for (std::size_t r = 0; r < order.size(); ++r) bins[order[r]] = static_cast<int>(r * n_bins / x.size());
  return bins;
}

MiEstimate mi_continuous(std::span<const double> x, std::span<const double> s, std::size_t n_bins,
                         bool miller_madow) {
  if (x.size() != s.size()) throw std::invalid_argument("mi_continuous: length mismatch");
  if (n_bins < 2) throw std::invalid_argument("mi_continuous: n_bins must be >= 2");
  if (x.size() < 4 * n_bins) throw std::invalid_argument("mi_continuous: need at least 4 * n_bins samples");
  const auto constant = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [&](double a) { return a == v.front(); });
  };
  if (constant(x) || constant(s)) return {0.0, true};
  const auto bx = equal_frequency_bins(x, n_bins);
  const auto bs = equal_frequency_bins(s, n_bins);
  const Contingency c = contingency(bx, bs);
  double mi = mi_of(c);
  if (miller_madow) {
    std::size_t kxy = 0;
    for (const auto& row : c.n) kxy += static_cast<std::size_t>(std::count_if(row.begin(), row.end(), [](double v) { return v > 0.0; }));
    const double kx = static_cast<double>(c.a.size());
    const double ks = static_cast<double>(c.b.size());
    mi += (kx + ks - static_cast<double>(kxy) - 1.0) / (2.0 * c.total);
  }
  return {std::max(mi, 0.0), false};
}

double discrete_mi(const std::vector<std::vector<double>>& joint) {
  if (joint.empty() || joint.front().empty()) throw std::invalid_argument("discrete_mi: empty table");
  const std::size_t cols = joint.front().size();
  std::vector<double> pa(joint.size(), 0.0);
  std::vector<double> pb(cols, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < joint.size(); ++i) {
    if (joint[i].size() != cols) throw std::invalid_argument("discrete_mi: ragged table");
    for (std::size_t j = 0; j < cols; ++j) {
      const double p = joint[i][j];
      if (!(p >= 0.0) || !std::isfinite(p)) throw std::invalid_argument("discrete_mi: entries must be >= 0");
      pa[i] += p;
      pb[j] += p;
      total += p;
    }
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("discrete_mi: table must sum to 1");
  double mi = 0.0;
  for (std::size_t i = 0; i < joint.size(); ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      const double p = joint[i][j];
      if (p > 0.0) mi += p * std::log(p / (pa[i] * pb[j]));
    }
  }
  return mi;
}

double labels_mi(std::span<const int> a, std::span<const int> b) { return mi_of(contingency(a, b)); }

double nmi_labels(std::span<const int> a, std::span<const int> b) {
  const Contingency c = contingency(a, b);
  const double h = std::max(entropy_of_counts(c.a, c.total), entropy_of_counts(c.b, c.total));
  if (c.a.size() < 2 || c.b.size() < 2 || !(h > 0.0)) return 0.0;
  return mi_of(c) / h;
}

AmiResult ami(std::span<const int> a, std::span<const int> b) {
  const Contingency c = contingency(a, b);
  if (c.a.size() < 2 || c.b.size() < 2) return {0.0, true};
  const double mi = mi_of(c);
  const double emi = expected_mi(c);
  const double h = std::max(entropy_of_counts(c.a, c.total), entropy_of_counts(c.b, c.total));
  const double denom = h - emi;
  if (std::abs(denom) < 1e-15) return {0.0, true};
  return {(mi - emi) / denom, false};
}

WindowedNmi windowed_nmi(std::span<const double> saliency, const Mask& mask, std::size_t window) {
  check_pair(saliency, mask);
  if (window == 0) throw std::invalid_argument("windowed_nmi: window must be >= 1");
  const std::size_t n = saliency.size();
  const std::size_t n_mask = count_true(mask);
  if (n_mask == 0 || n_mask == n) return {0.0, 0.0, true};
  double mass = 0.0;
  for (double v : saliency) {
    if (v < 0.0) throw std::invalid_argument("windowed_nmi: saliency must be non-negative");
    mass += v;
  }
  if (!(mass > 0.0)) return {0.0, 0.0, true};

  const std::size_t n_windows = (n + window - 1) / window;
  std::vector<double> s(n_windows, 0.0);
  std::vector<double> m(n_windows, 0.0);
  std::vector<double> u(n_windows, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i / window;
    s[j] += saliency[i] / mass;
    m[j] += mask[i] ? 1.0 / static_cast<double>(n_mask) : 0.0;
    u[j] += 1.0 / static_cast<double>(n);
  }
  const double reference = js_divergence(u, m);
  if (!(reference > 0.0)) return {0.0, 0.0, true};
  const double raw = 1.0 - js_divergence(s, m) / reference;
  return {std::clamp(raw, 0.0, 1.0), raw, false};
}

double permutation_pvalue(const AlignmentMetric& metric, std::span<const double> saliency, const Mask& mask,
                          std::size_t n_perm, NullScheme scheme, std::uint64_t seed, std::size_t block) {
  check_pair(saliency, mask);
  if (n_perm < 100) throw std::invalid_argument("permutation_pvalue: n_perm must be >= 100");
  const double observed = metric(saliency, mask);
  const Rng root(seed);
  std::size_t exceed = 0;
  for (std::size_t b = 0; b < n_perm; ++b) {
    Rng rng = root.fork(b);
    if (metric(permuted(saliency, scheme, block, rng), mask) >= observed) ++exceed;
  }
  return static_cast<double>(1 + exceed) / static_cast<double>(1 + n_perm);
}

double dataset_permutation_pvalue(const AlignmentMetric& metric, const std::vector<std::vector<double>>& saliencies,
                                  const std::vector<Mask>& masks, std::size_t n_perm, NullScheme scheme,
                                  std::uint64_t seed, std::size_t block) {
  if (saliencies.empty()) throw std::invalid_argument("dataset_permutation_pvalue: empty set");
  if (saliencies.size() != masks.size()) throw std::invalid_argument("dataset_permutation_pvalue: size mismatch");
  if (n_perm < 100) throw std::invalid_argument("dataset_permutation_pvalue: n_perm must be >= 100");
  const std::size_t n = saliencies.size();
  double observed = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    check_pair(saliencies[i], masks[i]);
    observed += metric(saliencies[i], masks[i]);
  }
  observed /= static_cast<double>(n);
  const Rng root(seed);
  std::size_t exceed = 0;
  for (std::size_t b = 0; b < n_perm; ++b) {
    Rng rng = root.fork(b);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += metric(permuted(saliencies[i], scheme, block, rng), masks[i]);
    if (total / static_cast<double>(n) >= observed) ++exceed;
  }
  return static_cast<double>(1 + exceed) / static_cast<double>(1 + n_perm);
}

Mask top_k_indicator(std::span<const double> saliency, double k_percent) {
  if (!(k_percent > 0.0 && k_percent <= 100.0)) throw std::invalid_argument("top_k: k_percent must lie in (0, 100]");
  const std::size_t n = saliency.size();
  std::size_t k = static_cast<std::size_t>(std::llround(k_percent * static_cast<double>(n) / 100.0));
  k = std::clamp<std::size_t>(k, 1, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return saliency[i] > saliency[j]; });
  Mask out(n, 0);
  for (std::size_t r = 0; r < k; ++r) out[order[r]] = 1;
  return out;
}

Overlap dice_iou_at_k(std::span<const double> saliency, const Mask& mask, double k_percent) {
  check_pair(saliency, mask);
  const Mask top = top_k_indicator(saliency, k_percent);
  const std::size_t b = count_true(mask);
  if (b == 0) return {0.0, 0.0, true};
  const std::size_t a = count_true(top);
  std::size_t inter = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) inter += (top[i] && mask[i]) ? 1 : 0;
  const double ai = static_cast<double>(inter);
  return {2.0 * ai / static_cast<double>(a + b), ai / static_cast<double>(a + b - inter), false};
}

Kappa kappa_at_k(std::span<const double> saliency, const Mask& mask, double k_percent) {
  check_pair(saliency, mask);
  const Mask top = top_k_indicator(saliency, k_percent);
  const double n = static_cast<double>(mask.size());
  double agree = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) agree += ((top[i] != 0) == (mask[i] != 0)) ? 1.0 : 0.0;
  const double pa = static_cast<double>(count_true(top)) / n;
  const double pb = static_cast<double>(count_true(mask)) / n;
  const double pe = pa * pb + (1.0 - pa) * (1.0 - pb);
  if (pe >= 1.0) return {0.0, true};
  return {(agree / n - pe) / (1.0 - pe), false};
}

MonotonicityTrace monotonicity_harness(std::span<const double> saliency, const Mask& mask,
                                       const std::vector<double>& lambdas, std::size_t window, double k_percent) {
  check_pair(saliency, mask);
  MonotonicityTrace out;
  double prev = -1.0;
  for (double lambda : lambdas) {
    if (!(lambda >= 0.0) || lambda < prev) throw std::invalid_argument("monotonicity_harness: lambdas must be >= 0 and increasing");
    prev = lambda;
    std::vector<double> s(saliency.begin(), saliency.end());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] += lambda * (mask[i] ? 1.0 : 0.0);
    const double mx = *std::max_element(s.begin(), s.end());
    if (mx > 0.0) {
      for (double& v : s) v /= mx;
    }
    out.lambdas.push_back(lambda);
    out.nmi.push_back(windowed_nmi(s, mask, window).raw);
    out.dice.push_back(dice_iou_at_k(s, mask, k_percent).dice);
  }
  return out;
}

AlignmentReport alignment_report(const std::vector<std::vector<double>>& signals,
                                 const std::vector<std::vector<double>>& saliencies, const std::vector<Mask>& masks,
                                 const AlignmentOptions& options) {
  const std::size_t n = saliencies.size();
  if (n == 0) throw std::invalid_argument("alignment_report: empty set");
  if (signals.size() != n || masks.size() != n) throw std::invalid_argument("alignment_report: size mismatch");
  std::vector<double> mi;
  std::vector<double> nmi;
  std::vector<double> raw;
  std::vector<double> am;
  std::vector<double> dice;
  std::vector<double> iou;
  std::vector<double> kappa;
  for (std::size_t i = 0; i < n; ++i) {
    mi.push_back(mi_continuous(signals[i], saliencies[i], options.mi_bins).nats);
    const WindowedNmi w = windowed_nmi(saliencies[i], masks[i], options.window);
    nmi.push_back(w.value);
    raw.push_back(w.raw);
    std::vector<int> mask_labels(masks[i].begin(), masks[i].end());
    for (int& v : mask_labels) v = v != 0;
    am.push_back(ami(equal_frequency_bins(saliencies[i], options.ami_bins), mask_labels).value);
    const Overlap o = dice_iou_at_k(saliencies[i], masks[i], options.k_percent);
    dice.push_back(o.dice);
    iou.push_back(o.iou);
    kappa.push_back(kappa_at_k(saliencies[i], masks[i], options.k_percent).value);
  }
  AlignmentReport r;
  r.mi_nats = median(mi);
  r.windowed_nmi = median(nmi);
  r.ami = median(am);
  r.dice_at_k = median(dice);
  r.iou_at_k = median(iou);
  r.kappa_at_k = median(kappa);
  const std::size_t window = options.window;
  const AlignmentMetric metric = [window](std::span<const double> s, const Mask& m) {
    return windowed_nmi(s, m, window).raw;
  };
  r.p_perm = dataset_permutation_pvalue(metric, saliencies, masks, options.n_perm, NullScheme::CircularShift,
                                        derive_seed(options.seed, "alignment-null"));
  const Interval ci = bootstrap_ci(raw, options.n_boot, 0.95, derive_seed(options.seed, "alignment-boot"));
  r.ci_low = ci.low;
  r.ci_high = ci.high;
  r.n_perm = options.n_perm;
  r.k_percent = options.k_percent;
  r.window = options.window;
  r.n = n;
  return r;
}

std::vector<std::vector<double>> branch_attributions(const models::MicroNet& fused, std::span<const double> x,
                                                     const Mask& mask, std::size_t class_index,
                                                     const std::vector<InputView>& views, std::size_t steps,
                                                     std::size_t n_freq_bins) {
  if (fused.kind() != models::ArchKind::Fused || views.size() != 2) {
    throw std::invalid_argument("branch_attributions: need a fused model and two input views");
  }
  if (mask.size() != x.size()) throw std::invalid_argument("branch_attributions: mask length mismatch");
  if (steps == 0) throw std::invalid_argument("branch_attributions: steps must be >= 1");
  const std::vector<double> xv(x.begin(), x.end());
  std::vector<double> base = xv;
  for (std::size_t i = 0; i < base.size(); ++i) {
    if (mask[i]) base[i] = 0.0;
  }
  auto view = [&](InputView v, const std::vector<double>& t) {
    return v == InputView::Time ? t : transforms::fft_features(t, n_freq_bins);
  };
  const models::ModelInput held = {view(views[0], base), view(views[1], base)};

  std::vector<std::vector<double>> attr(2, std::vector<double>(xv.size(), 0.0));
  std::vector<double> t(xv.size());
  for (std::size_t k = 0; k < steps; ++k) {
    const double a = (static_cast<double>(k) + 0.5) / static_cast<double>(steps);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = base[i] + a * (xv[i] - base[i]);
    for (std::size_t m = 0; m < 2; ++m) {
      models::ModelInput in = held;
      in[m] = view(views[m], t);
      const auto g = models::grad_input(fused, in, class_index, models::GradOf::Logit)[m];
      const std::vector<double> gt = views[m] == InputView::Time ? g : transforms::fft_features_vjp(t, g, n_freq_bins);
      for (std::size_t i = 0; i < t.size(); ++i) attr[m][i] += gt[i];
    }
  }
  for (auto& row : attr) {
    for (std::size_t i = 0; i < row.size(); ++i) row[i] *= (xv[i] - base[i]) / static_cast<double>(steps);
  }
  return attr;
}

BranchSimilarity branch_similarity(const models::MicroNet& fused, const std::vector<std::vector<double>>& xs,
                                   const std::vector<int>& classes, const std::vector<Mask>& masks,
                                   const std::vector<InputView>& views, std::size_t steps, std::size_t n_freq_bins) {
  if (xs.empty()) throw std::invalid_argument("branch_similarity: empty set");
  if (classes.size() != xs.size() || masks.size() != xs.size()) throw std::invalid_argument("branch_similarity: size mismatch");
  BranchSimilarity out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const auto attr = branch_attributions(fused, xs[i], masks[i], static_cast<std::size_t>(classes[i]), views, steps,
                                          n_freq_bins);
    double na = 0.0;
    double nb = 0.0;
    const double c = cosine_within(attr[0], attr[1], masks[i], na, nb);
    if (na < 1e-9 || nb < 1e-9) {
      ++out.skipped;
      continue;
    }
    out.per_sample.push_back(c);
  }
  if (out.per_sample.empty()) throw std::runtime_error("branch_similarity: every sample has a zero-norm attribution");
  out.median = median(out.per_sample);
  return out;
}

void EatThresholds::validate() const {
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!unit(tau) || !unit(alpha) || !unit(rho) || !(gamma >= 0.0)) throw std::invalid_argument("EatThresholds: tau, alpha, rho must lie in [0, 1] and gamma >= 0");
  if (!(phi >= -1.0 && phi <= 1.0) || !(phi_arch >= -1.0 && phi_arch <= 1.0)) {
    throw std::invalid_argument("EatThresholds: phi and phi_arch must lie in [-1, 1]");
  }
  if (epsilons.empty()) throw std::invalid_argument("EatThresholds: epsilons must be non-empty");
  for (double e : epsilons) {
    if (!(e >= 0.0)) throw std::invalid_argument("EatThresholds: epsilons must be >= 0");
  }
}

EatVerdict certify_eat(const EatInputs& inputs) {
  const EatThresholds& th = inputs.thresholds;
  th.validate();
  if (!inputs.sanity) throw std::invalid_argument("certify_eat: missing sanity statistics");
  if (!inputs.alignment) throw std::invalid_argument("certify_eat: missing alignment report");
  if (!inputs.branch_similarity) throw std::invalid_argument("certify_eat: missing branch similarity");
  if (inputs.attacks.empty()) throw std::invalid_argument("certify_eat: missing attack reports");

  EatVerdict v;
  v.sanity = *inputs.sanity;
  v.alignment = *inputs.alignment;
  v.attacks = inputs.attacks;
  v.branch_similarity = *inputs.branch_similarity;
  v.thresholds = th;

  v.c1_fidelity = v.sanity.randomized_p >= th.alpha && v.sanity.shuffled_within_band &&
                  v.sanity.shuffled_alignment_p >= th.alpha;
  v.c2_dependence = v.alignment.windowed_nmi >= th.tau && v.alignment.p_perm <= th.alpha && v.alignment.ci_low > 0.0;
  v.c3_robustness = true;
  for (double eps : th.epsilons) {
    bool seen = false;
    for (const auto& r : inputs.attacks) {
      if (std::abs(r.epsilon - eps) > 1e-12) continue;
      seen = true;
      v.c3_robustness = v.c3_robustness && r.flip_rate <= th.rho && std::abs(r.delta_p_true) <= th.gamma &&
                        r.saliency_cosine >= th.phi;
    }
    if (!seen) throw std::invalid_argument("certify_eat: no attack report at epsilon " + std::to_string(eps));
  }
  v.c4_architecture = v.branch_similarity >= th.phi_arch;
  v.overall = v.c1_fidelity && v.c2_dependence && v.c3_robustness && v.c4_architecture;
  return v;
}

nlohmann::json alignment_to_json(const AlignmentReport& r) {
  return {{"mi_nats", r.mi_nats},     {"windowed_nmi", r.windowed_nmi}, {"ami", r.ami},
          {"dice_at_k", r.dice_at_k}, {"iou_at_k", r.iou_at_k},         {"kappa_at_k", r.kappa_at_k},
          {"p_perm", r.p_perm},       {"ci_low", r.ci_low},             {"ci_high", r.ci_high},
          {"n_perm", r.n_perm},       {"k_percent", r.k_percent},       {"window", r.window},
          {"n", r.n}};
}

nlohmann::json attack_to_json(const explain::AttackReport& r) {
  return {{"kind", explain::attack_name(r.kind)},
          {"epsilon", r.epsilon},
          {"flip_rate", r.flip_rate},
          {"delta_p_true", r.delta_p_true},
          {"saliency_cosine", r.saliency_cosine},
          {"dice_at_k", r.dice_at_k},
          {"iou_at_k", r.iou_at_k},
          {"n", r.n}};
}

nlohmann::json thresholds_to_json(const EatThresholds& t) {
  return {{"tau", t.tau},   {"alpha", t.alpha},       {"rho", t.rho},          {"gamma", t.gamma},
          {"phi", t.phi},   {"phi_arch", t.phi_arch}, {"epsilons", t.epsilons}};
}

EatThresholds thresholds_from_json(const nlohmann::json& j) {
  EatThresholds t;
  for (const auto& [key, value] : j.items()) {
    if (key == "tau") t.tau = value.get<double>();
    else if (key == "alpha") t.alpha = value.get<double>();
    else if (key == "rho") t.rho = value.get<double>();
    else if (key == "gamma") t.gamma = value.get<double>();
    else if (key == "phi") t.phi = value.get<double>();
    else if (key == "phi_arch") t.phi_arch = value.get<double>();
    else if (key == "epsilons") t.epsilons = value.get<std::vector<double>>();
    else throw std::invalid_argument("eat: unknown key '" + key + "'");
  }
  t.validate();
  return t;
}

nlohmann::json verdict_to_json(const EatVerdict& v) {
  nlohmann::json attacks = nlohmann::json::array();
  for (const auto& r : v.attacks) attacks.push_back(attack_to_json(r));
  const auto& s = v.sanity;
  return {{"c1_fidelity", {{"pass", v.c1_fidelity},
                           {"randomized_p", s.randomized_p},
                           {"randomized_mean_cosine", s.randomized_mean_cosine},
                           {"shuffled_within_band", s.shuffled_within_band},
                           {"shuffled_val_accuracy", s.shuffled_val_accuracy},
                           {"shuffled_alignment_p", s.shuffled_alignment_p}}},
          {"c2_dependence", {{"pass", v.c2_dependence}, {"alignment", alignment_to_json(v.alignment)}}},
          {"c3_robustness", {{"pass", v.c3_robustness}, {"attacks", attacks}}},
          {"c4_architecture", {{"pass", v.c4_architecture}, {"branch_similarity", v.branch_similarity}}},
          {"overall", v.overall},
          {"thresholds", thresholds_to_json(v.thresholds)}};
}

}  // namespace ecgtrust::trust

#include "ecgtrust/stats.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <boost/math/distributions/binomial.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "ecgtrust/rng.hpp"

namespace ecgtrust::trust {

double mean(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("mean: empty input");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_variance(std::span<const double> v) {
  if (v.size() < 2) throw std::invalid_argument("sample_variance: need at least two values");
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("quantile_sorted: empty input");
  const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  if (frac == 0.0) return sorted[lo];
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return quantile_sorted(v, 0.5);
}

double cohens_d(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw std::invalid_argument("cohens_d: each group needs at least two values");
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double pooled = std::sqrt(((na - 1.0) * sample_variance(a) + (nb - 1.0) * sample_variance(b)) / (na + nb - 2.0));
  if (!(pooled > 0.0)) throw std::domain_error("cohens_d: pooled standard deviation is zero");
  return (mean(a) - mean(b)) / pooled;
}

Interval bootstrap_ci(std::span<const double> values, std::size_t n_resamples, double level, std::uint64_t seed,
                      const Statistic& statistic) {
  if (values.empty()) throw std::invalid_argument("bootstrap_ci: empty input");
  if (n_resamples == 0) throw std::invalid_argument("bootstrap_ci: n_resamples must be >= 1");
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("bootstrap_ci: level must lie in (0, 1)");
  const Statistic stat = statistic ? statistic : Statistic([](std::span<const double> v) { return mean(v); });
  const Rng root(seed);
  std::vector<double> stats(n_resamples);
  std::vector<double> draw(values.size());
  for (std::size_t r = 0; r < n_resamples; ++r) {
    Rng rng = root.fork(r);
    for (double& d : draw) d = values[rng.below(values.size())];
    stats[r] = stat(draw);
  }
  std::sort(stats.begin(), stats.end());
  return {quantile_sorted(stats, (1.0 - level) / 2.0), quantile_sorted(stats, (1.0 + level) / 2.0)};
}

TTest paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("paired_t_test: length mismatch");
  if (a.size() < 2) throw std::invalid_argument("paired_t_test: need at least two pairs");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double var = sample_variance(d);
  if (!(var > 0.0)) throw std::domain_error("paired_t_test: differences have zero variance");
  const double n = static_cast<double>(d.size());
  TTest out;
  out.df = n - 1.0;
  out.t = mean(d) / std::sqrt(var / n);
  const boost::math::students_t dist(out.df);
  out.p_value = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(out.t))));
  return out;
}

double ks_uniform_statistic(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("ks_uniform_statistic: empty input");
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  double d = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double u = std::clamp(values[i], 0.0, 1.0);
    d = std::max({d, static_cast<double>(i + 1) / n - u, u - static_cast<double>(i) / n});
  }
  return d;
}

double ks_critical_5pct(std::size_t n) {
  if (n == 0) throw std::invalid_argument("ks_critical_5pct: n must be >= 1");
  const double s = std::sqrt(static_cast<double>(n));
  return 1.358 / (s + 0.12 + 0.11 / s);
}

Interval binomial_band(std::size_t n, double p, double level) {
  if (n == 0) throw std::invalid_argument("binomial_band: n must be >= 1");
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("binomial_band: p must lie in (0, 1)");
  const boost::math::binomial_distribution<double> dist(static_cast<double>(n), p);
  const double tail = (1.0 - level) / 2.0;
  const double lo = boost::math::quantile(dist, tail);
  const double hi = boost::math::quantile(boost::math::complement(dist, tail));
  return {lo / static_cast<double>(n), hi / static_cast<double>(n)};
}

}  // namespace ecgtrust::trust

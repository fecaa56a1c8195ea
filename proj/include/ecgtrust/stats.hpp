#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

namespace ecgtrust::trust {

double mean(std::span<const double> v);
/// Sample variance with an n - 1 denominator.
double sample_variance(std::span<const double> v);
/// Linear-interpolation quantile of a sorted sequence, q in [0, 1].
double quantile_sorted(std::span<const double> sorted, double q);
double median(std::vector<double> v);

/// (mean_a - mean_b) / pooled sd. Throws std::domain_error when the pooled
/// sd is zero.
double cohens_d(std::span<const double> a, std::span<const double> b);

using Statistic = std::function<double(std::span<const double>)>;

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

/// Percentile interval of `statistic` over resamples drawn with replacement.
/// The default statistic is the mean.
Interval bootstrap_ci(std::span<const double> values, std::size_t n_resamples = 1000, double level = 0.95,
                      std::uint64_t seed = 0, const Statistic& statistic = {});

struct TTest {
  double t = 0.0;
  double df = 0.0;
  double p_value = 1.0;  // two-sided
};

/// Paired t-test on a - b. Throws std::domain_error when the differences
/// have zero variance.
TTest paired_t_test(std::span<const double> a, std::span<const double> b);

/// Kolmogorov-Smirnov distance between the empirical distribution of
/// `values` and U(0, 1).
double ks_uniform_statistic(std::vector<double> values);
/// Stephens' approximation of the 5% critical value for sample size n.
double ks_critical_5pct(std::size_t n);

/// Central binomial band [q_lo / n, q_hi / n] holding `level` of the
/// Binomial(n, p) mass.
Interval binomial_band(std::size_t n, double p, double level = 0.95);

}  // namespace ecgtrust::trust

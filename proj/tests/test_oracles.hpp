#pragma once

// Independent reference computations used by the unit and acceptance tests.
// Nothing here calls into the library; each oracle is a direct, slow
// implementation of the textbook definition.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <vector>

namespace ecgtrust::oracle {

inline double relative_l2(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

// Digital Butterworth band-pass gain from the closed-form analog magnitude
// evaluated at the bilinear-prewarped frequency.
inline double butter_bandpass_gain(double f, double lo, double hi, int order, double fs) {
  const double pi = std::numbers::pi;
  auto warp = [&](double hz) { return 2.0 * fs * std::tan(pi * hz / fs); };
  const double w = warp(f);
  const double w1 = warp(lo);
  const double w2 = warp(hi);
  const double bw = w2 - w1;
  const double w0sq = w1 * w2;
  const double q = (w * w - w0sq) / (w * bw);
  return 1.0 / std::sqrt(1.0 + std::pow(q * q, order));
}

// Lag (in samples, |lag| <= max_lag) maximizing sum x[i] * y[i + lag].
inline int xcorr_peak_lag(const std::vector<double>& x, const std::vector<double>& y, int max_lag) {
  int best_lag = 0;
  double best = -1e300;
  const int n = static_cast<int>(x.size());
  for (int lag = -max_lag; lag <= max_lag; ++lag) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
      const int j = i + lag;
      if (j >= 0 && j < n) s += x[i] * y[j];
    }
    if (s > best) {
      best = s;
      best_lag = lag;
    }
  }
  return best_lag;
}

inline std::vector<std::complex<double>> naive_dft(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double ang = -2.0 * std::numbers::pi * static_cast<double>((k * t) % n) / static_cast<double>(n);
      acc += x[t] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    out[k] = acc;
  }
  return out;
}

// |X_k|^2 for k = 0..n/2.
inline std::vector<double> dft_power(const std::vector<double>& x) {
  const auto spec = naive_dft(x);
  std::vector<double> p(x.size() / 2 + 1);
  for (std::size_t k = 0; k < p.size(); ++k) p[k] = std::norm(spec[k]);
  return p;
}

// Frequency in [f_lo, f_hi] maximizing the DTFT magnitude, scanned at `step` Hz.
inline double dft_peak_frequency(const std::vector<double>& x, double fs, double f_lo, double f_hi, double step) {
  double best_f = f_lo;
  double best = -1.0;
  for (double f = f_lo; f <= f_hi + 1e-12; f += step) {
    double re = 0.0;
    double im = 0.0;
    for (std::size_t t = 0; t < x.size(); ++t) {
      const double ang = 2.0 * std::numbers::pi * f * static_cast<double>(t) / fs;
      re += x[t] * std::cos(ang);
      im -= x[t] * std::sin(ang);
    }
    const double mag = re * re + im * im;
    if (mag > best) {
      best = mag;
      best_f = f;
    }
  }
  return best_f;
}

// Brute-force k nearest neighbours of row i (excluding i), ties by index.
inline std::vector<std::size_t> knn(const std::vector<std::vector<double>>& rows, std::size_t i, std::size_t k) {
  std::vector<std::pair<double, std::size_t>> d;
  for (std::size_t j = 0; j < rows.size(); ++j) {
    if (j == i) continue;
    double s = 0.0;
    for (std::size_t c = 0; c < rows[i].size(); ++c) s += (rows[i][c] - rows[j][c]) * (rows[i][c] - rows[j][c]);
    d.emplace_back(s, j);
  }
  std::sort(d.begin(), d.end());
  std::vector<std::size_t> out;
  for (std::size_t m = 0; m < k; ++m) out.push_back(d[m].second);
  return out;
}

inline double plugin_mi(const std::vector<std::vector<double>>& joint) {
  std::vector<double> pa(joint.size(), 0.0);
  std::vector<double> pb(joint[0].size(), 0.0);
  for (std::size_t a = 0; a < joint.size(); ++a) {
    for (std::size_t b = 0; b < joint[a].size(); ++b) {
      pa[a] += joint[a][b];
      pb[b] += joint[a][b];
    }
  }
  double mi = 0.0;
  for (std::size_t a = 0; a < joint.size(); ++a) {
    for (std::size_t b = 0; b < joint[a].size(); ++b) {
      if (joint[a][b] > 0.0) mi += joint[a][b] * std::log(joint[a][b] / (pa[a] * pb[b]));
    }
  }
  return mi;
}

}  // namespace ecgtrust::oracle

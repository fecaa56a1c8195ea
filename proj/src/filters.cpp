#include "ecgtrust/filters.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>
#include <string>

namespace ecgtrust::signals {

namespace {

using cplx = std::complex<double>;

cplx section_response(const Biquad& s, double omega) {
  const cplx z1 = std::polar(1.0, -omega);
  const cplx z2 = z1 * z1;
  return (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
}

// Steady-state transposed direct-form II state for a unit step input.
std::array<double, 2> step_state(const Biquad& s) {
  const double gain = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
  const double z2 = s.b2 - s.a2 * gain;
  const double z1 = gain - s.b0;
  return {z1, z2};
}

}  // namespace

void FilterSpec::validate(double fs) const {
  if (!(fs > 0.0)) throw std::invalid_argument("bandpass: fs must be positive");
  if (order < 1) throw std::invalid_argument("bandpass: order must be >= 1");
  if (!(lo_hz > 0.0 && lo_hz < hi_hz && hi_hz < fs / 2.0)) {
    throw std::invalid_argument("bandpass: band edges must satisfy 0 < lo < hi < fs/2 (got " +
                                std::to_string(lo_hz) + ", " + std::to_string(hi_hz) +
                                " at fs " + std::to_string(fs) + ")");
  }
}

SosFilter design_butter_bandpass(const FilterSpec& spec, double fs) {
  spec.validate(fs);
  const int n = spec.order;
  const double fs2 = 2.0 * fs;
  const double wl = fs2 * std::tan(std::numbers::pi * spec.lo_hz / fs);
  const double wh = fs2 * std::tan(std::numbers::pi * spec.hi_hz / fs);
  const double bw = wh - wl;
  const double w0sq = wl * wh;

  // Analog band-pass poles from the low-pass prototype, then bilinear map.
  std::vector<cplx> poles;
  poles.reserve(2 * n);
  for (int k = 0; k < n; ++k) {
    const cplx p = std::polar(1.0, std::numbers::pi * (2.0 * k + n + 1) / (2.0 * n));
    const cplx half = p * bw / 2.0;
    const cplx root = std::sqrt(half * half - w0sq);
    for (cplx s : {half + root, half - root}) poles.push_back((fs2 + s) / (fs2 - s));
  }

  std::vector<cplx> upper;
  std::vector<double> reals;
  for (const cplx& p : poles) {
    if (std::abs(p.imag()) < 1e-12) {
      reals.push_back(p.real());
    } else if (p.imag() > 0.0) {
      upper.push_back(p);
    }
  }
  std::sort(upper.begin(), upper.end(),
            [](const cplx& a, const cplx& b) { return std::abs(a) < std::abs(b); });
  std::sort(reals.begin(), reals.end());

  const double omega_c = 2.0 * std::atan(std::sqrt(w0sq) / fs2);
  SosFilter sos;
  auto push = [&](double a1, double a2) {
    // Zeros at z = 1 and z = -1 in every section.
    Biquad s{1.0, 0.0, -1.0, a1, a2};
    const double g = std::abs(section_response(s, omega_c));
    s.b0 /= g;
    s.b2 /= g;
    sos.push_back(s);
  };
  for (const cplx& p : upper) push(-2.0 * p.real(), std::norm(p));
  for (std::size_t i = 0; i + 1 < reals.size(); i += 2) {
    push(-(reals[i] + reals[i + 1]), reals[i] * reals[i + 1]);
  }
  if (sos.size() != static_cast<std::size_t>(n)) {
    throw std::runtime_error("bandpass: pole pairing failed");
  }
  return sos;
}

double magnitude_response(const SosFilter& sos, double f_hz, double fs) {
  const double omega = 2.0 * std::numbers::pi * f_hz / fs;
  double mag = 1.0;
  for (const Biquad& s : sos) mag *= std::abs(section_response(s, omega));
  return mag;
}

std::vector<double> sos_filter(const SosFilter& sos, std::span<const double> x,
                               bool steady_init) {
  std::vector<double> y(x.begin(), x.end());
  if (y.empty()) return y;
  for (const Biquad& s : sos) {
    // The first output of a settled section equals its DC gain times x[0],
    // so seeding each section from its own first input matches a cascade
    // that has been at rest at level x[0].
    double z1 = 0.0;
    double z2 = 0.0;
    if (steady_init) {
      const auto st = step_state(s);
      z1 = st[0] * y[0];
      z2 = st[1] * y[0];
    }
    for (double& v : y) {
      const double in = v;
      const double out = s.b0 * in + z1;
      z1 = s.b1 * in - s.a1 * out + z2;
      z2 = s.b2 * in - s.a2 * out;
      v = out;
    }
  }
  return y;
}

std::vector<double> sos_filtfilt(const SosFilter& sos, std::span<const double> x,
                                 std::size_t padlen) {
  const std::size_t n = x.size();
  if (n == 0) return {};
  padlen = std::min(padlen, n - 1);

  std::vector<double> ext;
  ext.reserve(n + 2 * padlen);
  for (std::size_t i = padlen; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 1; i <= padlen; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

  auto run = [&](const std::vector<double>& v) { return sos_filter(sos, v, true); };

  std::vector<double> fwd = run(ext);
  std::reverse(fwd.begin(), fwd.end());
  std::vector<double> bwd = run(fwd);
  std::reverse(bwd.begin(), bwd.end());
  return {bwd.begin() + static_cast<std::ptrdiff_t>(padlen),
          bwd.begin() + static_cast<std::ptrdiff_t>(padlen + n)};
}

std::vector<double> bandpass(std::span<const double> signal, double fs,
                             const FilterSpec& spec) {
  const SosFilter sos = design_butter_bandpass(spec, fs);
  if (!spec.zero_phase) return sos_filter(sos, signal, false);
  return sos_filtfilt(sos, signal, 3 * 2 * static_cast<std::size_t>(spec.order));
}

}  // namespace ecgtrust::signals

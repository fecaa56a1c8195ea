#pragma once

#include <array>
#include <span>
#include <vector>

namespace ecgtrust::signals {

/// Butterworth band-pass request. Band edges in Hz; `order` is the order of
/// the analog low-pass prototype, so the digital band-pass has 2*order poles.
struct FilterSpec {
  double lo_hz = 0.5;
  double hi_hz = 45.0;
  int order = 4;
  bool zero_phase = true;

  /// Throws std::invalid_argument unless 0 < lo < hi < fs/2 and order >= 1.
  void validate(double fs) const;
};

/// One biquad, a0 normalized to 1: b0 b1 b2 a1 a2.
struct Biquad {
  double b0, b1, b2, a1, a2;
};

using SosFilter = std::vector<Biquad>;

/// Bilinear transform (with pre-warped band edges) of the analog Butterworth
/// band-pass, factored into second-order sections. Each section is scaled to
/// unit gain at the digital center frequency.
SosFilter design_butter_bandpass(const FilterSpec& spec, double fs);

/// Magnitude |H(e^{j 2 pi f / fs})| of a cascade.
double magnitude_response(const SosFilter& sos, double f_hz, double fs);

/// Causal filtering with the initial state set to the step-response steady
/// state scaled by the first sample (or zero state when `steady_init` is off).
std::vector<double> sos_filter(const SosFilter& sos, std::span<const double> x,
                               bool steady_init = false);

/// Forward-backward filtering with odd reflection padding of `padlen`
/// samples at both ends. Squares the magnitude response, zero phase.
std::vector<double> sos_filtfilt(const SosFilter& sos, std::span<const double> x,
                                 std::size_t padlen);

/// Butterworth band-pass of `signal`; output length equals input length.
std::vector<double> bandpass(std::span<const double> signal, double fs,
                             const FilterSpec& spec);

}  // namespace ecgtrust::signals

#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "ecgtrust/signals.hpp"

namespace ecgtrust::transforms {

/// Row-major real grid.
struct Grid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Grid() = default;
  Grid(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}

  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

/// Morlet CWT settings. Scales are in samples and strictly increasing; the
/// scale a responds to frequency center_freq * fs / a.
struct CwtConfig {
  std::vector<double> scales;
  double center_freq = 1.0;  // cycles per unit scale
  std::size_t out_size = 32;

  /// `n_scales` log-spaced scales covering [f_lo, f_hi] Hz, smallest scale
  /// (highest frequency) first.
  static CwtConfig for_band(double fs, double f_lo = 1.0, double f_hi = 40.0,
                            std::size_t n_scales = 32, double center_freq = 1.0,
                            std::size_t out_size = 32);

  double frequency_of(std::size_t scale_index, double fs) const;
  void validate() const;
};

/// Least-squares linear trend removal.
std::vector<double> detrend_linear(std::span<const double> signal);

/// One-sided spectral energy of the detrended signal pooled into `n_bins`
/// equal-width groups of DFT coefficients. Sums to the time-domain energy.
std::vector<double> spectrum_bin_energy(std::span<const double> signal, std::size_t n_bins);

/// Square root of the pooled bin energies, L2-normalized.
/// Requires signal length >= 2 * n_bins.
std::vector<double> fft_features(std::span<const double> signal, std::size_t n_bins = 128);

/// Vector-Jacobian product of fft_features at `signal`: returns J^T cotangent.
std::vector<double> fft_features_vjp(std::span<const double> signal,
                                     std::span<const double> cotangent,
                                     std::size_t n_bins = 128);

/// |<signal, psi_{a,b}>|^2 on the scale x time grid, before resizing.
Grid cwt_power(std::span<const double> signal, const CwtConfig& config);

/// cwt_power resized to out_size x out_size. All entries >= 0.
Grid cwt_scalogram(std::span<const double> signal, const CwtConfig& config);

/// Align-corners bilinear interpolation to s x s. Requires rows, cols >= 2
/// and s >= 2.
Grid resize_bilinear(const Grid& grid, std::size_t s);

struct FeatureConfig {
  std::size_t time_length = 1000;
  std::size_t n_freq_bins = 128;
  CwtConfig cwt = CwtConfig::for_band(250.0);
};

/// The three modality views of one record.
struct FeatureBundle {
  std::vector<double> time_vec;
  std::vector<double> freq_vec;
  Grid scalogram;
};

/// z-score over the whole signal, then crop or zero-pad to `length`.
std::vector<double> standardize_fit(std::span<const double> signal, std::size_t length);

/// Crop or zero-pad a mask to `length`.
Mask fit_mask(const Mask& mask, std::size_t length);

/// Time view = standardize_fit; frequency view and scalogram are computed from
/// the time view. The scalogram is scaled to a maximum of 1.
FeatureBundle make_features(std::span<const double> preprocessed, const FeatureConfig& config);

/// freq_vec CSV (one row) + scalogram CSV (row-major) + JSON sidecar holding
/// time_vec and shapes. `stem` gets suffixes _freq.csv, _scalogram.csv, .json.
void save_bundle(const FeatureBundle& bundle, const std::filesystem::path& stem);
FeatureBundle load_bundle(const std::filesystem::path& stem);

}  // namespace ecgtrust::transforms

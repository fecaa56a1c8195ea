#pragma once

#include <span>
#include <vector>

namespace ecgtrust::signals {

/// Wavelet shrinkage parameters. A single threshold applies to every detail
/// level.
struct DenoiseSpec {
  int wavelet_levels = 4;
  double threshold = 0.0;
};

/// sign(d) * max(|d| - lambda, 0), elementwise. Throws on lambda < 0.
std::vector<double> soft_threshold(std::span<const double> detail, double lambda);

/// Multi-level orthogonal decomposition: `details[0]` is the finest level.
struct WaveletDecomposition {
  std::vector<double> approx;
  std::vector<std::vector<double>> details;
  std::size_t original_length = 0;
  std::size_t padded_length = 0;
  std::size_t offset = 0;  // position of the first original sample

};

/// Daubechies-4 analysis low-pass filter (8 taps).
std::span<const double> db4_lowpass();

/// Periodized db4 decomposition. The input is symmetrically extended on both
/// sides by at least the coarsest atom's support and up to a multiple of
/// 2^levels, so the periodic wrap never touches the original samples.
/// Requires length >= 2^levels.
WaveletDecomposition dwt_decompose(std::span<const double> signal, int levels);

/// Inverse of dwt_decompose, cropped back to the original length.
std::vector<double> dwt_reconstruct(const WaveletDecomposition& dec);

/// Decompose, soft-threshold every detail level, reconstruct.
std::vector<double> dwt_denoise(std::span<const double> signal, const DenoiseSpec& spec);

}  // namespace ecgtrust::signals

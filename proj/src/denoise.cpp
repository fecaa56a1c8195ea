#include "ecgtrust/denoise.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

namespace ecgtrust::signals {

namespace {

constexpr std::array<double, 8> kDb4Lo = {
    -0.010597401784997278, 0.032883011666982945, 0.030841381835986965,
    -0.18703481171888114,  -0.02798376941698385, 0.6308807679295904,
    0.7148465705525415,    0.23037781330885523};

constexpr std::array<double, 8> make_hi() {
  std::array<double, 8> g{};
  for (std::size_t k = 0; k < 8; ++k) {
    const double s = (k % 2 == 0) ? 1.0 : -1.0;
    g[k] = s * kDb4Lo[7 - k];
  }
  return g;
}

constexpr std::array<double, 8> kDb4Hi = make_hi();

void analysis_step(const std::vector<double>& x, std::vector<double>& approx,
                   std::vector<double>& detail) {
  const std::size_t n = x.size();
  const std::size_t half = n / 2;
  approx.assign(half, 0.0);
  detail.assign(half, 0.0);
  for (std::size_t i = 0; i < half; ++i) {
    double a = 0.0;
    double d = 0.0;
    for (std::size_t k = 0; k < kDb4Lo.size(); ++k) {
      const double v = x[(2 * i + k) % n];
      a += kDb4Lo[k] * v;
      d += kDb4Hi[k] * v;
    }
    approx[i] = a;
    detail[i] = d;
  }
}

std::vector<double> synthesis_step(const std::vector<double>& approx,
                                   const std::vector<double>& detail) {
  const std::size_t half = approx.size();
  const std::size_t n = 2 * half;
  std::vector<double> x(n, 0.0);
  for (std::size_t i = 0; i < half; ++i) {
    for (std::size_t k = 0; k < kDb4Lo.size(); ++k) {
      x[(2 * i + k) % n] += kDb4Lo[k] * approx[i] + kDb4Hi[k] * detail[i];
    }
  }
  return x;
}

}  // namespace

std::span<const double> db4_lowpass() { return kDb4Lo; }

std::vector<double> soft_threshold(std::span<const double> detail, double lambda) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("soft_threshold: lambda must be >= 0");
  std::vector<double> out(detail.size());
  for (std::size_t i = 0; i < detail.size(); ++i) {
    const double mag = std::abs(detail[i]) - lambda;
    out[i] = mag > 0.0 ? std::copysign(mag, detail[i]) : 0.0;
  }
  return out;
}

WaveletDecomposition dwt_decompose(std::span<const double> signal, int levels) {
  if (levels < 1) throw std::invalid_argument("dwt: wavelet_levels must be >= 1");
  if (levels > 30) throw std::invalid_argument("dwt: wavelet_levels too large");
  const std::size_t block = std::size_t{1} << levels;
  if (signal.size() < block) {
    throw std::invalid_argument("dwt: signal length must be >= 2^wavelet_levels");
  }
  const std::size_t n = signal.size();
  const std::size_t margin = (kDb4Lo.size() - 1) * block;
  const std::size_t padded = (n + 2 * margin + block - 1) / block * block;

  // Half-sample symmetric extension, repeated as often as needed.
  auto mirror = [n](long long i) {
    const long long period = 2 * static_cast<long long>(n);
    long long m = ((i % period) + period) % period;
    return static_cast<std::size_t>(m < static_cast<long long>(n) ? m : period - 1 - m);
  };
  std::vector<double> x(padded);
  for (std::size_t i = 0; i < padded; ++i) {
    x[i] = signal[mirror(static_cast<long long>(i) - static_cast<long long>(margin))];
  }

  WaveletDecomposition dec;
  dec.original_length = n;
  dec.padded_length = padded;
  dec.offset = margin;
  std::vector<double> approx;
  std::vector<double> detail;
  for (int level = 0; level < levels; ++level) {
    analysis_step(x, approx, detail);
    dec.details.push_back(detail);
    x = approx;
  }
  dec.approx = std::move(x);
  return dec;
}

std::vector<double> dwt_reconstruct(const WaveletDecomposition& dec) {
  std::vector<double> x = dec.approx;
  for (auto it = dec.details.rbegin(); it != dec.details.rend(); ++it) {
    if (it->size() != x.size()) throw std::invalid_argument("dwt: inconsistent level sizes");
    x = synthesis_step(x, *it);
  }
  if (dec.offset + dec.original_length > x.size()) throw std::invalid_argument("dwt: inconsistent lengths");
  return {x.begin() + static_cast<std::ptrdiff_t>(dec.offset),
          x.begin() + static_cast<std::ptrdiff_t>(dec.offset + dec.original_length)};
}

std::vector<double> dwt_denoise(std::span<const double> signal, const DenoiseSpec& spec) {
  if (!(spec.threshold >= 0.0)) throw std::invalid_argument("dwt_denoise: threshold must be >= 0");
  WaveletDecomposition dec = dwt_decompose(signal, spec.wavelet_levels);
  for (auto& d : dec.details) d = soft_threshold(d, spec.threshold);
  return dwt_reconstruct(dec);
}

}  // namespace ecgtrust::signals

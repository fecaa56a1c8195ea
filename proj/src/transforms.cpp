#include "ecgtrust/transforms.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>

#include "json.hpp"

namespace ecgtrust::transforms {

namespace {

using cplx = std::complex<double>;

// Cached complex DFT plan of one size and direction. Not shared across
// threads: every thread gets its own cache.
class ComplexDft {
 public:
  ComplexDft(std::size_t n, int sign) : n_(n) {
    in_ = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n));
    out_ = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n));
    plan_ = fftw_plan_dft_1d(static_cast<int>(n), in_, out_, sign, FFTW_ESTIMATE);
  }
  ~ComplexDft() {
    fftw_destroy_plan(plan_);
    fftw_free(in_);
    fftw_free(out_);
  }
  ComplexDft(const ComplexDft&) = delete;
  ComplexDft& operator=(const ComplexDft&) = delete;

  std::vector<cplx> run(std::span<const cplx> x) {
    for (std::size_t i = 0; i < n_; ++i) {
      in_[i][0] = x[i].real();
      in_[i][1] = x[i].imag();
    }
    fftw_execute(plan_);
    std::vector<cplx> y(n_);
    for (std::size_t i = 0; i < n_; ++i) y[i] = {out_[i][0], out_[i][1]};
    return y;
  }

 private:
  std::size_t n_;
  fftw_complex* in_ = nullptr;
  fftw_complex* out_ = nullptr;
  fftw_plan plan_ = nullptr;
};

std::vector<cplx> dft(std::span<const cplx> x, int sign) {
  thread_local std::map<std::pair<std::size_t, int>, std::unique_ptr<ComplexDft>> cache;
  auto& slot = cache[{x.size(), sign}];
  if (!slot) slot = std::make_unique<ComplexDft>(x.size(), sign);
  return slot->run(x);
}

std::vector<cplx> to_complex(std::span<const double> x) {
  std::vector<cplx> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = {x[i], 0.0};
  return out;
}

struct BinLayout {
  std::size_t half;                 // number of one-sided coefficients
  std::vector<std::size_t> edges;   // n_bins + 1 edges into [0, half]
  std::vector<double> weights;      // one-sided weight per coefficient
};

BinLayout bin_layout(std::size_t n, std::size_t n_bins) {
  BinLayout L;
  L.half = n / 2 + 1;
  L.edges.resize(n_bins + 1);
  for (std::size_t b = 0; b <= n_bins; ++b) L.edges[b] = b * L.half / n_bins;
  L.weights.assign(L.half, 2.0);
  L.weights[0] = 1.0;
  if (n % 2 == 0) L.weights[L.half - 1] = 1.0;
  return L;
}

void check_fft_input(std::size_t n, std::size_t n_bins) {
  if (n_bins < 1) throw std::invalid_argument("fft_features: n_bins must be >= 1");
  if (n < 2 * n_bins) throw std::invalid_argument("fft_features: signal length must be >= 2 * n_bins");
}

std::vector<double> bin_energy_of_spectrum(const std::vector<cplx>& X, std::size_t n,
                                           const BinLayout& L, std::size_t n_bins) {
  std::vector<double> e(n_bins, 0.0);
  for (std::size_t b = 0; b < n_bins; ++b) {
    for (std::size_t k = L.edges[b]; k < L.edges[b + 1]; ++k) e[b] += L.weights[k] * std::norm(X[k]);
    e[b] /= static_cast<double>(n);
  }
  return e;
}

// Torrence-Compo Morlet in the frequency domain at scale a (samples).
// Residual energy after detrending below this fraction of the input energy
// is treated as round-off, so constant and linear inputs map to zero features.
constexpr double kRelativeEnergyFloor = 1e-24;

double energy_of(std::span<const double> x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return e;
}

double morlet_hat(double omega, double a, double omega0) {
  if (omega <= 0.0) return 0.0;
  const double z = a * omega - omega0;
  return std::sqrt(a) * std::pow(std::numbers::pi, -0.25) * std::sqrt(2.0 * std::numbers::pi) *
         std::exp(-0.5 * z * z);
}

std::string join_row(std::span<const double> v) {
  std::string s;
  char buf[40];
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", v[i]);
    if (i) s += ',';
    s += buf;
  }
  return s;
}

std::vector<double> parse_row(const std::string& line) {
  std::vector<double> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(std::strtod(cell.c_str(), nullptr));
  return out;
}

}  // namespace

CwtConfig CwtConfig::for_band(double fs, double f_lo, double f_hi, std::size_t n_scales,
                              double center_freq, std::size_t out_size) {
  if (!(f_lo > 0.0 && f_lo < f_hi && n_scales >= 2)) {
    throw std::invalid_argument("CwtConfig::for_band: need 0 < f_lo < f_hi and n_scales >= 2");
  }
  CwtConfig c;
  c.center_freq = center_freq;
  c.out_size = out_size;
  c.scales.resize(n_scales);
  const double ratio = std::log(f_hi / f_lo);
  for (std::size_t i = 0; i < n_scales; ++i) {
    const double f = f_hi * std::exp(-ratio * static_cast<double>(i) / static_cast<double>(n_scales - 1));
    c.scales[i] = center_freq * fs / f;
  }
  return c;
}

double CwtConfig::frequency_of(std::size_t scale_index, double fs) const {
  return center_freq * fs / scales.at(scale_index);
}

void CwtConfig::validate() const {
  if (scales.empty()) throw std::invalid_argument("cwt: no scales");
  if (!(center_freq > 0.0)) throw std::invalid_argument("cwt: center_freq must be positive");
  if (out_size < 8) throw std::invalid_argument("cwt: out_size must be >= 8");
  for (std::size_t i = 0; i < scales.size(); ++i) {
    if (!(scales[i] > 0.0)) throw std::invalid_argument("cwt: scales must be positive");
    if (i > 0 && !(scales[i] > scales[i - 1])) {
      throw std::invalid_argument("cwt: scales must be strictly increasing");
    }
  }
}

std::vector<double> detrend_linear(std::span<const double> signal) {
  const std::size_t n = signal.size();
  std::vector<double> out(signal.begin(), signal.end());
  if (n == 0) return out;
  if (n == 1) {
    out[0] = 0.0;
    return out;
  }
  const double tm = 0.5 * static_cast<double>(n - 1);
  double sx = 0.0;
  double stt = 0.0;
  double stx = 0.0;
  for (std::size_t i = 0; i < n; ++i) sx += signal[i];
  const double mean = sx / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) - tm;
    stt += t * t;
    stx += t * (signal[i] - mean);
  }
  const double slope = stx / stt;
  for (std::size_t i = 0; i < n; ++i) out[i] = signal[i] - mean - slope * (static_cast<double>(i) - tm);
  return out;
}

std::vector<double> spectrum_bin_energy(std::span<const double> signal, std::size_t n_bins) {
  check_fft_input(signal.size(), n_bins);
  const std::vector<double> y = detrend_linear(signal);
  const auto X = dft(to_complex(y), FFTW_FORWARD);
  return bin_energy_of_spectrum(X, y.size(), bin_layout(y.size(), n_bins), n_bins);
}

std::vector<double> fft_features(std::span<const double> signal, std::size_t n_bins) {
  std::vector<double> e = spectrum_bin_energy(signal, n_bins);
  double norm = 0.0;
  for (double& v : e) {
    v = std::sqrt(v);
    norm += v * v;
  }
  if (norm <= kRelativeEnergyFloor * energy_of(signal)) return std::vector<double>(n_bins, 0.0);
  norm = std::sqrt(norm);
  for (double& v : e) v /= norm;
  return e;
}

std::vector<double> fft_features_vjp(std::span<const double> signal,
                                     std::span<const double> cotangent, std::size_t n_bins) {
  check_fft_input(signal.size(), n_bins);
  if (cotangent.size() != n_bins) throw std::invalid_argument("fft_features_vjp: cotangent size mismatch");
  const std::size_t n = signal.size();
  const std::vector<double> y = detrend_linear(signal);
  const auto X = dft(to_complex(y), FFTW_FORWARD);
  const BinLayout L = bin_layout(n, n_bins);
  const std::vector<double> energy = bin_energy_of_spectrum(X, n, L, n_bins);

  std::vector<double> e(n_bins);
  double norm = 0.0;
  for (std::size_t b = 0; b < n_bins; ++b) {
    e[b] = std::sqrt(energy[b]);
    norm += energy[b];
  }
  std::vector<double> grad(n, 0.0);
  if (norm <= kRelativeEnergyFloor * energy_of(signal)) return grad;
  norm = std::sqrt(norm);

  double fg = 0.0;
  for (std::size_t b = 0; b < n_bins; ++b) fg += (e[b] / norm) * cotangent[b];
  std::vector<double> e_bar(n_bins);
  for (std::size_t b = 0; b < n_bins; ++b) e_bar[b] = (cotangent[b] - (e[b] / norm) * fg) / norm;

  std::vector<cplx> a(n, cplx{0.0, 0.0});
  for (std::size_t b = 0; b < n_bins; ++b) {
    if (e[b] == 0.0) continue;
    const double energy_bar = e_bar[b] / (2.0 * e[b]);
    for (std::size_t k = L.edges[b]; k < L.edges[b + 1]; ++k) {
      a[k] = L.weights[k] * energy_bar * std::conj(X[k]);
    }
  }
  const auto Z = dft(a, FFTW_FORWARD);
  std::vector<double> y_bar(n);
  for (std::size_t i = 0; i < n; ++i) y_bar[i] = 2.0 * Z[i].real() / static_cast<double>(n);
  // The detrend map is an orthogonal projection, hence self-adjoint.
  return detrend_linear(y_bar);
}

Grid cwt_power(std::span<const double> signal, const CwtConfig& config) {
  config.validate();
  const std::size_t n = signal.size();
  if (n == 0) throw std::invalid_argument("cwt: empty signal");
  const double a_max = config.scales.back();
  if (4.0 * a_max > static_cast<double>(n)) {
    throw std::invalid_argument("cwt: largest scale implies wavelet support longer than the signal");
  }
  std::size_t padded = 1;
  while (padded < n + static_cast<std::size_t>(std::ceil(8.0 * a_max)) + 1) padded <<= 1;

  std::vector<cplx> x(padded, cplx{0.0, 0.0});
  for (std::size_t i = 0; i < n; ++i) x[i] = {signal[i], 0.0};
  const auto X = dft(x, FFTW_FORWARD);

  const double omega0 = 2.0 * std::numbers::pi * config.center_freq;
  Grid power(config.scales.size(), n);
  std::vector<cplx> prod(padded);
  for (std::size_t s = 0; s < config.scales.size(); ++s) {
    const double a = config.scales[s];
    for (std::size_t k = 0; k < padded; ++k) {
      const double omega = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(padded);
      const double w = k <= padded / 2 ? omega : omega - 2.0 * std::numbers::pi;
      prod[k] = X[k] * morlet_hat(w, a, omega0);
    }
    const auto W = dft(prod, FFTW_BACKWARD);
    const double inv = 1.0 / static_cast<double>(padded);
    for (std::size_t t = 0; t < n; ++t) power.at(s, t) = std::norm(W[t] * inv);
  }
  return power;
}

Grid cwt_scalogram(std::span<const double> signal, const CwtConfig& config) {
  Grid p = cwt_power(signal, config);
  if (p.rows < 2 || p.cols < 2) throw std::invalid_argument("cwt: need >= 2 scales and >= 2 samples");
  Grid out = resize_bilinear(p, config.out_size);
  for (double& v : out.values) v = std::max(v, 0.0);
  return out;
}

Grid resize_bilinear(const Grid& grid, std::size_t s) {
  if (s < 2) throw std::invalid_argument("resize_bilinear: output size must be >= 2");
  if (grid.rows < 2 || grid.cols < 2) throw std::invalid_argument("resize_bilinear: input must be at least 2x2");
  if (grid.values.size() != grid.rows * grid.cols) throw std::invalid_argument("resize_bilinear: malformed grid");
  Grid out(s, s);
  const double ry = static_cast<double>(grid.rows - 1) / static_cast<double>(s - 1);
  const double rx = static_cast<double>(grid.cols - 1) / static_cast<double>(s - 1);
  for (std::size_t i = 0; i < s; ++i) {
    const double y = static_cast<double>(i) * ry;
    const std::size_t y0 = std::min(static_cast<std::size_t>(y), grid.rows - 2);
    const double fy = y - static_cast<double>(y0);
    for (std::size_t j = 0; j < s; ++j) {
      const double x = static_cast<double>(j) * rx;
      const std::size_t x0 = std::min(static_cast<std::size_t>(x), grid.cols - 2);
      const double fx = x - static_cast<double>(x0);
      const double top = grid.at(y0, x0) + fx * (grid.at(y0, x0 + 1) - grid.at(y0, x0));
      const double bot = grid.at(y0 + 1, x0) + fx * (grid.at(y0 + 1, x0 + 1) - grid.at(y0 + 1, x0));
      out.at(i, j) = top + fy * (bot - top);
    }
  }
  return out;
}

std::vector<double> standardize_fit(std::span<const double> signal, std::size_t length) {
  const std::size_t n = signal.size();
  double mean = 0.0;
  for (double v : signal) mean += v;
  mean = n ? mean / static_cast<double>(n) : 0.0;
  double var = 0.0;
  for (double v : signal) var += (v - mean) * (v - mean);
  const double sd = n ? std::sqrt(var / static_cast<double>(n)) : 0.0;
  std::vector<double> out(length, 0.0);
  for (std::size_t i = 0; i < std::min(n, length); ++i) {
    out[i] = sd > 0.0 ? (signal[i] - mean) / sd : 0.0;
  }
  return out;
}

Mask fit_mask(const Mask& mask, std::size_t length) {
  Mask out(length, 0);
  std::copy_n(mask.begin(), std::min(mask.size(), length), out.begin());
  return out;
}

FeatureBundle make_features(std::span<const double> preprocessed, const FeatureConfig& config) {
  FeatureBundle b;
  b.time_vec = standardize_fit(preprocessed, config.time_length);
  b.freq_vec = fft_features(b.time_vec, config.n_freq_bins);
  b.scalogram = cwt_scalogram(b.time_vec, config.cwt);
  double peak = 0.0;
  for (double v : b.scalogram.values) peak = std::max(peak, v);
  if (peak > 0.0) {
    for (double& v : b.scalogram.values) v /= peak;
  }
  return b;
}

void save_bundle(const FeatureBundle& bundle, const std::filesystem::path& stem) {
  const std::string base = stem.string();
  {
    std::ofstream f(base + "_freq.csv");
    if (!f) throw std::runtime_error("cannot write " + base + "_freq.csv");
    f << join_row(bundle.freq_vec) << '\n';
  }
  {
    std::ofstream f(base + "_scalogram.csv");
    if (!f) throw std::runtime_error("cannot write " + base + "_scalogram.csv");
    for (std::size_t r = 0; r < bundle.scalogram.rows; ++r) {
      f << join_row(std::span<const double>(bundle.scalogram.values.data() + r * bundle.scalogram.cols,
                                            bundle.scalogram.cols))
        << '\n';
    }
  }
  nlohmann::json meta;
  meta["time_vec"] = bundle.time_vec;
  meta["n_freq_bins"] = bundle.freq_vec.size();
  meta["scalogram_rows"] = bundle.scalogram.rows;
  meta["scalogram_cols"] = bundle.scalogram.cols;
  std::ofstream f(base + ".json");
  if (!f) throw std::runtime_error("cannot write " + base + ".json");
  f << meta.dump() << '\n';
}

FeatureBundle load_bundle(const std::filesystem::path& stem) {
  const std::string base = stem.string();
  std::ifstream meta_in(base + ".json");
  if (!meta_in) throw std::runtime_error("cannot read " + base + ".json");
  const nlohmann::json meta = nlohmann::json::parse(meta_in);
  FeatureBundle b;
  b.time_vec = meta.at("time_vec").get<std::vector<double>>();

  std::ifstream fq(base + "_freq.csv");
  std::string line;
  if (!fq || !std::getline(fq, line)) throw std::runtime_error("cannot read " + base + "_freq.csv");
  b.freq_vec = parse_row(line);
  if (b.freq_vec.size() != meta.at("n_freq_bins").get<std::size_t>()) {
    throw std::runtime_error("frequency vector length mismatch in " + base);
  }

  const auto rows = meta.at("scalogram_rows").get<std::size_t>();
  const auto cols = meta.at("scalogram_cols").get<std::size_t>();
  b.scalogram = Grid(rows, cols);
  std::ifstream fs(base + "_scalogram.csv");
  if (!fs) throw std::runtime_error("cannot read " + base + "_scalogram.csv");
  for (std::size_t r = 0; r < rows; ++r) {
    if (!std::getline(fs, line)) throw std::runtime_error("truncated scalogram in " + base);
    const auto row = parse_row(line);
    if (row.size() != cols) throw std::runtime_error("scalogram row width mismatch in " + base);
    std::copy(row.begin(), row.end(), b.scalogram.values.begin() + static_cast<std::ptrdiff_t>(r * cols));
  }
  return b;
}

}  // namespace ecgtrust::transforms

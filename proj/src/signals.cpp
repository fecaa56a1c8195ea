#include "ecgtrust/signals.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "ecgtrust/rng.hpp"

namespace ecgtrust {

std::string_view class_name(EcgClass c) {
  switch (c) {
    case EcgClass::Normal: return "Normal";
    case EcgClass::STEMI: return "STEMI";
    case EcgClass::HistoryMI: return "HistoryMI";
    case EcgClass::AbnormalHB: return "AbnormalHB";
  }
  return "Unknown";
}

EcgClass parse_class(std::string_view name) {
  for (int c = 0; c < kNumClasses; ++c) {
    if (class_name(static_cast<EcgClass>(c)) == name) return static_cast<EcgClass>(c);
  }
  throw std::invalid_argument("unknown class label: " + std::string(name));
}

}  // namespace ecgtrust

namespace ecgtrust::signals {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Bump {
  double center;  // seconds relative to the R peak
  double amp;     // mV
  double sigma;   // seconds
};

double gauss(double t, const Bump& b) {
  const double z = (t - b.center) / b.sigma;
  return b.amp * std::exp(-0.5 * z * z);
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

std::size_t to_index(double t, double fs, std::size_t n) {
  const double idx = std::round(t * fs);
  if (idx < 0.0) return 0;
  return std::min(static_cast<std::size_t>(idx), n - 1);
}

}  // namespace

EcgRecord synth_ecg(EcgClass label, double fs, int n_beats, std::uint64_t seed,
                    const SynthParams& params) {
  if (n_beats < 1) throw std::invalid_argument("synth_ecg: n_beats must be >= 1");
  if (!(fs >= 100.0)) throw std::invalid_argument("synth_ecg: fs must be >= 100 Hz");

  Rng rng(seed, static_cast<std::uint64_t>(label) + 1);
  const double scale = rng.uniform(0.8, 1.2);
  const double mean_rr = params.nominal_rr_s * rng.uniform(0.9, 1.1);
  const double spread =
      label == EcgClass::AbnormalHB ? params.irregular_rr_spread : params.normal_rr_jitter;

  std::vector<double> rr(static_cast<std::size_t>(n_beats));
  for (double& r : rr) r = std::clamp(mean_rr * (1.0 + spread * rng.normal()), 0.66, 1.3);

  const double t0 = 0.3;
  double duration = t0;
  for (double r : rr) duration += r;
  const auto n = static_cast<std::size_t>(std::llround(fs * duration));

  EcgRecord rec;
  rec.fs = fs;
  rec.label = label;
  rec.seed = seed;
  rec.samples.assign(n, 0.0);
  rec.stt_mask.assign(n, 0);

  double r_time = t0;
  for (int b = 0; b < n_beats; ++b) {
    const double beat_rr = rr[static_cast<std::size_t>(b)];
    const double jitter = 1.0 + 0.03 * rng.normal();
    const double qt_scale = std::sqrt(std::clamp(beat_rr, 0.66, 1.3) / 0.8);

    double r_sigma = 0.010;
    double r_amp = 1.0;
    if (label == EcgClass::HistoryMI) {
      // Wider R with preserved area, so the low-frequency shape is unchanged.
      r_sigma = 0.0115;
      r_amp = 0.010 / r_sigma;
    }
    const double t_center = 0.28 * qt_scale;
    const double t_amp = label == EcgClass::STEMI ? 0.45 : 0.30;
    std::vector<Bump> bumps = {
        {-0.20, 0.15, 0.025},      // P
        {-0.035, -0.12, 0.008},    // Q
        {0.0, r_amp, r_sigma},     // R
        {0.035, -0.25, 0.009},     // S
        {t_center, t_amp, 0.045},  // T
    };
    if (label == EcgClass::HistoryMI) {
      for (double where : {-0.018, 0.022}) {
        const double a = params.notch_amplitude_mv * rng.uniform(0.7, 1.3);
        bumps.push_back({where, a, 0.0035});
        bumps.push_back({where + 0.008, -a, 0.0035});
      }
    }

    const double p_onset = -0.20 - 2.5 * 0.025;
    const double qrs_onset = -0.035 - 2.5 * 0.008;
    const double j_point = 0.035 + 2.5 * 0.009;
    const double t_end = t_center + 2.5 * 0.045;

    const double lo = r_time + p_onset - 0.1;
    const double hi = r_time + t_end + 0.1;
    const std::size_t i_lo = to_index(std::max(lo, 0.0), fs, n);
    const std::size_t i_hi = to_index(hi, fs, n);
    for (std::size_t i = i_lo; i <= i_hi; ++i) {
      const double t = static_cast<double>(i) / fs - r_time;
      double v = 0.0;
      for (const Bump& bump : bumps) v += gauss(t, bump);
      if (label == EcgClass::STEMI) {
        v += params.st_elevation_mv * sigmoid((t - j_point) / 0.006) *
             sigmoid((t_end - 0.03 - t) / 0.012);
      }
      rec.samples[i] += scale * jitter * v;
    }

    BeatFiducials f;
    f.p_onset = to_index(r_time + p_onset, fs, n);
    f.qrs_onset = to_index(r_time + qrs_onset, fs, n);
    f.qrs_offset = to_index(r_time + j_point, fs, n);
    f.t_end = to_index(r_time + t_end, fs, n);
    for (std::size_t i = f.qrs_offset; i <= f.t_end; ++i) rec.stt_mask[i] = 1;
    rec.beats.push_back(f);
    r_time += beat_rr;
  }

  // Additive interference: white noise, slow drift, high-frequency tones.
  struct Tone {
    double freq, amp, phase;
  };
  std::vector<Tone> tones;
  for (int k = 0; k < 2; ++k) {
    tones.push_back({rng.uniform(0.05, 0.3), params.wander_mv * rng.uniform(0.5, 1.0),
                     rng.uniform(0.0, kTwoPi)});
  }
  const double hf_top = std::min(100.0, 0.45 * fs);
  const double hf_bottom = std::min(60.0, 0.8 * hf_top);
  for (int k = 0; k < 3; ++k) {
    tones.push_back({rng.uniform(hf_bottom, hf_top), params.hf_noise_mv / std::sqrt(1.5),
                     rng.uniform(0.0, kTwoPi)});
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs;
    double v = params.white_noise_mv * rng.normal();
    for (const Tone& tone : tones) v += tone.amp * std::sin(kTwoPi * tone.freq * t + tone.phase);
    rec.samples[i] += v;
  }
  return rec;
}

std::vector<double> image_to_signal(std::span<const double> grid, std::size_t rows,
                                    std::size_t cols) {
  if (rows == 0 || cols == 0) throw std::invalid_argument("image_to_signal: empty matrix");
  if (grid.size() != rows * cols) {
    throw std::invalid_argument("image_to_signal: grid size does not match rows x cols");
  }
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += grid[r * cols + c];
    out[r] = s / static_cast<double>(cols);
  }
  return out;
}

std::vector<double> make_noise(const EcgRecord& record, const NoiseSpec& spec) {
  if (!(spec.amplitude >= 0.0)) throw std::invalid_argument("inject_noise: amplitude must be >= 0");
  const std::size_t n = record.samples.size();
  std::vector<double> noise(n, 0.0);
  if (spec.amplitude == 0.0 || n == 0) return noise;
  Rng rng(spec.seed, 0x4E4F495345ULL + static_cast<std::uint64_t>(spec.kind));

  switch (spec.kind) {
    case NoiseKind::Gaussian: {
      double ps = 0.0;
      double pn = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        noise[i] = rng.normal();
        ps += record.samples[i] * record.samples[i];
        pn += noise[i] * noise[i];
      }
      const double target = ps / std::pow(10.0, spec.snr_db / 10.0);
      const double k = pn > 0.0 ? std::sqrt(target / pn) * spec.amplitude : 0.0;
      for (double& v : noise) v *= k;
      break;
    }
    case NoiseKind::BaselineWander: {
      if (!(spec.wander_hz > 0.0 && spec.wander_hz < record.fs / 2.0)) {
        throw std::invalid_argument("inject_noise: wander_hz must lie in (0, fs/2)");
      }
      const double phase = rng.uniform(0.0, kTwoPi);
      for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / record.fs;
        noise[i] = spec.amplitude * std::sin(kTwoPi * spec.wander_hz * t + phase);
      }
      break;
    }
    case NoiseKind::Muscle: {
      if (!(spec.band_lo_hz > 0.0 && spec.band_lo_hz < spec.band_hi_hz &&
            spec.band_hi_hz < record.fs / 2.0)) {
        throw std::invalid_argument("inject_noise: muscle band must satisfy 0 < lo < hi < fs/2");
      }
      std::vector<double> white(n);
      for (double& v : white) v = rng.normal();
      FilterSpec fspec{spec.band_lo_hz, spec.band_hi_hz, 4, true};
      noise = bandpass(white, record.fs, fspec);
      double pn = 0.0;
      for (double v : noise) pn += v * v;
      const double rms = std::sqrt(pn / static_cast<double>(n));
      const double k = rms > 0.0 ? spec.amplitude / rms : 0.0;
      for (double& v : noise) v *= k;
      break;
    }
  }
  return noise;
}

EcgRecord inject_noise(const EcgRecord& record, const NoiseSpec& spec) {
  const std::vector<double> noise = make_noise(record, spec);
  EcgRecord out = record;
  for (std::size_t i = 0; i < out.samples.size(); ++i) out.samples[i] += noise[i];
  return out;
}

namespace {

// Zigzag turning points: a reversal counts once the signal has retraced at
// least `floor` from the running extremum.
int count_turns(std::span<const double> x, double floor) {
  if (x.size() < 3 || floor <= 0.0) return 0;
  int turns = 0;
  int dir = 0;  // +1 rising, -1 falling, 0 undecided
  double extreme = x[0];
  double anchor = x[0];
  for (std::size_t i = 1; i < x.size(); ++i) {
    const double v = x[i];
    if (dir == 0) {
      if (v - anchor >= floor) {
        dir = 1;
        extreme = v;
      } else if (anchor - v >= floor) {
        dir = -1;
        extreme = v;
      }
    } else if (dir > 0) {
      if (v > extreme) {
        extreme = v;
      } else if (extreme - v >= floor) {
        ++turns;
        dir = -1;
        extreme = v;
      }
    } else {
      if (v < extreme) {
        extreme = v;
      } else if (v - extreme >= floor) {
        ++turns;
        dir = 1;
        extreme = v;
      }
    }
  }
  return turns;
}

}  // namespace

QrsHfMetrics qrs_hf_metrics(const EcgRecord& record) {
  if (record.beats.empty()) throw std::invalid_argument("qrs_hf_metrics: no QRS fiducials");
  if (!(record.fs >= 200.0)) throw std::invalid_argument("qrs_hf_metrics: fs must be >= 200 Hz");
  const auto& x = record.samples;

  QrsHfMetrics m;
  const std::vector<double> band_a = bandpass(x, record.fs, FilterSpec{30.0, 45.0, 4, true});
  const std::vector<double> band_b = bandpass(x, record.fs, FilterSpec{45.0, 90.0, 4, true});
  double sa = 0.0;
  double sb = 0.0;
  std::size_t count = 0;
  for (const BeatFiducials& beat : record.beats) {
    if (beat.qrs_offset >= x.size() || beat.qrs_onset > beat.qrs_offset) {
      throw std::invalid_argument("qrs_hf_metrics: QRS window out of bounds");
    }
    for (std::size_t i = beat.qrs_onset; i <= beat.qrs_offset; ++i) {
      sa += band_a[i] * band_a[i];
      sb += band_b[i] * band_b[i];
      ++count;
    }
    std::span<const double> win(x.data() + beat.qrs_onset, beat.qrs_offset - beat.qrs_onset + 1);
    const double base = win.front();
    double r_amp = 0.0;
    for (double v : win) r_amp = std::max(r_amp, std::abs(v - base));
    const int turns = count_turns(win, kNotchProminence * r_amp);
    m.notch_count += std::max(0, turns - 3) / 2;
  }
  m.rms_30_45 = std::sqrt(sa / static_cast<double>(count));
  m.rms_45_90 = std::sqrt(sb / static_cast<double>(count));
  return m;
}

std::filesystem::path sidecar_path(const std::filesystem::path& csv_path) {
  std::filesystem::path p = csv_path;
  p.replace_extension(".json");
  return p;
}

void save_record(const EcgRecord& record, const std::filesystem::path& csv_path) {
  std::ofstream csv(csv_path);
  if (!csv) throw std::runtime_error("cannot write " + csv_path.string());
  csv << "t_sec,mv,stt_mask\n";
  char buf[96];
  for (std::size_t i = 0; i < record.samples.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%d\n", static_cast<double>(i) / record.fs,
                  record.samples[i], record.stt_mask.empty() ? 0 : int(record.stt_mask[i] != 0));
    csv << buf;
  }
  if (!csv) throw std::runtime_error("write failed: " + csv_path.string());

  nlohmann::json meta;
  meta["fs"] = record.fs;
  meta["label"] = std::string(class_name(record.label));
  meta["seed"] = record.seed;
  meta["n_samples"] = record.samples.size();
  nlohmann::json fid = nlohmann::json::array();
  for (const auto& b : record.beats) {
    fid.push_back({b.p_onset, b.qrs_onset, b.qrs_offset, b.t_end});
  }
  meta["fiducials"] = fid;
  std::ofstream side(sidecar_path(csv_path));
  if (!side) throw std::runtime_error("cannot write " + sidecar_path(csv_path).string());
  side << meta.dump(2) << '\n';
}

EcgRecord load_record(const std::filesystem::path& csv_path) {
  std::ifstream side(sidecar_path(csv_path));
  if (!side) throw std::runtime_error("cannot read " + sidecar_path(csv_path).string());
  const nlohmann::json meta = nlohmann::json::parse(side);

  EcgRecord rec;
  rec.fs = meta.at("fs").get<double>();
  rec.label = parse_class(meta.at("label").get<std::string>());
  rec.seed = meta.at("seed").get<std::uint64_t>();
  for (const auto& f : meta.at("fiducials")) {
    rec.beats.push_back({f.at(0).get<std::size_t>(), f.at(1).get<std::size_t>(),
                         f.at(2).get<std::size_t>(), f.at(3).get<std::size_t>()});
  }

  std::ifstream csv(csv_path);
  if (!csv) throw std::runtime_error("cannot read " + csv_path.string());
  std::string line;
  std::getline(csv, line);
  if (line != "t_sec,mv,stt_mask") throw std::runtime_error("unexpected header in " + csv_path.string());
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos) {
      throw std::runtime_error("malformed row in " + csv_path.string());
    }
    rec.samples.push_back(std::strtod(line.c_str() + c1 + 1, nullptr));
    rec.stt_mask.push_back(static_cast<std::uint8_t>(line[c2 + 1] == '1'));
  }
  if (rec.samples.size() != meta.at("n_samples").get<std::size_t>()) {
    throw std::runtime_error("sample count mismatch in " + csv_path.string());
  }
  return rec;
}

}  // namespace ecgtrust::signals

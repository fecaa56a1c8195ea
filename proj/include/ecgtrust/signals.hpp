#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ecgtrust/denoise.hpp"
#include "ecgtrust/filters.hpp"

namespace ecgtrust {

enum class EcgClass : int { Normal = 0, STEMI = 1, HistoryMI = 2, AbnormalHB = 3 };

inline constexpr int kNumClasses = 4;

std::string_view class_name(EcgClass c);
EcgClass parse_class(std::string_view name);

/// One byte per sample; non-zero means "inside".
using Mask = std::vector<std::uint8_t>;

}  // namespace ecgtrust

namespace ecgtrust::signals {

/// Sample indices of one beat's landmarks; qrs_offset is the J-point.
struct BeatFiducials {
  std::size_t p_onset = 0;
  std::size_t qrs_onset = 0;
  std::size_t qrs_offset = 0;
  std::size_t t_end = 0;
};

struct EcgRecord {
  std::vector<double> samples;  // mV
  double fs = 250.0;
  EcgClass label = EcgClass::Normal;
  std::vector<BeatFiducials> beats;
  Mask stt_mask;  // true on [J-point, T end] of every beat
  std::uint64_t seed = 0;
};

/// Morphology knobs for the generator. Defaults give a moderately noisy but
/// learnable four-class problem.
struct SynthParams {
  double st_elevation_mv = 0.25;
  double nominal_rr_s = 0.8;
  double normal_rr_jitter = 0.02;    // relative sd of RR for regular rhythms
  double irregular_rr_spread = 0.22; // relative sd of RR for AbnormalHB
  double notch_amplitude_mv = 0.18;  // fragmented-QRS deflections (HistoryMI)
  double white_noise_mv = 0.02;
  double wander_mv = 0.10;           // random low-frequency drift
  double hf_noise_mv = 0.03;         // 60-100 Hz interference
};

/// Deterministic synthetic single-lead record built from Gaussian P,Q,R,S,T
/// bumps laid on an RR grid. Throws on n_beats == 0 or fs < 100.
EcgRecord synth_ecg(EcgClass label, double fs, int n_beats, std::uint64_t seed,
                    const SynthParams& params = {});

/// Column means of an H x W row-major grid (one output per row).
std::vector<double> image_to_signal(std::span<const double> grid, std::size_t rows,
                                    std::size_t cols);

enum class NoiseKind { Gaussian, BaselineWander, Muscle };

struct NoiseSpec {
  NoiseKind kind = NoiseKind::Gaussian;
  double snr_db = 15.0;       // Gaussian
  double wander_hz = 0.15;    // BaselineWander
  double band_lo_hz = 20.0;   // Muscle
  double band_hi_hz = 50.0;   // Muscle
  double amplitude = 1.0;     // Gaussian: multiplier on the SNR-scaled noise; others: mV (peak / RMS)
  std::uint64_t seed = 0;
};

/// Returns the additive noise component that inject_noise would add.
std::vector<double> make_noise(const EcgRecord& record, const NoiseSpec& spec);

/// Adds noise; everything except `samples` is carried over untouched.
EcgRecord inject_noise(const EcgRecord& record, const NoiseSpec& spec);

struct QrsHfMetrics {
  int notch_count = 0;
  double rms_30_45 = 0.0;
  double rms_45_90 = 0.0;
};

/// Relative prominence floor (fraction of R amplitude) for notch counting.
inline constexpr double kNotchProminence = 0.05;

/// Fragmentation count and band-limited RMS inside the QRS windows.
/// Notches are counted as extra local extrema beyond the Q-R-S triplet of a
/// beat, two extrema per notch. Requires fs >= 200 and at least one beat.
QrsHfMetrics qrs_hf_metrics(const EcgRecord& record);

/// Columnar CSV (t_sec, mv, stt_mask) plus JSON sidecar with the metadata.
void save_record(const EcgRecord& record, const std::filesystem::path& csv_path);
EcgRecord load_record(const std::filesystem::path& csv_path);

/// Path of the JSON sidecar belonging to a record CSV.
std::filesystem::path sidecar_path(const std::filesystem::path& csv_path);

}  // namespace ecgtrust::signals

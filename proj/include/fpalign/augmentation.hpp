#pragma once

// Deterministic audio degradations for building evaluation query sets.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fpalign/audio.hpp"
#include "fpalign/random.hpp"
#include "json.hpp"

namespace fpalign {

/// Pitch-preserving WSOLA. `rate` is the speed factor in [0.5, 2]; the
/// output has round(N / rate) samples.
AudioBuffer time_stretch(const AudioBuffer& audio, double rate);

/// Shifts pitch by `semitones` (|s| <= 12) keeping the length.
AudioBuffer pitch_shift(const AudioBuffer& audio, double semitones);

enum class FilterMode { LowPass, HighPass, BandPass };

/// Butterworth (Q = 1/sqrt(2)) biquad sections. Low-pass uses `f_hi`,
/// high-pass uses `f_lo`, band-pass cascades high-pass(f_lo) and low-pass(f_hi).
AudioBuffer biquad_filter(const AudioBuffer& audio, FilterMode mode, double f_lo, double f_hi);

/// Loops or truncates `noise` to the signal length and mixes it at `snr_db`.
AudioBuffer add_noise_snr(const AudioBuffer& audio, const AudioBuffer& noise, double snr_db);

/// (1 - w) * dry + w * (x conv rir) for w < 1, w * (x conv rir) for w >= 1,
/// truncated to the input length.
AudioBuffer convolve_rir(const AudioBuffer& audio, const AudioBuffer& rir, double wet_gain);

/// out[n] = in[n] + decay * in[n - delay], delay_ms in [10, 1000].
AudioBuffer echo(const AudioBuffer& audio, double delay_ms, double decay = 0.5);

enum class AugmentationKind {
  None,
  TimeStretch,
  PitchShift,
  TimeAndPitch,
  Noise,
  Reverb,
  ReverbNoise,
  BandPass,
  HighPass,
  LowPass,
  Echo,
};

std::string to_string(AugmentationKind kind);
AugmentationKind parse_augmentation_kind(const std::string& name);

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct AugmentationSpec {
  std::string name;  // condition label; defaults to the kind name
  AugmentationKind kind = AugmentationKind::None;
  Range stretch{0.7, 1.5};
  Range semitones{-5.0, 5.0};
  std::vector<double> snr_db{0.0, 5.0, 10.0, 20.0};
  Range wet_gain{0.1, 1.5};
  Range band_pass{300.0, 1800.0};
  Range high_pass_cutoff{1800.0, 3400.0};
  Range low_pass_cutoff{300.0, 1500.0};
  Range echo_delay_ms{100.0, 200.0};
  double echo_decay = 0.5;
  std::optional<std::filesystem::path> noise_dir;
  std::optional<std::filesystem::path> rir_dir;
  std::uint64_t seed = 0;  // mixed into the run seed

  const std::string& label() const { return name; }
};

void from_json(const nlohmann::json& j, AugmentationSpec& spec);
void to_json(nlohmann::json& j, const AugmentationSpec& spec);

/// JSON list of AugmentationSpec objects.
std::vector<AugmentationSpec> read_condition_file(const std::filesystem::path& path);

/// Noise and RIR material for a spec: WAVs from the configured
/// directories, or seeded synthetic material when none is configured.
class AugmentationSources {
 public:
  AugmentationSources(const AugmentationSpec& spec, double sample_rate, std::uint64_t seed);

  const AudioBuffer& noise(Rng& rng) const;
  const AudioBuffer& rir(Rng& rng) const;

 private:
  std::vector<AudioBuffer> noises_;
  std::vector<AudioBuffer> rirs_;
};

struct AppliedAugmentation {
  AudioBuffer audio;
  /// Reference seconds per output second (the time-stretch rate, 1 otherwise).
  double speed = 1.0;
  nlohmann::ordered_json params;
};

/// Draws parameters from the spec's ranges with `rng` and applies them.
AppliedAugmentation apply_augmentation(const AudioBuffer& audio, const AugmentationSpec& spec,
                                       const AugmentationSources& sources, Rng& rng);

enum class QuerySetMode { Track, Segment };

struct QuerySetOptions {
  QuerySetMode mode = QuerySetMode::Track;
  std::size_t n_per_condition = 10;
  double segment_seconds = 10.0;
  std::uint64_t seed = 0;
  std::size_t max_snippets = 3;
  double crossfade_seconds = 0.5;
  WavEncoding encoding = WavEncoding::Float32;
};

struct QuerySetResult {
  std::vector<std::filesystem::path> queries;
  std::filesystem::path manifest;      // track mode: query manifest; segment mode: query list
  std::filesystem::path ground_truth;  // segment mode only
  std::vector<std::string> warnings;
};

/// Writes distorted query WAVs plus manifests into `out_dir`.
/// Track mode: one excerpt per query and `manifest.csv`
/// (query_path,truth_track_id,condition). Segment mode: 1..max_snippets
/// excerpts from distinct references joined by equal-power crossfades,
/// `queries.csv` plus `ground_truth.csv` in the annotation schema.
QuerySetResult make_query_set(const std::filesystem::path& reference_dir,
                              std::span<const AugmentationSpec> conditions,
                              const QuerySetOptions& options, const std::filesystem::path& out_dir);

/// Regular files in `dir` with the given extension, sorted by path.
std::vector<std::filesystem::path> list_files(const std::filesystem::path& dir,
                                              const std::string& extension);

}  // namespace fpalign

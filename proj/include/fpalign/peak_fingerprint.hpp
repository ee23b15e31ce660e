#pragma once

// Spectral-peak constellation fingerprints: peaks of an STFT magnitude,
// paired into (f1, f2, dt) landmark hashes, matched by offset voting.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fpalign/audio.hpp"

namespace fpalign {

struct Spectrogram {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<float> magnitude;  // frames x bins, row-major

  float at(std::size_t frame, std::size_t bin) const { return magnitude[frame * bins + bin]; }
};

/// Hann-windowed STFT magnitudes. Frame f covers samples [f*hop, f*hop + n_fft).
Spectrogram stft_magnitude(std::span<const float> samples, double sample_rate,
                           std::size_t n_fft = 1024, std::size_t hop = 512);

struct SpectralPeak {
  std::uint32_t frame = 0;
  std::uint32_t bin = 0;
  float magnitude = 0.0f;
};

struct PeakParams {
  std::uint32_t freq_neighborhood = 15;  // bins on each side
  std::uint32_t time_neighborhood = 7;   // frames on each side
  std::size_t max_per_frame = 5;
  double min_magnitude_quantile = 0.7;
  double relative_floor_db = -80.0;  // below the loudest bin
};

/// Local maxima over the neighborhood that exceed the spectrogram's
/// magnitude quantile. Sorted by (frame, bin).
std::vector<SpectralPeak> pick_peaks(const Spectrogram& spec, const PeakParams& params = {});

struct LandmarkParams {
  std::size_t fan_out = 5;
  std::uint32_t min_dt = 1;
  std::uint32_t max_dt = 63;
};

struct Landmark {
  std::uint32_t key = 0;
  std::uint32_t t1_frames = 0;
};

struct LandmarkFields {
  std::uint32_t f1 = 0;  // < 1024
  std::uint32_t f2 = 0;  // < 1024
  std::uint32_t dt = 0;  // in (0, 4096)
  bool operator==(const LandmarkFields&) const = default;
};

std::uint32_t pack_landmark(const LandmarkFields& fields);
LandmarkFields unpack_landmark(std::uint32_t key);

/// `peaks` must be sorted by (frame, bin).
std::vector<Landmark> make_landmarks(std::span<const SpectralPeak> peaks,
                                     const LandmarkParams& params = {});

struct PeakConfig {
  std::uint32_t sample_rate = 16000;
  std::uint32_t n_fft = 1024;
  std::uint32_t hop = 512;
  PeakParams peaks;
  LandmarkParams landmarks;

  double hop_seconds() const { return static_cast<double>(hop) / sample_rate; }
};

/// STFT, peak picking and landmark hashing in one call. Signals shorter
/// than one FFT frame produce no landmarks.
std::vector<Landmark> extract_landmarks(std::span<const float> samples, const PeakConfig& config);

struct PeakTrack {
  std::string track_id;
  AudioBuffer audio;
};

struct PeakMatchResult {
  std::string track_id;
  std::int64_t offset_frames = 0;
  double offset_seconds = 0.0;
  std::uint32_t vote_count = 0;
};

/// Landmark multimap stored as (key, track, t1) triples sorted by key.
class PeakDB {
 public:
  struct Entry {
    std::uint32_t key = 0;
    std::uint32_t track_ref = 0;
    std::uint32_t t1 = 0;
    auto operator<=>(const Entry&) const = default;
  };

  PeakDB() = default;
  explicit PeakDB(PeakConfig config) : config_(config) {}

  const PeakConfig& config() const { return config_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<std::string>& tracks() const { return tracks_; }
  std::span<const Entry> lookup(std::uint32_t key) const;

  void save(const std::filesystem::path& path) const;
  static PeakDB load(const std::filesystem::path& path);

 private:
  friend PeakDB build_peak_db(std::span<const PeakTrack>, const PeakConfig&);

  PeakConfig config_;
  std::vector<std::string> tracks_;
  std::vector<Entry> entries_;
};

/// All tracks must share config.sample_rate (Error(Parameter) otherwise).
PeakDB build_peak_db(std::span<const PeakTrack> tracks, const PeakConfig& config = {});

/// Ranked by best offset-bin vote count, then track id.
std::vector<PeakMatchResult> match_peaks(const PeakDB& db, std::span<const float> query,
                                         double sample_rate);

}  // namespace fpalign

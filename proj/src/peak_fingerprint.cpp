#include "fpalign/peak_fingerprint.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <cmath>
#include <deque>
#include <unordered_map>

#include "fpalign/binary_io.hpp"
#include "fpalign/error.hpp"
#include "fpalign/parallel.hpp"
#include "fpalign/spectrum.hpp"

namespace fpalign {

namespace {

constexpr std::string_view kPeakDbMagic = "AFPH";
constexpr std::uint16_t kPeakDbVersion = 1;

// Sliding maximum over a window of +-radius along a strided line.
void sliding_max(const float* in, float* out, std::size_t n, std::size_t stride, std::size_t radius) {
  std::deque<std::size_t> window;  // indices with decreasing values
  std::size_t next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t hi = std::min(n - 1, i + radius);
    for (; next <= hi; ++next) {
      while (!window.empty() && in[window.back() * stride] <= in[next * stride]) window.pop_back();
      window.push_back(next);
    }
    while (window.front() + radius < i) window.pop_front();
    out[i * stride] = in[window.front() * stride];
  }
}

double quantile(std::vector<float> values, double q) {
  if (values.empty()) return 0.0;
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(values.size() - 1, lo + 1);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
  const double vlo = values[lo];
  if (hi == lo) return vlo;
  const double vhi = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(lo) + 1, values.end());
  return vlo + (pos - static_cast<double>(lo)) * (vhi - vlo);
}

}  // namespace

Spectrogram stft_magnitude(std::span<const float> samples, double sample_rate, std::size_t n_fft,
                           std::size_t hop) {
  if (!(sample_rate > 0.0)) throw Error(ErrorKind::Parameter, "sample rate must be positive");
  if (n_fft < 2 || hop == 0) throw Error(ErrorKind::Parameter, "n_fft must be >= 2 and hop >= 1");
  if (samples.size() < n_fft) {
    throw Error(ErrorKind::Parameter,
                fmt::format("signal of {} samples is shorter than n_fft = {}", samples.size(), n_fft));
  }
  Spectrogram spec;
  spec.frames = 1 + (samples.size() - n_fft) / hop;
  spec.bins = n_fft / 2 + 1;
  spec.magnitude.resize(spec.frames * spec.bins);

  const auto window = hann_window(n_fft);
  RealFft fft(n_fft);
  std::vector<double> frame(n_fft);
  for (std::size_t f = 0; f < spec.frames; ++f) {
    const float* src = samples.data() + f * hop;
    for (std::size_t i = 0; i < n_fft; ++i) frame[i] = src[i] * window[i];
    fft.magnitude(frame, std::span<float>(spec.magnitude).subspan(f * spec.bins, spec.bins));
  }
  return spec;
}

std::vector<SpectralPeak> pick_peaks(const Spectrogram& spec, const PeakParams& params) {
  std::vector<SpectralPeak> peaks;
  if (spec.frames == 0 || spec.bins == 0) return peaks;

  const float global_max = *std::max_element(spec.magnitude.begin(), spec.magnitude.end());
  if (!(global_max > 0.0f)) return peaks;
  // Peaks must clear both the magnitude quantile and a floor relative to the
  // loudest bin; the floor keeps round-off noise in silent bands out.
  const double floor = global_max * std::pow(10.0, params.relative_floor_db / 20.0);
  const double threshold = std::max(quantile(spec.magnitude, params.min_magnitude_quantile), floor);

  std::vector<float> freq_max(spec.magnitude.size());
  for (std::size_t f = 0; f < spec.frames; ++f) {
    sliding_max(spec.magnitude.data() + f * spec.bins, freq_max.data() + f * spec.bins, spec.bins, 1,
                params.freq_neighborhood);
  }
  std::vector<float> local_max(spec.magnitude.size());
  for (std::size_t b = 0; b < spec.bins; ++b) {
    sliding_max(freq_max.data() + b, local_max.data() + b, spec.frames, spec.bins,
                params.time_neighborhood);
  }

  std::vector<SpectralPeak> frame_peaks;
  for (std::size_t f = 0; f < spec.frames; ++f) {
    frame_peaks.clear();
    for (std::size_t b = 0; b < spec.bins; ++b) {
      const std::size_t i = f * spec.bins + b;
      const float m = spec.magnitude[i];
      if (m > threshold && m == local_max[i]) {
        frame_peaks.push_back({static_cast<std::uint32_t>(f), static_cast<std::uint32_t>(b), m});
      }
    }
    if (frame_peaks.size() > params.max_per_frame) {
      std::stable_sort(frame_peaks.begin(), frame_peaks.end(),
                       [](const auto& x, const auto& y) { return x.magnitude > y.magnitude; });
      frame_peaks.resize(params.max_per_frame);
      std::sort(frame_peaks.begin(), frame_peaks.end(),
                [](const auto& x, const auto& y) { return x.bin < y.bin; });
    }
    peaks.insert(peaks.end(), frame_peaks.begin(), frame_peaks.end());
  }
  return peaks;
}

std::uint32_t pack_landmark(const LandmarkFields& fields) {
  if (fields.f1 >= 1024 || fields.f2 >= 1024 || fields.dt == 0 || fields.dt >= 4096) {
    throw Error(ErrorKind::Parameter, fmt::format("landmark (f1={}, f2={}, dt={}) out of range",
                                                  fields.f1, fields.f2, fields.dt));
  }
  return (fields.f1 << 22) | (fields.f2 << 12) | fields.dt;
}

LandmarkFields unpack_landmark(std::uint32_t key) {
  return {key >> 22, (key >> 12) & 0x3FFu, key & 0xFFFu};
}

std::vector<Landmark> make_landmarks(std::span<const SpectralPeak> peaks, const LandmarkParams& params) {
  std::vector<Landmark> out;
  for (std::size_t i = 0; i < peaks.size(); ++i) {
    std::size_t paired = 0;
    for (std::size_t j = i + 1; j < peaks.size() && paired < params.fan_out; ++j) {
      const std::uint32_t dt = peaks[j].frame - peaks[i].frame;
      if (dt < params.min_dt) continue;
      if (dt > params.max_dt) break;
      out.push_back({pack_landmark({peaks[i].bin, peaks[j].bin, dt}), peaks[i].frame});
      ++paired;
    }
  }
  return out;
}

std::vector<Landmark> extract_landmarks(std::span<const float> samples, const PeakConfig& config) {
  if (samples.size() < config.n_fft) return {};
  const auto spec = stft_magnitude(samples, config.sample_rate, config.n_fft, config.hop);
  const auto peaks = pick_peaks(spec, config.peaks);
  return make_landmarks(peaks, config.landmarks);
}

std::span<const PeakDB::Entry> PeakDB::lookup(std::uint32_t key) const {
  auto lo = std::lower_bound(entries_.begin(), entries_.end(), key,
                             [](const Entry& e, std::uint32_t k) { return e.key < k; });
  auto hi = std::upper_bound(lo, entries_.end(), key,
                             [](std::uint32_t k, const Entry& e) { return k < e.key; });
  return {lo, hi};
}

PeakDB build_peak_db(std::span<const PeakTrack> tracks, const PeakConfig& config) {
  for (const auto& t : tracks) {
    if (t.audio.sample_rate != config.sample_rate) {
      throw Error(ErrorKind::Parameter,
                  fmt::format("track {} has sample rate {}, database uses {}", t.track_id,
                              t.audio.sample_rate, config.sample_rate));
    }
  }
  std::vector<std::vector<Landmark>> per_track(tracks.size());
  parallel_for(tracks.size(),
               [&](std::size_t i) { per_track[i] = extract_landmarks(tracks[i].audio.samples, config); });

  PeakDB db(config);
  for (std::size_t i = 0; i < tracks.size(); ++i) {
    db.tracks_.push_back(tracks[i].track_id);
    for (const auto& lm : per_track[i]) {
      db.entries_.push_back({lm.key, static_cast<std::uint32_t>(i), lm.t1_frames});
    }
  }
  std::sort(db.entries_.begin(), db.entries_.end());
  return db;
}

std::vector<PeakMatchResult> match_peaks(const PeakDB& db, std::span<const float> query,
                                         double sample_rate) {
  if (db.empty()) return {};
  if (sample_rate != db.config().sample_rate) {
    throw Error(ErrorKind::Parameter, fmt::format("query sample rate {} differs from database rate {}",
                                                  sample_rate, db.config().sample_rate));
  }
  const auto landmarks = extract_landmarks(query, db.config());

  std::unordered_map<std::uint64_t, std::uint32_t> votes;
  for (const auto& lm : landmarks) {
    for (const auto& hit : db.lookup(lm.key)) {
      const std::int64_t offset = static_cast<std::int64_t>(hit.t1) - lm.t1_frames;
      const auto bin = static_cast<std::uint32_t>(offset + (std::int64_t{1} << 31));
      ++votes[(static_cast<std::uint64_t>(hit.track_ref) << 32) | bin];
    }
  }

  std::vector<PeakMatchResult> best(db.tracks().size());
  std::vector<char> seen(db.tracks().size(), 0);
  for (const auto& [packed, count] : votes) {
    const auto track = static_cast<std::size_t>(packed >> 32);
    const std::int64_t offset = static_cast<std::int64_t>(packed & 0xFFFFFFFFu) - (std::int64_t{1} << 31);
    auto& b = best[track];
    if (!seen[track] || count > b.vote_count || (count == b.vote_count && offset < b.offset_frames)) {
      seen[track] = 1;
      b.vote_count = count;
      b.offset_frames = offset;
    }
  }

  std::vector<PeakMatchResult> ranked;
  for (std::size_t t = 0; t < best.size(); ++t) {
    if (!seen[t]) continue;
    auto r = best[t];
    r.track_id = db.tracks()[t];
    r.offset_seconds = static_cast<double>(r.offset_frames) * db.config().hop_seconds();
    ranked.push_back(std::move(r));
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& x, const auto& y) {
    if (x.vote_count != y.vote_count) return x.vote_count > y.vote_count;
    return x.track_id < y.track_id;
  });
  return ranked;
}

void PeakDB::save(const std::filesystem::path& path) const {
  io::ByteWriter out;
  out.bytes(kPeakDbMagic);
  out.u16(kPeakDbVersion);
  out.u32(config_.sample_rate);
  out.u32(config_.n_fft);
  out.u32(config_.hop);
  out.u64(entries_.size());
  for (const auto& e : entries_) {
    out.u32(e.key);
    out.u32(e.track_ref);
    out.u32(e.t1);
  }
  out.u32(static_cast<std::uint32_t>(tracks_.size()));
  for (const auto& t : tracks_) out.string16(t);
  out.save(path);
}

PeakDB PeakDB::load(const std::filesystem::path& path) {
  auto in = io::ByteReader::from_file(path);
  in.expect_magic(kPeakDbMagic);
  const auto version = in.u16();
  if (version != kPeakDbVersion) {
    throw ParseError(ParseFailure::BadVersion, fmt::format("unsupported peak DB version {}", version));
  }
  PeakConfig config;
  config.sample_rate = in.u32();
  config.n_fft = in.u32();
  config.hop = in.u32();
  if (config.sample_rate == 0 || config.n_fft < 2 || config.hop == 0) {
    throw ParseError(ParseFailure::BadHeader, "invalid peak DB STFT geometry");
  }
  PeakDB db(config);
  const auto count = in.u64();
  if (count > in.remaining() / 12) {
    throw ParseError(ParseFailure::Truncated, fmt::format("peak DB declares {} entries", count));
  }
  db.entries_.resize(count);
  for (auto& e : db.entries_) {
    e.key = in.u32();
    e.track_ref = in.u32();
    e.t1 = in.u32();
  }
  const auto n_tracks = in.u32();
  for (std::uint32_t t = 0; t < n_tracks; ++t) db.tracks_.push_back(in.string16());
  if (in.remaining() != 0) {
    throw ParseError(ParseFailure::SizeMismatch, fmt::format("{} trailing bytes", in.remaining()));
  }
  for (const auto& e : db.entries_) {
    if (e.track_ref >= n_tracks) throw ParseError(ParseFailure::BadHeader, "entry track out of range");
  }
  if (!std::is_sorted(db.entries_.begin(), db.entries_.end())) {
    throw ParseError(ParseFailure::BadHeader, "peak DB entries are not sorted");
  }
  return db;
}

}  // namespace fpalign

#include "fpalign/augmentation.hpp"

#include <fmt/core.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <memory>
#include <numbers>

#include "fpalign/csv.hpp"
#include "fpalign/error.hpp"
#include "fpalign/evaluation.hpp"
#include "fpalign/parallel.hpp"
#include "fpalign/spectrum.hpp"
#include "fpalign/track_retrieval.hpp"

namespace fpalign {

namespace {

constexpr std::size_t kDirectConvolutionTaps = 512;

void clip(std::vector<float>& v) {
  for (auto& x : v) x = std::clamp(x, -1.0f, 1.0f);
}

double rms(std::span<const float> v) {
  if (v.empty()) return 0.0;
  double acc = 0.0;
  for (float x : v) acc += static_cast<double>(x) * x;
  return std::sqrt(acc / static_cast<double>(v.size()));
}

AudioBuffer at_rate(const AudioBuffer& a, double rate) {
  return a.sample_rate == rate ? a : resample(a, rate);
}

struct Biquad {
  double b0, b1, b2, a1, a2;

  static Biquad make(FilterMode mode, double cutoff, double sample_rate) {
    const double w0 = 2.0 * std::numbers::pi * cutoff / sample_rate;
    const double cw = std::cos(w0);
    const double alpha = std::sin(w0) / (2.0 * (1.0 / std::numbers::sqrt2));
    const double a0 = 1.0 + alpha;
    if (mode == FilterMode::LowPass) {
      return {(1.0 - cw) / 2.0 / a0, (1.0 - cw) / a0, (1.0 - cw) / 2.0 / a0, -2.0 * cw / a0,
              (1.0 - alpha) / a0};
    }
    return {(1.0 + cw) / 2.0 / a0, -(1.0 + cw) / a0, (1.0 + cw) / 2.0 / a0, -2.0 * cw / a0,
            (1.0 - alpha) / a0};
  }

  // Transposed direct form II.
  void run(std::vector<double>& x) const {
    double z1 = 0.0, z2 = 0.0;
    for (auto& v : x) {
      const double in = v;
      const double out = b0 * in + z1;
      z1 = b1 * in - a1 * out + z2;
      z2 = b2 * in - a2 * out;
      v = out;
    }
  }
};

void check_cutoff(double f, double sample_rate, const char* what) {
  if (!(f > 0.0 && f < sample_rate / 2.0)) {
    throw Error(ErrorKind::Parameter, fmt::format("{} cutoff {} Hz must be in (0, {} Hz)", what, f,
                                                  sample_rate / 2.0));
  }
}

std::string sanitize(std::string s) {
  for (auto& c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') c = '_';
  }
  return s;
}

Range read_range(const nlohmann::json& j, const char* key, Range fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  Range r;
  if (v.is_number()) {
    r.lo = r.hi = v.get<double>();
  } else {
    if (!v.is_array() || v.size() != 2) {
      throw Error(ErrorKind::Data, fmt::format("\"{}\" must be a number or a [lo, hi] pair", key));
    }
    r = {v[0].get<double>(), v[1].get<double>()};
  }
  if (!(r.lo <= r.hi)) throw Error(ErrorKind::Data, fmt::format("\"{}\" range has lo > hi", key));
  return r;
}

AudioBuffer synthetic_noise(double sample_rate, Rng& rng, bool lowpassed) {
  AudioBuffer n;
  n.sample_rate = sample_rate;
  n.samples.resize(static_cast<std::size_t>(10.0 * sample_rate));
  double state = 0.0;
  for (auto& s : n.samples) {
    const double white = 0.1 * gaussian(rng);
    state = lowpassed ? 0.95 * state + 0.3 * white : white;
    s = static_cast<float>(state);
  }
  return n;
}

AudioBuffer synthetic_rir(double sample_rate, double rt60, Rng& rng) {
  AudioBuffer r;
  r.sample_rate = sample_rate;
  r.samples.resize(static_cast<std::size_t>(rt60 * sample_rate));
  r.samples[0] = 1.0f;
  // 60 dB energy decay over rt60.
  const double decay = 6.907755 / (rt60 * sample_rate);
  for (std::size_t i = 1; i < r.samples.size(); ++i) {
    r.samples[i] = static_cast<float>(0.2 * gaussian(rng) * std::exp(-decay * static_cast<double>(i)));
  }
  return r;
}

std::vector<AudioBuffer> load_dir(const std::filesystem::path& dir, double sample_rate) {
  std::vector<AudioBuffer> out;
  for (const auto& p : list_files(dir, ".wav")) out.push_back(at_rate(read_wav(p), sample_rate));
  if (out.empty()) throw Error(ErrorKind::Data, fmt::format("no .wav files in {}", dir.string()));
  return out;
}

std::string track_id_of(const std::filesystem::path& p) { return p.stem().string(); }

struct Reference {
  std::filesystem::path path;
  double duration = 0.0;
};

std::vector<Reference> scan_references(const std::filesystem::path& dir, double min_seconds,
                                       std::vector<std::string>& warnings) {
  std::vector<Reference> refs;
  for (const auto& p : list_files(dir, ".wav")) {
    const auto audio = read_wav(p);
    if (audio.duration() < min_seconds) {
      warnings.push_back(fmt::format("{}: {:.2f} s is shorter than the {:.2f} s segment, skipped",
                                     p.string(), audio.duration(), min_seconds));
      spdlog::warn("{}", warnings.back());
      continue;
    }
    refs.push_back({p, audio.duration()});
  }
  if (refs.empty()) {
    throw Error(ErrorKind::Data, fmt::format("no usable reference WAVs in {}", dir.string()));
  }
  return refs;
}

}  // namespace

AudioBuffer time_stretch(const AudioBuffer& audio, double rate) {
  if (!(rate >= 0.5 && rate <= 2.0)) {
    throw Error(ErrorKind::Parameter, fmt::format("stretch rate {} outside [0.5, 2]", rate));
  }
  const std::size_t n = audio.samples.size();
  const auto out_len = static_cast<std::size_t>(std::llround(static_cast<double>(n) / rate));
  if (rate == 1.0 || n == 0) return audio;

  // ~64 ms frames, half overlap, +-16 ms similarity search.
  std::size_t frame = static_cast<std::size_t>(0.064 * audio.sample_rate) & ~std::size_t{1};
  frame = std::max<std::size_t>(frame, 64);
  const std::size_t hop_out = frame / 2;
  const double hop_in = static_cast<double>(hop_out) * rate;
  const auto tolerance = static_cast<std::ptrdiff_t>(frame / 4);
  const auto window = hann_window(frame);

  const auto& x = audio.samples;
  auto sample = [&](std::ptrdiff_t i) -> double {
    return i >= 0 && static_cast<std::size_t>(i) < n ? x[static_cast<std::size_t>(i)] : 0.0;
  };

  std::vector<double> out(out_len + frame, 0.0);
  std::vector<double> norm(out_len + frame, 0.0);
  std::ptrdiff_t prev = 0;
  for (std::size_t k = 0; k * hop_out < out_len; ++k) {
    const auto nominal = static_cast<std::ptrdiff_t>(std::llround(static_cast<double>(k) * hop_in));
    std::ptrdiff_t pos = nominal;
    if (k > 0) {
      // Pick the shift whose frame best continues the previous copied frame.
      const std::ptrdiff_t natural = prev + static_cast<std::ptrdiff_t>(hop_out);
      double best = -std::numeric_limits<double>::infinity();
      for (std::ptrdiff_t step = 0; step <= 2 * tolerance; ++step) {
        const std::ptrdiff_t delta = (step % 2 == 0) ? step / 2 : -(step + 1) / 2;
        const std::ptrdiff_t cand = nominal + delta;
        if (cand < 0) continue;
        double xy = 0.0, yy = 0.0;
        for (std::size_t i = 0; i < frame; i += 2) {
          const double c = sample(cand + static_cast<std::ptrdiff_t>(i));
          xy += c * sample(natural + static_cast<std::ptrdiff_t>(i));
          yy += c * c;
        }
        const double score = yy > 0.0 ? xy / std::sqrt(yy) : 0.0;
        if (score > best) {
          best = score;
          pos = cand;
        }
      }
    }
    const std::size_t base = k * hop_out;
    for (std::size_t i = 0; i < frame; ++i) {
      out[base + i] += window[i] * sample(pos + static_cast<std::ptrdiff_t>(i));
      norm[base + i] += window[i];
    }
    prev = pos;
  }

  AudioBuffer result;
  result.sample_rate = audio.sample_rate;
  result.samples.resize(out_len);
  for (std::size_t i = 0; i < out_len; ++i) {
    const double v = norm[i] > 1e-3 ? out[i] / norm[i] : out[i];
    result.samples[i] = static_cast<float>(v);
  }
  clip(result.samples);
  return result;
}

AudioBuffer pitch_shift(const AudioBuffer& audio, double semitones) {
  if (!(std::abs(semitones) <= 12.0)) {
    throw Error(ErrorKind::Parameter, fmt::format("pitch shift {} semitones outside [-12, 12]", semitones));
  }
  if (semitones == 0.0) return audio;
  const double factor = std::exp2(semitones / 12.0);
  // Lengthen by `factor` keeping pitch, then read it back `factor` times faster.
  const auto stretched = time_stretch(audio, 1.0 / factor);
  AudioBuffer out;
  out.sample_rate = audio.sample_rate;
  out.samples = resample_by_step(stretched.samples, factor, audio.samples.size());
  clip(out.samples);
  return out;
}

AudioBuffer biquad_filter(const AudioBuffer& audio, FilterMode mode, double f_lo, double f_hi) {
  std::vector<double> x(audio.samples.begin(), audio.samples.end());
  switch (mode) {
    case FilterMode::LowPass:
      check_cutoff(f_hi, audio.sample_rate, "low-pass");
      Biquad::make(FilterMode::LowPass, f_hi, audio.sample_rate).run(x);
      break;
    case FilterMode::HighPass:
      check_cutoff(f_lo, audio.sample_rate, "high-pass");
      Biquad::make(FilterMode::HighPass, f_lo, audio.sample_rate).run(x);
      break;
    case FilterMode::BandPass:
      check_cutoff(f_lo, audio.sample_rate, "band-pass low");
      check_cutoff(f_hi, audio.sample_rate, "band-pass high");
      if (!(f_lo < f_hi)) throw Error(ErrorKind::Parameter, "band-pass needs f_lo < f_hi");
      Biquad::make(FilterMode::HighPass, f_lo, audio.sample_rate).run(x);
      Biquad::make(FilterMode::LowPass, f_hi, audio.sample_rate).run(x);
      break;
  }
  AudioBuffer out;
  out.sample_rate = audio.sample_rate;
  out.samples.assign(x.begin(), x.end());
  clip(out.samples);
  return out;
}

AudioBuffer add_noise_snr(const AudioBuffer& audio, const AudioBuffer& noise_in, double snr_db) {
  if (rms(noise_in.samples) <= 1e-8) throw Error(ErrorKind::Parameter, "noise source is silent");
  const auto noise = at_rate(noise_in, audio.sample_rate);
  const std::size_t n = audio.samples.size();
  std::vector<float> looped(n);
  for (std::size_t i = 0; i < n; ++i) looped[i] = noise.samples[i % noise.samples.size()];
  const double noise_rms = rms(looped);
  AudioBuffer out;
  out.sample_rate = audio.sample_rate;
  out.samples.resize(n);
  if (noise_rms <= 1e-12) {
    out.samples = audio.samples;
    return out;
  }
  const double gain = rms(audio.samples) / (noise_rms * std::pow(10.0, snr_db / 20.0));
  for (std::size_t i = 0; i < n; ++i) {
    out.samples[i] = static_cast<float>(audio.samples[i] + gain * looped[i]);
  }
  clip(out.samples);
  return out;
}

AudioBuffer convolve_rir(const AudioBuffer& audio, const AudioBuffer& rir_in, double wet_gain) {
  if (rir_in.samples.empty()) throw Error(ErrorKind::Parameter, "room impulse response is empty");
  if (!(wet_gain >= 0.0)) throw Error(ErrorKind::Parameter, "wet_gain must be non-negative");
  const auto rir = at_rate(rir_in, audio.sample_rate);
  const std::size_t n = audio.samples.size();

  std::vector<double> wet(n, 0.0);
  const auto taps = std::count_if(rir.samples.begin(), rir.samples.end(), [](float v) { return v != 0.0f; });
  if (static_cast<std::size_t>(taps) <= kDirectConvolutionTaps) {
    for (std::size_t k = 0; k < rir.samples.size() && k < n; ++k) {
      const double h = rir.samples[k];
      if (h == 0.0) continue;
      for (std::size_t i = k; i < n; ++i) wet[i] += h * audio.samples[i - k];
    }
  } else {
    auto full = fft_convolve(audio.samples, rir.samples);
    std::copy(full.begin(), full.begin() + static_cast<std::ptrdiff_t>(n), wet.begin());
  }

  const double dry_gain = std::max(0.0, 1.0 - wet_gain);
  AudioBuffer out;
  out.sample_rate = audio.sample_rate;
  out.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.samples[i] = static_cast<float>(dry_gain * audio.samples[i] + wet_gain * wet[i]);
  }
  clip(out.samples);
  return out;
}

AudioBuffer echo(const AudioBuffer& audio, double delay_ms, double decay) {
  if (!(delay_ms >= 10.0 && delay_ms <= 1000.0)) {
    throw Error(ErrorKind::Parameter, fmt::format("echo delay {} ms outside [10, 1000]", delay_ms));
  }
  const auto delay = static_cast<std::size_t>(std::llround(delay_ms * audio.sample_rate / 1000.0));
  AudioBuffer out = audio;
  for (std::size_t i = delay; i < out.samples.size(); ++i) {
    out.samples[i] = static_cast<float>(audio.samples[i] + decay * audio.samples[i - delay]);
  }
  clip(out.samples);
  return out;
}

std::string to_string(AugmentationKind kind) {
  switch (kind) {
    case AugmentationKind::None: return "none";
    case AugmentationKind::TimeStretch: return "time_stretch";
    case AugmentationKind::PitchShift: return "pitch_shift";
    case AugmentationKind::TimeAndPitch: return "time_and_pitch";
    case AugmentationKind::Noise: return "noise";
    case AugmentationKind::Reverb: return "reverb";
    case AugmentationKind::ReverbNoise: return "reverb_noise";
    case AugmentationKind::BandPass: return "band_pass";
    case AugmentationKind::HighPass: return "high_pass";
    case AugmentationKind::LowPass: return "low_pass";
    case AugmentationKind::Echo: return "echo";
  }
  return "none";
}

AugmentationKind parse_augmentation_kind(const std::string& name) {
  for (int k = 0; k <= static_cast<int>(AugmentationKind::Echo); ++k) {
    const auto kind = static_cast<AugmentationKind>(k);
    if (to_string(kind) == name) return kind;
  }
  throw Error(ErrorKind::Data, fmt::format("unknown augmentation kind \"{}\"", name));
}

void from_json(const nlohmann::json& j, AugmentationSpec& spec) {
  if (!j.is_object() || !j.contains("kind")) {
    throw Error(ErrorKind::Data, "augmentation spec must be an object with a \"kind\"");
  }
  spec = AugmentationSpec{};
  spec.kind = parse_augmentation_kind(j.at("kind").get<std::string>());
  spec.name = j.value("name", to_string(spec.kind));
  spec.seed = j.value("seed", std::uint64_t{0});
  const auto& p = j.contains("params") ? j.at("params") : j;
  spec.stretch = read_range(p, "stretch", spec.stretch);
  spec.semitones = read_range(p, "semitones", spec.semitones);
  spec.wet_gain = read_range(p, "wet_gain", spec.wet_gain);
  spec.band_pass = read_range(p, "band_pass", spec.band_pass);
  spec.high_pass_cutoff = read_range(p, "high_pass_cutoff", spec.high_pass_cutoff);
  spec.low_pass_cutoff = read_range(p, "low_pass_cutoff", spec.low_pass_cutoff);
  spec.echo_delay_ms = read_range(p, "echo_delay_ms", spec.echo_delay_ms);
  spec.echo_decay = p.value("echo_decay", spec.echo_decay);
  if (p.contains("snr_db")) {
    const auto& s = p.at("snr_db");
    spec.snr_db = s.is_array() ? s.get<std::vector<double>>() : std::vector<double>{s.get<double>()};
    if (spec.snr_db.empty()) throw Error(ErrorKind::Data, "\"snr_db\" must not be empty");
  }
  if (p.contains("noise_dir")) spec.noise_dir = p.at("noise_dir").get<std::string>();
  if (p.contains("rir_dir")) spec.rir_dir = p.at("rir_dir").get<std::string>();
}

void to_json(nlohmann::json& j, const AugmentationSpec& spec) {
  auto range = [](Range r) { return nlohmann::json::array({r.lo, r.hi}); };
  j = {{"name", spec.name},
       {"kind", to_string(spec.kind)},
       {"seed", spec.seed},
       {"stretch", range(spec.stretch)},
       {"semitones", range(spec.semitones)},
       {"snr_db", spec.snr_db},
       {"wet_gain", range(spec.wet_gain)},
       {"band_pass", range(spec.band_pass)},
       {"high_pass_cutoff", range(spec.high_pass_cutoff)},
       {"low_pass_cutoff", range(spec.low_pass_cutoff)},
       {"echo_delay_ms", range(spec.echo_delay_ms)},
       {"echo_decay", spec.echo_decay}};
  if (spec.noise_dir) j["noise_dir"] = spec.noise_dir->string();
  if (spec.rir_dir) j["rir_dir"] = spec.rir_dir->string();
}

std::vector<AugmentationSpec> read_condition_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, fmt::format("cannot open {}", path.string()));
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Data, fmt::format("{}: {}", path.string(), e.what()));
  }
  if (!j.is_array()) throw Error(ErrorKind::Data, fmt::format("{}: expected a JSON list", path.string()));
  std::vector<AugmentationSpec> specs;
  for (const auto& item : j) {
    try {
      specs.push_back(item.get<AugmentationSpec>());
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::Data, fmt::format("{}: {}", path.string(), e.what()));
    }
  }
  return specs;
}

AugmentationSources::AugmentationSources(const AugmentationSpec& spec, double sample_rate,
                                         std::uint64_t seed) {
  Rng rng(seed);
  const bool wants_noise = spec.kind == AugmentationKind::Noise || spec.kind == AugmentationKind::ReverbNoise;
  const bool wants_rir = spec.kind == AugmentationKind::Reverb || spec.kind == AugmentationKind::ReverbNoise;
  if (wants_noise) {
    if (spec.noise_dir) {
      noises_ = load_dir(*spec.noise_dir, sample_rate);
    } else {
      noises_.push_back(synthetic_noise(sample_rate, rng, false));
      noises_.push_back(synthetic_noise(sample_rate, rng, true));
    }
  }
  if (wants_rir) {
    if (spec.rir_dir) {
      rirs_ = load_dir(*spec.rir_dir, sample_rate);
    } else {
      for (double rt60 : {0.3, 0.5, 0.7, 0.9}) rirs_.push_back(synthetic_rir(sample_rate, rt60, rng));
    }
  }
}

const AudioBuffer& AugmentationSources::noise(Rng& rng) const {
  if (noises_.empty()) throw Error(ErrorKind::Parameter, "no noise sources loaded");
  return noises_[uniform_index(rng, noises_.size())];
}

const AudioBuffer& AugmentationSources::rir(Rng& rng) const {
  if (rirs_.empty()) throw Error(ErrorKind::Parameter, "no room impulse responses loaded");
  return rirs_[uniform_index(rng, rirs_.size())];
}

AppliedAugmentation apply_augmentation(const AudioBuffer& audio, const AugmentationSpec& spec,
                                       const AugmentationSources& sources, Rng& rng) {
  AppliedAugmentation r;
  r.params["kind"] = to_string(spec.kind);
  auto draw = [&](Range range) { return uniform(rng, range.lo, range.hi); };
  auto add_noise = [&](const AudioBuffer& in) {
    const double snr = spec.snr_db[uniform_index(rng, spec.snr_db.size())];
    r.params["snr_db"] = snr;
    return add_noise_snr(in, sources.noise(rng), snr);
  };
  auto add_reverb = [&](const AudioBuffer& in) {
    const double wet = draw(spec.wet_gain);
    r.params["wet_gain"] = wet;
    return convolve_rir(in, sources.rir(rng), wet);
  };

  switch (spec.kind) {
    case AugmentationKind::None:
      r.audio = audio;
      break;
    case AugmentationKind::TimeStretch:
      r.speed = draw(spec.stretch);
      r.params["rate"] = r.speed;
      r.audio = time_stretch(audio, r.speed);
      break;
    case AugmentationKind::PitchShift: {
      const double s = draw(spec.semitones);
      r.params["semitones"] = s;
      r.audio = pitch_shift(audio, s);
      break;
    }
    case AugmentationKind::TimeAndPitch: {
      r.speed = draw(spec.stretch);
      const double s = draw(spec.semitones);
      r.params["rate"] = r.speed;
      r.params["semitones"] = s;
      r.audio = pitch_shift(time_stretch(audio, r.speed), s);
      break;
    }
    case AugmentationKind::Noise:
      r.audio = add_noise(audio);
      break;
    case AugmentationKind::Reverb:
      r.audio = add_reverb(audio);
      break;
    case AugmentationKind::ReverbNoise:
      r.audio = add_noise(add_reverb(audio));
      break;
    case AugmentationKind::BandPass:
      r.params["f_lo"] = spec.band_pass.lo;
      r.params["f_hi"] = spec.band_pass.hi;
      r.audio = biquad_filter(audio, FilterMode::BandPass, spec.band_pass.lo, spec.band_pass.hi);
      break;
    case AugmentationKind::HighPass: {
      const double f = draw(spec.high_pass_cutoff);
      r.params["cutoff"] = f;
      r.audio = biquad_filter(audio, FilterMode::HighPass, f, 0.0);
      break;
    }
    case AugmentationKind::LowPass: {
      const double f = draw(spec.low_pass_cutoff);
      r.params["cutoff"] = f;
      r.audio = biquad_filter(audio, FilterMode::LowPass, 0.0, f);
      break;
    }
    case AugmentationKind::Echo: {
      const double d = draw(spec.echo_delay_ms);
      r.params["delay_ms"] = d;
      r.params["decay"] = spec.echo_decay;
      r.audio = echo(audio, d, spec.echo_decay);
      break;
    }
  }
  return r;
}

std::vector<std::filesystem::path> list_files(const std::filesystem::path& dir,
                                              const std::string& extension) {
  if (!std::filesystem::is_directory(dir)) {
    throw Error(ErrorKind::Io, fmt::format("{} is not a directory", dir.string()));
  }
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == extension) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

QuerySetResult make_query_set(const std::filesystem::path& reference_dir,
                              std::span<const AugmentationSpec> conditions,
                              const QuerySetOptions& options, const std::filesystem::path& out_dir) {
  if (conditions.empty()) throw Error(ErrorKind::Parameter, "no augmentation conditions given");
  if (!(options.segment_seconds > 0.0)) throw Error(ErrorKind::Parameter, "segment_seconds must be positive");
  if (options.max_snippets == 0) throw Error(ErrorKind::Parameter, "max_snippets must be >= 1");

  QuerySetResult result;
  const auto refs = scan_references(reference_dir, options.segment_seconds, result.warnings);
  const auto query_dir = out_dir / "queries";
  std::filesystem::create_directories(query_dir);

  struct Job {
    std::size_t condition;
    std::size_t index;
  };
  std::vector<Job> jobs;
  for (std::size_t c = 0; c < conditions.size(); ++c) {
    for (std::size_t i = 0; i < options.n_per_condition; ++i) jobs.push_back({c, i});
  }

  // Synthetic noise/RIR material is shared per condition.
  std::vector<std::unique_ptr<AugmentationSources>> sources;
  const double rate = read_wav(refs.front().path).sample_rate;
  for (std::size_t c = 0; c < conditions.size(); ++c) {
    sources.push_back(std::make_unique<AugmentationSources>(
        conditions[c], rate, derive_seed(options.seed ^ conditions[c].seed, 0x5eed0000 + c)));
  }

  std::vector<std::filesystem::path> paths(jobs.size());
  std::vector<std::vector<Annotation>> truths(jobs.size());
  std::vector<std::string> truth_track(jobs.size());

  parallel_for(jobs.size(), [&](std::size_t jn) {
    const auto& job = jobs[jn];
    const auto& spec = conditions[job.condition];
    Rng rng(derive_seed(options.seed ^ spec.seed, job.condition * 1000003ULL + job.index));
    const auto stem = fmt::format("{}_{:04}", sanitize(spec.label()), job.index);
    const auto name = options.mode == QuerySetMode::Track ? stem : "seg_" + stem;
    const auto& src = *sources[job.condition];

    auto excerpt = [&](const Reference& ref, double preroll_max, double& start_s, double& preroll_s) {
      const auto audio = read_wav(ref.path);
      if (audio.sample_rate != rate) {
        throw Error(ErrorKind::Data, fmt::format("{} has sample rate {}, expected {}",
                                                 ref.path.string(), audio.sample_rate, rate));
      }
      const auto seg = static_cast<std::size_t>(std::llround(options.segment_seconds * rate));
      const std::size_t last = audio.samples.size() - seg;
      const auto preroll_wanted = static_cast<std::size_t>(std::llround(preroll_max * rate));
      const std::size_t lo = std::min(preroll_wanted, last);
      const std::size_t start = lo + static_cast<std::size_t>(uniform_index(rng, last - lo + 1));
      const std::size_t preroll = std::min(preroll_wanted, start);
      start_s = static_cast<double>(start) / rate;
      preroll_s = static_cast<double>(preroll) / rate;
      AudioBuffer out;
      out.sample_rate = rate;
      out.samples.assign(audio.samples.begin() + static_cast<std::ptrdiff_t>(start - preroll),
                         audio.samples.begin() + static_cast<std::ptrdiff_t>(start + seg));
      return out;
    };

    AudioBuffer query;
    query.sample_rate = rate;
    if (options.mode == QuerySetMode::Track) {
      const auto& ref = refs[uniform_index(rng, refs.size())];
      double start_s = 0.0, preroll_s = 0.0;
      const auto clip_audio = excerpt(ref, 0.0, start_s, preroll_s);
      query = apply_augmentation(clip_audio, spec, src, rng).audio;
      truth_track[jn] = track_id_of(ref.path);
    } else {
      const std::size_t want = 1 + uniform_index(rng, options.max_snippets);
      const std::size_t count = std::min(want, refs.size());
      std::vector<std::size_t> order(refs.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      for (std::size_t i = 0; i < count; ++i) {
        std::swap(order[i], order[i + uniform_index(rng, order.size() - i)]);
      }
      for (std::size_t s = 0; s < count; ++s) {
        const auto& ref = refs[order[s]];
        double start_s = 0.0, preroll_s = 0.0;
        const auto clip_audio = excerpt(ref, s == 0 ? 0.0 : options.crossfade_seconds, start_s, preroll_s);
        const auto applied = apply_augmentation(clip_audio, spec, src, rng);
        const auto& y = applied.audio.samples;
        const auto fade = std::min<std::size_t>(
            static_cast<std::size_t>(std::llround(preroll_s * rate / applied.speed)), y.size());
        // The pre-roll fades in over the previous snippet's tail, so the
        // overlap belongs to the earlier snippet's interval.
        const std::size_t overlap = std::min(fade, query.samples.size());
        const std::size_t tail = query.samples.size() - overlap;
        for (std::size_t i = 0; i < overlap; ++i) {
          const double theta = 0.5 * std::numbers::pi * (static_cast<double>(i) + 0.5) / static_cast<double>(overlap);
          query.samples[tail + i] =
              static_cast<float>(query.samples[tail + i] * std::cos(theta) + y[fade - overlap + i] * std::sin(theta));
        }
        Annotation a;
        a.qry_id = name;
        a.ref_id = track_id_of(ref.path);
        a.q_start = static_cast<double>(query.samples.size()) / rate;
        query.samples.insert(query.samples.end(), y.begin() + static_cast<std::ptrdiff_t>(fade), y.end());
        a.q_end = static_cast<double>(query.samples.size()) / rate;
        a.r_start = start_s;
        a.r_end = start_s + options.segment_seconds;
        truths[jn].push_back(std::move(a));
      }
      clip(query.samples);
    }
    paths[jn] = query_dir / (name + ".wav");
    write_wav(query, paths[jn], options.encoding);
  });

  result.queries = paths;
  if (options.mode == QuerySetMode::Track) {
    std::vector<ManifestRow> rows;
    for (std::size_t jn = 0; jn < jobs.size(); ++jn) {
      rows.push_back({paths[jn], truth_track[jn], conditions[jobs[jn].condition].label()});
    }
    result.manifest = out_dir / "manifest.csv";
    write_track_manifest(rows, result.manifest);
  } else {
    result.manifest = out_dir / "queries.csv";
    std::ofstream list(result.manifest, std::ios::trunc);
    if (!list) throw Error(ErrorKind::Io, fmt::format("cannot write {}", result.manifest.string()));
    list << "query_path,condition\n";
    std::vector<Annotation> all;
    for (std::size_t jn = 0; jn < jobs.size(); ++jn) {
      list << csv::escape(paths[jn].lexically_relative(out_dir).generic_string()) << ','
           << csv::escape(conditions[jobs[jn].condition].label()) << '\n';
      all.insert(all.end(), truths[jn].begin(), truths[jn].end());
    }
    result.ground_truth = out_dir / "ground_truth.csv";
    write_annotations_csv(all, result.ground_truth);
  }
  return result;
}

}  // namespace fpalign

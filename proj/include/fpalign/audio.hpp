#pragma once

#include <filesystem>
#include <span>
#include <vector>

namespace fpalign {

/// Mono audio. Samples are nominally in [-1, 1].
struct AudioBuffer {
  std::vector<float> samples;
  double sample_rate = 16000.0;

  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

enum class WavEncoding { Float32, Pcm16 };

/// PCM16 or IEEE float32 WAV; multichannel input is downmixed by averaging.
/// Anything else throws Error(Format).
AudioBuffer read_wav(const std::filesystem::path& path);
void write_wav(const AudioBuffer& audio, const std::filesystem::path& path,
               WavEncoding encoding = WavEncoding::Float32);

/// Band-limited (windowed-sinc) resampling to `target_rate`.
AudioBuffer resample(const AudioBuffer& audio, double target_rate);

/// Reads output sample i from input position i * step, low-passed at
/// min(1, 1/step) of Nyquist. Output has `out_len` samples.
std::vector<float> resample_by_step(std::span<const float> in, double step, std::size_t out_len);

}  // namespace fpalign

#include "fpalign/audio.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>

#include "fpalign/binary_io.hpp"
#include "fpalign/error.hpp"

namespace fpalign {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

struct WavFormat {
  std::uint16_t format = 0;
  std::uint16_t channels = 0;
  std::uint32_t sample_rate = 0;
  std::uint16_t bits = 0;
};

template <typename T>
T read_le(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

}  // namespace

AudioBuffer read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, fmt::format("cannot open {}", path.string()));
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto fail = [&](const std::string& why) {
    return Error(ErrorKind::Format, fmt::format("{}: {}", path.string(), why));
  };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw fail("not a RIFF/WAVE file");
  }

  WavFormat fmt_chunk;
  bool have_fmt = false;
  const char* data = nullptr;
  std::size_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const char* id = bytes.data() + pos;
    const auto size = read_le<std::uint32_t>(id + 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = std::min<std::size_t>(size, bytes.size() - body);
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (avail < 16) throw fail("short fmt chunk");
      fmt_chunk.format = read_le<std::uint16_t>(bytes.data() + body);
      fmt_chunk.channels = read_le<std::uint16_t>(bytes.data() + body + 2);
      fmt_chunk.sample_rate = read_le<std::uint32_t>(bytes.data() + body + 4);
      fmt_chunk.bits = read_le<std::uint16_t>(bytes.data() + body + 14);
      if (fmt_chunk.format == kFormatExtensible) {
        if (avail < 26) throw fail("short extensible fmt chunk");
        fmt_chunk.format = read_le<std::uint16_t>(bytes.data() + body + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      data = bytes.data() + body;
      data_size = avail;
    }
    pos = body + size + (size & 1u);
  }
  if (!have_fmt) throw fail("missing fmt chunk");
  if (data == nullptr) throw fail("missing data chunk");
  if (fmt_chunk.channels == 0 || fmt_chunk.sample_rate == 0) throw fail("invalid channel count or rate");

  const bool pcm16 = fmt_chunk.format == kFormatPcm && fmt_chunk.bits == 16;
  const bool f32 = fmt_chunk.format == kFormatFloat && fmt_chunk.bits == 32;
  if (!pcm16 && !f32) {
    throw fail(fmt::format("unsupported encoding (format tag {}, {} bits); expected PCM16 or float32",
                           fmt_chunk.format, fmt_chunk.bits));
  }

  const std::size_t width = fmt_chunk.bits / 8;
  const std::size_t channels = fmt_chunk.channels;
  const std::size_t frames = data_size / (width * channels);
  AudioBuffer audio;
  audio.sample_rate = fmt_chunk.sample_rate;
  audio.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const char* p = data + (i * channels + c) * width;
      acc += pcm16 ? read_le<std::int16_t>(p) / 32768.0 : static_cast<double>(read_le<float>(p));
    }
    audio.samples[i] = channels == 1 ? static_cast<float>(acc) : static_cast<float>(acc / channels);
    if (!std::isfinite(audio.samples[i])) throw fail(fmt::format("non-finite sample at {}", i));
  }
  return audio;
}

void write_wav(const AudioBuffer& audio, const std::filesystem::path& path, WavEncoding encoding) {
  const bool pcm16 = encoding == WavEncoding::Pcm16;
  const std::uint16_t bits = pcm16 ? 16 : 32;
  const std::uint32_t rate = static_cast<std::uint32_t>(std::lround(audio.sample_rate));
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(audio.samples.size() * bits / 8);

  io::ByteWriter out;
  out.bytes("RIFF");
  out.u32(36 + data_bytes);
  out.bytes("WAVE");
  out.bytes("fmt ");
  out.u32(16);
  out.u16(pcm16 ? kFormatPcm : kFormatFloat);
  out.u16(1);
  out.u32(rate);
  out.u32(rate * bits / 8);
  out.u16(bits / 8);
  out.u16(bits);
  out.bytes("data");
  out.u32(data_bytes);
  if (pcm16) {
    for (float s : audio.samples) {
      const double q = std::clamp(std::round(static_cast<double>(s) * 32768.0), -32768.0, 32767.0);
      out.u16(static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
    }
  } else {
    out.f32s(audio.samples);
  }
  out.save(path);
}

std::vector<float> resample_by_step(std::span<const float> in, double step, std::size_t out_len) {
  if (!(step > 0.0)) throw Error(ErrorKind::Parameter, "resampling step must be positive");
  constexpr double kZeroCrossings = 16.0;
  const double cutoff = std::min(1.0, 1.0 / step);
  const double half_width = kZeroCrossings / cutoff;
  const auto n = static_cast<std::ptrdiff_t>(in.size());
  std::vector<float> out(out_len, 0.0f);
  for (std::size_t i = 0; i < out_len; ++i) {
    const double x = static_cast<double>(i) * step;
    const auto lo = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(std::ceil(x - half_width)));
    const auto hi = std::min<std::ptrdiff_t>(n - 1, static_cast<std::ptrdiff_t>(std::floor(x + half_width)));
    double acc = 0.0;
    for (std::ptrdiff_t j = lo; j <= hi; ++j) {
      const double t = x - static_cast<double>(j);
      const double window = 0.5 + 0.5 * std::cos(std::numbers::pi * t / half_width);
      acc += in[static_cast<std::size_t>(j)] * cutoff * sinc(cutoff * t) * window;
    }
    out[i] = static_cast<float>(acc);
  }
  return out;
}

AudioBuffer resample(const AudioBuffer& audio, double target_rate) {
  if (!(target_rate > 0.0) || !(audio.sample_rate > 0.0)) {
    throw Error(ErrorKind::Parameter, "sample rates must be positive");
  }
  if (audio.sample_rate == target_rate) return audio;
  const double step = audio.sample_rate / target_rate;
  const auto out_len = static_cast<std::size_t>(
      std::llround(static_cast<double>(audio.samples.size()) / step));
  return {resample_by_step(audio.samples, step, out_len), target_rate};
}

}  // namespace fpalign

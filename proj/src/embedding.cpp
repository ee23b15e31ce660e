#include "fpalign/embedding.hpp"

#include <fmt/core.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>

#include "fpalign/binary_io.hpp"
#include "fpalign/error.hpp"

namespace fpalign {

namespace {

constexpr std::string_view kEmbeddingMagic = "AFPE";
constexpr std::string_view kWeightsMagic = "AFPW";
constexpr std::uint16_t kFormatVersion = 1;

bool all_finite(std::span<const float> v) {
  return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

void check_size(const char* what, std::size_t got, std::size_t expected) {
  if (got != expected) {
    throw Error(ErrorKind::Shape, fmt::format("{} has {} values, expected {}", what, got, expected));
  }
}

void read_version(io::ByteReader& in) {
  const auto version = in.u16();
  if (version != kFormatVersion) {
    throw ParseError(ParseFailure::BadVersion,
                     fmt::format("unsupported version {} (expected {})", version, kFormatVersion));
  }
}

void read_finite(io::ByteReader& in, std::vector<float>& out, std::size_t n, const char* what) {
  out.resize(n);
  in.f32s(out);
  if (!all_finite(out)) {
    throw ParseError(ParseFailure::NonFinite, fmt::format("{} contains non-finite values", what));
  }
}

}  // namespace

void EmbeddingMatrix::validate() const {
  if (dim == 0) throw Error(ErrorKind::Parameter, "embedding dim must be positive");
  if (!(hop_seconds > 0.0f) || !(window_seconds > 0.0f)) {
    throw Error(ErrorKind::Parameter, "hop_seconds and window_seconds must be positive");
  }
  check_size("embedding data", data.size(), static_cast<std::size_t>(frame_count) * dim);
  if (!all_finite(data)) throw Error(ErrorKind::Parameter, "embedding data contains non-finite values");
}

ProjectionWeights ProjectionWeights::zeros(std::uint32_t d_in, std::uint32_t d_h, std::uint32_t d_out) {
  ProjectionWeights w;
  w.d_in = d_in;
  w.d_h = d_h;
  w.d_out = d_out;
  w.w1.assign(static_cast<std::size_t>(d_h) * d_in, 0.0f);
  w.b1.assign(d_h, 0.0f);
  w.w2.assign(static_cast<std::size_t>(d_out) * d_h, 0.0f);
  w.b2.assign(d_out, 0.0f);
  return w;
}

void ProjectionWeights::validate() const {
  if (d_in == 0 || d_h == 0 || d_out == 0) {
    throw Error(ErrorKind::Parameter, "projection dimensions must be positive");
  }
  check_size("W1", w1.size(), static_cast<std::size_t>(d_h) * d_in);
  check_size("b1", b1.size(), d_h);
  check_size("W2", w2.size(), static_cast<std::size_t>(d_out) * d_h);
  check_size("b2", b2.size(), d_out);
  if (!all_finite(w1) || !all_finite(b1) || !all_finite(w2) || !all_finite(b2)) {
    throw Error(ErrorKind::Parameter, "projection weights contain non-finite values");
  }
}

double elu(double u, double alpha) { return u > 0.0 ? u : alpha * std::expm1(u); }

std::vector<float> apply_projection(std::span<const float> x, const ProjectionWeights& w) {
  if (x.size() != w.d_in) {
    throw Error(ErrorKind::Shape,
                fmt::format("projection input has {} values, expected d_in = {}", x.size(), w.d_in));
  }
  std::vector<double> hidden(w.d_h);
  for (std::size_t h = 0; h < w.d_h; ++h) {
    const float* row = w.w1.data() + h * w.d_in;
    double acc = w.b1[h];
    for (std::size_t i = 0; i < w.d_in; ++i) acc += static_cast<double>(row[i]) * x[i];
    hidden[h] = elu(acc);
  }
  std::vector<float> z(w.d_out);
  for (std::size_t o = 0; o < w.d_out; ++o) {
    const float* row = w.w2.data() + o * w.d_h;
    double acc = w.b2[o];
    for (std::size_t h = 0; h < w.d_h; ++h) acc += static_cast<double>(row[h]) * hidden[h];
    z[o] = static_cast<float>(acc);
  }
  return z;
}

std::vector<float> l2_normalize(std::span<const float> v) {
  double sq = 0.0;
  for (float x : v) sq += static_cast<double>(x) * x;
  const double norm = std::sqrt(sq);
  if (!(norm >= 1e-12)) {
    throw Error(ErrorKind::Degenerate, fmt::format("cannot normalize vector with norm {}", norm));
  }
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] / norm);
  return out;
}

void write_embeddings(const EmbeddingMatrix& m, const std::filesystem::path& path) {
  m.validate();
  io::ByteWriter out;
  out.bytes(kEmbeddingMagic);
  out.u16(kFormatVersion);
  out.u32(m.dim);
  out.u32(m.frame_count);
  out.f32(m.hop_seconds);
  out.f32(m.window_seconds);
  out.string16(m.track_id);
  out.f32s(m.data);
  out.save(path);
}

EmbeddingMatrix read_embeddings(const std::filesystem::path& path) {
  auto in = io::ByteReader::from_file(path);
  in.expect_magic(kEmbeddingMagic);
  read_version(in);
  EmbeddingMatrix m;
  m.dim = in.u32();
  m.frame_count = in.u32();
  m.hop_seconds = in.f32();
  m.window_seconds = in.f32();
  m.track_id = in.string16();
  if (m.dim == 0 || !(m.hop_seconds > 0.0f) || !(m.window_seconds > 0.0f)) {
    throw ParseError(ParseFailure::BadHeader,
                     fmt::format("{}: dim and frame timing must be positive", path.string()));
  }
  const std::size_t expected = static_cast<std::size_t>(m.frame_count) * m.dim * sizeof(float);
  if (in.remaining() != expected) {
    throw ParseError(ParseFailure::SizeMismatch,
                     fmt::format("{}: payload is {} bytes, header implies {} ({} frames x {} dims)",
                                 path.string(), in.remaining(), expected, m.frame_count, m.dim));
  }
  read_finite(in, m.data, static_cast<std::size_t>(m.frame_count) * m.dim, "embedding payload");
  return m;
}

void write_weights(const ProjectionWeights& w, const std::filesystem::path& path) {
  w.validate();
  io::ByteWriter out;
  out.bytes(kWeightsMagic);
  out.u16(kFormatVersion);
  out.u32(w.d_in);
  out.u32(w.d_h);
  out.u32(w.d_out);
  out.f32s(w.w1);
  out.f32s(w.b1);
  out.f32s(w.w2);
  out.f32s(w.b2);
  out.save(path);
}

ProjectionWeights read_weights(const std::filesystem::path& path) {
  auto in = io::ByteReader::from_file(path);
  in.expect_magic(kWeightsMagic);
  read_version(in);
  ProjectionWeights w;
  w.d_in = in.u32();
  w.d_h = in.u32();
  w.d_out = in.u32();
  const std::size_t n1 = static_cast<std::size_t>(w.d_h) * w.d_in;
  const std::size_t n2 = static_cast<std::size_t>(w.d_out) * w.d_h;
  const std::size_t expected = (n1 + w.d_h + n2 + w.d_out) * sizeof(float);
  if (in.remaining() != expected) {
    throw ParseError(ParseFailure::SizeMismatch,
                     fmt::format("{}: payload is {} bytes, expected {}", path.string(),
                                 in.remaining(), expected));
  }
  read_finite(in, w.w1, n1, "W1");
  read_finite(in, w.b1, w.d_h, "b1");
  read_finite(in, w.w2, n2, "W2");
  read_finite(in, w.b2, w.d_out, "b2");
  return w;
}

std::vector<Fingerprint> fingerprint_frames(const EmbeddingMatrix& m, const ProjectionWeights* w,
                                            DegeneratePolicy policy) {
  m.validate();
  if (w != nullptr && m.dim != w->d_in) {
    throw Error(ErrorKind::Shape,
                fmt::format("track {}: embedding dim {} does not match projection d_in {}",
                            m.track_id, m.dim, w->d_in));
  }
  std::vector<Fingerprint> out;
  out.reserve(m.frame_count);
  for (std::uint32_t f = 0; f < m.frame_count; ++f) {
    const auto frame = m.frame(f);
    std::vector<float> projected =
        w != nullptr ? apply_projection(frame, *w) : std::vector<float>(frame.begin(), frame.end());
    Fingerprint fp;
    try {
      fp.vector = l2_normalize(projected);
    } catch (const Error& e) {
      const auto msg = fmt::format("track {} frame {}: {}", m.track_id, f, e.what());
      if (policy == DegeneratePolicy::Throw) throw Error(ErrorKind::Degenerate, msg);
      spdlog::warn("skipping degenerate frame: {}", msg);
      continue;
    }
    fp.track_id = m.track_id;
    fp.frame_index = f;
    fp.t_start = static_cast<double>(f) * m.hop_seconds;
    out.push_back(std::move(fp));
  }
  return out;
}

}  // namespace fpalign

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace fpalign {

/// Frame-level embeddings for one track. Row-major frame_count x dim.
struct EmbeddingMatrix {
  std::string track_id;
  std::uint32_t dim = 0;
  std::uint32_t frame_count = 0;
  float hop_seconds = 0.5f;
  float window_seconds = 1.0f;
  std::vector<float> data;

  std::span<const float> frame(std::size_t i) const {
    return std::span<const float>(data).subspan(i * dim, dim);
  }
  /// Throws Error(Parameter/Shape) when an invariant does not hold.
  void validate() const;
};

/// Projection head z = W2 * elu(W1 * x + b1) + b2.
struct ProjectionWeights {
  std::uint32_t d_in = 1024;
  std::uint32_t d_h = 4096;
  std::uint32_t d_out = 256;
  std::vector<float> w1;  // d_h x d_in, row-major
  std::vector<float> b1;  // d_h
  std::vector<float> w2;  // d_out x d_h, row-major
  std::vector<float> b2;  // d_out

  /// Zero-filled weights of the given shape.
  static ProjectionWeights zeros(std::uint32_t d_in, std::uint32_t d_h, std::uint32_t d_out);
  void validate() const;
};

struct Fingerprint {
  std::vector<float> vector;
  std::string track_id;
  std::uint32_t frame_index = 0;
  double t_start = 0.0;
};

double elu(double u, double alpha = 1.0);

std::vector<float> apply_projection(std::span<const float> x, const ProjectionWeights& w);

/// Throws Error(Degenerate) when the norm is below 1e-12.
std::vector<float> l2_normalize(std::span<const float> v);

EmbeddingMatrix read_embeddings(const std::filesystem::path& path);
void write_embeddings(const EmbeddingMatrix& m, const std::filesystem::path& path);

ProjectionWeights read_weights(const std::filesystem::path& path);
void write_weights(const ProjectionWeights& w, const std::filesystem::path& path);

enum class DegeneratePolicy {
  Skip,    // drop the frame and log a warning
  Throw,   // fail the whole call
};

/// One unit-norm fingerprint per frame, t_start = frame_index * hop.
/// With no weights the raw frame is normalized directly.
std::vector<Fingerprint> fingerprint_frames(const EmbeddingMatrix& m,
                                            const ProjectionWeights* w,
                                            DegeneratePolicy policy = DegeneratePolicy::Throw);

inline std::vector<Fingerprint> fingerprint_frames(const EmbeddingMatrix& m,
                                                   const ProjectionWeights& w,
                                                   DegeneratePolicy policy = DegeneratePolicy::Throw) {
  return fingerprint_frames(m, &w, policy);
}

}  // namespace fpalign

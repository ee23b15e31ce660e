#pragma once

// On-disk corpora for driving the command-line tool in-process.

#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "alignment_fixture.hpp"
#include "fpalign/audio.hpp"
#include "fpalign/evaluation.hpp"
#include "fpalign/cli.hpp"
#include "fpalign/embedding.hpp"
#include "signals.hpp"

namespace testsupport {

inline int run_cli(std::vector<std::string> args) { return fpalign::cli::run(args); }

inline std::vector<char> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

/// Contiguous query matrix; frames not covered by any snippet get random vectors.
inline fpalign::EmbeddingMatrix query_matrix(const WarpedQuery& q, const RefCorpus& c, const std::string& id,
                                             fpalign::Rng& rng) {
  std::uint32_t frames = 0;
  for (const auto& f : q.fps) frames = std::max(frames, f.frame_index + 1);
  std::vector<std::vector<float>> rows(frames);
  for (const auto& f : q.fps) rows[f.frame_index] = f.vector;
  fpalign::EmbeddingMatrix m;
  m.track_id = id;
  m.dim = static_cast<std::uint32_t>(c.dim);
  m.frame_count = frames;
  m.hop_seconds = static_cast<float>(c.hop);
  m.window_seconds = static_cast<float>(c.window);
  for (auto& r : rows) {
    if (r.empty()) r = random_unit(rng, c.dim);
    m.data.insert(m.data.end(), r.begin(), r.end());
  }
  return m;
}

/// refs/*.afpe, queries/*.afpe and ground_truth.csv for `n_queries` warped
/// queries of up to three snippets each.
inline void write_embedding_corpus(const std::filesystem::path& dir, std::size_t tracks, std::size_t n_queries,
                                   std::uint64_t seed) {
  const auto c = make_ref_corpus(tracks, 80, seed, 64);
  std::filesystem::create_directories(dir / "refs");
  std::filesystem::create_directories(dir / "queries");
  for (std::size_t t = 0; t < tracks; ++t) fpalign::write_embeddings(c.matrix(t), dir / "refs" / (c.ids[t] + ".afpe"));
  fpalign::Rng rng(seed + 1);
  std::vector<fpalign::Annotation> gt;
  const double speeds[] = {0.8, 1.0, 1.25};
  for (std::size_t i = 0; i < n_queries; ++i) {
    const std::string id = "q" + std::to_string(i);
    WarpedQuery q;
    const std::size_t snippets = 1 + i % 3;
    for (std::size_t s = 0; s < snippets; ++s) {
      const std::size_t t = (i * 3 + s * 7) % tracks;
      const double r0 = 0.5 * static_cast<double>(fpalign::uniform_index(rng, 40));
      append_snippet(q, c, t, r0, 15.0, speeds[(i + s) % 3], 0.01, rng, id);
    }
    fpalign::write_embeddings(query_matrix(q, c, id, rng), dir / "queries" / (id + ".afpe"));
    gt.insert(gt.end(), q.truth.begin(), q.truth.end());
  }
  fpalign::write_annotations_csv(gt, dir / "ground_truth.csv");
}

/// Reference WAVs of random note mixtures.
inline void write_wav_corpus(const std::filesystem::path& dir, std::size_t tracks, double seconds,
                             std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < tracks; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "track%03zu.wav", i);
    fpalign::write_wav(note_mixture(seed + i, seconds), dir / name);
  }
}

}  // namespace testsupport

#pragma once

// Synthetic reference embeddings and time-warped queries built from them.

#include <cmath>
#include <string>
#include <vector>

#include "fpalign/embedding.hpp"
#include "fpalign/evaluation.hpp"
#include "fpalign/random.hpp"
#include "vectors.hpp"

namespace testsupport {

struct RefCorpus {
  std::size_t dim = 128;
  double hop = 0.5;
  double window = 1.0;
  std::vector<std::string> ids;
  std::vector<std::vector<std::vector<float>>> frames;  // track -> frame -> vector

  std::vector<fpalign::Fingerprint> fingerprints() const {
    std::vector<fpalign::Fingerprint> out;
    for (std::size_t t = 0; t < ids.size(); ++t) {
      for (std::size_t f = 0; f < frames[t].size(); ++f) {
        out.push_back({frames[t][f], ids[t], static_cast<std::uint32_t>(f), hop * static_cast<double>(f)});
      }
    }
    return out;
  }

  fpalign::EmbeddingMatrix matrix(std::size_t t) const {
    fpalign::EmbeddingMatrix m;
    m.track_id = ids[t];
    m.dim = static_cast<std::uint32_t>(dim);
    m.frame_count = static_cast<std::uint32_t>(frames[t].size());
    m.hop_seconds = static_cast<float>(hop);
    m.window_seconds = static_cast<float>(window);
    for (const auto& f : frames[t]) m.data.insert(m.data.end(), f.begin(), f.end());
    return m;
  }
};

inline RefCorpus make_ref_corpus(std::size_t tracks, std::size_t frames_per_track, std::uint64_t seed,
                                 std::size_t dim = 128) {
  RefCorpus c;
  c.dim = dim;
  fpalign::Rng rng(seed);
  for (std::size_t t = 0; t < tracks; ++t) {
    c.ids.push_back("ref" + std::to_string(t));
    std::vector<std::vector<float>> fr;
    for (std::size_t f = 0; f < frames_per_track; ++f) fr.push_back(random_unit(rng, dim));
    c.frames.push_back(std::move(fr));
  }
  return c;
}

struct WarpedQuery {
  std::vector<fpalign::Fingerprint> fps;
  std::vector<fpalign::Annotation> truth;
  double duration = 0.0;  // seconds of query covered so far
};

/// Appends a snippet of reference `t` covering [r0, r0 + ref_seconds) played
/// at speed `a` (reference seconds per query second). Query frames sit on
/// the query hop grid; each copies the nearest reference frame plus
/// N(0, sigma^2) noise, renormalized.
inline void append_snippet(WarpedQuery& q, const RefCorpus& c, std::size_t t, double r0, double ref_seconds,
                           double a, double sigma, fpalign::Rng& rng, const std::string& qry_id) {
  const double q0 = q.duration;
  const double q_len = ref_seconds / a;
  std::size_t j0 = static_cast<std::size_t>(std::ceil(q0 / c.hop - 1e-9));
  for (std::size_t j = j0;; ++j) {
    const double tq = c.hop * static_cast<double>(j);
    const double tr = r0 + a * (tq - q0);
    if (tr + c.window > r0 + ref_seconds + 1e-9 || tq + c.window > q0 + q_len + 1e-9) break;
    const auto fi = static_cast<std::size_t>(std::llround(tr / c.hop));
    std::vector<float> v = c.frames[t].at(fi);
    double n = 0.0;
    for (auto& x : v) {
      x = static_cast<float>(x + sigma * fpalign::gaussian(rng));
      n += static_cast<double>(x) * x;
    }
    for (auto& x : v) x = static_cast<float>(x / std::sqrt(n));
    q.fps.push_back({std::move(v), qry_id, static_cast<std::uint32_t>(j), tq});
  }
  q.truth.push_back({qry_id, c.ids[t], q0, q0 + q_len, r0, r0 + ref_seconds});
  q.duration = q0 + q_len;
}

}  // namespace testsupport

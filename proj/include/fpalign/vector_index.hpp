#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fpalign/binary_io.hpp"
#include "fpalign/embedding.hpp"

namespace fpalign {

struct IndexEntry {
  std::uint32_t global_id = 0;
  std::string track_id;
  std::uint32_t frame_index = 0;
  double t_start = 0.0;
};

struct SearchResult {
  IndexEntry entry;
  double similarity = 0.0;  // inner product, cosine for unit vectors
};

struct IvfParams {
  std::uint32_t n_lists = 64;
  std::uint32_t n_probe = 8;
  std::uint32_t kmeans_iters = 20;
  std::uint64_t seed = 0;
};

struct KMeansResult {
  std::size_t k = 0;
  std::size_t dim = 0;
  std::vector<float> centroids;           // k x dim, row-major
  std::vector<std::uint32_t> assignments;  // one per point
  std::vector<double> inertia_history;    // after seeding, then after each iteration
  double inertia() const { return inertia_history.empty() ? 0.0 : inertia_history.back(); }
};

/// Lloyd's algorithm with k-means++ seeding over `points` (n x dim).
/// Empty clusters are re-seeded from the point farthest from its centroid.
KMeansResult kmeans(std::span<const float> points, std::size_t dim, std::size_t k,
                    std::size_t iters, std::uint64_t seed);

enum class IndexKind : std::uint8_t { Exact = 0, Ivf = 1 };

/// Vectors plus per-row metadata, shared by both index kinds.
class IndexStore {
 public:
  IndexStore() = default;
  explicit IndexStore(std::span<const Fingerprint> fps);

  std::size_t size() const { return frame_index_.size(); }
  std::size_t dim() const { return dim_; }
  std::span<const float> vector(std::size_t id) const {
    return std::span<const float>(vectors_).subspan(id * dim_, dim_);
  }
  std::span<const float> vectors() const { return vectors_; }
  IndexEntry entry(std::size_t id) const;
  const std::string& track_of(std::size_t id) const { return tracks_[track_ref_[id]]; }
  const std::vector<std::string>& tracks() const { return tracks_; }

  /// Inner product of a stored row with q, accumulated in double in order.
  double dot(std::size_t id, std::span<const float> q) const;

  void write(io::ByteWriter& out) const;
  static IndexStore read(io::ByteReader& in, std::uint32_t dim, std::uint32_t count);

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> tracks_;
  std::vector<std::uint32_t> track_ref_;
  std::vector<std::uint32_t> frame_index_;
  std::vector<float> t_start_;
  std::vector<float> vectors_;
};

class VectorIndex {
 public:
  virtual ~VectorIndex() = default;

  virtual IndexKind kind() const = 0;
  /// Top min(k, n) by inner product, similarity descending then global_id ascending.
  virtual std::vector<SearchResult> search(std::span<const float> query, std::size_t k) const = 0;
  virtual void save(const std::filesystem::path& path) const = 0;

  /// One result list per query, parallel over queries.
  std::vector<std::vector<SearchResult>> search_batch(std::span<const Fingerprint> queries,
                                                      std::size_t k) const;

  const IndexStore& store() const { return store_; }
  std::size_t size() const { return store_.size(); }
  std::size_t dim() const { return store_.dim(); }

 protected:
  explicit VectorIndex(IndexStore store) : store_(std::move(store)) {}
  void check_query(std::span<const float> query, std::size_t k) const;
  /// Exact top-k over the candidate ids.
  std::vector<SearchResult> rank(std::span<const float> query, std::span<const std::uint32_t> ids,
                                 std::size_t k) const;

  IndexStore store_;
};

class ExactIndex final : public VectorIndex {
 public:
  explicit ExactIndex(IndexStore store);

  IndexKind kind() const override { return IndexKind::Exact; }
  std::vector<SearchResult> search(std::span<const float> query, std::size_t k) const override;
  void save(const std::filesystem::path& path) const override;
  static ExactIndex load(const std::filesystem::path& path);

 private:
  std::vector<std::uint32_t> all_ids_;
};

class IvfIndex final : public VectorIndex {
 public:
  IvfIndex(IndexStore store, const IvfParams& params);

  IndexKind kind() const override { return IndexKind::Ivf; }
  std::vector<SearchResult> search(std::span<const float> query, std::size_t k) const override;
  void save(const std::filesystem::path& path) const override;
  static IvfIndex load(const std::filesystem::path& path);

  std::uint32_t n_lists() const { return n_lists_; }
  std::uint32_t n_probe() const { return n_probe_; }
  void set_n_probe(std::uint32_t n_probe);
  const std::vector<std::vector<std::uint32_t>>& lists() const { return lists_; }

 private:
  IvfIndex(IndexStore store, std::uint32_t n_lists, std::uint32_t n_probe,
           std::vector<float> centroids, std::vector<std::vector<std::uint32_t>> lists);

  std::uint32_t n_lists_ = 0;
  std::uint32_t n_probe_ = 0;
  std::vector<float> centroids_;
  std::vector<std::vector<std::uint32_t>> lists_;
};

ExactIndex build_exact(std::span<const Fingerprint> fps);
IvfIndex build_ivf(std::span<const Fingerprint> fps, const IvfParams& params);

/// Loads either kind, dispatching on the file's type tag.
std::unique_ptr<VectorIndex> load_index(const std::filesystem::path& path);

}  // namespace fpalign

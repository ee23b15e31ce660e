#include "fpalign/vector_index.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "fpalign/error.hpp"
#include "fpalign/parallel.hpp"
#include "fpalign/random.hpp"

namespace fpalign {

namespace {

constexpr std::string_view kIndexMagic = "AFPI";
constexpr std::uint16_t kIndexVersion = 1;

double squared_distance(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    acc += d * d;
  }
  return acc;
}

struct Nearest {
  std::uint32_t index = 0;
  double distance = std::numeric_limits<double>::infinity();
};

Nearest nearest_centroid(std::span<const float> point, std::span<const float> centroids,
                         std::size_t dim) {
  Nearest best;
  const std::size_t k = centroids.size() / dim;
  for (std::size_t c = 0; c < k; ++c) {
    const double d = squared_distance(point, centroids.subspan(c * dim, dim));
    if (d < best.distance) best = {static_cast<std::uint32_t>(c), d};
  }
  return best;
}

// Assigns every point and returns the total inertia.
double assign_all(std::span<const float> points, std::size_t dim, std::span<const float> centroids,
                  std::vector<std::uint32_t>& assignments, std::vector<double>& distances) {
  const std::size_t n = points.size() / dim;
  parallel_for(n, [&](std::size_t i) {
    const auto best = nearest_centroid(points.subspan(i * dim, dim), centroids, dim);
    assignments[i] = best.index;
    distances[i] = best.distance;
  });
  return std::accumulate(distances.begin(), distances.end(), 0.0);
}

std::vector<float> plus_plus_seeding(std::span<const float> points, std::size_t dim, std::size_t k,
                                     Rng& rng) {
  const std::size_t n = points.size() / dim;
  std::vector<float> centroids;
  centroids.reserve(k * dim);
  std::vector<char> chosen(n, 0);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());

  auto take = [&](std::size_t idx) {
    chosen[idx] = 1;
    const auto p = points.subspan(idx * dim, dim);
    centroids.insert(centroids.end(), p.begin(), p.end());
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], squared_distance(points.subspan(i * dim, dim), p));
    }
  };

  take(uniform_index(rng, n));
  while (centroids.size() < k * dim) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    std::size_t pick = n;
    if (total > 0.0) {
      const double target = uniform01(rng) * total;
      double cumulative = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (d2[i] <= 0.0) continue;
        cumulative += d2[i];
        pick = i;
        if (cumulative > target) break;
      }
    } else {
      // Remaining points duplicate chosen centroids.
      for (std::size_t i = 0; i < n && pick == n; ++i) {
        if (!chosen[i]) pick = i;
      }
    }
    take(pick);
  }
  return centroids;
}

void write_header(io::ByteWriter& out, IndexKind kind, const IndexStore& store) {
  out.bytes(kIndexMagic);
  out.u16(kIndexVersion);
  out.u8(static_cast<std::uint8_t>(kind));
  out.u32(static_cast<std::uint32_t>(store.dim()));
  out.u32(static_cast<std::uint32_t>(store.size()));
  store.write(out);
}

IndexStore read_header(io::ByteReader& in, IndexKind expected) {
  in.expect_magic(kIndexMagic);
  const auto version = in.u16();
  if (version != kIndexVersion) {
    throw ParseError(ParseFailure::BadVersion, fmt::format("unsupported index version {}", version));
  }
  const auto tag = in.u8();
  if (tag != static_cast<std::uint8_t>(expected)) {
    throw ParseError(ParseFailure::TypeTag,
                     fmt::format("index type tag is {}, expected {}", tag,
                                 static_cast<int>(expected)));
  }
  const auto dim = in.u32();
  const auto count = in.u32();
  return IndexStore::read(in, dim, count);
}

void expect_end(const io::ByteReader& in) {
  if (in.remaining() != 0) {
    throw ParseError(ParseFailure::SizeMismatch,
                     fmt::format("{} trailing bytes after index payload", in.remaining()));
  }
}

}  // namespace

KMeansResult kmeans(std::span<const float> points, std::size_t dim, std::size_t k,
                    std::size_t iters, std::uint64_t seed) {
  if (dim == 0 || points.size() % dim != 0) {
    throw Error(ErrorKind::Shape, "point buffer is not a whole number of rows");
  }
  const std::size_t n = points.size() / dim;
  if (k == 0) throw Error(ErrorKind::Parameter, "k-means needs k >= 1");
  if (k > n) throw Error(ErrorKind::Parameter, fmt::format("k-means k = {} exceeds n = {}", k, n));

  Rng rng(seed);
  KMeansResult result;
  result.k = k;
  result.dim = dim;
  result.centroids = plus_plus_seeding(points, dim, k, rng);
  result.assignments.assign(n, 0);
  std::vector<double> distances(n, 0.0);
  result.inertia_history.push_back(
      assign_all(points, dim, result.centroids, result.assignments, distances));

  std::vector<double> sums(k * dim);
  std::vector<std::size_t> counts(k);
  for (std::size_t it = 0; it < iters; ++it) {
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = result.assignments[i];
      ++counts[c];
      const auto p = points.subspan(i * dim, dim);
      for (std::size_t d = 0; d < dim; ++d) sums[c * dim + d] += p[d];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      for (std::size_t d = 0; d < dim; ++d) {
        result.centroids[c * dim + d] = static_cast<float>(sums[c * dim + d] / counts[c]);
      }
    }
    // Empty clusters take the point farthest from its (updated) centroid.
    if (std::find(counts.begin(), counts.end(), 0) != counts.end()) {
      std::vector<std::uint32_t> order(n);
      for (std::size_t i = 0; i < n; ++i) {
        const auto c = result.assignments[i];
        distances[i] = squared_distance(
            points.subspan(i * dim, dim),
            std::span<const float>(result.centroids).subspan(c * dim, dim));
      }
      std::iota(order.begin(), order.end(), 0u);
      std::stable_sort(order.begin(), order.end(),
                       [&](auto x, auto y) { return distances[x] > distances[y]; });
      std::size_t next = 0;
      for (std::size_t c = 0; c < k; ++c) {
        if (counts[c] != 0 || next >= n || distances[order[next]] <= 0.0) continue;
        const auto idx = order[next++];
        const auto p = points.subspan(idx * dim, dim);
        std::copy(p.begin(), p.end(), result.centroids.begin() + static_cast<std::ptrdiff_t>(c * dim));
      }
    }
    const auto previous = result.assignments;
    result.inertia_history.push_back(
        assign_all(points, dim, result.centroids, result.assignments, distances));
    if (result.assignments == previous) break;
  }
  return result;
}

IndexStore::IndexStore(std::span<const Fingerprint> fps) {
  if (fps.empty()) throw Error(ErrorKind::Parameter, "cannot build an index from zero fingerprints");
  dim_ = fps.front().vector.size();
  if (dim_ == 0) throw Error(ErrorKind::Shape, "fingerprints have dimension 0");
  if (fps.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw Error(ErrorKind::Parameter, "too many fingerprints for a u32 index");
  }
  vectors_.reserve(fps.size() * dim_);
  for (std::size_t i = 0; i < fps.size(); ++i) {
    const auto& fp = fps[i];
    if (fp.vector.size() != dim_) {
      throw Error(ErrorKind::Shape, fmt::format("fingerprint {} has dimension {}, expected {}", i,
                                                fp.vector.size(), dim_));
    }
    auto it = std::find(tracks_.rbegin(), tracks_.rend(), fp.track_id);
    std::uint32_t ref;
    if (it == tracks_.rend()) {
      ref = static_cast<std::uint32_t>(tracks_.size());
      tracks_.push_back(fp.track_id);
    } else {
      ref = static_cast<std::uint32_t>(tracks_.rend() - it - 1);
    }
    track_ref_.push_back(ref);
    frame_index_.push_back(fp.frame_index);
    t_start_.push_back(static_cast<float>(fp.t_start));
    vectors_.insert(vectors_.end(), fp.vector.begin(), fp.vector.end());
  }
}

IndexEntry IndexStore::entry(std::size_t id) const {
  return {static_cast<std::uint32_t>(id), track_of(id), frame_index_[id], t_start_[id]};
}

double IndexStore::dot(std::size_t id, std::span<const float> q) const {
  const float* v = vectors_.data() + id * dim_;
  double acc = 0.0;
  for (std::size_t i = 0; i < dim_; ++i) acc += static_cast<double>(v[i]) * q[i];
  return acc;
}

void IndexStore::write(io::ByteWriter& out) const {
  out.u32(static_cast<std::uint32_t>(tracks_.size()));
  for (const auto& t : tracks_) out.string16(t);
  for (std::size_t i = 0; i < size(); ++i) {
    out.u32(track_ref_[i]);
    out.u32(frame_index_[i]);
    out.f32(t_start_[i]);
  }
  out.f32s(vectors_);
}

IndexStore IndexStore::read(io::ByteReader& in, std::uint32_t dim, std::uint32_t count) {
  if (dim == 0) throw ParseError(ParseFailure::BadHeader, "index dimension is 0");
  IndexStore s;
  s.dim_ = dim;
  const auto n_tracks = in.u32();
  for (std::uint32_t t = 0; t < n_tracks; ++t) s.tracks_.push_back(in.string16());
  s.track_ref_.resize(count);
  s.frame_index_.resize(count);
  s.t_start_.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    s.track_ref_[i] = in.u32();
    if (s.track_ref_[i] >= n_tracks) {
      throw ParseError(ParseFailure::BadHeader,
                       fmt::format("entry {} references track {} of {}", i, s.track_ref_[i], n_tracks));
    }
    s.frame_index_[i] = in.u32();
    s.t_start_[i] = in.f32();
  }
  s.vectors_.resize(static_cast<std::size_t>(count) * dim);
  in.f32s(s.vectors_);
  if (!std::all_of(s.vectors_.begin(), s.vectors_.end(), [](float v) { return std::isfinite(v); })) {
    throw ParseError(ParseFailure::NonFinite, "index vectors contain non-finite values");
  }
  return s;
}

void VectorIndex::check_query(std::span<const float> query, std::size_t k) const {
  if (k == 0) throw Error(ErrorKind::Parameter, "search needs k >= 1");
  if (query.size() != dim()) {
    throw Error(ErrorKind::Shape,
                fmt::format("query has dimension {}, index has {}", query.size(), dim()));
  }
}

std::vector<SearchResult> VectorIndex::rank(std::span<const float> query,
                                            std::span<const std::uint32_t> ids,
                                            std::size_t k) const {
  struct Scored {
    double sim;
    std::uint32_t id;
  };
  std::vector<Scored> scored(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) scored[i] = {store_.dot(ids[i], query), ids[i]};
  const std::size_t m = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(m), scored.end(),
                    [](const Scored& x, const Scored& y) {
                      return x.sim != y.sim ? x.sim > y.sim : x.id < y.id;
                    });
  std::vector<SearchResult> out;
  out.reserve(m);
  for (std::size_t i = 0; i < m; ++i) out.push_back({store_.entry(scored[i].id), scored[i].sim});
  return out;
}

std::vector<std::vector<SearchResult>> VectorIndex::search_batch(std::span<const Fingerprint> queries,
                                                                 std::size_t k) const {
  std::vector<std::vector<SearchResult>> out(queries.size());
  parallel_for(queries.size(), [&](std::size_t i) { out[i] = search(queries[i].vector, k); });
  return out;
}

ExactIndex::ExactIndex(IndexStore store) : VectorIndex(std::move(store)), all_ids_(store_.size()) {
  std::iota(all_ids_.begin(), all_ids_.end(), 0u);
}

std::vector<SearchResult> ExactIndex::search(std::span<const float> query, std::size_t k) const {
  check_query(query, k);
  return rank(query, all_ids_, k);
}

void ExactIndex::save(const std::filesystem::path& path) const {
  io::ByteWriter out;
  write_header(out, IndexKind::Exact, store_);
  out.save(path);
}

ExactIndex ExactIndex::load(const std::filesystem::path& path) {
  auto in = io::ByteReader::from_file(path);
  auto store = read_header(in, IndexKind::Exact);
  expect_end(in);
  return ExactIndex(std::move(store));
}

IvfIndex::IvfIndex(IndexStore store, const IvfParams& params) : VectorIndex(std::move(store)) {
  if (params.n_lists == 0) throw Error(ErrorKind::Parameter, "n_lists must be positive");
  if (params.n_probe == 0 || params.n_probe > params.n_lists) {
    throw Error(ErrorKind::Parameter,
                fmt::format("n_probe = {} must be in [1, n_lists = {}]", params.n_probe, params.n_lists));
  }
  if (store_.size() < params.n_lists) {
    throw Error(ErrorKind::Parameter, fmt::format("IVF needs at least n_lists = {} vectors, got {}",
                                                  params.n_lists, store_.size()));
  }
  auto km = kmeans(store_.vectors(), dim(), params.n_lists, params.kmeans_iters, params.seed);
  n_lists_ = params.n_lists;
  n_probe_ = params.n_probe;
  centroids_ = std::move(km.centroids);
  lists_.resize(n_lists_);
  for (std::uint32_t i = 0; i < km.assignments.size(); ++i) lists_[km.assignments[i]].push_back(i);
}

IvfIndex::IvfIndex(IndexStore store, std::uint32_t n_lists, std::uint32_t n_probe,
                   std::vector<float> centroids, std::vector<std::vector<std::uint32_t>> lists)
    : VectorIndex(std::move(store)),
      n_lists_(n_lists),
      n_probe_(n_probe),
      centroids_(std::move(centroids)),
      lists_(std::move(lists)) {}

void IvfIndex::set_n_probe(std::uint32_t n_probe) {
  if (n_probe == 0 || n_probe > n_lists_) {
    throw Error(ErrorKind::Parameter,
                fmt::format("n_probe = {} must be in [1, n_lists = {}]", n_probe, n_lists_));
  }
  n_probe_ = n_probe;
}

std::vector<SearchResult> IvfIndex::search(std::span<const float> query, std::size_t k) const {
  check_query(query, k);
  std::vector<std::pair<double, std::uint32_t>> order(n_lists_);
  for (std::uint32_t c = 0; c < n_lists_; ++c) {
    order[c] = {squared_distance(query, std::span<const float>(centroids_).subspan(c * dim(), dim())), c};
  }
  std::partial_sort(order.begin(), order.begin() + n_probe_, order.end());
  std::vector<std::uint32_t> candidates;
  for (std::uint32_t p = 0; p < n_probe_; ++p) {
    const auto& list = lists_[order[p].second];
    candidates.insert(candidates.end(), list.begin(), list.end());
  }
  return rank(query, candidates, k);
}

void IvfIndex::save(const std::filesystem::path& path) const {
  io::ByteWriter out;
  write_header(out, IndexKind::Ivf, store_);
  out.u32(n_lists_);
  out.u32(n_probe_);
  out.f32s(centroids_);
  for (const auto& list : lists_) {
    out.u32(static_cast<std::uint32_t>(list.size()));
    for (auto id : list) out.u32(id);
  }
  out.save(path);
}

IvfIndex IvfIndex::load(const std::filesystem::path& path) {
  auto in = io::ByteReader::from_file(path);
  auto store = read_header(in, IndexKind::Ivf);
  const auto n_lists = in.u32();
  const auto n_probe = in.u32();
  if (n_lists == 0 || n_probe == 0 || n_probe > n_lists) {
    throw ParseError(ParseFailure::BadHeader,
                     fmt::format("invalid IVF geometry n_lists={} n_probe={}", n_lists, n_probe));
  }
  std::vector<float> centroids(static_cast<std::size_t>(n_lists) * store.dim());
  in.f32s(centroids);
  std::vector<std::vector<std::uint32_t>> lists(n_lists);
  std::size_t total = 0;
  for (auto& list : lists) {
    list.resize(in.u32());
    for (auto& id : list) {
      id = in.u32();
      if (id >= store.size()) throw ParseError(ParseFailure::BadHeader, "IVF list id out of range");
    }
    total += list.size();
  }
  if (total != store.size()) {
    throw ParseError(ParseFailure::SizeMismatch,
                     fmt::format("IVF lists hold {} ids, index has {}", total, store.size()));
  }
  expect_end(in);
  return IvfIndex(std::move(store), n_lists, n_probe, std::move(centroids), std::move(lists));
}

ExactIndex build_exact(std::span<const Fingerprint> fps) { return ExactIndex(IndexStore(fps)); }

IvfIndex build_ivf(std::span<const Fingerprint> fps, const IvfParams& params) {
  return IvfIndex(IndexStore(fps), params);
}

std::unique_ptr<VectorIndex> load_index(const std::filesystem::path& path) {
  auto in = io::ByteReader::from_file(path);
  in.expect_magic(kIndexMagic);
  in.u16();
  const auto tag = in.u8();
  switch (tag) {
    case static_cast<std::uint8_t>(IndexKind::Exact):
      return std::make_unique<ExactIndex>(ExactIndex::load(path));
    case static_cast<std::uint8_t>(IndexKind::Ivf):
      return std::make_unique<IvfIndex>(IvfIndex::load(path));
    default:
      throw ParseError(ParseFailure::TypeTag, fmt::format("unknown index type tag {}", tag));
  }
}

}  // namespace fpalign

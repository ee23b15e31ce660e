#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fpalign/embedding.hpp"
#include "fpalign/vector_index.hpp"
#include "json.hpp"

namespace fpalign {

struct RankedTrack {
  std::string track_id;
  double score = 0.0;
};

struct TrackQueryResult {
  std::string query_id;
  std::vector<RankedTrack> ranked;  // score descending, then track_id ascending
};

enum class Aggregation {
  SimilaritySum,  // each neighbor adds max(similarity, 0) to its track
  MajorityVote,   // each neighbor adds 1
};

/// Per-frame top-k search, votes summed per track.
TrackQueryResult identify(std::span<const Fingerprint> query_fps, const VectorIndex& index,
                          std::size_t k = 5, Aggregation rule = Aggregation::SimilaritySum,
                          std::string query_id = {});

/// Percent of results whose best track equals the truth entry.
/// Throws Error(Data) when a query has no truth entry.
double top1_hit_rate(std::span<const TrackQueryResult> results,
                     const std::map<std::string, std::string>& truth);

struct ManifestRow {
  std::filesystem::path query_path;
  std::string truth_track_id;
  std::string condition;
};

/// `query_path,truth_track_id,condition`; relative query paths are
/// resolved against the manifest's directory.
std::vector<ManifestRow> read_track_manifest(const std::filesystem::path& path);
void write_track_manifest(std::span<const ManifestRow> rows, const std::filesystem::path& path);

struct HitRateReport {
  std::map<std::string, double> per_condition;
  std::map<std::string, std::size_t> query_counts;
  std::optional<double> overall;  // unset for an empty report
  std::vector<std::string> errors;

  nlohmann::ordered_json to_json() const;
};

/// Unweighted mean of the per-condition rates; nullopt when empty.
std::optional<double> overall_rate(const std::map<std::string, double>& per_condition);

using QueryIdentifier = std::function<TrackQueryResult(const ManifestRow&)>;

/// Identifies every manifest row (parallel over rows) and groups hit rates
/// by condition. Rows whose identifier throws are recorded in `errors`
/// unless `strict`, in which case the first failure propagates.
HitRateReport evaluate_track_queries(std::span<const ManifestRow> rows,
                                     const QueryIdentifier& identifier, bool strict = false);

struct TrackEvalConfig {
  std::size_t k = 5;
  Aggregation rule = Aggregation::SimilaritySum;
  std::optional<std::filesystem::path> weights;
  bool strict = false;
};

/// Builds an exact index from the .afpe files in `reference_dir` and
/// evaluates the .afpe queries listed in the manifest.
HitRateReport run_track_eval(const std::filesystem::path& reference_dir,
                             const std::filesystem::path& manifest,
                             const TrackEvalConfig& config = {});

}  // namespace fpalign

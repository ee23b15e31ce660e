#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fpalign/embedding.hpp"
#include "fpalign/vector_index.hpp"

namespace fpalign {

struct MatchPoint {
  double t_qry = 0.0;  // query frame start, seconds
  double t_ref = 0.0;  // matched reference frame start, seconds
  double similarity = 0.0;
  std::string ref_id;
  std::string qry_id;
};

/// Huber threshold. Adaptive scale is max(1.345 * 1.4826 * MAD(r), floor),
/// computed from the residuals of the starting line.
struct HuberScale {
  bool adaptive = true;
  double delta = 0.0;   // used when !adaptive; +inf gives ordinary least squares
  double floor = 0.05;  // seconds

  static HuberScale fixed(double delta) { return {false, delta, 0.0}; }
  static HuberScale mad(double floor = 0.05) { return {true, 0.0, floor}; }
};

struct AlignParams {
  std::size_t k = 5;
  double sim_threshold = 0.7;
  HuberScale huber = HuberScale::mad();
  double inlier_tolerance = 1.0;  // seconds
  std::size_t n_seeds = 16;
  std::size_t min_inliers = 3;
  double a_min = 0.6;
  double a_max = 1.7;
  /// Added to the last inlier start to close each interval. Non-positive
  /// means "use the query's fingerprint window".
  double segment_length = 0.0;

  void validate() const;
};

struct LineFit {
  double a = 0.0;
  double b = 0.0;
};

struct HuberFit {
  double a = 0.0;
  double b = 0.0;
  std::vector<double> weights;
  std::size_t iterations = 0;
  double delta = 0.0;  // final threshold
};

/// Weighted least squares line y = a x + b. Throws Error(Underdetermined)
/// when fewer than two points carry weight or all x are equal.
LineFit weighted_line_fit(std::span<const double> x, std::span<const double> y,
                          std::span<const double> w);

/// IRLS Huber regression of y on x. Starts from `init` when given,
/// otherwise from the repeated-median line. Stops when both parameters move
/// less than 1e-9 or after 50 reweightings.
HuberFit huber_fit(std::span<const double> x, std::span<const double> y, const HuberScale& scale,
                   std::optional<LineFit> init = std::nullopt);
HuberFit huber_fit(std::span<const MatchPoint> points, const HuberScale& scale,
                   std::optional<LineFit> init = std::nullopt);

/// 1 - SS_res/SS_tot of t_ref against a*t_qry + b. Constant t_ref gives 1
/// for an exact fit and 0 otherwise.
double r_squared(std::span<const MatchPoint> points, double a, double b);

struct Trajectory {
  double a = 0.0;
  double b = 0.0;
  std::vector<MatchPoint> inliers;
  double r2 = 0.0;
  std::uint32_t seed_id = 0;
};

struct AlignedSegment {
  std::string qry_id;
  std::string ref_id;
  double q_start = 0.0;
  double q_end = 0.0;
  double r_start = 0.0;
  double r_end = 0.0;
  double a = 0.0;
  double b = 0.0;
  std::size_t inlier_count = 0;
  double r2 = 0.0;
};

using GroupKey = std::pair<std::string, std::string>;  // (qry_id, ref_id)
using MatchGroups = std::map<GroupKey, std::vector<MatchPoint>>;

/// Top-k neighbors per query frame, kept when similarity >= threshold,
/// grouped by reference track.
MatchGroups collect_matches(std::span<const Fingerprint> query_fps, const std::string& qry_id,
                            const VectorIndex& index, const AlignParams& params);

/// Seed 0 fits all points; seeds 1..n_seeds-1 start from a random two-point
/// sample and refit on its inliers. Candidates with a outside the bounds or
/// fewer than min_inliers inliers are dropped.
std::vector<Trajectory> fit_trajectories_seeded(std::span<const MatchPoint> points,
                                                const AlignParams& params, std::uint64_t rng_seed);

/// Most inliers, then highest R^2, then lowest seed id.
std::optional<Trajectory> select_best(std::span<const Trajectory> candidates);

/// Earliest inlier start to latest inlier start + segment_length, on both axes.
AlignedSegment trajectory_to_segment(const Trajectory& traj, double segment_length,
                                     std::string qry_id = {}, std::string ref_id = {});

struct QueryFingerprints {
  std::string qry_id;
  std::vector<Fingerprint> fps;
  double window_seconds = 1.0;
};

/// Full segment pipeline. Failures on one query are appended to `errors`
/// (when given) and the run continues. Output is sorted by (qry_id, ref_id).
std::vector<AlignedSegment> align(std::span<const QueryFingerprints> queries,
                                  const VectorIndex& index, const AlignParams& params,
                                  std::uint64_t rng_seed, std::vector<std::string>* errors = nullptr);

std::vector<AlignedSegment> align(std::span<const EmbeddingMatrix> queries,
                                  const ProjectionWeights* weights, const VectorIndex& index,
                                  const AlignParams& params, std::uint64_t rng_seed,
                                  std::vector<std::string>* errors = nullptr);

/// `qry_id,ref_id,q_start,q_end,r_start,r_end,a,b,inliers,r2`, 3 decimals.
void write_predictions_csv(std::span<const AlignedSegment> segments,
                           const std::filesystem::path& path);

}  // namespace fpalign

#include "fpalign/segment_alignment.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "fpalign/csv.hpp"
#include "fpalign/error.hpp"
#include "fpalign/parallel.hpp"
#include "fpalign/random.hpp"

namespace fpalign {

namespace {

constexpr double kHuberEfficiency = 1.345;
constexpr double kMadToSigma = 1.4826;
constexpr double kConvergence = 1e-9;
constexpr std::size_t kMaxIterations = 50;
constexpr std::size_t kSampleAttempts = 32;

double median(std::vector<double> v) {
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

double huber_threshold(const HuberScale& scale, std::span<const double> residuals) {
  if (!scale.adaptive) return scale.delta;
  std::vector<double> r(residuals.begin(), residuals.end());
  const double center = median(r);
  for (auto& v : r) v = std::abs(v - center);
  return std::max(kHuberEfficiency * kMadToSigma * median(std::move(r)), scale.floor);
}

// Siegel's repeated median: median over i of the median slope from point i.
LineFit repeated_median_line(std::span<const double> x, std::span<const double> y) {
  std::vector<double> slopes, per_point;
  per_point.reserve(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    slopes.clear();
    for (std::size_t j = 0; j < x.size(); ++j) {
      if (x[j] != x[i]) slopes.push_back((y[j] - y[i]) / (x[j] - x[i]));
    }
    if (!slopes.empty()) per_point.push_back(median(slopes));
  }
  const double a = median(per_point);
  std::vector<double> intercepts(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) intercepts[i] = y[i] - a * x[i];
  return {a, median(std::move(intercepts))};
}

struct Columns {
  std::vector<double> x;
  std::vector<double> y;
};

Columns columns(std::span<const MatchPoint> points) {
  Columns c;
  c.x.reserve(points.size());
  c.y.reserve(points.size());
  for (const auto& p : points) {
    c.x.push_back(p.t_qry);
    c.y.push_back(p.t_ref);
  }
  return c;
}

bool candidate_before(const Trajectory& x, const Trajectory& y) {
  if (x.inliers.size() != y.inliers.size()) return x.inliers.size() > y.inliers.size();
  if (x.r2 != y.r2) return x.r2 > y.r2;
  return x.seed_id < y.seed_id;
}

}  // namespace

void AlignParams::validate() const {
  if (k == 0) throw Error(ErrorKind::Parameter, "k must be >= 1");
  if (!(sim_threshold > 0.0 && sim_threshold < 1.0)) {
    throw Error(ErrorKind::Parameter, fmt::format("sim_threshold {} must be in (0, 1)", sim_threshold));
  }
  if (min_inliers < 2) throw Error(ErrorKind::Parameter, "min_inliers must be >= 2");
  if (n_seeds == 0) throw Error(ErrorKind::Parameter, "n_seeds must be >= 1");
  if (!(inlier_tolerance > 0.0)) throw Error(ErrorKind::Parameter, "inlier_tolerance must be positive");
  if (!(a_min < a_max)) throw Error(ErrorKind::Parameter, "a_bounds must satisfy a_min < a_max");
  if (!huber.adaptive && !(huber.delta > 0.0)) {
    throw Error(ErrorKind::Parameter, "fixed Huber delta must be positive");
  }
}

LineFit weighted_line_fit(std::span<const double> x, std::span<const double> y,
                          std::span<const double> w) {
  double sw = 0.0, sx = 0.0, sy = 0.0;
  std::size_t weighted = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (w[i] <= 0.0) continue;
    ++weighted;
    sw += w[i];
    sx += w[i] * x[i];
    sy += w[i] * y[i];
  }
  if (weighted < 2) throw Error(ErrorKind::Underdetermined, "line fit needs at least two points");
  const double mx = sx / sw;
  const double my = sy / sw;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    sxx += w[i] * dx * dx;
    sxy += w[i] * dx * (y[i] - my);
  }
  if (!(sxx > 0.0)) throw Error(ErrorKind::Underdetermined, "line fit needs distinct x values");
  const double a = sxy / sxx;
  return {a, my - a * mx};
}

HuberFit huber_fit(std::span<const double> x, std::span<const double> y, const HuberScale& scale,
                   std::optional<LineFit> init) {
  if (x.size() != y.size()) throw Error(ErrorKind::Shape, "x and y differ in length");
  if (x.size() < 2) throw Error(ErrorKind::Underdetermined, "Huber fit needs at least two points");
  if (std::all_of(x.begin(), x.end(), [&](double v) { return v == x.front(); })) {
    throw Error(ErrorKind::Underdetermined, "Huber fit needs distinct t_qry values");
  }

  LineFit line = init ? *init : repeated_median_line(x, y);
  HuberFit fit;
  std::vector<double> residuals(x.size());
  fit.weights.assign(x.size(), 1.0);
  // Scale comes from the starting line and stays fixed; re-estimating it
  // each pass lets a single leverage point inflate it without bound.
  for (std::size_t i = 0; i < x.size(); ++i) residuals[i] = y[i] - (line.a * x[i] + line.b);
  fit.delta = huber_threshold(scale, residuals);
  for (fit.iterations = 1; fit.iterations <= kMaxIterations; ++fit.iterations) {
    for (std::size_t i = 0; i < x.size(); ++i) residuals[i] = y[i] - (line.a * x[i] + line.b);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double r = std::abs(residuals[i]);
      fit.weights[i] = r <= fit.delta ? 1.0 : fit.delta / r;
    }
    const LineFit next = weighted_line_fit(x, y, fit.weights);
    const bool converged =
        std::abs(next.a - line.a) < kConvergence && std::abs(next.b - line.b) < kConvergence;
    line = next;
    if (converged) break;
  }
  fit.iterations = std::min(fit.iterations, kMaxIterations);
  fit.a = line.a;
  fit.b = line.b;
  return fit;
}

HuberFit huber_fit(std::span<const MatchPoint> points, const HuberScale& scale,
                   std::optional<LineFit> init) {
  const auto c = columns(points);
  return huber_fit(c.x, c.y, scale, init);
}

double r_squared(std::span<const MatchPoint> points, double a, double b) {
  if (points.size() < 2) throw Error(ErrorKind::Underdetermined, "R^2 needs at least two points");
  double mean = 0.0;
  for (const auto& p : points) mean += p.t_ref;
  mean /= static_cast<double>(points.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (const auto& p : points) {
    const double r = p.t_ref - (a * p.t_qry + b);
    ss_res += r * r;
    ss_tot += (p.t_ref - mean) * (p.t_ref - mean);
  }
  if (ss_tot == 0.0) return ss_res == 0.0 ? 1.0 : 0.0;
  return 1.0 - ss_res / ss_tot;
}

MatchGroups collect_matches(std::span<const Fingerprint> query_fps, const std::string& qry_id,
                            const VectorIndex& index, const AlignParams& params) {
  if (params.k == 0) throw Error(ErrorKind::Parameter, "k must be >= 1");
  MatchGroups groups;
  if (query_fps.empty()) return groups;
  const auto hits = index.search_batch(query_fps, params.k);
  for (std::size_t f = 0; f < query_fps.size(); ++f) {
    for (const auto& hit : hits[f]) {
      if (hit.similarity < params.sim_threshold) continue;
      groups[{qry_id, hit.entry.track_id}].push_back(
          {query_fps[f].t_start, hit.entry.t_start, hit.similarity, hit.entry.track_id, qry_id});
    }
  }
  return groups;
}

std::vector<Trajectory> fit_trajectories_seeded(std::span<const MatchPoint> points,
                                                const AlignParams& params, std::uint64_t rng_seed) {
  std::vector<Trajectory> out;
  if (points.size() < params.min_inliers || points.size() < 2) return out;

  auto consider = [&](LineFit line, std::uint32_t seed_id) {
    if (!(line.a >= params.a_min && line.a <= params.a_max)) return;
    Trajectory t;
    t.a = line.a;
    t.b = line.b;
    t.seed_id = seed_id;
    for (const auto& p : points) {
      if (std::abs(p.t_ref - (line.a * p.t_qry + line.b)) <= params.inlier_tolerance) {
        t.inliers.push_back(p);
      }
    }
    if (t.inliers.size() < params.min_inliers) return;
    t.r2 = r_squared(t.inliers, t.a, t.b);
    out.push_back(std::move(t));
  };

  try {
    const auto fit = huber_fit(points, params.huber);
    consider({fit.a, fit.b}, 0);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::Underdetermined) throw;
  }

  for (std::uint32_t seed = 1; seed < params.n_seeds; ++seed) {
    Rng rng(derive_seed(rng_seed, seed));
    std::optional<LineFit> sample;
    for (std::size_t attempt = 0; attempt < kSampleAttempts && !sample; ++attempt) {
      const auto i = uniform_index(rng, points.size());
      const auto j = uniform_index(rng, points.size());
      if (points[i].t_qry == points[j].t_qry) continue;
      const double a = (points[j].t_ref - points[i].t_ref) / (points[j].t_qry - points[i].t_qry);
      sample = LineFit{a, points[i].t_ref - a * points[i].t_qry};
    }
    if (!sample) continue;

    std::vector<MatchPoint> support;
    for (const auto& p : points) {
      if (std::abs(p.t_ref - (sample->a * p.t_qry + sample->b)) <= params.inlier_tolerance) {
        support.push_back(p);
      }
    }
    try {
      const auto fit = huber_fit(support, params.huber, sample);
      consider({fit.a, fit.b}, seed);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Underdetermined) throw;
    }
  }
  return out;
}

std::optional<Trajectory> select_best(std::span<const Trajectory> candidates) {
  if (candidates.empty()) return std::nullopt;
  return *std::min_element(candidates.begin(), candidates.end(), candidate_before);
}

AlignedSegment trajectory_to_segment(const Trajectory& traj, double segment_length,
                                     std::string qry_id, std::string ref_id) {
  if (traj.inliers.empty()) throw Error(ErrorKind::Parameter, "trajectory has no inliers");
  AlignedSegment s;
  s.qry_id = qry_id.empty() ? traj.inliers.front().qry_id : std::move(qry_id);
  s.ref_id = ref_id.empty() ? traj.inliers.front().ref_id : std::move(ref_id);
  s.q_start = s.r_start = std::numeric_limits<double>::infinity();
  s.q_end = s.r_end = -std::numeric_limits<double>::infinity();
  for (const auto& p : traj.inliers) {
    s.q_start = std::min(s.q_start, p.t_qry);
    s.q_end = std::max(s.q_end, p.t_qry);
    s.r_start = std::min(s.r_start, p.t_ref);
    s.r_end = std::max(s.r_end, p.t_ref);
  }
  s.q_end += segment_length;
  s.r_end += segment_length;
  s.a = traj.a;
  s.b = traj.b;
  s.inlier_count = traj.inliers.size();
  s.r2 = traj.r2;
  return s;
}

std::vector<AlignedSegment> align(std::span<const QueryFingerprints> queries,
                                  const VectorIndex& index, const AlignParams& params,
                                  std::uint64_t rng_seed, std::vector<std::string>* errors) {
  params.validate();
  std::vector<std::vector<AlignedSegment>> per_query(queries.size());
  std::vector<std::string> failures(queries.size());
  parallel_for(queries.size(), [&](std::size_t qi) {
    const auto& q = queries[qi];
    try {
      const double seg_len = params.segment_length > 0.0 ? params.segment_length : q.window_seconds;
      for (const auto& [key, points] : collect_matches(q.fps, q.qry_id, index, params)) {
        const auto group_seed = derive_seed(rng_seed, fnv1a(key.second, fnv1a(key.first) ^ 0x1f));
        const auto candidates = fit_trajectories_seeded(points, params, group_seed);
        if (auto best = select_best(candidates)) {
          per_query[qi].push_back(trajectory_to_segment(*best, seg_len, key.first, key.second));
        }
      }
    } catch (const std::exception& e) {
      failures[qi] = fmt::format("query {}: {}", q.qry_id, e.what());
      per_query[qi].clear();
    }
  });

  std::vector<AlignedSegment> out;
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    if (!failures[qi].empty()) {
      if (errors == nullptr) throw Error(ErrorKind::Data, failures[qi]);
      errors->push_back(failures[qi]);
    }
    out.insert(out.end(), per_query[qi].begin(), per_query[qi].end());
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& x, const auto& y) {
    return std::tie(x.qry_id, x.ref_id) < std::tie(y.qry_id, y.ref_id);
  });
  return out;
}

std::vector<AlignedSegment> align(std::span<const EmbeddingMatrix> queries,
                                  const ProjectionWeights* weights, const VectorIndex& index,
                                  const AlignParams& params, std::uint64_t rng_seed,
                                  std::vector<std::string>* errors) {
  std::vector<QueryFingerprints> fps;
  fps.reserve(queries.size());
  for (const auto& m : queries) {
    fps.push_back({m.track_id, fingerprint_frames(m, weights, DegeneratePolicy::Skip),
                   static_cast<double>(m.window_seconds)});
  }
  return align(fps, index, params, rng_seed, errors);
}

void write_predictions_csv(std::span<const AlignedSegment> segments,
                           const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, fmt::format("cannot write {}", path.string()));
  out << "qry_id,ref_id,q_start,q_end,r_start,r_end,a,b,inliers,r2\n";
  for (const auto& s : segments) {
    out << fmt::format("{},{},{:.3f},{:.3f},{:.3f},{:.3f},{:.3f},{:.3f},{},{:.3f}\n",
                       csv::escape(s.qry_id), csv::escape(s.ref_id), s.q_start, s.q_end, s.r_start,
                       s.r_end, s.a, s.b, s.inlier_count, s.r2);
  }
}

}  // namespace fpalign

#include "fpalign/track_retrieval.hpp"

#include <fmt/core.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <mutex>
#include <unordered_map>

#include "fpalign/augmentation.hpp"
#include "fpalign/csv.hpp"
#include "fpalign/error.hpp"
#include "fpalign/evaluation.hpp"
#include "fpalign/parallel.hpp"

namespace fpalign {

TrackQueryResult identify(std::span<const Fingerprint> query_fps, const VectorIndex& index,
                          std::size_t k, Aggregation rule, std::string query_id) {
  if (query_fps.empty()) throw Error(ErrorKind::Parameter, "cannot identify an empty query");
  const auto hits = index.search_batch(query_fps, k);

  std::unordered_map<std::string, double> scores;
  for (const auto& frame_hits : hits) {
    for (const auto& hit : frame_hits) {
      const double vote = rule == Aggregation::MajorityVote ? 1.0 : std::max(hit.similarity, 0.0);
      scores[hit.entry.track_id] += vote;
    }
  }

  TrackQueryResult result;
  result.query_id = std::move(query_id);
  result.ranked.reserve(scores.size());
  for (auto& [track, score] : scores) result.ranked.push_back({track, score});
  std::sort(result.ranked.begin(), result.ranked.end(), [](const auto& x, const auto& y) {
    if (x.score != y.score) return x.score > y.score;
    return x.track_id < y.track_id;
  });
  return result;
}

double top1_hit_rate(std::span<const TrackQueryResult> results,
                     const std::map<std::string, std::string>& truth) {
  if (results.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& r : results) {
    auto it = truth.find(r.query_id);
    if (it == truth.end()) {
      throw Error(ErrorKind::Data, fmt::format("no truth entry for query \"{}\"", r.query_id));
    }
    if (!r.ranked.empty() && r.ranked.front().track_id == it->second) ++correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(results.size());
}

std::vector<ManifestRow> read_track_manifest(const std::filesystem::path& path) {
  const auto table = csv::read(path);
  const auto c_path = table.column("query_path");
  const auto c_truth = table.column("truth_track_id");
  const auto c_cond = table.column("condition");
  const auto base = path.parent_path();
  std::vector<ManifestRow> rows;
  for (const auto& row : table.rows) {
    std::filesystem::path q = row.fields[c_path];
    if (q.empty()) throw Error(ErrorKind::Data, fmt::format("line {}: empty query_path", row.line));
    if (q.is_relative()) q = base / q;
    rows.push_back({q, row.fields[c_truth], row.fields[c_cond]});
  }
  return rows;
}

void write_track_manifest(std::span<const ManifestRow> rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, fmt::format("cannot write {}", path.string()));
  out << "query_path,truth_track_id,condition\n";
  const auto base = path.parent_path();
  for (const auto& r : rows) {
    auto q = r.query_path;
    if (!base.empty() && q.is_absolute() == base.is_absolute()) {
      const auto rel = q.lexically_relative(base);
      if (!rel.empty() && *rel.begin() != "..") q = rel;
    }
    out << csv::escape(q.generic_string()) << ',' << csv::escape(r.truth_track_id) << ','
        << csv::escape(r.condition) << '\n';
  }
}

std::optional<double> overall_rate(const std::map<std::string, double>& per_condition) {
  if (per_condition.empty()) return std::nullopt;
  double sum = 0.0;
  for (const auto& [_, rate] : per_condition) sum += rate;
  return sum / static_cast<double>(per_condition.size());
}

nlohmann::ordered_json HitRateReport::to_json() const {
  nlohmann::ordered_json j;
  j["schema_version"] = 1;
  j["per_condition"] = nlohmann::ordered_json::object();
  for (const auto& [cond, rate] : per_condition) j["per_condition"][cond] = round2(rate);
  j["query_counts"] = query_counts;
  if (overall) {
    j["overall"] = round2(*overall);
  } else {
    j["overall"] = nullptr;
    j["empty"] = true;
  }
  j["errors"] = errors;
  return j;
}

HitRateReport evaluate_track_queries(std::span<const ManifestRow> rows,
                                     const QueryIdentifier& identifier, bool strict) {
  std::vector<std::optional<TrackQueryResult>> results(rows.size());
  std::vector<std::string> failures(rows.size());
  parallel_for(rows.size(), [&](std::size_t i) {
    try {
      results[i] = identifier(rows[i]);
    } catch (const std::exception& e) {
      if (strict) throw;
      failures[i] = fmt::format("{}: {}", rows[i].query_path.string(), e.what());
    }
  });

  HitRateReport report;
  std::map<std::string, std::vector<TrackQueryResult>> by_condition;
  std::map<std::string, std::map<std::string, std::string>> truth;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!results[i]) {
      spdlog::warn("skipping query: {}", failures[i]);
      report.errors.push_back(failures[i]);
      continue;
    }
    auto r = std::move(*results[i]);
    // Row position keeps ids unique even when a path repeats.
    r.query_id = fmt::format("{}#{}", i, rows[i].query_path.generic_string());
    truth[rows[i].condition][r.query_id] = rows[i].truth_track_id;
    by_condition[rows[i].condition].push_back(std::move(r));
  }
  for (const auto& [cond, results_for] : by_condition) {
    report.per_condition[cond] = top1_hit_rate(results_for, truth[cond]);
    report.query_counts[cond] = results_for.size();
  }
  report.overall = overall_rate(report.per_condition);
  return report;
}

HitRateReport run_track_eval(const std::filesystem::path& reference_dir,
                             const std::filesystem::path& manifest, const TrackEvalConfig& config) {
  std::optional<ProjectionWeights> weights;
  if (config.weights) weights = read_weights(*config.weights);
  const ProjectionWeights* w = weights ? &*weights : nullptr;
  const auto policy = config.strict ? DegeneratePolicy::Throw : DegeneratePolicy::Skip;

  std::vector<Fingerprint> refs;
  for (const auto& path : list_files(reference_dir, ".afpe")) {
    try {
      auto fps = fingerprint_frames(read_embeddings(path), w, policy);
      refs.insert(refs.end(), std::make_move_iterator(fps.begin()), std::make_move_iterator(fps.end()));
    } catch (const Error& e) {
      if (config.strict) throw;
      spdlog::warn("skipping reference {}: {}", path.string(), e.what());
    }
  }
  const auto index = build_exact(refs);
  const auto rows = read_track_manifest(manifest);
  return evaluate_track_queries(
      rows,
      [&](const ManifestRow& row) {
        const auto fps = fingerprint_frames(read_embeddings(row.query_path), w, policy);
        return identify(fps, index, config.k, config.rule, row.query_path.string());
      },
      config.strict);
}

}  // namespace fpalign

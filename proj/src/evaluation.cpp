#include "fpalign/evaluation.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <tuple>

#include "fpalign/csv.hpp"
#include "fpalign/error.hpp"

namespace fpalign {

namespace {

using Pair = std::pair<std::string, std::string>;
using Interval = std::pair<double, double>;

Pair pair_of(const Annotation& a) { return {a.qry_id, a.ref_id}; }

double ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

F1Score score_from_counts(MatchCounts c) {
  F1Score s;
  s.counts = c;
  s.precision = ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fp));
  s.recall = ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fn));
  s.f1 = f1_percent(s.precision, s.recall);
  return s;
}

std::vector<Interval> merge(std::vector<Interval> v) {
  std::sort(v.begin(), v.end());
  std::vector<Interval> out;
  for (const auto& iv : v) {
    if (!out.empty() && iv.first <= out.back().second) {
      out.back().second = std::max(out.back().second, iv.second);
    } else {
      out.push_back(iv);
    }
  }
  return out;
}

double total_length(const std::vector<Interval>& merged) {
  double sum = 0.0;
  for (const auto& [lo, hi] : merged) sum += hi - lo;
  return sum;
}

double overlap_length(const std::vector<Interval>& a, const std::vector<Interval>& b) {
  double sum = 0.0;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    const double lo = std::max(a[i].first, b[j].first);
    const double hi = std::min(a[i].second, b[j].second);
    if (hi > lo) sum += hi - lo;
    if (a[i].second < b[j].second) {
      ++i;
    } else {
      ++j;
    }
  }
  return sum;
}

nlohmann::ordered_json counts_json(const F1Score& s) {
  return {{"tp", s.counts.tp}, {"fp", s.counts.fp}, {"fn", s.counts.fn}};
}

}  // namespace

double round2(double v) { return std::round(v * 100.0) / 100.0; }

double f1_percent(double precision, double recall) {
  if (precision + recall <= 0.0) return 0.0;
  return 100.0 * 2.0 * precision * recall / (precision + recall);
}

F1Score track_f1(std::span<const Annotation> preds, std::span<const Annotation> gts) {
  std::set<Pair> p, g;
  for (const auto& a : preds) p.insert(pair_of(a));
  for (const auto& a : gts) g.insert(pair_of(a));
  MatchCounts c;
  for (const auto& x : p) {
    if (g.count(x)) {
      ++c.tp;
    } else {
      ++c.fp;
    }
  }
  c.fn = g.size() - c.tp;
  return score_from_counts(c);
}

double iou_2d(const Annotation& a, const Annotation& b) {
  const double area_a = (a.q_end - a.q_start) * (a.r_end - a.r_start);
  const double area_b = (b.q_end - b.q_start) * (b.r_end - b.r_start);
  if (!(a.q_end > a.q_start && a.r_end > a.r_start) || !(b.q_end > b.q_start && b.r_end > b.r_start)) {
    throw Error(ErrorKind::Degenerate, "IoU of a zero-area box");
  }
  const double iq = std::max(0.0, std::min(a.q_end, b.q_end) - std::max(a.q_start, b.q_start));
  const double ir = std::max(0.0, std::min(a.r_end, b.r_end) - std::max(a.r_start, b.r_start));
  const double inter = iq * ir;
  return inter / (area_a + area_b - inter);
}

F1Score bbox_f1(std::span<const Annotation> preds, std::span<const Annotation> gts,
                double iou_threshold) {
  std::map<Pair, std::vector<std::size_t>> gts_by_pair;
  for (std::size_t j = 0; j < gts.size(); ++j) gts_by_pair[pair_of(gts[j])].push_back(j);

  struct Candidate {
    double iou;
    std::size_t pred;
    std::size_t gt;
  };
  std::vector<Candidate> candidates;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    auto it = gts_by_pair.find(pair_of(preds[i]));
    if (it == gts_by_pair.end()) continue;
    for (auto j : it->second) {
      const double iou = iou_2d(preds[i], gts[j]);
      if (iou >= iou_threshold) candidates.push_back({iou, i, j});
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const auto& x, const auto& y) {
    if (x.iou != y.iou) return x.iou > y.iou;
    return std::tie(x.pred, x.gt) < std::tie(y.pred, y.gt);
  });

  std::vector<char> pred_used(preds.size(), 0), gt_used(gts.size(), 0);
  MatchCounts c;
  for (const auto& cand : candidates) {
    if (pred_used[cand.pred] || gt_used[cand.gt]) continue;
    pred_used[cand.pred] = gt_used[cand.gt] = 1;
    ++c.tp;
  }
  c.fp = preds.size() - c.tp;
  c.fn = gts.size() - c.tp;
  return score_from_counts(c);
}

LengthScore length_f1(std::span<const Annotation> preds, std::span<const Annotation> gts) {
  std::map<Pair, std::vector<Interval>> p, g;
  for (const auto& a : preds) p[pair_of(a)].push_back({a.q_start, a.q_end});
  for (const auto& a : gts) g[pair_of(a)].push_back({a.q_start, a.q_end});

  LengthScore s;
  for (auto& [key, intervals] : p) {
    const auto merged = merge(std::move(intervals));
    s.predicted_seconds += total_length(merged);
    if (auto it = g.find(key); it != g.end()) {
      s.matched_seconds += overlap_length(merged, merge(it->second));
    }
  }
  for (auto& [key, intervals] : g) s.ground_truth_seconds += total_length(merge(intervals));
  s.precision = ratio(s.matched_seconds, s.predicted_seconds);
  s.recall = ratio(s.matched_seconds, s.ground_truth_seconds);
  s.f1 = f1_percent(s.precision, s.recall);
  return s;
}

nlohmann::ordered_json MetricReport::to_json() const {
  nlohmann::ordered_json j;
  j["schema_version"] = 1;
  j["track_f1"] = round2(track.f1);
  j["bbox_f1"] = round2(bbox.f1);
  j["length_f1"] = round2(length.f1);
  j["iou_threshold"] = iou_threshold;
  j["counts"] = {
      {"track", counts_json(track)},
      {"bbox", counts_json(bbox)},
      {"length",
       {{"matched_seconds", round2(length.matched_seconds)},
        {"predicted_seconds", round2(length.predicted_seconds)},
        {"ground_truth_seconds", round2(length.ground_truth_seconds)}}},
  };
  return j;
}

MetricReport evaluate(std::span<const Annotation> preds, std::span<const Annotation> gts,
                      double iou_threshold) {
  MetricReport r;
  r.track = track_f1(preds, gts);
  r.bbox = bbox_f1(preds, gts, iou_threshold);
  r.length = length_f1(preds, gts);
  r.iou_threshold = iou_threshold;
  return r;
}

std::vector<Annotation> read_annotations_csv(const std::filesystem::path& path) {
  const auto table = csv::read(path);
  const auto cq = table.column("qry_id");
  const auto cr = table.column("ref_id");
  const std::array<std::string_view, 4> names{"q_start", "q_end", "r_start", "r_end"};
  std::array<std::size_t, 4> cols{};
  for (std::size_t i = 0; i < names.size(); ++i) cols[i] = table.column(names[i]);

  std::vector<Annotation> out;
  out.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    Annotation a;
    a.qry_id = row.fields[cq];
    a.ref_id = row.fields[cr];
    if (a.qry_id.empty() || a.ref_id.empty()) {
      throw Error(ErrorKind::Data, fmt::format("{}:{}: empty qry_id or ref_id", path.string(), row.line));
    }
    a.q_start = csv::to_double(row.fields[cols[0]], row.line, names[0]);
    a.q_end = csv::to_double(row.fields[cols[1]], row.line, names[1]);
    a.r_start = csv::to_double(row.fields[cols[2]], row.line, names[2]);
    a.r_end = csv::to_double(row.fields[cols[3]], row.line, names[3]);
    if (!(a.q_start < a.q_end) || !(a.r_start < a.r_end)) {
      throw Error(ErrorKind::Data,
                  fmt::format("{}:{}: intervals must satisfy start < end", path.string(), row.line));
    }
    out.push_back(std::move(a));
  }
  return out;
}

void write_annotations_csv(std::span<const Annotation> rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, fmt::format("cannot write {}", path.string()));
  out << "qry_id,ref_id,q_start,q_end,r_start,r_end\n";
  for (const auto& a : rows) {
    out << fmt::format("{},{},{:.3f},{:.3f},{:.3f},{:.3f}\n", csv::escape(a.qry_id),
                       csv::escape(a.ref_id), a.q_start, a.q_end, a.r_start, a.r_end);
  }
}

MetricReport evaluate_run(const std::filesystem::path& pred_csv, const std::filesystem::path& gt_csv,
                          double iou_threshold) {
  const auto preds = read_annotations_csv(pred_csv);
  const auto gts = read_annotations_csv(gt_csv);
  return evaluate(preds, gts, iou_threshold);
}

}  // namespace fpalign

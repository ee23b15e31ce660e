#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace fpalign {

/// A (query interval) x (reference interval) box for one (query, reference) pair.
struct Annotation {
  std::string qry_id;
  std::string ref_id;
  double q_start = 0.0;
  double q_end = 0.0;
  double r_start = 0.0;
  double r_end = 0.0;
};

struct MatchCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
};

struct F1Score {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;  // percent
  MatchCounts counts;
};

struct LengthScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;  // percent
  double matched_seconds = 0.0;
  double predicted_seconds = 0.0;
  double ground_truth_seconds = 0.0;
};

/// Percent F1 from precision and recall; 0 when both are 0.
double f1_percent(double precision, double recall);

F1Score track_f1(std::span<const Annotation> preds, std::span<const Annotation> gts);

/// Intersection over union of the two time-time rectangles.
/// Throws Error(Degenerate) for a zero-area box.
double iou_2d(const Annotation& a, const Annotation& b);

/// Greedy one-to-one matching by descending IoU within each (qry, ref) pair.
F1Score bbox_f1(std::span<const Annotation> preds, std::span<const Annotation> gts,
                double iou_threshold = 0.3);

/// Duration-weighted F1 over query-timeline overlap per (qry, ref) pair.
LengthScore length_f1(std::span<const Annotation> preds, std::span<const Annotation> gts);

struct MetricReport {
  F1Score track;
  F1Score bbox;
  LengthScore length;
  double iou_threshold = 0.3;

  nlohmann::ordered_json to_json() const;
};

MetricReport evaluate(std::span<const Annotation> preds, std::span<const Annotation> gts,
                      double iou_threshold = 0.3);

/// Reads either the ground-truth schema or the predictions schema (extra
/// columns ignored). Malformed rows throw Error(Data) naming the line.
std::vector<Annotation> read_annotations_csv(const std::filesystem::path& path);
void write_annotations_csv(std::span<const Annotation> rows, const std::filesystem::path& path);

MetricReport evaluate_run(const std::filesystem::path& pred_csv,
                          const std::filesystem::path& gt_csv, double iou_threshold = 0.3);

/// Rounds to two decimals for report output.
double round2(double v);

}  // namespace fpalign

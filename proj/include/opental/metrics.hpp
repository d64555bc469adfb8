#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "opental/inference.hpp"

namespace opental::metrics {

using inference::Detection;
using localization::Interval;

struct GroundTruth {
  int sequence_id = 0;
  Interval interval;
  int label = 0;
};

/// Ground truth of every sequence, in order.
std::vector<GroundTruth> ground_truth_of(std::span<const synthdata::Sequence> seqs);

enum class Membership { kKnown, kUnknown };

struct EvalInstance {
  double score = 0.0;
  /// Predicted class equals the ground-truth class (always false for
  /// unknown ground truth).
  bool correct = false;
  Membership set = Membership::kKnown;
  double iou = 0.0;
};

struct EvalSets {
  std::vector<EvalInstance> known;
  std::vector<EvalInstance> unknown;
};

/// Greedy one-to-one matching in descending confidence order: each scored
/// detection takes its best-tIoU ground truth of the same sequence, and is
/// dropped when that ground truth is taken or the overlap is not above t0.
/// Classes 1..num_known are known; larger labels are unknown.
EvalSets build_eval_sets(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                         int num_known, double t0);

struct CurvePoint {
  double threshold = 0.0;
  double x = 0.0;
  double y = 0.0;
};

/// Threshold sweep over -inf, the distinct scores and +inf in ascending
/// order. x = FPR (unknowns with score < threshold), y = CDR (correct knowns
/// with score < threshold). Throws std::domain_error when there are no
/// unknown instances.
std::vector<CurvePoint> cdr_fpr_curve(const EvalSets& sets);
/// Trapezoidal area under y(x).
double area_under(std::span<const CurvePoint> curve);
double osdr(const EvalSets& sets);

/// Binary problems treat label 1 (unknown) as positive and predict positive
/// when score >= threshold. All throw std::domain_error unless both classes
/// are present.
double auroc(std::span<const double> scores, std::span<const int> labels);
double aupr(std::span<const double> scores, std::span<const int> labels);
/// FPR at the largest threshold whose TPR reaches 0.95.
double far_at_95(std::span<const double> scores, std::span<const int> labels);
/// (threshold, FPR, TPR), thresholds descending from +inf.
std::vector<CurvePoint> roc_curve(std::span<const double> scores, std::span<const int> labels);
/// (threshold, recall, precision), thresholds descending.
std::vector<CurvePoint> pr_curve(std::span<const double> scores, std::span<const int> labels);

/// Scores and unknown labels of F_k followed by F_u.
void flatten(const EvalSets& sets, std::vector<double>& scores, std::vector<int>& labels);

struct OpenSetMetrics {
  double far95 = 0.0;
  double auroc = 0.0;
  double aupr = 0.0;
  double osdr = 0.0;
  std::size_t known = 0;
  std::size_t unknown = 0;
};

OpenSetMetrics open_set_metrics(const EvalSets& sets);

/// All-points interpolated average precision from a ranked list of hits.
double interpolated_ap(const std::vector<bool>& hits, std::size_t num_gt);

/// Mean over known classes with ground truth of interpolated AP, using
/// detections decided Known, ranked by confidence. A detection hits the
/// highest-overlap unmatched ground truth of its class with tIoU >= tiou.
double closed_set_map(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                      int num_known, double tiou);

inline constexpr double kEvalThresholds[] = {0.3, 0.4, 0.5, 0.6, 0.7};

/// Threshold key used in reports and file names, e.g. "0.5".
std::string threshold_key(double t);

/// {"open_set": {t0: {far95, auroc, aupr, osdr, known, unknown}}, "map":
/// {tiou: value, "mean": value}}; entries are null when undefined.
nlohmann::json evaluate_report(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                               int num_known);

/// One JSON object per instance and t0: {t0, set, score, correct, tiou}.
void write_instances_jsonl(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                           int num_known, const std::filesystem::path& path);
/// Reads the file written above, grouped by t0 key.
std::vector<std::pair<std::string, EvalSets>> read_instances_jsonl(const std::filesystem::path& path);

/// CSV with header threshold,<x_name>,<y_name>.
void write_curve_csv(std::span<const CurvePoint> curve, const std::string& x_name,
                     const std::string& y_name, const std::filesystem::path& path);

}  // namespace opental::metrics

#pragma once

#include <optional>
#include <span>
#include <vector>

#include "opental/batch_loss.hpp"
#include "opental/diffcore/tape.hpp"

namespace opental::localization {

/// Temporal interval in frame units. Valid iff end > start.
struct Interval {
  double start = 0.0;
  double end = 0.0;

  bool valid() const noexcept { return end > start; }
  double length() const noexcept { return end - start; }
  friend bool operator==(const Interval&, const Interval&) = default;
};

/// Boundary offsets in units of half the coarse interval's width.
struct OffsetPair {
  double start = 0.0;
  double end = 0.0;
};

struct CalibrationParams {
  /// Floor of the localization quality; must lie in [0, 1).
  double gamma = 0.001;
};

/// Temporal IoU. Throws std::invalid_argument on an invalid interval.
double tiou(const Interval& a, const Interval& b);

/// Mean (1 - tIoU) over samples with label >= 1.
BatchLoss coarse_loss(std::span<const Interval> predictions, std::span<const Interval> ground_truth,
                      std::span<const int> labels);

/// Mean L1 offset error, summed over both boundaries, over samples with
/// label >= 1.
BatchLoss refine_loss(std::span<const OffsetPair> predicted, std::span<const OffsetPair> target,
                      std::span<const int> labels);

struct Recovered {
  Interval interval;
  bool valid = false;
};

/// l* = [s + (e - s)/2 * ds, e + (e - s)/2 * de]; flagged invalid when the
/// result has end <= start.
Recovered recover_location(const Interval& coarse, const OffsetPair& offsets);

/// Offsets that recover `target` exactly from `coarse`.
OffsetPair offsets_between(const Interval& coarse, const Interval& target);

/// max(gamma, tIoU(coarse, gt)); a missing ground truth counts as IoU 0.
double calibration_weight(const Interval& coarse, const std::optional<Interval>& gt,
                          const CalibrationParams& params);

/// Cross-entropy pulling u toward 1 - w:
/// -w log(1 - u) - (1 - w) log(u), log arguments floored at kEpsLog.
double iouc_loss(const Interval& coarse, const std::optional<Interval>& gt, double uncertainty,
                 const CalibrationParams& params);
double iouc_loss_from_weight(double weight, double uncertainty);

// Differentiable forms. Intervals are given as N-vectors of starts and ends;
// ground truth, offsets targets, labels and weights are constants.

/// tIoU per sample; N-vector.
diff::Var tiou(diff::Var starts, diff::Var ends, std::span<const Interval> ground_truth);
diff::Var coarse_loss(diff::Var starts, diff::Var ends, std::span<const Interval> ground_truth,
                      std::span<const int> labels);
/// `offsets` is N×2 (start, end).
diff::Var refine_loss(diff::Var offsets, std::span<const OffsetPair> target,
                      std::span<const int> labels);
/// Mean calibration loss over all samples; `uncertainty` is an N-vector.
diff::Var iouc_loss(diff::Var uncertainty, std::span<const double> weights);

}  // namespace opental::localization

#include "opental/localization.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace opental::localization {

using diff::kEpsLog;
using diff::Shape;
using diff::Tensor;
using diff::Var;

double tiou(const Interval& a, const Interval& b) {
  if (!a.valid() || !b.valid()) throw std::invalid_argument("tiou: invalid interval");
  const double inter = std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const double uni = a.length() + b.length() - inter;
  return inter / uni;
}

BatchLoss coarse_loss(std::span<const Interval> predictions, std::span<const Interval> ground_truth,
                      std::span<const int> labels) {
  if (predictions.size() != labels.size() || ground_truth.size() != labels.size()) {
    throw std::invalid_argument("coarse_loss: size mismatch");
  }
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 1) continue;
    acc += 1.0 - tiou(predictions[i], ground_truth[i]);
    ++n;
  }
  if (n == 0) return {0.0, true};
  return {acc / static_cast<double>(n), false};
}

BatchLoss refine_loss(std::span<const OffsetPair> predicted, std::span<const OffsetPair> target,
                      std::span<const int> labels) {
  if (predicted.size() != labels.size() || target.size() != labels.size()) {
    throw std::invalid_argument("refine_loss: size mismatch");
  }
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 1) continue;
    acc += std::abs(predicted[i].start - target[i].start) + std::abs(predicted[i].end - target[i].end);
    ++n;
  }
  if (n == 0) return {0.0, true};
  return {acc / static_cast<double>(n), false};
}

Recovered recover_location(const Interval& coarse, const OffsetPair& offsets) {
  const double half = 0.5 * (coarse.end - coarse.start);
  Interval out{coarse.start + half * offsets.start, coarse.end + half * offsets.end};
  return {out, out.valid()};
}

OffsetPair offsets_between(const Interval& coarse, const Interval& target) {
  const double half = 0.5 * (coarse.end - coarse.start);
  if (!(half > 0.0)) throw std::invalid_argument("offsets_between: invalid coarse interval");
  return {(target.start - coarse.start) / half, (target.end - coarse.end) / half};
}

double calibration_weight(const Interval& coarse, const std::optional<Interval>& gt,
                          const CalibrationParams& params) {
  if (!(params.gamma >= 0.0 && params.gamma < 1.0)) {
    throw std::invalid_argument("calibration gamma outside [0, 1)");
  }
  const double iou = gt ? tiou(coarse, *gt) : 0.0;
  return std::max(params.gamma, iou);
}

double iouc_loss_from_weight(double weight, double uncertainty) {
  const double u = std::clamp(uncertainty, kEpsLog, 1.0 - kEpsLog);
  return -weight * std::log(std::max(1.0 - u, kEpsLog)) - (1.0 - weight) * std::log(u);
}

double iouc_loss(const Interval& coarse, const std::optional<Interval>& gt, double uncertainty,
                 const CalibrationParams& params) {
  return iouc_loss_from_weight(calibration_weight(coarse, gt, params), uncertainty);
}

Var tiou(Var starts, Var ends, std::span<const Interval> ground_truth) {
  const std::size_t n = ground_truth.size();
  if (starts.size() != n || ends.size() != n) {
    throw diff::ShapeError("tiou", starts.shape(), Shape{n});
  }
  Tensor gs(Shape{n}), ge(Shape{n});
  for (std::size_t i = 0; i < n; ++i) {
    gs[i] = ground_truth[i].start;
    ge[i] = ground_truth[i].end;
  }
  diff::Tape& tape = starts.tape();
  Var s = diff::reshape(starts, Shape{n});
  Var e = diff::reshape(ends, Shape{n});
  Var g_s = tape.constant(std::move(gs));
  Var g_e = tape.constant(std::move(ge));
  Var inter = diff::relu(diff::minimum(e, g_e) - diff::maximum(s, g_s));
  Var uni = (e - s) + (g_e - g_s) - inter;
  return inter / uni;
}

Var coarse_loss(Var starts, Var ends, std::span<const Interval> ground_truth,
                std::span<const int> labels) {
  diff::Tape& tape = starts.tape();
  const std::size_t n = labels.size();
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= 1) idx.push_back(i);
  }
  if (idx.empty()) return tape.constant(Tensor::scalar(0.0));
  // Unmatched rows get a placeholder target that keeps the union positive;
  // the mask removes them.
  const Tensor& sv = starts.value();
  const Tensor& ev = ends.value();
  std::vector<Interval> targets(n);
  Tensor mask(Shape{n}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    targets[i] = Interval{sv[i], std::max(ev[i], sv[i] + 1.0)};
  }
  for (std::size_t i : idx) {
    targets[i] = ground_truth[i];
    mask[i] = 1.0;
  }
  Var iou = tiou(starts, ends, targets);
  Var per = (1.0 - iou) * tape.constant(std::move(mask));
  return diff::sum(per) / static_cast<double>(idx.size());
}

Var refine_loss(Var offsets, std::span<const OffsetPair> target, std::span<const int> labels) {
  const Tensor& ov = offsets.value();
  const std::size_t n = labels.size();
  if (ov.rank() != 2 || ov.dim(0) != n || ov.dim(1) != 2 || target.size() != n) {
    throw diff::ShapeError("refine_loss", ov.shape(), Shape{n, 2});
  }
  diff::Tape& tape = offsets.tape();
  Tensor t(Shape{n, 2}, 0.0), mask(Shape{n, 2}, 0.0);
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 1) continue;
    t.at(i, 0) = target[i].start;
    t.at(i, 1) = target[i].end;
    mask.at(i, 0) = mask.at(i, 1) = 1.0;
    ++count;
  }
  if (count == 0) return tape.constant(Tensor::scalar(0.0));
  Var err = diff::abs(offsets - tape.constant(std::move(t))) * tape.constant(std::move(mask));
  return diff::sum(err) / static_cast<double>(count);
}

Var iouc_loss(Var uncertainty, std::span<const double> weights) {
  const std::size_t n = weights.size();
  if (uncertainty.size() != n || n == 0) {
    throw diff::ShapeError("iouc_loss", uncertainty.shape(), Shape{n});
  }
  diff::Tape& tape = uncertainty.tape();
  Var u = diff::clamp(diff::reshape(uncertainty, Shape{n}), kEpsLog, 1.0 - kEpsLog);
  Var w = tape.constant(Tensor(Shape{n}, std::vector<double>(weights.begin(), weights.end())));
  Var per = -(w * diff::log(1.0 - u)) - (1.0 - w) * diff::log(u);
  return diff::mean(per);
}

}  // namespace opental::localization

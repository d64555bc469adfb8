#include "opental/actionness.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace opental::actionness {

using diff::kEpsLog;
using diff::Tensor;
using diff::Var;

PuSelection select(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw std::invalid_argument("actionness: scores and labels differ in length");
  }
  PuSelection sel;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    (labels[i] >= 1 ? sel.positives : sel.unlabeled).push_back(i);
  }
  std::vector<std::size_t> order = sel.unlabeled;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  order.resize(std::min(sel.positives.size(), sel.unlabeled.size()));
  sel.negatives = std::move(order);
  return sel;
}

std::vector<double> select_negatives(const ActionnessBatch& batch) {
  const PuSelection sel = select(batch.scores, batch.labels);
  std::vector<double> out;
  out.reserve(sel.negatives.size());
  for (std::size_t i : sel.negatives) out.push_back(batch.scores[i]);
  return out;
}

double actionness_loss(std::span<const double> positives, std::span<const double> negatives) {
  auto clamped = [](double a) { return std::clamp(a, kEpsLog, 1.0 - kEpsLog); };
  double loss = 0.0;
  if (!positives.empty()) {
    double acc = 0.0;
    for (double a : positives) acc += std::log(clamped(a));
    loss -= acc / static_cast<double>(positives.size());
  }
  if (!negatives.empty()) {
    double acc = 0.0;
    for (double a : negatives) acc += std::log(1.0 - clamped(a));
    loss -= acc / static_cast<double>(negatives.size());
  }
  return loss;
}

Var actionness_loss(Var scores, std::span<const int> labels) {
  const Tensor& a = scores.value();
  const PuSelection sel = select(a.values(), labels);
  diff::Tape& tape = scores.tape();
  Var flat = diff::reshape(scores, diff::Shape{a.size()});
  Var p = diff::clamp(flat, kEpsLog, 1.0 - kEpsLog);
  Var loss = tape.constant(Tensor::scalar(0.0));
  if (!sel.positives.empty()) {
    Tensor mask(diff::Shape{a.size()}, 0.0);
    for (std::size_t i : sel.positives) mask[i] = 1.0;
    Var term = diff::sum(diff::log(p) * tape.constant(std::move(mask)));
    loss = loss - term / static_cast<double>(sel.positives.size());
  }
  if (!sel.negatives.empty()) {
    Tensor mask(diff::Shape{a.size()}, 0.0);
    for (std::size_t i : sel.negatives) mask[i] = 1.0;
    Var term = diff::sum(diff::log(1.0 - p) * tape.constant(std::move(mask)));
    loss = loss - term / static_cast<double>(sel.negatives.size());
  }
  return loss;
}

}  // namespace opental::actionness

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "opental/diffcore/tape.hpp"

namespace opental::actionness {

/// Actionness scores of one training batch with their matched labels
/// (0 = unlabeled, k >= 1 = known class k).
struct ActionnessBatch {
  std::vector<double> scores;
  std::vector<int> labels;
};

/// Batch indices of the positive set, the unlabeled set, and the negatives
/// chosen from the unlabeled set.
struct PuSelection {
  std::vector<std::size_t> positives;
  std::vector<std::size_t> unlabeled;
  std::vector<std::size_t> negatives;
};

/// Splits the batch and picks the min(|P|, |U|) lowest-scoring unlabeled
/// samples as negatives. Ties keep batch order.
PuSelection select(std::span<const double> scores, std::span<const int> labels);

/// Scores of the selected negative set, in ascending order.
std::vector<double> select_negatives(const ActionnessBatch& batch);

/// Balanced BCE: -mean_P log a - mean_N log(1 - a), with scores clamped to
/// [kEpsLog, 1 - kEpsLog]. An empty set contributes 0.
double actionness_loss(std::span<const double> positives, std::span<const double> negatives);

/// Differentiable form over a vector of actionness probabilities. Selection
/// uses the current values; unselected unlabeled samples get no gradient.
diff::Var actionness_loss(diff::Var scores, std::span<const int> labels);

}  // namespace opental::actionness

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "opental/batch_loss.hpp"
#include "opental/diffcore/tape.hpp"

namespace opental::evidential {

using opental::BatchLoss;

/// Dirichlet opinion induced by non-negative class evidence:
/// alpha = e + 1, S = sum(alpha), u = K / S, E[p] = alpha / S.
struct EvidentialOutput {
  std::vector<double> evidence;
  std::vector<double> alpha;
  double strength = 0.0;
  double uncertainty = 1.0;
  std::vector<double> expected_prob;

  std::size_t num_classes() const noexcept { return alpha.size(); }

  static EvidentialOutput from_evidence(std::span<const double> evidence);
  /// Exponential evidence function, e = exp(z).
  static EvidentialOutput from_logits(std::span<const double> logits);
  static EvidentialOutput from_alpha(std::span<const double> alpha);
};

/// Negative log-likelihood of the expected class probability,
/// log(S) - log(alpha_label). `label` is 1-based.
double edl_loss(const EvidentialOutput& out, int label);

/// Label-restricted EDL gradient under e = exp(z):
/// g_j = [j == label] * (1 / alpha_j - u). g_label is the derivative of the
/// loss along a uniform shift of all logits.
std::vector<double> edl_grad_closed_form(const EvidentialOutput& out, int label);

/// Influence of one sample on the last-layer weights: |g|_1 * |h|_1, which
/// equals the entrywise L1 norm of the outer-product gradient g hᵀ.
double influence_value(std::span<const double> g, std::span<const double> h);

struct MibConfig {
  double momentum = 0.99;
  std::size_t num_bins = 50;
  /// Re-weighting is active from this training iteration on.
  long warmup_iterations = 0;
};

/// Momentum importance-balanced weights kept per gradient-norm bin. Bins
/// split [0, 1] into equal intervals; every bin starts at weight 1.0.
class MibState {
 public:
  explicit MibState(MibConfig config = {});

  const MibConfig& config() const noexcept { return config_; }
  std::span<const double> bin_weights() const noexcept { return bins_; }

  /// Bin index for a gradient norm in [0, 1]. Values exactly on an interior
  /// edge go to the lower bin. Throws std::out_of_range outside [0, 1].
  std::size_t bin_of(double grad_norm) const;

  /// Folds one batch into the bins: each bin that received samples moves to
  /// momentum * previous + (1 - momentum) * mean(influences in bin). Returns
  /// the per-sample weights, which are all 1.0 before the warmup ends or when
  /// momentum == 1.
  std::vector<double> update(std::span<const double> grad_norms,
                             std::span<const double> influences, long iteration);

  /// Single-sample form of update().
  double update_and_weight(double grad_norm, double influence, long iteration);

 private:
  MibConfig config_;
  std::vector<double> bins_;
};

/// (1/N) sum_i w_i * edl_loss_i with w from `state` (updated in the process).
BatchLoss mib_edl_loss(std::span<const EvidentialOutput> outputs, std::span<const int> labels,
                       std::span<const std::vector<double>> features, MibState& state,
                       long iteration);

/// Mean plain EDL loss over the batch.
BatchLoss mean_edl_loss(std::span<const EvidentialOutput> outputs, std::span<const int> labels);

/// Differentiable per-sample EDL loss for logits (N×K) and 1-based labels;
/// evidence is exp(logits). Returns an N-vector.
diff::Var edl_loss_per_sample(diff::Var logits, std::span<const int> labels);

/// Differentiable weighted mean (1/N) sum_i w_i * loss_i. The weights are
/// constants. `losses` must be an N-vector with N == weights.size() >= 1.
diff::Var weighted_mean(diff::Var losses, std::span<const double> weights);

}  // namespace opental::evidential

#include "opental/evidential.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace opental::evidential {

using diff::Tensor;
using diff::Var;

EvidentialOutput EvidentialOutput::from_evidence(std::span<const double> evidence) {
  if (evidence.empty()) throw std::invalid_argument("EvidentialOutput: no classes");
  std::vector<double> alpha(evidence.size());
  for (std::size_t j = 0; j < evidence.size(); ++j) {
    if (!(evidence[j] >= 0.0)) throw std::invalid_argument("EvidentialOutput: negative evidence");
    alpha[j] = evidence[j] + 1.0;
  }
  EvidentialOutput out = from_alpha(alpha);
  out.evidence.assign(evidence.begin(), evidence.end());
  return out;
}

EvidentialOutput EvidentialOutput::from_logits(std::span<const double> logits) {
  std::vector<double> e(logits.size());
  for (std::size_t j = 0; j < logits.size(); ++j) e[j] = std::exp(logits[j]);
  return from_evidence(e);
}

EvidentialOutput EvidentialOutput::from_alpha(std::span<const double> alpha) {
  if (alpha.empty()) throw std::invalid_argument("EvidentialOutput: no classes");
  EvidentialOutput out;
  out.alpha.assign(alpha.begin(), alpha.end());
  out.evidence.resize(alpha.size());
  double s = 0.0;
  for (std::size_t j = 0; j < alpha.size(); ++j) {
    if (!(alpha[j] >= 1.0)) throw std::invalid_argument("EvidentialOutput: alpha below 1");
    out.evidence[j] = alpha[j] - 1.0;
    s += alpha[j];
  }
  out.strength = s;
  out.uncertainty = static_cast<double>(alpha.size()) / s;
  out.expected_prob.resize(alpha.size());
  for (std::size_t j = 0; j < alpha.size(); ++j) out.expected_prob[j] = alpha[j] / s;
  return out;
}

namespace {

std::size_t label_index(const EvidentialOutput& out, int label) {
  if (label < 1 || static_cast<std::size_t>(label) > out.num_classes()) {
    throw std::out_of_range("EDL label " + std::to_string(label) + " outside [1, " +
                            std::to_string(out.num_classes()) + "]");
  }
  return static_cast<std::size_t>(label - 1);
}

}  // namespace

double edl_loss(const EvidentialOutput& out, int label) {
  const std::size_t k = label_index(out, label);
  return std::log(out.strength) - std::log(out.alpha[k]);
}

std::vector<double> edl_grad_closed_form(const EvidentialOutput& out, int label) {
  const std::size_t k = label_index(out, label);
  std::vector<double> g(out.num_classes(), 0.0);
  g[k] = 1.0 / out.alpha[k] - out.uncertainty;
  return g;
}

double influence_value(std::span<const double> g, std::span<const double> h) {
  double gn = 0.0, hn = 0.0;
  for (double v : g) gn += std::abs(v);
  for (double v : h) hn += std::abs(v);
  return gn * hn;
}

MibState::MibState(MibConfig config) : config_(config), bins_(config.num_bins, 1.0) {
  if (config_.num_bins == 0) throw std::invalid_argument("MibState: num_bins must be >= 1");
  if (!(config_.momentum >= 0.0 && config_.momentum <= 1.0)) {
    throw std::invalid_argument("MibState: momentum outside [0, 1]");
  }
}

std::size_t MibState::bin_of(double grad_norm) const {
  if (!(grad_norm >= 0.0 && grad_norm <= 1.0)) {
    throw std::out_of_range("MIB gradient norm " + std::to_string(grad_norm) +
                            " outside [0, 1]");
  }
  const double scaled = grad_norm * static_cast<double>(config_.num_bins);
  auto m = static_cast<std::size_t>(std::floor(scaled));
  if (m > 0 && static_cast<double>(m) == scaled) --m;
  return std::min(m, config_.num_bins - 1);
}

std::vector<double> MibState::update(std::span<const double> grad_norms,
                                     std::span<const double> influences, long iteration) {
  if (grad_norms.size() != influences.size()) {
    throw std::invalid_argument("MibState::update: size mismatch");
  }
  if (iteration < 0) throw std::invalid_argument("MibState::update: negative iteration");
  std::vector<std::size_t> which(grad_norms.size());
  for (std::size_t i = 0; i < grad_norms.size(); ++i) which[i] = bin_of(grad_norms[i]);

  const double eps = config_.momentum;
  if (eps < 1.0) {
    std::vector<double> sums(bins_.size(), 0.0);
    std::vector<std::size_t> counts(bins_.size(), 0);
    for (std::size_t i = 0; i < which.size(); ++i) {
      sums[which[i]] += influences[i];
      ++counts[which[i]];
    }
    for (std::size_t m = 0; m < bins_.size(); ++m) {
      if (counts[m] == 0) continue;
      bins_[m] = eps * bins_[m] + (1.0 - eps) * (sums[m] / static_cast<double>(counts[m]));
    }
  }

  std::vector<double> weights(which.size(), 1.0);
  if (iteration >= config_.warmup_iterations && eps < 1.0) {
    for (std::size_t i = 0; i < which.size(); ++i) weights[i] = bins_[which[i]];
  }
  return weights;
}

double MibState::update_and_weight(double grad_norm, double influence, long iteration) {
  const double g[1] = {grad_norm};
  const double w[1] = {influence};
  return update(g, w, iteration)[0];
}

BatchLoss mib_edl_loss(std::span<const EvidentialOutput> outputs, std::span<const int> labels,
                       std::span<const std::vector<double>> features, MibState& state,
                       long iteration) {
  if (outputs.size() != labels.size() || outputs.size() != features.size()) {
    throw std::invalid_argument("mib_edl_loss: batch size mismatch");
  }
  if (outputs.empty()) return {0.0, true};
  std::vector<double> norms(outputs.size()), influences(outputs.size()), losses(outputs.size());
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const std::vector<double> g = edl_grad_closed_form(outputs[i], labels[i]);
    double gn = 0.0;
    for (double v : g) gn += std::abs(v);
    norms[i] = gn;
    influences[i] = influence_value(g, features[i]);
    losses[i] = edl_loss(outputs[i], labels[i]);
  }
  const std::vector<double> w = state.update(norms, influences, iteration);
  double acc = 0.0;
  for (std::size_t i = 0; i < losses.size(); ++i) acc += w[i] * losses[i];
  return {acc / static_cast<double>(losses.size()), false};
}

BatchLoss mean_edl_loss(std::span<const EvidentialOutput> outputs, std::span<const int> labels) {
  if (outputs.size() != labels.size()) throw std::invalid_argument("mean_edl_loss: size mismatch");
  if (outputs.empty()) return {0.0, true};
  double acc = 0.0;
  for (std::size_t i = 0; i < outputs.size(); ++i) acc += edl_loss(outputs[i], labels[i]);
  return {acc / static_cast<double>(outputs.size()), false};
}

Var edl_loss_per_sample(Var logits, std::span<const int> labels) {
  const Tensor& z = logits.value();
  if (z.rank() != 2 || z.dim(0) != labels.size()) {
    throw diff::ShapeError("edl_loss_per_sample", z.shape(), diff::Shape{labels.size()});
  }
  const std::size_t n = z.dim(0), k = z.dim(1);
  Tensor onehot(diff::Shape{n, k}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 1 || static_cast<std::size_t>(labels[i]) > k) {
      throw std::out_of_range("EDL label " + std::to_string(labels[i]) + " outside [1, " +
                              std::to_string(k) + "]");
    }
    onehot.at(i, static_cast<std::size_t>(labels[i] - 1)) = 1.0;
  }
  diff::Tape& tape = logits.tape();
  Var alpha = diff::exp(logits) + 1.0;
  Var strength = diff::sum(alpha, 1);
  Var alpha_label = diff::sum(alpha * tape.constant(std::move(onehot)), 1);
  return diff::log(strength) - diff::log(alpha_label);
}

Var weighted_mean(Var losses, std::span<const double> weights) {
  if (losses.size() != weights.size() || weights.empty()) {
    throw diff::ShapeError("weighted_mean", losses.shape(), diff::Shape{weights.size()});
  }
  Var w = losses.tape().constant(
      Tensor(losses.shape(), std::vector<double>(weights.begin(), weights.end())));
  return diff::sum(losses * w) / static_cast<double>(weights.size());
}

}  // namespace opental::evidential

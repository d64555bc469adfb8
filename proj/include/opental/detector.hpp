#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "opental/diffcore/tape.hpp"
#include "opental/evidential.hpp"
#include "opental/kvconfig.hpp"
#include "opental/localization.hpp"
#include "opental/synthdata.hpp"

namespace opental::model {

using localization::Interval;
using localization::OffsetPair;

enum class Mode { kOpenTal, kVanillaEdl, kSoftmax };

std::string to_string(Mode m);
Mode mode_from_string(const std::string& s);

struct DetectorConfig {
  int window_radius = 4;
  int hidden = 32;
  int refine_hidden = 32;
  /// Frames on either side of a coarse boundary pooled into the refined
  /// stage's context.
  int boundary_width = 4;
  /// Coarse widths are width_scale * softplus(raw), initialized to
  /// init_half_width frames.
  double width_scale = 16.0;
  double init_half_width = 20.0;

  double mu = 10.0;
  double learning_rate = 1e-3;
  int epochs = 25;
  int batch_sequences = 4;
  std::uint64_t seed = 1;

  bool use_mib = true;
  bool use_actionness = true;
  bool use_iouc = true;
  Mode mode = Mode::kOpenTal;

  double momentum = 0.99;
  int bins = 50;
  int warmup_epochs = 10;
  double gamma = 0.001;
  double tiou_train = 0.5;

  /// Classification losses use only matched proposals.
  bool mib_active() const { return mode == Mode::kOpenTal && use_mib; }
  bool actionness_active() const { return mode == Mode::kOpenTal && use_actionness; }
  bool iouc_active() const { return mode == Mode::kOpenTal && use_iouc; }
  /// Without actionness the classifier gains a background class.
  bool background_class() const {
    return mode == Mode::kSoftmax || (mode == Mode::kOpenTal && !use_actionness);
  }

  /// Throws InputError on invalid values.
  void validate(int num_classes) const;

  KvConfig to_config() const;
  /// Reads keys under the [model] and [train] sections.
  static DetectorConfig from_config(const KvConfig& cfg);
};

struct Parameter {
  std::string name;
  diff::Tensor value;
  diff::Tensor grad;
};

/// Per-proposal outputs of the refined stage, detached from any tape.
struct ProposalOutputs {
  Interval coarse;
  Interval refined;
  bool refined_valid = false;
  /// Dirichlet parameters (EDL modes) or known-class probabilities (softmax).
  std::vector<double> expected_prob;
  double uncertainty = 1.0;
  double actionness = 1.0;
};

/// Tape variables of one forward pass over a batch of sequences. Rows are
/// the timesteps of all sequences, concatenated.
struct ForwardPass {
  diff::Var h_coarse;        // rows×H
  diff::Var coarse_start;    // rows
  diff::Var coarse_end;      // rows
  diff::Var coarse_logits;   // rows×C
  diff::Var coarse_act;      // rows×1, probabilities
  diff::Var h_refine;        // rows×H2
  diff::Var refine_offsets;  // rows×2
  diff::Var refine_logits;   // rows×C
  diff::Var refine_act;      // rows×1
  std::vector<Interval> coarse;
  std::vector<localization::Recovered> refined;
  /// Row ranges per sequence.
  std::vector<std::size_t> offsets;
};

/// Constant refined-stage input derived from the coarse intervals.
struct RefineContext {
  diff::Tensor features;  // rows×(5·D)
};

/// Tiny anchor-free temporal detector: a shared perceptron over a local
/// window emits coarse intervals, class logits and actionness; a refined
/// stage sees pooled features of the coarse interval and emits offsets,
/// logits and actionness.
class Detector {
 public:
  Detector(DetectorConfig config, int num_classes, int channels);

  const DetectorConfig& config() const noexcept { return config_; }
  int num_classes() const noexcept { return num_classes_; }
  int channels() const noexcept { return channels_; }
  /// Logit channels: K + 1 with a background class (channel 0), else K.
  int logit_channels() const noexcept;
  int input_width() const noexcept { return (2 * config_.window_radius + 1) * channels_; }

  std::vector<Parameter>& parameters() noexcept { return params_; }
  const std::vector<Parameter>& parameters() const noexcept { return params_; }
  Parameter& parameter(const std::string& name);
  const Parameter& parameter(const std::string& name) const;

  /// Deterministic Glorot-uniform initialization from `seed`.
  void initialize(std::uint64_t seed);
  void zero_grad();

  /// Window features (rows×input_width) for the given sequences.
  diff::Tensor window_features(std::span<const synthdata::Sequence* const> seqs) const;
  /// Pooled context of the coarse intervals (rows×5D).
  RefineContext refine_context(std::span<const synthdata::Sequence* const> seqs,
                               std::span<const Interval> coarse) const;

  /// Full forward pass. Parameters enter the tape as variables when
  /// `params` is given (their order matches parameters()), otherwise as
  /// constants. When `context` is null it is computed from the coarse
  /// intervals.
  ForwardPass forward(diff::Tape& tape, std::span<const synthdata::Sequence* const> seqs,
                      std::span<const diff::Var> params = {},
                      const RefineContext* context = nullptr) const;

  /// Registers all parameters on `tape` as gradient-tracking variables.
  std::vector<diff::Var> bind(diff::Tape& tape) const;

  /// Detached refined-stage outputs for every timestep of one sequence.
  std::vector<ProposalOutputs> predict(const synthdata::Sequence& seq) const;

 private:
  DetectorConfig config_;
  int num_classes_;
  int channels_;
  std::vector<Parameter> params_;
};

/// Targets of one batch, computed from a forward pass and held constant for
/// differentiation.
struct TrainTargets {
  std::vector<int> coarse_labels;
  std::vector<Interval> coarse_gt;
  std::vector<OffsetPair> offset_targets;
  std::vector<int> refine_labels;
  /// Calibration weight max(gamma, tIoU(coarse, best gt)) per row.
  std::vector<double> iouc_weights;
  /// MIB weights for the classified rows of each stage, in row order.
  std::vector<double> coarse_weights;
  std::vector<double> refine_weights;
};

/// Matches proposals and fills every target except the MIB weights, which
/// are set to 1.
TrainTargets build_targets(const ForwardPass& pass,
                           std::span<const synthdata::Sequence* const> seqs,
                           const DetectorConfig& config);

/// Rows entering the classification loss with their 1-based logit channel:
/// matched rows only, or every row (background on channel 1) when the
/// classifier has a background class.
struct ClassRows {
  std::vector<std::size_t> rows;
  std::vector<int> classes;
};
ClassRows classification_rows(std::span<const int> labels, const DetectorConfig& config);

/// Gradient norms and influence values of the classified rows of one stage,
/// from the closed-form EDL gradient.
struct InfluenceBatch {
  std::vector<double> grad_norms;
  std::vector<double> influences;
};
InfluenceBatch stage_influence(diff::Var logits, diff::Var hidden, const ClassRows& rows);

struct LossTerms {
  diff::Var total;
  double classification = 0.0;
  double actionness = 0.0;
  double localization = 0.0;
  double calibration = 0.0;
};

/// mu * L_cls + L_act + L_loc + mean L_iouc with terms removed per the
/// config; in softmax mode L_cls is (K+1)-way cross-entropy and the
/// actionness and calibration terms are dropped.
LossTerms total_loss(const ForwardPass& pass, const TrainTargets& targets,
                     const DetectorConfig& config);

}  // namespace opental::model

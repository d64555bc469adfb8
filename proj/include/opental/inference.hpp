#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "opental/detector.hpp"
#include "opental/synthdata.hpp"

namespace opental::inference {

using localization::Interval;
using model::ProposalOutputs;

enum class Decision { kBackground, kUnknown, kKnown };

std::string to_string(Decision d);

struct Detection {
  int sequence_id = 0;
  Interval interval;
  Decision decision = Decision::kBackground;
  /// argmax_j E[p]_j (1-based); meaningful for every decision, reported only
  /// for Known.
  int label = 0;
  double uncertainty = 1.0;
  double actionness = 0.0;
  std::vector<double> expected_prob;
  /// Unknown-ness score from the active scoring function.
  double score = 0.0;
  /// False when the scoring function excludes this detection from open-set
  /// evaluation.
  bool scored = true;

  /// Ranking key for suppression and matching: actionness * (1 - u).
  double confidence() const noexcept { return actionness * (1.0 - uncertainty); }
};

enum class ScoringFunction {
  kOneMinusMaxProb,
  kUncertaintyOverInactivity,  // u / (1 - a)
  kActivityOverCertainty,      // a / (1 - u)
  kUncertaintyTimesActivity,   // u * a
  kTwoLevel,
};

std::string to_string(ScoringFunction f);
/// Accepts one_minus_max_prob, u_over_one_minus_a, a_over_one_minus_u,
/// u_times_a, two_level. Throws InputError otherwise.
ScoringFunction scoring_from_string(const std::string& s);

inline constexpr double kActionnessGate = 0.5;

/// Unknown-ness of one proposal. Denominators are floored at kEpsLog.
double score(const ProposalOutputs& p, ScoringFunction fn);
/// Whether `fn` keeps this proposal in open-set evaluation; two_level drops
/// actionness <= 0.5.
bool scored(const ProposalOutputs& p, ScoringFunction fn);

/// Background below the actionness gate, otherwise Unknown when u > tau,
/// otherwise Known(argmax E[p]).
Detection decide(const ProposalOutputs& p, double tau);

/// Nearest-rank quantile: the ceil(q n)-th smallest value, the minimum for
/// q = 0. Throws InputError on an empty set or q outside [0, 1].
double select_tau(std::span<const double> uncertainties, double quantile);

/// Greedy temporal NMS: keeps detections in descending confidence order
/// (earlier start first on ties), dropping any whose tIoU with a kept one is
/// at least `threshold`. Returns kept indices in keep order.
std::vector<std::size_t> nms(std::span<const Detection> dets, double threshold = 0.5);

/// Decides and scores every valid refined proposal of a sequence, then
/// suppresses duplicates.
std::vector<Detection> detect(const model::Detector& det, const synthdata::Sequence& seq,
                              double tau, ScoringFunction fn);

/// Uncertainties of training detections that overlap a known annotation by
/// more than `tiou_threshold` with actionness above the gate.
std::vector<double> training_known_uncertainties(const model::Detector& det,
                                                 std::span<const synthdata::Sequence> train,
                                                 double tiou_threshold = 0.5);

/// Detections for many sequences, parallel across sequences; output order
/// follows the input.
std::vector<std::vector<Detection>> detect_all(const model::Detector& det,
                                               std::span<const synthdata::Sequence> seqs,
                                               double tau, ScoringFunction fn);

/// One JSON object per line: sequence_id, start, end, decision, class, u,
/// actionness, score.
void write_detections_jsonl(std::span<const std::vector<Detection>> dets,
                            const std::filesystem::path& path);

}  // namespace opental::inference

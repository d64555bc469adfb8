#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "opental/diffcore/tensor.hpp"
#include "opental/kvconfig.hpp"
#include "opental/localization.hpp"

namespace opental::synthdata {

using localization::Interval;
using localization::OffsetPair;

enum class Split { kTrain, kTest };

std::string to_string(Split s);

/// Generation parameters of a synthetic open-set benchmark.
struct SplitSpec {
  std::uint64_t seed = 7;
  int known_classes = 6;
  int unknown_classes = 3;
  int train_sequences = 200;
  int test_sequences = 100;
  int length = 256;   // T
  int channels = 16;  // D
  /// Ratio of signature energy to expected per-frame noise energy; infinity
  /// disables noise.
  double snr = 0.02;
  double min_action_fraction = 1.0 / 16.0;
  double max_action_fraction = 1.0 / 4.0;
  int max_actions = 3;
  /// Fraction of training sequences carrying an unannotated unknown-class
  /// segment.
  double distractor_rate = 0.3;
  /// Upper bound on pairwise signature dot products.
  double max_signature_dot = 0.3;

  int total_classes() const noexcept { return known_classes + unknown_classes; }
  bool is_known(int cls) const noexcept { return cls >= 1 && cls <= known_classes; }
  /// Throws InputError on inconsistent parameters.
  void validate() const;

  KvConfig to_config() const;
  static SplitSpec from_config(const KvConfig& cfg);
};

struct Annotation {
  Interval interval;
  int label = 0;  // 1..total_classes
};

struct Sequence {
  int id = 0;
  Split split = Split::kTrain;
  diff::Tensor features;  // T×D
  std::vector<Annotation> annotations;
  /// Unannotated unknown-class segments (training only). Not serialized.
  std::vector<Annotation> distractors;

  std::size_t length() const { return features.dim(0); }
  std::size_t channels() const { return features.dim(1); }
};

struct Dataset {
  SplitSpec spec;
  std::vector<std::vector<double>> signatures;  // index c-1 for class c
  std::vector<Sequence> train;
  std::vector<Sequence> test;

  /// Annotation count per class for one split.
  std::map<int, int> class_histogram(Split split) const;
};

/// Deterministic generator: the same spec always yields bit-identical data,
/// independent of thread count. Throws InputError when actions cannot be
/// packed into a sequence.
Dataset generate(const SplitSpec& spec);

/// Writes spec.toml, sequences.bin and annotations.jsonl into `dir`.
void save(const Dataset& data, const std::filesystem::path& dir);
/// Reads the three-file layout. Throws InputError for missing files and
/// FormatError for malformed contents. Signatures are regenerated from the
/// spec; distractors are not recovered.
Dataset load(const std::filesystem::path& dir);

inline constexpr char kSequenceMagic[8] = {'O', 'T', 'A', 'L', 'S', 'E', 'Q', '1'};

struct ProposalMatch {
  /// Class of the matched annotation, or 0 when no tIoU exceeds the threshold.
  int label = 0;
  /// Best-overlap annotation (-1 when there are none) and its tIoU, reported
  /// even when below the threshold.
  int annotation = -1;
  double iou = 0.0;
  /// Regression target relative to the proposal; set for matched proposals.
  OffsetPair offsets;
};

/// Matches every proposal to the annotation of maximal tIoU; ties go to the
/// earlier-starting annotation. Invalid proposals never match.
std::vector<ProposalMatch> match_proposals(std::span<const Interval> proposals,
                                           std::span<const Annotation> annotations,
                                           double tiou_threshold);

}  // namespace opental::synthdata

#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "opental/detector.hpp"
#include "opental/inference.hpp"
#include "opental/synthdata.hpp"
#include "opental/trainer.hpp"

namespace opental::pipeline {

/// Detector settings ([model], [train]) plus evaluation settings ([eval]).
struct ExperimentConfig {
  model::DetectorConfig detector;
  inference::ScoringFunction scoring = inference::ScoringFunction::kTwoLevel;
  double tau_quantile = 0.95;
  /// Localization gate used for ablation summaries.
  double t0 = 0.5;
  std::vector<std::uint64_t> seeds{1, 2, 3};

  void validate() const;
  KvConfig to_config() const;
  static ExperimentConfig from_config(const KvConfig& cfg);
};

struct EvalOutcome {
  nlohmann::json report;
  double tau = 0.0;
  inference::ScoringFunction scoring = inference::ScoringFunction::kTwoLevel;
  std::vector<inference::Detection> detections;
};

/// Scoring actually used for a detector: softmax models always use
/// one_minus_max_prob.
inference::ScoringFunction effective_scoring(const model::Detector& det,
                                             inference::ScoringFunction requested);

/// Selects tau on the training split and evaluates on the test split.
EvalOutcome evaluate(const model::Detector& det, const synthdata::Dataset& data,
                     inference::ScoringFunction scoring, double tau_quantile);

/// Writes report.json, detections.jsonl and instances.jsonl into `dir`.
void write_eval(const EvalOutcome& outcome, const model::Detector& det,
                const synthdata::Dataset& data, const std::filesystem::path& dir);

/// Writes weights.bin, train_log.csv, mib_bins.csv and config.toml.
void write_training(const model::TrainResult& result, const std::filesystem::path& dir);

struct Variant {
  std::string name;
  model::DetectorConfig config;
};

/// full, wo-MIB, wo-ACT, wo-IoUC, vanilla-EDL, softmax.
std::vector<Variant> ablation_variants(const model::DetectorConfig& base);

struct AblationRow {
  std::string variant;
  std::uint64_t seed = 0;
  /// far95, auroc, aupr, osdr at the configured t0; NaN when undefined.
  double far95 = 0.0, auroc = 0.0, aupr = 0.0, osdr = 0.0;
  double seconds = 0.0;
};

struct AblationSummary {
  std::string variant;
  double mean[4] = {};
  double stddev[4] = {};
};

/// Trains and evaluates every variant for every seed. When `out` is not
/// empty, each run's artifacts go to out/<variant>/seed<k>/.
std::vector<AblationRow> run_ablation(const ExperimentConfig& cfg, const synthdata::Dataset& data,
                                      const std::filesystem::path& out, std::ostream* progress);

/// Mean and sample standard deviation per variant, in variant order.
std::vector<AblationSummary> summarize(const std::vector<AblationRow>& rows);

/// Aligned table with FAR@95, AUROC, AUPR, OSDR columns as mean ± std.
std::string format_table(const std::vector<AblationSummary>& summary);

void write_ablation(const std::vector<AblationRow>& rows, const std::vector<AblationSummary>& summary,
                    const std::filesystem::path& dir);

}  // namespace opental::pipeline

#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "opental/detector.hpp"
#include "opental/synthdata.hpp"

namespace opental::model {

/// Adaptive moment estimation with bias correction and a fixed step size.
class Adam {
 public:
  explicit Adam(std::span<const Parameter> params, double learning_rate, double beta1 = 0.9,
                double beta2 = 0.999, double epsilon = 1e-8);
  /// Applies one update using each parameter's `grad`.
  void step(std::span<Parameter> params);
  long steps() const noexcept { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<diff::Tensor> m_, v_;
};

struct EpochLog {
  int epoch = 0;
  double classification = 0.0;
  double actionness = 0.0;
  double localization = 0.0;
  double calibration = 0.0;
  double total = 0.0;
  std::vector<double> coarse_bins;
  std::vector<double> refine_bins;
};

struct TrainResult {
  Detector detector;
  std::vector<EpochLog> log;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Trains a freshly initialized detector on the training split. Throws
/// DivergenceError on a non-finite loss.
TrainResult train(const DetectorConfig& config, const synthdata::Dataset& data,
                  const EpochCallback& on_epoch = {});

/// epoch,classification,actionness,localization,calibration,total
void write_log_csv(std::span<const EpochLog> log, const std::filesystem::path& path);
/// epoch,stage,bin,weight
void write_bins_csv(std::span<const EpochLog> log, const std::filesystem::path& path);

/// Fraction of frames inside known-class annotations whose refined-stage
/// argmax class matches the annotation.
double closed_set_frame_accuracy(const Detector& det, std::span<const synthdata::Sequence> seqs);

}  // namespace opental::model

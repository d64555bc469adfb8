#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "opental/error.hpp"
#include "opental/metrics.hpp"
#include "opental/pipeline.hpp"
#include "opental/weights_io.hpp"

namespace fs = std::filesystem;
using namespace opental;

namespace {

enum Exit { kOk = 0, kInput = 2, kFormat = 3, kDivergence = 4 };

struct Options {
  std::string spec, config, weights, data, out;
  std::optional<int> seeds;
  std::optional<std::string> scoring;
  std::optional<double> tau_quantile, epsilon, gamma, mu, tiou_train, t0;
  std::optional<int> bins;
};

pipeline::ExperimentConfig experiment(const Options& o) {
  KvConfig kv;
  if (!o.config.empty()) kv = KvConfig::load(o.config);
  pipeline::ExperimentConfig e = pipeline::ExperimentConfig::from_config(kv);
  if (o.epsilon) e.detector.momentum = *o.epsilon;
  if (o.bins) e.detector.bins = *o.bins;
  if (o.gamma) e.detector.gamma = *o.gamma;
  if (o.mu) e.detector.mu = *o.mu;
  if (o.tiou_train) e.detector.tiou_train = *o.tiou_train;
  if (o.scoring) e.scoring = inference::scoring_from_string(*o.scoring);
  if (o.tau_quantile) e.tau_quantile = *o.tau_quantile;
  if (o.t0) e.t0 = *o.t0;
  if (o.seeds) {
    if (*o.seeds < 1) throw InputError("--seeds must be >= 1");
    e.seeds.clear();
    for (int s = 1; s <= *o.seeds; ++s) e.seeds.push_back(static_cast<std::uint64_t>(s));
  }
  e.validate();
  return e;
}

synthdata::SplitSpec split_spec(const Options& o) {
  synthdata::SplitSpec s;
  if (!o.spec.empty()) s = synthdata::SplitSpec::from_config(KvConfig::load(o.spec));
  s.validate();
  return s;
}

synthdata::Dataset dataset(const Options& o) {
  if (!o.data.empty()) return synthdata::load(o.data);
  return synthdata::generate(split_spec(o));
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw InputError(std::string(flag) + " is required");
}

int cmd_generate(const Options& o) {
  require(o.out, "--out");
  const auto data = synthdata::generate(split_spec(o));
  synthdata::save(data, o.out);
  std::cout << "wrote " << data.train.size() << " train and " << data.test.size()
            << " test sequences to " << o.out << '\n';
  return kOk;
}

int cmd_train(const Options& o) {
  require(o.data, "--data");
  require(o.out, "--out");
  const auto cfg = experiment(o);
  const auto data = synthdata::load(o.data);
  const auto result = model::train(cfg.detector, data, [](const model::EpochLog& e) {
    std::cout << "epoch " << e.epoch << " loss " << e.total << '\n' << std::flush;
  });
  pipeline::write_training(result, o.out);
  std::cout << "wrote " << (fs::path(o.out) / "weights.bin").string() << '\n';
  return kOk;
}

int cmd_eval(const Options& o) {
  require(o.weights, "--weights");
  require(o.data, "--data");
  require(o.out, "--out");
  const auto cfg = experiment(o);
  const auto det = model::load_detector(o.weights);
  const auto data = synthdata::load(o.data);
  const auto outcome = pipeline::evaluate(det, data, cfg.scoring, cfg.tau_quantile);
  pipeline::write_eval(outcome, det, data, o.out);
  std::cout << outcome.report.dump(2) << '\n';
  return kOk;
}

int cmd_ablate(const Options& o) {
  require(o.out, "--out");
  const auto cfg = experiment(o);
  const auto data = dataset(o);
  const auto rows = pipeline::run_ablation(cfg, data, o.out, &std::cerr);
  const auto summary = pipeline::summarize(rows);
  pipeline::write_ablation(rows, summary, o.out);
  std::cout << pipeline::format_table(summary);
  return kOk;
}

int cmd_curves(const Options& o) {
  require(o.data, "--data");
  require(o.out, "--out");
  const auto groups = metrics::read_instances_jsonl(fs::path(o.data) / "instances.jsonl");
  fs::create_directories(o.out);
  int written = 0;
  for (const auto& [key, sets] : groups) {
    if (o.t0 && metrics::threshold_key(*o.t0) != key) continue;
    std::vector<double> s;
    std::vector<int> l;
    metrics::flatten(sets, s, l);
    try {
      metrics::write_curve_csv(metrics::roc_curve(s, l), "fpr", "tpr", fs::path(o.out) / ("roc_t" + key + ".csv"));
      metrics::write_curve_csv(metrics::pr_curve(s, l), "recall", "precision", fs::path(o.out) / ("pr_t" + key + ".csv"));
      metrics::write_curve_csv(metrics::cdr_fpr_curve(sets), "fpr", "cdr", fs::path(o.out) / ("osdr_t" + key + ".csv"));
      ++written;
    } catch (const std::domain_error& e) {
      std::cerr << "skipping t0=" << key << ": " << e.what() << '\n';
    }
  }
  std::cout << "wrote curves for " << written << " threshold(s) to " << o.out << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Open-set temporal action localization on synthetic sequences"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&o](CLI::App* c) {
    c->add_option("--config", o.config, "Experiment config (TOML-style key = value)");
    c->add_option("--out", o.out, "Output directory");
    c->add_option("--epsilon", o.epsilon, "MIB momentum");
    c->add_option("--bins", o.bins, "MIB gradient-norm bins");
    c->add_option("--gamma", o.gamma, "Calibration floor");
    c->add_option("--mu", o.mu, "Classification loss weight");
    c->add_option("--tiou-train", o.tiou_train, "Training match threshold");
    c->add_option("--scoring", o.scoring, "Scoring function");
    c->add_option("--tau-quantile", o.tau_quantile, "Quantile of training uncertainties used as tau");
    c->add_option("--t0", o.t0, "Localization gate for summaries and curves");
  };

  auto* gen = app.add_subcommand("generate", "Generate a synthetic dataset");
  gen->add_option("--spec", o.spec, "Dataset spec file");
  gen->add_option("--out", o.out, "Output directory");

  auto* train = app.add_subcommand("train", "Train a detector");
  add_common(train);
  train->add_option("--data", o.data, "Dataset directory");

  auto* eval = app.add_subcommand("eval", "Evaluate trained weights");
  add_common(eval);
  eval->add_option("--weights", o.weights, "Weights file");
  eval->add_option("--data", o.data, "Dataset directory");

  auto* ablate = app.add_subcommand("ablate", "Train and evaluate all ablation variants");
  add_common(ablate);
  ablate->add_option("--data", o.data, "Dataset directory (generated from --spec when absent)");
  ablate->add_option("--spec", o.spec, "Dataset spec file");
  ablate->add_option("--seeds", o.seeds, "Number of seeds (1..N)");

  auto* curves = app.add_subcommand("curves", "Export ROC, PR and CDR-FPR curves");
  curves->add_option("--data", o.data, "Evaluation directory holding instances.jsonl");
  curves->add_option("--out", o.out, "Output directory");
  curves->add_option("--t0", o.t0, "Only this localization gate");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInput;
  }

  try {
    if (*gen) return cmd_generate(o);
    if (*train) return cmd_train(o);
    if (*eval) return cmd_eval(o);
    if (*ablate) return cmd_ablate(o);
    if (*curves) return cmd_curves(o);
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return kFormat;
  } catch (const DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << '\n';
    return kDivergence;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kInput;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInput;
  }
  return kOk;
}

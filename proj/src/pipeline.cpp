#include "opental/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "opental/error.hpp"
#include "opental/metrics.hpp"
#include "opental/weights_io.hpp"

namespace opental::pipeline {

using nlohmann::json;

void ExperimentConfig::validate() const {
  if (!(tau_quantile >= 0.0 && tau_quantile <= 1.0)) throw InputError("tau quantile outside [0, 1]");
  if (!(t0 > 0.0 && t0 < 1.0)) throw InputError("t0 outside (0, 1)");
  if (seeds.empty()) throw InputError("at least one seed is required");
}

KvConfig ExperimentConfig::to_config() const {
  KvConfig c = detector.to_config();
  c.set_string("eval.scoring", inference::to_string(scoring));
  c.set_double("eval.tau_quantile", tau_quantile);
  c.set_double("eval.t0", t0);
  c.set_int("eval.seeds", static_cast<long long>(seeds.size()));
  return c;
}

ExperimentConfig ExperimentConfig::from_config(const KvConfig& c) {
  ExperimentConfig e;
  e.detector = model::DetectorConfig::from_config(c);
  e.scoring = inference::scoring_from_string(c.get_string("eval.scoring", inference::to_string(e.scoring)));
  e.tau_quantile = c.get_double("eval.tau_quantile", e.tau_quantile);
  e.t0 = c.get_double("eval.t0", e.t0);
  const long long n = c.get_int("eval.seeds", static_cast<long long>(e.seeds.size()));
  if (n < 1) throw InputError("eval.seeds must be >= 1");
  e.seeds.clear();
  for (long long s = 1; s <= n; ++s) e.seeds.push_back(static_cast<std::uint64_t>(s));
  return e;
}

inference::ScoringFunction effective_scoring(const model::Detector& det,
                                             inference::ScoringFunction requested) {
  return det.config().mode == model::Mode::kSoftmax ? inference::ScoringFunction::kOneMinusMaxProb
                                                    : requested;
}

EvalOutcome evaluate(const model::Detector& det, const synthdata::Dataset& data,
                     inference::ScoringFunction scoring, double tau_quantile) {
  EvalOutcome out;
  out.scoring = effective_scoring(det, scoring);
  const auto known_u = inference::training_known_uncertainties(det, data.train);
  out.tau = inference::select_tau(known_u, tau_quantile);
  for (auto& seq : inference::detect_all(det, data.test, out.tau, out.scoring)) {
    for (auto& d : seq) out.detections.push_back(std::move(d));
  }
  const auto gts = metrics::ground_truth_of(data.test);
  out.report = metrics::evaluate_report(out.detections, gts, data.spec.known_classes);
  out.report["tau"] = out.tau;
  out.report["tau_quantile"] = tau_quantile;
  out.report["scoring"] = inference::to_string(out.scoring);
  out.report["mode"] = model::to_string(det.config().mode);
  return out;
}

void write_eval(const EvalOutcome& outcome, const model::Detector& det, const synthdata::Dataset& data,
                const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "report.json");
    if (!out) throw InputError("cannot write " + (dir / "report.json").string());
    out << outcome.report.dump(2) << '\n';
  }
  const std::vector<std::vector<inference::Detection>> one{outcome.detections};
  inference::write_detections_jsonl(one, dir / "detections.jsonl");
  metrics::write_instances_jsonl(outcome.detections, metrics::ground_truth_of(data.test),
                                 det.num_classes(), dir / "instances.jsonl");
}

void write_training(const model::TrainResult& result, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  model::save_detector(result.detector, dir / "weights.bin");
  model::write_log_csv(result.log, dir / "train_log.csv");
  model::write_bins_csv(result.log, dir / "mib_bins.csv");
  result.detector.config().to_config().save(dir / "config.toml");
}

std::vector<Variant> ablation_variants(const model::DetectorConfig& base) {
  model::DetectorConfig full = base;
  full.mode = model::Mode::kOpenTal;
  full.use_mib = full.use_actionness = full.use_iouc = true;
  std::vector<Variant> v{{"full", full}};
  v.push_back({"wo-MIB", full});
  v.back().config.use_mib = false;
  v.push_back({"wo-ACT", full});
  v.back().config.use_actionness = false;
  v.push_back({"wo-IoUC", full});
  v.back().config.use_iouc = false;
  v.push_back({"vanilla-EDL", full});
  v.back().config.mode = model::Mode::kVanillaEdl;
  v.push_back({"softmax", full});
  v.back().config.mode = model::Mode::kSoftmax;
  return v;
}

namespace {

double metric_at(const json& report, const std::string& key, const char* name) {
  const json& entry = report.at("open_set").at(key);
  if (entry.is_null()) return std::numeric_limits<double>::quiet_NaN();
  return entry.at(name).get<double>();
}

}  // namespace

std::vector<AblationRow> run_ablation(const ExperimentConfig& cfg, const synthdata::Dataset& data,
                                      const std::filesystem::path& out, std::ostream* progress) {
  cfg.validate();
  const std::string key = metrics::threshold_key(cfg.t0);
  std::vector<AblationRow> rows;
  for (const Variant& v : ablation_variants(cfg.detector)) {
    for (std::uint64_t seed : cfg.seeds) {
      const auto t_start = std::chrono::steady_clock::now();
      model::DetectorConfig dc = v.config;
      dc.seed = seed;
      const model::TrainResult trained = model::train(dc, data);
      const EvalOutcome eval = evaluate(trained.detector, data, cfg.scoring, cfg.tau_quantile);
      if (!out.empty()) {
        const auto dir = out / v.name / ("seed" + std::to_string(seed));
        write_training(trained, dir);
        write_eval(eval, trained.detector, data, dir);
      }
      // Reports keep the standard thresholds; other t0 values are computed here.
      json report = eval.report;
      if (!report.at("open_set").contains(key)) {
        const auto sets = metrics::build_eval_sets(eval.detections, metrics::ground_truth_of(data.test),
                                                   data.spec.known_classes, cfg.t0);
        try {
          const auto m = metrics::open_set_metrics(sets);
          report["open_set"][key] = {{"far95", m.far95}, {"auroc", m.auroc}, {"aupr", m.aupr}, {"osdr", m.osdr}};
        } catch (const std::domain_error&) {
          report["open_set"][key] = nullptr;
        }
      }
      AblationRow row;
      row.variant = v.name;
      row.seed = seed;
      row.far95 = metric_at(report, key, "far95");
      row.auroc = metric_at(report, key, "auroc");
      row.aupr = metric_at(report, key, "aupr");
      row.osdr = metric_at(report, key, "osdr");
      row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
      if (progress != nullptr) {
        *progress << std::fixed << std::setprecision(4) << v.name << " seed " << seed
                  << ": far95 " << row.far95 << " auroc " << row.auroc << " aupr " << row.aupr
                  << " osdr " << row.osdr << " (" << std::setprecision(1) << row.seconds << " s)\n"
                  << std::flush;
      }
      rows.push_back(row);
    }
  }
  return rows;
}

std::vector<AblationSummary> summarize(const std::vector<AblationRow>& rows) {
  std::vector<AblationSummary> out;
  for (const AblationRow& r : rows) {
    if (out.empty() || out.back().variant != r.variant) {
      bool seen = false;
      for (const auto& s : out) seen = seen || s.variant == r.variant;
      if (!seen) out.push_back({r.variant, {}, {}});
    }
  }
  for (AblationSummary& s : out) {
    std::vector<const AblationRow*> mine;
    for (const AblationRow& r : rows) {
      if (r.variant == s.variant) mine.push_back(&r);
    }
    const double n = static_cast<double>(mine.size());
    for (int m = 0; m < 4; ++m) {
      auto val = [m](const AblationRow* r) {
        const double v[4] = {r->far95, r->auroc, r->aupr, r->osdr};
        return v[m];
      };
      double sum = 0.0;
      for (const auto* r : mine) sum += val(r);
      s.mean[m] = sum / n;
      double sq = 0.0;
      for (const auto* r : mine) sq += (val(r) - s.mean[m]) * (val(r) - s.mean[m]);
      s.stddev[m] = mine.size() > 1 ? std::sqrt(sq / (n - 1.0)) : 0.0;
    }
  }
  return out;
}

std::string format_table(const std::vector<AblationSummary>& summary) {
  std::ostringstream s;
  s << std::left << std::setw(13) << "variant";
  for (const char* h : {"FAR@95", "AUROC", "AUPR", "OSDR"}) s << std::setw(18) << h;
  s << '\n';
  s << std::fixed << std::setprecision(2);
  for (const auto& r : summary) {
    s << std::setw(13) << r.variant;
    for (int m = 0; m < 4; ++m) {
      std::ostringstream cell;
      cell << std::fixed << std::setprecision(2) << 100.0 * r.mean[m] << " ± " << 100.0 * r.stddev[m];
      s << std::setw(19) << cell.str();
    }
    s << '\n';
  }
  return s.str();
}

void write_ablation(const std::vector<AblationRow>& rows, const std::vector<AblationSummary>& summary,
                    const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream csv(dir / "ablation.csv");
  if (!csv) throw InputError("cannot write " + (dir / "ablation.csv").string());
  csv.precision(17);
  csv << "variant,seed,far95,auroc,aupr,osdr,seconds\n";
  for (const AblationRow& r : rows) {
    csv << r.variant << ',' << r.seed << ',' << r.far95 << ',' << r.auroc << ',' << r.aupr << ','
        << r.osdr << ',' << r.seconds << '\n';
  }
  json j = json::array();
  for (const auto& s : summary) {
    json e = {{"variant", s.variant}};
    const char* names[4] = {"far95", "auroc", "aupr", "osdr"};
    for (int m = 0; m < 4; ++m) e[names[m]] = {{"mean", s.mean[m]}, {"std", s.stddev[m]}};
    j.push_back(e);
  }
  std::ofstream js(dir / "ablation.json");
  js << j.dump(2) << '\n';
}

}  // namespace opental::pipeline

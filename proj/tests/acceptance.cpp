// Acceptance checks, one PASS/FAIL line per criterion.
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <iterator>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "edl_oracle.hpp"
#include "metric_oracles.hpp"
#include "mini_detector.hpp"
#include "opental/evidential.hpp"
#include "opental/inference.hpp"
#include "opental/localization.hpp"
#include "opental/pipeline.hpp"
#include "opental/trainer.hpp"

using namespace opental;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int prec = 3) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

Outcome closed_form_gradient() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> log_e(-12.0, 12.0);
  double worst = 0.0, worst_tape = 0.0;
  bool bounded = true;
  auto rel = [](double a, double b) { return std::abs(a - b) / std::max({1e-300, std::abs(a), std::abs(b)}); };
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t k = 2 + rng() % 49;
    std::vector<double> z(k);
    for (double& v : z) v = log_e(rng);
    const int label = 1 + static_cast<int>(rng() % k);
    const auto g = evidential::edl_grad_closed_form(evidential::EvidentialOutput::from_logits(z), label);
    const double gl = g[static_cast<std::size_t>(label - 1)];
    worst = std::max(worst, rel(gl, testutil::edl_shift_derivative(z, label)));
    bounded = bounded && std::abs(gl) < 1.0;

    // Same derivative from the reverse-mode tape in double precision.
    diff::Tape tape;
    const auto zv = tape.variable(diff::Tensor::matrix(1, k, z));
    const int labels[] = {label};
    tape.backward(diff::sum(evidential::edl_loss_per_sample(zv, labels)));
    const diff::Tensor grad = tape.grad(zv);
    double shift = 0.0;
    for (double v : grad.values()) shift += v;
    worst_tape = std::max(worst_tape, rel(gl, shift));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-10 && bounded && secs < 5.0,
          "max rel err " + fmt(worst) + " vs extended-precision forward mode (double tape: " +
              fmt(worst_tape) + "), |g| in [0,1): " + (bounded ? "yes" : "no") + ", " + fmt(secs) + " s"};
}

Outcome influence_factorization() {
  std::mt19937_64 rng(202);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::uniform_real_distribution<double> log_e(-8.0, 8.0);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t d = 1 + rng() % 64, k = 2 + rng() % 20;
    std::vector<double> h(d), z(k);
    for (double& v : h) v = n01(rng);
    for (double& v : z) v = log_e(rng);
    const int label = 1 + static_cast<int>(rng() % k);
    const auto g = evidential::edl_grad_closed_form(evidential::EvidentialOutput::from_logits(z), label);
    // Backpropagate the logit gradient through a linear layer z = h W.
    diff::Tape tape;
    const auto w = tape.variable(diff::Tensor(diff::Shape{d, k}, 0.0));
    const auto hv = tape.constant(diff::Tensor::matrix(1, d, h));
    const auto gv = tape.constant(diff::Tensor::matrix(1, k, g));
    tape.backward(diff::sum(diff::matmul(hv, w) * gv));
    const diff::Tensor wg = tape.grad(w);
    double entrywise = 0.0;
    for (double v : wg.values()) entrywise += std::abs(v);
    const double fact = evidential::influence_value(g, h);
    const double scale = std::max({1e-300, entrywise, fact});
    worst = std::max(worst, std::abs(entrywise - fact) / scale);
  }
  return {worst < 1e-12, "max rel err " + fmt(worst)};
}

Outcome end_to_end_gradcheck() {
  double worst = 0.0;
  bool all_terms = true;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto r = testutil::mini_gradcheck(seed);
    worst = std::max(worst, r.max_error);
    all_terms = all_terms && r.coarse_matched > 0 && r.refine_matched > 0 &&
                r.terms.classification > 0.0 && r.terms.actionness > 0.0 &&
                r.terms.localization > 0.0 && r.terms.calibration > 0.0;
  }
  return {worst < 1e-3 && all_terms,
          "max rel err " + fmt(worst) + " over 10 seeds, all four terms active: " + (all_terms ? "yes" : "no")};
}

Outcome metric_oracles() {
  std::mt19937_64 rng(404);
  double worst = 0.0;
  bool ordered = true;
  for (int trial = 0; trial < 200; ++trial) {
    const metrics::EvalSets sets = testutil::random_sets(rng, 50);
    std::vector<double> s;
    std::vector<int> y;
    metrics::flatten(sets, s, y);
    const auto m = metrics::open_set_metrics(sets);
    worst = std::max({worst, std::abs(m.far95 - testutil::brute_far95(s, y)),
                      std::abs(m.auroc - testutil::brute_auroc(s, y)),
                      std::abs(m.aupr - testutil::brute_aupr(s, y)),
                      std::abs(m.osdr - testutil::brute_osdr(sets))});
    ordered = ordered && m.osdr <= m.auroc;
  }
  return {worst < 1e-9 && ordered,
          "max abs diff " + fmt(worst) + ", OSDR <= AUROC on all sets: " + (ordered ? "yes" : "no")};
}

bool same_curves(const std::vector<model::EpochLog>& a, const std::vector<model::EpochLog>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].classification != b[i].classification || a[i].actionness != b[i].actionness ||
        a[i].localization != b[i].localization || a[i].calibration != b[i].calibration ||
        a[i].total != b[i].total) {
      return false;
    }
  }
  return true;
}

Outcome reduction_identities(const synthdata::Dataset& data) {
  model::DetectorConfig eps1;
  eps1.momentum = 1.0;
  model::DetectorConfig plain;
  plain.use_mib = false;
  const bool curves = same_curves(model::train(eps1, data).log, model::train(plain, data).log);

  std::mt19937_64 rng(505);
  std::uniform_real_distribution<double> d(-100.0, 100.0);
  bool identity = true;
  for (int i = 0; i < 10000; ++i) {
    const double a = d(rng), b = a + std::abs(d(rng)) + 1e-6;
    const auto r = localization::recover_location({a, b}, {0.0, 0.0});
    identity = identity && r.valid && r.interval.start == a && r.interval.end == b;
  }
  const double ln2 = localization::iouc_loss({0, 1}, std::nullopt, 0.5, {});
  const bool calib = std::abs(ln2 - std::log(2.0)) <= 1e-12;
  return {curves && identity && calib,
          std::string("momentum 1 curve == unweighted curve: ") + (curves ? "yes" : "no") +
              ", zero-offset recovery identity: " + (identity ? "yes" : "no") + ", clipped IoUC - ln2 = " +
              fmt(ln2 - std::log(2.0))};
}

Outcome decision_table() {
  const double tau = 0.4;
  int right = 0, total = 0;
  for (double a : {0.2, 0.5, 0.9}) {
    for (double u : {0.1, 0.4, 0.8}) {
      model::ProposalOutputs p;
      p.refined = {0, 1};
      p.refined_valid = true;
      p.actionness = a;
      p.uncertainty = u;
      p.expected_prob = {0.2, 0.1, 0.6, 0.1};
      const auto det = inference::decide(p, tau);
      inference::Decision expect = a < 0.5 ? inference::Decision::kBackground
                                   : u > tau ? inference::Decision::kUnknown
                                             : inference::Decision::kKnown;
      right += det.decision == expect && det.label == 3;
      ++total;
    }
  }
  return {right == total, std::to_string(right) + "/" + std::to_string(total) + " combinations"};
}

int run(const std::string& cmd) {
  return std::system((cmd + " > /dev/null 2>&1").c_str());
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

Outcome determinism(const std::string& cli, const fs::path& work) {
  if (cli.empty()) return {false, "no --cli given"};
  const char* files[] = {"data/spec.toml", "data/sequences.bin", "data/annotations.jsonl",
                         "train/weights.bin", "eval/report.json"};
  for (const char* run_name : {"run_a", "run_b"}) {
    const fs::path r = work / run_name;
    fs::remove_all(r);
    const std::string q = "\"" + cli + "\"";
    if (run(q + " generate --out \"" + (r / "data").string() + "\"") != 0 ||
        run(q + " train --data \"" + (r / "data").string() + "\" --out \"" + (r / "train").string() + "\"") != 0 ||
        run(q + " eval --weights \"" + (r / "train/weights.bin").string() + "\" --data \"" +
            (r / "data").string() + "\" --out \"" + (r / "eval").string() + "\"") != 0) {
      return {false, std::string("pipeline command failed in ") + run_name};
    }
  }
  int same = 0;
  for (const char* f : files) {
    const std::string a = read_file(work / "run_a" / f), b = read_file(work / "run_b" / f);
    same += !a.empty() && a == b;
  }
  return {same == 5, std::to_string(same) + "/5 artifacts byte-identical"};
}

Outcome trend(const synthdata::Dataset& data, const fs::path& work) {
  const auto t0 = Clock::now();
  pipeline::ExperimentConfig cfg;
  const auto rows = pipeline::run_ablation(cfg, data, work / "ablation", &std::cerr);
  const double secs = seconds_since(t0);
  const auto summary = pipeline::summarize(rows);
  pipeline::write_ablation(rows, summary, work / "ablation");
  std::cout << pipeline::format_table(summary);
  std::map<std::string, const pipeline::AblationSummary*> by;
  for (const auto& s : summary) by[s.variant] = &s;
  // mean[] order: far95, auroc, aupr, osdr
  const double full_auroc = by.at("full")->mean[1], soft_auroc = by.at("softmax")->mean[1];
  const double full_osdr = by.at("full")->mean[3];
  const bool margin = full_auroc >= soft_auroc + 0.05;
  bool above = true;
  std::string osdr_detail;
  for (const char* v : {"wo-MIB", "wo-ACT", "wo-IoUC"}) {
    const double o = by.at(v)->mean[3];
    above = above && full_osdr > o;
    osdr_detail += std::string(", ") + v + " " + fmt(o);
  }
  const bool fast = secs < 600.0;
  return {margin && above && fast,
          "AUROC full " + fmt(full_auroc) + " vs softmax " + fmt(soft_auroc) + " (needs +0.05: " +
              (margin ? "met" : "not met") + "); OSDR full " + fmt(full_osdr) + osdr_detail +
              " (full above all: " + (above ? "yes" : "no") + "); " + fmt(secs, 4) + " s"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string criteria = "1,2,3,4,5,7,8";
  std::string cli;
  std::string work = (fs::temp_directory_path() / "opental_acceptance").string();
  app.add_option("--criteria", criteria, "Comma-separated criterion numbers");
  app.add_option("--cli", cli, "Path to the command-line tool");
  app.add_option("--work", work, "Scratch directory");
  CLI11_PARSE(app, argc, argv);

  std::set<int> wanted;
  std::stringstream ss(criteria);
  for (std::string tok; std::getline(ss, tok, ',');) wanted.insert(std::stoi(tok));
  fs::create_directories(work);

  std::optional<synthdata::Dataset> bench;
  auto benchmark = [&]() -> const synthdata::Dataset& {
    if (!bench) bench = synthdata::generate(synthdata::SplitSpec{});
    return *bench;
  };

  const std::map<int, std::pair<std::string, std::function<Outcome()>>> checks{
      {1, {"closed-form EDL gradient", closed_form_gradient}},
      {2, {"influence factorization", influence_factorization}},
      {3, {"end-to-end gradient check", end_to_end_gradcheck}},
      {4, {"metric oracle equivalence", metric_oracles}},
      {5, {"exact reduction identities", [&] { return reduction_identities(benchmark()); }}},
      {6, {"desk-scale trend reproduction", [&] { return trend(benchmark(), work); }}},
      {7, {"two-level decision table", decision_table}},
      {8, {"pipeline determinism", [&] { return determinism(cli, work); }}},
  };
  bool ok = true;
  for (int id : wanted) {
    const auto it = checks.find(id);
    if (it == checks.end()) {
      std::cout << "criterion " << id << " FAIL: unknown criterion\n";
      ok = false;
      continue;
    }
    Outcome r;
    try {
      r = it->second.second();
    } catch (const std::exception& e) {
      r = {false, std::string("exception: ") + e.what()};
    }
    std::cout << "criterion " << id << " " << (r.pass ? "PASS" : "FAIL") << " " << it->second.first
              << ": " << r.detail << std::endl;
    ok = ok && r.pass;
  }
  return ok ? 0 : 1;
}

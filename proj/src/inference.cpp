#include "opental/inference.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"

#include "opental/diffcore/tape.hpp"
#include "opental/error.hpp"

namespace opental::inference {

using synthdata::Sequence;

std::string to_string(Decision d) {
  switch (d) {
    case Decision::kBackground:
      return "background";
    case Decision::kUnknown:
      return "unknown";
    case Decision::kKnown:
      return "known";
  }
  return "background";
}

std::string to_string(ScoringFunction f) {
  switch (f) {
    case ScoringFunction::kOneMinusMaxProb:
      return "one_minus_max_prob";
    case ScoringFunction::kUncertaintyOverInactivity:
      return "u_over_one_minus_a";
    case ScoringFunction::kActivityOverCertainty:
      return "a_over_one_minus_u";
    case ScoringFunction::kUncertaintyTimesActivity:
      return "u_times_a";
    case ScoringFunction::kTwoLevel:
      return "two_level";
  }
  return "two_level";
}

ScoringFunction scoring_from_string(const std::string& s) {
  for (auto f : {ScoringFunction::kOneMinusMaxProb, ScoringFunction::kUncertaintyOverInactivity,
                 ScoringFunction::kActivityOverCertainty, ScoringFunction::kUncertaintyTimesActivity,
                 ScoringFunction::kTwoLevel}) {
    if (to_string(f) == s) return f;
  }
  throw InputError("unknown scoring function '" + s + "'");
}

namespace {

int argmax_label(std::span<const double> p) {
  if (p.empty()) return 0;
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin()) + 1;
}

}  // namespace

double score(const ProposalOutputs& p, ScoringFunction fn) {
  const double u = p.uncertainty, a = p.actionness;
  switch (fn) {
    case ScoringFunction::kOneMinusMaxProb:
      if (p.expected_prob.empty()) throw std::invalid_argument("score: no class probabilities");
      return 1.0 - *std::max_element(p.expected_prob.begin(), p.expected_prob.end());
    case ScoringFunction::kUncertaintyOverInactivity:
      return u / std::max(1.0 - a, diff::kEpsLog);
    case ScoringFunction::kActivityOverCertainty:
      return a / std::max(1.0 - u, diff::kEpsLog);
    case ScoringFunction::kUncertaintyTimesActivity:
      return u * a;
    case ScoringFunction::kTwoLevel:
      return u;
  }
  throw InputError("unknown scoring function");
}

bool scored(const ProposalOutputs& p, ScoringFunction fn) {
  return fn != ScoringFunction::kTwoLevel || p.actionness > kActionnessGate;
}

Detection decide(const ProposalOutputs& p, double tau) {
  Detection d;
  d.interval = p.refined;
  d.uncertainty = p.uncertainty;
  d.actionness = p.actionness;
  d.expected_prob = p.expected_prob;
  d.label = argmax_label(p.expected_prob);
  if (p.actionness < kActionnessGate) {
    d.decision = Decision::kBackground;
  } else if (p.uncertainty > tau) {
    d.decision = Decision::kUnknown;
  } else {
    d.decision = Decision::kKnown;
  }
  return d;
}

double select_tau(std::span<const double> uncertainties, double quantile) {
  if (uncertainties.empty()) throw InputError("select_tau: no training detections");
  if (!(quantile >= 0.0 && quantile <= 1.0)) throw InputError("select_tau: quantile outside [0, 1]");
  std::vector<double> v(uncertainties.begin(), uncertainties.end());
  std::sort(v.begin(), v.end());
  const auto rank = static_cast<std::size_t>(std::ceil(quantile * static_cast<double>(v.size())));
  return v[rank == 0 ? 0 : rank - 1];
}

std::vector<std::size_t> nms(std::span<const Detection> dets, double threshold) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double ca = dets[a].confidence(), cb = dets[b].confidence();
    if (ca != cb) return ca > cb;
    return dets[a].interval.start < dets[b].interval.start;
  });
  std::vector<std::size_t> keep;
  for (std::size_t i : order) {
    bool suppressed = false;
    for (std::size_t k : keep) {
      if (localization::tiou(dets[i].interval, dets[k].interval) >= threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) keep.push_back(i);
  }
  return keep;
}

std::vector<Detection> detect(const model::Detector& det, const Sequence& seq, double tau,
                              ScoringFunction fn) {
  std::vector<Detection> all;
  for (const ProposalOutputs& p : det.predict(seq)) {
    if (!p.refined_valid) continue;
    Detection d = decide(p, tau);
    d.sequence_id = seq.id;
    d.score = score(p, fn);
    d.scored = scored(p, fn);
    all.push_back(std::move(d));
  }
  std::vector<Detection> kept;
  for (std::size_t i : nms(all)) kept.push_back(std::move(all[i]));
  return kept;
}

std::vector<std::vector<Detection>> detect_all(const model::Detector& det,
                                               std::span<const Sequence> seqs, double tau,
                                               ScoringFunction fn) {
  std::vector<std::vector<Detection>> out(seqs.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(seqs.size()); ++i) {
    const auto k = static_cast<std::size_t>(i);
    out[k] = detect(det, seqs[k], tau, fn);
  }
  return out;
}

std::vector<double> training_known_uncertainties(const model::Detector& det,
                                                 std::span<const Sequence> train,
                                                 double tiou_threshold) {
  const int k = det.num_classes();
  std::vector<std::vector<double>> per(train.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(train.size()); ++i) {
    const Sequence& seq = train[static_cast<std::size_t>(i)];
    for (const Detection& d : detect(det, seq, 1.0, ScoringFunction::kTwoLevel)) {
      if (!(d.actionness > kActionnessGate)) continue;
      for (const auto& a : seq.annotations) {
        if (a.label >= 1 && a.label <= k && localization::tiou(d.interval, a.interval) > tiou_threshold) {
          per[static_cast<std::size_t>(i)].push_back(d.uncertainty);
          break;
        }
      }
    }
  }
  std::vector<double> out;
  for (const auto& v : per) out.insert(out.end(), v.begin(), v.end());
  return out;
}

void write_detections_jsonl(std::span<const std::vector<Detection>> dets,
                            const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  for (const auto& seq : dets) {
    for (const Detection& d : seq) {
      nlohmann::json j = {{"sequence_id", d.sequence_id},
                          {"start", d.interval.start},
                          {"end", d.interval.end},
                          {"decision", to_string(d.decision)},
                          {"class", d.decision == Decision::kKnown ? nlohmann::json(d.label) : nlohmann::json()},
                          {"u", d.uncertainty},
                          {"actionness", d.actionness},
                          {"score", d.score}};
      out << j.dump() << '\n';
    }
  }
}

}  // namespace opental::inference

#include "opental/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "opental/error.hpp"

namespace opental::metrics {

using nlohmann::json;

std::vector<GroundTruth> ground_truth_of(std::span<const synthdata::Sequence> seqs) {
  std::vector<GroundTruth> out;
  for (const auto& s : seqs) {
    for (const auto& a : s.annotations) out.push_back({s.id, a.interval, a.label});
  }
  return out;
}

namespace {

/// Indices of detections sorted by descending confidence; ties by sequence
/// then earlier start, then input order.
std::vector<std::size_t> ranked(std::span<const Detection> dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double ca = dets[a].confidence(), cb = dets[b].confidence();
    if (ca != cb) return ca > cb;
    if (dets[a].sequence_id != dets[b].sequence_id) return dets[a].sequence_id < dets[b].sequence_id;
    return dets[a].interval.start < dets[b].interval.start;
  });
  return order;
}

std::map<int, std::vector<std::size_t>> by_sequence(std::span<const GroundTruth> gts) {
  std::map<int, std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < gts.size(); ++i) out[gts[i].sequence_id].push_back(i);
  return out;
}

void require_binary(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("scores and labels differ in size");
  std::size_t pos = 0;
  for (int l : labels) pos += l == 1 ? 1 : 0;
  if (pos == 0 || pos == labels.size()) {
    throw std::domain_error("binary metric needs both known and unknown instances");
  }
}

/// Cumulative (threshold, TP, FP) after each distinct score, descending.
struct Step {
  double threshold;
  double tp;
  double fp;
};

std::vector<Step> descending_steps(std::span<const double> scores, std::span<const int> labels) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<Step> out;
  double tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i) {
      (labels[order[i]] == 1 ? tp : fp) += 1.0;
    }
    out.push_back({s, tp, fp});
  }
  return out;
}

}  // namespace

EvalSets build_eval_sets(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                         int num_known, double t0) {
  if (!(t0 > 0.0 && t0 < 1.0)) throw InputError("t0 must lie in (0, 1)");
  const auto groups = by_sequence(gts);
  std::vector<bool> taken(gts.size(), false);
  EvalSets sets;
  for (std::size_t i : ranked(dets)) {
    const Detection& d = dets[i];
    if (!d.scored || !d.interval.valid()) continue;
    const auto it = groups.find(d.sequence_id);
    if (it == groups.end()) continue;
    std::ptrdiff_t best = -1;
    double best_iou = -1.0;
    for (std::size_t g : it->second) {
      const double iou = localization::tiou(d.interval, gts[g].interval);
      if (iou > best_iou ||
          (iou == best_iou && gts[g].interval.start < gts[static_cast<std::size_t>(best)].interval.start)) {
        best = static_cast<std::ptrdiff_t>(g);
        best_iou = iou;
      }
    }
    const auto g = static_cast<std::size_t>(best);
    if (best < 0 || taken[g] || !(best_iou > t0)) continue;
    taken[g] = true;
    EvalInstance inst{d.score, false, Membership::kKnown, best_iou};
    if (gts[g].label >= 1 && gts[g].label <= num_known) {
      inst.correct = d.label == gts[g].label;
      sets.known.push_back(inst);
    } else {
      inst.set = Membership::kUnknown;
      sets.unknown.push_back(inst);
    }
  }
  return sets;
}

namespace {

/// Counts of correct knowns and unknowns scored below each threshold.
struct CountPoint {
  double threshold;
  double correct_below;
  double unknown_below;
};

std::vector<CountPoint> cdr_fpr_counts(const EvalSets& sets) {
  if (sets.unknown.empty()) throw std::domain_error("FPR undefined without unknown instances");
  std::vector<double> correct, unknown, all;
  for (const auto& k : sets.known) {
    if (k.correct) correct.push_back(k.score);
    all.push_back(k.score);
  }
  for (const auto& u : sets.unknown) {
    unknown.push_back(u.score);
    all.push_back(u.score);
  }
  std::sort(correct.begin(), correct.end());
  std::sort(unknown.begin(), unknown.end());
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> thresholds{-inf};
  thresholds.insert(thresholds.end(), all.begin(), all.end());
  thresholds.push_back(inf);

  std::vector<CountPoint> out;
  for (double t : thresholds) {
    const auto below = [t](const std::vector<double>& v) {
      return static_cast<double>(std::lower_bound(v.begin(), v.end(), t) - v.begin());
    };
    out.push_back({t, below(correct), below(unknown)});
  }
  return out;
}

}  // namespace

std::vector<CurvePoint> cdr_fpr_curve(const EvalSets& sets) {
  const double nk = static_cast<double>(sets.known.size());
  const double nu = static_cast<double>(sets.unknown.size());
  std::vector<CurvePoint> out;
  for (const CountPoint& c : cdr_fpr_counts(sets)) {
    out.push_back({c.threshold, c.unknown_below / nu, nk == 0.0 ? 0.0 : c.correct_below / nk});
  }
  return out;
}

double area_under(std::span<const CurvePoint> curve) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    area += (curve[i].x - curve[i - 1].x) * (curve[i].y + curve[i - 1].y) / 2.0;
  }
  return area;
}

// Both areas below accumulate trapezoids in integer counts and divide once,
// so they are exact up to the final division and OSDR <= AUROC holds
// without rounding slack.

double osdr(const EvalSets& sets) {
  const auto counts = cdr_fpr_counts(sets);
  const double nk = static_cast<double>(sets.known.size());
  const double nu = static_cast<double>(sets.unknown.size());
  if (nk == 0.0) return 0.0;
  double twice = 0.0;
  for (std::size_t i = 1; i < counts.size(); ++i) {
    twice += (counts[i].unknown_below - counts[i - 1].unknown_below) *
             (counts[i].correct_below + counts[i - 1].correct_below);
  }
  return twice / (2.0 * nk * nu);
}

double auroc(std::span<const double> scores, std::span<const int> labels) {
  require_binary(scores, labels);
  const auto steps = descending_steps(scores, labels);
  double twice = 0.0, tp = 0.0, fp = 0.0;
  for (const Step& s : steps) {
    twice += (s.fp - fp) * (s.tp + tp);
    tp = s.tp;
    fp = s.fp;
  }
  return twice / (2.0 * tp * fp);
}

std::vector<CurvePoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
  require_binary(scores, labels);
  const auto steps = descending_steps(scores, labels);
  const double p = steps.back().tp, n = steps.back().fp;
  std::vector<CurvePoint> out{{std::numeric_limits<double>::infinity(), 0.0, 0.0}};
  for (const Step& s : steps) out.push_back({s.threshold, s.fp / n, s.tp / p});
  return out;
}

std::vector<CurvePoint> pr_curve(std::span<const double> scores, std::span<const int> labels) {
  require_binary(scores, labels);
  const auto steps = descending_steps(scores, labels);
  const double p = steps.back().tp;
  std::vector<CurvePoint> out;
  for (const Step& s : steps) out.push_back({s.threshold, s.tp / p, s.tp / (s.tp + s.fp)});
  return out;
}

double aupr(std::span<const double> scores, std::span<const int> labels) {
  const auto curve = pr_curve(scores, labels);
  double area = 0.0, prev_recall = 0.0;
  for (const CurvePoint& c : curve) {
    area += (c.x - prev_recall) * c.y;
    prev_recall = c.x;
  }
  return area;
}

double far_at_95(std::span<const double> scores, std::span<const int> labels) {
  require_binary(scores, labels);
  const auto steps = descending_steps(scores, labels);
  const double p = steps.back().tp, n = steps.back().fp;
  for (const Step& s : steps) {
    if (s.tp / p >= 0.95) return s.fp / n;
  }
  return 1.0;
}

void flatten(const EvalSets& sets, std::vector<double>& scores, std::vector<int>& labels) {
  scores.clear();
  labels.clear();
  for (const auto& k : sets.known) {
    scores.push_back(k.score);
    labels.push_back(0);
  }
  for (const auto& u : sets.unknown) {
    scores.push_back(u.score);
    labels.push_back(1);
  }
}

OpenSetMetrics open_set_metrics(const EvalSets& sets) {
  std::vector<double> s;
  std::vector<int> l;
  flatten(sets, s, l);
  OpenSetMetrics m;
  m.known = sets.known.size();
  m.unknown = sets.unknown.size();
  m.far95 = far_at_95(s, l);
  m.auroc = auroc(s, l);
  m.aupr = aupr(s, l);
  m.osdr = osdr(sets);
  return m;
}

double interpolated_ap(const std::vector<bool>& hits, std::size_t num_gt) {
  if (num_gt == 0) throw std::domain_error("average precision needs ground truth");
  std::vector<double> precision, recall;
  double tp = 0.0;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    tp += hits[i] ? 1.0 : 0.0;
    precision.push_back(tp / static_cast<double>(i + 1));
    recall.push_back(tp / static_cast<double>(num_gt));
  }
  for (std::size_t i = precision.size(); i-- > 1;) {
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  }
  double ap = 0.0, prev = 0.0;
  for (std::size_t i = 0; i < recall.size(); ++i) {
    ap += (recall[i] - prev) * precision[i];
    prev = recall[i];
  }
  return ap;
}

double closed_set_map(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                      int num_known, double tiou) {
  const auto order = ranked(dets);
  double sum = 0.0;
  int classes = 0;
  for (int c = 1; c <= num_known; ++c) {
    std::map<int, std::vector<std::size_t>> groups;
    std::size_t num_gt = 0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gts[g].label != c) continue;
      groups[gts[g].sequence_id].push_back(g);
      ++num_gt;
    }
    if (num_gt == 0) continue;
    std::vector<bool> taken(gts.size(), false);
    std::vector<bool> hits;
    for (std::size_t i : order) {
      const Detection& d = dets[i];
      if (d.decision != inference::Decision::kKnown || d.label != c || !d.interval.valid()) continue;
      bool hit = false;
      const auto it = groups.find(d.sequence_id);
      if (it != groups.end()) {
        std::ptrdiff_t best = -1;
        double best_iou = -1.0;
        for (std::size_t g : it->second) {
          if (taken[g]) continue;
          const double iou = localization::tiou(d.interval, gts[g].interval);
          if (iou >= tiou && iou > best_iou) {
            best = static_cast<std::ptrdiff_t>(g);
            best_iou = iou;
          }
        }
        if (best >= 0) {
          taken[static_cast<std::size_t>(best)] = true;
          hit = true;
        }
      }
      hits.push_back(hit);
    }
    sum += interpolated_ap(hits, num_gt);
    ++classes;
  }
  return classes == 0 ? 0.0 : sum / classes;
}

std::string threshold_key(double t) {
  std::ostringstream s;
  s.precision(2);
  s << t;
  return s.str();
}

json evaluate_report(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                     int num_known) {
  json open = json::object(), map = json::object();
  double map_sum = 0.0;
  for (double t : kEvalThresholds) {
    const std::string key = threshold_key(t);
    const EvalSets sets = build_eval_sets(dets, gts, num_known, t);
    try {
      const OpenSetMetrics m = open_set_metrics(sets);
      open[key] = {{"far95", m.far95}, {"auroc", m.auroc}, {"aupr", m.aupr},
                   {"osdr", m.osdr},   {"known", m.known}, {"unknown", m.unknown}};
    } catch (const std::domain_error&) {
      open[key] = nullptr;
    }
    const double v = closed_set_map(dets, gts, num_known, t);
    map[key] = v;
    map_sum += v;
  }
  map["mean"] = map_sum / static_cast<double>(std::size(kEvalThresholds));
  return {{"open_set", open}, {"map", map}};
}

void write_instances_jsonl(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                           int num_known, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  for (double t : kEvalThresholds) {
    const EvalSets sets = build_eval_sets(dets, gts, num_known, t);
    for (const auto* group : {&sets.known, &sets.unknown}) {
      for (const EvalInstance& e : *group) {
        json j = {{"t0", t},
                  {"set", e.set == Membership::kKnown ? "known" : "unknown"},
                  {"score", e.score},
                  {"correct", e.correct},
                  {"tiou", e.iou}};
        out << j.dump() << '\n';
      }
    }
  }
}

std::vector<std::pair<std::string, EvalSets>> read_instances_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::map<double, EvalSets> groups;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      EvalInstance e;
      e.score = j.at("score").get<double>();
      e.correct = j.at("correct").get<bool>();
      e.iou = j.at("tiou").get<double>();
      const std::string set = j.at("set").get<std::string>();
      EvalSets& g = groups[j.at("t0").get<double>()];
      if (set == "known") {
        g.known.push_back(e);
      } else if (set == "unknown") {
        e.set = Membership::kUnknown;
        g.unknown.push_back(e);
      } else {
        throw FormatError("bad set '" + set + "'");
      }
    } catch (const json::exception& ex) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  std::vector<std::pair<std::string, EvalSets>> out;
  for (auto& [t, s] : groups) out.emplace_back(threshold_key(t), std::move(s));
  return out;
}

void write_curve_csv(std::span<const CurvePoint> curve, const std::string& x_name,
                     const std::string& y_name, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out.precision(17);
  out << "threshold," << x_name << ',' << y_name << '\n';
  for (const CurvePoint& c : curve) out << c.threshold << ',' << c.x << ',' << c.y << '\n';
}

}  // namespace opental::metrics

#include <cmath>
#include <random>

#include "doctest.h"
#include "opental/error.hpp"
#include "opental/inference.hpp"

using namespace opental;
using namespace opental::inference;

namespace {

ProposalOutputs outputs(double u, double a, std::vector<double> p = {0.1, 0.7, 0.2}) {
  ProposalOutputs o;
  o.refined = {0, 10};
  o.refined_valid = true;
  o.uncertainty = u;
  o.actionness = a;
  o.expected_prob = std::move(p);
  return o;
}

Detection det_at(double s, double e, double conf) {
  Detection d;
  d.interval = {s, e};
  d.actionness = 1.0;
  d.uncertainty = 1.0 - conf;
  return d;
}

}  // namespace

TEST_CASE("decision table") {
  const double tau = 0.5;
  struct Row {
    double a, u;
    Decision expect;
  };
  const Row rows[] = {
      {0.3, 0.2, Decision::kBackground}, {0.3, 0.5, Decision::kBackground},
      {0.3, 0.9, Decision::kBackground}, {0.5, 0.2, Decision::kKnown},
      {0.5, 0.5, Decision::kKnown},      {0.5, 0.9, Decision::kUnknown},
      {0.8, 0.2, Decision::kKnown},      {0.8, 0.5, Decision::kKnown},
      {0.8, 0.9, Decision::kUnknown},
  };
  for (const Row& r : rows) {
    const Detection d = decide(outputs(r.u, r.a), tau);
    CHECK(d.decision == r.expect);
    CHECK(d.label == 2);
  }
  CHECK(decide(outputs(0.2, 0.8, {0.5, 0.1, 0.4}), tau).label == 1);
  CHECK(to_string(Decision::kKnown) == "known");
  CHECK(to_string(Decision::kUnknown) == "unknown");
  CHECK(to_string(Decision::kBackground) == "background");
}

TEST_CASE("decisions are total and monotone in uncertainty") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> d(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const double a = d(rng), tau = d(rng);
    double prev_rank = -1;
    for (int k = 1; k <= 20; ++k) {
      const Decision dec = decide(outputs(k / 20.0, a), tau).decision;
      CHECK((dec == Decision::kBackground) == (a < 0.5));
      const double rank = dec == Decision::kKnown ? 0 : (dec == Decision::kUnknown ? 1 : 2);
      if (dec != Decision::kBackground) CHECK(rank >= prev_rank);
      prev_rank = rank;
    }
  }
}

TEST_CASE("threshold selection") {
  const std::vector<double> constant(17, 0.1);
  CHECK(select_tau(constant, 0.95) == 0.1);
  std::vector<double> grid;
  for (int i = 0; i <= 100; ++i) grid.push_back(i / 100.0);
  std::shuffle(grid.begin(), grid.end(), std::mt19937_64(3));
  CHECK(select_tau(grid, 0.95) == 0.95);
  CHECK(select_tau(grid, 0.0) == 0.0);
  CHECK(select_tau(grid, 1.0) == 1.0);
  CHECK_THROWS_AS(select_tau(std::vector<double>{}, 0.5), InputError);
  CHECK_THROWS_AS(select_tau(grid, 1.5), InputError);
}

TEST_CASE("scoring functions") {
  CHECK(score(outputs(0.9, 0.9, {1.0 / 3, 1.0 / 3, 1.0 / 3}), ScoringFunction::kOneMinusMaxProb) ==
        doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(score(outputs(0.5, 0.5), ScoringFunction::kUncertaintyTimesActivity) == 0.25);
  CHECK(score(outputs(0.3, 0.4), ScoringFunction::kUncertaintyOverInactivity) ==
        doctest::Approx(0.5).epsilon(1e-15));
  CHECK(score(outputs(0.5, 0.4), ScoringFunction::kActivityOverCertainty) ==
        doctest::Approx(0.8).epsilon(1e-15));
  CHECK(std::isfinite(score(outputs(0.3, 1.0), ScoringFunction::kUncertaintyOverInactivity)));
  CHECK(score(outputs(0.3, 0.9), ScoringFunction::kTwoLevel) == 0.3);
  for (auto f : {ScoringFunction::kOneMinusMaxProb, ScoringFunction::kUncertaintyOverInactivity,
                 ScoringFunction::kActivityOverCertainty, ScoringFunction::kUncertaintyTimesActivity,
                 ScoringFunction::kTwoLevel}) {
    CHECK(scoring_from_string(to_string(f)) == f);
  }
  CHECK(to_string(ScoringFunction::kTwoLevel) == "two_level");
  CHECK_THROWS_AS(scoring_from_string("nope"), InputError);
}

TEST_CASE("two-level scoring excludes exactly the low-actionness proposals") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> d(0.0, 1.0);
  for (int i = 0; i < 500; ++i) {
    const double a = i == 0 ? 0.5 : d(rng);
    const auto p = outputs(d(rng), a);
    CHECK(scored(p, ScoringFunction::kTwoLevel) == (a > 0.5));
    CHECK(scored(p, ScoringFunction::kUncertaintyTimesActivity));
  }
}

TEST_CASE("temporal NMS") {
  const std::vector<Detection> dets{det_at(0, 10, 0.5), det_at(1, 11, 0.9), det_at(20, 30, 0.7),
                                    det_at(5, 15, 0.8), det_at(21, 31, 0.7)};
  // [1,11] keeps first; [5,15] overlaps it by 6/14 < 0.5 and survives;
  // [0,10] overlaps [1,11] by 9/11; tie at 0.7 keeps the earlier start.
  CHECK(nms(dets) == std::vector<std::size_t>{1, 3, 2});
  CHECK(nms(dets, 1.01).size() == dets.size());
  CHECK(nms(std::vector<Detection>{}).empty());
}

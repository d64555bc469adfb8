#include <cmath>
#include <random>

#include "doctest.h"
#include "opental/localization.hpp"

using namespace opental;
using namespace opental::localization;
using diff::Tape;
using diff::Tensor;

TEST_CASE("tIoU worked values and properties") {
  CHECK(tiou({0, 2}, {0, 2}) == 1.0);
  CHECK(tiou({0, 1}, {2, 3}) == 0.0);
  CHECK(tiou({0, 1}, {1, 3}) == 0.0);
  CHECK(tiou({0, 2}, {1, 3}) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK_THROWS_AS(tiou({2, 1}, {0, 3}), std::invalid_argument);
  CHECK_THROWS_AS(tiou({0, 3}, {1, 1}), std::invalid_argument);

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> d(0.0, 100.0);
  for (int i = 0; i < 500; ++i) {
    double a0 = d(rng), a1 = d(rng), b0 = d(rng), b1 = d(rng);
    if (a0 == a1 || b0 == b1) continue;
    const Interval a{std::min(a0, a1), std::max(a0, a1)}, b{std::min(b0, b1), std::max(b0, b1)};
    const double v = tiou(a, b);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK(v == tiou(b, a));
    CHECK((v == 0.0) == (a.end <= b.start || b.end <= a.start));
    CHECK(v < 1.0);
  }
}

TEST_CASE("coarse and refined losses") {
  const std::vector<Interval> pred{{0, 2}, {5, 6}, {10, 12}};
  const std::vector<Interval> gt{{1, 3}, {0, 1}, {10, 12}};
  CHECK(coarse_loss(pred, gt, std::vector<int>{1, 0, 0}).value ==
        doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(coarse_loss(pred, gt, std::vector<int>{0, 0, 2}).value == 0.0);
  const BatchLoss none = coarse_loss(pred, gt, std::vector<int>{0, 0, 0});
  CHECK(none.empty);
  CHECK(none.value == 0.0);

  const std::vector<OffsetPair> dp{{0.1, -0.2}, {4, 4}};
  const std::vector<OffsetPair> dt{{0, 0}, {0, 0}};
  CHECK(refine_loss(dp, dt, std::vector<int>{1, 0}).value == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(refine_loss(dt, dt, std::vector<int>{1, 1}).value == 0.0);
  CHECK(refine_loss(dp, dt, std::vector<int>{0, 0}).empty);

  Tape tape;
  const auto s = tape.variable(Tensor::vector({0, 5, 10}));
  const auto e = tape.variable(Tensor::vector({2, 6, 12}));
  CHECK(coarse_loss(s, e, gt, std::vector<int>{1, 0, 0}).item() ==
        doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  const auto off = tape.variable(Tensor::matrix(2, 2, {0.1, -0.2, 4, 4}));
  CHECK(refine_loss(off, dt, std::vector<int>{1, 0}).item() == doctest::Approx(0.3).epsilon(1e-15));
}

TEST_CASE("location recovery") {
  const auto same = recover_location({3, 7}, {0, 0});
  CHECK(same.valid);
  CHECK(same.interval == Interval{3, 7});
  const auto r = recover_location({10, 20}, {-0.2, 0.4});
  CHECK(r.valid);
  CHECK(r.interval.start == doctest::Approx(9.0).epsilon(1e-15));
  CHECK(r.interval.end == doctest::Approx(22.0).epsilon(1e-15));
  const auto bad = recover_location({0, 2}, {2.5, -2.5});
  CHECK_FALSE(bad.valid);
  CHECK(bad.interval.start == doctest::Approx(2.5));
  CHECK(bad.interval.end == doctest::Approx(-0.5));

  const Interval c{4, 12}, t{5.5, 9};
  const auto back = recover_location(c, offsets_between(c, t));
  CHECK(back.interval.start == doctest::Approx(t.start).epsilon(1e-14));
  CHECK(back.interval.end == doctest::Approx(t.end).epsilon(1e-14));
}

TEST_CASE("IoU-aware calibration") {
  const CalibrationParams p{};
  CHECK(calibration_weight({0, 10}, Interval{0, 7}, p) == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(calibration_weight({0, 1}, Interval{5, 7}, p) == 0.001);
  CHECK(calibration_weight({0, 1}, std::nullopt, p) == 0.001);
  CHECK(iouc_loss({0, 1}, std::nullopt, 0.5, p) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK(std::isfinite(iouc_loss_from_weight(0.5, 1.0)));

  for (double w : {0.001, 0.2, 0.5, 0.7, 0.95}) {
    double best_u = 0.0, best = 1e300;
    for (int i = 1; i < 10000; ++i) {
      const double u = i / 10000.0;
      const double l = iouc_loss_from_weight(w, u);
      if (l < best) {
        best = l;
        best_u = u;
      }
    }
    CHECK(best_u == doctest::Approx(1.0 - w).epsilon(2e-4));
  }
  for (double u : {0.1, 0.3, 0.45}) {
    const double h = 1e-6;
    const double dw = (iouc_loss_from_weight(0.5 + h, u) - iouc_loss_from_weight(0.5 - h, u)) / (2 * h);
    CHECK(dw < 0.0);
    CHECK(dw == doctest::Approx(std::log(u) - std::log(1 - u)).epsilon(1e-6));
  }

  Tape tape;
  const auto u = tape.variable(Tensor::vector({0.5, 0.2, 0.9}));
  const std::vector<double> w{0.001, 0.7, 0.3};
  double expect = 0.0;
  for (std::size_t i = 0; i < 3; ++i) expect += iouc_loss_from_weight(w[i], u.value()[i]);
  CHECK(iouc_loss(u, w).item() == doctest::Approx(expect / 3).epsilon(1e-14));
}

TEST_CASE("differentiable tIoU matches the scalar form") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> d(0.0, 50.0);
  std::vector<double> s, e;
  std::vector<Interval> gt;
  for (int i = 0; i < 50; ++i) {
    const double a = d(rng), b = d(rng) + 0.5;
    s.push_back(a);
    e.push_back(a + b);
    const double c = d(rng);
    gt.push_back({c, c + d(rng) + 0.5});
  }
  Tape tape;
  const auto sv = tape.constant(Tensor::vector(s));
  const auto ev = tape.constant(Tensor::vector(e));
  const Tensor t = tiou(sv, ev, gt).value();
  for (std::size_t i = 0; i < gt.size(); ++i) {
    CHECK(t[i] == doctest::Approx(tiou(Interval{s[i], e[i]}, gt[i])).epsilon(1e-13));
  }
}

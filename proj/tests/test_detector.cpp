#include <cmath>

#include "doctest.h"
#include "mini_detector.hpp"
#include "opental/detector.hpp"
#include "opental/error.hpp"

using namespace opental;
using namespace opental::model;
using diff::Shape;
using diff::Tape;
using diff::Tensor;

namespace {

// One-row pass with hand-set head outputs.
ForwardPass hand_pass(Tape& tape) {
  ForwardPass p;
  p.coarse_start = tape.variable(Tensor::vector({0.0}));
  p.coarse_end = tape.variable(Tensor::vector({2.0}));
  p.coarse_logits = tape.variable(Tensor::matrix(1, 2, {std::log(3.0), 0.0}));
  p.coarse_act = tape.variable(Tensor::matrix(1, 1, {0.9}));
  p.refine_offsets = tape.variable(Tensor::matrix(1, 2, {0.1, -0.2}));
  p.refine_logits = tape.variable(Tensor::matrix(1, 2, {std::log(3.0), 0.0}));
  p.refine_act = tape.variable(Tensor::matrix(1, 1, {0.9}));
  p.coarse = {{0.0, 2.0}};
  p.offsets = {0, 1};
  return p;
}

TrainTargets hand_targets() {
  TrainTargets t;
  t.coarse_labels = {1};
  t.coarse_gt = {{1.0, 3.0}};
  t.offset_targets = {{0.0, 0.0}};
  t.refine_labels = {1};
  t.iouc_weights = {0.001};
  t.coarse_weights = {1.0};
  t.refine_weights = {1.0};
  return t;
}

}  // namespace

TEST_CASE("config validation and round trip") {
  DetectorConfig c;
  CHECK_NOTHROW(c.validate(6));
  DetectorConfig bad = c;
  bad.window_radius = 0;
  CHECK_THROWS_AS(bad.validate(6), InputError);
  bad = c;
  bad.hidden = 3;
  CHECK_THROWS_AS(bad.validate(6), InputError);
  bad = c;
  bad.momentum = 1.5;
  CHECK_THROWS_AS(bad.validate(6), InputError);

  DetectorConfig m = c;
  m.mode = Mode::kSoftmax;
  m.use_iouc = false;
  m.mu = 3.5;
  m.seed = 42;
  const DetectorConfig back = DetectorConfig::from_config(m.to_config());
  CHECK(back.to_config().dump() == m.to_config().dump());
  CHECK(back.mode == Mode::kSoftmax);
  CHECK_THROWS_AS(mode_from_string("bogus"), InputError);
  for (Mode mode : {Mode::kOpenTal, Mode::kVanillaEdl, Mode::kSoftmax}) {
    CHECK(mode_from_string(to_string(mode)) == mode);
  }
}

TEST_CASE("zero-weight network outputs") {
  const auto seqs = testutil::mini_sequences(1);
  Detector det(testutil::mini_config(), 3, 4);
  for (auto& p : det.parameters()) p.value.fill(0.0);
  const auto out = det.predict(seqs[0]);
  REQUIRE(out.size() == 8);
  for (const auto& p : out) {
    CHECK(p.uncertainty == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(p.actionness == 0.5);
    REQUIRE(p.expected_prob.size() == 3);
    for (double v : p.expected_prob) CHECK(v == doctest::Approx(1.0 / 3.0));
  }
  Tape tape;
  const synthdata::Sequence* one[] = {&seqs[0]};
  const ForwardPass pass = det.forward(tape, one);
  for (double z : pass.coarse_logits.value().values()) CHECK(std::exp(z) == 1.0);
}

TEST_CASE("forward shapes, determinism and positive evidence") {
  const auto seqs = testutil::mini_sequences(2);
  for (Mode mode : {Mode::kOpenTal, Mode::kVanillaEdl, Mode::kSoftmax}) {
    DetectorConfig c = testutil::mini_config();
    c.mode = mode;
    Detector det(c, 3, 4);
    det.initialize(5);
    const synthdata::Sequence* ptrs[] = {&seqs[0], &seqs[1]};
    Tape t1, t2;
    const ForwardPass a = det.forward(t1, ptrs);
    const ForwardPass b = det.forward(t2, ptrs);
    const std::size_t ch = mode == Mode::kSoftmax ? 4 : 3;
    CHECK(a.coarse_logits.shape() == Shape{16, ch});
    CHECK(a.refine_logits.shape() == Shape{16, ch});
    CHECK(a.coarse_act.shape() == Shape{16, 1});
    CHECK(a.refine_offsets.shape() == Shape{16, 2});
    CHECK(a.offsets == std::vector<std::size_t>{0, 8, 16});
    CHECK(a.refine_logits.value() == b.refine_logits.value());
    CHECK(a.refine_offsets.value() == b.refine_offsets.value());
    for (std::size_t i = 0; i < 16; ++i) CHECK(a.coarse[i].end > a.coarse[i].start);
    const auto out = det.predict(seqs[0]);
    CHECK(out.size() == 8);
    for (const auto& p : out) {
      CHECK(p.expected_prob.size() == 3);
      CHECK(p.uncertainty > 0.0);
      CHECK(p.uncertainty <= 1.0);
    }
    if (mode != Mode::kSoftmax) {
      for (double z : a.refine_logits.value().values()) {
        const auto eo = evidential::EvidentialOutput::from_logits(std::vector<double>{z});
        CHECK(eo.evidence[0] > 0.0);
        CHECK(eo.alpha[0] >= 1.0);
      }
    }
  }
  synthdata::Sequence empty;
  empty.features = Tensor(Shape{0, 4});
  Detector det(testutil::mini_config(), 3, 4);
  CHECK_THROWS_AS(det.predict(empty), InputError);
}

TEST_CASE("wo-actionness variant classifies with a background channel") {
  DetectorConfig c = testutil::mini_config();
  c.use_actionness = false;
  CHECK(c.background_class());
  Detector det(c, 3, 4);
  CHECK(det.logit_channels() == 4);
  const ClassRows rows = classification_rows(std::vector<int>{0, 2, 0}, c);
  CHECK(rows.rows == std::vector<std::size_t>{0, 1, 2});
  CHECK(rows.classes == std::vector<int>{1, 3, 1});
  const ClassRows plain = classification_rows(std::vector<int>{0, 2, 0}, testutil::mini_config());
  CHECK(plain.rows == std::vector<std::size_t>{1});
  CHECK(plain.classes == std::vector<int>{2});
}

TEST_CASE("hand-set single-proposal loss composes the module values") {
  const double cls = std::log(6.0) - std::log(4.0);
  const double act = -std::log(0.9);
  const double loc = (2.0 / 3.0 + 0.3) / 2.0;
  const double u = 2.0 / 6.0;
  const double cal = -0.001 * std::log(1 - u) - 0.999 * std::log(u);
  DetectorConfig c;
  {
    Tape tape;
    const LossTerms t = total_loss(hand_pass(tape), hand_targets(), c);
    CHECK(t.classification == doctest::Approx(cls).epsilon(1e-13));
    CHECK(t.actionness == doctest::Approx(act).epsilon(1e-13));
    CHECK(t.localization == doctest::Approx(loc).epsilon(1e-13));
    CHECK(t.calibration == doctest::Approx(cal).epsilon(1e-13));
    CHECK(t.total.item() == doctest::Approx(10 * cls + act + loc + cal).epsilon(1e-13));
  }
  c.mode = Mode::kVanillaEdl;
  {
    Tape tape;
    const LossTerms t = total_loss(hand_pass(tape), hand_targets(), c);
    CHECK(t.actionness == 0.0);
    CHECK(t.calibration == 0.0);
    CHECK(t.total.item() == doctest::Approx(10 * cls + loc).epsilon(1e-13));
  }
}

TEST_CASE("disabled loss terms contribute exactly zero gradient") {
  const auto seqs = testutil::mini_sequences(3);
  const synthdata::Sequence* ptrs[] = {&seqs[0], &seqs[1]};
  auto head_grads = [&](const DetectorConfig& c) {
    Detector det(c, 3, 4);
    det.initialize(3);
    Tape tape;
    const auto vars = det.bind(tape);
    const ForwardPass pass = det.forward(tape, ptrs, vars);
    const TrainTargets tg = build_targets(pass, ptrs, c);
    tape.backward(total_loss(pass, tg, c).total);
    return std::pair{tape.grad(vars[6]), det.logit_channels()};
  };
  auto column_abs = [](const Tensor& g, std::size_t col) {
    double s = 0;
    for (std::size_t r = 0; r < g.dim(0); ++r) s += std::abs(g.at(r, col));
    return s;
  };

  DetectorConfig vanilla = testutil::mini_config();
  vanilla.mode = Mode::kVanillaEdl;
  const auto [gv, cv] = head_grads(vanilla);
  CHECK(column_abs(gv, static_cast<std::size_t>(2 + cv)) == 0.0);

  DetectorConfig full = testutil::mini_config();
  const auto [gf, cf] = head_grads(full);
  CHECK(column_abs(gf, static_cast<std::size_t>(2 + cf)) > 0.0);

  // With mu = 0 the refined logits feed only the calibration term.
  DetectorConfig mu0 = testutil::mini_config();
  mu0.mu = 0.0;
  const auto [g_on, c_on] = head_grads(mu0);
  double on = 0;
  for (int k = 0; k < c_on; ++k) on += column_abs(g_on, static_cast<std::size_t>(2 + k));
  CHECK(on > 0.0);
  mu0.use_iouc = false;
  const auto [g_off, c_off] = head_grads(mu0);
  for (int k = 0; k < c_off; ++k) CHECK(column_abs(g_off, static_cast<std::size_t>(2 + k)) == 0.0);

  DetectorConfig no_mib = testutil::mini_config();
  no_mib.use_mib = false;
  CHECK_FALSE(no_mib.mib_active());
  CHECK(testutil::mini_config().mib_active());
}

TEST_CASE("loss is finite on random initializations") {
  synthdata::SplitSpec spec;
  spec.train_sequences = 4;
  spec.test_sequences = 0;
  spec.length = 64;
  spec.channels = 8;
  const auto data = synthdata::generate(spec);
  const synthdata::Sequence* ptrs[] = {&data.train[0], &data.train[1], &data.train[2], &data.train[3]};
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    DetectorConfig c;
    c.seed = seed;
    Detector det(c, spec.known_classes, spec.channels);
    det.initialize(seed);
    Tape tape;
    const ForwardPass pass = det.forward(tape, ptrs);
    const LossTerms t = total_loss(pass, build_targets(pass, ptrs, c), c);
    CHECK(std::isfinite(t.total.item()));
  }
}

TEST_CASE("end-to-end gradient matches finite differences on a miniature detector") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto r = testutil::mini_gradcheck(seed);
    CHECK(r.coarse_matched > 0);
    CHECK(r.refine_matched > 0);
    CHECK(r.terms.actionness > 0.0);
    CHECK(r.terms.calibration > 0.0);
    CHECK(r.max_error < 1e-3);
  }
  DetectorConfig soft = testutil::mini_config();
  soft.mode = Mode::kSoftmax;
  CHECK(testutil::mini_gradcheck(4, soft).max_error < 1e-3);
  DetectorConfig woact = testutil::mini_config();
  woact.use_actionness = false;
  CHECK(testutil::mini_gradcheck(5, woact).max_error < 1e-3);
}

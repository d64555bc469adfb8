#include <cmath>
#include <functional>
#include <random>

#include "doctest.h"
#include "opental/diffcore/gradcheck.hpp"
#include "opental/diffcore/tape.hpp"
#include "test_util.hpp"

using namespace opental::diff;
using testutil::random_tensor;

TEST_CASE("forward values of basic primitives") {
  Tape tape;
  const Var z = tape.constant(Tensor::vector({0, 0}));
  CHECK(exp(z).value() == Tensor::vector({1, 1}));

  const Var a = tape.constant(Tensor::matrix(1, 2, {1, 2}));
  const Var b = tape.constant(Tensor::matrix(2, 1, {3, 4}));
  CHECK(matmul(a, b).item() == 11.0);

  const Var x = tape.constant(Tensor::vector({-2, 0, 3}));
  const Tensor back = log(exp(x)).value();
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(back[i] - x.value()[i]) < 1e-12);
}

TEST_CASE("backward through sum of squares") {
  Tape tape;
  const Var x = tape.variable(Tensor::vector({1, 2, 3}));
  tape.backward(sum(x * x));
  CHECK(tape.grad(x) == Tensor::vector({2, 4, 6}));
}

TEST_CASE("backward through log-sum-exp of equal logits") {
  Tape tape;
  const Var z = tape.variable(Tensor::vector({0, 0}));
  tape.backward(log(sum(exp(z))));
  const Tensor g = tape.grad(z);
  CHECK(g[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(g[1] == doctest::Approx(0.5).epsilon(1e-15));

  Tape t2;
  const Var z2 = t2.variable(Tensor::matrix(1, 2, {0, 0}));
  t2.backward(sum(logsumexp(z2, 1)));
  CHECK(t2.grad(z2)[0] == doctest::Approx(0.5));
}

TEST_CASE("backward requires a scalar root") {
  Tape tape;
  const Var x = tape.variable(Tensor::vector({1, 2}));
  CHECK_THROWS_AS(tape.backward(x * x), ShapeError);
}

TEST_CASE("mismatched shapes raise a structured error") {
  Tape tape;
  const Var a = tape.constant(Tensor(Shape{2, 3}));
  const Var b = tape.constant(Tensor(Shape{2, 3}));
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(e.lhs() == Shape{2, 3});
  }
  CHECK_THROWS_AS(add(a, tape.constant(Tensor(Shape{3, 2}))), ShapeError);
  // scalar broadcast is allowed
  CHECK(add(a, tape.constant(Tensor::scalar(1.0))).value()[0] == 1.0);
}

TEST_CASE("variables unreachable from the root get zero gradients") {
  Tape tape;
  const Var x = tape.variable(Tensor::vector({1, 2}));
  const Var y = tape.variable(Tensor::vector({3, 4}));
  tape.backward(sum(x));
  CHECK(tape.grad(y) == Tensor::vector({0, 0}));
  CHECK(tape.grad(x) == Tensor::vector({1, 1}));
}

TEST_CASE("clamp passes gradient inside the closed range only") {
  Tape tape;
  const Var x = tape.variable(Tensor::vector({-2, -1, 0, 1, 2}));
  tape.backward(sum(clamp(x, -1, 1)));
  CHECK(tape.grad(x) == Tensor::vector({0, 1, 1, 1, 0}));
}

namespace {

struct UnaryCase {
  const char* name;
  std::function<Var(Var)> f;
  double lo, hi;
};

}  // namespace

TEST_CASE("every primitive matches central differences on random inputs") {
  std::mt19937_64 rng(11);
  const std::vector<UnaryCase> unary{
      {"exp", [](Var x) { return exp(x); }, -2, 2},
      {"log", [](Var x) { return log(x); }, 0.2, 3},
      {"relu", [](Var x) { return relu(x); }, -2, 2},
      {"sigmoid", [](Var x) { return sigmoid(x); }, -4, 4},
      {"softplus", [](Var x) { return softplus(x); }, -4, 4},
      {"abs", [](Var x) { return abs(x); }, -2, 2},
      {"clamp", [](Var x) { return clamp(x, -0.5, 0.5); }, -2, 2},
      {"neg", [](Var x) { return neg(x); }, -2, 2},
      {"scale", [](Var x) { return scale(x, 2.5); }, -2, 2},
      {"divide", [](Var x) { return divide(x, 3.0); }, -2, 2},
      {"reciprocal", [](Var x) { return reciprocal(x); }, 0.3, 2},
      {"sum0", [](Var x) { return sum(x, 0); }, -2, 2},
      {"sum1", [](Var x) { return sum(x, 1); }, -2, 2},
      {"mean1", [](Var x) { return mean(x, 1); }, -2, 2},
      {"max1", [](Var x) { return max(x, 1); }, -2, 2},
      {"max0", [](Var x) { return max(x, 0); }, -2, 2},
      {"logsumexp1", [](Var x) { return logsumexp(x, 1); }, -2, 2},
      {"slice", [](Var x) { return slice(x, 1, 1, 3); }, -2, 2},
      {"reshape", [](Var x) { return reshape(x, Shape{12}); }, -2, 2},
      {"gather", [](Var x) {
         const std::size_t idx[] = {2, 0, 2};
         return gather_rows(x, idx);
       }, -2, 2},
  };
  std::uniform_real_distribution<double> wdist(-1, 1);
  for (const auto& c : unary) {
    CAPTURE(c.name);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      const Tensor x = random_tensor(Shape{3, 4}, rng, c.lo, c.hi);
      // Random projection turns any output into a scalar.
      Tape probe;
      const Shape out_shape = c.f(probe.constant(x)).shape();
      const Tensor w = random_tensor(out_shape, rng);
      const auto fn = [&](Tape& tape, Var v) { return sum(c.f(v) * tape.constant(w)); };
      worst = std::max(worst, finite_difference_check(fn, x, 1e-5));
    }
    CHECK(worst < 1e-4);
  }

  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor a = random_tensor(Shape{3, 4}, rng, 0.5, 2);
    const Tensor b = random_tensor(Shape{3, 4}, rng, 0.5, 2);
    const Tensor m = random_tensor(Shape{4, 2}, rng);
    const Tensor row = random_tensor(Shape{4}, rng);
    const Tensor inputs[] = {a, b, m, row};
    const auto fn = [](Tape&, std::span<const Var> v) {
      const Var parts[] = {v[0], v[1]};
      const Var mixed = (v[0] + v[1]) * (v[0] - v[1]) / v[1] + add_row(v[0], v[3]);
      return sum(matmul(mixed, v[2])) + sum(concat(parts, 0) * 0.5) + sum(concat(parts, 1)) +
             sum(minimum(v[0], v[1])) + sum(maximum(v[0], v[1]) * 2.0);
    };
    worst = std::max(worst, check_gradients(fn, inputs, 1e-5).max_relative_error);
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("three-layer perceptron gradients match finite differences") {
  std::mt19937_64 rng(5);
  const Tensor x = random_tensor(Shape{6, 5}, rng);
  const Tensor inputs[] = {random_tensor(Shape{5, 8}, rng), random_tensor(Shape{8}, rng),
                           random_tensor(Shape{8, 7}, rng), random_tensor(Shape{7}, rng),
                           random_tensor(Shape{7, 1}, rng)};
  const auto fn = [&](Tape& tape, std::span<const Var> w) {
    const Var h1 = sigmoid(add_row(matmul(tape.constant(x), w[0]), w[1]));
    const Var h2 = softplus(add_row(matmul(h1, w[2]), w[3]));
    return mean(matmul(h2, w[4]));
  };
  CHECK(check_gradients(fn, inputs, 1e-5).max_relative_error < 1e-4);
}

TEST_CASE("finite difference checker contract") {
  const Tensor x = Tensor::vector({0.3, -1.2, 4.0});
  const auto f_sum = [](Tape&, Var v) { return sum(v); };
  CHECK(finite_difference_check(f_sum, x, 1e-5) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK_THROWS_AS(finite_difference_check(f_sum, x, 0.0), std::invalid_argument);
  const auto f_bad = [](Tape&, Var v) { return sum(log(v - 10.0)); };
  CHECK_THROWS_AS(finite_difference_check(f_bad, x, 1e-5), std::domain_error);
}

TEST_CASE("tape replay is deterministic") {
  std::mt19937_64 rng(9);
  const Tensor w = random_tensor(Shape{4, 3}, rng);
  const Tensor x = random_tensor(Shape{5, 4}, rng);
  auto run = [&] {
    Tape tape;
    const Var wv = tape.variable(w);
    const Var loss = mean(logsumexp(matmul(tape.constant(x), wv), 1));
    tape.backward(loss);
    return std::make_pair(loss.item(), tape.grad(wv));
  };
  const auto a = run(), b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("inputs from another tape are rejected") {
  Tape t1, t2;
  const Var a = t1.variable(Tensor::vector({1}));
  const Var b = t2.variable(Tensor::vector({1}));
  CHECK_THROWS_AS(add(a, b), std::invalid_argument);
}

#include "opental/diffcore/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace opental::diff {

namespace {

double evaluate(const MultiScalarFn& f, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& t : inputs) vars.push_back(tape.constant(t));
  const double v = f(tape, vars).item();
  if (!std::isfinite(v)) throw std::domain_error("gradient check: non-finite function value");
  return v;
}

}  // namespace

GradCheckResult check_gradients(const MultiScalarFn& f, std::span<const Tensor> inputs,
                                double step) {
  if (!(step > 0.0)) throw std::invalid_argument("gradient check: step must be positive");

  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& t : inputs) vars.push_back(tape.variable(t));
    Var root = f(tape, vars);
    if (!std::isfinite(root.item())) {
      throw std::domain_error("gradient check: non-finite function value");
    }
    tape.backward(root);
    for (const Var& v : vars) analytic.push_back(tape.grad(v));
  }

  GradCheckResult result;
  std::vector<Tensor> probe(inputs.begin(), inputs.end());
  for (std::size_t k = 0; k < probe.size(); ++k) {
    for (std::size_t i = 0; i < probe[k].size(); ++i) {
      const double saved = probe[k][i];
      probe[k][i] = saved + step;
      const double up = evaluate(f, probe);
      probe[k][i] = saved - step;
      const double down = evaluate(f, probe);
      probe[k][i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[k][i];
      if (!std::isfinite(a)) throw std::domain_error("gradient check: non-finite gradient");
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      if (err > result.max_relative_error) result = {err, k, i};
    }
  }
  return result;
}

double finite_difference_check(const ScalarFn& f, const Tensor& x, double step) {
  const MultiScalarFn g = [&f](Tape& tape, std::span<const Var> in) { return f(tape, in[0]); };
  return check_gradients(g, std::span<const Tensor>(&x, 1), step).max_relative_error;
}

}  // namespace opental::diff

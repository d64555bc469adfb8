#pragma once

#include <cstddef>
#include <functional>
#include <span>

#include "opental/diffcore/tape.hpp"

namespace opental::diff {

/// Builds a scalar on `tape` from the given leaf variables.
using MultiScalarFn = std::function<Var(Tape& tape, std::span<const Var> inputs)>;
using ScalarFn = std::function<Var(Tape& tape, Var x)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
};

/// Compares reverse-mode gradients of `f` against central differences of
/// width `step` for every entry of every input. The error of one entry is
/// |analytic - numeric| / max(1, |analytic|).
///
/// Throws std::invalid_argument when step <= 0 and std::domain_error when any
/// evaluation of `f` or its gradient is non-finite.
GradCheckResult check_gradients(const MultiScalarFn& f, std::span<const Tensor> inputs,
                                double step);

/// Single-input form; returns the max relative error.
double finite_difference_check(const ScalarFn& f, const Tensor& x, double step);

}  // namespace opental::diff

#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "opental/diffcore/tensor.hpp"

namespace testutil {

inline opental::diff::Tensor random_tensor(opental::diff::Shape shape, std::mt19937_64& rng,
                                           double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  opental::diff::Tensor t(std::move(shape));
  for (double& v : t.values()) v = dist(rng);
  return t;
}

inline double rel_err(double a, double b) {
  const double scale = std::max({1e-300, std::abs(a), std::abs(b)});
  return std::abs(a - b) / scale;
}

}  // namespace testutil

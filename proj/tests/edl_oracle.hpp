#pragma once

#include <cmath>
#include <span>

namespace testutil {

/// Forward-mode dual number.
template <class T>
struct Dual {
  T v;
  T d;
};

template <class T>
Dual<T> operator+(Dual<T> a, Dual<T> b) { return {a.v + b.v, a.d + b.d}; }
template <class T>
Dual<T> operator-(Dual<T> a, Dual<T> b) { return {a.v - b.v, a.d - b.d}; }
template <class T>
Dual<T> operator+(Dual<T> a, T c) { return {a.v + c, a.d}; }
template <class T>
Dual<T> exp(Dual<T> a) {
  const T e = std::exp(a.v);
  return {e, e * a.d};
}
template <class T>
Dual<T> log(Dual<T> a) { return {std::log(a.v), a.d / a.v}; }

/// Derivative of log(S) - log(alpha_label) along a uniform shift of all
/// logits, by forward-mode differentiation in extended precision.
inline double edl_shift_derivative(std::span<const double> z, int label) {
  using D = Dual<long double>;
  D strength{0.0L, 0.0L};
  D alpha_label{0.0L, 0.0L};
  for (std::size_t j = 0; j < z.size(); ++j) {
    const D zj{static_cast<long double>(z[j]), 1.0L};
    const D alpha = exp(zj) + 1.0L;
    strength = strength + alpha;
    if (static_cast<int>(j) + 1 == label) alpha_label = alpha;
  }
  return static_cast<double>((log(strength) - log(alpha_label)).d);
}

}  // namespace testutil

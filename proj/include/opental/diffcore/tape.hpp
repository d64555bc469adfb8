#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "opental/diffcore/tensor.hpp"

namespace opental::diff {

/// Floor applied to the arguments of log and of divisors by loss code.
inline constexpr double kEpsLog = 1e-12;

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape
/// lives.
class Var {
 public:
  Var() = default;

  bool valid() const noexcept { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  std::uint32_t id() const noexcept { return id_; }

  /// Stays valid for the lifetime of the tape.
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  bool requires_grad() const;
  /// Value of a size-1 variable.
  double item() const { return value().item(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

/// Define-by-run record of primitive operations. Nodes are appended in
/// evaluation order, so reverse index order is a valid topological order for
/// the backward sweep. A tape is single-threaded; separate tapes share no
/// state.
class Tape {
 public:
  using BackwardFn = std::function<void(const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives a gradient.
  Var constant(Tensor value);
  /// Leaf whose gradient is populated by backward().
  Var variable(Tensor value);

  /// Records an op output. `fn` is only kept when some input requires grad.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn fn);

  /// Reverse sweep from a size-1 root; gradients from earlier sweeps are
  /// cleared first.
  void backward(Var root);

  /// Gradient of the last backward root w.r.t. `v`; zeros if unreachable.
  Tensor grad(Var v) const;

  const Tensor& value(std::uint32_t id) const { return nodes_[id].value; }
  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Adds `g` into the gradient slot of node `id` (no-op for constants).
  void accumulate(std::uint32_t id, const Tensor& g);
  /// Gradient slot for in-place accumulation, allocated on first use.
  Tensor& grad_slot(std::uint32_t id);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
  };

  // Deque keeps node values at fixed addresses as the tape grows.
  std::deque<Node> nodes_;
};

// Primitives. Binary elementwise ops accept equal shapes, or one operand of
// size 1 broadcast against the other; no other broadcasting.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var add_row(Var x, Var row);  // x(m×n) + row(n), bias add

Var neg(Var x);
Var scale(Var x, double c);
/// x / c, computed as a true division (not multiplication by 1/c).
Var divide(Var x, double c);
Var shift(Var x, double c);
Var reciprocal(Var x);
Var exp(Var x);
Var log(Var x);
Var relu(Var x);
Var sigmoid(Var x);
Var softplus(Var x);
Var abs(Var x);
/// Identity gradient on [lo, hi] (boundaries included), zero outside.
Var clamp(Var x, double lo, double hi);

/// Reductions along `axis`; the axis is removed from the shape.
Var sum(Var x, std::size_t axis);
Var mean(Var x, std::size_t axis);
Var max(Var x, std::size_t axis);
Var logsumexp(Var x, std::size_t axis);
/// Reductions over all entries, producing a scalar.
Var sum(Var x);
Var mean(Var x);

Var concat(std::span<const Var> parts, std::size_t axis);
Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end);
Var reshape(Var x, Shape shape);
/// Rows `index` of a matrix, in the given order (repeats allowed).
Var gather_rows(Var x, std::span<const std::size_t> index);

/// Elementwise min/max built from relu.
Var minimum(Var a, Var b);
Var maximum(Var a, Var b);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator+(Var a, double c) { return shift(a, c); }
inline Var operator+(double c, Var a) { return shift(a, c); }
inline Var operator-(Var a, double c) { return shift(a, -c); }
inline Var operator-(double c, Var a) { return shift(neg(a), c); }
inline Var operator*(Var a, double c) { return scale(a, c); }
inline Var operator*(double c, Var a) { return scale(a, c); }
inline Var operator/(Var a, double c) { return divide(a, c); }
inline Var operator/(double c, Var a) { return scale(reciprocal(a), c); }

}  // namespace opental::diff

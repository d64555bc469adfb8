#include "opental/diffcore/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "opental/diffcore/kernels.hpp"

namespace opental::diff {

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor{}, false, false, {}});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor{}, false, true, {}});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(fn));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  bool needs = false;
  for (const Var& v : inputs) {
    if (&v.tape() != this) throw std::invalid_argument("Tape::record: input from another tape");
    needs = needs || nodes_[v.id()].requires_grad;
  }
  Node node{std::move(value), Tensor{}, false, needs, {}};
  if (needs) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Tensor& Tape::grad_slot(std::uint32_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    if (n.grad.shape() == n.value.shape()) {
      n.grad.fill(0.0);
    } else {
      n.grad = Tensor(n.value.shape(), 0.0);
    }
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::accumulate(std::uint32_t id, const Tensor& g) {
  if (!nodes_[id].requires_grad) return;
  grad_slot(id) += g;
}

void Tape::backward(Var root) {
  if (!root.valid() || &root.tape() != this) {
    throw std::invalid_argument("backward: root is not on this tape");
  }
  if (root.size() != 1) {
    throw ShapeError("backward: root must be scalar, got " + shape_str(root.shape()));
  }
  for (Node& n : nodes_) n.has_grad = false;
  if (!nodes_[root.id()].requires_grad) return;
  grad_slot(root.id()).fill(1.0);
  for (std::int64_t i = root.id(); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.has_grad && n.backward) n.backward(n.grad);
  }
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id());
  if (n.has_grad) return n.grad;
  return Tensor(n.value.shape(), 0.0);
}

namespace {

enum class Bcast { kSame, kLeftScalar, kRightScalar };

Bcast check_binary(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Bcast::kSame;
  if (b.size() == 1) return Bcast::kRightScalar;
  if (a.size() == 1) return Bcast::kLeftScalar;
  throw ShapeError(op, a.shape(), b.shape());
}

// Elementwise binary op; da/db are the partials as functions of (x, y).
template <typename F, typename DA, typename DB>
Var binary(const char* op, Var a, Var b, F f, DA da, DB db) {
  Tape& t = a.tape();
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Bcast mode = check_binary(op, av, bv);
  Tensor out;
  switch (mode) {
    case Bcast::kSame:
      out = Tensor(av.shape());
      kernels::zip(av.values(), bv.values(), out.values(), f);
      break;
    case Bcast::kRightScalar: {
      out = Tensor(av.shape());
      const double y = bv[0];
      kernels::map(av.values(), out.values(), [&](double x) { return f(x, y); });
      break;
    }
    case Bcast::kLeftScalar: {
      out = Tensor(bv.shape());
      const double x = av[0];
      kernels::map(bv.values(), out.values(), [&](double y) { return f(x, y); });
      break;
    }
  }
  const std::uint32_t ia = a.id(), ib = b.id();
  Tape* tp = &t;
  return t.record(std::move(out), {a, b}, [tp, ia, ib, mode, da, db](const Tensor& g) {
    const Tensor& x = tp->value(ia);
    const Tensor& y = tp->value(ib);
    const std::size_t n = g.size();
    auto xs = [&](std::size_t i) { return mode == Bcast::kLeftScalar ? x[0] : x[i]; };
    auto ys = [&](std::size_t i) { return mode == Bcast::kRightScalar ? y[0] : y[i]; };
    if (tp->requires_grad(ia)) {
      Tensor& ga = tp->grad_slot(ia);
      if (mode == Bcast::kLeftScalar) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += g[i] * da(xs(i), ys(i));
        ga[0] += acc;
      } else {
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * da(xs(i), ys(i));
      }
    }
    if (tp->requires_grad(ib)) {
      Tensor& gb = tp->grad_slot(ib);
      if (mode == Bcast::kRightScalar) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += g[i] * db(xs(i), ys(i));
        gb[0] += acc;
      } else {
        for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * db(xs(i), ys(i));
      }
    }
  });
}

// Elementwise unary op; df is the derivative as a function of (x, y=f(x)).
template <typename F, typename DF>
Var unary(Var x, F f, DF df) {
  Tape& t = x.tape();
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  kernels::map(xv.values(), out.values(), f);
  const std::uint32_t ix = x.id();
  const std::uint32_t iy = static_cast<std::uint32_t>(t.size());
  Tape* tp = &t;
  return t.record(std::move(out), {x}, [tp, ix, iy, df](const Tensor& g) {
    const Tensor& xv2 = tp->value(ix);
    const Tensor& yv = tp->value(iy);
    Tensor& gx = tp->grad_slot(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xv2[i], yv[i]);
  });
}

struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const char* op, const Shape& s, std::size_t axis) {
  if (axis >= s.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for shape " + shape_str(s));
  }
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

Shape drop_axis(const Shape& s, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i != axis) out.push_back(s[i]);
  }
  return out;
}

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw ShapeError("matmul", av.shape(), bv.shape());
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out(Shape{m, n});
  kernels::matmul(av.values(), bv.values(), out.values(), m, k, n);
  Tape* tp = &a.tape();
  const std::uint32_t ia = a.id(), ib = b.id();
  return tp->record(std::move(out), {a, b}, [tp, ia, ib, m, k, n](const Tensor& g) {
    if (tp->requires_grad(ia)) {
      Tensor da(Shape{m, k});
      kernels::matmul_nt(g.values(), tp->value(ib).values(), da.values(), m, n, k);
      tp->accumulate(ia, da);
    }
    if (tp->requires_grad(ib)) {
      Tensor db(Shape{k, n});
      kernels::matmul_tn(tp->value(ia).values(), g.values(), db.values(), m, k, n);
      tp->accumulate(ib, db);
    }
  });
}

Var add(Var a, Var b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var div(Var a, Var b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}

Var add_row(Var x, Var row) {
  const Tensor& xv = x.value();
  const Tensor& rv = row.value();
  if (xv.rank() != 2 || rv.size() != xv.dim(1)) throw ShapeError("add_row", xv.shape(), rv.shape());
  const std::size_t m = xv.dim(0), n = xv.dim(1);
  Tensor out = xv;
  kernels::add_row(out.values(), rv.values(), m, n);
  Tape* tp = &x.tape();
  const std::uint32_t ix = x.id(), ir = row.id();
  return tp->record(std::move(out), {x, row}, [tp, ix, ir, m, n](const Tensor& g) {
    tp->accumulate(ix, g);
    if (tp->requires_grad(ir)) {
      Tensor gr(tp->value(ir).shape());
      kernels::column_sum(g.values(), gr.values(), m, n);
      tp->accumulate(ir, gr);
    }
  });
}

Var neg(Var x) {
  return unary(x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Var scale(Var x, double c) {
  return unary(x, [c](double v) { return v * c; }, [c](double, double) { return c; });
}

Var divide(Var x, double c) {
  Tape* tp = &x.tape();
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  kernels::map(xv.values(), out.values(), [c](double v) { return v / c; });
  const std::uint32_t ix = x.id();
  return tp->record(std::move(out), {x}, [tp, ix, c](const Tensor& g) {
    Tensor& gx = tp->grad_slot(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / c;
  });
}

Var shift(Var x, double c) {
  return unary(x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Var reciprocal(Var x) {
  return unary(x, [](double v) { return 1.0 / v; }, [](double, double y) { return -y * y; });
}

Var exp(Var x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(Var x) {
  return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var relu(Var x) {
  return unary(
      x, [](double v) { return v < 0.0 ? 0.0 : v; },  // NaN propagates
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var softplus(Var x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
      [](double v, double) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      });
}

Var abs(Var x) {
  return unary(
      x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Var clamp(Var x, double lo, double hi) {
  if (!(lo <= hi)) throw std::invalid_argument("clamp: lo > hi");
  return unary(
      x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Var sum(Var x, std::size_t axis) {
  const Tensor& xv = x.value();
  const AxisSplit s = split_axis("sum", xv.shape(), axis);
  Tensor out(drop_axis(xv.shape(), axis));
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t j = 0; j < s.inner; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < s.n; ++i) acc += xv[(o * s.n + i) * s.inner + j];
      out[o * s.inner + j] = acc;
    }
  }
  Tape* tp = &x.tape();
  const std::uint32_t ix = x.id();
  return tp->record(std::move(out), {x}, [tp, ix, s](const Tensor& g) {
    Tensor& gx = tp->grad_slot(ix);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.n; ++i)
        for (std::size_t j = 0; j < s.inner; ++j)
          gx[(o * s.n + i) * s.inner + j] += g[o * s.inner + j];
  });
}

Var mean(Var x, std::size_t axis) {
  const std::size_t n = split_axis("mean", x.shape(), axis).n;
  return divide(sum(x, axis), static_cast<double>(n));
}

Var max(Var x, std::size_t axis) {
  const Tensor& xv = x.value();
  const AxisSplit s = split_axis("max", xv.shape(), axis);
  if (s.n == 0) throw ShapeError("max: empty axis in shape " + shape_str(xv.shape()));
  Tensor out(drop_axis(xv.shape(), axis));
  std::vector<std::size_t> arg(out.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t j = 0; j < s.inner; ++j) {
      std::size_t best = 0;
      double bv = xv[o * s.n * s.inner + j];
      for (std::size_t i = 1; i < s.n; ++i) {
        const double v = xv[(o * s.n + i) * s.inner + j];
        if (v > bv) {
          bv = v;
          best = i;
        }
      }
      out[o * s.inner + j] = bv;
      arg[o * s.inner + j] = (o * s.n + best) * s.inner + j;
    }
  }
  Tape* tp = &x.tape();
  const std::uint32_t ix = x.id();
  return tp->record(std::move(out), {x}, [tp, ix, arg = std::move(arg)](const Tensor& g) {
    Tensor& gx = tp->grad_slot(ix);
    for (std::size_t k = 0; k < arg.size(); ++k) gx[arg[k]] += g[k];
  });
}

Var logsumexp(Var x, std::size_t axis) {
  const Tensor& xv = x.value();
  const AxisSplit s = split_axis("logsumexp", xv.shape(), axis);
  if (s.n == 0) throw ShapeError("logsumexp: empty axis in shape " + shape_str(xv.shape()));
  Tensor out(drop_axis(xv.shape(), axis));
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t j = 0; j < s.inner; ++j) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < s.n; ++i) m = std::max(m, xv[(o * s.n + i) * s.inner + j]);
      double acc = 0.0;
      for (std::size_t i = 0; i < s.n; ++i) acc += std::exp(xv[(o * s.n + i) * s.inner + j] - m);
      out[o * s.inner + j] = m + std::log(acc);
    }
  }
  Tape* tp = &x.tape();
  const std::uint32_t ix = x.id();
  const std::uint32_t iy = static_cast<std::uint32_t>(tp->size());
  return tp->record(std::move(out), {x}, [tp, ix, iy, s](const Tensor& g) {
    const Tensor& xv2 = tp->value(ix);
    const Tensor& yv = tp->value(iy);
    Tensor& gx = tp->grad_slot(ix);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.n; ++i)
        for (std::size_t j = 0; j < s.inner; ++j) {
          const std::size_t k = (o * s.n + i) * s.inner + j;
          gx[k] += g[o * s.inner + j] * std::exp(xv2[k] - yv[o * s.inner + j]);
        }
  });
}

Var sum(Var x) {
  const Tensor& xv = x.value();
  double acc = 0.0;
  for (double v : xv.values()) acc += v;
  Tape* tp = &x.tape();
  const std::uint32_t ix = x.id();
  return tp->record(Tensor::scalar(acc), {x}, [tp, ix](const Tensor& g) {
    Tensor& gx = tp->grad_slot(ix);
    const double gv = g[0];
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gv;
  });
}

Var mean(Var x) {
  if (x.size() == 0) throw ShapeError("mean of empty tensor");
  return divide(sum(x), static_cast<double>(x.size()));
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& first = parts[0].shape();
  Shape out_shape = first;
  split_axis("concat", first, axis);
  std::size_t total = 0;
  for (const Var& p : parts) {
    const Shape& ps = p.shape();
    if (ps.size() != first.size()) throw ShapeError("concat", first, ps);
    for (std::size_t d = 0; d < ps.size(); ++d) {
      if (d != axis && ps[d] != first[d]) throw ShapeError("concat", first, ps);
    }
    total += ps[axis];
  }
  out_shape[axis] = total;
  const AxisSplit os = split_axis("concat", out_shape, axis);
  Tensor out(out_shape);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    offsets.push_back(off);
    const Tensor& pv = p.value();
    const std::size_t np = pv.shape()[axis];
    for (std::size_t o = 0; o < os.outer; ++o) {
      const double* src = pv.values().data() + o * np * os.inner;
      double* dst = out.values().data() + (o * os.n + off) * os.inner;
      std::copy(src, src + np * os.inner, dst);
    }
    off += np;
  }
  Tape* tp = &parts[0].tape();
  std::vector<std::uint32_t> ids;
  std::vector<std::size_t> widths;
  for (const Var& p : parts) {
    ids.push_back(p.id());
    widths.push_back(p.shape()[axis]);
  }
  return tp->record(std::move(out), parts,
                    [tp, os, ids = std::move(ids), widths = std::move(widths),
                     offsets = std::move(offsets)](const Tensor& g) {
                      for (std::size_t k = 0; k < ids.size(); ++k) {
                        if (!tp->requires_grad(ids[k])) continue;
                        Tensor& gp = tp->grad_slot(ids[k]);
                        const std::size_t np = widths[k];
                        for (std::size_t o = 0; o < os.outer; ++o) {
                          const double* src = g.values().data() + (o * os.n + offsets[k]) * os.inner;
                          double* dst = gp.values().data() + o * np * os.inner;
                          for (std::size_t i = 0; i < np * os.inner; ++i) dst[i] += src[i];
                        }
                      }
                    });
}

Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Tensor& xv = x.value();
  const AxisSplit s = split_axis("slice", xv.shape(), axis);
  if (begin > end || end > s.n) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") out of bounds for shape " + shape_str(xv.shape()));
  }
  Shape out_shape = xv.shape();
  out_shape[axis] = end - begin;
  const std::size_t w = end - begin;
  Tensor out(out_shape);
  for (std::size_t o = 0; o < s.outer; ++o) {
    const double* src = xv.values().data() + (o * s.n + begin) * s.inner;
    std::copy(src, src + w * s.inner, out.values().data() + o * w * s.inner);
  }
  Tape* tp = &x.tape();
  const std::uint32_t ix = x.id();
  return tp->record(std::move(out), {x}, [tp, ix, s, begin, w](const Tensor& g) {
    Tensor& gx = tp->grad_slot(ix);
    for (std::size_t o = 0; o < s.outer; ++o) {
      const double* src = g.values().data() + o * w * s.inner;
      double* dst = gx.values().data() + (o * s.n + begin) * s.inner;
      for (std::size_t i = 0; i < w * s.inner; ++i) dst[i] += src[i];
    }
  });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  Tape* tp = &x.tape();
  const std::uint32_t ix = x.id();
  return tp->record(std::move(out), {x}, [tp, ix](const Tensor& g) {
    Tensor& gx = tp->grad_slot(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var gather_rows(Var x, std::span<const std::size_t> index) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2) throw ShapeError("gather_rows: expected matrix, got " + shape_str(xv.shape()));
  const std::size_t m = xv.dim(0), n = xv.dim(1);
  std::vector<std::size_t> idx(index.begin(), index.end());
  Tensor out(Shape{idx.size(), n});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= m) {
      throw ShapeError("gather_rows: row " + std::to_string(idx[r]) + " out of range for " +
                       shape_str(xv.shape()));
    }
    std::copy_n(xv.values().data() + idx[r] * n, n, out.values().data() + r * n);
  }
  Tape* tp = &x.tape();
  const std::uint32_t ix = x.id();
  return tp->record(std::move(out), {x}, [tp, ix, n, idx = std::move(idx)](const Tensor& g) {
    Tensor& gx = tp->grad_slot(ix);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      for (std::size_t j = 0; j < n; ++j) gx[idx[r] * n + j] += g[r * n + j];
    }
  });
}

Var minimum(Var a, Var b) { return a - relu(a - b); }
Var maximum(Var a, Var b) { return b + relu(a - b); }

}  // namespace opental::diff

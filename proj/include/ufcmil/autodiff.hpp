#pragma once

// Reverse-mode automatic differentiation over BasicTensor.
//
// A Tape owns every value produced during one forward pass. Operations are
// free functions in ufcmil::ad that take and return Var handles; each records
// its output together with a local backward rule. Tape::backward() walks the
// nodes in reverse insertion order, which is a valid reverse topological
// order because inputs are always recorded before their consumers.
//
// A tape is single-threaded. Separate tapes share nothing and may run
// concurrently.

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <limits>
#include <string>
#include <vector>

#include "ufcmil/kernels.hpp"
#include "ufcmil/tensor.hpp"

namespace ufcmil {

template <class T>
class Tape;

/// Handle to a value recorded on a Tape.
template <class T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const BasicTensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  std::size_t numel() const { return value().numel(); }
  std::size_t id() const { return id_; }
  bool requires_grad() const { return tape_->requires_grad(id_); }
  Tape<T>& tape() const { return *tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <class T>
class Tape {
 public:
  /// Backward rule: receives the tape, the node's output value and the
  /// gradient flowing into it, and accumulates into its inputs.
  using Backward = std::function<void(Tape&, const BasicTensor<T>& out,
                                      const BasicTensor<T>& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(BasicTensor<T> value, bool requires_grad = false) {
    check_finite("leaf", value);
    nodes_.push_back(Node{std::move(value), {}, requires_grad, {}, "leaf"});
    return Var<T>(this, nodes_.size() - 1);
  }

  Var<T> constant(BasicTensor<T> value) { return leaf(std::move(value), false); }

  /// Records an operation output. The backward rule is dropped when no input
  /// requires a gradient.
  Var<T> record(const char* op, BasicTensor<T> value,
                std::initializer_list<Var<T>> inputs, Backward backward) {
    bool needs = false;
    for (const auto& in : inputs) needs = needs || in.requires_grad();
    return record_impl(op, std::move(value), needs, std::move(backward));
  }

  Var<T> record(const char* op, BasicTensor<T> value,
                const std::vector<Var<T>>& inputs, Backward backward) {
    bool needs = false;
    for (const auto& in : inputs) needs = needs || in.requires_grad();
    return record_impl(op, std::move(value), needs, std::move(backward));
  }

  const BasicTensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient buffer of a node, zero-initialised on first access.
  BasicTensor<T>& grad_buffer(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.grad.empty()) n.grad = BasicTensor<T>(n.value.shape());
    return n.grad;
  }

  /// Gradient of the last backward() loss with respect to `v` (zeros when
  /// `v` was unreachable).
  BasicTensor<T> grad(Var<T> v) const {
    const Node& n = nodes_.at(v.id());
    if (n.grad.empty()) return BasicTensor<T>(n.value.shape());
    return n.grad;
  }

  void backward(Var<T> loss) {
    if (loss.numel() != 1)
      throw ShapeError("backward() requires a scalar loss, got shape " +
                       shape_str(loss.shape()));
    for (auto& n : nodes_) n.grad = BasicTensor<T>();
    grad_buffer(loss.id())[0] = T{1};
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      n.backward(*this, n.value, n.grad);
    }
  }

 private:
  struct Node {
    BasicTensor<T> value;
    BasicTensor<T> grad;
    bool requires_grad = false;
    Backward backward;
    const char* op = "";
  };

  static void check_finite(const char* op, const BasicTensor<T>& v) {
    if (!v.all_finite())
      throw NumericError(std::string("non-finite value produced by ") + op);
  }

  Var<T> record_impl(const char* op, BasicTensor<T> value, bool needs,
                     Backward backward) {
    check_finite(op, value);
    nodes_.push_back(Node{std::move(value), {}, needs,
                          needs ? std::move(backward) : Backward{}, op});
    return Var<T>(this, nodes_.size() - 1);
  }

  // deque keeps references to earlier values stable while appending.
  std::deque<Node> nodes_;
};

namespace ad {

/// Inputs to `log` are clamped to at least this value.
inline constexpr double kLogFloor = 1e-6;

namespace detail {

template <class T>
void require_rank2(const char* op, const BasicTensor<T>& t) {
  if (t.rank() != 2)
    throw ShapeError(std::string(op) + " expects a matrix, got " +
                     shape_str(t.shape()));
}

template <class T>
void add_into(BasicTensor<T>& dst, const BasicTensor<T>& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

/// y = f(x) elementwise; dy/dx given as df(x, y).
template <class T, class F, class DF>
Var<T> unary(const char* op, Var<T> a, F f, DF df) {
  const auto& x = a.value();
  BasicTensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = static_cast<T>(f(x[i]));
  const std::size_t ia = a.id();
  return a.tape().record(op, std::move(out), {a},
                         [ia, df](Tape<T>& t, const BasicTensor<T>& y,
                                  const BasicTensor<T>& g) {
                           if (!t.requires_grad(ia)) return;
                           const auto& xv = t.value(ia);
                           auto& ga = t.grad_buffer(ia);
                           for (std::size_t i = 0; i < g.numel(); ++i)
                             ga[i] += static_cast<T>(g[i] * df(xv[i], y[i]));
                         });
}

enum class BinaryKind { kAdd, kSub, kMul };

template <class T>
Var<T> binary(const char* op, BinaryKind kind, Var<T> a, Var<T> b) {
  const auto& x = a.value();
  const auto& y = b.value();
  const bool same = x.shape() == y.shape();
  const bool b_scalar = !same && y.numel() == 1;
  const bool a_scalar = !same && !b_scalar && x.numel() == 1;
  if (!same && !a_scalar && !b_scalar)
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(x.shape()) +
                     " vs " + shape_str(y.shape()));
  const Shape out_shape = a_scalar ? y.shape() : x.shape();
  BasicTensor<T> out(out_shape);
  const std::size_t n = out.numel();
  auto xa = [&](std::size_t i) { return a_scalar ? x[0] : x[i]; };
  auto yb = [&](std::size_t i) { return b_scalar ? y[0] : y[i]; };
  for (std::size_t i = 0; i < n; ++i) {
    switch (kind) {
      case BinaryKind::kAdd: out[i] = xa(i) + yb(i); break;
      case BinaryKind::kSub: out[i] = xa(i) - yb(i); break;
      case BinaryKind::kMul: out[i] = xa(i) * yb(i); break;
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(
      op, std::move(out), {a, b},
      [=](Tape<T>& t, const BasicTensor<T>&, const BasicTensor<T>& g) {
        const auto& xv = t.value(ia);
        const auto& yv = t.value(ib);
        if (t.requires_grad(ia)) {
          auto& ga = t.grad_buffer(ia);
          for (std::size_t i = 0; i < g.numel(); ++i) {
            T d = g[i];
            if (kind == BinaryKind::kMul) d *= b_scalar ? yv[0] : yv[i];
            ga[a_scalar ? 0 : i] += d;
          }
        }
        if (t.requires_grad(ib)) {
          auto& gb = t.grad_buffer(ib);
          for (std::size_t i = 0; i < g.numel(); ++i) {
            T d = g[i];
            if (kind == BinaryKind::kSub) d = -d;
            if (kind == BinaryKind::kMul) d *= a_scalar ? xv[0] : xv[i];
            gb[b_scalar ? 0 : i] += d;
          }
        }
      });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  return detail::binary("add", detail::BinaryKind::kAdd, a, b);
}
template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  return detail::binary("sub", detail::BinaryKind::kSub, a, b);
}
template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  return detail::binary("mul", detail::BinaryKind::kMul, a, b);
}

template <class T>
Var<T> relu(Var<T> a) {
  return detail::unary(
      "relu", a, [](T x) { return x > T{0} ? x : T{0}; },
      [](T x, T) { return x > T{0} ? T{1} : T{0}; });
}

template <class T>
Var<T> elu(Var<T> a, double alpha = 1.0) {
  return detail::unary(
      "elu", a,
      [alpha](T x) { return x > T{0} ? double(x) : alpha * std::expm1(double(x)); },
      [alpha](T x, T y) { return x > T{0} ? 1.0 : double(y) + alpha; });
}

template <class T>
Var<T> sigmoid(Var<T> a) {
  return detail::unary(
      "sigmoid", a,
      [](T x) {
        const double v = x;
        return v >= 0 ? 1.0 / (1.0 + std::exp(-v))
                      : std::exp(v) / (1.0 + std::exp(v));
      },
      [](T, T y) { return double(y) * (1.0 - double(y)); });
}

template <class T>
Var<T> tanh(Var<T> a) {
  return detail::unary(
      "tanh", a, [](T x) { return std::tanh(double(x)); },
      [](T, T y) { return 1.0 - double(y) * double(y); });
}

/// Natural log with inputs clamped to at least kLogFloor; the clamped region
/// has zero gradient.
template <class T>
Var<T> log(Var<T> a) {
  return detail::unary(
      "log", a, [](T x) { return std::log(std::max(double(x), kLogFloor)); },
      [](T x, T) { return double(x) >= kLogFloor ? 1.0 / double(x) : 0.0; });
}

template <class T>
Var<T> exp(Var<T> a) {
  return detail::unary(
      "exp", a, [](T x) { return std::exp(double(x)); },
      [](T, T y) { return double(y); });
}

template <class T>
Var<T> scale(Var<T> a, double s) {
  return detail::unary(
      "scale", a, [s](T x) { return s * double(x); }, [s](T, T) { return s; });
}

template <class T>
Var<T> add_scalar(Var<T> a, double c) {
  return detail::unary(
      "add_scalar", a, [c](T x) { return double(x) + c; },
      [](T, T) { return 1.0; });
}

template <class T>
Var<T> clamp(Var<T> a, double lo, double hi) {
  return detail::unary(
      "clamp", a, [lo, hi](T x) { return std::clamp(double(x), lo, hi); },
      [lo, hi](T x, T) { return (double(x) >= lo && double(x) <= hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Linear algebra

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const auto& x = a.value();
  const auto& y = b.value();
  detail::require_rank2("matmul", x);
  detail::require_rank2("matmul", y);
  const std::size_t m = x.rows(), k = x.cols(), n = y.cols();
  if (y.rows() != k)
    throw ShapeError("matmul: inner dimensions differ " + shape_str(x.shape()) +
                     " · " + shape_str(y.shape()));
  BasicTensor<T> out({m, n});
  kernels::parallel::gemm_nn<T>(m, k, n, x.data(), y.data(), out.data());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(
      "matmul", std::move(out), {a, b},
      [=](Tape<T>& t, const BasicTensor<T>&, const BasicTensor<T>& g) {
        const auto& xv = t.value(ia);
        const auto& yv = t.value(ib);
        if (t.requires_grad(ia)) {
          BasicTensor<T> da({m, k});
          kernels::parallel::gemm_nt<T>(m, n, k, g.data(), yv.data(), da.data());
          detail::add_into(t.grad_buffer(ia), da);
        }
        if (t.requires_grad(ib)) {
          BasicTensor<T> db({k, n});
          kernels::parallel::gemm_tn<T>(k, m, n, xv.data(), g.data(), db.data());
          detail::add_into(t.grad_buffer(ib), db);
        }
      });
}

template <class T>
Var<T> transpose(Var<T> a) {
  const auto& x = a.value();
  detail::require_rank2("transpose", x);
  const std::size_t r = x.rows(), c = x.cols();
  BasicTensor<T> out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out(j, i) = x(i, j);
  const std::size_t ia = a.id();
  return a.tape().record(
      "transpose", std::move(out), {a},
      [=](Tape<T>& t, const BasicTensor<T>&, const BasicTensor<T>& g) {
        auto& ga = t.grad_buffer(ia);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) ga(i, j) += g(j, i);
      });
}

/// Adds a 1×m row vector to every row of an n×m matrix (bias).
template <class T>
Var<T> add_rowvec(Var<T> a, Var<T> bias) {
  const auto& x = a.value();
  const auto& b = bias.value();
  detail::require_rank2("add_rowvec", x);
  if (b.numel() != x.cols())
    throw ShapeError("add_rowvec: bias " + shape_str(b.shape()) +
                     " does not match " + shape_str(x.shape()));
  BasicTensor<T> out = x;
  const std::size_t r = x.rows(), c = x.cols();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out(i, j) += b[j];
  const std::size_t ia = a.id(), ib = bias.id();
  return a.tape().record(
      "add_rowvec", std::move(out), {a, bias},
      [=](Tape<T>& t, const BasicTensor<T>&, const BasicTensor<T>& g) {
        if (t.requires_grad(ia)) detail::add_into(t.grad_buffer(ia), g);
        if (t.requires_grad(ib)) {
          auto& gb = t.grad_buffer(ib);
          for (std::size_t j = 0; j < c; ++j) {
            double s = 0;
            for (std::size_t i = 0; i < r; ++i) s += g(i, j);
            gb[j] += static_cast<T>(s);
          }
        }
      });
}

/// Scales row i of an n×d matrix by s[i] (s is n×1).
template <class T>
Var<T> mul_rows(Var<T> a, Var<T> s) {
  const auto& x = a.value();
  const auto& sv = s.value();
  if (sv.numel() != x.rows())
    throw ShapeError("mul_rows: scale " + shape_str(sv.shape()) +
                     " does not match rows of " + shape_str(x.shape()));
  BasicTensor<T> out = x;
  const std::size_t r = x.rows(), c = x.cols();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] *= sv[i];
  const std::size_t ia = a.id(), is = s.id();
  return a.tape().record(
      "mul_rows", std::move(out), {a, s},
      [=](Tape<T>& t, const BasicTensor<T>&, const BasicTensor<T>& g) {
        const auto& xv = t.value(ia);
        const auto& scale_v = t.value(is);
        if (t.requires_grad(ia)) {
          auto& ga = t.grad_buffer(ia);
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[i * c + j] * scale_v[i];
        }
        if (t.requires_grad(is)) {
          auto& gs = t.grad_buffer(is);
          for (std::size_t i = 0; i < r; ++i) {
            double acc = 0;
            for (std::size_t j = 0; j < c; ++j) acc += double(g[i * c + j]) * xv[i * c + j];
            gs[i] += static_cast<T>(acc);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Reductions

template <class T>
Var<T> softmax_rows(Var<T> a) {
  const auto& x = a.value();
  const std::size_t r = x.rows(), c = x.cols();
  BasicTensor<T> out(x.shape());
  for (std::size_t i = 0; i < r; ++i) {
    auto row = x.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0;
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(double(row[j]) - mx);
    for (std::size_t j = 0; j < c; ++j)
      out[i * c + j] = static_cast<T>(std::exp(double(row[j]) - mx) / sum);
  }
  const std::size_t ia = a.id();
  return a.tape().record(
      "softmax_rows", std::move(out), {a},
      [=](Tape<T>& t, const BasicTensor<T>& y, const BasicTensor<T>& g) {
        auto& ga = t.grad_buffer(ia);
        for (std::size_t i = 0; i < r; ++i) {
          double dot = 0;
          for (std::size_t j = 0; j < c; ++j) dot += double(g[i * c + j]) * y[i * c + j];
          for (std::size_t j = 0; j < c; ++j)
            ga[i * c + j] += static_cast<T>(y[i * c + j] * (g[i * c + j] - dot));
        }
      });
}

namespace detail {

enum class ReduceKind { kSum, kMean, kMax };

/// Reduces a rank-1 or rank-2 tensor along `axis`, keeping the reduced axis
/// with size 1.
template <class T>
Var<T> reduce(const char* op, ReduceKind kind, Var<T> a, std::size_t axis) {
  const auto& x = a.value();
  if (axis >= x.rank() || x.rank() > 2)
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " invalid for " + shape_str(x.shape()));
  const std::size_t r = x.rows(), c = x.cols();
  const bool over_rows = axis == 0;
  const std::size_t outer = over_rows ? c : r;
  const std::size_t inner = over_rows ? r : c;
  auto at = [=](std::size_t o, std::size_t k) {
    return over_rows ? k * c + o : o * c + k;
  };
  Shape out_shape = x.shape();
  out_shape[axis] = 1;
  BasicTensor<T> out(out_shape);
  std::vector<std::size_t> argmax(kind == ReduceKind::kMax ? outer : 0);
  for (std::size_t o = 0; o < outer; ++o) {
    if (kind == ReduceKind::kMax) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < inner; ++k)
        if (x[at(o, k)] > x[at(o, best)]) best = k;
      argmax[o] = best;
      out[o] = x[at(o, best)];
    } else {
      double s = 0;
      for (std::size_t k = 0; k < inner; ++k) s += x[at(o, k)];
      if (kind == ReduceKind::kMean) s /= double(inner);
      out[o] = static_cast<T>(s);
    }
  }
  const std::size_t ia = a.id();
  return a.tape().record(
      op, std::move(out), {a},
      [=, argmax = std::move(argmax)](Tape<T>& t, const BasicTensor<T>&,
                                      const BasicTensor<T>& g) {
        auto& ga = t.grad_buffer(ia);
        for (std::size_t o = 0; o < outer; ++o) {
          switch (kind) {
            case ReduceKind::kMax: ga[at(o, argmax[o])] += g[o]; break;
            case ReduceKind::kSum:
              for (std::size_t k = 0; k < inner; ++k) ga[at(o, k)] += g[o];
              break;
            case ReduceKind::kMean:
              for (std::size_t k = 0; k < inner; ++k)
                ga[at(o, k)] += static_cast<T>(g[o] / double(inner));
              break;
          }
        }
      });
}

}  // namespace detail

template <class T>
Var<T> sum_axis(Var<T> a, std::size_t axis) {
  return detail::reduce("sum_axis", detail::ReduceKind::kSum, a, axis);
}

template <class T>
Var<T> mean_axis(Var<T> a, std::size_t axis) {
  return detail::reduce("mean_axis", detail::ReduceKind::kMean, a, axis);
}

/// Max along an axis; the gradient goes to the lowest-index maximiser.
template <class T>
Var<T> max_axis(Var<T> a, std::size_t axis) {
  return detail::reduce("max_axis", detail::ReduceKind::kMax, a, axis);
}

/// Sum of all elements as a {1} tensor.
template <class T>
Var<T> sum_all(Var<T> a) {
  const auto& x = a.value();
  double s = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) s += x[i];
  const std::size_t ia = a.id();
  return a.tape().record(
      "sum_all", BasicTensor<T>::scalar(static_cast<T>(s)), {a},
      [=](Tape<T>& t, const BasicTensor<T>&, const BasicTensor<T>& g) {
        auto& ga = t.grad_buffer(ia);
        for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g[0];
      });
}

template <class T>
Var<T> mean_all(Var<T> a) {
  return scale(sum_all(a), 1.0 / double(a.numel()));
}

// ---------------------------------------------------------------------------
// Structure

template <class T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t c = parts.front().cols();
  std::size_t total = 0;
  std::vector<std::size_t> ids, offsets;
  for (const auto& p : parts) {
    if (p.cols() != c)
      throw ShapeError("concat_rows: column mismatch " + shape_str(p.shape()));
    ids.push_back(p.id());
    offsets.push_back(total);
    total += p.rows();
  }
  BasicTensor<T> out({total, c});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    std::copy(v.data().begin(), v.data().end(), out.data().begin() + offsets[k] * c);
  }
  return parts.front().tape().record(
      "concat_rows", std::move(out), parts,
      [=](Tape<T>& t, const BasicTensor<T>&, const BasicTensor<T>& g) {
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (!t.requires_grad(ids[k])) continue;
          auto& gk = t.grad_buffer(ids[k]);
          for (std::size_t i = 0; i < gk.numel(); ++i) gk[i] += g[offsets[k] * c + i];
        }
      });
}

template <class T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t r = parts.front().rows();
  std::size_t total = 0;
  std::vector<std::size_t> ids, offsets, widths;
  for (const auto& p : parts) {
    if (p.rows() != r)
      throw ShapeError("concat_cols: row mismatch " + shape_str(p.shape()));
    ids.push_back(p.id());
    offsets.push_back(total);
    widths.push_back(p.cols());
    total += p.cols();
  }
  BasicTensor<T> out({r, total});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < widths[k]; ++j) out(i, offsets[k] + j) = v[i * widths[k] + j];
  }
  return parts.front().tape().record(
      "concat_cols", std::move(out), parts,
      [=](Tape<T>& t, const BasicTensor<T>&, const BasicTensor<T>& g) {
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (!t.requires_grad(ids[k])) continue;
          auto& gk = t.grad_buffer(ids[k]);
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < widths[k]; ++j)
              gk[i * widths[k] + j] += g[i * total + offsets[k] + j];
        }
      });
}

/// Rows [begin, end) of a matrix.
template <class T>
Var<T> slice_rows(Var<T> a, std::size_t begin, std::size_t end) {
  const auto& x = a.value();
  if (begin >= end || end > x.rows())
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + "," +
                     std::to_string(end) + ") invalid for " + shape_str(x.shape()));
  const std::size_t c = x.cols();
  Shape shape = x.shape();
  shape[0] = end - begin;
  BasicTensor<T> out(shape);
  std::copy(x.data().begin() + begin * c, x.data().begin() + end * c,
            out.data().begin());
  const std::size_t ia = a.id();
  return a.tape().record(
      "slice_rows", std::move(out), {a},
      [=](Tape<T>& t, const BasicTensor<T>&, const BasicTensor<T>& g) {
        auto& ga = t.grad_buffer(ia);
        for (std::size_t i = 0; i < g.numel(); ++i) ga[begin * c + i] += g[i];
      });
}

/// Columns [begin, end) of a matrix.
template <class T>
Var<T> slice_cols(Var<T> a, std::size_t begin, std::size_t end) {
  const auto& x = a.value();
  detail::require_rank2("slice_cols", x);
  if (begin >= end || end > x.cols())
    throw ShapeError("slice_cols: range invalid for " + shape_str(x.shape()));
  const std::size_t r = x.rows(), c = x.cols(), w = end - begin;
  BasicTensor<T> out({r, w});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < w; ++j) out(i, j) = x(i, begin + j);
  const std::size_t ia = a.id();
  return a.tape().record(
      "slice_cols", std::move(out), {a},
      [=](Tape<T>& t, const BasicTensor<T>&, const BasicTensor<T>& g) {
        auto& ga = t.grad_buffer(ia);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < w; ++j) ga[i * c + begin + j] += g[i * w + j];
      });
}

/// Row n of the input lands at output rows [n·j, (n+1)·j).
template <class T>
Var<T> repeat_rows(Var<T> a, std::size_t j) {
  if (j < 1) throw ShapeError("repeat_rows: repeat count must be at least 1");
  const auto& x = a.value();
  const std::size_t r = x.rows(), c = x.cols();
  Shape shape = x.shape();
  shape[0] = r * j;
  BasicTensor<T> out(shape);
  for (std::size_t i = 0; i < r * j; ++i) {
    auto src = x.row(i / j);
    std::copy(src.begin(), src.end(), out.data().begin() + i * c);
  }
  const std::size_t ia = a.id();
  return a.tape().record(
      "repeat_rows", std::move(out), {a},
      [=](Tape<T>& t, const BasicTensor<T>&, const BasicTensor<T>& g) {
        auto& ga = t.grad_buffer(ia);
        for (std::size_t i = 0; i < r * j; ++i)
          for (std::size_t k = 0; k < c; ++k) ga[(i / j) * c + k] += g[i * c + k];
      });
}

/// Inverted dropout. Identity when `train` is false; otherwise each entry is
/// zeroed with probability p and survivors are scaled by 1/(1−p). `uniform`
/// must return values in [0, 1).
template <class T, class Uniform>
Var<T> dropout(Var<T> a, double p, bool train, Uniform&& uniform) {
  if (!(p >= 0.0 && p < 1.0))
    throw std::invalid_argument("dropout: p must lie in [0, 1)");
  if (!train || p == 0.0) return a;
  const auto& x = a.value();
  BasicTensor<T> keep(x.shape());
  const T survivor = static_cast<T>(1.0 / (1.0 - p));
  for (std::size_t i = 0; i < x.numel(); ++i)
    keep[i] = uniform() < p ? T{0} : survivor;
  BasicTensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] * keep[i];
  const std::size_t ia = a.id();
  return a.tape().record(
      "dropout", std::move(out), {a},
      [=, keep = std::move(keep)](Tape<T>& t, const BasicTensor<T>&,
                                  const BasicTensor<T>& g) {
        auto& ga = t.grad_buffer(ia);
        for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * keep[i];
      });
}

/// Forward value `hard`, gradient routed unchanged to `soft`.
template <class T>
Var<T> straight_through(BasicTensor<T> hard, Var<T> soft) {
  if (hard.shape() != soft.shape())
    throw ShapeError("straight_through: shape mismatch");
  const std::size_t is = soft.id();
  return soft.tape().record(
      "straight_through", std::move(hard), {soft},
      [=](Tape<T>& t, const BasicTensor<T>&, const BasicTensor<T>& g) {
        detail::add_into(t.grad_buffer(is), g);
      });
}

/// Softmax-weighted neighbour aggregation. For node n with neighbourhood N(n):
///   α_{n,k} = exp(e_k) / Σ_{k'∈N(n)} exp(e_k'),   out_n = Σ_{k∈N(n)} α_{n,k} v_k
/// `scores` is n×1, `values` n×d. Empty neighbourhoods give a zero row.
template <class T>
Var<T> neighbor_aggregate(Var<T> scores, Var<T> values,
                          const std::vector<std::vector<std::size_t>>& adjacency) {
  const auto& e = scores.value();
  const auto& v = values.value();
  const std::size_t n = v.rows(), d = v.cols();
  if (e.numel() != n || adjacency.size() != n)
    throw ShapeError("neighbor_aggregate: scores/adjacency do not match values " +
                     shape_str(v.shape()));
  // Flattened weights in adjacency order.
  std::vector<double> alpha;
  std::vector<std::size_t> start(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) start[i + 1] = start[i] + adjacency[i].size();
  alpha.resize(start[n]);
  BasicTensor<T> out({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    const auto& nb = adjacency[i];
    if (nb.empty()) continue;
    double mx = -std::numeric_limits<double>::infinity();
    for (auto k : nb) {
      if (k >= n) throw ShapeError("neighbor_aggregate: neighbour index out of range");
      mx = std::max(mx, double(e[k]));
    }
    double z = 0;
    for (std::size_t q = 0; q < nb.size(); ++q)
      z += (alpha[start[i] + q] = std::exp(double(e[nb[q]]) - mx));
    for (std::size_t q = 0; q < nb.size(); ++q) alpha[start[i] + q] /= z;
    for (std::size_t j = 0; j < d; ++j) {
      double acc = 0;
      for (std::size_t q = 0; q < nb.size(); ++q) acc += alpha[start[i] + q] * v(nb[q], j);
      out(i, j) = static_cast<T>(acc);
    }
  }
  const std::size_t ie = scores.id(), iv = values.id();
  return scores.tape().record(
      "neighbor_aggregate", std::move(out), {scores, values},
      [=, alpha = std::move(alpha), start = std::move(start)](
          Tape<T>& t, const BasicTensor<T>&, const BasicTensor<T>& g) {
        const auto& vv = t.value(iv);
        const bool ge = t.requires_grad(ie), gv = t.requires_grad(iv);
        BasicTensor<T>* ges = ge ? &t.grad_buffer(ie) : nullptr;
        BasicTensor<T>* gvs = gv ? &t.grad_buffer(iv) : nullptr;
        std::vector<double> dalpha;
        for (std::size_t i = 0; i < n; ++i) {
          const auto& nb = adjacency[i];
          if (nb.empty()) continue;
          dalpha.assign(nb.size(), 0.0);
          for (std::size_t q = 0; q < nb.size(); ++q) {
            const double a_iq = alpha[start[i] + q];
            double dot = 0;
            for (std::size_t j = 0; j < d; ++j) {
              dot += double(g(i, j)) * vv(nb[q], j);
              if (gv) (*gvs)(nb[q], j) += static_cast<T>(a_iq * g(i, j));
            }
            dalpha[q] = dot;
          }
          if (!ge) continue;
          double mean = 0;
          for (std::size_t q = 0; q < nb.size(); ++q) mean += alpha[start[i] + q] * dalpha[q];
          for (std::size_t q = 0; q < nb.size(); ++q)
            (*ges)[nb[q]] += static_cast<T>(alpha[start[i] + q] * (dalpha[q] - mean));
        }
      });
}

}  // namespace ad

}  // namespace ufcmil

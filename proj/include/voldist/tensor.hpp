#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "voldist/errors.hpp"

namespace voldist {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

class Tape;

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized iff requires_grad
  bool requires_grad = false;
  Tape* tape = nullptr;  // non-null only while part of a live graph
};

}  // namespace detail

// Records the operations of one forward pass so they can be replayed in
// reverse. A tape and the tensors recorded on it belong to a single thread;
// independent tapes may run concurrently.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t num_records() const { return records_.size(); }
  bool backward_done() const { return backward_done_; }

  void record(std::function<void()> fn) { records_.push_back(std::move(fn)); }

  // Drops all recorded operations and re-arms backward().
  void reset() {
    records_.clear();
    backward_done_ = false;
  }

  template <typename TensorT>
  void backward(const TensorT& loss);

  // Suspends recording for the lifetime of the guard; forward passes made
  // inside produce detached constants.
  class NoGradScope {
   public:
    explicit NoGradScope(Tape& tape) : tape_(tape), prev_(tape.recording_) {
      tape_.recording_ = false;
    }
    ~NoGradScope() { tape_.recording_ = prev_; }
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

   private:
    Tape& tape_;
    bool prev_;
  };

 private:
  std::vector<std::function<void()>> records_;
  bool recording_ = true;
  bool backward_done_ = false;
};

namespace detail {
inline void check_finite(const char* op, const std::vector<double>& v) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      std::ostringstream os;
      os << op << ": non-finite value at index " << i;
      throw DomainError(os.str());
    }
  }
}
}  // namespace detail

// Dense multi-dimensional array of 64-bit floats, row-major, optionally
// participating in reverse-mode differentiation. Value-semantics handle to a
// shared node; copies alias the same storage.
class Tensor {
 public:
  Tensor() = default;

  // Detached tensor holding fixed values; never receives gradients.
  static Tensor constant(Shape shape, std::vector<double> data) {
    return make(std::move(shape), std::move(data), nullptr, false);
  }

  static Tensor constant(Shape shape, double fill) {
    std::vector<double> data(shape_numel(shape), fill);
    return make(std::move(shape), std::move(data), nullptr, false);
  }

  static Tensor scalar(double v) { return constant(Shape{}, std::vector<double>{v}); }

  // Differentiable leaf owned by `tape`; its grad buffer is zero-initialised.
  static Tensor param(Tape& tape, Shape shape, std::vector<double> data) {
    return make(std::move(shape), std::move(data), &tape, true);
  }

  static Tensor param(Tape& tape, Shape shape, double fill) {
    std::vector<double> data(shape_numel(shape), fill);
    return make(std::move(shape), std::move(data), &tape, true);
  }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return node().shape; }
  std::size_t rank() const { return node().shape.size(); }
  std::size_t size() const { return node().value.size(); }

  const std::vector<double>& values() const { return node().value; }

  double item() const {
    if (size() != 1) {
      throw ContractError("Tensor::item: tensor is not scalar, shape " + shape_str(shape()));
    }
    return node().value[0];
  }

  // Overwrites values in place (shape unchanged). Used for parameter
  // initialisation, checkpoint restore and finite-difference probing.
  void set_values(const std::vector<double>& v) {
    if (v.size() != size()) {
      throw DimensionError("Tensor::set_values: size mismatch");
    }
    detail::check_finite("set_values", v);
    node().value = v;
  }

  void set_value_at(std::size_t flat_index, double v) {
    if (flat_index >= size()) throw ContractError("Tensor::set_value_at: index out of range");
    if (!std::isfinite(v)) throw DomainError("Tensor::set_value_at: non-finite value");
    node().value[flat_index] = v;
  }

  bool requires_grad() const { return node().requires_grad; }
  bool has_grad() const { return defined() && !node().grad.empty(); }

  const std::vector<double>& grad() const {
    if (!has_grad()) throw ContractError("Tensor::grad: tensor has no gradient buffer");
    return node().grad;
  }

  void zero_grad() {
    if (has_grad()) std::fill(node().grad.begin(), node().grad.end(), 0.0);
  }

  Tape* tape() const { return node().tape; }

  detail::TensorNode& node() const {
    if (!n_) throw ContractError("Tensor: operation on an empty handle");
    return *n_;
  }

 private:
  static Tensor make(Shape shape, std::vector<double> data, Tape* tape, bool requires_grad) {
    if (shape_numel(shape) != data.size()) {
      throw DimensionError("Tensor: shape " + shape_str(shape) + " does not match data length " +
                           std::to_string(data.size()));
    }
    detail::check_finite("Tensor", data);
    Tensor t;
    t.n_ = std::make_shared<detail::TensorNode>();
    t.n_->shape = std::move(shape);
    t.n_->value = std::move(data);
    t.n_->requires_grad = requires_grad;
    t.n_->tape = tape;
    if (requires_grad) t.n_->grad.assign(t.n_->value.size(), 0.0);
    return t;
  }

  std::shared_ptr<detail::TensorNode> n_;
};

template <typename TensorT>
void Tape::backward(const TensorT& loss) {
  if (!loss.defined()) throw ContractError("backward: loss is an empty handle");
  if (loss.size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  if (backward_done_) {
    throw ContractError("backward: already run on this tape; call reset() first");
  }
  if (records_.empty()) throw ContractError("backward: tape is empty");
  if (loss.tape() != this) throw ContractError("backward: loss was not recorded on this tape");
  if (!loss.requires_grad()) throw ContractError("backward: loss is detached from all parameters");
  loss.node().grad[0] = 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
  backward_done_ = true;
}

inline void backward(const Tensor& loss) {
  if (!loss.defined() || loss.tape() == nullptr) {
    throw ContractError("backward: loss does not belong to a tape");
  }
  loss.tape()->backward(loss);
}

// ---------------------------------------------------------------------------
// Op plumbing
// ---------------------------------------------------------------------------

namespace detail {

// The unique live tape among the inputs; two distinct live tapes is a
// caller error (graphs must not be mixed across tapes).
inline Tape* result_tape(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = nullptr;
  for (const Tensor* t : inputs) {
    Tape* tt = t->tape();
    if (tt == nullptr) continue;
    if (tape != nullptr && tape != tt) {
      throw ContractError("op combines tensors from two different tapes");
    }
    tape = tt;
  }
  return tape;
}

inline bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

struct OpContext {
  Tape* tape = nullptr;
  bool live = false;  // output participates in a live graph
};

inline OpContext op_context(std::initializer_list<const Tensor*> inputs) {
  OpContext ctx;
  ctx.tape = result_tape(inputs);
  ctx.live = ctx.tape != nullptr && ctx.tape->recording() && any_requires_grad(inputs);
  if (!ctx.live) ctx.tape = nullptr;
  return ctx;
}

inline Tensor make_output(const char* op, Shape shape, std::vector<double> value,
                          const OpContext& ctx) {
  check_finite(op, value);
  if (ctx.live) {
    return Tensor::param(*ctx.tape, std::move(shape), std::move(value));
  }
  return Tensor::constant(std::move(shape), std::move(value));
}

inline void accumulate(std::vector<double>& dst, const std::vector<double>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// numpy-style right-aligned broadcast of b onto a; every aligned pair of
// dims must be equal or contain a 1.
inline Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    const std::size_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1) {
      throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                           shape_str(b));
    }
    out[rank - 1 - i] = std::max(da, db);
  }
  return out;
}

inline std::vector<std::size_t> row_major_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// Strides for reading `src` as if it had shape `dst` (zero stride on
// broadcast axes). src must be right-aligned broadcastable to dst.
inline std::vector<std::size_t> broadcast_strides(const Shape& src, const Shape& dst) {
  const auto src_strides = row_major_strides(src);
  std::vector<std::size_t> st(dst.size(), 0);
  const std::size_t offset = dst.size() - src.size();
  for (std::size_t i = 0; i < src.size(); ++i) {
    st[offset + i] = src[i] == 1 ? 0 : src_strides[i];
  }
  return st;
}

inline std::vector<double> broadcast_copy(const std::vector<double>& src, const Shape& src_shape,
                                          const Shape& dst_shape) {
  const std::size_t n = shape_numel(dst_shape);
  std::vector<double> out(n);
  const auto st = broadcast_strides(src_shape, dst_shape);
  std::vector<std::size_t> idx(dst_shape.size(), 0);
  std::size_t src_off = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    out[flat] = src[src_off];
    for (std::size_t d = dst_shape.size(); d-- > 0;) {
      ++idx[d];
      src_off += st[d];
      if (idx[d] < dst_shape[d]) break;
      idx[d] = 0;
      src_off -= st[d] * dst_shape[d];
      if (d == 0) break;
    }
  }
  return out;
}

// Sum-reduces grad of shape `src_shape` down to `dst_shape` (the inverse of
// broadcast_copy) and adds it into dst.
inline void reduce_accumulate(std::vector<double>& dst, const Shape& dst_shape,
                              const std::vector<double>& grad, const Shape& src_shape) {
  const std::size_t n = grad.size();
  const auto st = broadcast_strides(dst_shape, src_shape);
  std::vector<std::size_t> idx(src_shape.size(), 0);
  std::size_t dst_off = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    dst[dst_off] += grad[flat];
    for (std::size_t d = src_shape.size(); d-- > 0;) {
      ++idx[d];
      dst_off += st[d];
      if (idx[d] < src_shape[d]) break;
      idx[d] = 0;
      dst_off -= st[d] * src_shape[d];
      if (d == 0) break;
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

// Materialises x broadcast to `target` (right-aligned, singleton expansion
// only). Gradient sum-reduces over the expanded axes.
inline Tensor broadcast_to(const Tensor& x, const Shape& target) {
  const Shape check = detail::broadcast_shape("broadcast_to", x.shape(), target);
  if (check != target) {
    throw DimensionError("broadcast_to: " + shape_str(x.shape()) + " does not broadcast to " +
                         shape_str(target));
  }
  if (x.shape() == target) return x;
  auto ctx = detail::op_context({&x});
  std::vector<double> value = detail::broadcast_copy(x.values(), x.shape(), target);
  Tensor out = detail::make_output("broadcast_to", target, std::move(value), ctx);
  if (ctx.live) {
    ctx.tape->record([x, out]() {
      detail::reduce_accumulate(x.node().grad, x.shape(), out.node().grad, out.shape());
    });
  }
  return out;
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.size()) {
    throw DimensionError("reshape: cannot reshape " + shape_str(x.shape()) + " to " +
                         shape_str(shape));
  }
  auto ctx = detail::op_context({&x});
  Tensor out = detail::make_output("reshape", std::move(shape), x.values(), ctx);
  if (ctx.live) {
    ctx.tape->record([x, out]() { detail::accumulate(x.node().grad, out.node().grad); });
  }
  return out;
}

namespace detail {
inline std::vector<double> permute_copy(const std::vector<double>& src, const Shape& shape,
                                        const std::vector<std::size_t>& axes) {
  const auto src_strides = row_major_strides(shape);
  Shape out_shape(shape.size());
  for (std::size_t i = 0; i < axes.size(); ++i) out_shape[i] = shape[axes[i]];
  const auto out_strides = row_major_strides(out_shape);
  std::vector<double> out(src.size());
  std::vector<std::size_t> idx(shape.size(), 0);
  for (std::size_t flat = 0; flat < src.size(); ++flat) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < axes.size(); ++i) off += idx[axes[i]] * out_strides[i];
    out[off] = src[flat];
    for (std::size_t d = shape.size(); d-- > 0;) {
      if (++idx[d] < shape[d]) break;
      idx[d] = 0;
      if (d == 0) break;
    }
  }
  return out;
}
}  // namespace detail

// Reorders axes; axes must be a permutation of 0..rank-1.
inline Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  if (axes.size() != x.rank()) throw DimensionError("permute: axes rank mismatch");
  std::vector<bool> seen(axes.size(), false);
  for (auto a : axes) {
    if (a >= axes.size() || seen[a]) throw DimensionError("permute: invalid axes");
    seen[a] = true;
  }
  Shape out_shape(x.rank());
  for (std::size_t i = 0; i < axes.size(); ++i) out_shape[i] = x.shape()[axes[i]];
  auto ctx = detail::op_context({&x});
  Tensor out =
      detail::make_output("permute", out_shape, detail::permute_copy(x.values(), x.shape(), axes), ctx);
  if (ctx.live) {
    std::vector<std::size_t> inverse(axes.size());
    for (std::size_t i = 0; i < axes.size(); ++i) inverse[axes[i]] = i;
    ctx.tape->record([x, out, inverse]() {
      auto g = detail::permute_copy(out.node().grad, out.shape(), inverse);
      detail::accumulate(x.node().grad, g);
    });
  }
  return out;
}

// Swaps the last two axes.
inline Tensor transpose(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("transpose: rank must be >= 2");
  std::vector<std::size_t> axes(x.rank());
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
  std::swap(axes[x.rank() - 1], axes[x.rank() - 2]);
  return permute(x, axes);
}

// Contiguous slice [start, start+len) along `axis`.
inline Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t len) {
  if (axis >= x.rank()) throw DimensionError("slice: axis out of range");
  if (start + len > x.shape()[axis] || len == 0) {
    throw DimensionError("slice: range [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") out of bounds for axis size " +
                         std::to_string(x.shape()[axis]));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.shape()[i];
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.shape()[i];
  const std::size_t mid = x.shape()[axis];
  Shape out_shape = x.shape();
  out_shape[axis] = len;
  std::vector<double> value(outer * len * inner);
  const auto& src = x.values();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(src.begin() + (o * mid + start) * inner, len * inner,
                value.begin() + o * len * inner);
  }
  auto ctx = detail::op_context({&x});
  Tensor out = detail::make_output("slice", std::move(out_shape), std::move(value), ctx);
  if (ctx.live) {
    ctx.tape->record([x, out, outer, inner, mid, start, len]() {
      auto& dst = x.node().grad;
      const auto& g = out.node().grad;
      for (std::size_t o = 0; o < outer; ++o) {
        const std::size_t src_base = o * len * inner;
        const std::size_t dst_base = (o * mid + start) * inner;
        for (std::size_t i = 0; i < len * inner; ++i) dst[dst_base + i] += g[src_base + i];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

namespace detail {

// Common body for binary elementwise ops: operands are materialised to the
// broadcast shape first so each adjoint only sees equal shapes.
template <typename FwdFn, typename BwdFn>
Tensor binary_elementwise(const char* op, const Tensor& a, const Tensor& b, FwdFn fwd, BwdFn bwd) {
  const Shape out_shape = broadcast_shape(op, a.shape(), b.shape());
  Tensor aa = broadcast_to(a, out_shape);
  Tensor bb = broadcast_to(b, out_shape);
  auto ctx = op_context({&aa, &bb});
  const auto& av = aa.values();
  const auto& bv = bb.values();
  std::vector<double> value(av.size());
  for (std::size_t i = 0; i < value.size(); ++i) value[i] = fwd(av[i], bv[i]);
  Tensor out = make_output(op, out_shape, std::move(value), ctx);
  if (ctx.live) {
    ctx.tape->record([aa, bb, out, bwd]() {
      const auto& g = out.node().grad;
      const auto& av = aa.values();
      const auto& bv = bb.values();
      const auto& yv = out.values();
      double* ga = aa.requires_grad() ? aa.node().grad.data() : nullptr;
      double* gb = bb.requires_grad() ? bb.node().grad.data() : nullptr;
      for (std::size_t i = 0; i < g.size(); ++i) bwd(g[i], av[i], bv[i], yv[i], ga, gb, i);
    });
  }
  return out;
}

template <typename FwdFn, typename BwdFn>
Tensor unary_elementwise(const char* op, const Tensor& x, FwdFn fwd, BwdFn bwd) {
  auto ctx = op_context({&x});
  const auto& xv = x.values();
  std::vector<double> value(xv.size());
  for (std::size_t i = 0; i < value.size(); ++i) value[i] = fwd(xv[i]);
  Tensor out = make_output(op, x.shape(), std::move(value), ctx);
  if (ctx.live) {
    ctx.tape->record([x, out, bwd]() {
      const auto& g = out.node().grad;
      const auto& xv = x.values();
      const auto& yv = out.values();
      auto& gx = x.node().grad;
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += bwd(g[i], xv[i], yv[i]);
    });
  }
  return out;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary_elementwise(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double g, double, double, double, double* ga, double* gb, std::size_t i) {
        if (ga) ga[i] += g;
        if (gb) gb[i] += g;
      });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary_elementwise(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double g, double, double, double, double* ga, double* gb, std::size_t i) {
        if (ga) ga[i] += g;
        if (gb) gb[i] -= g;
      });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary_elementwise(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double g, double x, double y, double, double* ga, double* gb, std::size_t i) {
        if (ga) ga[i] += g * y;
        if (gb) gb[i] += g * x;
      });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  return detail::binary_elementwise(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double g, double, double y, double out, double* ga, double* gb, std::size_t i) {
        if (ga) ga[i] += g / y;
        if (gb) gb[i] -= g * out / y;
      });
}

inline Tensor neg(const Tensor& x) {
  return detail::unary_elementwise(
      "neg", x, [](double v) { return -v; },
      [](double g, double, double) { return -g; });
}

inline Tensor exp(const Tensor& x) {
  return detail::unary_elementwise(
      "exp", x, [](double v) { return std::exp(v); },
      [](double g, double, double y) { return g * y; });
}

inline Tensor log(const Tensor& x) {
  const auto& xv = x.values();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    if (!(xv[i] > 0.0)) {
      std::ostringstream os;
      os << "log: non-positive input at index " << i << " (value " << xv[i] << ")";
      throw DomainError(os.str());
    }
  }
  return detail::unary_elementwise(
      "log", x, [](double v) { return std::log(v); },
      [](double g, double v, double) { return g / v; });
}

inline Tensor sqrt(const Tensor& x) {
  const auto& xv = x.values();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    if (xv[i] < 0.0) {
      std::ostringstream os;
      os << "sqrt: negative input at index " << i << " (value " << xv[i] << ")";
      throw DomainError(os.str());
    }
  }
  return detail::unary_elementwise(
      "sqrt", x, [](double v) { return std::sqrt(v); },
      [](double g, double, double y) { return g * 0.5 / y; });
}

inline Tensor square(const Tensor& x) {
  return detail::unary_elementwise(
      "square", x, [](double v) { return v * v; },
      [](double g, double v, double) { return g * 2.0 * v; });
}

inline Tensor abs(const Tensor& x) {
  return detail::unary_elementwise(
      "abs", x, [](double v) { return std::abs(v); },
      [](double g, double v, double) { return v > 0.0 ? g : (v < 0.0 ? -g : 0.0); });
}

inline Tensor relu(const Tensor& x) {
  return detail::unary_elementwise(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double g, double v, double) { return v > 0.0 ? g : 0.0; });
}

namespace detail {
inline double sigmoid_stable(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}
}  // namespace detail

// log(1 + exp(x)), overflow-safe: for x > 30 the x + log1p(exp(-x)) branch
// is used. Output is strictly positive; gradient is the logistic sigmoid.
inline Tensor softplus(const Tensor& x) {
  return detail::unary_elementwise(
      "softplus", x,
      [](double v) { return v > 30.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
      [](double g, double v, double) { return g * detail::sigmoid_stable(v); });
}

inline Tensor scale(const Tensor& x, double c) {
  return detail::unary_elementwise(
      "scale", x, [c](double v) { return v * c; },
      [c](double g, double, double) { return g * c; });
}

inline Tensor add_scalar(const Tensor& x, double c) {
  return detail::unary_elementwise(
      "add_scalar", x, [c](double v) { return v + c; },
      [](double g, double, double) { return g; });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& x) { return neg(x); }
inline Tensor operator+(const Tensor& a, double c) { return add_scalar(a, c); }
inline Tensor operator+(double c, const Tensor& a) { return add_scalar(a, c); }
inline Tensor operator-(const Tensor& a, double c) { return add_scalar(a, -c); }
inline Tensor operator-(double c, const Tensor& a) { return add_scalar(neg(a), c); }
inline Tensor operator*(const Tensor& a, double c) { return scale(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }
inline Tensor operator/(const Tensor& a, double c) { return scale(a, 1.0 / c); }
inline Tensor operator/(double c, const Tensor& a) { return div(Tensor::scalar(c), a); }

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum_all(const Tensor& x) {
  auto ctx = detail::op_context({&x});
  double s = 0.0;
  for (double v : x.values()) s += v;
  Tensor out = detail::make_output("sum", Shape{}, std::vector<double>{s}, ctx);
  if (ctx.live) {
    ctx.tape->record([x, out]() {
      const double g = out.node().grad[0];
      auto& gx = x.node().grad;
      for (auto& v : gx) v += g;
    });
  }
  return out;
}

inline Tensor mean_all(const Tensor& x) {
  if (x.size() == 0) throw ContractError("mean_all: empty tensor");
  return scale(sum_all(x), 1.0 / static_cast<double>(x.size()));
}

// ---------------------------------------------------------------------------
// Matrix product
// ---------------------------------------------------------------------------

namespace detail {

inline void mm_accumulate(const double* a, const double* b, double* c, std::size_t m,
                          std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      if (av == 0.0) continue;
      const double* brow = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// dA = dC * B^T for one batch.
inline void mm_grad_a(const double* dc, const double* b, double* da, std::size_t m, std::size_t k,
                      std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* dcrow = dc + i * n;
    double* darow = da + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double* brow = b + kk * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += dcrow[j] * brow[j];
      darow[kk] += s;
    }
  }
}

// dB = A^T * dC for one batch.
inline void mm_grad_b(const double* a, const double* dc, double* db, std::size_t m, std::size_t k,
                      std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* dcrow = dc + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      if (av == 0.0) continue;
      double* dbrow = db + kk * n;
      for (std::size_t j = 0; j < n; ++j) dbrow[j] += av * dcrow[j];
    }
  }
}

}  // namespace detail

// Matrix product. Accepts [m,k]x[k,n]; a batched lhs [...,m,k] with a shared
// rank-2 rhs; or equal leading batch dims on both sides.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) {
    throw DimensionError("matmul: operands must have rank >= 2, got " + shape_str(sa) + " and " +
                         shape_str(sb));
  }
  const std::size_t m = sa[sa.size() - 2];
  const std::size_t k = sa[sa.size() - 1];
  const std::size_t kb = sb[sb.size() - 2];
  const std::size_t n = sb[sb.size() - 1];
  if (k != kb) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(sa) + " vs " +
                         shape_str(sb));
  }
  const bool shared_b = sb.size() == 2 && sa.size() >= 2;
  if (!shared_b) {
    if (sa.size() != sb.size() ||
        !std::equal(sa.begin(), sa.end() - 2, sb.begin())) {
      throw DimensionError("matmul: batch dimensions disagree, " + shape_str(sa) + " vs " +
                           shape_str(sb));
    }
  }
  std::size_t batch = 1;
  for (std::size_t i = 0; i + 2 < sa.size(); ++i) batch *= sa[i];
  Shape out_shape(sa.begin(), sa.end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(n);

  auto ctx = detail::op_context({&a, &b});
  std::vector<double> value(batch * m * n, 0.0);
  const double* ap = a.values().data();
  const double* bp = b.values().data();
  for (std::size_t bi = 0; bi < batch; ++bi) {
    detail::mm_accumulate(ap + bi * m * k, shared_b ? bp : bp + bi * k * n,
                          value.data() + bi * m * n, m, k, n);
  }
  Tensor out = detail::make_output("matmul", std::move(out_shape), std::move(value), ctx);
  if (ctx.live) {
    ctx.tape->record([a, b, out, batch, m, k, n, shared_b]() {
      const double* dc = out.node().grad.data();
      const double* ap = a.values().data();
      const double* bp = b.values().data();
      if (a.requires_grad()) {
        double* da = a.node().grad.data();
        for (std::size_t bi = 0; bi < batch; ++bi) {
          detail::mm_grad_a(dc + bi * m * n, shared_b ? bp : bp + bi * k * n, da + bi * m * k, m,
                            k, n);
        }
      }
      if (b.requires_grad()) {
        double* db = b.node().grad.data();
        for (std::size_t bi = 0; bi < batch; ++bi) {
          detail::mm_grad_b(ap + bi * m * k, dc + bi * m * n, shared_b ? db : db + bi * k * n, m,
                            k, n);
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Structured ops
// ---------------------------------------------------------------------------

// Softmax along the last axis with max-subtraction; rows sum to 1.
inline Tensor softmax_rows(const Tensor& x) {
  if (x.rank() < 1) throw DimensionError("softmax_rows: rank must be >= 1");
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.size() / d;
  auto ctx = detail::op_context({&x});
  std::vector<double> value(x.size());
  const auto& xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * d;
    double* outp = value.data() + r * d;
    double mx = in[0];
    for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, in[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      outp[j] = std::exp(in[j] - mx);
      s += outp[j];
    }
    for (std::size_t j = 0; j < d; ++j) outp[j] /= s;
  }
  Tensor out = detail::make_output("softmax_rows", x.shape(), std::move(value), ctx);
  if (ctx.live) {
    ctx.tape->record([x, out, rows, d]() {
      const auto& g = out.node().grad;
      const auto& y = out.values();
      auto& gx = x.node().grad;
      for (std::size_t r = 0; r < rows; ++r) {
        const double* gr = g.data() + r * d;
        const double* yr = y.data() + r * d;
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += gr[j] * yr[j];
        double* gxr = gx.data() + r * d;
        for (std::size_t j = 0; j < d; ++j) gxr[j] += yr[j] * (gr[j] - dot);
      }
    });
  }
  return out;
}

// Layer normalisation over the last axis with learnable gain and bias
// (both rank-1 of that axis size). Population variance, epsilon inside the
// square root.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
  if (x.rank() < 1) throw DimensionError("layer_norm: rank must be >= 1");
  const std::size_t d = x.shape().back();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    throw DimensionError("layer_norm: gain/bias must have shape [" + std::to_string(d) + "]");
  }
  const std::size_t rows = x.size() / d;
  auto ctx = detail::op_context({&x, &gain, &bias});
  std::vector<double> value(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(rows);
  const auto& xv = x.values();
  const auto& gv = gain.values();
  const auto& bv = bias.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += in[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = in[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const double xh = (in[j] - mean) * inv;
      xhat[r * d + j] = xh;
      value[r * d + j] = gv[j] * xh + bv[j];
    }
  }
  Tensor out = detail::make_output("layer_norm", x.shape(), std::move(value), ctx);
  if (ctx.live) {
    ctx.tape->record([x, gain, bias, out, xhat = std::move(xhat), inv_std = std::move(inv_std),
                      rows, d]() {
      const auto& g = out.node().grad;
      const auto& gv = gain.values();
      double* gx = x.requires_grad() ? x.node().grad.data() : nullptr;
      double* gg = gain.requires_grad() ? gain.node().grad.data() : nullptr;
      double* gb = bias.requires_grad() ? bias.node().grad.data() : nullptr;
      for (std::size_t r = 0; r < rows; ++r) {
        const double* gr = g.data() + r * d;
        const double* xh = xhat.data() + r * d;
        if (gg || gb) {
          for (std::size_t j = 0; j < d; ++j) {
            if (gg) gg[j] += gr[j] * xh[j];
            if (gb) gb[j] += gr[j];
          }
        }
        if (gx) {
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double dxh = gr[j] * gv[j];
            m1 += dxh;
            m2 += dxh * xh[j];
          }
          m1 /= static_cast<double>(d);
          m2 /= static_cast<double>(d);
          const double inv = inv_std[r];
          double* gxr = gx + r * d;
          for (std::size_t j = 0; j < d; ++j) {
            const double dxh = gr[j] * gv[j];
            gxr[j] += inv * (dxh - m1 - xh[j] * m2);
          }
        }
      }
    });
  }
  return out;
}

}  // namespace voldist

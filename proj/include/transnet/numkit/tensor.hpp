#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "transnet/numkit/errors.hpp"

namespace transnet::numkit {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// When enabled (the default) every op output is scanned for NaN/Inf.
inline std::atomic<bool>& checked_mode() {
  static std::atomic<bool> enabled{true};
  return enabled;
}

class Tape;

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  // Set when the tensor was produced by a recorded op.
  const Tape* tape = nullptr;
  std::uint64_t tape_id = 0;
  std::size_t tape_index = 0;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

class Tensor {
 public:
  Tensor() : impl_(std::make_shared<TensorImpl>()) { impl_->data.assign(1, 0.0); }

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : impl_(std::make_shared<TensorImpl>()) {
    if (numel(shape) != values.size()) {
      throw ShapeError("tensor shape " + shape_str(shape) + " holds " +
                       std::to_string(numel(shape)) + " values, got " +
                       std::to_string(values.size()));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
    impl_->requires_grad = requires_grad;
  }

  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }
  static Tensor scalar(double v, bool requires_grad = false) { return Tensor({}, {v}, requires_grad); }
  static Tensor vector(std::vector<double> v, bool requires_grad = false) {
    auto n = v.size();
    return Tensor({n}, std::move(v), requires_grad);
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v,
                       bool requires_grad = false) {
    return Tensor({rows, cols}, std::move(v), requires_grad);
  }
  template <class Rng>
  static Tensor uniform(Shape shape, double lo, double hi, Rng& rng, bool requires_grad = false) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = dist(rng);
    return Tensor(std::move(shape), std::move(v), requires_grad);
  }

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t size() const { return impl_->data.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  // Leading extent when viewed as a row matrix over the last axis.
  std::size_t rows() const { return rank() <= 1 ? 1 : impl_->shape[0]; }
  std::size_t cols() const { return rank() == 0 ? 1 : impl_->shape.back(); }

  std::span<double> data() { return impl_->data; }
  std::span<const double> data() const { return impl_->data; }
  const std::vector<double>& values() const { return impl_->data; }
  double at(std::size_t i) const { return impl_->data.at(i); }
  double at(std::size_t r, std::size_t c) const { return impl_->data.at(r * cols() + c); }
  double item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  std::vector<double>& grad_buffer() { return impl_->grad_buffer(); }
  void zero_grad() { impl_->grad.clear(); }

  // Deep copy as a fresh leaf.
  Tensor clone(bool requires_grad = false) const {
    return Tensor(impl_->shape, impl_->data, requires_grad);
  }

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
  bool same(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Define-by-run record of ops. Constructing a Tape makes it the active tape
// for the current thread; destruction restores the previous one.
class Tape {
 public:
  using GradFn = std::function<void(std::span<const double> upstream)>;

  struct Node {
    std::shared_ptr<TensorImpl> output;
    GradFn backward;
  };

  Tape() : previous_(active_slot()), id_(next_id()) { active_slot() = this; }
  ~Tape() { active_slot() = previous_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return active_slot(); }

  std::size_t size() const { return nodes_.size(); }
  std::uint64_t id() const { return id_; }

  void record(const std::shared_ptr<TensorImpl>& out, GradFn fn) {
    out->tape = this;
    out->tape_id = id_;
    out->tape_index = nodes_.size();
    nodes_.push_back({out, std::move(fn)});
  }

  // Propagates d(loss)/d(x) into every reachable requires_grad leaf. Nodes are
  // visited strictly in reverse recording order. Leaf gradients accumulate
  // across calls; intermediate buffers are reset first.
  void backward(const Tensor& loss) {
    if (loss.size() != 1) {
      throw ContractError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
    }
    const auto& li = loss.impl();
    if (li->tape == nullptr) {
      if (!li->requires_grad) throw ContractError("backward(): loss is not connected to any parameter");
      li->grad_buffer()[0] += 1.0;
      return;
    }
    if (li->tape != this || li->tape_id != id_) {
      throw ContractError("backward(): loss was recorded on a different tape");
    }
    const std::size_t last = li->tape_index;
    for (std::size_t i = 0; i <= last; ++i) nodes_[i].output->grad.clear();
    li->grad_buffer()[0] = 1.0;
    visited_.clear();
    for (std::size_t i = last + 1; i-- > 0;) {
      auto& node = nodes_[i];
      if (node.output->grad.empty()) continue;
      visited_.push_back(i);
      node.backward(node.output->grad);
    }
  }

  // Indices of nodes processed by the most recent backward(), in visit order.
  const std::vector<std::size_t>& last_visit_order() const { return visited_; }

 private:
  static Tape*& active_slot() {
    thread_local Tape* slot = nullptr;
    return slot;
  }
  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter++;
  }

  Tape* previous_;
  std::uint64_t id_;
  std::vector<Node> nodes_;
  std::vector<std::size_t> visited_;
};

// Runs backward on the active tape (or seeds a bare leaf).
inline void backward(const Tensor& loss) {
  if (auto* tape = Tape::active(); tape != nullptr && loss.impl()->tape == tape) {
    tape->backward(loss);
    return;
  }
  if (loss.size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (loss.impl()->tape != nullptr) throw ContractError("backward(): loss tape is not active");
  if (!loss.requires_grad()) throw ContractError("backward(): loss is not connected to any parameter");
  loss.impl()->grad_buffer()[0] += 1.0;
}

namespace detail {

inline void check_finite(const std::vector<double>& v, const char* op) {
  if (!checked_mode().load(std::memory_order_relaxed)) return;
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string("non-finite value produced by ") + op);
  }
}

// Returns the gradient buffer of an input, or nullptr when it needs none.
inline std::vector<double>* grad_of(const std::shared_ptr<TensorImpl>& impl) {
  return impl->requires_grad ? &impl->grad_buffer() : nullptr;
}

inline Tensor record(const char* op, Shape shape, std::vector<double> out,
                     std::initializer_list<const Tensor*> inputs, Tape::GradFn fn) {
  check_finite(out, op);
  Tensor result(std::move(shape), std::move(out));
  Tape* tape = Tape::active();
  if (tape == nullptr) return result;
  bool needs = false;
  for (const Tensor* t : inputs) needs = needs || t->requires_grad();
  if (!needs) return result;
  result.set_requires_grad(true);
  tape->record(result.impl(), std::move(fn));
  return result;
}

inline Tensor record_many(const char* op, Shape shape, std::vector<double> out,
                          const std::vector<Tensor>& inputs, Tape::GradFn fn) {
  check_finite(out, op);
  Tensor result(std::move(shape), std::move(out));
  Tape* tape = Tape::active();
  if (tape == nullptr) return result;
  bool needs = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (!needs) return result;
  result.set_requires_grad(true);
  tape->record(result.impl(), std::move(fn));
  return result;
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

inline void require_rank(const Tensor& a, std::size_t rank, const char* op) {
  if (a.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     shape_str(a.shape()));
  }
}

// Shape of a reduction over the last axis.
inline Shape drop_last(const Shape& s) { return s.empty() ? s : Shape(s.begin(), s.end() - 1); }

}  // namespace detail

inline Tensor detach(const Tensor& x, bool requires_grad = false) { return x.clone(requires_grad); }

// ---- elementwise -----------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  auto ai = a.impl(), bi = b.impl();
  return detail::record("add", a.shape(), std::move(out), {&a, &b}, [ai, bi](std::span<const double> g) {
    if (auto* ga = detail::grad_of(ai)) for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    if (auto* gb = detail::grad_of(bi)) for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i];
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  auto ai = a.impl(), bi = b.impl();
  return detail::record("sub", a.shape(), std::move(out), {&a, &b}, [ai, bi](std::span<const double> g) {
    if (auto* ga = detail::grad_of(ai)) for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    if (auto* gb = detail::grad_of(bi)) for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  auto ai = a.impl(), bi = b.impl();
  return detail::record("mul", a.shape(), std::move(out), {&a, &b}, [ai, bi](std::span<const double> g) {
    if (auto* ga = detail::grad_of(ai)) for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bi->data[i];
    if (auto* gb = detail::grad_of(bi)) for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * ai->data[i];
  });
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * c;
  auto ai = a.impl();
  return detail::record("scale", a.shape(), std::move(out), {&a}, [ai, c](std::span<const double> g) {
    if (auto* ga = detail::grad_of(ai)) for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * c;
  });
}

inline Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + c;
  auto ai = a.impl();
  return detail::record("add_scalar", a.shape(), std::move(out), {&a}, [ai](std::span<const double> g) {
    if (auto* ga = detail::grad_of(ai)) for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
  });
}

// X[n,d] + v[d], broadcast over rows.
inline Tensor add_row(const Tensor& x, const Tensor& v) {
  if (v.rank() != 1 || v.size() != x.cols()) {
    throw ShapeError("add_row: row vector " + shape_str(v.shape()) + " incompatible with " + shape_str(x.shape()));
  }
  const std::size_t n = x.rows(), d = x.cols();
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = x.values()[r * d + c] + v.values()[c];
  auto xi = x.impl(), vi = v.impl();
  return detail::record("add_row", x.shape(), std::move(out), {&x, &v}, [xi, vi, n, d](std::span<const double> g) {
    if (auto* gx = detail::grad_of(xi)) for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
    if (auto* gv = detail::grad_of(vi))
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) (*gv)[c] += g[r * d + c];
  });
}

// x * s for a one-element tensor s; differentiable in both.
inline Tensor scale_by(const Tensor& x, const Tensor& s) {
  if (s.size() != 1) throw ShapeError("scale_by: scale of shape " + shape_str(s.shape()) + " is not a single value");
  const double c = s.values()[0];
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * c;
  auto xi = x.impl(), si = s.impl();
  return detail::record("scale_by", x.shape(), std::move(out), {&x, &s}, [xi, si](std::span<const double> g) {
    if (auto* gx = detail::grad_of(xi)) for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * si->data[0];
    if (auto* gs = detail::grad_of(si)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xi->data[i];
      (*gs)[0] += acc;
    }
  });
}

// Scales row r of X by s[r]. A rank-1 X is a single row and s has one value.
inline Tensor scale_rows(const Tensor& x, const Tensor& s) {
  const std::size_t n = x.rows(), d = x.cols();
  if (s.size() != n) {
    throw ShapeError("scale_rows: " + std::to_string(s.size()) + " scales for " + std::to_string(n) + " rows");
  }
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = x.values()[r * d + c] * s.values()[r];
  auto xi = x.impl(), si = s.impl();
  return detail::record("scale_rows", x.shape(), std::move(out), {&x, &s}, [xi, si, n, d](std::span<const double> g) {
    if (auto* gx = detail::grad_of(xi))
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) (*gx)[r * d + c] += g[r * d + c] * si->data[r];
    if (auto* gs = detail::grad_of(si))
      for (std::size_t r = 0; r < n; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < d; ++c) acc += g[r * d + c] * xi->data[r * d + c];
        (*gs)[r] += acc;
      }
  });
}

namespace detail {

template <class F, class DF>
Tensor unary(const char* op, const Tensor& a, F f, DF df) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a.values()[i]);
  auto ai = a.impl();
  auto y = std::make_shared<std::vector<double>>(out);
  return record(op, a.shape(), std::move(out), {&a}, [ai, y, df](std::span<const double> g) {
    if (auto* ga = grad_of(ai))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * df(ai->data[i], (*y)[i]);
  });
}

}  // namespace detail

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary(
      "sigmoid", a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor tanh(const Tensor& a) {
  return detail::unary("tanh", a, [](double x) { return std::tanh(x); },
                       [](double, double y) { return 1.0 - y * y; });
}

inline Tensor relu(const Tensor& a) {
  return detail::unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
                       [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor exp(const Tensor& a) {
  return detail::unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& a) {
  for (double x : a.values()) {
    if (!(x > 0.0)) throw NumericError("log of non-positive value");
  }
  return detail::unary("log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

// ---- shape manipulation -----------------------------------------------------

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  auto ai = a.impl();
  return detail::record("reshape", std::move(shape), a.values(), {&a}, [ai](std::span<const double> g) {
    if (auto* ga = detail::grad_of(ai)) for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
  });
}

inline Tensor transpose(const Tensor& a) {
  detail::require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.values()[i * n + j];
  auto ai = a.impl();
  return detail::record("transpose", {n, m}, std::move(out), {&a}, [ai, m, n](std::span<const double> g) {
    if (auto* ga = detail::grad_of(ai))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*ga)[i * n + j] += g[j * m + i];
  });
}

// Concatenation along the last axis; all inputs share their leading extent.
inline Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const std::size_t rank = parts[0].rank();
  if (rank == 0 || rank > 2) throw ShapeError("concat: rank-1 or rank-2 inputs required");
  const std::size_t n = parts[0].rows();
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    if (p.rank() != rank || p.rows() != n) {
      throw ShapeError("concat: " + shape_str(p.shape()) + " does not match " + shape_str(parts[0].shape()));
    }
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<double> out(n * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (std::size_t r = 0; r < n; ++r)
      std::copy_n(parts[k].values().begin() + r * widths[k], widths[k], out.begin() + r * total + offset);
    offset += widths[k];
  }
  Shape shape = rank == 1 ? Shape{total} : Shape{n, total};
  std::vector<std::shared_ptr<TensorImpl>> impls;
  for (const auto& p : parts) impls.push_back(p.impl());
  return detail::record_many("concat", std::move(shape), std::move(out), parts,
                             [impls, widths, n, total](std::span<const double> g) {
                               std::size_t off = 0;
                               for (std::size_t k = 0; k < impls.size(); ++k) {
                                 if (auto* gp = detail::grad_of(impls[k]))
                                   for (std::size_t r = 0; r < n; ++r)
                                     for (std::size_t c = 0; c < widths[k]; ++c)
                                       (*gp)[r * widths[k] + c] += g[r * total + off + c];
                                 off += widths[k];
                               }
                             });
}

// Stacks equally shaped tensors along a new leading axis.
inline Tensor stack(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("stack: no inputs");
  const Shape inner = parts[0].shape();
  const std::size_t w = parts[0].size();
  std::vector<double> out;
  out.reserve(w * parts.size());
  for (const auto& p : parts) {
    if (p.shape() != inner) throw ShapeError("stack: " + shape_str(p.shape()) + " vs " + shape_str(inner));
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  Shape shape{parts.size()};
  shape.insert(shape.end(), inner.begin(), inner.end());
  std::vector<std::shared_ptr<TensorImpl>> impls;
  for (const auto& p : parts) impls.push_back(p.impl());
  return detail::record_many("stack", std::move(shape), std::move(out), parts, [impls, w](std::span<const double> g) {
    for (std::size_t k = 0; k < impls.size(); ++k)
      if (auto* gp = detail::grad_of(impls[k]))
        for (std::size_t c = 0; c < w; ++c) (*gp)[c] += g[k * w + c];
  });
}

inline Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t len) {
  const std::size_t n = x.rows(), d = x.cols();
  if (x.rank() == 0 || start + len > d) {
    throw ShapeError("slice_cols: [" + std::to_string(start) + "," + std::to_string(start + len) + ") of " +
                     shape_str(x.shape()));
  }
  std::vector<double> out(n * len);
  for (std::size_t r = 0; r < n; ++r)
    std::copy_n(x.values().begin() + r * d + start, len, out.begin() + r * len);
  Shape shape = x.rank() == 1 ? Shape{len} : Shape{n, len};
  auto xi = x.impl();
  return detail::record("slice_cols", std::move(shape), std::move(out), {&x},
                        [xi, n, d, start, len](std::span<const double> g) {
                          if (auto* gx = detail::grad_of(xi))
                            for (std::size_t r = 0; r < n; ++r)
                              for (std::size_t c = 0; c < len; ++c) (*gx)[r * d + start + c] += g[r * len + c];
                        });
}

// Row i of a matrix as a rank-1 tensor.
inline Tensor row(const Tensor& x, std::size_t i) {
  detail::require_rank(x, 2, "row");
  const std::size_t d = x.cols();
  if (i >= x.rows()) throw ShapeError("row: index " + std::to_string(i) + " out of " + shape_str(x.shape()));
  std::vector<double> out(x.values().begin() + i * d, x.values().begin() + (i + 1) * d);
  auto xi = x.impl();
  return detail::record("row", {d}, std::move(out), {&x}, [xi, i, d](std::span<const double> g) {
    if (auto* gx = detail::grad_of(xi)) for (std::size_t c = 0; c < d; ++c) (*gx)[i * d + c] += g[c];
  });
}

// Embedding lookup: rows of table[N,d] selected by ids. Gradients scatter-add
// into the (dense) table gradient.
inline Tensor gather(const Tensor& table, std::span<const std::size_t> ids) {
  detail::require_rank(table, 2, "gather");
  const std::size_t rows = table.dim(0), d = table.dim(1);
  std::vector<double> out(ids.size() * d);
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (ids[k] >= rows) {
      throw ShapeError("gather: id " + std::to_string(ids[k]) + " out of range for " + shape_str(table.shape()));
    }
    std::copy_n(table.values().begin() + ids[k] * d, d, out.begin() + k * d);
  }
  auto ti = table.impl();
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  return detail::record("gather", {ids.size(), d}, std::move(out), {&table}, [ti, idx, d](std::span<const double> g) {
    if (auto* gt = detail::grad_of(ti))
      for (std::size_t k = 0; k < idx.size(); ++k)
        for (std::size_t c = 0; c < d; ++c) (*gt)[idx[k] * d + c] += g[k * d + c];
  });
}

inline Tensor gather(const Tensor& table, std::initializer_list<std::size_t> ids) {
  return gather(table, std::span<const std::size_t>(ids.begin(), ids.size()));
}

// out[i] = sum of x rows listed in members[i]; an empty list yields zeros.
inline Tensor segment_sum(const Tensor& x, const std::vector<std::vector<std::size_t>>& members) {
  detail::require_rank(x, 2, "segment_sum");
  const std::size_t d = x.cols();
  std::vector<double> out(members.size() * d, 0.0);
  for (std::size_t i = 0; i < members.size(); ++i)
    for (std::size_t j : members[i]) {
      if (j >= x.rows()) throw ShapeError("segment_sum: member index out of range");
      for (std::size_t c = 0; c < d; ++c) out[i * d + c] += x.values()[j * d + c];
    }
  auto xi = x.impl();
  return detail::record("segment_sum", {members.size(), d}, std::move(out), {&x},
                        [xi, members, d](std::span<const double> g) {
                          if (auto* gx = detail::grad_of(xi))
                            for (std::size_t i = 0; i < members.size(); ++i)
                              for (std::size_t j : members[i])
                                for (std::size_t c = 0; c < d; ++c) (*gx)[j * d + c] += g[i * d + c];
                        });
}

// ---- linear algebra ---------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<double> out(m * n, 0.0);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
    }
  auto ai = a.impl(), bi = b.impl();
  return detail::record("matmul", {m, n}, std::move(out), {&a, &b}, [ai, bi, m, k, n](std::span<const double> g) {
    if (auto* ga = detail::grad_of(ai))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bi->data[p * n + j];
          (*ga)[i * k + p] += acc;
        }
    if (auto* gb = detail::grad_of(bi))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = ai->data[i * k + p];
          for (std::size_t j = 0; j < n; ++j) (*gb)[p * n + j] += aip * g[i * n + j];
        }
  });
}

// y = x W^T + b for x[n,in] (or x[in]), W[out,in], b[out]. Pass an empty
// bias tensor pointer to skip the bias.
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor* b = nullptr) {
  detail::require_rank(w, 2, "linear");
  const std::size_t in = w.dim(1), outw = w.dim(0);
  if (x.rank() == 0 || x.rank() > 2 || x.cols() != in) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  }
  if (b != nullptr && (b->rank() != 1 || b->size() != outw)) {
    throw ShapeError("linear: bias " + shape_str(b->shape()) + " vs weight " + shape_str(w.shape()));
  }
  const std::size_t n = x.rows();
  std::vector<double> out(n * outw);
  const auto& xv = x.values();
  const auto& wv = w.values();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t o = 0; o < outw; ++o) {
      double acc = b != nullptr ? b->values()[o] : 0.0;
      const double* xr = xv.data() + r * in;
      const double* wr = wv.data() + o * in;
      for (std::size_t c = 0; c < in; ++c) acc += xr[c] * wr[c];
      out[r * outw + o] = acc;
    }
  Shape shape = x.rank() == 1 ? Shape{outw} : Shape{n, outw};
  auto xi = x.impl(), wi = w.impl();
  std::shared_ptr<TensorImpl> bi = b != nullptr ? b->impl() : nullptr;
  auto fn = [xi, wi, bi, n, in, outw](std::span<const double> g) {
    if (auto* gx = detail::grad_of(xi))
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t o = 0; o < outw; ++o) {
          const double go = g[r * outw + o];
          if (go == 0.0) continue;
          for (std::size_t c = 0; c < in; ++c) (*gx)[r * in + c] += go * wi->data[o * in + c];
        }
    if (auto* gw = detail::grad_of(wi))
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t o = 0; o < outw; ++o) {
          const double go = g[r * outw + o];
          if (go == 0.0) continue;
          for (std::size_t c = 0; c < in; ++c) (*gw)[o * in + c] += go * xi->data[r * in + c];
        }
    if (bi)
      if (auto* gb = detail::grad_of(bi))
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t o = 0; o < outw; ++o) (*gb)[o] += g[r * outw + o];
  };
  if (b != nullptr) return detail::record("linear", std::move(shape), std::move(out), {&x, &w, b}, fn);
  return detail::record("linear", std::move(shape), std::move(out), {&x, &w}, fn);
}

inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return linear(x, w, &b); }

inline Tensor dot(const Tensor& a, const Tensor& b) {
  if (a.rank() != 1) throw ShapeError("dot: rank-1 inputs required, got " + shape_str(a.shape()));
  detail::require_same_shape(a, b, "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a.values()[i] * b.values()[i];
  auto ai = a.impl(), bi = b.impl();
  return detail::record("dot", {}, {acc}, {&a, &b}, [ai, bi](std::span<const double> g) {
    if (auto* ga = detail::grad_of(ai)) for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += g[0] * bi->data[i];
    if (auto* gb = detail::grad_of(bi)) for (std::size_t i = 0; i < gb->size(); ++i) (*gb)[i] += g[0] * ai->data[i];
  });
}

inline Tensor cosine(const Tensor& a, const Tensor& b) {
  if (a.rank() != 1) throw ShapeError("cosine: rank-1 inputs required, got " + shape_str(a.shape()));
  detail::require_same_shape(a, b, "cosine");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a.values()[i] * b.values()[i];
    aa += a.values()[i] * a.values()[i];
    bb += b.values()[i] * b.values()[i];
  }
  constexpr double kEps = 1e-12;
  const double na = std::max(std::sqrt(aa), kEps), nb = std::max(std::sqrt(bb), kEps);
  const double cs = ab / (na * nb);
  auto ai = a.impl(), bi = b.impl();
  return detail::record("cosine", {}, {cs}, {&a, &b}, [ai, bi, na, nb, cs](std::span<const double> g) {
    // d cos / da = b/(|a||b|) - cos * a/|a|^2
    if (auto* ga = detail::grad_of(ai))
      for (std::size_t i = 0; i < ga->size(); ++i)
        (*ga)[i] += g[0] * (bi->data[i] / (na * nb) - cs * ai->data[i] / (na * na));
    if (auto* gb = detail::grad_of(bi))
      for (std::size_t i = 0; i < gb->size(); ++i)
        (*gb)[i] += g[0] * (ai->data[i] / (na * nb) - cs * bi->data[i] / (nb * nb));
  });
}

// ---- reductions -------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  auto ai = a.impl();
  return detail::record("sum", {}, {acc}, {&a}, [ai](std::span<const double> g) {
    if (auto* ga = detail::grad_of(ai)) for (auto& v : *ga) v += g[0];
  });
}

// Sum along an axis of a rank-1 or rank-2 tensor.
inline Tensor sum(const Tensor& a, std::size_t axis) {
  if (a.rank() == 1 && axis == 0) return sum(a);
  detail::require_rank(a, 2, "sum(axis)");
  const std::size_t n = a.dim(0), d = a.dim(1);
  auto ai = a.impl();
  if (axis == 0) {
    std::vector<double> out(d, 0.0);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < d; ++c) out[c] += a.values()[r * d + c];
    return detail::record("sum0", {d}, std::move(out), {&a}, [ai, n, d](std::span<const double> g) {
      if (auto* ga = detail::grad_of(ai))
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < d; ++c) (*ga)[r * d + c] += g[c];
    });
  }
  if (axis != 1) throw ShapeError("sum: axis out of range");
  std::vector<double> out(n, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) out[r] += a.values()[r * d + c];
  return detail::record("sum1", {n}, std::move(out), {&a}, [ai, n, d](std::span<const double> g) {
    if (auto* ga = detail::grad_of(ai))
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) (*ga)[r * d + c] += g[r];
  });
}

inline Tensor mean(const Tensor& a, std::size_t axis) {
  const std::size_t count = a.rank() == 1 ? a.size() : a.dim(axis);
  if (count == 0) throw ShapeError("mean over an empty axis");
  return scale(sum(a, axis), 1.0 / static_cast<double>(count));
}

// Squared L2 norm along the last axis.
inline Tensor sq_norm(const Tensor& a) {
  if (a.rank() == 0) throw ShapeError("sq_norm: scalar input");
  const std::size_t n = a.rows(), d = a.cols();
  std::vector<double> out(n, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) out[r] += a.values()[r * d + c] * a.values()[r * d + c];
  auto ai = a.impl();
  return detail::record("sq_norm", detail::drop_last(a.shape()), std::move(out), {&a},
                        [ai, n, d](std::span<const double> g) {
                          if (auto* ga = detail::grad_of(ai))
                            for (std::size_t r = 0; r < n; ++r)
                              for (std::size_t c = 0; c < d; ++c) (*ga)[r * d + c] += 2.0 * g[r] * ai->data[r * d + c];
                        });
}

// Softmax along the last axis.
inline Tensor softmax(const Tensor& a) {
  if (a.rank() == 0) throw ShapeError("softmax: scalar input");
  const std::size_t n = a.rows(), d = a.cols();
  std::vector<double> out(a.size());
  for (std::size_t r = 0; r < n; ++r) {
    const double* x = a.values().data() + r * d;
    const double mx = *std::max_element(x, x + d);
    double z = 0.0;
    for (std::size_t c = 0; c < d; ++c) z += (out[r * d + c] = std::exp(x[c] - mx));
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] /= z;
  }
  auto ai = a.impl();
  auto y = std::make_shared<std::vector<double>>(out);
  return detail::record("softmax", a.shape(), std::move(out), {&a}, [ai, y, n, d](std::span<const double> g) {
    if (auto* ga = detail::grad_of(ai))
      for (std::size_t r = 0; r < n; ++r) {
        double gy = 0.0;
        for (std::size_t c = 0; c < d; ++c) gy += g[r * d + c] * (*y)[r * d + c];
        for (std::size_t c = 0; c < d; ++c) (*ga)[r * d + c] += (*y)[r * d + c] * (g[r * d + c] - gy);
      }
  });
}

inline Tensor log_softmax(const Tensor& a) {
  if (a.rank() == 0) throw ShapeError("log_softmax: scalar input");
  const std::size_t n = a.rows(), d = a.cols();
  std::vector<double> out(a.size());
  auto probs = std::make_shared<std::vector<double>>(a.size());
  for (std::size_t r = 0; r < n; ++r) {
    const double* x = a.values().data() + r * d;
    const double mx = *std::max_element(x, x + d);
    double z = 0.0;
    for (std::size_t c = 0; c < d; ++c) z += std::exp(x[c] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t c = 0; c < d; ++c) {
      out[r * d + c] = x[c] - lz;
      (*probs)[r * d + c] = std::exp(out[r * d + c]);
    }
  }
  auto ai = a.impl();
  return detail::record("log_softmax", a.shape(), std::move(out), {&a}, [ai, probs, n, d](std::span<const double> g) {
    if (auto* ga = detail::grad_of(ai))
      for (std::size_t r = 0; r < n; ++r) {
        double gs = 0.0;
        for (std::size_t c = 0; c < d; ++c) gs += g[r * d + c];
        for (std::size_t c = 0; c < d; ++c) (*ga)[r * d + c] += g[r * d + c] - (*probs)[r * d + c] * gs;
      }
  });
}

// Layer normalization along the last axis with learnable gain and bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
  const std::size_t n = x.rows(), d = x.cols();
  if (x.rank() == 0 || gain.size() != d || bias.size() != d) {
    throw ShapeError("layer_norm: input " + shape_str(x.shape()) + ", gain " + shape_str(gain.shape()) + ", bias " +
                     shape_str(bias.shape()));
  }
  std::vector<double> out(x.size());
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double* xr = x.values().data() + r * d;
    double mu = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += xr[c];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < d; ++c) {
      const double h = (xr[c] - mu) * is;
      (*xhat)[r * d + c] = h;
      out[r * d + c] = h * gain.values()[c] + bias.values()[c];
    }
  }
  auto xi = x.impl(), gi = gain.impl(), bi = bias.impl();
  return detail::record(
      "layer_norm", x.shape(), std::move(out), {&x, &gain, &bias},
      [xi, gi, bi, xhat, inv_std, n, d](std::span<const double> g) {
        auto* gx = detail::grad_of(xi);
        auto* gg = detail::grad_of(gi);
        auto* gb = detail::grad_of(bi);
        for (std::size_t r = 0; r < n; ++r) {
          double s1 = 0.0, s2 = 0.0;
          for (std::size_t c = 0; c < d; ++c) {
            const double gh = g[r * d + c] * gi->data[c];
            s1 += gh;
            s2 += gh * (*xhat)[r * d + c];
            if (gg) (*gg)[c] += g[r * d + c] * (*xhat)[r * d + c];
            if (gb) (*gb)[c] += g[r * d + c];
          }
          if (gx) {
            const double dn = static_cast<double>(d);
            for (std::size_t c = 0; c < d; ++c) {
              const double gh = g[r * d + c] * gi->data[c];
              (*gx)[r * d + c] += (*inv_std)[r] * (gh - s1 / dn - (*xhat)[r * d + c] * s2 / dn);
            }
          }
        }
      });
}

}  // namespace transnet::numkit

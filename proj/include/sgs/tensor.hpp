#pragma once
// Dense row-major tensors with reverse-mode automatic differentiation.
//
// Every op runs eagerly, validates that its output is finite, and (when
// gradients are enabled and an input requires them) records an adjoint
// closure on the result node. backward() replays the closures in reverse
// topological order and then clears the record, leaving gradients on the
// leaf tensors. Single-threaded within a step; summation order is fixed
// so results are bit-reproducible for a given scalar type.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace sgs {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int e : shape) {
    if (e < 0) throw std::invalid_argument("tensor extent must be nonnegative");
    n *= e;
  }
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// Gradient recording is on by default; NoGradGuard switches it off for the
// current scope (inference, sampling).
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode_flag()) { grad_mode_flag() = false; }
  ~NoGradGuard() { grad_mode_flag() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <class S>
struct TensorNode {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;  // allocated lazily, same length as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode<S>>> parents;
  std::function<void()> backprop;  // accumulates this node's grad into parents

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), S(0));
  }
};

template <class S>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), S(0), requires_grad);
  }

  static Tensor filled(Shape shape, S v, bool requires_grad = false) {
    Tensor t;
    t.node_ = std::make_shared<TensorNode<S>>();
    t.node_->shape = std::move(shape);
    t.node_->value.assign(static_cast<size_t>(shape_numel(t.node_->shape)), v);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor from(Shape shape, std::vector<S> data, bool requires_grad = false) {
    if (static_cast<std::int64_t>(data.size()) != shape_numel(shape))
      throw std::invalid_argument("tensor data length does not match shape " + shape_str(shape));
    Tensor t;
    t.node_ = std::make_shared<TensorNode<S>>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(data);
    t.node_->requires_grad = requires_grad;
    t.check_finite("from");
    return t;
  }

  static Tensor scalar(S v) { return from({}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int extent(int axis) const { return node_->shape.at(static_cast<size_t>(axis)); }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->value.size()); }
  bool requires_grad() const { return node_->requires_grad; }

  // Leaf setup only; flipping this on a recorded intermediate has no effect
  // on an already-built graph.
  Tensor& set_requires_grad(bool rg) {
    node_->requires_grad = rg;
    return *this;
  }

  std::span<const S> value() const { return {node_->value.data(), node_->value.size()}; }
  // Mutable access for leaf initialization and optimizer updates between steps.
  std::span<S> mutable_value() { return {node_->value.data(), node_->value.size()}; }

  std::span<const S> grad() const {
    node_->ensure_grad();
    return {node_->grad.data(), node_->grad.size()};
  }
  std::span<S> mutable_grad() {
    node_->ensure_grad();
    return {node_->grad.data(), node_->grad.size()};
  }
  void zero_grad() { node_->grad.assign(node_->value.size(), S(0)); }

  S item() const {
    if (numel() != 1) throw std::invalid_argument("item() on non-scalar tensor " + shape_str(shape()));
    return node_->value[0];
  }

  S at(std::initializer_list<int> idx) const {
    std::int64_t off = 0;
    size_t a = 0;
    for (int i : idx) off = off * node_->shape[a++] + i;
    return node_->value[static_cast<size_t>(off)];
  }

  // New leaf sharing nothing with the graph.
  Tensor detach() const {
    Tensor t;
    t.node_ = std::make_shared<TensorNode<S>>();
    t.node_->shape = node_->shape;
    t.node_->value = node_->value;
    return t;
  }

  void check_finite(const char* op) const {
    for (S v : node_->value) {
      if (!std::isfinite(static_cast<double>(v)))
        throw std::runtime_error(std::string("non-finite value produced by ") + op);
    }
  }

  std::shared_ptr<TensorNode<S>> node() const { return node_; }

  static Tensor make(Shape shape, bool track) {
    Tensor t;
    t.node_ = std::make_shared<TensorNode<S>>();
    t.node_->shape = std::move(shape);
    t.node_->value.resize(static_cast<size_t>(shape_numel(t.node_->shape)));
    t.node_->requires_grad = track;
    return t;
  }

 private:
  std::shared_ptr<TensorNode<S>> node_;
};

namespace detail {

template <class S>
bool tracking(std::initializer_list<const Tensor<S>*> inputs) {
  if (!grad_mode_flag()) return false;
  for (const Tensor<S>* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

template <class S, class Fn>
void record(Tensor<S>& out, std::initializer_list<const Tensor<S>*> inputs, Fn&& fn) {
  if (!out.requires_grad()) return;
  auto node = out.node();
  for (const Tensor<S>* t : inputs) node->parents.push_back(t->node());
  node->backprop = std::forward<Fn>(fn);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <class S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  check_same_shape(a, b, "add");
  auto out = Tensor<S>::make(a.shape(), detail::tracking<S>({&a, &b}));
  auto ov = out.mutable_value();
  auto av = a.value(), bv = b.value();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  out.check_finite("add");
  detail::record(out, {&a, &b}, [o = out.node().get(), an = a.node(), bn = b.node()] {
    an->ensure_grad();
    bn->ensure_grad();
    for (size_t i = 0; i < o->grad.size(); ++i) {
      an->grad[i] += o->grad[i];
      bn->grad[i] += o->grad[i];
    }
  });
  return out;
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  check_same_shape(a, b, "sub");
  auto out = Tensor<S>::make(a.shape(), detail::tracking<S>({&a, &b}));
  auto ov = out.mutable_value();
  auto av = a.value(), bv = b.value();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
  out.check_finite("sub");
  detail::record(out, {&a, &b}, [o = out.node().get(), an = a.node(), bn = b.node()] {
    an->ensure_grad();
    bn->ensure_grad();
    for (size_t i = 0; i < o->grad.size(); ++i) {
      an->grad[i] += o->grad[i];
      bn->grad[i] -= o->grad[i];
    }
  });
  return out;
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  check_same_shape(a, b, "mul");
  auto out = Tensor<S>::make(a.shape(), detail::tracking<S>({&a, &b}));
  auto ov = out.mutable_value();
  auto av = a.value(), bv = b.value();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  out.check_finite("mul");
  detail::record(out, {&a, &b}, [o = out.node().get(), an = a.node(), bn = b.node()] {
    an->ensure_grad();
    bn->ensure_grad();
    for (size_t i = 0; i < o->grad.size(); ++i) {
      an->grad[i] += o->grad[i] * bn->value[i];
      bn->grad[i] += o->grad[i] * an->value[i];
    }
  });
  return out;
}

template <class S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
  check_same_shape(a, b, "div");
  auto out = Tensor<S>::make(a.shape(), detail::tracking<S>({&a, &b}));
  auto ov = out.mutable_value();
  auto av = a.value(), bv = b.value();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] / bv[i];
  out.check_finite("div");
  detail::record(out, {&a, &b}, [o = out.node().get(), an = a.node(), bn = b.node()] {
    an->ensure_grad();
    bn->ensure_grad();
    for (size_t i = 0; i < o->grad.size(); ++i) {
      const S inv = S(1) / bn->value[i];
      an->grad[i] += o->grad[i] * inv;
      bn->grad[i] -= o->grad[i] * an->value[i] * inv * inv;
    }
  });
  return out;
}

template <class S>
Tensor<S> scale(const Tensor<S>& a, S c) {
  auto out = Tensor<S>::make(a.shape(), detail::tracking<S>({&a}));
  auto ov = out.mutable_value();
  auto av = a.value();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * c;
  out.check_finite("scale");
  detail::record(out, {&a}, [o = out.node().get(), an = a.node(), c] {
    an->ensure_grad();
    for (size_t i = 0; i < o->grad.size(); ++i) an->grad[i] += o->grad[i] * c;
  });
  return out;
}

template <class S>
Tensor<S> shift(const Tensor<S>& a, S c) {
  auto out = Tensor<S>::make(a.shape(), detail::tracking<S>({&a}));
  auto ov = out.mutable_value();
  auto av = a.value();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + c;
  out.check_finite("shift");
  detail::record(out, {&a}, [o = out.node().get(), an = a.node()] {
    an->ensure_grad();
    for (size_t i = 0; i < o->grad.size(); ++i) an->grad[i] += o->grad[i];
  });
  return out;
}

template <class S>
Tensor<S> neg(const Tensor<S>& a) {
  return scale(a, S(-1));
}

template <class S>
Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) { return add(a, b); }
template <class S>
Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) { return sub(a, b); }
template <class S>
Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) { return mul(a, b); }

template <class S>
Tensor<S> exp(const Tensor<S>& a) {
  auto out = Tensor<S>::make(a.shape(), detail::tracking<S>({&a}));
  auto ov = out.mutable_value();
  auto av = a.value();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = std::exp(av[i]);
  out.check_finite("exp");
  detail::record(out, {&a}, [o = out.node().get(), an = a.node()] {
    an->ensure_grad();
    for (size_t i = 0; i < o->grad.size(); ++i) an->grad[i] += o->grad[i] * o->value[i];
  });
  return out;
}

template <class S>
Tensor<S> log(const Tensor<S>& a) {
  auto out = Tensor<S>::make(a.shape(), detail::tracking<S>({&a}));
  auto ov = out.mutable_value();
  auto av = a.value();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = std::log(av[i]);
  out.check_finite("log");
  detail::record(out, {&a}, [o = out.node().get(), an = a.node()] {
    an->ensure_grad();
    for (size_t i = 0; i < o->grad.size(); ++i) an->grad[i] += o->grad[i] / an->value[i];
  });
  return out;
}

template <class S>
Tensor<S> sqrt(const Tensor<S>& a) {
  auto out = Tensor<S>::make(a.shape(), detail::tracking<S>({&a}));
  auto ov = out.mutable_value();
  auto av = a.value();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = std::sqrt(av[i]);
  out.check_finite("sqrt");
  detail::record(out, {&a}, [o = out.node().get(), an = a.node()] {
    an->ensure_grad();
    for (size_t i = 0; i < o->grad.size(); ++i)
      an->grad[i] += o->grad[i] * S(0.5) / o->value[i];
  });
  return out;
}

template <class S>
Tensor<S> tanh(const Tensor<S>& a) {
  auto out = Tensor<S>::make(a.shape(), detail::tracking<S>({&a}));
  auto ov = out.mutable_value();
  auto av = a.value();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = std::tanh(av[i]);
  out.check_finite("tanh");
  detail::record(out, {&a}, [o = out.node().get(), an = a.node()] {
    an->ensure_grad();
    for (size_t i = 0; i < o->grad.size(); ++i)
      an->grad[i] += o->grad[i] * (S(1) - o->value[i] * o->value[i]);
  });
  return out;
}

// Smooth GELU (tanh form); smoothness keeps finite-difference checks clean.
template <class S>
Tensor<S> gelu(const Tensor<S>& a) {
  static const S kC = S(std::sqrt(2.0 / 3.14159265358979323846));
  static const S kA = S(0.044715);
  auto out = Tensor<S>::make(a.shape(), detail::tracking<S>({&a}));
  auto ov = out.mutable_value();
  auto av = a.value();
  for (size_t i = 0; i < ov.size(); ++i) {
    const S x = av[i];
    ov[i] = S(0.5) * x * (S(1) + std::tanh(kC * (x + kA * x * x * x)));
  }
  out.check_finite("gelu");
  detail::record(out, {&a}, [o = out.node().get(), an = a.node()] {
    an->ensure_grad();
    for (size_t i = 0; i < o->grad.size(); ++i) {
      const S x = an->value[i];
      const S u = kC * (x + kA * x * x * x);
      const S t = std::tanh(u);
      const S du = kC * (S(1) + S(3) * kA * x * x);
      an->grad[i] += o->grad[i] * (S(0.5) * (S(1) + t) + S(0.5) * x * (S(1) - t * t) * du);
    }
  });
  return out;
}

// Clamp to [0,1]; subgradient passes through on the closed interval.
template <class S>
Tensor<S> clamp01(const Tensor<S>& a) {
  auto out = Tensor<S>::make(a.shape(), detail::tracking<S>({&a}));
  auto ov = out.mutable_value();
  auto av = a.value();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = std::min(S(1), std::max(S(0), av[i]));
  detail::record(out, {&a}, [o = out.node().get(), an = a.node()] {
    an->ensure_grad();
    for (size_t i = 0; i < o->grad.size(); ++i) {
      const S x = an->value[i];
      if (x >= S(0) && x <= S(1)) an->grad[i] += o->grad[i];
    }
  });
  return out;
}

// Value copy with no graph connection (gradient stop).
template <class S>
Tensor<S> detach(const Tensor<S>& a) {
  return a.detach();
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

template <class S>
void require_rank(const Tensor<S>& t, int r, const char* op) {
  if (t.rank() != r)
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(r) +
                                ", got " + shape_str(t.shape()));
}

// C[n,m] = A[n,k] * B[k,m]
template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const int n = a.extent(0), k = a.extent(1), m = b.extent(1);
  if (b.extent(0) != k)
    throw std::invalid_argument("matmul: inner extents differ " + shape_str(a.shape()) + " " +
                                shape_str(b.shape()));
  auto out = Tensor<S>::make({n, m}, detail::tracking<S>({&a, &b}));
  auto ov = out.mutable_value();
  auto av = a.value(), bv = b.value();
  std::fill(ov.begin(), ov.end(), S(0));
  for (int i = 0; i < n; ++i)
    for (int p = 0; p < k; ++p) {
      const S aip = av[static_cast<size_t>(i) * k + p];
      const S* brow = &bv[static_cast<size_t>(p) * m];
      S* orow = &ov[static_cast<size_t>(i) * m];
      for (int j = 0; j < m; ++j) orow[j] += aip * brow[j];
    }
  out.check_finite("matmul");
  detail::record(out, {&a, &b}, [o = out.node().get(), an = a.node(), bn = b.node(), n, k, m] {
    an->ensure_grad();
    bn->ensure_grad();
    for (int i = 0; i < n; ++i)
      for (int p = 0; p < k; ++p) {
        const S* grow = &o->grad[static_cast<size_t>(i) * m];
        const S* brow = &bn->value[static_cast<size_t>(p) * m];
        S s = 0;
        for (int j = 0; j < m; ++j) s += grow[j] * brow[j];
        an->grad[static_cast<size_t>(i) * k + p] += s;
      }
    for (int i = 0; i < n; ++i)
      for (int p = 0; p < k; ++p) {
        const S aip = an->value[static_cast<size_t>(i) * k + p];
        const S* grow = &o->grad[static_cast<size_t>(i) * m];
        S* brow = &bn->grad[static_cast<size_t>(p) * m];
        for (int j = 0; j < m; ++j) brow[j] += aip * grow[j];
      }
  });
  return out;
}

// C[n,m] = A[n,k] * B[m,k]^T  (rows of B as columns)
template <class S>
Tensor<S> matmul_nt(const Tensor<S>& a, const Tensor<S>& b) {
  require_rank(a, 2, "matmul_nt");
  require_rank(b, 2, "matmul_nt");
  const int n = a.extent(0), k = a.extent(1), m = b.extent(0);
  if (b.extent(1) != k)
    throw std::invalid_argument("matmul_nt: inner extents differ " + shape_str(a.shape()) + " " +
                                shape_str(b.shape()));
  auto out = Tensor<S>::make({n, m}, detail::tracking<S>({&a, &b}));
  auto ov = out.mutable_value();
  auto av = a.value(), bv = b.value();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) {
      const S* arow = &av[static_cast<size_t>(i) * k];
      const S* brow = &bv[static_cast<size_t>(j) * k];
      S s = 0;
      for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
      ov[static_cast<size_t>(i) * m + j] = s;
    }
  out.check_finite("matmul_nt");
  detail::record(out, {&a, &b}, [o = out.node().get(), an = a.node(), bn = b.node(), n, k, m] {
    an->ensure_grad();
    bn->ensure_grad();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) {
        const S g = o->grad[static_cast<size_t>(i) * m + j];
        if (g == S(0)) continue;
        S* arow = &an->grad[static_cast<size_t>(i) * k];
        S* brow = &bn->grad[static_cast<size_t>(j) * k];
        const S* av2 = &an->value[static_cast<size_t>(i) * k];
        const S* bv2 = &bn->value[static_cast<size_t>(j) * k];
        for (int p = 0; p < k; ++p) {
          arow[p] += g * bv2[p];
          brow[p] += g * av2[p];
        }
      }
  });
  return out;
}

template <class S>
Tensor<S> transpose(const Tensor<S>& a) {
  require_rank(a, 2, "transpose");
  const int n = a.extent(0), m = a.extent(1);
  auto out = Tensor<S>::make({m, n}, detail::tracking<S>({&a}));
  auto ov = out.mutable_value();
  auto av = a.value();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j)
      ov[static_cast<size_t>(j) * n + i] = av[static_cast<size_t>(i) * m + j];
  detail::record(out, {&a}, [o = out.node().get(), an = a.node(), n, m] {
    an->ensure_grad();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j)
        an->grad[static_cast<size_t>(i) * m + j] += o->grad[static_cast<size_t>(j) * n + i];
  });
  return out;
}

// Broadcast add of a row vector: x[n,d] + b[d]
template <class S>
Tensor<S> add_rowwise(const Tensor<S>& x, const Tensor<S>& b) {
  require_rank(x, 2, "add_rowwise");
  require_rank(b, 1, "add_rowwise");
  const int n = x.extent(0), d = x.extent(1);
  if (b.extent(0) != d) throw std::invalid_argument("add_rowwise: vector length mismatch");
  auto out = Tensor<S>::make({n, d}, detail::tracking<S>({&x, &b}));
  auto ov = out.mutable_value();
  auto xv = x.value(), bv = b.value();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j)
      ov[static_cast<size_t>(i) * d + j] = xv[static_cast<size_t>(i) * d + j] + bv[j];
  out.check_finite("add_rowwise");
  detail::record(out, {&x, &b}, [o = out.node().get(), xn = x.node(), bn = b.node(), n, d] {
    xn->ensure_grad();
    bn->ensure_grad();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) {
        const S g = o->grad[static_cast<size_t>(i) * d + j];
        xn->grad[static_cast<size_t>(i) * d + j] += g;
        bn->grad[j] += g;
      }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> reshape(const Tensor<S>& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw std::invalid_argument("reshape: element count mismatch " + shape_str(a.shape()) +
                                " -> " + shape_str(shape));
  auto out = Tensor<S>::make(std::move(shape), detail::tracking<S>({&a}));
  auto ov = out.mutable_value();
  auto av = a.value();
  std::copy(av.begin(), av.end(), ov.begin());
  detail::record(out, {&a}, [o = out.node().get(), an = a.node()] {
    an->ensure_grad();
    for (size_t i = 0; i < o->grad.size(); ++i) an->grad[i] += o->grad[i];
  });
  return out;
}

template <class S>
Tensor<S> slice_rows(const Tensor<S>& a, int row0, int nrows) {
  require_rank(a, 2, "slice_rows");
  const int n = a.extent(0), d = a.extent(1);
  if (row0 < 0 || nrows < 0 || row0 + nrows > n)
    throw std::invalid_argument("slice_rows: range out of bounds");
  auto out = Tensor<S>::make({nrows, d}, detail::tracking<S>({&a}));
  auto ov = out.mutable_value();
  auto av = a.value();
  std::copy(av.begin() + static_cast<size_t>(row0) * d,
            av.begin() + static_cast<size_t>(row0 + nrows) * d, ov.begin());
  detail::record(out, {&a}, [o = out.node().get(), an = a.node(), row0, d] {
    an->ensure_grad();
    for (size_t i = 0; i < o->grad.size(); ++i)
      an->grad[static_cast<size_t>(row0) * d + i] += o->grad[i];
  });
  return out;
}

template <class S>
Tensor<S> slice_cols(const Tensor<S>& a, int col0, int ncols) {
  require_rank(a, 2, "slice_cols");
  const int n = a.extent(0), d = a.extent(1);
  if (col0 < 0 || ncols < 0 || col0 + ncols > d)
    throw std::invalid_argument("slice_cols: range out of bounds");
  auto out = Tensor<S>::make({n, ncols}, detail::tracking<S>({&a}));
  auto ov = out.mutable_value();
  auto av = a.value();
  for (int i = 0; i < n; ++i)
    std::copy(av.begin() + static_cast<size_t>(i) * d + col0,
              av.begin() + static_cast<size_t>(i) * d + col0 + ncols,
              ov.begin() + static_cast<size_t>(i) * ncols);
  detail::record(out, {&a}, [o = out.node().get(), an = a.node(), col0, n, d, ncols] {
    an->ensure_grad();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < ncols; ++j)
        an->grad[static_cast<size_t>(i) * d + col0 + j] +=
            o->grad[static_cast<size_t>(i) * ncols + j];
  });
  return out;
}

template <class S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty input");
  const int n = parts[0].extent(0);
  int total = 0;
  bool track = false;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.extent(0) != n) throw std::invalid_argument("concat_cols: row count mismatch");
    total += p.extent(1);
    track = track || (grad_mode_flag() && p.requires_grad());
  }
  auto out = Tensor<S>::make({n, total}, track);
  auto ov = out.mutable_value();
  int off = 0;
  for (const auto& p : parts) {
    const int d = p.extent(1);
    auto pv = p.value();
    for (int i = 0; i < n; ++i)
      std::copy(pv.begin() + static_cast<size_t>(i) * d, pv.begin() + static_cast<size_t>(i + 1) * d,
                ov.begin() + static_cast<size_t>(i) * total + off);
    off += d;
  }
  if (track) {
    auto node = out.node();
    std::vector<int> widths;
    for (const auto& p : parts) {
      node->parents.push_back(p.node());
      widths.push_back(p.extent(1));
    }
    node->backprop = [o = node.get(), widths, n, total] {
      int off2 = 0;
      for (size_t k = 0; k < o->parents.size(); ++k) {
        auto& pn = o->parents[k];
        pn->ensure_grad();
        const int d = widths[k];
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < d; ++j)
            pn->grad[static_cast<size_t>(i) * d + j] +=
                o->grad[static_cast<size_t>(i) * total + off2 + j];
        off2 += d;
      }
    };
  }
  return out;
}

template <class S>
Tensor<S> concat_rows(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty input");
  const int d = parts[0].extent(1);
  int total = 0;
  bool track = false;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_rows");
    if (p.extent(1) != d) throw std::invalid_argument("concat_rows: column count mismatch");
    total += p.extent(0);
    track = track || (grad_mode_flag() && p.requires_grad());
  }
  auto out = Tensor<S>::make({total, d}, track);
  auto ov = out.mutable_value();
  size_t off = 0;
  for (const auto& p : parts) {
    auto pv = p.value();
    std::copy(pv.begin(), pv.end(), ov.begin() + off);
    off += pv.size();
  }
  if (track) {
    auto node = out.node();
    for (const auto& p : parts) node->parents.push_back(p.node());
    node->backprop = [o = node.get()] {
      size_t off2 = 0;
      for (auto& pn : o->parents) {
        pn->ensure_grad();
        for (size_t i = 0; i < pn->grad.size(); ++i) pn->grad[i] += o->grad[off2 + i];
        off2 += pn->grad.size();
      }
    };
  }
  return out;
}

// Stack equal-shape rank-2 tensors into [B, n, d].
template <class S>
Tensor<S> stack0(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw std::invalid_argument("stack0: empty input");
  auto cat = concat_rows(parts);
  return reshape(cat, {static_cast<int>(parts.size()), parts[0].extent(0), parts[0].extent(1)});
}

// Drop the leading axis of a rank-3 tensor at index i: [B,n,d] -> [n,d].
template <class S>
Tensor<S> chip0(const Tensor<S>& a, int i) {
  require_rank(a, 3, "chip0");
  const int b = a.extent(0), n = a.extent(1), d = a.extent(2);
  if (i < 0 || i >= b) throw std::invalid_argument("chip0: index out of range");
  auto flat = reshape(a, {b, n * d});
  return reshape(slice_rows(flat, i, 1), {n, d});
}

// Slice the middle axis of a rank-3 tensor: [B,T,d] -> [B,d] at index t.
template <class S>
Tensor<S> chip1(const Tensor<S>& a, int t) {
  require_rank(a, 3, "chip1");
  const int b = a.extent(0), n = a.extent(1), d = a.extent(2);
  if (t < 0 || t >= n) throw std::invalid_argument("chip1: index out of range");
  auto out = Tensor<S>::make({b, d}, detail::tracking<S>({&a}));
  auto ov = out.mutable_value();
  auto av = a.value();
  for (int i = 0; i < b; ++i)
    std::copy(av.begin() + (static_cast<size_t>(i) * n + t) * d,
              av.begin() + (static_cast<size_t>(i) * n + t + 1) * d,
              ov.begin() + static_cast<size_t>(i) * d);
  detail::record(out, {&a}, [o = out.node().get(), an = a.node(), b, n, d, t] {
    an->ensure_grad();
    for (int i = 0; i < b; ++i)
      for (int j = 0; j < d; ++j)
        an->grad[(static_cast<size_t>(i) * n + t) * d + j] +=
            o->grad[static_cast<size_t>(i) * d + j];
  });
  return out;
}

// Gather rows of x by index; adjoint scatter-adds. Also serves as the
// embedding lookup (x = embedding table).
template <class S>
Tensor<S> take_rows(const Tensor<S>& x, const std::vector<int>& indices) {
  require_rank(x, 2, "take_rows");
  const int n = x.extent(0), d = x.extent(1);
  for (int idx : indices)
    if (idx < 0 || idx >= n) throw std::invalid_argument("take_rows: index out of range");
  auto out = Tensor<S>::make({static_cast<int>(indices.size()), d}, detail::tracking<S>({&x}));
  auto ov = out.mutable_value();
  auto xv = x.value();
  for (size_t i = 0; i < indices.size(); ++i)
    std::copy(xv.begin() + static_cast<size_t>(indices[i]) * d,
              xv.begin() + static_cast<size_t>(indices[i] + 1) * d, ov.begin() + i * d);
  detail::record(out, {&x}, [o = out.node().get(), xn = x.node(), indices, d] {
    xn->ensure_grad();
    for (size_t i = 0; i < indices.size(); ++i)
      for (int j = 0; j < d; ++j)
        xn->grad[static_cast<size_t>(indices[i]) * d + j] +=
            o->grad[i * static_cast<size_t>(d) + j];
  });
  return out;
}

template <class S>
Tensor<S> embedding_lookup(const Tensor<S>& table, const std::vector<int>& indices) {
  return take_rows(table, indices);
}

// Rearranges an [H, W, C] image into one row per non-overlapping P x P
// patch: out[(pr*(W/P) + pc), (py*P + px)*C + c] = x[pr*P + py, pc*P + px, c].
// A bijection on elements, so the adjoint is the inverse scatter.
template <class S>
Tensor<S> patchify(const Tensor<S>& x, int patch) {
  require_rank(x, 3, "patchify");
  const int H = x.extent(0), W = x.extent(1), C = x.extent(2);
  if (patch < 1 || H % patch != 0 || W % patch != 0)
    throw std::invalid_argument("patchify: extents " + shape_str(x.shape()) +
                                " not divisible by patch " + std::to_string(patch));
  const int ph = H / patch, pw = W / patch;
  auto out = Tensor<S>::make({ph * pw, patch * patch * C}, detail::tracking<S>({&x}));
  auto ov = out.mutable_value();
  auto xv = x.value();
  const int cols = patch * patch * C;
  for (int pr = 0; pr < ph; ++pr)
    for (int pc = 0; pc < pw; ++pc)
      for (int py = 0; py < patch; ++py)
        for (int px = 0; px < patch; ++px)
          for (int c = 0; c < C; ++c)
            ov[static_cast<size_t>(pr * pw + pc) * cols + (py * patch + px) * C + c] =
                xv[(static_cast<size_t>(pr * patch + py) * W + (pc * patch + px)) * C + c];
  detail::record(out, {&x}, [o = out.node().get(), xn = x.node(), patch, ph, pw, W, C, cols] {
    xn->ensure_grad();
    for (int pr = 0; pr < ph; ++pr)
      for (int pc = 0; pc < pw; ++pc)
        for (int py = 0; py < patch; ++py)
          for (int px = 0; px < patch; ++px)
            for (int c = 0; c < C; ++c)
              xn->grad[(static_cast<size_t>(pr * patch + py) * W + (pc * patch + px)) * C + c] +=
                  o->grad[static_cast<size_t>(pr * pw + pc) * cols + (py * patch + px) * C + c];
  });
  return out;
}

// Inverse of patchify: rows of per-patch values back to an [H, W, C] image.
template <class S>
Tensor<S> unpatchify(const Tensor<S>& x, int H, int W, int C, int patch) {
  require_rank(x, 2, "unpatchify");
  if (patch < 1 || H % patch != 0 || W % patch != 0)
    throw std::invalid_argument("unpatchify: extents not divisible by patch");
  const int ph = H / patch, pw = W / patch;
  const int cols = patch * patch * C;
  if (x.extent(0) != ph * pw || x.extent(1) != cols)
    throw std::invalid_argument("unpatchify: input " + shape_str(x.shape()) +
                                " does not match target " + std::to_string(H) + "x" +
                                std::to_string(W) + "x" + std::to_string(C));
  auto out = Tensor<S>::make({H, W, C}, detail::tracking<S>({&x}));
  auto ov = out.mutable_value();
  auto xv = x.value();
  for (int pr = 0; pr < ph; ++pr)
    for (int pc = 0; pc < pw; ++pc)
      for (int py = 0; py < patch; ++py)
        for (int px = 0; px < patch; ++px)
          for (int c = 0; c < C; ++c)
            ov[(static_cast<size_t>(pr * patch + py) * W + (pc * patch + px)) * C + c] =
                xv[static_cast<size_t>(pr * pw + pc) * cols + (py * patch + px) * C + c];
  detail::record(out, {&x}, [o = out.node().get(), xn = x.node(), patch, ph, pw, W, C, cols] {
    xn->ensure_grad();
    for (int pr = 0; pr < ph; ++pr)
      for (int pc = 0; pc < pw; ++pc)
        for (int py = 0; py < patch; ++py)
          for (int px = 0; px < patch; ++px)
            for (int c = 0; c < C; ++c)
              xn->grad[static_cast<size_t>(pr * pw + pc) * cols + (py * patch + px) * C + c] +=
                  o->grad[(static_cast<size_t>(pr * patch + py) * W + (pc * patch + px)) * C + c];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> sum_all(const Tensor<S>& a) {
  auto out = Tensor<S>::make({}, detail::tracking<S>({&a}));
  auto av = a.value();
  S s = 0;
  for (S v : av) s += v;
  out.mutable_value()[0] = s;
  out.check_finite("sum_all");
  detail::record(out, {&a}, [o = out.node().get(), an = a.node()] {
    an->ensure_grad();
    const S g = o->grad[0];
    for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += g;
  });
  return out;
}

template <class S>
Tensor<S> mean_all(const Tensor<S>& a) {
  if (a.numel() == 0) throw std::invalid_argument("mean_all: empty tensor");
  return scale(sum_all(a), S(1) / S(a.numel()));
}

// Column means: [n, d] -> [d], mean over the row axis.
template <class S>
Tensor<S> mean_rows(const Tensor<S>& a) {
  require_rank(a, 2, "mean_rows");
  const int n = a.extent(0), d = a.extent(1);
  if (n == 0) throw std::invalid_argument("mean_rows: no rows");
  auto out = Tensor<S>::make({d}, detail::tracking<S>({&a}));
  auto ov = out.mutable_value();
  auto av = a.value();
  for (int j = 0; j < d; ++j) {
    S s = 0;
    for (int i = 0; i < n; ++i) s += av[static_cast<size_t>(i) * d + j];
    ov[j] = s / S(n);
  }
  out.check_finite("mean_rows");
  detail::record(out, {&a}, [o = out.node().get(), an = a.node(), n, d] {
    an->ensure_grad();
    for (int j = 0; j < d; ++j) {
      const S g = o->grad[j] / S(n);
      for (int i = 0; i < n; ++i) an->grad[static_cast<size_t>(i) * d + j] += g;
    }
  });
  return out;
}

template <class S>
Tensor<S> diag_sum(const Tensor<S>& a) {
  require_rank(a, 2, "diag_sum");
  const int n = a.extent(0);
  if (a.extent(1) != n) throw std::invalid_argument("diag_sum: matrix not square");
  auto out = Tensor<S>::make({}, detail::tracking<S>({&a}));
  auto av = a.value();
  S s = 0;
  for (int i = 0; i < n; ++i) s += av[static_cast<size_t>(i) * n + i];
  out.mutable_value()[0] = s;
  out.check_finite("diag_sum");
  detail::record(out, {&a}, [o = out.node().get(), an = a.node(), n] {
    an->ensure_grad();
    const S g = o->grad[0];
    for (int i = 0; i < n; ++i) an->grad[static_cast<size_t>(i) * n + i] += g;
  });
  return out;
}

// Row-wise log-sum-exp with max subtraction: [n,m] -> [n].
template <class S>
Tensor<S> logsumexp_rows(const Tensor<S>& a) {
  require_rank(a, 2, "logsumexp_rows");
  const int n = a.extent(0), m = a.extent(1);
  if (m < 1) throw std::invalid_argument("logsumexp_rows: empty last extent");
  auto out = Tensor<S>::make({n}, detail::tracking<S>({&a}));
  auto ov = out.mutable_value();
  auto av = a.value();
  for (int i = 0; i < n; ++i) {
    const S* row = &av[static_cast<size_t>(i) * m];
    S mx = row[0];
    for (int j = 1; j < m; ++j) mx = std::max(mx, row[j]);
    S s = 0;
    for (int j = 0; j < m; ++j) s += std::exp(row[j] - mx);
    ov[i] = mx + std::log(s);
  }
  out.check_finite("logsumexp_rows");
  detail::record(out, {&a}, [o = out.node().get(), an = a.node(), n, m] {
    an->ensure_grad();
    for (int i = 0; i < n; ++i) {
      const S g = o->grad[i];
      if (g == S(0)) continue;
      const S lse = o->value[i];
      for (int j = 0; j < m; ++j)
        an->grad[static_cast<size_t>(i) * m + j] +=
            g * std::exp(an->value[static_cast<size_t>(i) * m + j] - lse);
    }
  });
  return out;
}

// Row-wise softmax with max subtraction. In causal mode (square input) row i
// attends to columns [0, i]; masked columns are exactly zero and never read.
template <class S>
Tensor<S> softmax_rows(const Tensor<S>& a, bool causal = false) {
  require_rank(a, 2, "softmax_rows");
  const int n = a.extent(0), m = a.extent(1);
  if (m < 1) throw std::invalid_argument("softmax_rows: empty last extent");
  if (causal && n != m) throw std::invalid_argument("softmax_rows: causal mask requires square input");
  auto out = Tensor<S>::make({n, m}, detail::tracking<S>({&a}));
  auto ov = out.mutable_value();
  auto av = a.value();
  for (int i = 0; i < n; ++i) {
    const int lim = causal ? i + 1 : m;
    const S* row = &av[static_cast<size_t>(i) * m];
    S* orow = &ov[static_cast<size_t>(i) * m];
    S mx = row[0];
    for (int j = 1; j < lim; ++j) mx = std::max(mx, row[j]);
    S s = 0;
    for (int j = 0; j < lim; ++j) {
      orow[j] = std::exp(row[j] - mx);
      s += orow[j];
    }
    const S inv = S(1) / s;
    for (int j = 0; j < lim; ++j) orow[j] *= inv;
    for (int j = lim; j < m; ++j) orow[j] = S(0);
  }
  out.check_finite("softmax_rows");
  detail::record(out, {&a}, [o = out.node().get(), an = a.node(), n, m, causal] {
    an->ensure_grad();
    for (int i = 0; i < n; ++i) {
      const int lim = causal ? i + 1 : m;
      const S* y = &o->value[static_cast<size_t>(i) * m];
      const S* gy = &o->grad[static_cast<size_t>(i) * m];
      S dot = 0;
      for (int j = 0; j < lim; ++j) dot += gy[j] * y[j];
      for (int j = 0; j < lim; ++j)
        an->grad[static_cast<size_t>(i) * m + j] += (gy[j] - dot) * y[j];
    }
  });
  return out;
}

// Row-wise L2 normalization; rejects zero-norm rows.
template <class S>
Tensor<S> rows_l2_normalize(const Tensor<S>& a) {
  require_rank(a, 2, "rows_l2_normalize");
  const int n = a.extent(0), d = a.extent(1);
  auto out = Tensor<S>::make({n, d}, detail::tracking<S>({&a}));
  auto ov = out.mutable_value();
  auto av = a.value();
  std::vector<S> norms(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const S* row = &av[static_cast<size_t>(i) * d];
    S s = 0;
    for (int j = 0; j < d; ++j) s += row[j] * row[j];
    const S nrm = std::sqrt(s);
    if (nrm == S(0)) throw std::invalid_argument("rows_l2_normalize: zero-norm row");
    norms[static_cast<size_t>(i)] = nrm;
    for (int j = 0; j < d; ++j) ov[static_cast<size_t>(i) * d + j] = row[j] / nrm;
  }
  out.check_finite("rows_l2_normalize");
  detail::record(out, {&a}, [o = out.node().get(), an = a.node(), n, d, norms] {
    an->ensure_grad();
    for (int i = 0; i < n; ++i) {
      const S* y = &o->value[static_cast<size_t>(i) * d];
      const S* gy = &o->grad[static_cast<size_t>(i) * d];
      S dot = 0;
      for (int j = 0; j < d; ++j) dot += gy[j] * y[j];
      const S inv = S(1) / norms[static_cast<size_t>(i)];
      for (int j = 0; j < d; ++j)
        an->grad[static_cast<size_t>(i) * d + j] += (gy[j] - dot * y[j]) * inv;
    }
  });
  return out;
}

// Per-row standardization followed by affine transform: x[n,d], gamma[d], beta[d].
template <class S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, S eps) {
  require_rank(x, 2, "layer_norm");
  require_rank(gamma, 1, "layer_norm");
  require_rank(beta, 1, "layer_norm");
  const int n = x.extent(0), d = x.extent(1);
  if (d < 1 || gamma.extent(0) != d || beta.extent(0) != d)
    throw std::invalid_argument("layer_norm: parameter length mismatch");
  if (!(eps > S(0))) throw std::invalid_argument("layer_norm: eps must be positive");
  auto out = Tensor<S>::make({n, d}, detail::tracking<S>({&x, &gamma, &beta}));
  auto ov = out.mutable_value();
  auto xv = x.value(), gv = gamma.value(), bv = beta.value();
  std::vector<S> inv_std(static_cast<size_t>(n)), xhat(static_cast<size_t>(n) * d);
  for (int i = 0; i < n; ++i) {
    const S* row = &xv[static_cast<size_t>(i) * d];
    S mean = 0;
    for (int j = 0; j < d; ++j) mean += row[j];
    mean /= S(d);
    S var = 0;
    for (int j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= S(d);
    const S is = S(1) / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(i)] = is;
    for (int j = 0; j < d; ++j) {
      const S xh = (row[j] - mean) * is;
      xhat[static_cast<size_t>(i) * d + j] = xh;
      ov[static_cast<size_t>(i) * d + j] = gv[j] * xh + bv[j];
    }
  }
  out.check_finite("layer_norm");
  detail::record(out, {&x, &gamma, &beta},
                 [o = out.node().get(), xn = x.node(), gn = gamma.node(), bn = beta.node(), n, d,
                  inv_std, xhat] {
                   xn->ensure_grad();
                   gn->ensure_grad();
                   bn->ensure_grad();
                   for (int i = 0; i < n; ++i) {
                     const S* gy = &o->grad[static_cast<size_t>(i) * d];
                     const S* xh = &xhat[static_cast<size_t>(i) * d];
                     S sum_g = 0, sum_gx = 0;
                     for (int j = 0; j < d; ++j) {
                       const S gg = gy[j] * gn->value[j];
                       sum_g += gg;
                       sum_gx += gg * xh[j];
                       gn->grad[j] += gy[j] * xh[j];
                       bn->grad[j] += gy[j];
                     }
                     const S is = inv_std[static_cast<size_t>(i)];
                     for (int j = 0; j < d; ++j) {
                       const S gg = gy[j] * gn->value[j];
                       xn->grad[static_cast<size_t>(i) * d + j] +=
                           (gg - sum_g / S(d) - xh[j] * sum_gx / S(d)) * is;
                     }
                   }
                 });
  return out;
}

// Mean negative log-likelihood over rows of logits, stable via log-sum-exp.
template <class S>
Tensor<S> nll_from_logits(const Tensor<S>& logits, const std::vector<int>& targets) {
  require_rank(logits, 2, "nll_from_logits");
  const int n = logits.extent(0), k = logits.extent(1);
  if (static_cast<int>(targets.size()) != n)
    throw std::invalid_argument("nll_from_logits: target count mismatch");
  for (int t : targets)
    if (t < 0 || t >= k) throw std::invalid_argument("nll_from_logits: target out of range");
  if (n == 0) throw std::invalid_argument("nll_from_logits: no rows");
  auto out = Tensor<S>::make({}, detail::tracking<S>({&logits}));
  auto lv = logits.value();
  std::vector<S> lse(static_cast<size_t>(n));
  S total = 0;
  for (int i = 0; i < n; ++i) {
    const S* row = &lv[static_cast<size_t>(i) * k];
    S mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    S s = 0;
    for (int j = 0; j < k; ++j) s += std::exp(row[j] - mx);
    lse[static_cast<size_t>(i)] = mx + std::log(s);
    total += lse[static_cast<size_t>(i)] - row[targets[static_cast<size_t>(i)]];
  }
  out.mutable_value()[0] = total / S(n);
  out.check_finite("nll_from_logits");
  detail::record(out, {&logits}, [o = out.node().get(), ln = logits.node(), targets, n, k, lse] {
    ln->ensure_grad();
    const S g = o->grad[0] / S(n);
    for (int i = 0; i < n; ++i) {
      const S* row = &ln->value[static_cast<size_t>(i) * k];
      S* grow = &ln->grad[static_cast<size_t>(i) * k];
      for (int j = 0; j < k; ++j) {
        S p = std::exp(row[j] - lse[static_cast<size_t>(i)]);
        grow[j] += g * (p - (j == targets[static_cast<size_t>(i)] ? S(1) : S(0)));
      }
    }
  });
  return out;
}

// Softmax(Q K^T / sqrt(D_k)) V. With causal masking, position i attends to
// positions [0, i] and the masked weights are exact zeros.
template <class S>
Tensor<S> scaled_dot_attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v,
                               bool causal = false) {
  require_rank(q, 2, "scaled_dot_attention");
  require_rank(k, 2, "scaled_dot_attention");
  require_rank(v, 2, "scaled_dot_attention");
  if (q.extent(1) != k.extent(1))
    throw std::invalid_argument("scaled_dot_attention: query/key dims differ");
  if (k.extent(0) != v.extent(0))
    throw std::invalid_argument("scaled_dot_attention: key/value counts differ");
  if (causal && q.extent(0) != k.extent(0))
    throw std::invalid_argument("scaled_dot_attention: causal mask requires equal lengths");
  const S inv_sqrt_d = S(1) / std::sqrt(S(k.extent(1)));
  auto scores = scale(matmul_nt(q, k), inv_sqrt_d);
  auto weights = softmax_rows(scores, causal);
  return matmul(weights, v);
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

// Accumulates gradients for every recorded tensor reachable from `loss`,
// then clears the record (parent links and closures) of the traversed
// intermediates. Leaf gradients persist and add up across calls.
template <class S>
void backward(const Tensor<S>& loss) {
  if (loss.numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
  if (!loss.requires_grad())
    throw std::invalid_argument("backward: loss is not connected to any gradient-requiring tensor");

  // Iterative post-order DFS over parent links.
  std::vector<std::shared_ptr<TensorNode<S>>> order;
  std::unordered_set<const TensorNode<S>*> visited;
  struct Frame {
    std::shared_ptr<TensorNode<S>> node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({loss.node(), 0});
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      auto p = f.node->parents[f.next_parent++];
      if (!visited.count(p.get())) {
        visited.insert(p.get());
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad();
  loss.node()->grad[0] = S(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto& node = *it;
    if (node->backprop) {
      node->ensure_grad();
      node->backprop();
    }
  }
  // Clear the record: traversed intermediates drop their tape links.
  for (auto& node : order) {
    if (node->backprop) {
      node->backprop = nullptr;
      node->parents.clear();
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }
}

}  // namespace sgs

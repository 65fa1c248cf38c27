// Copyright 2026 The omoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal dense-tensor engine with reverse-mode automatic differentiation.
// Row-major contiguous storage, rank 1 and 2, no views: every op copies.
// Graphs are built per forward pass out of shared_ptr nodes; backward walks
// the graph in reverse topological order and accumulates gradients with +=
// so shared parameters (e.g. a router used by every token) work out of the
// box. All tensors in one graph share one scalar type by construction.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "omoe/errors.hpp"

namespace omoe {

enum class Precision { kSingle, kDouble };

inline const char* precision_name(Precision p) {
  return p == Precision::kSingle ? "single" : "double";
}

namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

// Scoped "no tape" region: ops inside produce constant tensors.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

template <typename T>
struct TensorNode {
  std::vector<size_t> shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until backward touches this node
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode<T>>> parents;
  std::function<void(TensorNode<T>&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

inline std::string shape_str(const std::vector<size_t>& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? " x " : "") << s[i];
  os << "]";
  return os.str();
}

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<size_t> shape, bool requires_grad = false) {
    return make_leaf(std::move(shape), T(0), requires_grad);
  }

  static Tensor full(std::vector<size_t> shape, T v, bool requires_grad = false) {
    return make_leaf(std::move(shape), v, requires_grad);
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    Tensor t = make_leaf({1}, v, requires_grad);
    return t;
  }

  static Tensor from_data(std::vector<size_t> shape, std::vector<T> data,
                          bool requires_grad = false) {
    size_t n = 1;
    for (size_t e : shape) {
      if (e == 0) throw ContractError("tensor extents must be positive");
      n *= e;
    }
    if (n != data.size())
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    auto node = std::make_shared<TensorNode<T>>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  bool defined() const { return node_ != nullptr; }
  const std::vector<size_t>& shape() const { return node_->shape; }
  size_t ndim() const { return node_->shape.size(); }
  size_t numel() const { return node_->value.size(); }
  std::vector<T>& values() { return node_->value; }
  const std::vector<T>& values() const { return node_->value; }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  // Leaf-only switch; graph nodes get their flag from their parents.
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }

  bool has_grad() const { return node_ && node_->grad.size() == node_->value.size(); }
  std::vector<T>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  const std::vector<T>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    if (node_) node_->grad.assign(node_->value.size(), T(0));
  }

  T item() const {
    if (numel() != 1) throw ContractError("item() requires a one-element tensor, got " + shape_str(shape()));
    return node_->value[0];
  }

  T at(size_t i) const { return node_->value[i]; }
  T at(size_t r, size_t c) const { return node_->value[r * node_->shape[1] + c]; }

  // Deep copy of the value buffer as a fresh constant leaf.
  Tensor detach_copy(bool requires_grad = false) const {
    return from_data(node_->shape, node_->value, requires_grad);
  }

  std::shared_ptr<TensorNode<T>> node() const { return node_; }
  explicit Tensor(std::shared_ptr<TensorNode<T>> n) : node_(std::move(n)) {}

 private:
  static Tensor make_leaf(std::vector<size_t> shape, T fill, bool requires_grad) {
    size_t n = 1;
    for (size_t e : shape) {
      if (e == 0) throw ContractError("tensor extents must be positive");
      n *= e;
    }
    auto node = std::make_shared<TensorNode<T>>();
    node->shape = std::move(shape);
    node->value.assign(n, fill);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  std::shared_ptr<TensorNode<T>> node_;
};

namespace detail {

template <typename T>
Tensor<T> make_op(std::vector<size_t> shape, std::vector<T> value,
                  std::vector<std::shared_ptr<TensorNode<T>>> parents,
                  std::function<void(TensorNode<T>&)> backward) {
  auto node = std::make_shared<TensorNode<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool rg = false;
  if (grad_mode_flag()) {
    for (const auto& p : parents)
      if (p->requires_grad) {
        rg = true;
        break;
      }
  }
  node->requires_grad = rg;
  if (rg) {
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward);
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shapes disagree: " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and scalar ops

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  auto an = a.node();
  auto bn = b.node();
  return detail::make_op<T>(a.shape(), std::move(out), {an, bn}, [an, bn](TensorNode<T>& n) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) bn->grad[i] += n.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  auto an = a.node();
  auto bn = b.node();
  return detail::make_op<T>(a.shape(), std::move(out), {an, bn}, [an, bn](TensorNode<T>& n) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) bn->grad[i] -= n.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  auto an = a.node();
  auto bn = b.node();
  return detail::make_op<T>(a.shape(), std::move(out), {an, bn}, [an, bn](TensorNode<T>& n) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) bn->grad[i] += n.grad[i] * an->value[i];
    }
  });
}

// Multiply by a compile-time-known constant.
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  std::vector<T> out(a.numel());
  const auto& av = a.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
  auto an = a.node();
  return detail::make_op<T>(a.shape(), std::move(out), {an}, [an, c](TensorNode<T>& n) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i] * c;
  });
}

// v * s where s is a one-element tensor on the tape.
template <typename T>
Tensor<T> mul_by_scalar(const Tensor<T>& v, const Tensor<T>& s) {
  if (s.numel() != 1) throw ContractError("mul_by_scalar: scalar operand must have one element");
  const T sv = s.values()[0];
  std::vector<T> out(v.numel());
  const auto& vv = v.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = vv[i] * sv;
  auto vn = v.node();
  auto sn = s.node();
  return detail::make_op<T>(v.shape(), std::move(out), {vn, sn}, [vn, sn](TensorNode<T>& n) {
    const T sval = sn->value[0];
    if (vn->requires_grad) {
      vn->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) vn->grad[i] += n.grad[i] * sval;
    }
    if (sn->requires_grad) {
      sn->ensure_grad();
      T acc = T(0);
      for (size_t i = 0; i < n.grad.size(); ++i) acc += n.grad[i] * vn->value[i];
      sn->grad[0] += acc;
    }
  });
}

// v / s with s a one-element tensor.
template <typename T>
Tensor<T> div_by_scalar(const Tensor<T>& v, const Tensor<T>& s) {
  if (s.numel() != 1) throw ContractError("div_by_scalar: scalar operand must have one element");
  const T sv = s.values()[0];
  std::vector<T> out(v.numel());
  const auto& vv = v.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = vv[i] / sv;
  auto vn = v.node();
  auto sn = s.node();
  return detail::make_op<T>(v.shape(), std::move(out), {vn, sn}, [vn, sn](TensorNode<T>& n) {
    const T sval = sn->value[0];
    if (vn->requires_grad) {
      vn->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) vn->grad[i] += n.grad[i] / sval;
    }
    if (sn->requires_grad) {
      sn->ensure_grad();
      T acc = T(0);
      for (size_t i = 0; i < n.grad.size(); ++i) acc += n.grad[i] * vn->value[i];
      sn->grad[0] -= acc / (sval * sval);
    }
  });
}

template <typename T>
Tensor<T> sqrt_elem(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  const auto& av = a.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(av[i]);
  auto an = a.node();
  return detail::make_op<T>(a.shape(), std::move(out), {an}, [an](TensorNode<T>& n) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i)
      an->grad[i] += n.grad[i] * T(0.5) / n.value[i];
  });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  const auto& av = a.values();
  for (size_t i = 0; i < out.size(); ++i) {
    const T sig = T(1) / (T(1) + std::exp(-av[i]));
    out[i] = av[i] * sig;
  }
  auto an = a.node();
  return detail::make_op<T>(a.shape(), std::move(out), {an}, [an](TensorNode<T>& n) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) {
      const T x = an->value[i];
      const T sig = T(1) / (T(1) + std::exp(-x));
      an->grad[i] += n.grad[i] * sig * (T(1) + x * (T(1) - sig));
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = T(0);
  for (T v : a.values()) acc += v;
  auto an = a.node();
  return detail::make_op<T>({1}, {acc}, {an}, [an](TensorNode<T>& n) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += n.grad[0];
  });
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
  const T inv = T(1) / static_cast<T>(a.numel());
  T acc = T(0);
  for (T v : a.values()) acc += v;
  acc *= inv;
  auto an = a.node();
  return detail::make_op<T>({1}, {acc}, {an}, [an, inv](TensorNode<T>& n) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += n.grad[0] * inv;
  });
}

// One element of a rank-1 tensor as a scalar tensor on the tape.
template <typename T>
Tensor<T> pick(const Tensor<T>& v, size_t i) {
  if (v.ndim() != 1) throw DimensionError("pick: expects rank-1, got " + shape_str(v.shape()));
  if (i >= v.numel()) throw ContractError("pick: index out of range");
  auto vn = v.node();
  return detail::make_op<T>({1}, {v.values()[i]}, {vn}, [vn, i](TensorNode<T>& n) {
    if (!vn->requires_grad) return;
    vn->ensure_grad();
    vn->grad[i] += n.grad[0];
  });
}

template <typename T>
Tensor<T> dot(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != 1 || b.ndim() != 1)
    throw DimensionError("dot: expects rank-1 operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  detail::check_same_shape(a, b, "dot");
  T acc = T(0);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (size_t i = 0; i < av.size(); ++i) acc += av[i] * bv[i];
  auto an = a.node();
  auto bn = b.node();
  return detail::make_op<T>({1}, {acc}, {an, bn}, [an, bn](TensorNode<T>& n) {
    const T g = n.grad[0];
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += g * bn->value[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < bn->grad.size(); ++i) bn->grad[i] += g * an->value[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != 2 || b.ndim() != 2)
    throw DimensionError("matmul: expects rank-2 operands, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  const size_t m = a.shape()[0], p = a.shape()[1];
  const size_t p2 = b.shape()[0], q = b.shape()[1];
  if (p != p2)
    throw DimensionError("matmul: inner dimensions disagree: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  std::vector<T> out(m * q, T(0));
  const auto& av = a.values();
  const auto& bv = b.values();
  for (size_t i = 0; i < m; ++i)
    for (size_t k = 0; k < p; ++k) {
      const T aik = av[i * p + k];
      for (size_t j = 0; j < q; ++j) out[i * q + j] += aik * bv[k * q + j];
    }
  auto an = a.node();
  auto bn = b.node();
  return detail::make_op<T>({m, q}, std::move(out), {an, bn},
                            [an, bn, m, p, q](TensorNode<T>& n) {
    // dA = dC * B^T, dB = A^T * dC
    if (an->requires_grad) {
      an->ensure_grad();
      // contiguous sweep over a transposed copy of B
      std::vector<T> bt(q * p);
      for (size_t k = 0; k < p; ++k)
        for (size_t j = 0; j < q; ++j) bt[j * p + k] = bn->value[k * q + j];
      for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < q; ++j) {
          const T g = n.grad[i * q + j];
          const T* btj = bt.data() + j * p;
          T* ag = an->grad.data() + i * p;
          for (size_t k = 0; k < p; ++k) ag[k] += g * btj[k];
        }
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < m; ++i)
        for (size_t k = 0; k < p; ++k) {
          const T aik = an->value[i * p + k];
          const T* gr = n.grad.data() + i * q;
          T* bg = bn->grad.data() + k * q;
          for (size_t j = 0; j < q; ++j) bg[j] += aik * gr[j];
        }
    }
  });
}

// y = W x for rank-2 W and rank-1 x.
template <typename T>
Tensor<T> matvec(const Tensor<T>& w, const Tensor<T>& x) {
  if (w.ndim() != 2 || x.ndim() != 1)
    throw DimensionError("matvec: expects matrix and vector, got " + shape_str(w.shape()) +
                         " and " + shape_str(x.shape()));
  const size_t m = w.shape()[0], p = w.shape()[1];
  if (p != x.shape()[0])
    throw DimensionError("matvec: inner dimensions disagree: " + shape_str(w.shape()) + " vs " +
                         shape_str(x.shape()));
  std::vector<T> out(m, T(0));
  const auto& wv = w.values();
  const auto& xv = x.values();
  for (size_t i = 0; i < m; ++i) {
    T acc = T(0);
    for (size_t k = 0; k < p; ++k) acc += wv[i * p + k] * xv[k];
    out[i] = acc;
  }
  auto wn = w.node();
  auto xn = x.node();
  return detail::make_op<T>({m}, std::move(out), {wn, xn}, [wn, xn, m, p](TensorNode<T>& n) {
    if (wn->requires_grad) {
      wn->ensure_grad();
      for (size_t i = 0; i < m; ++i) {
        const T g = n.grad[i];
        for (size_t k = 0; k < p; ++k) wn->grad[i * p + k] += g * xn->value[k];
      }
    }
    if (xn->requires_grad) {
      xn->ensure_grad();
      for (size_t i = 0; i < m; ++i) {
        const T g = n.grad[i];
        for (size_t k = 0; k < p; ++k) xn->grad[k] += g * wn->value[i * p + k];
      }
    }
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.ndim() != 2) throw DimensionError("transpose: expects rank-2, got " + shape_str(a.shape()));
  const size_t m = a.shape()[0], n_cols = a.shape()[1];
  std::vector<T> out(a.numel());
  const auto& av = a.values();
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n_cols; ++j) out[j * m + i] = av[i * n_cols + j];
  auto an = a.node();
  return detail::make_op<T>({n_cols, m}, std::move(out), {an}, [an, m, n_cols](TensorNode<T>& n) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (size_t i = 0; i < m; ++i)
      for (size_t j = 0; j < n_cols; ++j) an->grad[i * n_cols + j] += n.grad[j * m + i];
  });
}

// ---------------------------------------------------------------------------
// Shape surgery (copies; gradients scatter back)

template <typename T>
Tensor<T> slice_row(const Tensor<T>& x, size_t row) {
  if (x.ndim() != 2) throw DimensionError("slice_row: expects rank-2, got " + shape_str(x.shape()));
  const size_t rows = x.shape()[0], cols = x.shape()[1];
  if (row >= rows) throw ContractError("slice_row: row index out of range");
  std::vector<T> out(x.values().begin() + row * cols, x.values().begin() + (row + 1) * cols);
  auto xn = x.node();
  return detail::make_op<T>({cols}, std::move(out), {xn}, [xn, row, cols](TensorNode<T>& n) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (size_t j = 0; j < cols; ++j) xn->grad[row * cols + j] += n.grad[j];
  });
}

template <typename T>
Tensor<T> stack_rows(const std::vector<Tensor<T>>& rows) {
  if (rows.empty()) throw ContractError("stack_rows: needs at least one row");
  const size_t cols = rows[0].numel();
  std::vector<T> out;
  out.reserve(rows.size() * cols);
  std::vector<std::shared_ptr<TensorNode<T>>> parents;
  parents.reserve(rows.size());
  for (const auto& r : rows) {
    if (r.ndim() != 1 || r.numel() != cols)
      throw DimensionError("stack_rows: rows must be rank-1 of equal length");
    out.insert(out.end(), r.values().begin(), r.values().end());
    parents.push_back(r.node());
  }
  auto ps = parents;
  return detail::make_op<T>({rows.size(), cols}, std::move(out), std::move(parents),
                            [ps, cols](TensorNode<T>& n) {
    for (size_t r = 0; r < ps.size(); ++r) {
      if (!ps[r]->requires_grad) continue;
      ps[r]->ensure_grad();
      for (size_t j = 0; j < cols; ++j) ps[r]->grad[j] += n.grad[r * cols + j];
    }
  });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, size_t c0, size_t c1) {
  if (x.ndim() != 2) throw DimensionError("slice_cols: expects rank-2, got " + shape_str(x.shape()));
  const size_t rows = x.shape()[0], cols = x.shape()[1];
  if (c0 >= c1 || c1 > cols) throw ContractError("slice_cols: bad column range");
  const size_t w = c1 - c0;
  std::vector<T> out(rows * w);
  const auto& xv = x.values();
  for (size_t i = 0; i < rows; ++i)
    for (size_t j = 0; j < w; ++j) out[i * w + j] = xv[i * cols + c0 + j];
  auto xn = x.node();
  return detail::make_op<T>({rows, w}, std::move(out), {xn},
                            [xn, rows, cols, c0, w](TensorNode<T>& n) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (size_t i = 0; i < rows; ++i)
      for (size_t j = 0; j < w; ++j) xn->grad[i * cols + c0 + j] += n.grad[i * w + j];
  });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: needs at least one part");
  const size_t rows = parts[0].shape()[0];
  size_t total = 0;
  for (const auto& p : parts) {
    if (p.ndim() != 2 || p.shape()[0] != rows)
      throw DimensionError("concat_cols: parts must be rank-2 with equal row counts");
    total += p.shape()[1];
  }
  std::vector<T> out(rows * total);
  std::vector<std::shared_ptr<TensorNode<T>>> parents;
  size_t off = 0;
  for (const auto& p : parts) {
    const size_t w = p.shape()[1];
    const auto& pv = p.values();
    for (size_t i = 0; i < rows; ++i)
      for (size_t j = 0; j < w; ++j) out[i * total + off + j] = pv[i * w + j];
    parents.push_back(p.node());
    off += w;
  }
  auto ps = parents;
  std::vector<size_t> widths;
  for (const auto& p : parts) widths.push_back(p.shape()[1]);
  return detail::make_op<T>({rows, total}, std::move(out), std::move(parents),
                            [ps, widths, rows, total](TensorNode<T>& n) {
    size_t off2 = 0;
    for (size_t k = 0; k < ps.size(); ++k) {
      const size_t w = widths[k];
      if (ps[k]->requires_grad) {
        ps[k]->ensure_grad();
        for (size_t i = 0; i < rows; ++i)
          for (size_t j = 0; j < w; ++j) ps[k]->grad[i * w + j] += n.grad[i * total + off2 + j];
      }
      off2 += w;
    }
  });
}

// ---------------------------------------------------------------------------
// Softmax, RMS norm, cross-entropy

// Softmax over the last axis (rank-1 whole vector, rank-2 per row),
// stabilized by max subtraction.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  const size_t rows = x.ndim() == 2 ? x.shape()[0] : 1;
  const size_t cols = x.ndim() == 2 ? x.shape()[1] : x.shape()[0];
  const auto& xv = x.values();
  for (T v : xv)
    if (std::isnan(v)) throw NumericError("softmax: NaN in input");
  std::vector<T> out(x.numel());
  for (size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * cols;
    T* o = out.data() + r * cols;
    T mx = in[0];
    for (size_t j = 1; j < cols; ++j) mx = std::max(mx, in[j]);
    T s = T(0);
    for (size_t j = 0; j < cols; ++j) {
      o[j] = std::exp(in[j] - mx);
      s += o[j];
    }
    for (size_t j = 0; j < cols; ++j) o[j] /= s;
  }
  auto xn = x.node();
  return detail::make_op<T>(x.shape(), std::move(out), {xn}, [xn, rows, cols](TensorNode<T>& n) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (size_t r = 0; r < rows; ++r) {
      const T* y = n.value.data() + r * cols;
      const T* dy = n.grad.data() + r * cols;
      T inner = T(0);
      for (size_t j = 0; j < cols; ++j) inner += dy[j] * y[j];
      for (size_t j = 0; j < cols; ++j) xn->grad[r * cols + j] += y[j] * (dy[j] - inner);
    }
  });
}

// RMS norm over the last axis with a frozen or trainable gain vector.
template <typename T>
Tensor<T> rmsnorm(const Tensor<T>& x, const Tensor<T>& w, T eps) {
  const size_t rows = x.ndim() == 2 ? x.shape()[0] : 1;
  const size_t cols = x.ndim() == 2 ? x.shape()[1] : x.shape()[0];
  if (w.ndim() != 1 || w.shape()[0] != cols)
    throw DimensionError("rmsnorm: gain shape " + shape_str(w.shape()) +
                         " does not match feature dim " + std::to_string(cols));
  const auto& xv = x.values();
  const auto& wv = w.values();
  std::vector<T> out(x.numel());
  for (size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * cols;
    T ms = T(0);
    for (size_t j = 0; j < cols; ++j) ms += in[j] * in[j];
    const T rms = std::sqrt(ms / static_cast<T>(cols) + eps);
    for (size_t j = 0; j < cols; ++j) out[r * cols + j] = wv[j] * in[j] / rms;
  }
  auto xn = x.node();
  auto wn = w.node();
  return detail::make_op<T>(x.shape(), std::move(out), {xn, wn},
                            [xn, wn, rows, cols, eps](TensorNode<T>& n) {
    for (size_t r = 0; r < rows; ++r) {
      const T* in = xn->value.data() + r * cols;
      const T* dy = n.grad.data() + r * cols;
      T ms = T(0);
      for (size_t j = 0; j < cols; ++j) ms += in[j] * in[j];
      const T rms = std::sqrt(ms / static_cast<T>(cols) + eps);
      if (xn->requires_grad) {
        xn->ensure_grad();
        T dotwy = T(0);
        for (size_t j = 0; j < cols; ++j) dotwy += dy[j] * wn->value[j] * in[j];
        const T r3 = rms * rms * rms * static_cast<T>(cols);
        for (size_t j = 0; j < cols; ++j)
          xn->grad[r * cols + j] += dy[j] * wn->value[j] / rms - dotwy * in[j] / r3;
      }
      if (wn->requires_grad) {
        wn->ensure_grad();
        for (size_t j = 0; j < cols; ++j) wn->grad[j] += dy[j] * in[j] / rms;
      }
    }
  });
}

// Cross-entropy of one logit vector against an integer target id.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, size_t target) {
  if (logits.ndim() != 1)
    throw DimensionError("cross_entropy: expects rank-1 logits, got " + shape_str(logits.shape()));
  const size_t n = logits.numel();
  if (target >= n) throw ContractError("cross_entropy: target id out of range");
  const auto& lv = logits.values();
  T mx = lv[0];
  for (size_t j = 1; j < n; ++j) mx = std::max(mx, lv[j]);
  T s = T(0);
  for (size_t j = 0; j < n; ++j) s += std::exp(lv[j] - mx);
  const T loss = mx + std::log(s) - lv[target];
  auto ln = logits.node();
  return detail::make_op<T>({1}, {loss}, {ln}, [ln, target, n, mx, s](TensorNode<T>& node) {
    if (!ln->requires_grad) return;
    ln->ensure_grad();
    const T g = node.grad[0];
    for (size_t j = 0; j < n; ++j) {
      const T p = std::exp(ln->value[j] - mx) / s;
      ln->grad[j] += g * (p - (j == target ? T(1) : T(0)));
    }
  });
}

// ---------------------------------------------------------------------------
// Backward

// Reverse-mode sweep from a scalar loss. `seed` is the initial upstream
// gradient (1 by default; micro-batch averaging passes 1/batch).
template <typename T>
void backward(const Tensor<T>& loss, T seed = T(1)) {
  if (loss.numel() != 1)
    throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS for topological order.
  std::vector<TensorNode<T>*> order;
  std::unordered_set<TensorNode<T>*> visited;
  std::vector<std::pair<TensorNode<T>*, size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      TensorNode<T>* p = node->parents[idx++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad();
  loss.node()->grad[0] += seed;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode<T>* node = *it;
    if (node->backward_fn) {
      node->ensure_grad();
      node->backward_fn(*node);
    }
  }
}

// ---------------------------------------------------------------------------
// Finite-difference gradient verification

// Max over coordinates of |analytic - central difference| normalized by
// (|analytic| + |central| + 1e-12). Double precision only.
template <typename F>
double finite_diff_check(F f, const Tensor<double>& x, double eps = 1e-5) {
  if (eps < 1e-7 || eps > 1e-4)
    throw ContractError("finite_diff_check: eps must lie in [1e-7, 1e-4]");
  Tensor<double> leaf = x.detach_copy(/*requires_grad=*/true);
  Tensor<double> loss = f(leaf);
  if (loss.numel() != 1) throw ContractError("finite_diff_check: f must return a scalar");
  backward(loss);
  const std::vector<double> analytic = leaf.grad();

  Tensor<double> probe = x.detach_copy(false);
  double worst = 0.0;
  for (size_t i = 0; i < probe.numel(); ++i) {
    const double orig = probe.values()[i];
    double fp, fm;
    {
      NoGradGuard ng;
      probe.values()[i] = orig + eps;
      fp = f(probe).item();
      probe.values()[i] = orig - eps;
      fm = f(probe).item();
      probe.values()[i] = orig;
    }
    const double numeric = (fp - fm) / (2.0 * eps);
    const double err =
        std::abs(analytic[i] - numeric) / (std::abs(analytic[i]) + std::abs(numeric) + 1e-12);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace omoe

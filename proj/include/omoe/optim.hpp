// Copyright 2026 The omoe Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "omoe/errors.hpp"
#include "omoe/tensor.hpp"

namespace omoe {

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
};

// AdamW with decoupled weight decay. Operates on leaf parameter buffers
// directly; moments are kept per parameter in registration order.
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<NamedParam<T>> params, T lr, T beta1 = T(0.9), T beta2 = T(0.999),
        T eps = T(1e-8), T weight_decay = T(0))
      : params_(std::move(params)),
        lr_(lr),
        beta1_(beta1),
        beta2_(beta2),
        eps_(eps),
        weight_decay_(weight_decay) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i].tensor.numel(), T(0));
      v_[i].assign(params_[i].tensor.numel(), T(0));
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  // Global gradient-norm clipping; 0 disables. Returns the pre-clip norm.
  T clip_grad_norm(T max_norm) {
    T sq = T(0);
    for (auto& p : params_) {
      for (T g : p.tensor.grad()) sq += g * g;
    }
    const T norm = std::sqrt(sq);
    if (max_norm > T(0) && norm > max_norm) {
      const T s = max_norm / norm;
      for (auto& p : params_)
        for (T& g : p.tensor.grad()) g *= s;
    }
    return norm;
  }

  void set_lr(T lr) { lr_ = lr; }
  T lr() const { return lr_; }

  void step() {
    ++t_;
    const T bc1 = T(1) - std::pow(beta1_, static_cast<T>(t_));
    const T bc2 = T(1) - std::pow(beta2_, static_cast<T>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& val = params_[i].tensor.values();
      auto& grad = params_[i].tensor.grad();
      for (size_t j = 0; j < val.size(); ++j) {
        m_[i][j] = beta1_ * m_[i][j] + (T(1) - beta1_) * grad[j];
        v_[i][j] = beta2_ * v_[i][j] + (T(1) - beta2_) * grad[j] * grad[j];
        const T mhat = m_[i][j] / bc1;
        const T vhat = v_[i][j] / bc2;
        val[j] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * val[j]);
      }
    }
  }

  const std::vector<NamedParam<T>>& params() const { return params_; }
  int64_t steps_taken() const { return t_; }

 private:
  std::vector<NamedParam<T>> params_;
  T lr_, beta1_, beta2_, eps_, weight_decay_;
  int64_t t_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

}  // namespace omoe

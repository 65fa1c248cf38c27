// Copyright 2026 The omoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// One low-rank expert: the trainable pair (B, A) with B zero-initialized and
// A Kaiming-uniform, so a fresh expert contributes exactly nothing.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "omoe/errors.hpp"
#include "omoe/rng.hpp"
#include "omoe/tensor.hpp"

namespace omoe {

// i.i.d. uniform on [-bound, bound] with bound = sqrt(6 / fan_in),
// fan_in = second extent. Deterministic per seed.
template <typename T>
Tensor<T> kaiming_uniform_init(std::vector<size_t> shape, uint64_t seed) {
  if (shape.size() != 2) throw ContractError("kaiming_uniform_init: expects a 2-D shape");
  const double bound = std::sqrt(6.0 / static_cast<double>(shape[1]));
  Rng rng(seed);
  std::vector<T> data(shape[0] * shape[1]);
  for (auto& v : data) v = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>::from_data(std::move(shape), std::move(data));
}

template <typename T>
struct LoraExpert {
  Tensor<T> A;  // [r x k_in], trainable
  Tensor<T> B;  // [d x r], trainable, starts at zero
  int rank = 0;
  T alpha = T(1);
  T dropout_p = T(0);
  // false = strict unscaled B A x
  bool alpha_over_r = true;

  static LoraExpert init(size_t d, size_t k_in, int rank, T alpha, T dropout_p,
                         bool alpha_over_r, uint64_t seed) {
    if (rank <= 0) throw ContractError("lora: rank must be positive");
    if (static_cast<size_t>(rank) > std::min(d, k_in))
      throw ContractError("lora: rank " + std::to_string(rank) + " exceeds min(d, k_in) = " +
                          std::to_string(std::min(d, k_in)));
    if (dropout_p < T(0) || dropout_p >= T(1))
      throw ContractError("lora: dropout_p must lie in [0, 1)");
    LoraExpert e;
    e.A = kaiming_uniform_init<T>({static_cast<size_t>(rank), k_in}, seed);
    e.A.set_requires_grad(true);
    e.B = Tensor<T>::zeros({d, static_cast<size_t>(rank)}, /*requires_grad=*/true);
    e.rank = rank;
    e.alpha = alpha;
    e.dropout_p = dropout_p;
    e.alpha_over_r = alpha_over_r;
    return e;
  }

  size_t in_dim() const { return A.shape()[1]; }
  size_t out_dim() const { return B.shape()[0]; }

  T output_scale() const {
    return alpha_over_r ? alpha / static_cast<T>(rank) : T(1);
  }

  // scale * B (A x); inverted dropout on x in training mode only.
  Tensor<T> forward(const Tensor<T>& x, bool training = false, Rng* rng = nullptr) const {
    if (x.ndim() != 1 || x.shape()[0] != in_dim())
      throw DimensionError("lora: input shape " + shape_str(x.shape()) +
                           " does not match expert input dim " + std::to_string(in_dim()));
    Tensor<T> h = maybe_dropout(x, training, rng);
    Tensor<T> low = matvec(A, h);
    Tensor<T> up = matvec(B, low);
    const T s = output_scale();
    return s == T(1) ? up : scale(up, s);
  }

  // Whole-sequence variant: two matmuls instead of 2*seq matvecs. Row t is
  // bitwise equal to forward(row t) when dropout is off.
  Tensor<T> forward_seq(const Tensor<T>& x, bool training = false, Rng* rng = nullptr) const {
    if (x.ndim() != 2 || x.shape()[1] != in_dim())
      throw DimensionError("lora: input shape " + shape_str(x.shape()) +
                           " does not match expert input dim " + std::to_string(in_dim()));
    Tensor<T> h = maybe_dropout(x, training, rng);
    Tensor<T> low = matmul(h, transpose(A));
    Tensor<T> up = matmul(low, transpose(B));
    const T s = output_scale();
    return s == T(1) ? up : scale(up, s);
  }

  Tensor<T> maybe_dropout(const Tensor<T>& x, bool training, Rng* rng) const {
    if (!training || dropout_p <= T(0)) return x;
    if (!rng) throw ContractError("lora: training-mode dropout needs an rng");
    const T keep = T(1) - dropout_p;
    std::vector<T> mask(x.numel());
    for (auto& m : mask) m = (rng->uniform() < static_cast<double>(dropout_p)) ? T(0) : T(1) / keep;
    return mul(x, Tensor<T>::from_data(x.shape(), std::move(mask)));
  }

  // r*k_in + d*r
  size_t count_trainable() const { return A.numel() + B.numel(); }
};

}  // namespace omoe

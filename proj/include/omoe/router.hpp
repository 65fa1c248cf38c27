// Copyright 2026 The omoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Token-to-expert coefficient assignment: soft routing (linear layer +
// softmax), top-k with renormalization, and a router-free uniform mode.

#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "omoe/errors.hpp"
#include "omoe/tensor.hpp"

namespace omoe {

enum class Routing { kSoft, kTopK, kUniform };

inline const char* routing_name(Routing r) {
  switch (r) {
    case Routing::kSoft: return "soft";
    case Routing::kTopK: return "topk";
    case Routing::kUniform: return "uniform";
  }
  return "?";
}

// Indices of the k largest entries; ties keep the lowest index so runs are
// reproducible. Selection happens on values only (no tape).
template <typename T>
std::vector<size_t> topk_indices(const std::vector<T>& g, int k) {
  std::vector<size_t> idx(g.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return g[a] > g[b]; });
  idx.resize(static_cast<size_t>(k));
  std::sort(idx.begin(), idx.end());
  return idx;
}

// Keep the k largest gate values and renormalize them to sum to one.
// k == n is an exact no-op. Gradients flow only through the kept entries:
// the selection mask is constant, the ratio is differentiated exactly.
template <typename T>
Tensor<T> renormalize_topk(const Tensor<T>& g, int k_active) {
  if (g.ndim() != 1) throw DimensionError("renormalize_topk: expects rank-1 gates");
  const int n = static_cast<int>(g.numel());
  if (k_active < 1 || k_active > n)
    throw ContractError("renormalize_topk: k_active " + std::to_string(k_active) +
                        " out of range for " + std::to_string(n) + " experts");
  if (k_active == n) return g;

  const auto idx = topk_indices(g.values(), k_active);
  std::vector<T> mask(g.numel(), T(0));
  for (size_t i : idx) mask[i] = T(1);
  Tensor<T> masked = mul(g, Tensor<T>::from_data(g.shape(), std::move(mask)));
  Tensor<T> total = sum(masked);
  if (total.item() <= T(0))
    throw ContractError("renormalize_topk: selected gate mass is not positive");
  return div_by_scalar(masked, total);
}

template <typename T>
struct RouterState {
  Routing strategy = Routing::kSoft;
  int n_experts = 0;
  int k_active = 0;        // TopK only
  Tensor<T> G;             // [n_experts x d_in]; undefined in Uniform mode

  static RouterState make(Routing strategy, int n_experts, size_t d_in, int k_active,
                          uint64_t seed) {
    if (n_experts < 1) throw ContractError("router: n_experts must be positive");
    RouterState rs;
    rs.strategy = strategy;
    rs.n_experts = n_experts;
    rs.k_active = k_active;
    if (strategy == Routing::kTopK && (k_active < 1 || k_active > n_experts))
      throw ContractError("router: top-k requires 1 <= k_active <= n_experts");
    if (strategy != Routing::kUniform) {
      // small random init keeps early gates near uniform but breaks symmetry
      Rng rng(seed);
      std::vector<T> data(static_cast<size_t>(n_experts) * d_in);
      for (auto& v : data) v = static_cast<T>(0.02 * rng.normal());
      rs.G = Tensor<T>::from_data({static_cast<size_t>(n_experts), d_in}, std::move(data));
      rs.G.set_requires_grad(true);
    }
    return rs;
  }

  // Per-token mixture coefficients; always a probability vector.
  Tensor<T> gate(const Tensor<T>& h) const {
    if (strategy == Routing::kUniform)
      return Tensor<T>::full({static_cast<size_t>(n_experts)}, T(1) / static_cast<T>(n_experts));
    Tensor<T> logits = matvec(G, h);
    for (T v : logits.values())
      if (std::isnan(v)) throw NumericError("router: NaN gate logits");
    Tensor<T> soft = softmax(logits);
    if (strategy == Routing::kTopK) return renormalize_topk(soft, k_active);
    return soft;
  }

  size_t count_trainable() const { return G.defined() && G.requires_grad() ? G.numel() : 0; }
};

}  // namespace omoe

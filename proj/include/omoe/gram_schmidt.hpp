// Copyright 2026 The omoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Per-token Gram-Schmidt orthogonalization of stacked expert representations.
// The modified variant re-projects the running residual against each already
// orthogonalized column; in exact arithmetic this equals the one-shot
// projection sum but it is much better behaved in floating point. The
// backward pass falls out of autodiff over the composed primitives.

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "omoe/errors.hpp"
#include "omoe/tensor.hpp"

namespace omoe {

enum class OrthoMode { kOrthogonal, kOrthonormal, kOff };

inline const char* ortho_mode_name(OrthoMode m) {
  switch (m) {
    case OrthoMode::kOrthogonal: return "orthogonal";
    case OrthoMode::kOrthonormal: return "orthonormal";
    case OrthoMode::kOff: return "off";
  }
  return "?";
}

// Column i is expert i's representation for one token. Requires d >= k,
// the Stiefel shape constraint.
template <typename T>
struct ExpertStack {
  std::vector<Tensor<T>> cols;
  size_t dim = 0;

  static ExpertStack from_columns(std::vector<Tensor<T>> columns) {
    if (columns.empty()) throw ContractError("expert stack: needs at least one column");
    ExpertStack s;
    s.dim = columns[0].numel();
    for (const auto& c : columns) {
      if (c.ndim() != 1 || c.numel() != s.dim)
        throw DimensionError("expert stack: columns must be rank-1 of equal length");
    }
    if (columns.size() > s.dim)
      throw ContractError("expert stack: k = " + std::to_string(columns.size()) +
                          " exceeds d = " + std::to_string(s.dim) + " (Stiefel needs d >= k)");
    s.cols = std::move(columns);
    return s;
  }

  size_t k() const { return cols.size(); }
};

struct GramSchmidtStats {
  int degenerate_columns = 0;
};

// Value-only dry run of modified GS: true if any intermediate residual has
// squared norm below eps. Cheap enough to gate every token.
template <typename T>
bool gram_schmidt_degenerate(const ExpertStack<T>& E, T eps) {
  const size_t k = E.k(), d = E.dim;
  std::vector<std::vector<T>> v(k);
  for (size_t j = 0; j < k; ++j) v[j] = E.cols[j].values();
  for (size_t j = 0; j < k; ++j) {
    for (size_t i = 0; i < j; ++i) {
      T vij = T(0), vii = T(0);
      for (size_t t = 0; t < d; ++t) {
        vij += v[i][t] * v[j][t];
        vii += v[i][t] * v[i][t];
      }
      if (vii < eps) continue;  // column i was already degenerate
      const T c = vij / vii;
      for (size_t t = 0; t < d; ++t) v[j][t] -= c * v[i][t];
    }
    T sq = T(0);
    for (size_t t = 0; t < d; ++t) sq += v[j][t] * v[j][t];
    if (sq < eps) return true;
  }
  return false;
}

// Orthogonal mode leaves column 1 untouched (the output aliases the input
// tensor, so first-column identity is bitwise); every later column has its
// projections onto the previous output columns removed. Orthonormal mode
// additionally rescales each column to unit norm. Degenerate residuals
// (squared norm < eps) pass through raw with a counted flag and are skipped
// as projection bases; Orthonormal raises instead, since a near-zero column
// cannot be normalized.
template <typename T>
ExpertStack<T> gram_schmidt(const ExpertStack<T>& E, OrthoMode mode, T eps = T(1e-8),
                            GramSchmidtStats* stats = nullptr) {
  if (eps <= T(0)) throw ContractError("gram_schmidt: eps must be positive");
  if (mode == OrthoMode::kOff) return E;
  for (const auto& c : E.cols)
    for (T v : c.values())
      if (!std::isfinite(v)) throw NumericError("gram_schmidt: non-finite column entry");

  std::vector<Tensor<T>> out;
  out.reserve(E.k());
  std::vector<bool> usable(E.k(), true);
  for (size_t j = 0; j < E.k(); ++j) {
    Tensor<T> v = E.cols[j];
    for (size_t i = 0; i < j; ++i) {
      if (!usable[i]) continue;
      Tensor<T> num = dot(out[i], v);
      Tensor<T> den = dot(out[i], out[i]);
      v = sub(v, mul_by_scalar(out[i], div_by_scalar(num, den)));
    }
    T sq = T(0);
    for (T x : v.values()) sq += x * x;
    if (sq < eps) {
      if (mode == OrthoMode::kOrthonormal)
        throw NumericError("gram_schmidt: degenerate column " + std::to_string(j) +
                           " cannot be normalized");
      if (stats) ++stats->degenerate_columns;
      usable[j] = false;
      out.push_back(v);  // raw residual, effectively near-zero
      continue;
    }
    if (mode == OrthoMode::kOrthonormal) v = div_by_scalar(v, sqrt_elem(dot(v, v)));
    out.push_back(v);
  }
  ExpertStack<T> result;
  result.dim = E.dim;
  result.cols = std::move(out);
  return result;
}

// Frobenius norm of (E^T E - I_k); zero iff the columns are orthonormal.
// Diagnostic only, computed on values.
template <typename T>
T stiefel_residual(const ExpertStack<T>& E) {
  const size_t k = E.k();
  T acc = T(0);
  for (size_t i = 0; i < k; ++i)
    for (size_t j = 0; j < k; ++j) {
      T g = T(0);
      const auto& ci = E.cols[i].values();
      const auto& cj = E.cols[j].values();
      for (size_t t = 0; t < E.dim; ++t) g += ci[t] * cj[t];
      const T z = g - (i == j ? T(1) : T(0));
      acc += z * z;
    }
  return std::sqrt(acc);
}

}  // namespace omoe

// Copyright 2026 The omoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// The composed adapter layer: frozen base transform plus a router-weighted
// sum of per-token orthogonalized expert outputs. With orthogonalization off
// this is a vanilla MoE-of-LoRA layer; with a single soft-gated expert it
// collapses to plain LoRA.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "omoe/errors.hpp"
#include "omoe/gram_schmidt.hpp"
#include "omoe/lora.hpp"
#include "omoe/router.hpp"
#include "omoe/tensor.hpp"

namespace omoe {

// Pre/post-orthogonalization expert vectors and gates for one token,
// captured in evaluation mode. Values only; metrics always run in double.
struct LayerTapRecord {
  int layer_index = -1;
  std::string target;
  int token_index = -1;
  std::vector<std::vector<double>> pre;   // n_experts x d
  std::vector<std::vector<double>> post;  // n_experts x d
  std::vector<double> gate;               // n_experts
  bool degenerate = false;
};

template <typename T>
struct OmoeLayer {
  int layer_index = -1;
  std::string target;

  Tensor<T> w0;    // [d_out x d_in], frozen
  Tensor<T> w0_t;  // cached transpose for the batched base path, frozen
  std::vector<LoraExpert<T>> experts;
  RouterState<T> router;
  OrthoMode ortho = OrthoMode::kOrthogonal;
  T ortho_eps = T(1e-8);

  // Tokens whose expert stack was degenerate and bypassed orthogonalization
  // (always the case at the all-zero LoRA init).
  mutable int64_t degenerate_tokens = 0;

  // When set, every token's gate vector is also pushed here (on the tape);
  // used by the optional load-balancing penalty.
  mutable std::vector<Tensor<T>>* gate_sink = nullptr;

  static OmoeLayer make(Tensor<T> w0, std::vector<LoraExpert<T>> experts, RouterState<T> router,
                        OrthoMode ortho, T ortho_eps = T(1e-8), int layer_index = -1,
                        std::string target = {}) {
    if (w0.ndim() != 2) throw ContractError("omoe layer: W0 must be rank-2");
    if (experts.empty()) throw ContractError("omoe layer: needs at least one expert");
    const size_t d_out = w0.shape()[0], d_in = w0.shape()[1];
    for (const auto& e : experts) {
      if (e.out_dim() != d_out || e.in_dim() != d_in)
        throw ContractError("omoe layer: expert dims disagree with W0");
    }
    if (static_cast<size_t>(router.n_experts) != experts.size())
      throw ContractError("omoe layer: router expert count disagrees");
    if (ortho != OrthoMode::kOff && experts.size() > d_out)
      throw ContractError("omoe layer: orthogonalization needs d >= n_experts");
    OmoeLayer l;
    w0.set_requires_grad(false);  // base stays frozen, always
    l.w0 = w0;
    {
      NoGradGuard ng;
      l.w0_t = transpose(w0);
    }
    l.experts = std::move(experts);
    l.router = std::move(router);
    l.ortho = ortho;
    l.ortho_eps = ortho_eps;
    l.layer_index = layer_index;
    l.target = std::move(target);
    return l;
  }

  size_t in_dim() const { return w0.shape()[1]; }
  size_t out_dim() const { return w0.shape()[0]; }

  size_t expert_param_count() const {
    size_t n = 0;
    for (const auto& e : experts) n += e.count_trainable();
    return n;
  }
  size_t router_param_count() const { return router.count_trainable(); }

  // Orthogonalize one token's expert columns (bypassing on degeneracy) and
  // combine them under the gate vector: sum_i g_i * E'_i.
  Tensor<T> combine_columns(std::vector<Tensor<T>> raw, const Tensor<T>& g,
                            LayerTapRecord* tap = nullptr) const {
    auto stack = ExpertStack<T>::from_columns(std::move(raw));
    bool bypassed = false;
    ExpertStack<T> ortho_stack;
    if (ortho == OrthoMode::kOff) {
      ortho_stack = stack;
    } else if (gram_schmidt_degenerate(stack, ortho_eps)) {
      ortho_stack = stack;
      bypassed = true;
      ++degenerate_tokens;
    } else {
      ortho_stack = gram_schmidt(stack, ortho, ortho_eps);
    }

    if (gate_sink) gate_sink->push_back(g);
    Tensor<T> corr;
    for (size_t i = 0; i < experts.size(); ++i) {
      Tensor<T> term = mul_by_scalar(ortho_stack.cols[i], pick(g, i));
      corr = corr.defined() ? add(corr, term) : term;
    }

    if (tap) {
      tap->layer_index = layer_index;
      tap->target = target;
      tap->degenerate = bypassed;
      for (size_t i = 0; i < experts.size(); ++i) {
        tap->pre.emplace_back(stack.cols[i].values().begin(), stack.cols[i].values().end());
        tap->post.emplace_back(ortho_stack.cols[i].values().begin(),
                               ortho_stack.cols[i].values().end());
        tap->gate.push_back(static_cast<double>(g.at(i)));
      }
    }
    return corr;
  }

  // sum_i g_i(h) * E'_i(h) for one token. Degenerate stacks bypass the
  // orthogonalization and pass raw expert outputs through (warm start).
  Tensor<T> token_correction(const Tensor<T>& h, bool training, Rng* rng,
                             LayerTapRecord* tap = nullptr) const {
    std::vector<Tensor<T>> raw;
    raw.reserve(experts.size());
    for (const auto& e : experts) raw.push_back(e.forward(h, training, rng));
    return combine_columns(std::move(raw), router.gate(h), tap);
  }

  // W0 h + correction for one token.
  Tensor<T> forward_token(const Tensor<T>& h, bool training = false, Rng* rng = nullptr,
                          LayerTapRecord* tap = nullptr) const {
    if (h.ndim() != 1 || h.shape()[0] != in_dim())
      throw DimensionError("omoe layer: token shape " + shape_str(h.shape()) +
                           " does not match input dim " + std::to_string(in_dim()));
    return add(matvec(w0, h), token_correction(h, training, rng, tap));
  }

  // Sequence path used by the backbone: the frozen base and each expert's
  // low-rank pair run as whole-sequence matmuls; orthogonalization and
  // gating stay per token. Row values are bitwise equal to forward_token
  // when dropout is off. At the zero init every correction is exactly zero,
  // so the output is bit-identical to the base projection.
  Tensor<T> forward_seq(const Tensor<T>& x, bool training = false, Rng* rng = nullptr,
                        std::vector<LayerTapRecord>* taps = nullptr,
                        int64_t tap_budget = 0) const {
    if (x.ndim() != 2 || x.shape()[1] != in_dim())
      throw DimensionError("omoe layer: sequence shape " + shape_str(x.shape()) +
                           " does not match input dim " + std::to_string(in_dim()));
    Tensor<T> base = matmul(x, w0_t);
    const size_t seq = x.shape()[0];

    std::vector<Tensor<T>> expert_rows;  // [seq x d_out] per expert
    expert_rows.reserve(experts.size());
    for (const auto& e : experts) expert_rows.push_back(e.forward_seq(x, training, rng));

    Tensor<T> soft_gates;  // [seq x n] for the learned strategies
    if (router.strategy != Routing::kUniform) soft_gates = softmax(matmul(x, transpose(router.G)));

    std::vector<Tensor<T>> corrections;
    corrections.reserve(seq);
    for (size_t t = 0; t < seq; ++t) {
      std::vector<Tensor<T>> raw;
      raw.reserve(experts.size());
      for (const auto& rows : expert_rows) raw.push_back(slice_row(rows, t));
      Tensor<T> g;
      if (router.strategy == Routing::kUniform) {
        g = Tensor<T>::full({experts.size()}, T(1) / static_cast<T>(experts.size()));
      } else {
        g = slice_row(soft_gates, t);
        if (router.strategy == Routing::kTopK) g = renormalize_topk(g, router.k_active);
      }
      const bool want_tap = taps && static_cast<int64_t>(taps->size()) < tap_budget;
      LayerTapRecord rec;
      corrections.push_back(combine_columns(std::move(raw), g, want_tap ? &rec : nullptr));
      if (want_tap) {
        rec.token_index = static_cast<int>(t);
        taps->push_back(std::move(rec));
      }
    }
    return add(base, stack_rows(corrections));
  }

  // Captures one token's pre/post vectors and gates without touching output.
  LayerTapRecord tap_representations(const Tensor<T>& h) const {
    NoGradGuard ng;
    LayerTapRecord rec;
    (void)forward_token(h, /*training=*/false, nullptr, &rec);
    return rec;
  }
};

struct DiversityReport {
  double mean_abs_cos_pre = 0.0;
  double mean_abs_cos_post = 0.0;
  int64_t pairs = 0;
  int64_t skipped_zero = 0;  // pairs with a (near-)zero vector
};

// Mean |cos| over tokens and expert pairs. Zero vectors are skipped with a
// count rather than poisoning the metric.
inline DiversityReport pairwise_diversity(const std::vector<LayerTapRecord>& records) {
  if (records.empty()) throw ContractError("pairwise_diversity: needs at least one record");
  DiversityReport rep;
  double acc_pre = 0.0, acc_post = 0.0;
  int64_t n_pre = 0, n_post = 0;
  auto abs_cos = [](const std::vector<double>& a, const std::vector<double>& b, bool* ok) {
    double ip = 0.0, na = 0.0, nb = 0.0;
    for (size_t t = 0; t < a.size(); ++t) {
      ip += a[t] * b[t];
      na += a[t] * a[t];
      nb += b[t] * b[t];
    }
    if (na <= 0.0 || nb <= 0.0) {
      *ok = false;
      return 0.0;
    }
    *ok = true;
    return std::abs(ip) / (std::sqrt(na) * std::sqrt(nb));
  };
  for (const auto& r : records) {
    const size_t n = r.pre.size();
    for (size_t i = 0; i < n; ++i)
      for (size_t j = i + 1; j < n; ++j) {
        ++rep.pairs;
        bool ok = false;
        double c = abs_cos(r.pre[i], r.pre[j], &ok);
        if (ok) {
          acc_pre += c;
          ++n_pre;
        } else {
          ++rep.skipped_zero;
        }
        c = abs_cos(r.post[i], r.post[j], &ok);
        if (ok) {
          acc_post += c;
          ++n_post;
        }
      }
  }
  rep.mean_abs_cos_pre = n_pre ? acc_pre / static_cast<double>(n_pre) : 0.0;
  rep.mean_abs_cos_post = n_post ? acc_post / static_cast<double>(n_post) : 0.0;
  return rep;
}

}  // namespace omoe

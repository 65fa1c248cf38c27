// Copyright 2026 The omoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// A small frozen transformer (pre-norm causal attention + gated FFN) that
// provides the seven adapter injection points Q/K/V/O/Up/Down/Gate. Weights
// are deterministic from the config seed and never train; only injected
// adapter layers carry trainable parameters.

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "omoe/errors.hpp"
#include "omoe/omoe_layer.hpp"
#include "omoe/optim.hpp"

namespace omoe {

struct BackboneConfig {
  int n_layers = 6;
  int d_model = 64;
  int n_heads = 4;
  int ffn_mult = 4;
  int vocab_size = 64;
  int max_seq = 32;
  uint64_t seed = 42;

  int ffn_dim() const { return d_model * ffn_mult; }

  void validate() const {
    if (n_layers < 1) throw ConfigError("backbone.n_layers must be positive");
    if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0)
      throw ConfigError("backbone.d_model must be a positive multiple of n_heads");
    if (ffn_mult < 1) throw ConfigError("backbone.ffn_mult must be positive");
    if (vocab_size < 2) throw ConfigError("backbone.vocab_size must be at least 2");
    if (max_seq < 1) throw ConfigError("backbone.max_seq must be positive");
  }
};

enum class Target { kQ, kK, kV, kO, kUp, kDown, kGate };

inline const std::array<Target, 7>& all_targets() {
  static const std::array<Target, 7> t = {Target::kQ,  Target::kK,    Target::kV, Target::kO,
                                          Target::kUp, Target::kDown, Target::kGate};
  return t;
}

inline const char* target_name(Target t) {
  switch (t) {
    case Target::kQ: return "Q";
    case Target::kK: return "K";
    case Target::kV: return "V";
    case Target::kO: return "O";
    case Target::kUp: return "Up";
    case Target::kDown: return "Down";
    case Target::kGate: return "Gate";
  }
  return "?";
}

inline Target target_from_name(const std::string& s) {
  for (Target t : all_targets())
    if (s == target_name(t)) return t;
  throw ConfigError("unknown injection target '" + s + "'");
}

enum class LayerPattern { kAll, kTriangle, kInvTriangle, kDiamond, kBowtie };

inline const char* pattern_name(LayerPattern p) {
  switch (p) {
    case LayerPattern::kAll: return "all";
    case LayerPattern::kTriangle: return "triangle";
    case LayerPattern::kInvTriangle: return "inv_triangle";
    case LayerPattern::kDiamond: return "diamond";
    case LayerPattern::kBowtie: return "bowtie";
  }
  return "?";
}

inline LayerPattern pattern_from_name(const std::string& s) {
  for (LayerPattern p : {LayerPattern::kAll, LayerPattern::kTriangle, LayerPattern::kInvTriangle,
                         LayerPattern::kDiamond, LayerPattern::kBowtie})
    if (s == pattern_name(p)) return p;
  throw ConfigError("unknown layer pattern '" + s + "'");
}

enum class Band { kLow, kMedium, kHigh };

// Thirds rule: low = first ceil(L/3) layers, high = last ceil(L/3),
// medium = the rest. Exact thirds when L is divisible by 3.
inline Band layer_band(int layer, int n_layers) {
  if (layer < 0 || layer >= n_layers) throw ContractError("layer_band: layer index out of range");
  const int third = (n_layers + 2) / 3;
  if (layer < third) return Band::kLow;
  if (layer >= n_layers - third) return Band::kHigh;
  return Band::kMedium;
}

// Whether the adapted layers in `band` run with orthogonalization on.
inline bool pattern_uses_ortho(LayerPattern p, Band b) {
  switch (p) {
    case LayerPattern::kAll: return true;
    case LayerPattern::kTriangle: return b == Band::kLow;
    case LayerPattern::kInvTriangle: return b == Band::kHigh;
    case LayerPattern::kDiamond: return b == Band::kMedium;
    case LayerPattern::kBowtie: return b == Band::kLow || b == Band::kHigh;
  }
  return false;
}

struct InjectionSpec {
  std::set<Target> targets;
  LayerPattern layer_pattern = LayerPattern::kAll;

  void validate() const {
    if (targets.empty()) throw ConfigError("injection.targets must be nonempty");
  }
};

struct AdapterConfig {
  int rank = 16;
  double alpha = 32.0;
  int n_experts = 2;
  Routing routing = Routing::kSoft;
  int k_active = 2;
  OrthoMode ortho = OrthoMode::kOrthogonal;
  double ortho_eps = 1e-8;
  double dropout = 0.05;
  bool alpha_over_r = true;

  void validate() const {
    if (rank < 1) throw ConfigError("adapter.rank must be positive");
    if (alpha <= 0.0) throw ConfigError("adapter.alpha must be positive");
    if (n_experts < 1) throw ConfigError("adapter.n_experts must be positive");
    if (routing == Routing::kTopK && (k_active < 1 || k_active > n_experts))
      throw ConfigError("adapter.k_active must lie in [1, n_experts]");
    if (ortho_eps <= 0.0) throw ConfigError("adapter.ortho_eps must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("adapter.dropout must lie in [0, 1)");
  }
};

// A projection slot: frozen linear base, optionally wrapped by an adapter.
template <typename T>
struct Projection {
  Tensor<T> w;    // [d_out x d_in], frozen (only used when no adapter)
  Tensor<T> w_t;  // cached transpose
  std::unique_ptr<OmoeLayer<T>> adapter;  // owns its own copy of the base when present

  Tensor<T> forward(const Tensor<T>& x, bool training, Rng* rng,
                    std::vector<LayerTapRecord>* taps = nullptr, int64_t tap_budget = 0) const {
    if (adapter) return adapter->forward_seq(x, training, rng, taps, tap_budget);
    return matmul(x, w_t);
  }
};

template <typename T>
struct TransformerBlock {
  Tensor<T> rms_attn_w, rms_ffn_w;  // frozen gains
  Projection<T> q, k, v, o, gate, up, down;

  Projection<T>& slot(Target t) {
    switch (t) {
      case Target::kQ: return q;
      case Target::kK: return k;
      case Target::kV: return v;
      case Target::kO: return o;
      case Target::kUp: return up;
      case Target::kDown: return down;
      case Target::kGate: return gate;
    }
    throw ContractError("bad target");
  }
  const Projection<T>& slot(Target t) const {
    return const_cast<TransformerBlock*>(this)->slot(t);
  }
};

// Where and how taps are collected during a forward pass.
struct TapRequest {
  std::set<int> layers;
  Target target = Target::kDown;
  int64_t tokens_per_layer = 0;
  std::map<int, std::vector<LayerTapRecord>> records;
};

template <typename T>
class Backbone {
 public:
  static Backbone build(const BackboneConfig& cfg) {
    cfg.validate();
    Backbone model;
    model.cfg_ = cfg;
    const size_t d = static_cast<size_t>(cfg.d_model);
    const size_t f = static_cast<size_t>(cfg.ffn_dim());
    const size_t v = static_cast<size_t>(cfg.vocab_size);

    model.embedding_ = gaussian(v, d, 1.0, Rng::mix(cfg.seed, 1));
    model.pos_embedding_ = gaussian(static_cast<size_t>(cfg.max_seq), d, 1.0, Rng::mix(cfg.seed, 2));
    model.lm_head_ = frozen_linear(v, d, Rng::mix(cfg.seed, 3));
    model.final_rms_w_ = Tensor<T>::full({d}, T(1));

    for (int l = 0; l < cfg.n_layers; ++l) {
      TransformerBlock<T> blk;
      blk.rms_attn_w = Tensor<T>::full({d}, T(1));
      blk.rms_ffn_w = Tensor<T>::full({d}, T(1));
      auto seed_for = [&](int role) { return Rng::mix(cfg.seed, 100 + l * 16 + role); };
      blk.q = make_projection(d, d, seed_for(0));
      blk.k = make_projection(d, d, seed_for(1));
      blk.v = make_projection(d, d, seed_for(2));
      blk.o = make_projection(d, d, seed_for(3));
      blk.gate = make_projection(f, d, seed_for(4));
      blk.up = make_projection(f, d, seed_for(5));
      blk.down = make_projection(d, f, seed_for(6));
      model.blocks_.push_back(std::move(blk));
    }
    return model;
  }

  const BackboneConfig& config() const { return cfg_; }
  std::vector<TransformerBlock<T>>& blocks() { return blocks_; }
  const std::vector<TransformerBlock<T>>& blocks() const { return blocks_; }

  // Wrap every listed target projection in adapted layers. Designated
  // pattern bands run with orthogonalization on; the remaining adapted
  // layers are vanilla MoE (orthogonalization off).
  void inject_adapters(const InjectionSpec& spec, const AdapterConfig& acfg, uint64_t seed) {
    spec.validate();
    acfg.validate();
    for (int l = 0; l < cfg_.n_layers; ++l) {
      const bool ortho_on = pattern_uses_ortho(spec.layer_pattern, layer_band(l, cfg_.n_layers));
      const OrthoMode mode = ortho_on ? acfg.ortho : OrthoMode::kOff;
      for (Target t : spec.targets) {
        Projection<T>& slot = blocks_[static_cast<size_t>(l)].slot(t);
        const size_t d_out = slot.w.shape()[0];
        const size_t d_in = slot.w.shape()[1];
        if (mode != OrthoMode::kOff && static_cast<size_t>(acfg.n_experts) > d_out)
          throw ConfigError("adapter.n_experts exceeds output dim of target " +
                            std::string(target_name(t)));
        std::vector<LoraExpert<T>> experts;
        for (int e = 0; e < acfg.n_experts; ++e) {
          experts.push_back(LoraExpert<T>::init(
              d_out, d_in, acfg.rank, static_cast<T>(acfg.alpha), static_cast<T>(acfg.dropout),
              acfg.alpha_over_r, Rng::mix(seed, 1000 + l * 64 + static_cast<int>(t) * 8 + e)));
        }
        auto router = RouterState<T>::make(acfg.routing, acfg.n_experts, d_in, acfg.k_active,
                                           Rng::mix(seed, 5000 + l * 8 + static_cast<int>(t)));
        slot.adapter = std::make_unique<OmoeLayer<T>>(OmoeLayer<T>::make(
            slot.w, std::move(experts), std::move(router), mode, static_cast<T>(acfg.ortho_eps),
            l, target_name(t)));
      }
    }
    injected_ = spec;
    adapter_cfg_ = acfg;
  }

  // Token ids -> logits [seq x vocab].
  Tensor<T> forward(const std::vector<int>& tokens, bool training = false, Rng* rng = nullptr,
                    TapRequest* tap = nullptr) const {
    if (tokens.empty()) throw ContractError("backbone: empty token sequence");
    if (static_cast<int>(tokens.size()) > cfg_.max_seq)
      throw ContractError("backbone: sequence longer than max_seq");
    const size_t seq = tokens.size();
    const size_t d = static_cast<size_t>(cfg_.d_model);

    std::vector<T> hv(seq * d);
    for (size_t t = 0; t < seq; ++t) {
      const int id = tokens[t];
      if (id < 0 || id >= cfg_.vocab_size) throw ContractError("backbone: token id out of range");
      for (size_t j = 0; j < d; ++j)
        hv[t * d + j] = embedding_.at(static_cast<size_t>(id), j) + pos_embedding_.at(t, j);
    }
    Tensor<T> h = Tensor<T>::from_data({seq, d}, std::move(hv));

    for (size_t l = 0; l < blocks_.size(); ++l) {
      const auto& blk = blocks_[l];
      auto run = [&](Target t, const Tensor<T>& x) {
        std::vector<LayerTapRecord>* sink = nullptr;
        int64_t budget = 0;
        if (tap && tap->target == t && tap->layers.count(static_cast<int>(l))) {
          sink = &tap->records[static_cast<int>(l)];
          budget = tap->tokens_per_layer;
        }
        return blk.slot(t).forward(x, training, rng, sink, budget);
      };

      // attention
      Tensor<T> xn = rmsnorm(h, blk.rms_attn_w, T(1e-6));
      Tensor<T> Q = run(Target::kQ, xn);
      Tensor<T> K = run(Target::kK, xn);
      Tensor<T> V = run(Target::kV, xn);
      Tensor<T> attn_out = attention(Q, K, V, seq);
      Tensor<T> o = run(Target::kO, attn_out);
      h = add(h, o);

      // gated FFN
      Tensor<T> fn = rmsnorm(h, blk.rms_ffn_w, T(1e-6));
      Tensor<T> g = run(Target::kGate, fn);
      Tensor<T> u = run(Target::kUp, fn);
      Tensor<T> a = mul(silu(g), u);
      Tensor<T> dproj = run(Target::kDown, a);
      h = add(h, dproj);
    }

    Tensor<T> hn = rmsnorm(h, final_rms_w_, T(1e-6));
    return matmul(hn, lm_head_t());
  }

  std::vector<NamedParam<T>> trainable_params() {
    std::vector<NamedParam<T>> out;
    for (size_t l = 0; l < blocks_.size(); ++l) {
      for (Target t : all_targets()) {
        auto& slot = blocks_[l].slot(t);
        if (!slot.adapter) continue;
        const std::string prefix =
            "layer" + std::to_string(l) + "." + target_name(t) + ".";
        for (size_t e = 0; e < slot.adapter->experts.size(); ++e) {
          out.push_back({prefix + "expert" + std::to_string(e) + ".A",
                         slot.adapter->experts[e].A});
          out.push_back({prefix + "expert" + std::to_string(e) + ".B",
                         slot.adapter->experts[e].B});
        }
        if (slot.adapter->router.count_trainable() > 0)
          out.push_back({prefix + "router.G", slot.adapter->router.G});
      }
    }
    return out;
  }

  size_t expert_param_count() const {
    size_t n = 0;
    for (const auto& blk : blocks_)
      for (Target t : all_targets())
        if (blk.slot(t).adapter) n += blk.slot(t).adapter->expert_param_count();
    return n;
  }
  size_t router_param_count() const {
    size_t n = 0;
    for (const auto& blk : blocks_)
      for (Target t : all_targets())
        if (blk.slot(t).adapter) n += blk.slot(t).adapter->router_param_count();
    return n;
  }
  size_t trainable_param_count() const { return expert_param_count() + router_param_count(); }

  int64_t degenerate_tokens() const {
    int64_t n = 0;
    for (const auto& blk : blocks_)
      for (Target t : all_targets())
        if (blk.slot(t).adapter) n += blk.slot(t).adapter->degenerate_tokens;
    return n;
  }

  // FNV-1a over all frozen weight bytes; used for checkpoint integrity and
  // the frozen-parameter audit during training.
  uint64_t frozen_hash() const {
    uint64_t h = 1469598103934665603ull;
    auto feed = [&h](const Tensor<T>& t) {
      const auto& v = t.values();
      const unsigned char* p = reinterpret_cast<const unsigned char*>(v.data());
      for (size_t i = 0; i < v.size() * sizeof(T); ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
      }
    };
    feed(embedding_);
    feed(pos_embedding_);
    feed(lm_head_);
    feed(final_rms_w_);
    for (const auto& blk : blocks_) {
      feed(blk.rms_attn_w);
      feed(blk.rms_ffn_w);
      for (Target t : all_targets()) {
        const auto& slot = blk.slot(t);
        feed(slot.adapter ? slot.adapter->w0 : slot.w);
      }
    }
    return h;
  }

  const InjectionSpec* injection() const { return injected_ ? &*injected_ : nullptr; }
  const AdapterConfig* adapter_config() const { return adapter_cfg_ ? &*adapter_cfg_ : nullptr; }

 private:
  static Tensor<T> gaussian(size_t rows, size_t cols, double std, uint64_t seed) {
    Rng rng(seed);
    std::vector<T> data(rows * cols);
    for (auto& v : data) v = static_cast<T>(std * rng.normal());
    return Tensor<T>::from_data({rows, cols}, std::move(data));
  }

  static Tensor<T> frozen_linear(size_t d_out, size_t d_in, uint64_t seed) {
    // 1/sqrt(fan_in) keeps the residual stream variance stable
    return gaussian(d_out, d_in, 1.0 / std::sqrt(static_cast<double>(d_in)), seed);
  }

  static Projection<T> make_projection(size_t d_out, size_t d_in, uint64_t seed) {
    Projection<T> p;
    p.w = frozen_linear(d_out, d_in, seed);
    NoGradGuard ng;
    p.w_t = transpose(p.w);
    return p;
  }

  Tensor<T> lm_head_t() const {
    if (!lm_head_t_.defined()) {
      NoGradGuard ng;
      lm_head_t_ = transpose(lm_head_);
    }
    return lm_head_t_;
  }

  // Causal multi-head attention over pre-projected Q, K, V.
  Tensor<T> attention(const Tensor<T>& Q, const Tensor<T>& K, const Tensor<T>& V,
                      size_t seq) const {
    const size_t d = static_cast<size_t>(cfg_.d_model);
    const size_t nh = static_cast<size_t>(cfg_.n_heads);
    const size_t dh = d / nh;

    if (!causal_mask_.defined() || causal_mask_.shape()[0] != seq) {
      std::vector<T> mask(seq * seq, T(0));
      for (size_t i = 0; i < seq; ++i)
        for (size_t j = i + 1; j < seq; ++j) mask[i * seq + j] = T(-1e30);
      causal_mask_ = Tensor<T>::from_data({seq, seq}, std::move(mask));
    }

    std::vector<Tensor<T>> heads;
    heads.reserve(nh);
    for (size_t hd = 0; hd < nh; ++hd) {
      Tensor<T> Qh = slice_cols(Q, hd * dh, (hd + 1) * dh);
      Tensor<T> Kh = slice_cols(K, hd * dh, (hd + 1) * dh);
      Tensor<T> Vh = slice_cols(V, hd * dh, (hd + 1) * dh);
      Tensor<T> scores = scale(matmul(Qh, transpose(Kh)),
                               T(1) / static_cast<T>(std::sqrt(static_cast<double>(dh))));
      scores = add(scores, causal_mask_);
      Tensor<T> probs = softmax(scores);
      heads.push_back(matmul(probs, Vh));
    }
    return concat_cols(heads);
  }

  BackboneConfig cfg_;
  Tensor<T> embedding_;      // [vocab x d_model]
  Tensor<T> pos_embedding_;  // [max_seq x d_model]
  Tensor<T> lm_head_;        // [vocab x d_model]
  mutable Tensor<T> lm_head_t_;
  Tensor<T> final_rms_w_;
  mutable Tensor<T> causal_mask_;
  std::vector<TransformerBlock<T>> blocks_;
  std::optional<InjectionSpec> injected_;
  std::optional<AdapterConfig> adapter_cfg_;
};

}  // namespace omoe

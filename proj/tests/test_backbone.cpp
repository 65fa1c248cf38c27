// Copyright 2026 The omoe Authors
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "omoe/backbone.hpp"

using omoe::AdapterConfig;
using omoe::Backbone;
using omoe::BackboneConfig;
using omoe::Band;
using omoe::InjectionSpec;
using omoe::LayerPattern;
using omoe::Target;
using omoe::Tensor;

namespace {

BackboneConfig tiny_config() {
  BackboneConfig cfg;
  cfg.n_layers = 3;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.ffn_mult = 2;
  cfg.vocab_size = 32;
  cfg.max_seq = 8;
  cfg.seed = 7;
  return cfg;
}

InjectionSpec all_targets_spec(LayerPattern p = LayerPattern::kAll) {
  InjectionSpec spec;
  for (Target t : omoe::all_targets()) spec.targets.insert(t);
  spec.layer_pattern = p;
  return spec;
}

AdapterConfig small_adapter() {
  AdapterConfig a;
  a.rank = 2;
  a.alpha = 4.0;
  a.n_experts = 2;
  a.dropout = 0.0;
  return a;
}

}  // namespace

TEST_CASE("forward: finite logits with correct shape; determinism per seed") {
  auto cfg = tiny_config();
  auto model = Backbone<double>::build(cfg);
  std::vector<int> tokens = {1, 5, 9, 2};
  auto logits = model.forward(tokens);
  CHECK(logits.shape() == std::vector<size_t>{4, 32});
  for (double v : logits.values()) CHECK(std::isfinite(v));

  auto model2 = Backbone<double>::build(cfg);
  auto logits2 = model2.forward(tokens);
  CHECK(logits.values() == logits2.values());

  cfg.seed = 8;
  auto model3 = Backbone<double>::build(cfg);
  auto logits3 = model3.forward(tokens);
  CHECK(logits.values() != logits3.values());
}

TEST_CASE("zero-length sequence raises a contract error") {
  auto model = Backbone<double>::build(tiny_config());
  CHECK_THROWS_AS(model.forward({}), omoe::ContractError);
}

TEST_CASE("invalid dims raise config errors") {
  auto cfg = tiny_config();
  cfg.d_model = 15;  // not divisible by n_heads
  CHECK_THROWS_AS(Backbone<double>::build(cfg), omoe::ConfigError);
  cfg = tiny_config();
  cfg.n_layers = 0;
  CHECK_THROWS_AS(Backbone<double>::build(cfg), omoe::ConfigError);
}

TEST_CASE("thirds rule: band mapping for 6 layers") {
  CHECK(omoe::layer_band(0, 6) == Band::kLow);
  CHECK(omoe::layer_band(1, 6) == Band::kLow);
  CHECK(omoe::layer_band(2, 6) == Band::kMedium);
  CHECK(omoe::layer_band(3, 6) == Band::kMedium);
  CHECK(omoe::layer_band(4, 6) == Band::kHigh);
  CHECK(omoe::layer_band(5, 6) == Band::kHigh);
}

TEST_CASE("pattern-to-layer assignment for 6 layers matches the thirds rule") {
  // diamond: layers 2-3 orthogonal (1-indexed 3-4); bowtie: 0,1,4,5
  for (int l = 0; l < 6; ++l) {
    const Band b = omoe::layer_band(l, 6);
    CHECK(omoe::pattern_uses_ortho(LayerPattern::kAll, b));
    CHECK(omoe::pattern_uses_ortho(LayerPattern::kTriangle, b) == (l <= 1));
    CHECK(omoe::pattern_uses_ortho(LayerPattern::kInvTriangle, b) == (l >= 4));
    CHECK(omoe::pattern_uses_ortho(LayerPattern::kDiamond, b) == (l == 2 || l == 3));
    CHECK(omoe::pattern_uses_ortho(LayerPattern::kBowtie, b) == (l <= 1 || l >= 4));
  }
}

TEST_CASE("injection preserves the frozen forward bitwise at init") {
  auto cfg = tiny_config();
  auto base = Backbone<double>::build(cfg);
  std::vector<int> tokens = {3, 1, 4, 1, 5};
  auto base_logits = base.forward(tokens);

  for (auto pattern : {LayerPattern::kAll, LayerPattern::kDiamond, LayerPattern::kBowtie}) {
    auto adapted = Backbone<double>::build(cfg);
    adapted.inject_adapters(all_targets_spec(pattern), small_adapter(), /*seed=*/3);
    auto logits = adapted.forward(tokens);
    CHECK(logits.values() == base_logits.values());
  }
}

TEST_CASE("all pattern: every layer and target orthogonalized; param audit") {
  auto cfg = tiny_config();
  auto model = Backbone<double>::build(cfg);
  auto acfg = small_adapter();
  model.inject_adapters(all_targets_spec(), acfg, 3);

  size_t expected_experts = 0, expected_router = 0;
  for (const auto& blk : model.blocks()) {
    for (Target t : omoe::all_targets()) {
      REQUIRE(blk.slot(t).adapter != nullptr);
      CHECK(blk.slot(t).adapter->ortho == omoe::OrthoMode::kOrthogonal);
      const size_t d_out = blk.slot(t).adapter->w0.shape()[0];
      const size_t d_in = blk.slot(t).adapter->w0.shape()[1];
      expected_experts += 2 * (static_cast<size_t>(acfg.rank) * d_in +
                               d_out * static_cast<size_t>(acfg.rank));
      expected_router += 2 * d_in;
    }
  }
  CHECK(model.expert_param_count() == expected_experts);
  CHECK(model.router_param_count() == expected_router);
  CHECK(model.trainable_param_count() == expected_experts + expected_router);

  auto params = model.trainable_params();
  size_t total = 0;
  for (auto& p : params) total += p.tensor.numel();
  CHECK(total == model.trainable_param_count());
}

TEST_CASE("diamond pattern: medium band orthogonal, rest vanilla") {
  auto cfg = tiny_config();  // 3 layers: bands low/medium/high
  auto model = Backbone<double>::build(cfg);
  model.inject_adapters(all_targets_spec(LayerPattern::kDiamond), small_adapter(), 3);
  CHECK(model.blocks()[0].q.adapter->ortho == omoe::OrthoMode::kOff);
  CHECK(model.blocks()[1].q.adapter->ortho == omoe::OrthoMode::kOrthogonal);
  CHECK(model.blocks()[2].q.adapter->ortho == omoe::OrthoMode::kOff);
}

TEST_CASE("unknown target name raises a config error") {
  CHECK_THROWS_AS(omoe::target_from_name("Query"), omoe::ConfigError);
  CHECK(omoe::target_from_name("Q") == Target::kQ);
}

TEST_CASE("subset injection: only listed targets wrapped") {
  auto model = Backbone<double>::build(tiny_config());
  InjectionSpec spec;
  spec.targets = {Target::kQ, Target::kDown};
  model.inject_adapters(spec, small_adapter(), 3);
  CHECK(model.blocks()[0].q.adapter != nullptr);
  CHECK(model.blocks()[0].down.adapter != nullptr);
  CHECK(model.blocks()[0].k.adapter == nullptr);
  CHECK(model.blocks()[0].up.adapter == nullptr);
}

TEST_CASE("frozen hash is stable across adapter training but differs across seeds") {
  auto cfg = tiny_config();
  auto m1 = Backbone<double>::build(cfg);
  auto h1 = m1.frozen_hash();
  m1.inject_adapters(all_targets_spec(), small_adapter(), 3);
  CHECK(m1.frozen_hash() == h1);  // wrapping does not touch frozen weights

  // perturb a trainable adapter weight: hash unchanged
  m1.blocks()[0].q.adapter->experts[0].B.values()[0] = 123.0;
  CHECK(m1.frozen_hash() == h1);

  cfg.seed = 1234;
  auto m2 = Backbone<double>::build(cfg);
  CHECK(m2.frozen_hash() != h1);
}

TEST_CASE("taps flow through the requested layer and target") {
  auto model = Backbone<double>::build(tiny_config());
  auto acfg = small_adapter();
  model.inject_adapters(all_targets_spec(), acfg, 3);
  // give experts nonzero output so taps are non-degenerate
  for (auto& blk : model.blocks())
    for (Target t : omoe::all_targets()) {
      omoe::Rng rng(11);
      for (auto& v : blk.slot(t).adapter->experts[0].B.values()) v = 0.1 * rng.normal();
      for (auto& v : blk.slot(t).adapter->experts[1].B.values()) v = 0.1 * rng.normal();
    }

  omoe::TapRequest tap;
  tap.layers = {1};
  tap.target = Target::kDown;
  tap.tokens_per_layer = 3;
  omoe::NoGradGuard ng;
  (void)model.forward({1, 2, 3, 4, 5}, false, nullptr, &tap);
  REQUIRE(tap.records.count(1) == 1);
  CHECK(tap.records[1].size() == 3);
  CHECK(tap.records[1][0].pre.size() == 2);
  CHECK(tap.records[1][0].post.size() == 2);
  CHECK(tap.records[1][0].gate.size() == 2);
}

// Copyright 2026 The omoe Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "omoe/backbone.hpp"
#include "omoe/tensor.hpp"

namespace omoe {

struct TrainConfig {
  double lr = 2e-4;
  int batch_size = 16;
  int accumulation_steps = 8;
  int epochs = 2;
  double dropout = 0.05;
  uint64_t seed = 1;
  double weight_decay = 0.0;
  double clip_norm = 1.0;  // 0 disables
  int eval_every = 16;     // optimizer steps between evals
  // cosine decay to zero over the run; constant lr tends to destabilize the
  // adapters late in training at desk scale
  std::string lr_schedule = "cosine";  // cosine | constant
  // Optional router load-balancing penalty for the MixLoRA-style baseline.
  // Not from the source method; off by default and clearly labeled.
  double balance_coef = 0.0;

  void validate() const {
    // lr == 0 is allowed: a documented no-op run used by determinism checks
    if (lr < 0.0) throw ConfigError("train.lr must be nonnegative");
    if (batch_size < 1) throw ConfigError("train.batch_size must be positive");
    if (accumulation_steps < 1) throw ConfigError("train.accumulation_steps must be positive");
    if (epochs < 1) throw ConfigError("train.epochs must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("train.dropout must lie in [0, 1)");
    if (clip_norm < 0.0) throw ConfigError("train.clip_norm must be nonnegative");
    if (eval_every < 1) throw ConfigError("train.eval_every must be positive");
    if (lr_schedule != "cosine" && lr_schedule != "constant")
      throw ConfigError("train.lr_schedule must be 'cosine' or 'constant'");
    if (balance_coef < 0.0) throw ConfigError("train.balance_coef must be nonnegative");
  }
};

struct TaskSuiteConfig {
  std::vector<std::string> families = {"last_token", "first_token", "majority", "pair_parity"};
  int train_size = 256;
  int test_size = 64;
  int seq_len = 8;
  uint64_t seed = 7;

  void validate() const {
    if (families.empty()) throw ConfigError("tasks.families must be nonempty");
    if (families.size() > 8) throw ConfigError("tasks.families supports at most 8 tasks");
    if (train_size < 1 || test_size < 1) throw ConfigError("tasks: split sizes must be positive");
    if (seq_len < 3) throw ConfigError("tasks.seq_len must be at least 3");
  }
};

// Parameter sweep for `compare`: the named adapter field takes each value in
// turn, producing one derived config per value.
struct SweepSpec {
  std::string param;  // rank | n_experts | k_active | routing | ortho_mode
  std::vector<std::string> values;
};

struct RunConfig {
  std::string name = "run";
  BackboneConfig backbone;
  InjectionSpec injection;
  AdapterConfig adapter;
  TrainConfig train;
  TaskSuiteConfig tasks;
  std::string output_dir = "runs/out";
  Precision precision = Precision::kDouble;
  std::optional<SweepSpec> sweep;

  // Cross-field constraints checked before any compute.
  void validate() const;
};

// JSON round trip. Parsing reports the offending field in the error message.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);
std::string run_config_to_json(const RunConfig& cfg);

// Expand a sweep config into one concrete config per value; configs without
// a sweep come back unchanged.
std::vector<RunConfig> expand_sweep(const RunConfig& cfg);

// Environment override: OMOE_PRECISION in {single, double} wins over the
// config field when set.
Precision effective_precision(const RunConfig& cfg);

}  // namespace omoe

// Copyright 2026 The omoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// File-level experiment entry points behind the CLI and the C API: train a
// config into checkpoint + metrics + summary, analyze a checkpoint into tap
// and diversity CSVs, compare configs into a markdown/CSV table, export a
// checkpoint as plot-ready CSV.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "omoe/config.hpp"

namespace omoe {

struct TrainArtifacts {
  std::string checkpoint_path;
  std::string metrics_path;
  std::string summary_path;
};

// Trains per config and writes {model.omoe, metrics.csv, summary.json} into
// out_dir. seed_override >= 0 replaces train.seed.
TrainArtifacts run_train(const RunConfig& cfg, const std::string& out_dir,
                         int64_t seed_override = -1);

struct AnalyzeOptions {
  std::vector<int> layers;   // empty = every layer
  int tokens = 64;           // sampled eval tokens per layer
  std::string target;        // empty = first injected target
  bool pca = false;
};

// Writes vectors_layer{L}.csv, diversity.csv and optionally pca_layer{L}.csv.
void run_analyze(const std::string& checkpoint_path, const AnalyzeOptions& opts,
                 const std::string& out_dir);

struct CompareOptions {
  std::vector<std::string> config_paths;
  std::vector<uint64_t> seeds = {1, 2, 3};
  bool st_mt = false;
};

// Writes comparison.csv and comparison.md. Returns the number of failed
// methods; failures appear in the table as markers instead of numbers.
int run_compare(const CompareOptions& opts, const std::string& out_dir);

// Dumps checkpoint tensors to tensors.csv plus the config snapshot.
void run_export(const std::string& checkpoint_path, const std::string& out_dir);

}  // namespace omoe

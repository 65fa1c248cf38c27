// Copyright 2026 The omoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// omoe command-line tool. Thin front end over the C API in omoe_c.h:
//   omoe train   --config cfg.json [--seed N] [--out DIR]
//   omoe analyze --checkpoint model.omoe [--layers 0,2] [--tokens N]
//                [--target Down] [--pca] [--out DIR]
//   omoe compare --configs a.json b.json [--seeds 1,2,3] [--st-mt] [--out DIR]
//   omoe export  --checkpoint model.omoe [--out DIR]

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "omoe/omoe_c.h"

namespace {

int status_to_exit(omoe_status s, const char* err) {
  if (s == OMOE_OK) return 0;
  std::fprintf(stderr, "error: %s\n", err);
  switch (s) {
    case OMOE_ERR_CONFIG: return 2;
    case OMOE_ERR_NAN: return 3;
    case OMOE_ERR_PARTIAL: return 4;
    default: return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"orthogonal mixture-of-experts experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(omoe_version()));

  // train
  auto* train = app.add_subcommand("train", "train a run config");
  std::string train_config, train_out = "runs/out";
  int64_t train_seed = -1;
  train->add_option("--config", train_config, "run config JSON")->required();
  train->add_option("--seed", train_seed, "override train.seed");
  train->add_option("--out", train_out, "output directory");

  // analyze
  auto* analyze = app.add_subcommand("analyze", "tap expert representations from a checkpoint");
  std::string an_ckpt, an_target, an_out = "analysis";
  std::vector<int32_t> an_layers;
  int32_t an_tokens = 64;
  bool an_pca = false;
  analyze->add_option("--checkpoint", an_ckpt, "checkpoint path")->required();
  analyze->add_option("--layers", an_layers, "layer indices (default: all)")->delimiter(',');
  analyze->add_option("--tokens", an_tokens, "eval tokens per layer");
  analyze->add_option("--target", an_target, "projection to tap (Q,K,V,O,Up,Down,Gate)");
  analyze->add_flag("--pca", an_pca, "also write 2-D PCA projections");
  analyze->add_option("--out", an_out, "output directory");

  // compare
  auto* compare = app.add_subcommand("compare", "run several configs side by side");
  std::vector<std::string> cp_configs;
  std::vector<int64_t> cp_seeds = {1, 2, 3};
  std::string cp_out = "comparison";
  bool cp_st_mt = false;
  compare->add_option("--configs", cp_configs, "run config JSON paths")
      ->required()
      ->expected(-2);
  compare->add_option("--seeds", cp_seeds, "train seeds")->delimiter(',');
  compare->add_flag("--st-mt", cp_st_mt, "add single-task baselines and MT-ST deltas");
  compare->add_option("--out", cp_out, "output directory");

  // export
  auto* exp = app.add_subcommand("export", "dump checkpoint tensors and config as CSV/JSON");
  std::string ex_ckpt, ex_out = "export";
  exp->add_option("--checkpoint", ex_ckpt, "checkpoint path")->required();
  exp->add_option("--out", ex_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  char err[1024] = {0};
  if (*train) {
    const omoe_status s = omoe_train(train_config.c_str(), train_out.c_str(), train_seed,
                                     err, sizeof(err));
    if (s == OMOE_OK) std::printf("wrote %s/{model.omoe,metrics.csv,summary.json}\n",
                                  train_out.c_str());
    return status_to_exit(s, err);
  }
  if (*analyze) {
    const omoe_status s = omoe_analyze(an_ckpt.c_str(), an_layers.empty() ? nullptr : an_layers.data(),
                                       an_layers.size(), an_tokens,
                                       an_target.empty() ? nullptr : an_target.c_str(),
                                       an_pca ? 1 : 0, an_out.c_str(), err, sizeof(err));
    if (s == OMOE_OK) std::printf("wrote tap vectors and diversity report to %s\n", an_out.c_str());
    return status_to_exit(s, err);
  }
  if (*compare) {
    std::vector<const char*> paths;
    for (const auto& p : cp_configs) paths.push_back(p.c_str());
    const omoe_status s = omoe_compare(paths.data(), paths.size(), cp_seeds.data(),
                                       cp_seeds.size(), cp_st_mt ? 1 : 0, cp_out.c_str(),
                                       err, sizeof(err));
    if (s == OMOE_OK || s == OMOE_ERR_PARTIAL)
      std::printf("wrote %s/{comparison.csv,comparison.md}\n", cp_out.c_str());
    return status_to_exit(s, err);
  }
  if (*exp) {
    const omoe_status s = omoe_export(ex_ckpt.c_str(), ex_out.c_str(), err, sizeof(err));
    if (s == OMOE_OK) std::printf("wrote %s/{config.json,tensors.csv}\n", ex_out.c_str());
    return status_to_exit(s, err);
  }
  return 2;
}

// Copyright 2026 The omoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "omoe/omoe_c.h"

#include <cstring>
#include <string>

#include "omoe/checkpoint.hpp"
#include "omoe/errors.hpp"
#include "omoe/runner.hpp"

namespace {

void fill_err(char* err, size_t cap, const char* msg) {
  if (!err || cap == 0) return;
  std::strncpy(err, msg, cap - 1);
  err[cap - 1] = '\0';
}

omoe_status classify(const std::exception& e, char* err, size_t cap) {
  fill_err(err, cap, e.what());
  if (dynamic_cast<const omoe::ConfigError*>(&e)) return OMOE_ERR_CONFIG;
  if (dynamic_cast<const omoe::NanAbort*>(&e)) return OMOE_ERR_NAN;
  if (dynamic_cast<const omoe::IoError*>(&e)) return OMOE_ERR_IO;
  if (dynamic_cast<const omoe::ContractError*>(&e)) return OMOE_ERR_CONFIG;
  if (dynamic_cast<const omoe::DimensionError*>(&e)) return OMOE_ERR_CONFIG;
  return OMOE_ERR_INTERNAL;
}

// Parameter counting from the raw entry names; a router entry ends ".G".
struct ModelCounts {
  int64_t expert = 0;
  int64_t router = 0;
};

ModelCounts count_params(const omoe::RawCheckpoint& ck) {
  ModelCounts c;
  for (const auto& e : ck.entries) {
    const int64_t n = static_cast<int64_t>(e.numel());
    if (e.name.size() >= 2 && e.name.compare(e.name.size() - 2, 2, ".G") == 0)
      c.router += n;
    else
      c.expert += n;
  }
  return c;
}

}  // namespace

struct omoe_model {
  omoe::RawCheckpoint ck;
  ModelCounts counts;
};

extern "C" {

const char* omoe_version(void) { return "0.1.0"; }

omoe_status omoe_train(const char* config_path, const char* out_dir, int64_t seed,
                       char* err, size_t err_cap) {
  if (!config_path || !out_dir) {
    fill_err(err, err_cap, "omoe_train: null argument");
    return OMOE_ERR_CONFIG;
  }
  try {
    omoe::RunConfig cfg = omoe::load_run_config(config_path);
    omoe::run_train(cfg, out_dir, seed);
    return OMOE_OK;
  } catch (const std::exception& e) {
    return classify(e, err, err_cap);
  }
}

omoe_status omoe_analyze(const char* checkpoint_path, const int32_t* layers, size_t n_layers,
                         int32_t tokens, const char* target, int32_t with_pca,
                         const char* out_dir, char* err, size_t err_cap) {
  if (!checkpoint_path || !out_dir) {
    fill_err(err, err_cap, "omoe_analyze: null argument");
    return OMOE_ERR_CONFIG;
  }
  try {
    omoe::AnalyzeOptions opts;
    if (layers)
      for (size_t i = 0; i < n_layers; ++i) opts.layers.push_back(layers[i]);
    opts.tokens = tokens > 0 ? tokens : 64;
    if (target) opts.target = target;
    opts.pca = with_pca != 0;
    omoe::run_analyze(checkpoint_path, opts, out_dir);
    return OMOE_OK;
  } catch (const std::exception& e) {
    return classify(e, err, err_cap);
  }
}

omoe_status omoe_compare(const char* const* config_paths, size_t n_configs,
                         const int64_t* seeds, size_t n_seeds, int32_t st_mt,
                         const char* out_dir, char* err, size_t err_cap) {
  if (!config_paths || !out_dir || n_configs == 0) {
    fill_err(err, err_cap, "omoe_compare: null argument");
    return OMOE_ERR_CONFIG;
  }
  try {
    omoe::CompareOptions opts;
    for (size_t i = 0; i < n_configs; ++i) opts.config_paths.emplace_back(config_paths[i]);
    opts.seeds.clear();
    if (seeds)
      for (size_t i = 0; i < n_seeds; ++i)
        opts.seeds.push_back(static_cast<uint64_t>(seeds[i]));
    else
      opts.seeds = {1, 2, 3};
    opts.st_mt = st_mt != 0;
    const int failures = omoe::run_compare(opts, out_dir);
    if (failures > 0) {
      fill_err(err, err_cap,
               ("compare: " + std::to_string(failures) + " method(s) failed; see table").c_str());
      return OMOE_ERR_PARTIAL;
    }
    return OMOE_OK;
  } catch (const std::exception& e) {
    return classify(e, err, err_cap);
  }
}

omoe_status omoe_export(const char* checkpoint_path, const char* out_dir,
                        char* err, size_t err_cap) {
  if (!checkpoint_path || !out_dir) {
    fill_err(err, err_cap, "omoe_export: null argument");
    return OMOE_ERR_CONFIG;
  }
  try {
    omoe::run_export(checkpoint_path, out_dir);
    return OMOE_OK;
  } catch (const std::exception& e) {
    return classify(e, err, err_cap);
  }
}

omoe_model* omoe_model_open(const char* checkpoint_path, char* err, size_t err_cap) {
  if (!checkpoint_path) {
    fill_err(err, err_cap, "omoe_model_open: null path");
    return nullptr;
  }
  try {
    auto* m = new omoe_model;
    m->ck = omoe::read_raw_checkpoint(checkpoint_path);
    m->counts = count_params(m->ck);
    return m;
  } catch (const std::exception& e) {
    fill_err(err, err_cap, e.what());
    return nullptr;
  }
}

void omoe_model_close(omoe_model* m) { delete m; }

int64_t omoe_model_trainable_params(const omoe_model* m) {
  return m ? m->counts.expert + m->counts.router : 0;
}
int64_t omoe_model_expert_params(const omoe_model* m) { return m ? m->counts.expert : 0; }
int64_t omoe_model_router_params(const omoe_model* m) { return m ? m->counts.router : 0; }

const char* omoe_model_precision(const omoe_model* m) {
  if (!m) return "";
  return omoe::precision_name(m->ck.precision);
}

char* omoe_model_config_json(const omoe_model* m) {
  if (!m) return nullptr;
  char* out = static_cast<char*>(std::malloc(m->ck.config_json.size() + 1));
  if (!out) return nullptr;
  std::memcpy(out, m->ck.config_json.data(), m->ck.config_json.size());
  out[m->ck.config_json.size()] = '\0';
  return out;
}

void omoe_string_free(char* s) { std::free(s); }

}  // extern "C"

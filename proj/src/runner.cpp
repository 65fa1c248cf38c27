// Copyright 2026 The omoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "omoe/runner.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "omoe/analysis.hpp"
#include "omoe/checkpoint.hpp"
#include "omoe/train.hpp"

namespace omoe {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
}

template <typename T>
TrainArtifacts run_train_impl(RunConfig cfg, const std::string& out_dir) {
  auto model = build_model<T>(cfg);
  auto suite = build_tasks(cfg);
  TrainResult res = train(model, suite, cfg.train);

  ensure_dir(out_dir);
  TrainArtifacts art;
  art.checkpoint_path = out_dir + "/model.omoe";
  art.metrics_path = out_dir + "/metrics.csv";
  art.summary_path = out_dir + "/summary.json";

  save_checkpoint(art.checkpoint_path, model, cfg);

  {
    std::ofstream os(art.metrics_path);
    if (!os) throw IoError("cannot open for write: " + art.metrics_path);
    os << "step,loss";
    for (const auto& task : suite.tasks) os << ",acc_" << task.task_id << "_" << task.family;
    os << "\n";
    for (const auto& row : res.history) {
      os << row.step << "," << fmt_double(row.loss);
      if (row.task_acc.empty()) {
        for (size_t t = 0; t < suite.tasks.size(); ++t) os << ",";
      } else {
        for (double a : row.task_acc) os << "," << fmt_double(a);
      }
      os << "\n";
    }
    if (!os) throw IoError("write failed: " + art.metrics_path);
  }

  {
    json summary;
    summary["name"] = cfg.name;
    summary["seed"] = cfg.train.seed;
    summary["precision"] = precision_name(effective_precision(cfg));
    summary["config_fnv1a"] = fnv1a(run_config_to_json(cfg));
    summary["trainable_params"] = res.trainable_params;
    summary["expert_params"] = res.expert_params;
    summary["router_params"] = res.router_params;
    summary["optimizer_steps"] = res.optimizer_steps;
    summary["final_loss"] = res.final_loss;
    summary["degenerate_tokens"] = res.degenerate_tokens;
    json accs = json::object();
    double mean = 0.0;
    for (size_t t = 0; t < suite.tasks.size(); ++t) {
      accs[std::to_string(suite.tasks[t].task_id) + "_" + suite.tasks[t].family] =
          res.final_task_acc[t];
      mean += res.final_task_acc[t];
    }
    summary["task_accuracy"] = accs;
    summary["mean_accuracy"] = mean / static_cast<double>(suite.tasks.size());
    std::ofstream os(art.summary_path);
    if (!os) throw IoError("cannot open for write: " + art.summary_path);
    os << summary.dump(2) << "\n";
    if (!os) throw IoError("write failed: " + art.summary_path);
  }
  return art;
}

// Analyze needs the checkpoint's own precision; a conflicting OMOE_PRECISION
// is an error, not a coercion.
Precision analyze_precision(const RawCheckpoint& ck) {
  if (const char* env = std::getenv("OMOE_PRECISION")) {
    const std::string s(env);
    Precision want = ck.precision;
    if (s == "single")
      want = Precision::kSingle;
    else if (s == "double")
      want = Precision::kDouble;
    else if (!s.empty())
      throw ConfigError("OMOE_PRECISION: must be 'single' or 'double'");
    if (want != ck.precision)
      throw IoError(std::string("checkpoint precision is ") + precision_name(ck.precision) +
                    " but OMOE_PRECISION requests " + precision_name(want) +
                    " (coercion is not supported)");
  }
  return ck.precision;
}

template <typename T>
void run_analyze_impl(const RawCheckpoint& ck, const AnalyzeOptions& opts,
                      const std::string& out_dir) {
  RunConfig cfg = parse_run_config(ck.config_json);
  auto model = build_model<T>(cfg);
  load_checkpoint_into(ck, model);
  auto suite = build_tasks(cfg);

  std::vector<int> layers = opts.layers;
  if (layers.empty())
    for (int l = 0; l < cfg.backbone.n_layers; ++l) layers.push_back(l);
  for (int l : layers)
    if (l < 0 || l >= cfg.backbone.n_layers)
      throw ConfigError("analyze: unknown layer index " + std::to_string(l));

  Target target;
  if (opts.target.empty()) {
    // first injected target in declaration order
    target = *cfg.injection.targets.begin();
    for (Target t : all_targets())
      if (cfg.injection.targets.count(t)) {
        target = t;
        break;
      }
  } else {
    target = target_from_name(opts.target);
    if (!cfg.injection.targets.count(target))
      throw ConfigError("analyze: target " + opts.target + " carries no adapter in this run");
  }

  TapRequest tap;
  tap.layers.insert(layers.begin(), layers.end());
  tap.target = target;
  tap.tokens_per_layer = opts.tokens;

  {
    NoGradGuard ng;
    bool done = false;
    for (const auto& task : suite.tasks) {
      for (const auto& ex : task.test) {
        (void)model.forward(ex.tokens, /*training=*/false, nullptr, &tap);
        done = true;
        for (int l : layers)
          done &= static_cast<int64_t>(tap.records[l].size()) >= opts.tokens;
        if (done) break;
      }
      if (done) break;
    }
  }

  ensure_dir(out_dir);
  std::vector<LayerDiversityRow> div_rows;
  for (int l : layers) {
    const auto& records = tap.records[l];
    if (records.empty()) throw ContractError("analyze: no tokens tapped at layer " + std::to_string(l));
    write_tap_vectors_csv(out_dir + "/vectors_layer" + std::to_string(l) + ".csv", records);
    if (opts.pca) write_tap_pca_csv(out_dir + "/pca_layer" + std::to_string(l) + ".csv", records);
    LayerDiversityRow row;
    row.layer = l;
    row.report = pairwise_diversity(records);
    for (const auto& r : records) row.degenerate_tokens += r.degenerate ? 1 : 0;
    div_rows.push_back(row);
  }
  write_diversity_csv(out_dir + "/diversity.csv", div_rows);
}

std::string cell_params(const ComparisonCell& c) {
  std::ostringstream os;
  os << c.trainable_params << "," << c.expert_params << "," << c.router_params;
  return os.str();
}

}  // namespace

TrainArtifacts run_train(const RunConfig& cfg_in, const std::string& out_dir,
                         int64_t seed_override) {
  RunConfig cfg = cfg_in;
  if (seed_override >= 0) cfg.train.seed = static_cast<uint64_t>(seed_override);
  cfg.validate();
  if (effective_precision(cfg) == Precision::kSingle)
    return run_train_impl<float>(cfg, out_dir);
  return run_train_impl<double>(cfg, out_dir);
}

void run_analyze(const std::string& checkpoint_path, const AnalyzeOptions& opts,
                 const std::string& out_dir) {
  RawCheckpoint ck = read_raw_checkpoint(checkpoint_path);
  if (analyze_precision(ck) == Precision::kSingle)
    run_analyze_impl<float>(ck, opts, out_dir);
  else
    run_analyze_impl<double>(ck, opts, out_dir);
}

int run_compare(const CompareOptions& opts, const std::string& out_dir) {
  if (opts.config_paths.size() < 2)
    throw ConfigError("compare: needs at least two config paths");
  if (opts.seeds.empty()) throw ConfigError("compare: needs at least one seed");

  struct MethodResult {
    std::string name;
    std::vector<ComparisonCell> cells;
    std::string error;  // nonempty on failure
  };
  std::vector<MethodResult> results;

  for (const auto& path : opts.config_paths) {
    std::vector<RunConfig> expanded;
    try {
      expanded = expand_sweep(load_run_config(path));
    } catch (const std::exception& e) {
      results.push_back({path, {}, e.what()});
      continue;
    }
    for (const auto& cfg : expanded) {
      MethodResult mr;
      mr.name = cfg.name;
      try {
        if (effective_precision(cfg) == Precision::kSingle)
          mr.cells = method_cells<float>(cfg, opts.seeds, opts.st_mt);
        else
          mr.cells = method_cells<double>(cfg, opts.seeds, opts.st_mt);
      } catch (const std::exception& e) {
        mr.error = e.what();
      }
      results.push_back(std::move(mr));
    }
  }

  ensure_dir(out_dir);
  int failures = 0;
  {
    std::ofstream os(out_dir + "/comparison.csv");
    if (!os) throw IoError("cannot open for write: " + out_dir + "/comparison.csv");
    os << "method,task,mean_acc,std_acc,n_seeds,trainable_params,expert_params,router_params";
    if (opts.st_mt) os << ",st_mean_acc,mt_minus_st";
    os << ",status\n";
    for (const auto& mr : results) {
      if (!mr.error.empty()) {
        ++failures;
        os << mr.name << ",,,,,,,";
        if (opts.st_mt) os << ",,";
        os << ",FAILED\n";
        continue;
      }
      for (const auto& c : mr.cells) {
        os << c.method << "," << c.task << "," << fmt_double(c.mean_acc) << ","
           << fmt_double(c.std_acc) << "," << c.n_seeds << "," << cell_params(c);
        if (opts.st_mt)
          os << "," << fmt_double(c.st_mean_acc.value_or(0.0)) << ","
             << fmt_double(c.mt_minus_st.value_or(0.0));
        os << ",ok\n";
      }
    }
    if (!os) throw IoError("write failed: comparison.csv");
  }
  {
    std::ofstream os(out_dir + "/comparison.md");
    if (!os) throw IoError("cannot open for write: " + out_dir + "/comparison.md");
    os << "| method | task | acc (mean ± std) | params (expert/router) |";
    if (opts.st_mt) os << " ST acc | MT − ST |";
    os << "\n|---|---|---|---|";
    if (opts.st_mt) os << "---|---|";
    os << "\n";
    char line[256];
    for (const auto& mr : results) {
      if (!mr.error.empty()) {
        os << "| " << mr.name << " | — | FAILED: " << mr.error << " | — |";
        if (opts.st_mt) os << " — | — |";
        os << "\n";
        continue;
      }
      for (const auto& c : mr.cells) {
        std::snprintf(line, sizeof(line), "| %s | %s | %.3f ± %.3f | %zu (%zu/%zu) |",
                      c.method.c_str(), c.task.c_str(), c.mean_acc, c.std_acc,
                      c.trainable_params, c.expert_params, c.router_params);
        os << line;
        if (opts.st_mt) {
          std::snprintf(line, sizeof(line), " %.3f | %+.3f |", c.st_mean_acc.value_or(0.0),
                        c.mt_minus_st.value_or(0.0));
          os << line;
        }
        os << "\n";
      }
    }
  }
  return failures;
}

void run_export(const std::string& checkpoint_path, const std::string& out_dir) {
  RawCheckpoint ck = read_raw_checkpoint(checkpoint_path);
  ensure_dir(out_dir);
  {
    std::ofstream os(out_dir + "/config.json");
    os << ck.config_json << "\n";
    if (!os) throw IoError("write failed: config.json");
  }
  std::ofstream os(out_dir + "/tensors.csv");
  if (!os) throw IoError("cannot open for write: " + out_dir + "/tensors.csv");
  os << "name,dtype,shape,index,value\n";
  for (const auto& e : ck.entries) {
    std::string shape;
    for (size_t i = 0; i < e.dims.size(); ++i)
      shape += (i ? "x" : "") + std::to_string(e.dims[i]);
    const size_t n = e.numel();
    for (size_t i = 0; i < n; ++i) {
      double v;
      if (e.dtype == 0) {
        float f;
        std::memcpy(&f, e.data.data() + i * 4, 4);
        v = static_cast<double>(f);
      } else {
        std::memcpy(&v, e.data.data() + i * 8, 8);
      }
      os << e.name << "," << (e.dtype == 0 ? "f32" : "f64") << "," << shape << "," << i << ","
         << fmt_double(v) << "\n";
    }
  }
  if (!os) throw IoError("write failed: tensors.csv");
}

}  // namespace omoe

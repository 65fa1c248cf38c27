// Copyright 2026 The omoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "omoe/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "omoe/tasks.hpp"

namespace omoe {

using nlohmann::json;

namespace {

Routing routing_from_name(const std::string& s) {
  if (s == "soft") return Routing::kSoft;
  if (s == "topk") return Routing::kTopK;
  if (s == "uniform") return Routing::kUniform;
  throw ConfigError("adapter.routing: unknown strategy '" + s + "'");
}

OrthoMode ortho_from_name(const std::string& s) {
  if (s == "orthogonal") return OrthoMode::kOrthogonal;
  if (s == "orthonormal") return OrthoMode::kOrthonormal;
  if (s == "off") return OrthoMode::kOff;
  throw ConfigError("adapter.ortho_mode: unknown mode '" + s + "'");
}

template <typename T>
T get_or(const json& j, const char* section, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string(section) + "." + key + ": wrong type");
  }
}

}  // namespace

void RunConfig::validate() const {
  backbone.validate();
  injection.validate();
  adapter.validate();
  train.validate();
  tasks.validate();
  if (name.empty()) throw ConfigError("name must be nonempty");
  if (tasks.seq_len > backbone.max_seq)
    throw ConfigError("tasks.seq_len exceeds backbone.max_seq");
  TaskVocab tv{backbone.vocab_size};
  tv.validate();
  if (adapter.rank > backbone.d_model)
    throw ConfigError("adapter.rank exceeds backbone.d_model");
  // d >= n_experts at every orthogonalized target output dim; the smallest
  // output dim among the seven targets is d_model
  if (adapter.ortho != OrthoMode::kOff && adapter.n_experts > backbone.d_model)
    throw ConfigError("adapter.n_experts exceeds the adapter output dim (d_model)");
  if (adapter.routing == Routing::kTopK && adapter.k_active > adapter.n_experts)
    throw ConfigError("adapter.k_active exceeds adapter.n_experts");
  if (sweep) {
    static const std::vector<std::string> allowed = {"rank", "n_experts", "k_active", "routing",
                                                     "ortho_mode"};
    bool ok = false;
    for (const auto& a : allowed) ok |= (sweep->param == a);
    if (!ok) throw ConfigError("sweep.param: unsupported parameter '" + sweep->param + "'");
    if (sweep->values.empty()) throw ConfigError("sweep.values must be nonempty");
  }
}

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }

  RunConfig cfg;
  cfg.name = get_or<std::string>(j, "", "name", cfg.name);

  if (j.contains("backbone")) {
    const auto& b = j.at("backbone");
    cfg.backbone.n_layers = get_or(b, "backbone", "n_layers", cfg.backbone.n_layers);
    cfg.backbone.d_model = get_or(b, "backbone", "d_model", cfg.backbone.d_model);
    cfg.backbone.n_heads = get_or(b, "backbone", "n_heads", cfg.backbone.n_heads);
    cfg.backbone.ffn_mult = get_or(b, "backbone", "ffn_mult", cfg.backbone.ffn_mult);
    cfg.backbone.vocab_size = get_or(b, "backbone", "vocab_size", cfg.backbone.vocab_size);
    cfg.backbone.max_seq = get_or(b, "backbone", "max_seq", cfg.backbone.max_seq);
    cfg.backbone.seed = get_or(b, "backbone", "seed", cfg.backbone.seed);
  }

  if (j.contains("injection")) {
    const auto& inj = j.at("injection");
    if (inj.contains("targets")) {
      cfg.injection.targets.clear();
      for (const auto& t : inj.at("targets"))
        cfg.injection.targets.insert(target_from_name(t.get<std::string>()));
    } else {
      for (Target t : all_targets()) cfg.injection.targets.insert(t);
    }
    cfg.injection.layer_pattern =
        pattern_from_name(get_or<std::string>(inj, "injection", "layer_pattern", "all"));
  } else {
    for (Target t : all_targets()) cfg.injection.targets.insert(t);
  }

  if (j.contains("adapter")) {
    const auto& a = j.at("adapter");
    cfg.adapter.rank = get_or(a, "adapter", "rank", cfg.adapter.rank);
    cfg.adapter.alpha = get_or(a, "adapter", "alpha", cfg.adapter.alpha);
    cfg.adapter.n_experts = get_or(a, "adapter", "n_experts", cfg.adapter.n_experts);
    cfg.adapter.routing =
        routing_from_name(get_or<std::string>(a, "adapter", "routing", "soft"));
    cfg.adapter.k_active = get_or(a, "adapter", "k_active", cfg.adapter.k_active);
    cfg.adapter.ortho =
        ortho_from_name(get_or<std::string>(a, "adapter", "ortho_mode", "orthogonal"));
    cfg.adapter.ortho_eps = get_or(a, "adapter", "ortho_eps", cfg.adapter.ortho_eps);
    cfg.adapter.alpha_over_r = get_or(a, "adapter", "alpha_over_r", cfg.adapter.alpha_over_r);
  }

  if (j.contains("train")) {
    const auto& t = j.at("train");
    cfg.train.lr = get_or(t, "train", "lr", cfg.train.lr);
    cfg.train.batch_size = get_or(t, "train", "batch_size", cfg.train.batch_size);
    cfg.train.accumulation_steps =
        get_or(t, "train", "accumulation_steps", cfg.train.accumulation_steps);
    cfg.train.epochs = get_or(t, "train", "epochs", cfg.train.epochs);
    cfg.train.dropout = get_or(t, "train", "dropout", cfg.train.dropout);
    cfg.train.seed = get_or(t, "train", "seed", cfg.train.seed);
    cfg.train.weight_decay = get_or(t, "train", "weight_decay", cfg.train.weight_decay);
    cfg.train.clip_norm = get_or(t, "train", "clip_norm", cfg.train.clip_norm);
    cfg.train.eval_every = get_or(t, "train", "eval_every", cfg.train.eval_every);
    cfg.train.lr_schedule = get_or<std::string>(t, "train", "lr_schedule", cfg.train.lr_schedule);
    cfg.train.balance_coef = get_or(t, "train", "balance_coef", cfg.train.balance_coef);
  }
  cfg.adapter.dropout = cfg.train.dropout;

  if (j.contains("tasks")) {
    const auto& t = j.at("tasks");
    if (t.contains("families")) {
      cfg.tasks.families.clear();
      for (const auto& f : t.at("families")) cfg.tasks.families.push_back(f.get<std::string>());
    }
    cfg.tasks.train_size = get_or(t, "tasks", "train_size", cfg.tasks.train_size);
    cfg.tasks.test_size = get_or(t, "tasks", "test_size", cfg.tasks.test_size);
    cfg.tasks.seq_len = get_or(t, "tasks", "seq_len", cfg.tasks.seq_len);
    cfg.tasks.seed = get_or(t, "tasks", "seed", cfg.tasks.seed);
  }

  cfg.output_dir = get_or<std::string>(j, "", "output_dir", cfg.output_dir);
  const std::string prec = get_or<std::string>(j, "", "precision", "double");
  if (prec == "single")
    cfg.precision = Precision::kSingle;
  else if (prec == "double")
    cfg.precision = Precision::kDouble;
  else
    throw ConfigError("precision: must be 'single' or 'double'");

  if (j.contains("sweep")) {
    const auto& s = j.at("sweep");
    SweepSpec spec;
    spec.param = get_or<std::string>(s, "sweep", "param", "");
    if (s.contains("values"))
      for (const auto& v : s.at("values"))
        spec.values.push_back(v.is_string() ? v.get<std::string>() : v.dump());
    cfg.sweep = std::move(spec);
  }

  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string run_config_to_json(const RunConfig& cfg) {
  json j;
  j["name"] = cfg.name;
  j["backbone"] = {{"n_layers", cfg.backbone.n_layers}, {"d_model", cfg.backbone.d_model},
                   {"n_heads", cfg.backbone.n_heads},   {"ffn_mult", cfg.backbone.ffn_mult},
                   {"vocab_size", cfg.backbone.vocab_size}, {"max_seq", cfg.backbone.max_seq},
                   {"seed", cfg.backbone.seed}};
  std::vector<std::string> targets;
  for (Target t : all_targets())
    if (cfg.injection.targets.count(t)) targets.push_back(target_name(t));
  j["injection"] = {{"targets", targets},
                    {"layer_pattern", pattern_name(cfg.injection.layer_pattern)}};
  j["adapter"] = {{"rank", cfg.adapter.rank},
                  {"alpha", cfg.adapter.alpha},
                  {"n_experts", cfg.adapter.n_experts},
                  {"routing", routing_name(cfg.adapter.routing)},
                  {"k_active", cfg.adapter.k_active},
                  {"ortho_mode", ortho_mode_name(cfg.adapter.ortho)},
                  {"ortho_eps", cfg.adapter.ortho_eps},
                  {"alpha_over_r", cfg.adapter.alpha_over_r}};
  j["train"] = {{"lr", cfg.train.lr},
                {"batch_size", cfg.train.batch_size},
                {"accumulation_steps", cfg.train.accumulation_steps},
                {"epochs", cfg.train.epochs},
                {"dropout", cfg.train.dropout},
                {"seed", cfg.train.seed},
                {"weight_decay", cfg.train.weight_decay},
                {"clip_norm", cfg.train.clip_norm},
                {"eval_every", cfg.train.eval_every},
                {"lr_schedule", cfg.train.lr_schedule},
                {"balance_coef", cfg.train.balance_coef}};
  j["tasks"] = {{"families", cfg.tasks.families},
                {"train_size", cfg.tasks.train_size},
                {"test_size", cfg.tasks.test_size},
                {"seq_len", cfg.tasks.seq_len},
                {"seed", cfg.tasks.seed}};
  j["output_dir"] = cfg.output_dir;
  j["precision"] = precision_name(cfg.precision);
  if (cfg.sweep) j["sweep"] = {{"param", cfg.sweep->param}, {"values", cfg.sweep->values}};
  return j.dump(2);
}

std::vector<RunConfig> expand_sweep(const RunConfig& cfg) {
  if (!cfg.sweep) return {cfg};
  std::vector<RunConfig> out;
  for (const auto& value : cfg.sweep->values) {
    RunConfig c = cfg;
    c.sweep.reset();
    if (cfg.sweep->param == "rank") {
      c.adapter.rank = std::stoi(value);
      // keep the paper's alpha/rank ratio when sweeping rank
      c.adapter.alpha = cfg.adapter.alpha / cfg.adapter.rank * c.adapter.rank;
    } else if (cfg.sweep->param == "n_experts") {
      c.adapter.n_experts = std::stoi(value);
      if (c.adapter.routing == Routing::kTopK)
        c.adapter.k_active = std::min(c.adapter.k_active, c.adapter.n_experts);
    } else if (cfg.sweep->param == "k_active") {
      c.adapter.k_active = std::stoi(value);
    } else if (cfg.sweep->param == "routing") {
      c.adapter.routing = routing_from_name(value);
    } else if (cfg.sweep->param == "ortho_mode") {
      c.adapter.ortho = ortho_from_name(value);
    }
    c.name = cfg.name + "-" + cfg.sweep->param + "=" + value;
    c.validate();
    out.push_back(std::move(c));
  }
  return out;
}

Precision effective_precision(const RunConfig& cfg) {
  if (const char* env = std::getenv("OMOE_PRECISION")) {
    const std::string s(env);
    if (s == "single") return Precision::kSingle;
    if (s == "double") return Precision::kDouble;
    if (!s.empty()) throw ConfigError("OMOE_PRECISION: must be 'single' or 'double'");
  }
  return cfg.precision;
}

}  // namespace omoe

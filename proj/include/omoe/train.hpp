// Copyright 2026 The omoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Supervised fine-tuning loop on the synthetic task mixture: AdamW over the
// adapter and router parameters only, gradient accumulation, per-step loss
// history and per-task eval accuracy, all deterministic per seed.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "omoe/backbone.hpp"
#include "omoe/config.hpp"
#include "omoe/optim.hpp"
#include "omoe/tasks.hpp"
#include "omoe/tensor.hpp"

namespace omoe {

template <typename T>
Backbone<T> build_model(const RunConfig& cfg) {
  cfg.validate();
  auto model = Backbone<T>::build(cfg.backbone);
  model.inject_adapters(cfg.injection, cfg.adapter, cfg.train.seed);
  return model;
}

inline TaskSuite build_tasks(const RunConfig& cfg) {
  return make_task_suite(cfg.tasks.families, cfg.tasks.train_size, cfg.tasks.test_size,
                         cfg.tasks.seq_len, cfg.backbone.vocab_size, cfg.tasks.seed);
}

// Mean cross-entropy over the answer positions of a batch, on one tape.
template <typename T>
Tensor<T> sft_loss(const Backbone<T>& model, const std::vector<Example>& batch,
                   bool training = false, Rng* rng = nullptr) {
  if (batch.empty()) throw ContractError("sft_loss: empty batch");
  Tensor<T> total;
  for (const auto& ex : batch) {
    Tensor<T> logits = model.forward(ex.tokens, training, rng);
    Tensor<T> last = slice_row(logits, logits.shape()[0] - 1);
    Tensor<T> loss = cross_entropy(last, static_cast<size_t>(ex.label));
    total = total.defined() ? add(total, loss) : loss;
  }
  return scale(total, T(1) / static_cast<T>(batch.size()));
}

// Exact-match accuracy of the answer token, per task.
template <typename T>
std::vector<double> evaluate(const Backbone<T>& model, const TaskSuite& suite) {
  NoGradGuard ng;
  std::vector<double> accs;
  for (const auto& task : suite.tasks) {
    int64_t hits = 0;
    for (const auto& ex : task.test) {
      Tensor<T> logits = model.forward(ex.tokens, /*training=*/false);
      const size_t last = logits.shape()[0] - 1;
      const size_t vocab = logits.shape()[1];
      size_t best = 0;
      T best_v = logits.at(last, 0);
      for (size_t j = 1; j < vocab; ++j)
        if (logits.at(last, j) > best_v) {
          best_v = logits.at(last, j);
          best = j;
        }
      hits += (static_cast<int>(best) == ex.label);
    }
    accs.push_back(static_cast<double>(hits) / static_cast<double>(task.test.size()));
  }
  return accs;
}

struct MetricRow {
  int64_t step = 0;
  double loss = 0.0;
  std::vector<double> task_acc;  // empty except on eval rows
};

struct TrainResult {
  std::vector<MetricRow> history;
  std::vector<double> final_task_acc;
  double final_loss = 0.0;
  int64_t optimizer_steps = 0;
  int64_t degenerate_tokens = 0;
  size_t trainable_params = 0;
  size_t expert_params = 0;
  size_t router_params = 0;
};

namespace detail {

// Squared coefficient of variation of the mean gate vector; gates sum to one
// per token so the mean of means is exactly 1/n.
template <typename T>
Tensor<T> balance_penalty(const std::vector<Tensor<T>>& gates) {
  const size_t n = gates[0].numel();
  Tensor<T> m = gates[0];
  for (size_t i = 1; i < gates.size(); ++i) m = add(m, gates[i]);
  m = scale(m, T(1) / static_cast<T>(gates.size()));
  Tensor<T> centered = sub(m, Tensor<T>::full({n}, T(1) / static_cast<T>(n)));
  return scale(dot(centered, centered), static_cast<T>(n));
}

template <typename T>
std::string grad_norm_diagnostics(const std::vector<NamedParam<T>>& params) {
  // aggregate per layer prefix ("layerN.")
  std::map<std::string, double> sq;
  for (const auto& p : params) {
    const auto pos = p.name.find('.');
    const std::string key = pos == std::string::npos ? p.name : p.name.substr(0, pos);
    double s = 0.0;
    if (p.tensor.has_grad())
      for (T g : p.tensor.grad()) s += static_cast<double>(g) * static_cast<double>(g);
    sq[key] += s;
  }
  std::ostringstream os;
  for (const auto& [key, s] : sq) os << " " << key << "=" << std::sqrt(s);
  return os.str();
}

}  // namespace detail

// Runs epochs x steps with gradient accumulation; only adapter and router
// parameters update. Trailing partial accumulation windows are dropped, so
// every optimizer step averages the same number of examples.
template <typename T>
TrainResult train(Backbone<T>& model, const TaskSuite& suite, const TrainConfig& tc) {
  tc.validate();
  auto params = model.trainable_params();
  if (params.empty()) throw ContractError("train: model has no trainable parameters");
  AdamW<T> opt(params, static_cast<T>(tc.lr), T(0.9), T(0.999), T(1e-8),
               static_cast<T>(tc.weight_decay));

  const uint64_t frozen_before = model.frozen_hash();
  std::vector<Example> mixture = suite.mixed_train();
  const int64_t window = static_cast<int64_t>(tc.batch_size) * tc.accumulation_steps;
  if (static_cast<int64_t>(mixture.size()) < window)
    throw ConfigError("train: mixture smaller than one accumulation window");

  // total optimizer steps over the whole run, for the lr schedule
  int64_t total_steps = 0;
  {
    const int64_t micro_batches = static_cast<int64_t>(mixture.size()) / tc.batch_size;
    total_steps = static_cast<int64_t>(tc.epochs) * (micro_batches / tc.accumulation_steps);
  }

  Rng dropout_rng(Rng::mix(tc.seed, 0xD0));
  TrainResult result;
  int64_t opt_step = 0;
  double window_loss = 0.0;
  int64_t window_examples = 0;
  int64_t micro_in_window = 0;

  // collect gate tensors per example only when the balance penalty is on
  std::vector<OmoeLayer<T>*> adapted;
  if (tc.balance_coef > 0.0)
    for (auto& blk : model.blocks())
      for (Target t : all_targets())
        if (blk.slot(t).adapter) adapted.push_back(blk.slot(t).adapter.get());

  opt.zero_grad();
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    Rng shuffle_rng(Rng::mix(tc.seed, 0x5E + static_cast<uint64_t>(epoch)));
    for (size_t i = mixture.size() - 1; i > 0; --i)
      std::swap(mixture[i], mixture[shuffle_rng.next_u64() % (i + 1)]);

    const int64_t micro_batches = static_cast<int64_t>(mixture.size()) / tc.batch_size;
    const int64_t usable = (micro_batches / tc.accumulation_steps) * tc.accumulation_steps;
    for (int64_t mb = 0; mb < usable; ++mb) {
      for (int b = 0; b < tc.batch_size; ++b) {
        const Example& ex = mixture[static_cast<size_t>(mb * tc.batch_size + b)];

        std::vector<Tensor<T>> gates;
        if (tc.balance_coef > 0.0)
          for (auto* l : adapted) l->gate_sink = &gates;

        Tensor<T> logits = model.forward(ex.tokens, /*training=*/true, &dropout_rng);
        Tensor<T> last = slice_row(logits, logits.shape()[0] - 1);
        Tensor<T> loss = cross_entropy(last, static_cast<size_t>(ex.label));
        if (tc.balance_coef > 0.0) {
          for (auto* l : adapted) l->gate_sink = nullptr;
          if (!gates.empty())
            loss = add(loss, scale(detail::balance_penalty(gates),
                                   static_cast<T>(tc.balance_coef)));
        }

        const double loss_v = static_cast<double>(loss.item());
        if (!std::isfinite(loss_v)) {
          throw NanAbort("non-finite loss at optimizer step " + std::to_string(opt_step) +
                         ", epoch " + std::to_string(epoch) + ", task " +
                         std::to_string(ex.task_id) + "; gradient norms:" +
                         detail::grad_norm_diagnostics(opt.params()));
        }
        backward(loss, T(1) / static_cast<T>(window));
        window_loss += loss_v;
        ++window_examples;
      }
      if (++micro_in_window == tc.accumulation_steps) {
        if (tc.clip_norm > 0.0) opt.clip_grad_norm(static_cast<T>(tc.clip_norm));
        if (tc.lr_schedule == "cosine") {
          const double frac = static_cast<double>(opt_step) / static_cast<double>(total_steps);
          opt.set_lr(static_cast<T>(tc.lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * frac))));
        }
        opt.step();
        opt.zero_grad();
        ++opt_step;
        MetricRow row;
        row.step = opt_step;
        row.loss = window_loss / static_cast<double>(window_examples);
        if (opt_step % tc.eval_every == 0) {
          row.task_acc = evaluate(model, suite);
          if (model.frozen_hash() != frozen_before)
            throw ContractError("train: frozen base weights changed");
        }
        result.history.push_back(std::move(row));
        window_loss = 0.0;
        window_examples = 0;
        micro_in_window = 0;
      }
    }
  }

  result.final_task_acc = evaluate(model, suite);
  if (!result.history.empty()) {
    result.history.back().task_acc = result.final_task_acc;
    result.final_loss = result.history.back().loss;
  }
  if (model.frozen_hash() != frozen_before)
    throw ContractError("train: frozen base weights changed");
  result.optimizer_steps = opt_step;
  result.degenerate_tokens = model.degenerate_tokens();
  result.trainable_params = model.trainable_param_count();
  result.expert_params = model.expert_param_count();
  result.router_params = model.router_param_count();
  return result;
}

// ---------------------------------------------------------------------------
// Method comparison

struct ComparisonCell {
  std::string method;
  std::string task;
  double mean_acc = 0.0;
  double std_acc = 0.0;
  int n_seeds = 0;
  size_t trainable_params = 0;
  size_t expert_params = 0;
  size_t router_params = 0;
  // single-task baseline for the ST/MT delta columns (optional)
  std::optional<double> st_mean_acc;
  std::optional<double> mt_minus_st;
};

struct ComparisonTable {
  std::vector<ComparisonCell> cells;
};

// Multi-task accuracies for one method over seeds (one cell per task); with
// `st_mt` each task additionally gets a single-task run per seed and the
// MT - ST delta column.
template <typename T>
std::vector<ComparisonCell> method_cells(const RunConfig& base_cfg,
                                         const std::vector<uint64_t>& seeds, bool st_mt = false) {
  if (seeds.empty()) throw ContractError("method_cells: needs at least one seed");
  const TaskSuite suite = build_tasks(base_cfg);
  std::vector<std::vector<double>> mt_acc(suite.tasks.size());
  std::vector<std::vector<double>> st_acc(suite.tasks.size());
  size_t trainable = 0, expert = 0, router = 0;

  for (uint64_t seed : seeds) {
    RunConfig cfg = base_cfg;
    cfg.train.seed = seed;
    auto model = build_model<T>(cfg);
    trainable = model.trainable_param_count();
    expert = model.expert_param_count();
    router = model.router_param_count();
    auto res = train(model, suite, cfg.train);
    for (size_t t = 0; t < suite.tasks.size(); ++t)
      mt_acc[t].push_back(res.final_task_acc[t]);

    if (st_mt) {
      for (size_t t = 0; t < suite.tasks.size(); ++t) {
        TaskSuite single;
        single.tasks.push_back(suite.tasks[t]);  // keeps the task's marker id
        auto st_model = build_model<T>(cfg);
        auto st_res = train(st_model, single, cfg.train);
        st_acc[t].push_back(st_res.final_task_acc[0]);
      }
    }
  }

  std::vector<ComparisonCell> cells;
  for (size_t t = 0; t < suite.tasks.size(); ++t) {
    ComparisonCell cell;
    cell.method = base_cfg.name;
    cell.task = suite.tasks[t].family;
    cell.n_seeds = static_cast<int>(seeds.size());
    double m = 0.0;
    for (double a : mt_acc[t]) m += a;
    m /= static_cast<double>(mt_acc[t].size());
    double var = 0.0;
    for (double a : mt_acc[t]) var += (a - m) * (a - m);
    cell.mean_acc = m;
    cell.std_acc = std::sqrt(var / static_cast<double>(mt_acc[t].size()));
    cell.trainable_params = trainable;
    cell.expert_params = expert;
    cell.router_params = router;
    if (st_mt) {
      double sm = 0.0;
      for (double a : st_acc[t]) sm += a;
      sm /= static_cast<double>(st_acc[t].size());
      cell.st_mean_acc = sm;
      cell.mt_minus_st = m - sm;
    }
    cells.push_back(std::move(cell));
  }
  return cells;
}

// Side-by-side comparison of two or more methods.
template <typename T>
ComparisonTable compare_methods(const std::vector<RunConfig>& methods,
                                const std::vector<uint64_t>& seeds, bool st_mt = false) {
  if (methods.size() < 2) throw ContractError("compare_methods: needs at least two methods");
  if (st_mt && seeds.size() < 3)
    throw ContractError("compare_methods: ST/MT deltas need at least three seeds");
  ComparisonTable table;
  for (const auto& cfg : methods) {
    auto cells = method_cells<T>(cfg, seeds, st_mt);
    table.cells.insert(table.cells.end(), cells.begin(), cells.end());
  }
  return table;
}

}  // namespace omoe

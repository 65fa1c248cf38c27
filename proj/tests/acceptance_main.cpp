// Copyright 2026 The omoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite. Runs every criterion at its stated tolerance and prints
// one line per criterion. Directional checks (the vanilla baseline's
// redundancy level and the OMoE-vs-vanilla accuracy gap) are reported but do
// not gate the exit code; everything else does.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "omoe/analysis.hpp"
#include "omoe/checkpoint.hpp"
#include "omoe/runner.hpp"
#include "omoe/train.hpp"
#include "reference_moe.hpp"

namespace fs = std::filesystem;
using omoe::ExpertStack;
using omoe::LoraExpert;
using omoe::OmoeLayer;
using omoe::OrthoMode;
using omoe::RouterState;
using omoe::Routing;
using omoe::RunConfig;
using omoe::Target;
using omoe::Tensor;

namespace {

int g_failures = 0;

void report(const std::string& id, bool pass, bool gating, const std::string& detail,
            double seconds) {
  const char* tag = pass ? "PASS" : (gating ? "FAIL" : "REPORTED");
  if (!pass && gating) ++g_failures;
  std::printf("[%-8s] criterion %-3s (%5.1fs)  %s\n", tag, id.c_str(), seconds, detail.c_str());
  std::fflush(stdout);
}

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double s() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

ExpertStack<double> random_stack(size_t d, size_t k, omoe::Rng& rng) {
  std::vector<Tensor<double>> cols;
  for (size_t j = 0; j < k; ++j) {
    std::vector<double> v(d);
    for (auto& x : v) x = rng.normal();
    cols.push_back(Tensor<double>::from_data({d}, std::move(v)));
  }
  return ExpertStack<double>::from_columns(std::move(cols));
}

OmoeLayer<double> make_layer(size_t d_out, size_t d_in, int n, int rank, Routing routing,
                             OrthoMode ortho, uint64_t seed, bool random_b) {
  omoe::Rng rng(seed);
  std::vector<double> w(d_out * d_in);
  for (auto& v : w) v = rng.normal() / std::sqrt(static_cast<double>(d_in));
  auto w0 = Tensor<double>::from_data({d_out, d_in}, std::move(w));
  std::vector<LoraExpert<double>> experts;
  for (int i = 0; i < n; ++i) {
    auto e = LoraExpert<double>::init(d_out, d_in, rank, 2.0 * rank, 0.0, true,
                                      omoe::Rng::mix(seed, 50 + i));
    if (random_b)
      for (auto& v : e.B.values()) v = 0.3 * rng.normal();
    experts.push_back(std::move(e));
  }
  auto router = RouterState<double>::make(routing, n, d_in, 2, omoe::Rng::mix(seed, 9));
  return OmoeLayer<double>::make(w0, std::move(experts), std::move(router), ortho);
}

std::string config_path(const char* leaf) {
  return std::string(OMOE_SOURCE_DIR) + "/configs/" + leaf;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------

void criterion_1_orthogonality() {
  Timer timer;
  omoe::Rng rng(2026);
  bool ok = true;
  std::string detail;
  for (int trial = 0; trial < 100 && ok; ++trial) {
    const size_t d = 2 + rng.next_u64() % 63;                       // <= 64
    const size_t k = 1 + rng.next_u64() % std::min<size_t>(d, 7);   // <= 7
    auto E = random_stack(d, k, rng);
    auto ortho = omoe::gram_schmidt(E, OrthoMode::kOrthogonal);
    for (size_t i = 0; i < k && ok; ++i)
      for (size_t j = i + 1; j < k && ok; ++j) {
        double ip = 0.0, ni = 0.0, nj = 0.0;
        for (size_t t = 0; t < d; ++t) {
          ip += ortho.cols[i].at(t) * ortho.cols[j].at(t);
          ni += ortho.cols[i].at(t) * ortho.cols[i].at(t);
          nj += ortho.cols[j].at(t) * ortho.cols[j].at(t);
        }
        if (std::abs(ip) > 1e-6 * std::sqrt(ni) * std::sqrt(nj)) {
          ok = false;
          detail = "pairwise bound violated at trial " + std::to_string(trial);
        }
      }
    auto orthonormal = omoe::gram_schmidt(E, OrthoMode::kOrthonormal);
    const double res = omoe::stiefel_residual(orthonormal);
    if (res >= 1e-6) {
      ok = false;
      detail = "stiefel residual " + std::to_string(res) + " at trial " + std::to_string(trial);
    }
  }
  if (ok)
    detail = "100 random stacks (d<=64, k<=7): pairwise bound and stiefel residual < 1e-6";
  report("1", ok && timer.s() < 1.0, true, detail, timer.s());
}

void criterion_2_eq7_oracle() {
  Timer timer;
  omoe::Rng rng(77);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const size_t d = 2 + rng.next_u64() % 7;                       // <= 8
    const size_t k = 1 + rng.next_u64() % std::min<size_t>(d, 4);  // <= 4
    auto E = random_stack(d, k, rng);
    auto modified = omoe::gram_schmidt(E, OrthoMode::kOrthogonal);
    std::vector<std::vector<double>> cols;
    for (const auto& c : E.cols) cols.push_back(c.values());
    auto classical = refimpl::classical_gram_schmidt(cols);
    for (size_t j = 0; j < k; ++j) {
      double err = 0.0, norm = 0.0;
      for (size_t t = 0; t < d; ++t) {
        const double diff = modified.cols[j].at(t) - classical[j][t];
        err += diff * diff;
        norm += classical[j][t] * classical[j][t];
      }
      worst = std::max(worst, std::sqrt(err) / (std::sqrt(norm) + 1e-300));
    }
  }
  std::ostringstream os;
  os << "modified vs one-shot classical GS, 50 stacks: max relative diff " << worst;
  report("2", worst < 1e-10 && timer.s() < 1.0, true, os.str(), timer.s());
}

void criterion_3_gradients() {
  Timer timer;
  double worst = 0.0;
  for (uint64_t seed = 0; seed < 10; ++seed) {
    auto layer = make_layer(6, 5, 3, 2, Routing::kSoft, OrthoMode::kOrthogonal, 300 + seed,
                            /*random_b=*/true);
    omoe::Rng rng(seed);
    std::vector<double> hv(5);
    for (auto& v : hv) v = rng.normal();
    auto h = Tensor<double>::from_data({5}, hv);

    auto loss_fn = [&](OmoeLayer<double>& probe) {
      auto y = probe.forward_token(h);
      return omoe::dot(y, y);
    };
    for (size_t i = 0; i < layer.experts.size(); ++i) {
      worst = std::max(worst, omoe::finite_diff_check(
                                  [&](const Tensor<double>& p) {
                                    OmoeLayer<double> probe = layer;
                                    probe.experts[i].A = p;
                                    return loss_fn(probe);
                                  },
                                  layer.experts[i].A));
      worst = std::max(worst, omoe::finite_diff_check(
                                  [&](const Tensor<double>& p) {
                                    OmoeLayer<double> probe = layer;
                                    probe.experts[i].B = p;
                                    return loss_fn(probe);
                                  },
                                  layer.experts[i].B));
    }
    worst = std::max(worst, omoe::finite_diff_check(
                                [&](const Tensor<double>& p) {
                                  OmoeLayer<double> probe = layer;
                                  probe.router.G = p;
                                  return loss_fn(probe);
                                },
                                layer.router.G));
  }
  std::ostringstream os;
  os << "full layer w.r.t. all A, B, G over 10 seeds: max relative error " << worst;
  report("3", worst < 1e-5 && timer.s() < 30.0, true, os.str(), timer.s());
}

void criterion_4_reductions() {
  Timer timer;
  bool ok = true;
  std::string detail = "ortho-off == Eq.2 reference; n=1 == Eq.1 LoRA; fresh init == backbone";

  // (a) ortho off vs the mixture reference, bitwise
  for (uint64_t seed = 0; seed < 5 && ok; ++seed) {
    auto layer = make_layer(6, 5, 3, 2, Routing::kSoft, OrthoMode::kOff, 400 + seed, true);
    omoe::Rng rng(seed);
    std::vector<double> hv(5);
    for (auto& v : hv) v = rng.normal();
    auto y = layer.forward_token(Tensor<double>::from_data({5}, hv));
    if (y.values() != refimpl::moe_forward(layer, hv)) {
      ok = false;
      detail = "ortho-off mixture differs from the Eq.2 reference";
    }
  }

  // (b) single soft-gated expert vs the plain LoRA reference, bitwise
  for (uint64_t seed = 0; seed < 5 && ok; ++seed) {
    auto layer = make_layer(6, 5, 1, 2, Routing::kSoft, OrthoMode::kOff, 500 + seed, true);
    omoe::Rng rng(seed);
    std::vector<double> hv(5);
    for (auto& v : hv) v = rng.normal();
    auto y = layer.forward_token(Tensor<double>::from_data({5}, hv));
    if (y.values() != refimpl::lora_forward(layer, hv)) {
      ok = false;
      detail = "n=1 soft-gated layer differs from the Eq.1 LoRA reference";
    }
  }

  // (c) fresh init: adapted backbone logits equal the frozen backbone's
  if (ok) {
    RunConfig cfg = omoe::load_run_config(config_path("default.json"));
    auto base = omoe::Backbone<double>::build(cfg.backbone);
    auto adapted = omoe::build_model<double>(cfg);
    auto suite = omoe::build_tasks(cfg);
    for (int i = 0; i < 5 && ok; ++i) {
      const auto& ex = suite.tasks[i % suite.tasks.size()].test[static_cast<size_t>(i)];
      auto a = base.forward(ex.tokens);
      auto b = adapted.forward(ex.tokens);
      if (a.values() != b.values()) {
        ok = false;
        detail = "freshly injected model changed the frozen forward";
      }
    }
  }
  report("4", ok, true, detail, timer.s());
}

void criterion_5_topk() {
  Timer timer;
  omoe::Rng rng(55);
  bool ok = true;
  std::string detail;
  for (int trial = 0; trial < 1000 && ok; ++trial) {
    const size_t n = 2 + rng.next_u64() % 7;
    const int k = 1 + static_cast<int>(rng.next_u64() % n);
    std::vector<double> logits(n);
    for (auto& v : logits) v = 2.0 * rng.normal();
    auto g = omoe::softmax(Tensor<double>::from_data({n}, std::move(logits)));
    auto out = omoe::renormalize_topk(g, k);

    double total = 0.0;
    size_t support = 0, in_support = 0;
    for (size_t i = 0; i < n; ++i) {
      total += out.at(i);
      support += (out.at(i) != 0.0);
      in_support += (g.at(i) != 0.0);
    }
    if (std::abs(total - 1.0) > 1e-12) {
      ok = false;
      detail = "sum-to-one violated at trial " + std::to_string(trial);
      break;
    }
    if (support != std::min<size_t>(static_cast<size_t>(k), in_support)) {
      ok = false;
      detail = "support size violated at trial " + std::to_string(trial);
      break;
    }

    // brute-force oracle: full stable sort, select, renormalize in index order
    std::vector<double> expect;
    if (static_cast<size_t>(k) == n) {
      expect = g.values();
    } else {
      std::vector<size_t> idx(n);
      for (size_t i = 0; i < n; ++i) idx[i] = i;
      std::stable_sort(idx.begin(), idx.end(),
                       [&](size_t a, size_t b) { return g.at(a) > g.at(b); });
      std::vector<bool> keep(n, false);
      for (int i = 0; i < k; ++i) keep[idx[static_cast<size_t>(i)]] = true;
      double kept = 0.0;
      for (size_t i = 0; i < n; ++i)
        if (keep[i]) kept += g.at(i);
      expect.assign(n, 0.0);
      for (size_t i = 0; i < n; ++i)
        if (keep[i]) expect[i] = g.at(i) / kept;
    }
    if (out.values() != expect) {
      ok = false;
      detail = "brute-force oracle mismatch at trial " + std::to_string(trial);
    }
  }
  if (ok) detail = "1000 random gate vectors: sum, support, and oracle all exact";
  report("5", ok, true, detail, timer.s());
}

void criterion_6_param_efficiency() {
  Timer timer;
  RunConfig two = omoe::load_run_config(config_path("default.json"));
  RunConfig eight = two;
  eight.adapter.n_experts = 8;
  eight.adapter.routing = Routing::kTopK;
  eight.adapter.k_active = 2;
  eight.adapter.ortho = OrthoMode::kOff;
  auto m2 = omoe::build_model<double>(two);
  auto m8 = omoe::build_model<double>(eight);
  const size_t e2 = m2.expert_param_count();
  const size_t e8 = m8.expert_param_count();
  std::ostringstream os;
  os << "expert params: 2 experts = " << e2 << ", 8 experts = " << e8 << " (ratio "
     << (static_cast<double>(e2) / static_cast<double>(e8)) << ", exact 0.25 required)";
  report("6", e2 * 4 == e8, true, os.str(), timer.s());
}

struct TrainedRuns {
  // seed -> checkpoint path, per method
  std::map<uint64_t, std::string> omoe_ckpt, vanilla_ckpt;
  std::map<uint64_t, double> omoe_mean_acc, vanilla_mean_acc;
  bool ok = false;
  std::string error;
};

TrainedRuns train_shared_runs(const fs::path& work) {
  TrainedRuns runs;
  try {
    RunConfig omoe_cfg = omoe::load_run_config(config_path("default.json"));
    RunConfig vanilla_cfg = omoe::load_run_config(config_path("baseline_vanilla.json"));
    for (uint64_t seed = 1; seed <= 5; ++seed) {
      for (auto* pair : {&omoe_cfg, &vanilla_cfg}) {
        const bool is_omoe = pair == &omoe_cfg;
        const std::string dir =
            (work / ((is_omoe ? "omoe_s" : "vanilla_s") + std::to_string(seed))).string();
        auto art = omoe::run_train(*pair, dir, static_cast<int64_t>(seed));
        auto ck = omoe::read_raw_checkpoint(art.checkpoint_path);
        // mean accuracy from the run summary
        const std::string summary = slurp(art.summary_path);
        const auto pos = summary.find("\"mean_accuracy\":");
        const double acc = std::stod(summary.substr(pos + 16));
        if (is_omoe) {
          runs.omoe_ckpt[seed] = art.checkpoint_path;
          runs.omoe_mean_acc[seed] = acc;
        } else {
          runs.vanilla_ckpt[seed] = art.checkpoint_path;
          runs.vanilla_mean_acc[seed] = acc;
        }
      }
    }
    runs.ok = true;
  } catch (const std::exception& e) {
    runs.error = e.what();
  }
  return runs;
}

// Tap every layer's Down adapter of a trained checkpoint and compute the
// per-layer diversity of post-GS vectors.
std::vector<omoe::LayerDiversityRow> diversity_of(const std::string& ckpt_path) {
  auto ck = omoe::read_raw_checkpoint(ckpt_path);
  RunConfig cfg = omoe::parse_run_config(ck.config_json);
  auto model = omoe::build_model<double>(cfg);
  omoe::load_checkpoint_into(ck, model);
  auto suite = omoe::build_tasks(cfg);

  omoe::TapRequest tap;
  for (int l = 0; l < cfg.backbone.n_layers; ++l) tap.layers.insert(l);
  tap.target = Target::kDown;
  tap.tokens_per_layer = 32;
  {
    omoe::NoGradGuard ng;
    bool done = false;
    for (const auto& task : suite.tasks) {
      for (const auto& ex : task.test) {
        (void)model.forward(ex.tokens, false, nullptr, &tap);
        done = true;
        for (int l = 0; l < cfg.backbone.n_layers; ++l)
          done &= static_cast<int64_t>(tap.records[l].size()) >= tap.tokens_per_layer;
        if (done) break;
      }
      if (done) break;
    }
  }
  std::vector<omoe::LayerDiversityRow> rows;
  for (int l = 0; l < cfg.backbone.n_layers; ++l) {
    omoe::LayerDiversityRow row;
    row.layer = l;
    row.report = omoe::pairwise_diversity(tap.records[l]);
    rows.push_back(row);
  }
  return rows;
}

void criterion_7_diversity(const TrainedRuns& runs) {
  Timer timer;
  if (!runs.ok) {
    report("7", false, true, "training runs failed: " + runs.error, timer.s());
    return;
  }
  bool omoe_bound = true;
  double omoe_worst = 0.0;
  bool baseline_direction = true;
  double baseline_best = 0.0;
  for (uint64_t seed = 1; seed <= 3; ++seed) {
    for (const auto& row : diversity_of(runs.omoe_ckpt.at(seed))) {
      omoe_worst = std::max(omoe_worst, row.report.mean_abs_cos_post);
      if (row.report.mean_abs_cos_post > 1e-5) omoe_bound = false;
    }
    double seed_max = 0.0;
    for (const auto& row : diversity_of(runs.vanilla_ckpt.at(seed)))
      seed_max = std::max(seed_max, row.report.mean_abs_cos_post);
    baseline_best = std::max(baseline_best, seed_max);
    if (seed_max <= 0.2) baseline_direction = false;
  }
  {
    std::ostringstream os;
    os << "OMoE post-GS mean |cos| <= 1e-5 at every tapped layer (worst " << omoe_worst << ")";
    report("7", omoe_bound, true, os.str(), timer.s());
  }
  {
    std::ostringstream os;
    os << "vanilla soft-MoE redundancy > 0.2 in some layer per seed (max seen " << baseline_best
       << "); expected-direction check";
    report("7b", baseline_direction, false, os.str(), 0.0);
  }
}

void criterion_8_learnability(const TrainedRuns& runs) {
  Timer timer;
  if (!runs.ok) {
    report("8", false, true, "training runs failed: " + runs.error, timer.s());
    return;
  }
  auto stats = [](const std::map<uint64_t, double>& m) {
    double mean = 0.0;
    for (const auto& [s, a] : m) mean += a;
    mean /= static_cast<double>(m.size());
    double var = 0.0;
    for (const auto& [s, a] : m) var += (a - mean) * (a - mean);
    return std::make_pair(mean, std::sqrt(var / static_cast<double>(m.size())));
  };
  auto [om, os_] = stats(runs.omoe_mean_acc);
  auto [vm, vs] = stats(runs.vanilla_mean_acc);
  const bool within = om >= vm - 0.02;
  std::ostringstream os;
  os << "OMoE " << om << " +/- " << os_ << " vs vanilla " << vm << " +/- " << vs
     << " over 5 seeds (within 2 points or above); directional";
  report("8", within, false, os.str(), timer.s());
}

void criterion_9_patterns(const fs::path& work) {
  Timer timer;
  // thirds mapping, asserted directly
  bool mapping = true;
  const std::map<omoe::LayerPattern, std::vector<int>> expected = {
      {omoe::LayerPattern::kTriangle, {0, 1}},
      {omoe::LayerPattern::kInvTriangle, {4, 5}},
      {omoe::LayerPattern::kDiamond, {2, 3}},
      {omoe::LayerPattern::kBowtie, {0, 1, 4, 5}},
  };
  for (const auto& [pattern, layers] : expected) {
    for (int l = 0; l < 6; ++l) {
      const bool want =
          std::find(layers.begin(), layers.end(), l) != layers.end();
      if (omoe::pattern_uses_ortho(pattern, omoe::layer_band(l, 6)) != want) mapping = false;
    }
  }

  omoe::CompareOptions opts;
  opts.config_paths = {config_path("pattern_triangle.json"), config_path("pattern_inv_triangle.json"),
                       config_path("pattern_diamond.json"), config_path("pattern_bowtie.json")};
  opts.seeds = {1};
  int failures = -1;
  std::string err;
  try {
    failures = omoe::run_compare(opts, (work / "patterns").string());
  } catch (const std::exception& e) {
    err = e.what();
  }
  const std::string csv = slurp((work / "patterns" / "comparison.csv").string());
  const bool all_rows = csv.find("omoe-triangle") != std::string::npos &&
                        csv.find("omoe-inv_triangle") != std::string::npos &&
                        csv.find("omoe-diamond") != std::string::npos &&
                        csv.find("omoe-bowtie") != std::string::npos &&
                        csv.find("FAILED") == std::string::npos;
  std::ostringstream os;
  os << "four patterns trained without NaN, table emitted, thirds mapping exact";
  if (!err.empty()) os << " (error: " << err << ")";
  report("9", mapping && failures == 0 && all_rows, true, os.str(), timer.s());
}

void criterion_10_determinism(const fs::path& work) {
  Timer timer;
  // a CLI train run, repeated with the same seed and config
  const std::string cli = OMOE_CLI_PATH;
  const std::string cfg = config_path("single_task.json");
  const std::string out1 = (work / "det1").string();
  const std::string out2 = (work / "det2").string();
  const std::string cmd1 = "\"" + cli + "\" train --config \"" + cfg + "\" --seed 11 --out \"" +
                           out1 + "\" > /dev/null";
  const std::string cmd2 = "\"" + cli + "\" train --config \"" + cfg + "\" --seed 11 --out \"" +
                           out2 + "\" > /dev/null";
  const int rc1 = std::system(cmd1.c_str());
  const int rc2 = std::system(cmd2.c_str());
  const std::string s1 = slurp(out1 + "/summary.json");
  const std::string s2 = slurp(out2 + "/summary.json");
  const bool ok = rc1 == 0 && rc2 == 0 && !s1.empty() && s1 == s2;
  report("10", ok, true, "repeated CLI run with identical seed/config: summary.json hash-equal",
         timer.s());
}

}  // namespace

int main() {
  const fs::path work = fs::temp_directory_path() / "omoe_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);

  std::printf("omoe acceptance suite\n");
  criterion_1_orthogonality();
  criterion_2_eq7_oracle();
  criterion_3_gradients();
  criterion_4_reductions();
  criterion_5_topk();
  criterion_6_param_efficiency();
  criterion_9_patterns(work);
  criterion_10_determinism(work);

  std::printf("training the shared runs for criteria 7 and 8 (2 methods x 5 seeds)...\n");
  std::fflush(stdout);
  Timer heavy;
  TrainedRuns runs = train_shared_runs(work);
  std::printf("training done in %.1fs\n", heavy.s());
  criterion_7_diversity(runs);
  criterion_8_learnability(runs);

  std::printf("%s\n", g_failures == 0 ? "acceptance: all gating criteria passed"
                                      : "acceptance: FAILURES present");
  return g_failures == 0 ? 0 : 1;
}

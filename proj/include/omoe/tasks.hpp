// Copyright 2026 The omoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Deterministic synthetic token-classification tasks. Four generator
// families with distinct rules stand in for a heterogeneous task mixture;
// every family predicts a class token from the logits at the final position.
// Train and test splits are disjoint by construction: sequences are deduped
// globally before being split.

#pragma once

#include <algorithm>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "omoe/errors.hpp"
#include "omoe/rng.hpp"

namespace omoe {

struct Example {
  std::vector<int> tokens;
  int label = 0;  // answer token id
  int task_id = 0;
};

struct SynthTask {
  std::string family;
  int task_id = 0;
  int n_classes = 0;
  std::vector<Example> train;
  std::vector<Example> test;
};

inline const std::vector<std::string>& known_task_families() {
  static const std::vector<std::string> f = {"last_token", "first_token", "majority",
                                             "pair_parity"};
  return f;
}

// Token-id layout scales with the vocabulary: content ids keep clear of the
// task-marker band and the class block at the top of the vocab. Sequences
// open with a per-task marker token, the analog of each dataset's own prompt
// format in a mixed corpus.
struct TaskVocab {
  int vocab_size;
  int content_lo() const { return 1; }
  // a compact content alphabet keeps the rules learnable at desk scale
  int content_hi() const { return 1 + std::min(16, vocab_size - 17); }  // exclusive
  int marker_base() const { return vocab_size - 16; }
  int class_base() const { return vocab_size - 8; }

  void validate() const {
    if (vocab_size < 24)
      throw ConfigError("tasks: vocab_size must be at least 24 for the token layout");
  }
};

namespace detail {

inline int classify(const std::string& family, const std::vector<int>& content,
                    const TaskVocab& tv, int* n_classes) {
  const int mid = (tv.content_lo() + tv.content_hi()) / 2;
  if (family == "last_token") {
    *n_classes = 4;
    return content.back() % 4;
  }
  if (family == "first_token") {
    *n_classes = 4;
    return content.front() % 4;
  }
  if (family == "majority") {
    *n_classes = 2;
    int a = 0;
    for (int c : content) a += (c < mid) ? 1 : -1;
    return a > 0 ? 0 : 1;
  }
  if (family == "pair_parity") {
    *n_classes = 2;
    return (content.front() + content.back()) % 2;
  }
  throw ConfigError("unknown task family '" + family + "'");
}

}  // namespace detail

// Build one task: `count` = train_size + test_size distinct sequences, the
// first train_size of which become the train split.
inline SynthTask make_task(const std::string& family, int task_id, int train_size, int test_size,
                           int seq_len, const TaskVocab& tv, uint64_t seed) {
  tv.validate();
  if (train_size < 1 || test_size < 1) throw ConfigError("tasks: split sizes must be positive");
  if (seq_len < 3) throw ConfigError("tasks: seq_len must be at least 3");
  const int n_content = seq_len - 1;
  // majority needs an odd count so there is never a tie
  if (family == "majority" && n_content % 2 == 0)
    throw ConfigError("tasks: majority family needs an even seq_len (odd content count)");

  Rng rng(Rng::mix(seed, static_cast<uint64_t>(task_id) + 17));
  SynthTask task;
  task.family = family;
  task.task_id = task_id;

  std::set<std::vector<int>> seen;
  const int total = train_size + test_size;
  int guard = 0;
  while (static_cast<int>(seen.size()) < total) {
    if (++guard > total * 1000)
      throw ConfigError("tasks: sequence space too small for requested split sizes");
    std::vector<int> content(static_cast<size_t>(n_content));
    for (auto& c : content)
      c = tv.content_lo() +
          static_cast<int>(rng.next_u64() % static_cast<uint64_t>(tv.content_hi() - tv.content_lo()));
    std::vector<int> tokens;
    tokens.reserve(static_cast<size_t>(seq_len));
    tokens.push_back(tv.marker_base() + (task_id % 8));
    tokens.insert(tokens.end(), content.begin(), content.end());
    if (!seen.insert(tokens).second) continue;

    int n_classes = 0;
    const int cls = detail::classify(family, content, tv, &n_classes);
    task.n_classes = n_classes;
    Example ex;
    ex.tokens = std::move(tokens);
    ex.label = tv.class_base() + cls;
    ex.task_id = task_id;
    if (static_cast<int>(task.train.size()) < train_size)
      task.train.push_back(std::move(ex));
    else
      task.test.push_back(std::move(ex));
  }
  return task;
}

struct TaskSuite {
  std::vector<SynthTask> tasks;

  std::vector<Example> mixed_train() const {
    std::vector<Example> all;
    for (const auto& t : tasks) all.insert(all.end(), t.train.begin(), t.train.end());
    return all;
  }
};

inline TaskSuite make_task_suite(const std::vector<std::string>& families, int train_size,
                                 int test_size, int seq_len, int vocab_size, uint64_t seed) {
  if (families.empty()) throw ConfigError("tasks: at least one family required");
  TaskVocab tv{vocab_size};
  TaskSuite suite;
  for (size_t i = 0; i < families.size(); ++i)
    suite.tasks.push_back(make_task(families[i], static_cast<int>(i), train_size, test_size,
                                    seq_len, tv, seed));
  return suite;
}

}  // namespace omoe

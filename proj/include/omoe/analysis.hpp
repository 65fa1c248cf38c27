// Copyright 2026 The omoe Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>
#include <vector>

#include "omoe/omoe_layer.hpp"

namespace omoe {

// Top-two principal components by power iteration with deflation.
// Deterministic: fixed start vector, fixed iteration count. Input rows are
// centered internally. Returns one (x, y) pair per row.
std::vector<std::array<double, 2>> pca2(const std::vector<std::vector<double>>& rows);

// vectors CSV: one row per (token, expert, stage); stage is pre or post.
void write_tap_vectors_csv(const std::string& path, const std::vector<LayerTapRecord>& records);

// 2-D projection of the same rows, same order.
void write_tap_pca_csv(const std::string& path, const std::vector<LayerTapRecord>& records);

struct LayerDiversityRow {
  int layer = 0;
  DiversityReport report;
  int64_t degenerate_tokens = 0;
};

void write_diversity_csv(const std::string& path, const std::vector<LayerDiversityRow>& rows);

}  // namespace omoe

// Copyright 2026 The omoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "omoe/analysis.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "omoe/errors.hpp"

namespace omoe {

namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Flatten records into (token, expert, stage, vector) rows in a fixed order.
struct FlatRow {
  int token;
  int expert;
  const char* stage;
  const std::vector<double>* vec;
};

std::vector<FlatRow> flatten(const std::vector<LayerTapRecord>& records) {
  std::vector<FlatRow> rows;
  for (const auto& r : records) {
    for (size_t e = 0; e < r.pre.size(); ++e)
      rows.push_back({r.token_index, static_cast<int>(e), "pre", &r.pre[e]});
    for (size_t e = 0; e < r.post.size(); ++e)
      rows.push_back({r.token_index, static_cast<int>(e), "post", &r.post[e]});
  }
  return rows;
}

}  // namespace

std::vector<std::array<double, 2>> pca2(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) return {};
  const size_t n = rows.size(), d = rows[0].size();
  for (const auto& r : rows)
    if (r.size() != d) throw ContractError("pca2: ragged input rows");

  std::vector<double> mean(d, 0.0);
  for (const auto& r : rows)
    for (size_t j = 0; j < d; ++j) mean[j] += r[j];
  for (auto& m : mean) m /= static_cast<double>(n);

  std::vector<std::vector<double>> x(n, std::vector<double>(d));
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < d; ++j) x[i][j] = rows[i][j] - mean[j];

  // covariance (unnormalized)
  std::vector<double> cov(d * d, 0.0);
  for (size_t i = 0; i < n; ++i)
    for (size_t a = 0; a < d; ++a) {
      const double xa = x[i][a];
      if (xa == 0.0) continue;
      for (size_t b = 0; b < d; ++b) cov[a * d + b] += xa * x[i][b];
    }

  auto power_iterate = [&](const std::vector<double>& c) {
    std::vector<double> v(d);
    for (size_t j = 0; j < d; ++j) v[j] = 1.0 + 1e-3 * static_cast<double>(j % 7);
    for (int it = 0; it < 300; ++it) {
      std::vector<double> w(d, 0.0);
      for (size_t a = 0; a < d; ++a) {
        const double va = v[a];
        if (va == 0.0) continue;
        for (size_t b = 0; b < d; ++b) w[b] += c[a * d + b] * va;
      }
      double norm = 0.0;
      for (double e : w) norm += e * e;
      norm = std::sqrt(norm);
      if (norm < 1e-300) return std::vector<double>(d, 0.0);
      for (size_t j = 0; j < d; ++j) v[j] = w[j] / norm;
    }
    return v;
  };

  std::vector<double> v1 = power_iterate(cov);
  double lambda1 = 0.0;
  {
    std::vector<double> w(d, 0.0);
    for (size_t a = 0; a < d; ++a)
      for (size_t b = 0; b < d; ++b) w[b] += cov[a * d + b] * v1[a];
    for (size_t j = 0; j < d; ++j) lambda1 += v1[j] * w[j];
  }
  std::vector<double> deflated = cov;
  for (size_t a = 0; a < d; ++a)
    for (size_t b = 0; b < d; ++b) deflated[a * d + b] -= lambda1 * v1[a] * v1[b];
  std::vector<double> v2 = power_iterate(deflated);

  std::vector<std::array<double, 2>> out(n);
  for (size_t i = 0; i < n; ++i) {
    double p1 = 0.0, p2 = 0.0;
    for (size_t j = 0; j < d; ++j) {
      p1 += x[i][j] * v1[j];
      p2 += x[i][j] * v2[j];
    }
    out[i] = {p1, p2};
  }
  return out;
}

void write_tap_vectors_csv(const std::string& path,
                           const std::vector<LayerTapRecord>& records) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for write: " + path);
  const size_t d = records.empty() ? 0 : records[0].pre.empty() ? 0 : records[0].pre[0].size();
  os << "token,expert,stage";
  for (size_t j = 0; j < d; ++j) os << ",v" << j;
  os << "\n";
  for (const auto& row : flatten(records)) {
    os << row.token << "," << row.expert << "," << row.stage;
    for (double v : *row.vec) os << "," << fmt_double(v);
    os << "\n";
  }
  if (!os) throw IoError("write failed: " + path);
}

void write_tap_pca_csv(const std::string& path, const std::vector<LayerTapRecord>& records) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for write: " + path);
  auto rows = flatten(records);
  std::vector<std::vector<double>> data;
  data.reserve(rows.size());
  for (const auto& r : rows) data.push_back(*r.vec);
  auto proj = pca2(data);
  os << "token,expert,stage,x,y\n";
  for (size_t i = 0; i < rows.size(); ++i)
    os << rows[i].token << "," << rows[i].expert << "," << rows[i].stage << ","
       << fmt_double(proj[i][0]) << "," << fmt_double(proj[i][1]) << "\n";
  if (!os) throw IoError("write failed: " + path);
}

void write_diversity_csv(const std::string& path, const std::vector<LayerDiversityRow>& rows) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for write: " + path);
  os << "layer,mean_abs_cos_pre,mean_abs_cos_post,pairs,skipped_zero,degenerate_tokens\n";
  for (const auto& r : rows)
    os << r.layer << "," << fmt_double(r.report.mean_abs_cos_pre) << ","
       << fmt_double(r.report.mean_abs_cos_post) << "," << r.report.pairs << ","
       << r.report.skipped_zero << "," << r.degenerate_tokens << "\n";
  if (!os) throw IoError("write failed: " + path);
}

}  // namespace omoe

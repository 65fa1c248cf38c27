// Copyright 2026 The omoe Authors
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "omoe/gram_schmidt.hpp"
#include "omoe/rng.hpp"

using omoe::ExpertStack;
using omoe::OrthoMode;
using omoe::Tensor;

namespace {

ExpertStack<double> stack_of(std::vector<std::vector<double>> cols) {
  std::vector<Tensor<double>> ts;
  for (auto& c : cols) ts.push_back(Tensor<double>::from_data({c.size()}, c));
  return ExpertStack<double>::from_columns(std::move(ts));
}

ExpertStack<double> random_stack(size_t d, size_t k, omoe::Rng& rng, bool requires_grad = false) {
  std::vector<Tensor<double>> cols;
  for (size_t j = 0; j < k; ++j) {
    std::vector<double> v(d);
    for (auto& x : v) x = rng.normal();
    cols.push_back(Tensor<double>::from_data({d}, std::move(v), requires_grad));
  }
  return ExpertStack<double>::from_columns(std::move(cols));
}

double pair_cos_bound_violation(const ExpertStack<double>& E) {
  double worst = 0.0;
  for (size_t i = 0; i < E.k(); ++i)
    for (size_t j = i + 1; j < E.k(); ++j) {
      double ip = 0.0, ni = 0.0, nj = 0.0;
      for (size_t t = 0; t < E.dim; ++t) {
        ip += E.cols[i].at(t) * E.cols[j].at(t);
        ni += E.cols[i].at(t) * E.cols[i].at(t);
        nj += E.cols[j].at(t) * E.cols[j].at(t);
      }
      worst = std::max(worst, std::abs(ip) / (std::sqrt(ni) * std::sqrt(nj)));
    }
  return worst;
}

}  // namespace

TEST_CASE("already orthonormal columns pass through unchanged") {
  auto E = stack_of({{1, 0, 0}, {0, 1, 0}});
  auto out = omoe::gram_schmidt(E, OrthoMode::kOrthogonal);
  CHECK(out.cols[0].values() == E.cols[0].values());
  CHECK(out.cols[1].at(0) == 0.0);
  CHECK(out.cols[1].at(1) == 1.0);
  CHECK(out.cols[1].at(2) == 0.0);
}

TEST_CASE("hand oracle: e1=(1,1), e2=(1,0) -> e2' = (0.5, -0.5)") {
  auto E = stack_of({{1, 1}, {1, 0}});
  auto out = omoe::gram_schmidt(E, OrthoMode::kOrthogonal);
  CHECK(out.cols[0].at(0) == 1.0);
  CHECK(out.cols[0].at(1) == 1.0);
  CHECK(out.cols[1].at(0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(out.cols[1].at(1) == doctest::Approx(-0.5).epsilon(1e-15));
}

TEST_CASE("hand oracle orthonormal: columns (1/sqrt2)(1,1) and (1/sqrt2)(1,-1)") {
  auto E = stack_of({{1, 1}, {1, 0}});
  auto out = omoe::gram_schmidt(E, OrthoMode::kOrthonormal);
  const double s = 1.0 / std::sqrt(2.0);
  CHECK(out.cols[0].at(0) == doctest::Approx(s).epsilon(1e-14));
  CHECK(out.cols[0].at(1) == doctest::Approx(s).epsilon(1e-14));
  CHECK(out.cols[1].at(0) == doctest::Approx(s).epsilon(1e-14));
  CHECK(out.cols[1].at(1) == doctest::Approx(-s).epsilon(1e-14));
}

TEST_CASE("collinear columns: degeneracy flagged, residual near zero") {
  auto E = stack_of({{1, 0}, {2, 0}});
  omoe::GramSchmidtStats stats;
  auto out = omoe::gram_schmidt(E, OrthoMode::kOrthogonal, 1e-8, &stats);
  CHECK(stats.degenerate_columns == 1);
  CHECK(std::abs(out.cols[1].at(0)) < 1e-8);
  CHECK(std::abs(out.cols[1].at(1)) < 1e-8);
  CHECK(omoe::gram_schmidt_degenerate(E, 1e-8));

  CHECK_THROWS_AS(omoe::gram_schmidt(E, OrthoMode::kOrthonormal), omoe::NumericError);
}

TEST_CASE("off mode is the identity") {
  omoe::Rng rng(1);
  auto E = random_stack(5, 3, rng);
  auto out = omoe::gram_schmidt(E, OrthoMode::kOff);
  for (size_t j = 0; j < 3; ++j) CHECK(out.cols[j].values() == E.cols[j].values());
}

TEST_CASE("property: orthogonality of full-rank random stacks") {
  omoe::Rng rng(42);
  for (int trial = 0; trial < 50; ++trial) {
    const size_t d = 2 + rng.next_u64() % 7;
    const size_t k = 1 + rng.next_u64() % std::min<size_t>(d, 4);
    auto E = random_stack(d, k, rng);
    auto out = omoe::gram_schmidt(E, OrthoMode::kOrthogonal);
    CHECK(pair_cos_bound_violation(out) <= 1e-6);
  }
}

TEST_CASE("property: span preservation for full-rank stacks") {
  omoe::Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const size_t d = 3 + rng.next_u64() % 5;
    const size_t k = 2 + rng.next_u64() % std::min<size_t>(d - 1, 3);
    auto E = random_stack(d, k, rng);
    auto out = omoe::gram_schmidt(E, OrthoMode::kOrthogonal);
    // reconstruct each input column from the output basis
    for (size_t j = 0; j < k; ++j) {
      std::vector<double> recon(d, 0.0);
      for (size_t i = 0; i < k; ++i) {
        double num = 0.0, den = 0.0;
        for (size_t t = 0; t < d; ++t) {
          num += E.cols[j].at(t) * out.cols[i].at(t);
          den += out.cols[i].at(t) * out.cols[i].at(t);
        }
        const double c = num / den;
        for (size_t t = 0; t < d; ++t) recon[t] += c * out.cols[i].at(t);
      }
      double err = 0.0, norm = 0.0;
      for (size_t t = 0; t < d; ++t) {
        err += (recon[t] - E.cols[j].at(t)) * (recon[t] - E.cols[j].at(t));
        norm += E.cols[j].at(t) * E.cols[j].at(t);
      }
      CHECK(std::sqrt(err / norm) < 1e-8);
    }
  }
}

TEST_CASE("property: idempotence in orthogonal mode") {
  omoe::Rng rng(19);
  for (int trial = 0; trial < 20; ++trial) {
    auto E = random_stack(6, 3, rng);
    auto once = omoe::gram_schmidt(E, OrthoMode::kOrthogonal);
    auto twice = omoe::gram_schmidt(once, OrthoMode::kOrthogonal);
    for (size_t j = 0; j < 3; ++j)
      for (size_t t = 0; t < 6; ++t)
        CHECK(std::abs(twice.cols[j].at(t) - once.cols[j].at(t)) < 1e-10);
  }
}

TEST_CASE("first output column aliases the first input column bitwise") {
  omoe::Rng rng(23);
  auto E = random_stack(5, 3, rng);
  auto out = omoe::gram_schmidt(E, OrthoMode::kOrthogonal);
  CHECK(out.cols[0].node() == E.cols[0].node());
}

TEST_CASE("orthonormal mode lands on the Stiefel manifold") {
  omoe::Rng rng(29);
  for (int trial = 0; trial < 20; ++trial) {
    auto E = random_stack(7, 4, rng);
    auto out = omoe::gram_schmidt(E, OrthoMode::kOrthonormal);
    CHECK(omoe::stiefel_residual(out) < 1e-6);
  }
}

TEST_CASE("stiefel_residual oracles") {
  auto basis = stack_of({{1, 0, 0}, {0, 1, 0}});
  CHECK(omoe::stiefel_residual(basis) == 0.0);

  // both columns the same unit vector: ||[[0,1],[1,0]]||_F = sqrt(2)
  auto same = stack_of({{1, 0, 0}, {1, 0, 0}});
  CHECK(omoe::stiefel_residual(same) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-14));
}

TEST_CASE("order sensitivity: permuted inputs still orthogonalize") {
  omoe::Rng rng(31);
  auto E = random_stack(5, 3, rng);
  auto P = ExpertStack<double>::from_columns({E.cols[2], E.cols[0], E.cols[1]});
  auto out = omoe::gram_schmidt(P, OrthoMode::kOrthogonal);
  CHECK(pair_cos_bound_violation(out) <= 1e-6);
  CHECK(out.cols[0].node() == E.cols[2].node());
}

TEST_CASE("k = 1 gradient is the identity map") {
  auto c = Tensor<double>::from_data({3}, {1.0, -2.0, 0.5}, true);
  auto E = ExpertStack<double>::from_columns({c});
  auto out = omoe::gram_schmidt(E, OrthoMode::kOrthogonal);
  auto loss = omoe::sum(out.cols[0]);
  omoe::backward(loss);
  for (double g : c.grad()) CHECK(g == 1.0);
}

TEST_CASE("loss touching only e1' has zero gradient w.r.t. e2 in orthogonal mode") {
  auto c1 = Tensor<double>::from_data({3}, {1.0, 0.5, -0.2}, true);
  auto c2 = Tensor<double>::from_data({3}, {0.3, 1.0, 0.7}, true);
  auto out = omoe::gram_schmidt(ExpertStack<double>::from_columns({c1, c2}),
                                OrthoMode::kOrthogonal);
  auto loss = omoe::dot(out.cols[0], out.cols[0]);
  omoe::backward(loss);
  bool c1_nonzero = false;
  for (double g : c1.grad()) c1_nonzero |= (g != 0.0);
  CHECK(c1_nonzero);
  bool c2_nonzero = false;
  if (c2.has_grad())
    for (double g : c2.grad()) c2_nonzero |= (g != 0.0);
  CHECK_FALSE(c2_nonzero);
}

TEST_CASE("backward matches finite differences on random full-rank stacks") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    omoe::Rng rng(seed + 900);
    const size_t d = 3 + seed % 6;                       // up to 8
    const size_t k = 2 + seed % std::min<size_t>(d - 1, 3);  // up to 4
    auto E = random_stack(d, k, rng);
    // flatten all columns into one parameter tensor for the check
    std::vector<double> flat;
    for (const auto& c : E.cols) flat.insert(flat.end(), c.values().begin(), c.values().end());
    auto packed = Tensor<double>::from_data({k * d}, flat);

    // direction-sensitive weights so the loss is not norm-invariant
    std::vector<Tensor<double>> probes;
    for (size_t j = 0; j < k; ++j) {
      std::vector<double> w(d);
      for (auto& x : w) x = rng.normal();
      probes.push_back(Tensor<double>::from_data({d}, std::move(w)));
    }

    auto run = [d, k, &probes](const Tensor<double>& p, OrthoMode mode) {
      auto mat = omoe::stack_rows(std::vector<Tensor<double>>{p});  // [1 x kd]
      std::vector<Tensor<double>> cols;
      for (size_t j = 0; j < k; ++j)
        cols.push_back(omoe::slice_row(omoe::slice_cols(mat, j * d, (j + 1) * d), 0));
      auto out = omoe::gram_schmidt(ExpertStack<double>::from_columns(cols), mode);
      Tensor<double> loss = Tensor<double>::scalar(0.0);
      for (size_t j = 0; j < k; ++j) {
        auto lin = omoe::dot(out.cols[j], probes[j]);
        loss = omoe::add(loss, omoe::mul(lin, lin));
      }
      return loss;
    };

    CHECK(omoe::finite_diff_check(
              [&](const Tensor<double>& p) { return run(p, OrthoMode::kOrthogonal); }, packed) <
          1e-5);
    CHECK(omoe::finite_diff_check(
              [&](const Tensor<double>& p) { return run(p, OrthoMode::kOrthonormal); }, packed) <
          1e-5);
  }
}

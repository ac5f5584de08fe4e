// Copyright 2026 The ctflow Authors
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "doctest.h"
#include "helpers.hpp"

#include "ctflow/assignment.hpp"
#include "ctflow/errors.hpp"
#include "ctflow/metrics.hpp"
#include "ctflow/random.hpp"

using namespace ctflow;

namespace {

// Minimum over all permutations, cost averaged; independent of the Hungarian code.
double brute_force_cost(const Tensor& a, const Tensor& b, int order) {
  const Index n = a.rows();
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (Index i = 0; i < n; ++i) {
      double d2 = 0.0;
      for (Index j = 0; j < a.cols(); ++j) {
        const double d = a(i, j) - b(perm[static_cast<std::size_t>(i)], j);
        d2 += d * d;
      }
      c += order == 1 ? std::sqrt(d2) : d2;
    }
    best = std::min(best, c / static_cast<double>(n));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace

TEST_CASE("exact transport equals enumeration on small clouds") {
  RandomStream s = make_stream(2, {stream_tag::kEstimator});
  for (int trial = 0; trial < 60; ++trial) {
    const Index n = 1 + trial % 6;
    const Index d = 1 + trial % 3;
    const Tensor a = draw_gaussian(s, n, d);
    const Tensor b = draw_gaussian(s, n, d);
    for (int order : {1, 2}) {
      const TransportPlan plan = exact_transport(a, b, order);
      CHECK(plan.cost == doctest::Approx(brute_force_cost(a, b, order)).epsilon(1e-12));
      std::vector<Index> sorted = plan.assignment;
      std::sort(sorted.begin(), sorted.end());
      for (Index i = 0; i < n; ++i) REQUIRE(sorted[static_cast<std::size_t>(i)] == i);
    }
    CHECK(wasserstein_exact(a, b, 1) <= wasserstein_exact(a, b, 2) + 1e-12);
  }
}

TEST_CASE("hungarian on a hand-built matrix") {
  const Tensor cost = Tensor::from_rows({{4, 1, 3}, {2, 0, 5}, {3, 2, 2}});
  const std::vector<Index> a = optimal_assignment(cost);
  CHECK(assignment_cost(cost, a) == doctest::Approx(5.0 / 3.0));
  CHECK(a == std::vector<Index>{1, 0, 2});
}

TEST_CASE("wasserstein: metric properties") {
  RandomStream s = make_stream(3, {stream_tag::kEstimator});
  const Tensor a = draw_gaussian(s, 40, 2);
  const Tensor b = draw_gaussian(s, 40, 2);
  const Tensor c = draw_gaussian(s, 40, 2);
  for (int order : {1, 2}) {
    CHECK(wasserstein_exact(a, a, order) == 0.0);
    CHECK(wasserstein_exact(a, b, order) == doctest::Approx(wasserstein_exact(b, a, order)).epsilon(1e-12));
    CHECK(wasserstein_exact(a, c, order) <= wasserstein_exact(a, b, order) + wasserstein_exact(b, c, order) + 1e-12);
  }
  // A rigid shift moves every point by the same vector.
  Tensor shifted = a;
  for (Index i = 0; i < a.rows(); ++i) shifted(i, 0) += 0.75;
  CHECK(wasserstein_exact(a, shifted, 2) == doctest::Approx(0.75).epsilon(1e-12));
  // Row order is irrelevant.
  Tensor reversed(a.rows(), a.cols());
  for (Index i = 0; i < a.rows(); ++i) reversed.set_rows(i, a.rows_slice(a.rows() - 1 - i, 1));
  CHECK(wasserstein_exact(reversed, b, 1) == doctest::Approx(wasserstein_exact(a, b, 1)).epsilon(1e-12));
}

TEST_CASE("wasserstein: contract and size errors") {
  CHECK_THROWS_AS(wasserstein_exact(Tensor(3, 2), Tensor(4, 2), 1), ContractError);
  CHECK_THROWS_AS(wasserstein_exact(Tensor(3, 2), Tensor(3, 1), 1), ContractError);
  CHECK_THROWS_AS(wasserstein_exact(Tensor(3, 2), Tensor(3, 2), 3), ContractError);
  const Index big = kMaxExactParticles + 1;
  CHECK_THROWS_AS(exact_transport(Tensor(big, 1), Tensor(big, 1), 1), SizeError);
}

TEST_CASE("w2_gaussian closed form") {
  const GaussianMoments a = make_moments({0.0}, Tensor::scalar(4.0));
  const GaussianMoments b = make_moments({3.0}, Tensor::scalar(1.0));
  // 1-D: (m1 - m2)^2 + (s1 - s2)^2.
  CHECK(w2_gaussian(a, b) == doctest::Approx(std::sqrt(9.0 + 1.0)));
  const GaussianMoments c = make_moments({1.0, 2.0}, Tensor::from_rows({{4, 0}, {0, 9}}));
  const GaussianMoments d = make_moments({0.0, 0.0}, Tensor::from_rows({{1, 0}, {0, 1}}));
  CHECK(w2_gaussian(c, d) == doctest::Approx(std::sqrt(1.0 + 4.0 + 1.0 + 4.0)));
  CHECK(w2_gaussian(c, c) == doctest::Approx(0.0).epsilon(1e-12));
  // Commuting but rotated covariances.
  const Tensor r = Tensor::from_rows({{2.5, 1.5}, {1.5, 2.5}});  // eigenvalues 4 and 1
  const GaussianMoments e = make_moments({0.0, 0.0}, r);
  CHECK(w2_gaussian(e, d) == doctest::Approx(1.0));
  CHECK_THROWS_AS(w2_gaussian(make_moments({0.0}, Tensor::scalar(-1.0)), b), NumericError);
}

TEST_CASE("empirical_moments examples") {
  const GaussianMoments m = empirical_moments(Tensor::from_rows({{1, 2}, {3, 6}}));
  CHECK(m.mean == Tensor::row({2, 4}));
  CHECK(m.covariance == Tensor::from_rows({{2, 4}, {4, 8}}));
  CHECK_THROWS_AS(empirical_moments(Tensor::from_rows({{1, 2}})), ContractError);
}

TEST_CASE("psi parsing and gaussian expectations") {
  CHECK(parse_psi("identity").kind == PsiKind::kCoordinate);
  CHECK(parse_psi("coordinate:1").coordinate == 1);
  CHECK(parse_psi("clamped_norm:2.5").clamp == 2.5);
  CHECK(to_string(parse_psi("clamped_norm:2.5")) == "clamped_norm:2.5");
  CHECK_THROWS_AS(parse_psi("cube"), ConfigError);
  CHECK_THROWS_AS(parse_psi("clamped_norm:-1"), ConfigError);

  CHECK(gaussian_expectation_1d(parse_psi("identity"), 1.5, 2.0) == 1.5);
  CHECK(gaussian_expectation_1d(parse_psi("clamped_norm:1"), -3.0, 0.0) == 1.0);
  // E min(|Z|, c) = 2 (phi(0) - phi(c)) + 2 c (1 - Phi(c)) for Z ~ N(0, 1).
  for (double c : {0.5, 1.0, 2.0}) {
    const double phi0 = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    const double phic = phi0 * std::exp(-0.5 * c * c);
    const double tail = 0.5 * std::erfc(c / std::sqrt(2.0));
    const double want = 2.0 * (phi0 - phic) + 2.0 * c * tail;
    PsiSpec p{PsiKind::kClampedNorm, 0, c};
    CHECK(gaussian_expectation_1d(p, 0.0, 1.0) == doctest::Approx(want).epsilon(1e-9));
  }
  const TestFunction f = make_psi(parse_psi("clamped_norm:1"));
  const double z[2] = {3.0, 4.0};
  CHECK(f(z) == 1.0);
}

TEST_CASE("mse_estimate rejects non-OU targets and gives a finite estimate") {
  CHECK_THROWS_AS(mse_estimate(make_target("std_normal_2d"), parse_psi("identity"), FlowConfig{0.1, 10}, {}, 4, 1),
                  ContractError);
  const MseEstimate e = mse_estimate(make_target("ou"), parse_psi("identity"), FlowConfig{0.1, 100}, {}, 50, 1);
  CHECK(e.repetitions == 50);
  CHECK(e.mse > 0.0);
  CHECK(e.standard_error > 0.0);
  CHECK(e.reference == 0.0);
  // The time average of a stationary OU chain over T = 10 has variance about 4 / T.
  CHECK(e.mse > 0.15);
  CHECK(e.mse < 0.6);
}

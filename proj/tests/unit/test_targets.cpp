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


#include <cmath>
#include <numbers>

#include "doctest.h"
#include "helpers.hpp"

#include "ctflow/errors.hpp"
#include "ctflow/linalg.hpp"
#include "ctflow/targets.hpp"

using namespace ctflow;
using ctflow::testing::max_abs_diff;
using ctflow::testing::tensor_from_json;

TEST_CASE("toy potentials match golden values and gradients") {
  const auto all = ctflow::testing::golden();
  REQUIRE(all["potentials"].size() == 2);
  for (const auto& g : all["potentials"]) {
    const std::string name = g["name"];
    CAPTURE(name);
    const EnergyModel m = make_toy_potential(name);
    const Tensor z = tensor_from_json(g["input"]);
    const Tensor want = tensor_from_json(g["log_density"]);
    const Tensor got = m.log_density(z);
    for (Index i = 0; i < z.rows(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
    CHECK(max_abs_diff(m.grad_log_density(z), tensor_from_json(g["grad"])) < 1e-10);
  }
  CHECK_THROWS_AS(make_toy_potential("banana"), ConfigError);
}

TEST_CASE("gaussian: density, normalizer and gradient by hand") {
  const Tensor cov = Tensor::from_rows({{2.0, 0.5}, {0.5, 1.0}});
  const EnergyModel g = make_gaussian(Tensor::row({1.0, -1.0}), cov);
  REQUIRE(g.log_normalizer().has_value());
  const double want_log_z = std::log(2.0 * std::numbers::pi) + 0.5 * std::log(1.75);
  CHECK(*g.log_normalizer() == doctest::Approx(want_log_z).epsilon(1e-13));

  // precision = inverse(cov) = [[1, -0.5], [-0.5, 2]] / 1.75
  const Tensor z = Tensor::row({2.0, 0.0});
  const double dx = 1.0, dy = 1.0;
  const double quad = (dx * dx - dx * dy + 2.0 * dy * dy) / 1.75;
  CHECK(g.log_density(z).item() == doctest::Approx(-0.5 * quad));
  const Tensor grad = g.grad_log_density(z);
  CHECK(grad[0] == doctest::Approx(-(dx - 0.5 * dy) / 1.75));
  CHECK(grad[1] == doctest::Approx(-(-0.5 * dx + 2.0 * dy) / 1.75));

  CHECK_THROWS_AS(make_gaussian(Tensor::row({0.0, 0.0}), Tensor::from_rows({{1, 2}, {2, 1}})), NumericError);
  CHECK_THROWS_AS(g.log_density(Tensor::row({1.0})), SignatureError);
}

TEST_CASE("gaussian sampler reproduces its moments") {
  const Tensor cov = Tensor::from_rows({{2.0, 0.5}, {0.5, 1.0}});
  const EnergyModel g = make_gaussian(Tensor::row({1.0, -1.0}), cov);
  RandomStream s = make_stream(4, {stream_tag::kData});
  const Index n = 50000;
  const Tensor x = g.sample(s, n);
  double m0 = 0, m1 = 0;
  for (Index i = 0; i < n; ++i) m0 += x(i, 0), m1 += x(i, 1);
  m0 /= n, m1 /= n;
  double c00 = 0, c01 = 0, c11 = 0;
  for (Index i = 0; i < n; ++i) {
    c00 += (x(i, 0) - m0) * (x(i, 0) - m0);
    c01 += (x(i, 0) - m0) * (x(i, 1) - m1);
    c11 += (x(i, 1) - m1) * (x(i, 1) - m1);
  }
  CHECK(m0 == doctest::Approx(1.0).epsilon(0.03));
  CHECK(m1 == doctest::Approx(-1.0).epsilon(0.03));
  CHECK(c00 / (n - 1) == doctest::Approx(2.0).epsilon(0.03));
  CHECK(c01 / (n - 1) == doctest::Approx(0.5).epsilon(0.06));
  CHECK(c11 / (n - 1) == doctest::Approx(1.0).epsilon(0.03));
}

TEST_CASE("mixture2: normalizer integrates, sampler is balanced") {
  const EnergyModel m = make_target("mixture2");
  REQUIRE(m.log_normalizer().has_value());
  // Riemann sum of exp(log_density) on a wide grid.
  const double lo = -10.0, step = 0.05;
  const Index n = 400;
  Tensor grid(n * n, 2);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      grid(i * n + j, 0) = lo + step * (i + 0.5);
      grid(i * n + j, 1) = lo + step * (j + 0.5);
    }
  }
  const Tensor ld = m.log_density(grid);
  double total = 0.0;
  for (Index i = 0; i < ld.size(); ++i) total += std::exp(ld[i]);
  CHECK(std::log(total * step * step) == doctest::Approx(*m.log_normalizer()).epsilon(1e-6));

  RandomStream s = make_stream(1, {stream_tag::kData});
  const Tensor x = m.sample(s, 20000);
  double right = 0.0, mean_y = 0.0;
  for (Index i = 0; i < x.rows(); ++i) right += x(i, 0) > 0.0, mean_y += x(i, 1);
  CHECK(right / 20000.0 == doctest::Approx(0.5).epsilon(0.03));
  CHECK(std::abs(mean_y / 20000.0) < 0.03);
}

TEST_CASE("named targets") {
  for (const auto& name : target_names()) {
    CAPTURE(name);
    CHECK(is_target_name(name));
    const EnergyModel m = make_target(name);
    CHECK(m.dimension() >= 1);
  }
  CHECK_FALSE(is_target_name("banana"));
  CHECK_THROWS_AS(make_target("banana"), ConfigError);
  CHECK(*make_target("std_normal_2d").log_normalizer() == doctest::Approx(std::log(2.0 * std::numbers::pi)));
  CHECK_FALSE(make_target("ring_bimodal").has_exact_sampler());
  RandomStream s(1, 1);
  CHECK_THROWS_AS(make_target("ring_bimodal").sample(s, 4), ContractError);
}

TEST_CASE("OU analytic moments") {
  const GaussianMoments a = ou_analytic_moments(3.0, 4.0, 0.0);
  CHECK(a.mean.item() == 3.0);
  CHECK(a.covariance.item() == 4.0);
  const GaussianMoments b = ou_analytic_moments(3.0, 4.0, 2.0);
  CHECK(b.mean.item() == doctest::Approx(3.0 * std::exp(-1.0)));
  CHECK(b.covariance.item() == doctest::Approx(1.0 + 3.0 * std::exp(-2.0)));
  const GaussianMoments inf = ou_analytic_moments(3.0, 4.0, std::numeric_limits<double>::infinity());
  CHECK(inf.mean.item() == 0.0);
  CHECK(inf.covariance.item() == 1.0);
  const GaussianMoments p = ou_analytic_moments_from_point(2.0, 1.0);
  CHECK(p.covariance.item() == doctest::Approx(1.0 - std::exp(-1.0)));
  CHECK_THROWS_AS(ou_analytic_moments(0.0, 0.0, 1.0), ContractError);
  CHECK_THROWS_AS(ou_analytic_moments(0.0, 1.0, -1.0), ContractError);
}

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
#include "ctflow/macgan.hpp"

using namespace ctflow;

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

// U(x; a) = -a |x|^2.
EnergyNet quadratic_energy(double a) {
  EnergyNet e;
  e.u = DifferentiableFunction("quadratic", {{"a", {}, Init::kConstant, a}}, 2, 1,
                               [](std::span<const Var> p, Var x) { return -1.0 * (sum_rows(square(x)) * p[0]); });
  e.theta.add("a", {}, std::vector<double>{a});
  return e;
}

ImplicitGenerator scaled_identity(double s) { return make_affine_generator(Tensor::from_rows({{s, 0}, {0, s}}), Tensor::row({0, 0})); }

}  // namespace

TEST_CASE("regularizer names and learning-rate schedule") {
  for (const char* n : {"none", "weight_clip", "gradient_penalty"}) CHECK(to_string(parse_energy_regularizer(n)) == n);
  CHECK_THROWS_AS(parse_energy_regularizer("spectral"), ConfigError);
  CHECK(scheduled_learning_rate(10, 100, 1e-3) == 1e-3);
  CHECK(scheduled_learning_rate(49, 100, 1e-3) == 1e-3);
  CHECK(scheduled_learning_rate(60, 100, 1e-3) == doctest::Approx(1e-3 * 40.0 / 50.0));
}

TEST_CASE("mle gradient of a quadratic energy") {
  const EnergyNet e = quadratic_energy(0.5);
  const Tensor data = Tensor::from_rows({{1, 0}, {0, 2}});
  const Tensor model = Tensor::from_rows({{3, 0}, {0, 0}, {1, 1}});
  // d/da (E_data[-a|x|^2] - E_model[-a|x|^2]) = -(2.5) + (11/3).
  const ParamMap g = mle_gradient(e, data, model);
  CHECK(g.at("a").values[0] == doctest::Approx(-2.5 + 11.0 / 3.0));
  CHECK(mle_surrogate(e, data, model) == doctest::Approx(0.5 * (-2.5 + 11.0 / 3.0)));
  // A single data point is a valid batch.
  CHECK(mle_gradient(e, Tensor::row({1, 1}), model).at("a").values[0] == doctest::Approx(-2.0 + 11.0 / 3.0));
  CHECK_THROWS_AS(mle_gradient(e, Tensor(0, 2), model), ContractError);
  CHECK_THROWS_AS(mle_gradient(e, Tensor::row({1, 1, 1}), model), ContractError);
}

TEST_CASE("energy network gradients") {
  RandomStream init(1, 1);
  const EnergyNet e = make_energy_net(2, {8, 8}, 0.25, EnergyRegularizer::kNone, 1.0, 10.0, init);
  const EnergyModel t = energy_target(e);
  RandomStream s(1, 2);
  for (int i = 0; i < 5; ++i) CHECK(check_gradient(t.function(), t.params(), draw_gaussian(s, 1, 2), 1e-5) < 1e-5);
  // Confinement dominates far away.
  CHECK(t.log_density(Tensor::row({100.0, 0.0})).item() < t.log_density(Tensor::row({0.0, 0.0})).item());
}

TEST_CASE("log partition: self-normalized case is exact") {
  const EnergyModel u = make_target("std_normal_2d");
  RandomStream s(2, 2);
  const LogPartitionEstimate est = log_partition_estimate(u, scaled_identity(1.0), 64, s);
  CHECK(est.log_z == doctest::Approx(kLog2Pi).epsilon(1e-12));
  CHECK(est.standard_error < 1e-10);
}

TEST_CASE("log partition converges for a wider proposal") {
  const EnergyModel u = make_target("std_normal_2d");
  RandomStream s(3, 3);
  const LogPartitionEstimate est = log_partition_estimate(u, scaled_identity(1.5), 20000, s);
  CHECK(std::abs(est.log_z - kLog2Pi) < 4.0 * est.standard_error + 1e-3);
  CHECK(est.standard_error < 0.02);
  CHECK_THROWS_AS(log_partition_estimate(u, scaled_identity(1.5), 1, s), ContractError);
}

TEST_CASE("log partition of a flat energy has an exploding standard error") {
  // U = 0 is not normalizable; the importance weights 1 / q have infinite variance.
  const EnergyModel flat("flat", DifferentiableFunction("flat", {}, 2, 1, [](std::span<const Var>, Var x) {
                           return 0.0 * sum_rows(x);
                         }));
  RandomStream s(4, 4);
  const double small = log_partition_estimate(flat, scaled_identity(1.0), 100, s).log_z;
  const LogPartitionEstimate big = log_partition_estimate(flat, scaled_identity(1.0), 100000, s);
  CHECK(big.log_z > small);
  CHECK(big.standard_error > 0.05);
}

TEST_CASE("bound check: matched proposal closes the gap, mismatched leaves one") {
  const EnergyModel u = make_target("std_normal_2d");
  RandomStream d(5, 5);
  const Tensor data = u.sample(d, 128);
  RandomStream s(5, 6);
  const MleBoundReport matched = mle_bound_check(u, scaled_identity(1.0), data, 500, s);
  CHECK(std::abs(matched.gap) <= 3.0 * matched.gap_se + 1e-10);
  CHECK(matched.lhs == doctest::Approx(matched.rhs).epsilon(1e-10));
  CHECK(matched.log_z == doctest::Approx(kLog2Pi));

  const MleBoundReport wide = mle_bound_check(u, scaled_identity(2.0), data, 4000, s);
  CHECK(wide.gap > 3.0 * wide.gap_se);
  CHECK(wide.rhs >= wide.lhs);
  CHECK(wide.gap == doctest::Approx(wide.rhs - wide.lhs));
}

TEST_CASE("energy updates: ascent, clipping") {
  RandomStream init(6, 1);
  EnergyNet e = make_energy_net(2, {8}, 0.25, EnergyRegularizer::kWeightClip, 0.1, 10.0, init);
  CHECK(e.theta.max_abs() <= 0.1);
  RandomStream s(6, 2);
  Tensor data = draw_gaussian(s, 64, 2);
  for (Index i = 0; i < data.rows(); ++i) data(i, 0) += 2.0;
  const Tensor model = draw_gaussian(s, 64, 2);
  Optimizer opt(OptimizerKind::kAdam, 0.01);
  const double before = mle_surrogate(e, data, model);
  for (int k = 0; k < 40; ++k) {
    energy_update(e, data, model, opt, s);
    REQUIRE(e.theta.max_abs() <= 0.1);
  }
  CHECK(mle_surrogate(e, data, model) > before);

  EnergyNet gp = make_energy_net(2, {8}, 0.25, EnergyRegularizer::kGradientPenalty, 1.0, 10.0, init);
  Optimizer opt2(OptimizerKind::kAdam, 0.01);
  CHECK_THROWS_AS(energy_update(gp, data, model.rows_slice(0, 10), opt2, s), ContractError);
  CHECK_NOTHROW(energy_update(gp, data, model, opt2, s));
}

TEST_CASE("training with K = 0 runs and logs each epoch") {
  const EnergyModel mix = make_target("mixture2");
  RandomStream ds(7, 1);
  const Tensor data = mix.sample(ds, 64);
  RandomStream hs(7, 2);
  RandomStream init(7, 3);
  EnergyNet e = make_energy_net(2, {8}, 0.25, EnergyRegularizer::kWeightClip, 1.0, 10.0, init);
  GeneratorSpec spec;
  spec.arch = GeneratorArch::kPlanar;
  spec.planar_layers = 2;
  ImplicitGenerator g = make_generator(spec, init);
  MacGanConfig c;
  c.flow = {0.05, 0};
  c.distill.batch_size = 32;
  c.epochs = 6;
  c.data_batch = 32;
  c.bound_samples = 32;
  c.heldout = mix.sample(hs, 32);
  c.diag_samples = 32;
  c.diag_every = 3;
  const MacGanResult r = train_macgan(e, g, data, c);
  REQUIRE(r.log.size() == 6);
  Index diags = 0;
  for (const auto& ep : r.log) {
    CHECK(std::isfinite(ep.e_data_u));
    CHECK(std::isfinite(ep.bound_gap));
    CHECK(ep.theta_max_abs <= 1.0);
    diags += std::isnan(ep.w1_diag) ? 0 : 1;
  }
  CHECK(diags >= 2);
  CHECK_FALSE(r.energy.theta == e.theta);

  const MacGanResult again = train_macgan(e, g, data, c);
  CHECK(again.energy.theta == r.energy.theta);
  CHECK(again.generator.params() == r.generator.params());
}

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

#include "doctest.h"
#include "helpers.hpp"

#include "ctflow/amortize.hpp"
#include "ctflow/errors.hpp"
#include "ctflow/flow.hpp"
#include "ctflow/linalg.hpp"
#include "ctflow/metrics.hpp"

using namespace ctflow;

namespace {

ImplicitGenerator small_planar(std::uint64_t seed) {
  GeneratorSpec spec;
  spec.arch = GeneratorArch::kPlanar;
  spec.planar_layers = 2;
  spec.noise_scale = 0.7;
  RandomStream init = make_stream(seed, {stream_tag::kParams});
  return make_generator(spec, init);
}

// Central differences of distill_objective's value over every flat parameter.
std::vector<double> numeric_grad(const ImplicitGenerator& gen, std::span<const TeacherBatch> batches,
                                 const DistillConfig& config, std::uint64_t seed) {
  ImplicitGenerator g = gen;
  std::vector<double> flat = gen.params().flatten();
  std::vector<double> out(flat.size());
  const double eps = 1e-6;
  for (std::size_t i = 0; i < flat.size(); ++i) {
    ParamMap p = gen.params();
    std::vector<double> f = flat;
    f[i] += eps;
    p.assign_flat(f);
    g.set_params(p);
    const double up = distill_objective(g, batches, config, nullptr, seed, 0).value;
    f[i] -= 2.0 * eps;
    p.assign_flat(f);
    g.set_params(p);
    const double down = distill_objective(g, batches, config, nullptr, seed, 0).value;
    out[i] = (up - down) / (2.0 * eps);
  }
  return out;
}

}  // namespace

TEST_CASE("distance and regularizer names") {
  for (const char* n : {"euclidean", "exact_ot", "critic"}) CHECK(to_string(parse_distance_kind(n)) == n);
  for (const char* n : {"none", "weight_clip", "gradient_penalty"}) CHECK(to_string(parse_critic_regularizer(n)) == n);
  CHECK_THROWS_AS(parse_distance_kind("mmd"), ConfigError);
  DistillConfig bad;
  bad.batch_size = 1;
  CHECK_THROWS_AS(bad.validate(), ContractError);
}

TEST_CASE("teacher batch replays draw_generator plus Langevin steps") {
  const ImplicitGenerator g = small_planar(1);
  const EnergyModel target = make_target("std_normal_2d");
  const TeacherBatch t = make_teacher_batch(g, empty_condition(g), target, 0.05, 3, 8, 2, 6);
  RandomStream s = make_stream(8, {stream_tag::kGenerator, 2});
  const GeneratorDraw d = draw_generator(g, empty_condition(g), s, 6);
  CHECK(bit_identical(t.noise, d.noise));
  CHECK(bit_identical(t.student, d.samples.samples()));
  const ParticleCloud flowed = run_flow(d.samples, target, FlowConfig{0.05, 3}, 8, 2);
  CHECK(bit_identical(t.teacher, flowed.samples()));
}

TEST_CASE("distillation gradients agree with central differences") {
  const ImplicitGenerator g = small_planar(2);
  const EnergyModel target = make_toy_potential("ring_bimodal");
  std::vector<TeacherBatch> batches;
  batches.push_back(make_teacher_batch(g, empty_condition(g), target, 0.02, 5, 4, 0, 12));
  batches.push_back(make_teacher_batch(g, empty_condition(g), target, 0.02, 5, 4, 1, 12));
  for (DistanceKind kind : {DistanceKind::kEuclidean, DistanceKind::kExactOt}) {
    CAPTURE(to_string(kind));
    DistillConfig c;
    c.kind = kind;
    c.batch_size = 12;
    const DistillObjective obj = distill_objective(g, batches, c, nullptr, 4, 0);
    CHECK(obj.distances.size() == 2);
    const std::vector<double> got = obj.grad.flatten();
    const std::vector<double> want = numeric_grad(g, batches, c, 4);
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-5).scale(1e-3));
    }
  }
}

TEST_CASE("euclidean objective on a known pairing") {
  const ImplicitGenerator g = make_affine_generator(linalg::identity(2), Tensor::row({0.0, 0.0}));
  TeacherBatch t;
  t.condition = empty_condition(g);
  t.noise = Tensor::from_rows({{1, 0}, {0, 1}});
  t.student = t.noise;
  t.teacher = Tensor::from_rows({{1, 2}, {3, 1}});
  DistillConfig c;
  c.kind = DistanceKind::kEuclidean;
  c.batch_size = 2;
  const std::vector<TeacherBatch> batches = {t};
  const DistillObjective obj = distill_objective(g, batches, c, nullptr, 1, 0);
  CHECK(obj.value == doctest::Approx((4.0 + 9.0) / 2.0));
  // d/db mean |omega + b - teacher|^2 = 2 mean(omega - teacher).
  CHECK(obj.grad.at(g.params().entries().back().name).values[0] == doctest::Approx(2.0 * (0.0 - 3.0) / 2.0));
}

TEST_CASE("repeated distillation steps pull the generator onto a fixed teacher") {
  ImplicitGenerator g = make_affine_generator(linalg::identity(2), Tensor::row({0.0, 0.0}));
  const ImplicitGenerator shifted = make_affine_generator(linalg::identity(2), Tensor::row({2.0, -1.0}));
  RandomStream s(3, 3);
  TeacherBatch t;
  t.condition = empty_condition(g);
  t.noise = draw_gaussian(s, 64, 2);
  t.student = g.map(t.condition, t.noise);
  t.teacher = shifted.map(t.condition, t.noise);
  const std::vector<TeacherBatch> batches = {t};
  DistillConfig c;
  c.kind = DistanceKind::kEuclidean;
  c.batch_size = 64;
  c.learning_rate = 0.05;
  c.inner_steps = 10;
  Optimizer opt(OptimizerKind::kAdam, c.learning_rate);
  const double first = distill_step(g, batches, c, opt, nullptr, 1, 0);
  double last = first;
  for (int r = 1; r < 20; ++r) last = distill_step(g, batches, c, opt, nullptr, 1, static_cast<std::uint64_t>(r));
  CHECK(last < 0.01 * first);
  // Fresh noise leaves the two-sample W2 between 64-point clouds as a floor.
  ImplicitGenerator h = make_affine_generator(linalg::identity(2), Tensor::row({0.0, 0.0}));
  c.kind = DistanceKind::kExactOt;
  Optimizer opt2(OptimizerKind::kAdam, c.learning_rate);
  const double ot_first = distill_step(h, batches, c, opt2, nullptr, 1, 0);
  double ot_last = ot_first;
  for (int r = 1; r < 20; ++r) ot_last = distill_step(h, batches, c, opt2, nullptr, 1, static_cast<std::uint64_t>(r));
  CHECK(ot_last < 0.5 * ot_first);
  CHECK(bit_identical(batches[0].teacher, shifted.map(t.condition, t.noise)));

  c.kind = DistanceKind::kCritic;
  CHECK_THROWS_AS(distill_step(g, batches, c, opt, nullptr, 1, 0), ContractError);
}

TEST_CASE("weight clipping keeps every critic parameter inside the box") {
  RandomStream init(1, 1);
  Critic critic = make_critic(2, {8, 8}, CriticRegularizer::kWeightClip, 0.05, 10.0, 0.01, init);
  CHECK(critic.params.max_abs() <= 0.05);
  RandomStream s(2, 2);
  const Tensor real = draw_gaussian(s, 32, 2);
  Tensor fake = draw_gaussian(s, 32, 2);
  for (Index i = 0; i < fake.rows(); ++i) fake(i, 0) += 3.0;
  double before = critic_objective(critic, real, fake);
  for (int k = 0; k < 50; ++k) {
    critic_update(critic, real, fake, 0.01, s);
    REQUIRE(critic.params.max_abs() <= 0.05);
  }
  CHECK(critic_objective(critic, real, fake) > before);
  CHECK_THROWS_AS(critic_update(critic, real, Tensor(3, 2), 0.01, s), ContractError);
}

TEST_CASE("gradient-penalty critic separates shifted clouds") {
  RandomStream init(4, 1);
  Critic critic = make_critic(1, {16}, CriticRegularizer::kGradientPenalty, 0.0, 10.0, 0.01, init);
  RandomStream s(4, 2);
  const Tensor real = draw_gaussian(s, 64, 1);
  Tensor fake = real;
  for (Index i = 0; i < fake.rows(); ++i) fake[i] += 2.0;
  for (int k = 0; k < 300; ++k) critic_update(critic, real, fake, 0.01, s);
  // The dual objective of a 1-Lipschitz critic is at most W1 = 2.
  const double obj = critic_objective(critic, real, fake);
  CHECK(obj > 1.0);
  CHECK(obj < 2.3);
}

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
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"

#include "ctflow/errors.hpp"
#include "ctflow/flow.hpp"
#include "ctflow/linalg.hpp"
#include "ctflow/metrics.hpp"
#include "ctflow/parallel.hpp"

using namespace ctflow;

namespace {

ParticleCloud gaussian_cloud(std::uint64_t seed, Index n, Index d, double mean, double sd) {
  RandomStream s = make_stream(seed, {stream_tag::kInit});
  Tensor z = draw_gaussian(s, n, d);
  for (Index i = 0; i < z.size(); ++i) z[i] = mean + sd * z[i];
  return ParticleCloud(z);
}

}  // namespace

TEST_CASE("step sizes and schedules") {
  FlowConfig c{0.5, 4};
  CHECK(c.step_at(3) == 0.5);
  CHECK(c.total_time() == 2.0);
  FlowConfig dec{0.5, 8, StepSchedule::kDecreasing};
  CHECK(dec.step_at(1) == 0.5);
  CHECK(dec.step_at(8) == doctest::Approx(0.25));
  CHECK(parse_step_schedule("decreasing") == StepSchedule::kDecreasing);
  CHECK_THROWS_AS(parse_step_schedule("cosine"), ConfigError);
  CHECK_THROWS_AS((FlowConfig{-1.0, 3}.validate()), ContractError);
  CHECK_THROWS_AS((FlowConfig{1.0, -3}.validate()), ContractError);
}

TEST_CASE("h = 0 and K = 0 leave the cloud untouched") {
  const EnergyModel target = make_target("std_normal_2d");
  const ParticleCloud c = gaussian_cloud(1, 17, 2, 1.0, 2.0);
  CHECK(bit_identical(run_flow(c, target, FlowConfig{0.0, 25}, 9).samples(), c.samples()));
  CHECK(bit_identical(run_flow(c, target, FlowConfig{0.1, 0}, 9).samples(), c.samples()));
}

TEST_CASE("one step equals the hand-written update") {
  const EnergyModel target = make_target("std_normal_2d");
  const ParticleCloud c = gaussian_cloud(2, 3, 2, 0.0, 1.0);
  const double h = 0.2;
  auto streams = make_particle_streams(5, 0, 3);
  auto replay = streams;
  const ParticleCloud next = langevin_step(c, target, h, streams);
  for (Index i = 0; i < 3; ++i) {
    const auto xi = replay[static_cast<std::size_t>(i)].next_gaussian_pair();
    for (Index j = 0; j < 2; ++j) {
      const double z = c.samples()(i, j);
      CHECK(next.samples()(i, j) == doctest::Approx(z - 0.5 * h * z + std::sqrt(h) * xi[static_cast<std::size_t>(j)]));
    }
  }
  CHECK(streams[0].counter() == 1);
  CHECK_THROWS_AS(langevin_step(c, target, h, std::span<RandomStream>(streams).first(2)), ContractError);
  CHECK_THROWS_AS(langevin_step(c, make_target("ou"), h, streams), ContractError);
}

TEST_CASE("noise-free flow is the explicit Euler recursion") {
  const EnergyModel target = make_target("ou");
  const ParticleCloud c(Tensor::from_rows({{2.0}, {-1.0}}));
  auto streams = make_particle_streams(1, 0, 2);
  const ParticleCloud out = run_flow(c, target, FlowConfig{0.1, 30}, streams, nullptr, false);
  CHECK(out.samples()(0, 0) == doctest::Approx(2.0 * std::pow(0.95, 30)).epsilon(1e-12));
  CHECK(out.samples()(1, 0) == doctest::Approx(-1.0 * std::pow(0.95, 30)).epsilon(1e-12));
}

TEST_CASE("cloud moments follow the discrete-time Gaussian recursion") {
  // z' = a z + sqrt(h) xi with a = 1 - h/2, started from N(3, 4).
  const double h = 0.1, a = 1.0 - 0.5 * h;
  const Index n = 20000, steps = 40;
  const ParticleCloud c = gaussian_cloud(3, n, 1, 3.0, 2.0);
  const ParticleCloud out = run_flow(c, make_target("ou"), FlowConfig{h, steps}, 3);
  const GaussianMoments m0 = empirical_moments(c);
  const GaussianMoments m = empirical_moments(out);
  const double a2k = std::pow(a * a, static_cast<double>(steps));
  const double want_mean = std::pow(a, static_cast<double>(steps)) * m0.mean.item();
  const double want_var = a2k * m0.covariance.item() + h * (1.0 - a2k) / (1.0 - a * a);
  CHECK(std::abs(m.mean.item() - want_mean) < 4.0 * std::sqrt(want_var / n));
  CHECK(std::abs(m.covariance.item() - want_var) < 4.0 * want_var * std::sqrt(2.0 / n));
}

TEST_CASE("flow output does not depend on the worker count") {
  const EnergyModel target = make_toy_potential("sine_wells");
  const ParticleCloud c = gaussian_cloud(4, 301, 2, 0.0, 1.0);
  set_worker_count(1);
  const Tensor one = run_flow(c, target, FlowConfig{0.01, 50}, 11, 2).samples();
  set_worker_count(4);
  const Tensor four = run_flow(c, target, FlowConfig{0.01, 50}, 11, 2).samples();
  set_worker_count(1);
  CHECK(bit_identical(one, four));
  CHECK_FALSE(bit_identical(one, run_flow(c, target, FlowConfig{0.01, 50}, 11, 3).samples()));
}

TEST_CASE("a blow-up raises DivergenceError with its location") {
  const EnergyModel stiff = make_gaussian(Tensor::row({0.0}), Tensor::scalar(1e-3));
  const ParticleCloud c(Tensor::from_rows({{1.0}, {0.5}}));
  try {
    run_flow(c, stiff, FlowConfig{10.0, 1000}, 1);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.step() > 1);
    CHECK(e.step() <= 1000);
    CHECK(e.particle() >= 0);
  }
  CHECK_THROWS_AS(ParticleCloud(Tensor::from_rows({{1.0}, {std::nan("")}})), DivergenceError);
}

TEST_CASE("trajectories and path averages") {
  const ParticleCloud c(Tensor::from_rows({{1.0, 0.0}, {0.0, 1.0}}));
  const FlowTrajectory t0 = simulate_flow(c, make_target("std_normal_2d"), FlowConfig{0.1, 0}, 1);
  CHECK(t0.num_steps() == 0);
  CHECK_THROWS_AS(path_average(t0, [](std::span<const double> z) { return z[0]; }), ContractError);

  const FlowTrajectory t = simulate_flow(c, make_target("std_normal_2d"), FlowConfig{0.1, 5}, 1);
  CHECK(t.num_steps() == 5);
  CHECK(t.initial() == c);
  double want = 0.0;
  for (int k = 1; k <= 5; ++k) {
    for (Index i = 0; i < 2; ++i) want += t.clouds[static_cast<std::size_t>(k)].samples()(i, 0);
  }
  CHECK(path_average(t, [](std::span<const double> z) { return z[0]; }) == doctest::Approx(want / 10.0));
  const DifferentiableFunction first("first", {}, 2, 1, [](std::span<const Var>, Var z) { return slice_cols(z, 0, 1); });
  CHECK(path_average(t, first) == doctest::Approx(want / 10.0));
  CHECK(bit_identical(t.final().samples(), run_flow(c, make_target("std_normal_2d"), FlowConfig{0.1, 5}, 1).samples()));

  std::ostringstream csv;
  write_trajectory_csv(csv, t);
  CHECK(csv.str().rfind("step,particle,z0,z1\n", 0) == 0);
}

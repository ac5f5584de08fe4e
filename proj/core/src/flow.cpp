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

#include "ctflow/flow.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

#include "ctflow/errors.hpp"
#include "ctflow/parallel.hpp"

namespace ctflow {

StepSchedule parse_step_schedule(const std::string& name) {
  if (name == "constant") return StepSchedule::kConstant;
  if (name == "decreasing") return StepSchedule::kDecreasing;
  throw ConfigError("unknown step schedule '" + name + "'");
}

std::string to_string(StepSchedule schedule) {
  return schedule == StepSchedule::kConstant ? "constant" : "decreasing";
}

double FlowConfig::step_at(Index k) const {
  if (schedule == StepSchedule::kConstant) return step_size;
  return step_size * std::pow(static_cast<double>(k), -1.0 / 3.0);
}

double FlowConfig::total_time() const {
  if (schedule == StepSchedule::kConstant) return step_size * static_cast<double>(num_steps);
  double t = 0.0;
  for (Index k = 1; k <= num_steps; ++k) t += step_at(k);
  return t;
}

void FlowConfig::validate() const {
  if (!(step_size >= 0.0) || !std::isfinite(step_size)) throw ContractError("FlowConfig: step size must be >= 0");
  if (num_steps < 0) throw ContractError("FlowConfig: step count must be >= 0");
}

ParticleCloud::ParticleCloud(Tensor samples) : samples_(std::move(samples)) {
  if (samples_.rows() < 1 || samples_.cols() < 1) throw ContractError("ParticleCloud: needs N >= 1 and d >= 1");
  if (const Index bad = samples_.first_non_finite(); bad >= 0) {
    throw DivergenceError(bad / samples_.cols(), -1, "ParticleCloud: non-finite particle");
  }
}

std::vector<RandomStream> make_particle_streams(std::uint64_t seed, std::uint64_t salt, Index count) {
  std::vector<RandomStream> streams;
  streams.reserve(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) {
    streams.push_back(make_stream(seed, {stream_tag::kFlow, salt, static_cast<std::uint64_t>(i)}));
  }
  return streams;
}

ParticleCloud langevin_step(const ParticleCloud& cloud, const EnergyModel& target, double h,
                            std::span<RandomStream> streams, const StepOptions& options) {
  if (!(h >= 0.0)) throw ContractError("langevin_step: h must be >= 0");
  if (target.dimension() != cloud.dimension()) throw ContractError("langevin_step: target dimension mismatch");
  if (static_cast<Index>(streams.size()) != cloud.count()) {
    throw ContractError("langevin_step: need one stream per particle");
  }
  const Index n = cloud.count();
  const Index d = cloud.dimension();
  const Tensor& z = cloud.samples();
  const Tensor grad = target.grad_log_density(z);
  const double root_h = std::sqrt(h);
  Tensor next(n, d);
  parallel_for_rows(n, [&](Index begin, Index end) {
    for (Index i = begin; i < end; ++i) {
      RandomStream& s = streams[static_cast<std::size_t>(i)];
      for (Index j = 0; j < d; j += 2) {
        const auto xi = s.next_gaussian_pair();
        for (Index m = 0; m < 2 && j + m < d; ++m) {
          const Index c = j + m;
          const double g = grad(i, c);
          if (!std::isfinite(g)) {
            throw DivergenceError(i, options.step_index,
                                  "non-finite gradient at particle " + std::to_string(i) + ", step " +
                                      std::to_string(options.step_index));
          }
          double v = z(i, c) + 0.5 * h * g;
          if (options.noise) v += root_h * xi[static_cast<std::size_t>(m)];
          if (!std::isfinite(v)) {
            throw DivergenceError(i, options.step_index,
                                  "particle " + std::to_string(i) + " diverged at step " +
                                      std::to_string(options.step_index));
          }
          next(i, c) = h == 0.0 ? z(i, c) : v;
        }
      }
    }
  });
  return ParticleCloud(std::move(next));
}

ParticleCloud run_flow(const ParticleCloud& initial, const EnergyModel& target, const FlowConfig& config,
                       std::span<RandomStream> streams, const FlowObserver& observer, bool noise) {
  config.validate();
  ParticleCloud cloud = initial;
  if (observer) observer(0, cloud);
  for (Index k = 1; k <= config.num_steps; ++k) {
    cloud = langevin_step(cloud, target, config.step_at(k), streams, {noise, k});
    if (observer) observer(k, cloud);
  }
  return cloud;
}

ParticleCloud run_flow(const ParticleCloud& initial, const EnergyModel& target, const FlowConfig& config,
                       std::uint64_t seed, std::uint64_t salt, const FlowObserver& observer) {
  auto streams = make_particle_streams(seed, salt, initial.count());
  return run_flow(initial, target, config, streams, observer);
}

FlowTrajectory simulate_flow(const ParticleCloud& initial, const EnergyModel& target, const FlowConfig& config,
                             std::uint64_t seed, std::uint64_t salt) {
  FlowTrajectory traj;
  traj.clouds.reserve(static_cast<std::size_t>(config.num_steps) + 1);
  run_flow(initial, target, config, seed, salt, [&](Index, const ParticleCloud& c) { traj.clouds.push_back(c); });
  return traj;
}

double path_average(const FlowTrajectory& trajectory, const TestFunction& psi) {
  if (trajectory.num_steps() < 1) throw ContractError("path_average: needs K >= 1");
  double total = 0.0;
  Index count = 0;
  for (std::size_t k = 1; k < trajectory.clouds.size(); ++k) {
    const auto& c = trajectory.clouds[k];
    for (Index i = 0; i < c.count(); ++i) total += psi(c.particle(i));
    count += c.count();
  }
  return total / static_cast<double>(count);
}

double path_average(const FlowTrajectory& trajectory, const DifferentiableFunction& psi, const ParamMap& params) {
  if (psi.output_dim() != 1) throw ContractError("path_average: psi must be scalar");
  if (trajectory.num_steps() < 1) throw ContractError("path_average: needs K >= 1");
  double total = 0.0;
  Index count = 0;
  for (std::size_t k = 1; k < trajectory.clouds.size(); ++k) {
    const Tensor v = evaluate(psi, params, trajectory.clouds[k].samples());
    for (Index i = 0; i < v.rows(); ++i) total += v(i, 0);
    count += v.rows();
  }
  return total / static_cast<double>(count);
}

void write_trajectory_csv(std::ostream& out, const FlowTrajectory& trajectory) {
  const Index d = trajectory.clouds.empty() ? 0 : trajectory.initial().dimension();
  out << "step,particle";
  for (Index j = 0; j < d; ++j) out << ",z" << j;
  out << '\n';
  char buf[32];
  for (std::size_t k = 0; k < trajectory.clouds.size(); ++k) {
    const auto& c = trajectory.clouds[k];
    for (Index i = 0; i < c.count(); ++i) {
      out << k << ',' << i;
      for (double v : c.particle(i)) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out << ',' << buf;
      }
      out << '\n';
    }
  }
}

}  // namespace ctflow

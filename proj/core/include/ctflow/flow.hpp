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

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ctflow/random.hpp"
#include "ctflow/targets.hpp"

namespace ctflow {

enum class StepSchedule { kConstant, kDecreasing };

StepSchedule parse_step_schedule(const std::string& name);
std::string to_string(StepSchedule schedule);

// Discretized Langevin flow toward a target, with isotropic unit diffusion.
struct FlowConfig {
  double step_size = 1e-3;  // h, or h0 for the decreasing schedule
  Index num_steps = 0;      // K
  StepSchedule schedule = StepSchedule::kConstant;

  // Step size of transition k in 1..K: h, or h0 * k^(-1/3).
  double step_at(Index k) const;
  // Sum of the step sizes (hK for the constant schedule).
  double total_time() const;
  // ContractError unless h >= 0 and K >= 0.
  void validate() const;
};

// N x d equally weighted particles; N >= 1 and every entry finite.
class ParticleCloud {
 public:
  ParticleCloud() = default;
  explicit ParticleCloud(Tensor samples);

  const Tensor& samples() const { return samples_; }
  Index count() const { return samples_.rows(); }
  Index dimension() const { return samples_.cols(); }
  std::span<const double> particle(Index i) const { return samples_.row_span(i); }

  friend bool operator==(const ParticleCloud&, const ParticleCloud&) = default;

 private:
  Tensor samples_;
};

// Clouds z_0 .. z_K sharing (N, d).
struct FlowTrajectory {
  std::vector<ParticleCloud> clouds;

  Index num_steps() const { return static_cast<Index>(clouds.size()) - 1; }
  const ParticleCloud& initial() const { return clouds.front(); }
  const ParticleCloud& final() const { return clouds.back(); }
};

// One independent stream per particle, continued across steps: particle i uses
// stream (seed, derive_stream_id({kFlow, salt, i})).
std::vector<RandomStream> make_particle_streams(std::uint64_t seed, std::uint64_t salt, Index count);

struct StepOptions {
  bool noise = true;  // false gives the explicit Euler step on the drift
  Index step_index = 0;  // reported by DivergenceError
};

// z' = z + (h/2) grad log p(z) + sqrt(h) xi with xi ~ N(0, I) from the
// particle's own stream. Each particle consumes ceil(d/2) blocks per step
// (also when noise is off, so streams stay aligned). h = 0 returns the cloud
// unchanged.
ParticleCloud langevin_step(const ParticleCloud& cloud, const EnergyModel& target, double h,
                            std::span<RandomStream> streams, const StepOptions& options = {});

// Runs the K transitions, calling observer(k, cloud) for k = 0..K. Memory use
// is one cloud regardless of K. Returns the final cloud.
using FlowObserver = std::function<void(Index step, const ParticleCloud& cloud)>;
ParticleCloud run_flow(const ParticleCloud& initial, const EnergyModel& target, const FlowConfig& config,
                       std::span<RandomStream> streams, const FlowObserver& observer = nullptr,
                       bool noise = true);

// Same with per-particle streams derived from (seed, salt).
ParticleCloud run_flow(const ParticleCloud& initial, const EnergyModel& target, const FlowConfig& config,
                       std::uint64_t seed, std::uint64_t salt = 0, const FlowObserver& observer = nullptr);

// Full trajectory of K + 1 clouds.
FlowTrajectory simulate_flow(const ParticleCloud& initial, const EnergyModel& target, const FlowConfig& config,
                             std::uint64_t seed, std::uint64_t salt = 0);

// Mean of psi over every particle of clouds 1..K; psi maps a d-dim row to one
// value. ContractError when K = 0.
using TestFunction = std::function<double(std::span<const double>)>;
double path_average(const FlowTrajectory& trajectory, const TestFunction& psi);
double path_average(const FlowTrajectory& trajectory, const DifferentiableFunction& psi, const ParamMap& params = {});

// CSV with header step,particle,z0,...,z{d-1}; values printed with %.17g.
void write_trajectory_csv(std::ostream& out, const FlowTrajectory& trajectory);

}  // namespace ctflow

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
#include <span>
#include <string>
#include <vector>

#include "ctflow/generator.hpp"
#include "ctflow/optim.hpp"
#include "ctflow/targets.hpp"

namespace ctflow {

enum class DistanceKind { kEuclidean, kExactOt, kCritic };

DistanceKind parse_distance_kind(const std::string& name);
std::string to_string(DistanceKind kind);

struct DistillConfig {
  DistanceKind kind = DistanceKind::kExactOt;
  Index inner_steps = 1;        // generator updates per distill_step
  double learning_rate = 1e-3;  // generator step size
  Index batch_size = 64;        // S
  Index substeps = 1;           // Langevin transitions from student to teacher
  OptimizerKind optimizer = OptimizerKind::kAdam;
  Index critic_steps = 5;       // critic updates per generator update
  double critic_learning_rate = 1e-3;

  // ContractError on S < 1 (S < 2 for exact_ot), non-positive step sizes or
  // counts.
  void validate() const;
};

enum class CriticRegularizer { kNone, kWeightClip, kGradientPenalty };

CriticRegularizer parse_critic_regularizer(const std::string& name);
std::string to_string(CriticRegularizer reg);

// Scalar-output network for the dual form of W1. In conditional settings the
// critic reads rows [x, z].
struct Critic {
  DifferentiableFunction network;
  ParamMap params;
  CriticRegularizer regularizer = CriticRegularizer::kWeightClip;
  double clip = 0.01;
  double penalty = 10.0;
  Optimizer optimizer;
};

// MLP critic; clip mode clamps the initial parameters too.
Critic make_critic(Index input_dim, const std::vector<Index>& hidden, CriticRegularizer reg, double clip,
                   double penalty, double learning_rate, RandomStream& init);

// One ascent step on E_real[f] - E_fake[f] (minus the gradient penalty in
// penalty mode, one-sided: lambda * mean(relu(|grad f(x_hat)| - 1)^2) at
// uniform interpolates drawn from stream). Clip mode clamps every parameter
// into [-clip, clip] afterwards. Returns the objective before the step,
// without the penalty.
double critic_update(Critic& critic, const Tensor& real, const Tensor& fake, double step_size, RandomStream& stream);

// E_real[f] - E_fake[f].
double critic_objective(const Critic& critic, const Tensor& real, const Tensor& fake);

// One teacher set: the student draw for a condition and its flowed image.
struct TeacherBatch {
  Tensor condition;  // 1 x c (1 x 0 when unconditional)
  Tensor noise;      // S x noise_dim, the omega behind student
  Tensor student;    // G(x, omega), S x d
  Tensor teacher;    // student after `substeps` Langevin steps, S x d
};

// Draws noise from stream (seed, {kGenerator, salt}) and moves the samples
// `substeps` Langevin steps toward target with per-particle streams
// (seed, {kFlow, salt, i}); the same construction as draw_generator followed
// by langevin_step calls.
TeacherBatch make_teacher_batch(const ImplicitGenerator& gen, const Tensor& condition, const EnergyModel& target,
                                double h, Index substeps, std::uint64_t seed, std::uint64_t salt, Index count);

// Value and parameter gradient of the distillation distance summed over
// groups, teachers held constant.
//   euclidean: mean_i |G(x, omega_i) - teacher_i|^2 with the teacher's noise
//   exact_ot:  mean_i |G(x, omega'_i) - teacher_pi(i)|^2 with fresh omega' from
//              stream (seed, {kStudent, round, inner, group}) and pi the optimal
//              assignment, held fixed
//   critic:    -mean_i f(x, G(x, omega'_i))
struct DistillObjective {
  double value = 0.0;
  ParamMap grad;
  // Distance per group before any update: mean squared pairing distance
  // (euclidean), W2 of the matched batches (exact_ot), E_real f - E_fake f
  // (critic).
  std::vector<double> distances;
};

DistillObjective distill_objective(const ImplicitGenerator& gen, std::span<const TeacherBatch> batches,
                                   const DistillConfig& config, const Critic* critic, std::uint64_t seed,
                                   std::uint64_t round, std::uint64_t inner = 0);

// inner_steps generator updates; in critic mode each is preceded by
// critic_steps critic updates on pairs [x, teacher] (real) vs [x, student]
// (fake). Teachers are never modified. Returns the mean group distance
// before the first update. ContractError if the critic is missing in critic
// mode.
double distill_step(ImplicitGenerator& gen, std::span<const TeacherBatch> batches, const DistillConfig& config,
                    Optimizer& optimizer, Critic* critic, std::uint64_t seed, std::uint64_t round);

}  // namespace ctflow

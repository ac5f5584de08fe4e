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
#include <string>
#include <vector>

#include "ctflow/amortize.hpp"
#include "ctflow/flow.hpp"
#include "ctflow/generator.hpp"
#include "ctflow/optim.hpp"
#include "ctflow/targets.hpp"

namespace ctflow {

enum class EnergyRegularizer { kNone, kWeightClip, kGradientPenalty };

EnergyRegularizer parse_energy_regularizer(const std::string& name);
std::string to_string(EnergyRegularizer reg);

// Gibbs model p_theta(x) ~ exp(U(x; theta)).
struct EnergyNet {
  DifferentiableFunction u;
  ParamMap theta;
  EnergyRegularizer regularizer = EnergyRegularizer::kNone;
  double clip = 1.0;
  double penalty = 10.0;
};

// MLP(x) - alpha |x|^2; clip mode clamps the initial parameters too.
EnergyNet make_energy_net(Index dim, const std::vector<Index>& hidden, double confinement, EnergyRegularizer reg,
                          double clip, double penalty, RandomStream& init);

// The energy as a flow target (log density U).
EnergyModel energy_target(const EnergyNet& energy);

// E_data[U] - E_model[U].
double mle_surrogate(const EnergyNet& energy, const Tensor& data, const Tensor& model_batch);

// d/dtheta (E_data[U] - E_model[U]); both batches are constants.
// ContractError on an empty batch or dimension mismatch.
ParamMap mle_gradient(const EnergyNet& energy, const Tensor& data, const Tensor& model_batch);

// One ascent step on E_data[U] - E_model[U] (minus the one-sided gradient
// penalty at uniform interpolates in penalty mode; batches must then have
// equal sizes). Clip mode clamps theta into [-clip, clip] afterwards.
void energy_update(EnergyNet& energy, const Tensor& data, const Tensor& model_batch, Optimizer& optimizer,
                   RandomStream& stream);

struct LogPartitionEstimate {
  double log_z = 0.0;
  double standard_error = 0.0;  // delta method on the importance weights
};

// log of mean_i exp(U(x_i)) / q(x_i) over M generator draws. ContractError
// unless invertible mode and M >= 2.
LogPartitionEstimate log_partition_estimate(const EnergyModel& energy, const ImplicitGenerator& gen, Index samples,
                                            RandomStream& stream);

// Jensen bound on the average data log-likelihood. All q-terms use the same M
// generator draws, so gap = log Z_hat - mean(U - log q) >= 0 for every draw.
//   lhs = mean_data U - log Z_hat
//   rhs = mean_data U - E_q[U] + E_q[log q]
struct MleBoundReport {
  double lhs = 0.0;
  double rhs = 0.0;
  double gap = 0.0;
  double data_u = 0.0;
  double model_u = 0.0;
  double model_log_q = 0.0;
  double lhs_se = 0.0;
  double rhs_se = 0.0;
  double gap_se = 0.0;
  double log_z = 0.0;
  double log_z_se = 0.0;
};

MleBoundReport mle_bound_check(const EnergyModel& energy, const ImplicitGenerator& gen, const Tensor& data,
                               Index samples, RandomStream& stream);

// base_lr before epoch 50, then linear_decay_step(epoch, total, base_lr).
double scheduled_learning_rate(long epoch, long total_epochs, double base_lr);

struct MacGanConfig {
  FlowConfig flow;        // K constant-size steps from generator samples
  DistillConfig distill;  // batch_size generator draws per epoch
  Index epochs = 200;
  double theta_learning_rate = 1e-4;
  bool decay_schedule = false;  // scheduled_learning_rate for theta and phi
  Index data_batch = 64;
  std::uint64_t seed = 1;
  Index bound_samples = 0;  // > 0: mle_bound_check each epoch (invertible generators)
  Tensor heldout;           // non-empty: W1 diagnostic each diag_every epochs
  Index diag_samples = 256;
  Index diag_every = 1;
};

struct MacGanEpoch {
  Index epoch = 0;
  double e_data_u = 0.0;
  double e_gen_u = 0.0;
  double w1_diag = 0.0;  // NaN when skipped
  double distill_distance = 0.0;
  double log_z = 0.0;    // NaN when skipped
  double bound_gap = 0.0;
  double bound_gap_se = 0.0;
  double theta_max_abs = 0.0;
};

struct MacGanResult {
  EnergyNet energy;
  ImplicitGenerator generator;
  std::vector<MacGanEpoch> log;
};

// Per epoch e:
//   1. teacher: generator draws moved K Langevin steps toward exp(U)
//      (make_teacher_batch with salt e);
//   2. distill_step toward the teacher;
//   3. fresh generator draws (stream {kGenerator, e, 1}) form the negative
//      phase and a data minibatch (stream {kData, e}, with replacement) the
//      positive phase of one energy_update.
MacGanResult train_macgan(EnergyNet energy, ImplicitGenerator generator, const Tensor& data,
                          const MacGanConfig& config, Critic* critic = nullptr);

}  // namespace ctflow

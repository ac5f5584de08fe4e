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
#include "ctflow/targets.hpp"

namespace ctflow {

enum class Likelihood { kBernoulli, kCategorical, kGaussian };

Likelihood parse_likelihood(const std::string& name);
std::string to_string(Likelihood likelihood);

// p_theta(x, z) = prior(z) p(x | decoder(z; theta)). The decoder emits logits
// (bernoulli, categorical one-hot) or means (gaussian with fixed noise_sd).
struct LatentVariableModel {
  EnergyModel prior;  // must carry a log normalizer
  DifferentiableFunction decoder;
  ParamMap theta;
  Likelihood likelihood = Likelihood::kGaussian;
  double noise_sd = 1.0;

  Index latent_dim() const { return decoder.input_dim(); }
  Index data_dim() const { return decoder.output_dim(); }
  // ContractError on inconsistent shapes; NumericError when noise_sd <= 0.
  void validate() const;
};

// Standard-normal prior over z.
EnergyModel standard_normal_prior(Index dim);

// Rows of x must be valid observations: entries in [0, 1] (bernoulli), one-hot
// (categorical); any finite value for gaussian. ContractError otherwise.
void check_observations(const LatentVariableModel& model, const Tensor& x);

// log p_theta(x, z) per row of z (S x 1) for one observation x (1 x D), or per
// row pair when x is S x D. NumericError when the decoder output is
// non-finite.
Tensor joint_log_density(const LatentVariableModel& model, const Tensor& x, const Tensor& z);

// The same on a tape, with theta bound by the caller.
Var joint_log_density(const LatentVariableModel& model, std::span<const Var> theta, const Tensor& x, Var z);

// z -> log p_theta(x, z) as a target for the flow.
EnergyModel posterior_target(const LatentVariableModel& model, const Tensor& x);

struct ElboEstimate {
  double value = 0.0;
  double standard_error = 0.0;
  Index samples = 0;
};

// Monte-Carlo ELBO E[log p(x, z) - log q(z | x)] over M draws from stream,
// with log q from the change-of-variables formula. ContractError unless the
// generator is in invertible mode; NumericError (with sample index) on a
// singular Jacobian.
ElboEstimate elbo_estimate(const LatentVariableModel& model, const ImplicitGenerator& inference, const Tensor& x,
                           Index samples, RandomStream& stream);

struct MacVaeConfig {
  FlowConfig flow;          // K transitions per epoch toward each posterior
  DistillConfig distill;    // batch_size latents per observation
  Index epochs = 100;
  double theta_learning_rate = 1e-3;
  bool update_theta = true;
  Index elbo_samples = 0;   // per observation per epoch; 0 skips the ELBO log
  std::uint64_t seed = 1;
};

struct MacVaeEpoch {
  Index epoch = 0;
  double distill_distance = 0.0;
  double theta_loss = 0.0;  // -mean log p(x, z) over the path, before the step
  double elbo = 0.0;        // NaN when not logged
};

struct MacVaeResult {
  LatentVariableModel model;
  ImplicitGenerator inference;
  std::vector<MacVaeEpoch> log;
};

// Per epoch, for every observation x_j (salt e * N + j):
//   1. z_0 = G(x_j, omega), then K Langevin steps toward p_theta(x_j, .);
//   2. one distill_step over all observations, teacher = cloud at min(substeps, K);
//   3. one theta step on -mean log p_theta(x_j, z_k) over clouds 1..K (cloud 0
//      when K = 0).
// DivergenceError is rethrown as NumericError naming epoch and observation.
MacVaeResult train_macvae(LatentVariableModel model, ImplicitGenerator inference, const Tensor& data,
                          const MacVaeConfig& config, Critic* critic = nullptr);

// Conjugate linear-Gaussian model: z ~ N(0, I_L), x | z ~ N(z W + b, sd^2 I_D)
// with W L x D, b 1 x D. The decoder is make_linear(L, D, "dec").
LatentVariableModel make_conjugate_model(const Tensor& w, const Tensor& b, double sd);
// Exact posterior N((x - b) W^T P^-1 / sd^2, P^-1), P = I + W W^T / sd^2.
GaussianMoments conjugate_posterior(const LatentVariableModel& model, const Tensor& x);
// log N(x; b, W^T W + sd^2 I).
double conjugate_log_marginal(const LatentVariableModel& model, const Tensor& x);
// Affine conditional generator whose law given x is the exact posterior.
ImplicitGenerator conjugate_posterior_generator(const LatentVariableModel& model);

// Planar normalizing flow with a diagonal-Gaussian base from a linear encoder
// x -> [mean, log sd].
struct PlanarFlowStack {
  Index data_dim = 0;
  Index latent_dim = 0;
  Index layers = 0;
  ParamMap params;  // "enc.weight", "enc.bias", then "planar<k>.u/.w/.b"
};

PlanarFlowStack make_planar_stack(Index data_dim, Index latent_dim, Index layers, RandomStream& init);

// E[log p(x, z_K) - log q_0(z_0) + sum_k log det_k] over M reparameterized
// draws. NumericError when a layer determinant is not positive.
ElboEstimate planar_nf_elbo(const PlanarFlowStack& stack, const LatentVariableModel& model, const Tensor& x,
                            Index samples, RandomStream& stream);

// Adam ascent on the mean ELBO over the rows of data with theta fixed.
// Draws for step e come from stream (seed, {kEstimator, e}).
PlanarFlowStack train_planar_nf(PlanarFlowStack stack, const LatentVariableModel& model, const Tensor& data,
                                Index steps, double learning_rate, Index samples, std::uint64_t seed);

}  // namespace ctflow

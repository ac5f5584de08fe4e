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

#include "ctflow/flow.hpp"
#include "ctflow/targets.hpp"

namespace ctflow {

// Exact assignment is used up to this many particles per cloud.
inline constexpr Index kMaxExactParticles = 512;

// Optimal coupling between two uniform empirical measures of equal size. The
// optimal coupling of such measures is a permutation; cost is the mean of
// |a_i - b_assignment[i]|^order, summed in row order.
struct TransportPlan {
  std::vector<Index> assignment;
  double cost = 0.0;
};

// Pairwise |a_i - b_j|^order, N x N.
Tensor pairwise_cost(const Tensor& a, const Tensor& b, int order);
// Mean of cost(i, assignment[i]) accumulated for i = 0..N-1.
double assignment_cost(const Tensor& cost, const std::vector<Index>& assignment);

// ContractError for unequal N or dimension, or order outside {1, 2};
// SizeError above kMaxExactParticles.
TransportPlan exact_transport(const Tensor& a, const Tensor& b, int order);

// W1 = mean matched distance; W2 = root of the mean squared matched distance.
double wasserstein_exact(const Tensor& a, const Tensor& b, int order);
double wasserstein_exact(const ParticleCloud& a, const ParticleCloud& b, int order);

// Closed-form W2 between Gaussians; NumericError unless both covariances are SPD.
double w2_gaussian(const GaussianMoments& a, const GaussianMoments& b);

// Sample mean and unbiased covariance; ContractError for N < 2.
GaussianMoments empirical_moments(const Tensor& samples);
inline GaussianMoments empirical_moments(const ParticleCloud& cloud) { return empirical_moments(cloud.samples()); }

// Shipped 1-Lipschitz test functions.
enum class PsiKind {
  kCoordinate,   // psi(z) = z_j
  kClampedNorm,  // psi(z) = min(|z|, clamp)
};

struct PsiSpec {
  PsiKind kind = PsiKind::kCoordinate;
  Index coordinate = 0;
  double clamp = 1.0;
};

PsiSpec parse_psi(const std::string& name);
std::string to_string(const PsiSpec& psi);
TestFunction make_psi(const PsiSpec& psi);

// E[psi(Z)] for Z ~ N(mean, var) in one dimension; var = 0 is a point mass.
// The clamped norm uses composite Simpson quadrature over mean +- 12 sd.
double gaussian_expectation_1d(const PsiSpec& psi, double mean, double var);

// Initial law of each chain: N(mean, var), var = 0 for a fixed point.
struct InitialLaw {
  double mean = 0.0;
  double var = 0.0;
};

struct MseEstimate {
  double mse = 0.0;
  double standard_error = 0.0;
  double reference = 0.0;  // E_{rho_T}[psi]
  Index repetitions = 0;
};

// Monte-Carlo mean over R independent single-particle chains of
// (path average of psi over z_1..z_K - E_{rho_T}[psi])^2 with T the flow's
// total time and rho_T the exact law of the continuous diffusion. Requires the
// 1-D standard-normal target (Gaussian moments mean 0, variance 1); other
// targets raise ContractError. Chain r starts from the initial law with
// stream (seed, {kInit, r}) and steps with stream (seed, {kFlow, 0, r}).
MseEstimate mse_estimate(const EnergyModel& target, const PsiSpec& psi, const FlowConfig& config,
                         const InitialLaw& initial, Index repetitions, std::uint64_t seed);

}  // namespace ctflow

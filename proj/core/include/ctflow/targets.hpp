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

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ctflow/function.hpp"
#include "ctflow/random.hpp"

namespace ctflow {

struct GaussianMoments {
  Tensor mean;        // 1 x d
  Tensor covariance;  // d x d, symmetric positive definite

  Index dimension() const { return mean.cols(); }
  // NumericError unless shapes agree and covariance is SPD.
  void validate() const;
};

GaussianMoments make_moments(std::initializer_list<double> mean, const Tensor& covariance);

// Unnormalized log density log p(z) + const, with batched value and gradient.
// Immutable after construction.
class EnergyModel {
 public:
  using Sampler = std::function<Tensor(RandomStream&, Index)>;

  EnergyModel() = default;
  EnergyModel(std::string name, DifferentiableFunction log_density, ParamMap params = {});

  const std::string& name() const { return name_; }
  Index dimension() const { return fn_.input_dim(); }
  const DifferentiableFunction& function() const { return fn_; }
  const ParamMap& params() const { return params_; }

  // N x 1 unnormalized log densities.
  Tensor log_density(const Tensor& z) const;
  // N x d gradients of the log density, evaluated row-parallel.
  Tensor grad_log_density(const Tensor& z) const;

  // log of the normalizer Z with p(z) = exp(log_density(z)) / Z, when known.
  const std::optional<double>& log_normalizer() const { return log_normalizer_; }
  // Moments of the (Gaussian) law itself, when the target is Gaussian.
  const std::optional<GaussianMoments>& gaussian() const { return gaussian_; }
  bool has_exact_sampler() const { return static_cast<bool>(sampler_); }
  // n exact i.i.d. draws; ContractError when no sampler is attached.
  Tensor sample(RandomStream& stream, Index n) const;

  EnergyModel with_log_normalizer(double log_z) const;
  EnergyModel with_gaussian(GaussianMoments moments) const;
  EnergyModel with_sampler(Sampler sampler) const;

 private:
  std::string name_;
  DifferentiableFunction fn_;
  ParamMap params_;
  std::optional<double> log_normalizer_;
  std::optional<GaussianMoments> gaussian_;
  Sampler sampler_;
};

// The two 2-D benchmark potentials p(z) ~ exp(-U(z)):
//   ring_bimodal: U = 0.5((|z| - 2)/0.4)^2
//                     - log(exp(-0.5((z2 - 4)/2)^2) + exp(-0.5((z2 + 2)/0.2)^2))
//   sine_wells:   U = -log(exp(-0.5((z2 - w1)/0.35)^2) + exp(-0.5((z2 - w1 + w2)/0.35)^2)),
//                 w1 = sin(2 pi z1 / 4), w2 = 3 exp(-0.5((z1 - 1)/0.6)^2)
// ConfigError for any other name.
EnergyModel make_toy_potential(const std::string& name);

// N(mean, covariance) with analytic normalizer, moments and exact sampler.
EnergyModel make_gaussian(const Tensor& mean, const Tensor& covariance);

// Equal-variance isotropic mixture sum_k w_k N(mean_k, sd^2 I).
EnergyModel make_gaussian_mixture(const std::vector<Tensor>& means, double sd, std::vector<double> weights);

// Named targets addressable from experiment configs:
//   ou            1-D standard normal (Langevin flow is an Ornstein-Uhlenbeck process)
//   std_normal_2d 2-D standard normal
//   ring_bimodal, sine_wells
//   mixture2      0.5 N((-2, 0), I) + 0.5 N((2, 0), I)
EnergyModel make_target(const std::string& name);
const std::vector<std::string>& target_names();
bool is_target_name(const std::string& name);

// Exact law at time t of the Langevin diffusion toward N(0, 1) (drift -z/2,
// unit diffusion) started from N(mu0, var0):
//   mean = mu0 exp(-t/2),  var = 1 + (var0 - 1) exp(-t).
// t may be +infinity. Requires var0 > 0 and t >= 0.
GaussianMoments ou_analytic_moments(double mu0, double var0, double t);

// Same law for a point-mass start z0 (var0 = 0); variance 1 - exp(-t), which is
// zero at t = 0.
GaussianMoments ou_analytic_moments_from_point(double z0, double t);

}  // namespace ctflow

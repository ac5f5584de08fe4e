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

#include "ctflow/targets.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ctflow/errors.hpp"
#include "ctflow/linalg.hpp"
#include "ctflow/parallel.hpp"

namespace ctflow {
namespace {

DifferentiableFunction ring_bimodal_fn() {
  return DifferentiableFunction("ring_bimodal", {}, 2, 1, [](std::span<const Var>, Var z) {
    Var r = norm_rows(z);
    Var z2 = slice_cols(z, 1, 1);
    Var ring = 0.5 * square((r - 2.0) * (1.0 / 0.4));
    Var upper = -0.5 * square((z2 - 4.0) * (1.0 / 2.0));
    Var lower = -0.5 * square((z2 + 2.0) * (1.0 / 0.2));
    return -(ring - logaddexp(upper, lower));
  });
}

DifferentiableFunction sine_wells_fn() {
  return DifferentiableFunction("sine_wells", {}, 2, 1, [](std::span<const Var>, Var z) {
    Var z1 = slice_cols(z, 0, 1);
    Var z2 = slice_cols(z, 1, 1);
    Var w1 = sin(z1 * (2.0 * std::numbers::pi / 4.0));
    Var w2 = 3.0 * exp(-0.5 * square((z1 - 1.0) * (1.0 / 0.6)));
    Var first = -0.5 * square((z2 - w1) * (1.0 / 0.35));
    Var second = -0.5 * square((z2 - w1 + w2) * (1.0 / 0.35));
    return logaddexp(first, second);
  });
}

}  // namespace

void GaussianMoments::validate() const {
  if (mean.rows() != 1 || covariance.rows() != mean.cols() || covariance.cols() != mean.cols()) {
    throw NumericError("GaussianMoments: shape mismatch");
  }
  if (!linalg::is_spd(covariance)) throw NumericError("GaussianMoments: covariance is not SPD");
}

GaussianMoments make_moments(std::initializer_list<double> mean, const Tensor& covariance) {
  GaussianMoments m{Tensor::row(mean), covariance};
  return m;
}

EnergyModel::EnergyModel(std::string name, DifferentiableFunction log_density, ParamMap params)
    : name_(std::move(name)), fn_(std::move(log_density)), params_(std::move(params)) {
  if (fn_.output_dim() != 1) throw ContractError("EnergyModel: log density must have one output");
  fn_.check_params(params_);
}

Tensor EnergyModel::log_density(const Tensor& z) const { return evaluate(fn_, params_, z); }

Tensor EnergyModel::grad_log_density(const Tensor& z) const {
  if (z.cols() != dimension()) {
    throw SignatureError(name_ + ": point dimension " + std::to_string(z.cols()) + ", expected " +
                         std::to_string(dimension()));
  }
  Tensor out(z.rows(), z.cols());
  parallel_for_rows(z.rows(), [&](Index begin, Index end) {
    out.set_rows(begin, input_gradient_rows(fn_, params_, z.rows_slice(begin, end - begin)));
  });
  return out;
}

Tensor EnergyModel::sample(RandomStream& stream, Index n) const {
  if (!sampler_) throw ContractError(name_ + ": no exact sampler");
  return sampler_(stream, n);
}

EnergyModel EnergyModel::with_log_normalizer(double log_z) const {
  EnergyModel m = *this;
  m.log_normalizer_ = log_z;
  return m;
}

EnergyModel EnergyModel::with_gaussian(GaussianMoments moments) const {
  moments.validate();
  EnergyModel m = *this;
  m.gaussian_ = std::move(moments);
  return m;
}

EnergyModel EnergyModel::with_sampler(Sampler sampler) const {
  EnergyModel m = *this;
  m.sampler_ = std::move(sampler);
  return m;
}

EnergyModel make_toy_potential(const std::string& name) {
  if (name == "ring_bimodal") return EnergyModel(name, ring_bimodal_fn());
  if (name == "sine_wells") return EnergyModel(name, sine_wells_fn());
  throw ConfigError("unknown toy potential '" + name + "'");
}

EnergyModel make_gaussian(const Tensor& mean, const Tensor& covariance) {
  GaussianMoments moments{mean, covariance};
  moments.validate();
  const Index d = mean.cols();
  const Tensor precision = linalg::inverse(covariance);
  const Tensor chol = linalg::cholesky(covariance);
  DifferentiableFunction fn("gaussian", {}, d, 1, [mean, precision](std::span<const Var>, Var z) {
    Tape& t = z.tape();
    Var diff = z - t.constant(mean);
    Var quad = sum_rows(matmul(diff, t.constant(precision)) * diff);
    return -0.5 * quad;
  });
  const double log_z = 0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi) + 0.5 * linalg::log_abs_det(covariance);
  auto sampler = [mean, chol](RandomStream& s, Index n) {
    const Index dim = mean.cols();
    Tensor eps = draw_gaussian(s, n, dim);
    Tensor out(n, dim);
    for (Index i = 0; i < n; ++i) {
      for (Index r = 0; r < dim; ++r) {
        double v = mean[r];
        for (Index c = 0; c <= r; ++c) v += chol(r, c) * eps(i, c);
        out(i, r) = v;
      }
    }
    return out;
  };
  return EnergyModel("gaussian", std::move(fn)).with_log_normalizer(log_z).with_gaussian(moments).with_sampler(sampler);
}

EnergyModel make_gaussian_mixture(const std::vector<Tensor>& means, double sd, std::vector<double> weights) {
  if (means.empty()) throw ContractError("make_gaussian_mixture: no components");
  if (weights.size() != means.size()) throw ContractError("make_gaussian_mixture: weight count mismatch");
  if (!(sd > 0.0)) throw NumericError("make_gaussian_mixture: sd must be positive");
  const Index d = means.front().cols();
  double total = 0.0;
  for (double w : weights) {
    if (!(w > 0.0)) throw ContractError("make_gaussian_mixture: weights must be positive");
    total += w;
  }
  std::vector<double> log_w;
  for (auto& w : weights) {
    w /= total;
    log_w.push_back(std::log(w));
  }
  for (const auto& m : means) {
    if (m.rows() != 1 || m.cols() != d) throw ContractError("make_gaussian_mixture: mean shape mismatch");
  }
  DifferentiableFunction fn("gaussian_mixture", {}, d, 1, [means, log_w, sd](std::span<const Var>, Var z) {
    Tape& t = z.tape();
    Var acc;
    for (std::size_t k = 0; k < means.size(); ++k) {
      Var comp = (-0.5 / (sd * sd)) * sum_rows(square(z - t.constant(means[k]))) + log_w[k];
      acc = k == 0 ? comp : concat_cols(acc, comp);
    }
    return means.size() == 1 ? acc : log_sum_exp_rows(acc);
  });
  const double log_z = 0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi * sd * sd);
  auto sampler = [means, weights, sd](RandomStream& s, Index n) {
    const Index dim = means.front().cols();
    Tensor out(n, dim);
    const auto u = draw_uniform(s, n);
    Tensor eps = draw_gaussian(s, n, dim);
    for (Index i = 0; i < n; ++i) {
      std::size_t k = 0;
      double c = weights[0];
      while (u[static_cast<std::size_t>(i)] > c && k + 1 < weights.size()) c += weights[++k];
      for (Index j = 0; j < dim; ++j) out(i, j) = means[k][j] + sd * eps(i, j);
    }
    return out;
  };
  return EnergyModel("gaussian_mixture", std::move(fn)).with_log_normalizer(log_z).with_sampler(sampler);
}

const std::vector<std::string>& target_names() {
  static const std::vector<std::string> names = {"ou", "std_normal_2d", "ring_bimodal", "sine_wells", "mixture2"};
  return names;
}

bool is_target_name(const std::string& name) {
  const auto& n = target_names();
  return std::find(n.begin(), n.end(), name) != n.end();
}

EnergyModel make_target(const std::string& name) {
  if (name == "ou") return make_gaussian(Tensor::row({0.0}), linalg::identity(1));
  if (name == "std_normal_2d") return make_gaussian(Tensor::row({0.0, 0.0}), linalg::identity(2));
  if (name == "ring_bimodal" || name == "sine_wells") return make_toy_potential(name);
  if (name == "mixture2") {
    return make_gaussian_mixture({Tensor::row({-2.0, 0.0}), Tensor::row({2.0, 0.0})}, 1.0, {0.5, 0.5});
  }
  throw ConfigError("unknown target '" + name + "'");
}

GaussianMoments ou_analytic_moments(double mu0, double var0, double t) {
  if (!(var0 > 0.0)) throw ContractError("ou_analytic_moments: var0 must be positive");
  if (!(t >= 0.0)) throw ContractError("ou_analytic_moments: t must be non-negative");
  const double mean = mu0 * std::exp(-0.5 * t);
  const double var = 1.0 + (var0 - 1.0) * std::exp(-t);
  return {Tensor::row({mean}), Tensor(1, 1, var)};
}

GaussianMoments ou_analytic_moments_from_point(double z0, double t) {
  if (!(t >= 0.0)) throw ContractError("ou_analytic_moments_from_point: t must be non-negative");
  return {Tensor::row({z0 * std::exp(-0.5 * t)}), Tensor(1, 1, -std::expm1(-t))};
}

}  // namespace ctflow

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

#include "ctflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "ctflow/assignment.hpp"
#include "ctflow/errors.hpp"
#include "ctflow/linalg.hpp"

namespace ctflow {

Tensor pairwise_cost(const Tensor& a, const Tensor& b, int order) {
  if (a.cols() != b.cols()) throw ContractError("pairwise_cost: dimension mismatch");
  if (order != 1 && order != 2) throw ContractError("pairwise_cost: order must be 1 or 2");
  Tensor cost(a.rows(), b.rows());
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < b.rows(); ++j) {
      double sq = 0.0;
      for (Index c = 0; c < a.cols(); ++c) {
        const double diff = a(i, c) - b(j, c);
        sq += diff * diff;
      }
      cost(i, j) = order == 2 ? sq : std::sqrt(sq);
    }
  }
  return cost;
}

double assignment_cost(const Tensor& cost, const std::vector<Index>& assignment) {
  double total = 0.0;
  for (std::size_t i = 0; i < assignment.size(); ++i) total += cost(static_cast<Index>(i), assignment[i]);
  return total / static_cast<double>(assignment.size());
}

TransportPlan exact_transport(const Tensor& a, const Tensor& b, int order) {
  if (a.rows() != b.rows()) throw ContractError("exact_transport: clouds must have equal particle counts");
  if (a.rows() < 1) throw ContractError("exact_transport: empty cloud");
  if (a.rows() > kMaxExactParticles) {
    throw SizeError("exact_transport: " + std::to_string(a.rows()) + " particles exceeds the exact cap of " +
                    std::to_string(kMaxExactParticles) + "; subsample into minibatches");
  }
  const Tensor cost = pairwise_cost(a, b, order);
  TransportPlan plan;
  plan.assignment = optimal_assignment(cost);
  plan.cost = assignment_cost(cost, plan.assignment);
  return plan;
}

double wasserstein_exact(const Tensor& a, const Tensor& b, int order) {
  const double cost = exact_transport(a, b, order).cost;
  return order == 2 ? std::sqrt(cost) : cost;
}

double wasserstein_exact(const ParticleCloud& a, const ParticleCloud& b, int order) {
  return wasserstein_exact(a.samples(), b.samples(), order);
}

double w2_gaussian(const GaussianMoments& a, const GaussianMoments& b) {
  a.validate();
  b.validate();
  if (a.dimension() != b.dimension()) throw ContractError("w2_gaussian: dimension mismatch");
  double mean_sq = 0.0;
  for (Index i = 0; i < a.dimension(); ++i) {
    const double diff = a.mean[i] - b.mean[i];
    mean_sq += diff * diff;
  }
  const Tensor root_b = linalg::sqrtm_psd(b.covariance);
  const Tensor cross = linalg::sqrtm_psd(linalg::matmul(linalg::matmul(root_b, a.covariance), root_b));
  const double tr =
      linalg::trace(a.covariance) + linalg::trace(b.covariance) - 2.0 * linalg::trace(cross);
  return std::sqrt(std::max(0.0, mean_sq + tr));
}

GaussianMoments empirical_moments(const Tensor& samples) {
  const Index n = samples.rows();
  const Index d = samples.cols();
  if (n < 2) throw ContractError("empirical_moments: needs at least two samples");
  Tensor mean(1, d);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < d; ++j) mean[j] += samples(i, j);
  }
  for (Index j = 0; j < d; ++j) mean[j] /= static_cast<double>(n);
  Tensor cov(d, d);
  for (Index i = 0; i < n; ++i) {
    for (Index r = 0; r < d; ++r) {
      const double dr = samples(i, r) - mean[r];
      for (Index c = 0; c < d; ++c) cov(r, c) += dr * (samples(i, c) - mean[c]);
    }
  }
  for (Index k = 0; k < cov.size(); ++k) cov[k] /= static_cast<double>(n - 1);
  return {mean, cov};
}

PsiSpec parse_psi(const std::string& name) {
  if (name == "identity" || name == "coordinate") return {PsiKind::kCoordinate, 0, 1.0};
  if (name.rfind("coordinate:", 0) == 0) return {PsiKind::kCoordinate, std::stol(name.substr(11)), 1.0};
  if (name == "clamped_norm") return {PsiKind::kClampedNorm, 0, 1.0};
  if (name.rfind("clamped_norm:", 0) == 0) {
    const double c = std::stod(name.substr(13));
    if (!(c > 0.0)) throw ConfigError("clamped_norm clamp must be positive");
    return {PsiKind::kClampedNorm, 0, c};
  }
  throw ConfigError("unknown test function '" + name + "'");
}

std::string to_string(const PsiSpec& psi) {
  if (psi.kind == PsiKind::kCoordinate) return "coordinate:" + std::to_string(psi.coordinate);
  char buf[64];
  std::snprintf(buf, sizeof buf, "clamped_norm:%.17g", psi.clamp);
  return buf;
}

TestFunction make_psi(const PsiSpec& psi) {
  if (psi.kind == PsiKind::kCoordinate) {
    const auto j = static_cast<std::size_t>(psi.coordinate);
    return [j](std::span<const double> z) {
      if (j >= z.size()) throw ContractError("psi: coordinate out of range");
      return z[j];
    };
  }
  const double c = psi.clamp;
  return [c](std::span<const double> z) {
    double sq = 0.0;
    for (double v : z) sq += v * v;
    return std::min(std::sqrt(sq), c);
  };
}

double gaussian_expectation_1d(const PsiSpec& psi, double mean, double var) {
  if (var < 0.0) throw ContractError("gaussian_expectation_1d: negative variance");
  if (psi.kind == PsiKind::kCoordinate) {
    if (psi.coordinate != 0) throw ContractError("gaussian_expectation_1d: coordinate out of range");
    return mean;
  }
  const auto f = make_psi(psi);
  if (var == 0.0) return f(std::span<const double>(&mean, 1));
  const double sd = std::sqrt(var);
  constexpr int kIntervals = 20000;
  const double lo = mean - 12.0 * sd;
  const double step = 24.0 * sd / kIntervals;
  double total = 0.0;
  for (int i = 0; i <= kIntervals; ++i) {
    const double x = lo + step * i;
    const double w = (i == 0 || i == kIntervals) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
    const double u = (x - mean) / sd;
    total += w * f(std::span<const double>(&x, 1)) * std::exp(-0.5 * u * u);
  }
  return total * step / 3.0 / (sd * std::sqrt(2.0 * std::numbers::pi));
}

MseEstimate mse_estimate(const EnergyModel& target, const PsiSpec& psi, const FlowConfig& config,
                         const InitialLaw& initial, Index repetitions, std::uint64_t seed) {
  const auto& g = target.gaussian();
  if (!g || g->dimension() != 1 || g->mean[0] != 0.0 || g->covariance[0] != 1.0) {
    throw ContractError("mse_estimate: target '" + target.name() + "' has no analytic flow oracle");
  }
  if (repetitions < 1) throw ContractError("mse_estimate: needs R >= 1");
  if (config.num_steps < 1) throw ContractError("mse_estimate: needs K >= 1");
  if (initial.var < 0.0) throw ContractError("mse_estimate: negative initial variance");
  config.validate();

  Tensor z0(repetitions, 1);
  for (Index r = 0; r < repetitions; ++r) {
    double v = initial.mean;
    if (initial.var > 0.0) {
      auto s = make_stream(seed, {stream_tag::kInit, static_cast<std::uint64_t>(r)});
      v += std::sqrt(initial.var) * s.next_gaussian_pair()[0];
    }
    z0(r, 0) = v;
  }
  const double t = config.total_time();
  const GaussianMoments law = initial.var > 0.0 ? ou_analytic_moments(initial.mean, initial.var, t)
                                                : ou_analytic_moments_from_point(initial.mean, t);
  const double reference = gaussian_expectation_1d(psi, law.mean[0], law.covariance[0]);

  const auto f = make_psi(psi);
  std::vector<double> sums(static_cast<std::size_t>(repetitions), 0.0);
  run_flow(ParticleCloud(z0), target, config, seed, 0, [&](Index k, const ParticleCloud& c) {
    if (k == 0) return;
    for (Index r = 0; r < repetitions; ++r) sums[static_cast<std::size_t>(r)] += f(c.particle(r));
  });

  double mean_sq = 0.0;
  std::vector<double> sq(sums.size());
  for (std::size_t r = 0; r < sums.size(); ++r) {
    const double err = sums[r] / static_cast<double>(config.num_steps) - reference;
    sq[r] = err * err;
    mean_sq += sq[r];
  }
  mean_sq /= static_cast<double>(repetitions);
  double var = 0.0;
  for (double v : sq) var += (v - mean_sq) * (v - mean_sq);
  const double se = repetitions > 1 ? std::sqrt(var / static_cast<double>(repetitions - 1) / static_cast<double>(repetitions)) : 0.0;
  return {mean_sq, se, reference, repetitions};
}

}  // namespace ctflow

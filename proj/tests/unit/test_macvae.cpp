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
#include <numbers>

#include "doctest.h"
#include "helpers.hpp"

#include "ctflow/errors.hpp"
#include "ctflow/linalg.hpp"
#include "ctflow/macvae.hpp"
#include "ctflow/metrics.hpp"

using namespace ctflow;

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

LatentVariableModel one_dim_model() {
  return make_conjugate_model(Tensor::from_rows({{1.5, -0.5}}), Tensor::row({0.2, 1.0}), 0.8);
}

LatentVariableModel linear_decoder_model(Likelihood lik, Index latent, Index data) {
  LatentVariableModel m;
  m.prior = standard_normal_prior(latent);
  m.decoder = make_linear(latent, data, "dec");
  RandomStream init(1, 1);
  m.theta = m.decoder.init_params(init);
  m.likelihood = lik;
  m.validate();
  return m;
}

}  // namespace

TEST_CASE("likelihood names") {
  CHECK(parse_likelihood("bernoulli") == Likelihood::kBernoulli);
  CHECK(parse_likelihood("categorical") == Likelihood::kCategorical);
  CHECK(parse_likelihood("gaussian") == Likelihood::kGaussian);
  CHECK_THROWS_AS(parse_likelihood("poisson"), ConfigError);
}

TEST_CASE("conjugate posterior and evidence agree with quadrature") {
  const LatentVariableModel m = one_dim_model();
  const Tensor x = Tensor::row({1.1, 0.3});
  // Trapezoid sums of exp(log p(x, z)) on a fine grid.
  const Index n = 40001;
  const double lo = -12.0, step = 24.0 / static_cast<double>(n - 1);
  Tensor z(n, 1);
  for (Index i = 0; i < n; ++i) z[i] = lo + step * static_cast<double>(i);
  const Tensor lj = joint_log_density(m, x, z);
  double z0 = 0.0, z1 = 0.0, z2 = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double w = std::exp(lj[i]) * step * ((i == 0 || i == n - 1) ? 0.5 : 1.0);
    z0 += w;
    z1 += w * z[i];
    z2 += w * z[i] * z[i];
  }
  const double mean = z1 / z0;
  const double var = z2 / z0 - mean * mean;
  const GaussianMoments post = conjugate_posterior(m, x);
  CHECK(post.mean.item() == doctest::Approx(mean).epsilon(1e-9));
  CHECK(post.covariance.item() == doctest::Approx(var).epsilon(1e-8));
  CHECK(conjugate_log_marginal(m, x) == doctest::Approx(std::log(z0)).epsilon(1e-10));
}

TEST_CASE("exact posterior generator attains the evidence") {
  const LatentVariableModel m =
      make_conjugate_model(Tensor::from_rows({{1.0, 0.5, -0.3}, {0.2, -1.0, 0.8}}), Tensor::row({0.0, 1.0, -1.0}), 0.5);
  const ImplicitGenerator q = conjugate_posterior_generator(m);
  REQUIRE(q.invertible_mode());
  RandomStream s(2, 2);
  for (const Tensor& x : {Tensor::row({0.3, -0.2, 1.4}), Tensor::row({2.0, 0.0, -3.0})}) {
    const ElboEstimate e = elbo_estimate(m, q, x, 200, s);
    const double logp = conjugate_log_marginal(m, x);
    CHECK(e.value == doctest::Approx(logp).epsilon(1e-10));
    CHECK(e.standard_error < 1e-9);
    CHECK(e.samples == 200);
    // Samples of the generator carry the posterior moments.
    RandomStream d(3, 3);
    const GaussianMoments want = conjugate_posterior(m, x);
    const GaussianMoments got = empirical_moments(sample_generator(q, x, d, 20000).samples());
    CHECK(ctflow::testing::max_abs_diff(got.mean, want.mean) < 0.02);
    CHECK(ctflow::testing::max_abs_diff(got.covariance, want.covariance) < 0.02);
  }
}

TEST_CASE("any other inference law falls short of the evidence") {
  const LatentVariableModel m = one_dim_model();
  const Tensor x = Tensor::row({1.1, 0.3});
  const ImplicitGenerator wide = make_affine_generator(Tensor::scalar(2.0), Tensor(2, 1), Tensor::scalar(0.0));
  RandomStream s(4, 4);
  const ElboEstimate e = elbo_estimate(m, wide, x, 4000, s);
  CHECK(e.value + 3.0 * e.standard_error < conjugate_log_marginal(m, x));
}

TEST_CASE("joint density by hand: bernoulli and categorical") {
  const LatentVariableModel b = linear_decoder_model(Likelihood::kBernoulli, 1, 2);
  const Tensor z = Tensor::row({0.4});
  const Tensor logits = evaluate(b.decoder, b.theta, z);
  const Tensor x = Tensor::row({1.0, 0.0});
  const double sig0 = 1.0 / (1.0 + std::exp(-logits[0]));
  const double sig1 = 1.0 / (1.0 + std::exp(-logits[1]));
  const double prior = -0.5 * 0.16 - 0.5 * kLog2Pi;
  CHECK(joint_log_density(b, x, z).item() == doctest::Approx(prior + std::log(sig0) + std::log(1.0 - sig1)));

  const LatentVariableModel c = linear_decoder_model(Likelihood::kCategorical, 1, 3);
  const Tensor lc = evaluate(c.decoder, c.theta, z);
  const double lse = std::log(std::exp(lc[0]) + std::exp(lc[1]) + std::exp(lc[2]));
  CHECK(joint_log_density(c, Tensor::row({0, 0, 1}), z).item() == doctest::Approx(prior + lc[2] - lse));

  CHECK_THROWS_AS(check_observations(c, Tensor::row({1, 1, 0})), ContractError);
  CHECK_THROWS_AS(check_observations(c, Tensor::row({0.5, 0.5, 0})), ContractError);
  CHECK_THROWS_AS(check_observations(b, Tensor::row({1.5, 0})), ContractError);
  CHECK_NOTHROW(check_observations(b, Tensor::row({0.25, 1.0})));
}

TEST_CASE("posterior target gradients are consistent") {
  const LatentVariableModel m = linear_decoder_model(Likelihood::kCategorical, 2, 4);
  const EnergyModel post = posterior_target(m, Tensor::row({0, 1, 0, 0}));
  CHECK(post.dimension() == 2);
  RandomStream s(5, 5);
  for (int i = 0; i < 5; ++i) CHECK(check_gradient(post.function(), post.params(), draw_gaussian(s, 1, 2), 1e-5) < 1e-5);
}

TEST_CASE("model validation") {
  CHECK_THROWS_AS(make_conjugate_model(Tensor::from_rows({{1.0}}), Tensor::row({0.0}), 0.0), NumericError);
  CHECK_THROWS_AS(make_conjugate_model(Tensor::from_rows({{1.0}}), Tensor::row({0.0, 1.0}), 1.0), ContractError);
}

TEST_CASE("elbo needs an invertible generator") {
  const LatentVariableModel m = one_dim_model();
  GeneratorSpec spec;
  spec.arch = GeneratorArch::kMlp;
  spec.condition_dim = 2;
  spec.noise_dim = 1;
  spec.output_dim = 1;
  spec.hidden = {4};
  RandomStream init(1, 1);
  const ImplicitGenerator g = make_generator(spec, init);
  RandomStream s(1, 2);
  CHECK_THROWS_AS(elbo_estimate(m, g, Tensor::row({0, 0}), 4, s), ContractError);
}

TEST_CASE("short training run: logs every epoch, K = 0 allowed, theta moves") {
  const LatentVariableModel m = one_dim_model();
  const Tensor data = Tensor::from_rows({{1.1, 0.3}, {-0.5, 1.2}, {0.0, 0.0}});
  GeneratorSpec spec;
  spec.arch = GeneratorArch::kAffine;
  spec.condition_dim = 2;
  spec.noise_dim = 1;
  spec.output_dim = 1;
  RandomStream init(1, 1);
  const ImplicitGenerator q = make_generator(spec, init);
  MacVaeConfig c;
  c.flow = {0.05, 5};
  c.distill.batch_size = 16;
  c.distill.substeps = 5;
  c.distill.learning_rate = 0.01;
  c.epochs = 4;
  c.elbo_samples = 8;
  const MacVaeResult r = train_macvae(m, q, data, c);
  REQUIRE(r.log.size() == 4);
  for (const auto& e : r.log) {
    CHECK(std::isfinite(e.distill_distance));
    CHECK(std::isfinite(e.elbo));
  }
  CHECK_FALSE(r.model.theta == m.theta);

  c.flow.num_steps = 0;
  c.update_theta = false;
  c.elbo_samples = 0;
  const MacVaeResult r0 = train_macvae(m, q, data, c);
  CHECK(r0.model.theta == m.theta);
  CHECK(std::isnan(r0.log.back().elbo));
}

TEST_CASE("planar flow ELBO stays below the evidence and improves with training") {
  const LatentVariableModel m = one_dim_model();
  const Tensor data = Tensor::from_rows({{1.1, 0.3}});
  RandomStream init(2, 1);
  const PlanarFlowStack stack = make_planar_stack(2, 1, 2, init);
  RandomStream s(2, 2);
  const ElboEstimate before = planar_nf_elbo(stack, m, data, 2000, s);
  const PlanarFlowStack trained = train_planar_nf(stack, m, data, 300, 0.02, 32, 2);
  const ElboEstimate after = planar_nf_elbo(trained, m, data, 2000, s);
  const double logp = conjugate_log_marginal(m, data);
  CHECK(after.value > before.value);
  CHECK(after.value <= logp + 3.0 * after.standard_error + 1e-10);
  CHECK(logp - after.value < 0.05);
}

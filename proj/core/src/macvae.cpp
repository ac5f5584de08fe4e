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

#include "ctflow/macvae.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "ctflow/errors.hpp"
#include "ctflow/linalg.hpp"
#include "ctflow/optim.hpp"

namespace ctflow {
namespace {

ParamMap grads_of(const Tape& tape, const std::vector<Var>& vars, const ParamMap& like) {
  ParamMap g = like.zeros_like();
  for (std::size_t i = 0; i < vars.size(); ++i) {
    const Tensor t = tape.grad(vars[i]);
    std::copy(t.values().begin(), t.values().end(), g.entries()[i].values.begin());
  }
  return g;
}

ElboEstimate summarize(const Tensor& rows) {
  const Index m = rows.rows();
  double mean = 0.0;
  for (Index i = 0; i < m; ++i) mean += rows(i, 0);
  mean /= static_cast<double>(m);
  double var = 0.0;
  for (Index i = 0; i < m; ++i) var += (rows(i, 0) - mean) * (rows(i, 0) - mean);
  const double se = m > 1 ? std::sqrt(var / static_cast<double>(m - 1) / static_cast<double>(m)) : 0.0;
  return {mean, se, m};
}

std::vector<ParamSpec> planar_signature(Index d, Index l, Index layers) {
  std::vector<ParamSpec> sig = {{"enc.weight", {d, 2 * l}, Init::kGlorot, 0.1}, {"enc.bias", {2 * l}, Init::kZeros, 0.0}};
  for (Index k = 0; k < layers; ++k) {
    const std::string p = "planar" + std::to_string(k);
    sig.push_back({p + ".u", {l}, Init::kNormal, 0.01});
    sig.push_back({p + ".w", {l}, Init::kNormal, 0.5});
    sig.push_back({p + ".b", {}, Init::kZeros, 0.0});
  }
  return sig;
}

// Per-row NF ELBO terms on a tape; p holds the stack parameters in signature order.
Var planar_elbo_rows(const PlanarFlowStack& stack, const LatentVariableModel& model, std::span<const Var> p,
                     std::span<const Var> theta, const Tensor& x, const Tensor& eps) {
  Tape& t = p[0].tape();
  const Index l = stack.latent_dim;
  Var h = matmul(t.constant(x), p[0]) + p[1];
  Var mu = slice_cols(h, 0, l);
  Var log_sd = slice_cols(h, l, l);
  Var e = t.constant(eps);
  Var z = mu + exp(log_sd) * e;
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  Var log_q0 = -0.5 * sum_rows(square(e)) - (static_cast<double>(l) * half_log_2pi) - sum(log_sd);
  Var elbo = -log_q0;
  for (Index k = 0; k < stack.layers; ++k) {
    const auto i = static_cast<std::size_t>(2 + 3 * k);
    Var log_det;
    z = planar_layer(z, p[i], p[i + 1], p[i + 2], &log_det);
    elbo = elbo + log_det;
  }
  return elbo + joint_log_density(model, theta, x, z);
}

}  // namespace

Likelihood parse_likelihood(const std::string& name) {
  if (name == "bernoulli") return Likelihood::kBernoulli;
  if (name == "categorical" || name == "categorical_onehot") return Likelihood::kCategorical;
  if (name == "gaussian") return Likelihood::kGaussian;
  throw ConfigError("unknown likelihood '" + name + "'");
}

std::string to_string(Likelihood likelihood) {
  switch (likelihood) {
    case Likelihood::kBernoulli: return "bernoulli";
    case Likelihood::kCategorical: return "categorical_onehot";
    case Likelihood::kGaussian: return "gaussian";
  }
  return "?";
}

void LatentVariableModel::validate() const {
  if (prior.dimension() != decoder.input_dim()) throw ContractError("LatentVariableModel: prior/decoder mismatch");
  if (!prior.log_normalizer()) throw ContractError("LatentVariableModel: prior needs a log normalizer");
  decoder.check_params(theta);
  if (likelihood == Likelihood::kGaussian && !(noise_sd > 0.0)) {
    throw NumericError("LatentVariableModel: gaussian noise sd must be positive");
  }
}

EnergyModel standard_normal_prior(Index dim) { return make_gaussian(Tensor(1, dim), linalg::identity(dim)); }

void check_observations(const LatentVariableModel& model, const Tensor& x) {
  if (x.cols() != model.data_dim()) throw ContractError("observation dimension mismatch");
  if (!x.all_finite()) throw ContractError("non-finite observation");
  for (Index i = 0; i < x.rows(); ++i) {
    double total = 0.0;
    for (Index j = 0; j < x.cols(); ++j) {
      const double v = x(i, j);
      if (model.likelihood == Likelihood::kBernoulli && (v < 0.0 || v > 1.0)) {
        throw ContractError("bernoulli observation outside [0, 1]");
      }
      if (model.likelihood == Likelihood::kCategorical && v != 0.0 && v != 1.0) {
        throw ContractError("categorical observation is not one-hot");
      }
      total += v;
    }
    if (model.likelihood == Likelihood::kCategorical && total != 1.0) {
      throw ContractError("categorical observation is not one-hot");
    }
  }
}

Var joint_log_density(const LatentVariableModel& model, std::span<const Var> theta, const Tensor& x, Var z) {
  Tape& t = z.tape();
  auto prior_params = model.prior.function().bind(t, model.prior.params(), false);
  Var log_prior = model.prior.function().apply(prior_params, z) - *model.prior.log_normalizer();
  Var out = model.decoder.apply(theta, z);
  if (!out.value().all_finite()) throw NumericError("decoder produced a non-finite likelihood parameter");
  Var xc = t.constant(x);
  Var log_lik;
  switch (model.likelihood) {
    case Likelihood::kBernoulli:
      log_lik = sum_rows(xc * out - softplus(out));
      break;
    case Likelihood::kCategorical:
      log_lik = sum_rows(xc * out) - log_sum_exp_rows(out);
      break;
    case Likelihood::kGaussian: {
      if (!(model.noise_sd > 0.0)) throw NumericError("gaussian noise sd must be positive");
      const double var = model.noise_sd * model.noise_sd;
      const double norm = 0.5 * static_cast<double>(model.data_dim()) * std::log(2.0 * std::numbers::pi * var);
      log_lik = (-0.5 / var) * sum_rows(square(out - xc)) - norm;
      break;
    }
  }
  return log_prior + log_lik;
}

Tensor joint_log_density(const LatentVariableModel& model, const Tensor& x, const Tensor& z) {
  if (z.cols() != model.latent_dim()) throw ContractError("joint_log_density: latent dimension mismatch");
  if (x.rows() != 1 && x.rows() != z.rows()) throw ContractError("joint_log_density: x must have 1 or S rows");
  check_observations(model, x);
  Tape tape;
  auto theta = model.decoder.bind(tape, model.theta, false);
  return joint_log_density(model, theta, x, tape.constant(z)).value();
}

EnergyModel posterior_target(const LatentVariableModel& model, const Tensor& x) {
  check_observations(model, x);
  if (x.rows() != 1) throw ContractError("posterior_target: one observation expected");
  DifferentiableFunction fn("posterior", {}, model.latent_dim(), 1, [model, x](std::span<const Var>, Var z) {
    auto theta = model.decoder.bind(z.tape(), model.theta, false);
    return joint_log_density(model, theta, x, z);
  });
  return EnergyModel("posterior", std::move(fn));
}

ElboEstimate elbo_estimate(const LatentVariableModel& model, const ImplicitGenerator& inference, const Tensor& x,
                           Index samples, RandomStream& stream) {
  if (samples < 1) throw ContractError("elbo_estimate: needs M >= 1");
  if (!inference.invertible_mode()) throw ContractError("elbo_estimate: inference network is not invertible");
  const Tensor noise = draw_gaussian(stream, samples, inference.noise_dim());
  const Tensor z = inference.map(x, noise);
  const Tensor log_q = generator_log_density(inference, x, noise);
  Tensor rows = joint_log_density(model, x, z);
  for (Index i = 0; i < samples; ++i) rows(i, 0) -= log_q(i, 0);
  return summarize(rows);
}

MacVaeResult train_macvae(LatentVariableModel model, ImplicitGenerator inference, const Tensor& data,
                          const MacVaeConfig& config, Critic* critic) {
  model.validate();
  config.flow.validate();
  config.distill.validate();
  if (data.rows() < 1) throw ContractError("train_macvae: empty dataset");
  check_observations(model, data);
  if (inference.condition_dim() != model.data_dim() || inference.output_dim() != model.latent_dim()) {
    throw ContractError("train_macvae: inference network shape mismatch");
  }
  const Index n = data.rows();
  const Index s = config.distill.batch_size;
  const Index k_max = config.flow.num_steps;
  const Index teacher_step = std::min(config.distill.substeps, k_max);
  Optimizer gen_opt(config.distill.optimizer, config.distill.learning_rate);
  Optimizer theta_opt(OptimizerKind::kAdam, config.theta_learning_rate);
  MacVaeResult result{model, inference, {}};

  for (Index e = 0; e < config.epochs; ++e) {
    std::vector<TeacherBatch> batches;
    std::vector<Tensor> paths;
    for (Index j = 0; j < n; ++j) {
      const Tensor x = data.rows_slice(j, 1);
      const EnergyModel target = posterior_target(result.model, x);
      const auto salt = static_cast<std::uint64_t>(e * n + j);
      auto stream = make_stream(config.seed, {stream_tag::kGenerator, salt});
      GeneratorDraw draw = draw_generator(result.inference, x, stream, s);
      auto streams = make_particle_streams(config.seed, salt, s);
      Tensor teacher = draw.samples.samples();
      std::vector<Tensor> path;
      try {
        run_flow(draw.samples, target, config.flow, streams, [&](Index k, const ParticleCloud& c) {
          if (k == teacher_step) teacher = c.samples();
          if (k >= 1 || k_max == 0) path.push_back(c.samples());
        });
      } catch (const DivergenceError& err) {
        throw NumericError("train_macvae: epoch " + std::to_string(e) + ", observation " + std::to_string(j) +
                           ": " + err.what());
      }
      batches.push_back({x, std::move(draw.noise), draw.samples.samples(), std::move(teacher)});
      paths.push_back(vstack(path));
    }

    MacVaeEpoch entry;
    entry.epoch = e;
    entry.distill_distance =
        distill_step(result.inference, batches, config.distill, gen_opt, critic, config.seed, static_cast<std::uint64_t>(e));

    Tape tape;
    auto theta = result.model.decoder.bind(tape, result.model.theta, true);
    Var loss;
    for (Index j = 0; j < n; ++j) {
      Var term = mean(joint_log_density(result.model, theta, data.rows_slice(j, 1), tape.constant(paths[static_cast<std::size_t>(j)])));
      loss = j == 0 ? term : loss + term;
    }
    loss = loss * (-1.0 / static_cast<double>(n));
    entry.theta_loss = loss.value().item();
    if (config.update_theta && !result.model.theta.empty()) {
      tape.backward(loss);
      theta_opt.step(result.model.theta, grads_of(tape, theta, result.model.theta));
      if (!result.model.theta.all_finite()) throw NumericError("train_macvae: non-finite decoder parameters");
    }

    entry.elbo = std::numeric_limits<double>::quiet_NaN();
    if (config.elbo_samples > 0 && result.inference.invertible_mode()) {
      double total = 0.0;
      for (Index j = 0; j < n; ++j) {
        auto es = make_stream(config.seed, {stream_tag::kEstimator, static_cast<std::uint64_t>(e), static_cast<std::uint64_t>(j)});
        total += elbo_estimate(result.model, result.inference, data.rows_slice(j, 1), config.elbo_samples, es).value;
      }
      entry.elbo = total / static_cast<double>(n);
    }
    result.log.push_back(entry);
  }
  return result;
}

LatentVariableModel make_conjugate_model(const Tensor& w, const Tensor& b, double sd) {
  const Index l = w.rows();
  const Index d = w.cols();
  if (b.rows() != 1 || b.cols() != d) throw ContractError("make_conjugate_model: bias shape mismatch");
  LatentVariableModel m;
  m.prior = standard_normal_prior(l);
  m.decoder = make_linear(l, d, "dec");
  m.theta.add("dec.weight", {l, d}, w);
  m.theta.add("dec.bias", {d}, b);
  m.likelihood = Likelihood::kGaussian;
  m.noise_sd = sd;
  m.validate();
  return m;
}

namespace {

struct ConjugateParts {
  Tensor w, b;
  double var;
};

ConjugateParts conjugate_parts(const LatentVariableModel& model) {
  if (model.likelihood != Likelihood::kGaussian || !model.theta.contains("dec.weight") ||
      !model.theta.contains("dec.bias")) {
    throw ContractError("not a conjugate linear-Gaussian model");
  }
  return {model.theta.at("dec.weight").as_tensor(), model.theta.at("dec.bias").as_tensor(),
          model.noise_sd * model.noise_sd};
}

}  // namespace

GaussianMoments conjugate_posterior(const LatentVariableModel& model, const Tensor& x) {
  const auto [w, b, var] = conjugate_parts(model);
  const Index l = w.rows();
  Tensor precision = linalg::matmul(w, linalg::transpose(w));
  for (Index i = 0; i < precision.size(); ++i) precision[i] /= var;
  for (Index i = 0; i < l; ++i) precision(i, i) += 1.0;
  const Tensor cov = linalg::inverse(precision);
  Tensor centered(1, x.cols());
  for (Index j = 0; j < x.cols(); ++j) centered[j] = x[j] - b[j];
  Tensor mean = linalg::matmul(linalg::matmul(centered, linalg::transpose(w)), cov);
  for (Index i = 0; i < mean.size(); ++i) mean[i] /= var;
  return {mean, cov};
}

double conjugate_log_marginal(const LatentVariableModel& model, const Tensor& x) {
  const auto [w, b, var] = conjugate_parts(model);
  const Index d = w.cols();
  Tensor cov = linalg::matmul(linalg::transpose(w), w);
  for (Index i = 0; i < d; ++i) cov(i, i) += var;
  const Tensor prec = linalg::inverse(cov);
  double quad = 0.0;
  for (Index i = 0; i < d; ++i) {
    for (Index j = 0; j < d; ++j) quad += (x[i] - b[i]) * prec(i, j) * (x[j] - b[j]);
  }
  return -0.5 * quad - 0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi) - 0.5 * linalg::log_abs_det(cov);
}

ImplicitGenerator conjugate_posterior_generator(const LatentVariableModel& model) {
  const auto [w, b, var] = conjugate_parts(model);
  const Index l = w.rows();
  const GaussianMoments post = conjugate_posterior(model, b);  // mean 0, covariance P^-1
  const Tensor chol = linalg::cholesky(post.covariance);
  // mean(x) = (x - b) C with C = W^T P^-1 / sd^2.
  Tensor c = linalg::matmul(linalg::transpose(w), post.covariance);
  for (Index i = 0; i < c.size(); ++i) c[i] /= var;
  Tensor shift = linalg::matmul(b, c);
  for (Index i = 0; i < l; ++i) shift[i] = -shift[i];
  return make_affine_generator(chol, c, shift);
}

PlanarFlowStack make_planar_stack(Index data_dim, Index latent_dim, Index layers, RandomStream& init) {
  DifferentiableFunction sig("planar_stack", planar_signature(data_dim, latent_dim, layers), 1, 1,
                             [](std::span<const Var>, Var x) { return x; });
  return {data_dim, latent_dim, layers, sig.init_params(init)};
}

ElboEstimate planar_nf_elbo(const PlanarFlowStack& stack, const LatentVariableModel& model, const Tensor& x,
                            Index samples, RandomStream& stream) {
  if (samples < 1) throw ContractError("planar_nf_elbo: needs M >= 1");
  check_observations(model, x);
  const Tensor eps = draw_gaussian(stream, samples, stack.latent_dim);
  Tape tape;
  std::vector<Var> p;
  for (const auto& e : stack.params.entries()) p.push_back(tape.constant(e.as_tensor()));
  auto theta = model.decoder.bind(tape, model.theta, false);
  const Tensor rows = planar_elbo_rows(stack, model, p, theta, x, eps).value();
  if (!rows.all_finite()) throw NumericError("planar_nf_elbo: non-positive layer determinant or non-finite term");
  return summarize(rows);
}

PlanarFlowStack train_planar_nf(PlanarFlowStack stack, const LatentVariableModel& model, const Tensor& data,
                                Index steps, double learning_rate, Index samples, std::uint64_t seed) {
  check_observations(model, data);
  Optimizer opt(OptimizerKind::kAdam, learning_rate);
  for (Index e = 0; e < steps; ++e) {
    auto stream = make_stream(seed, {stream_tag::kEstimator, static_cast<std::uint64_t>(e)});
    Tape tape;
    std::vector<Var> p;
    for (const auto& entry : stack.params.entries()) p.push_back(tape.variable(entry.as_tensor()));
    auto theta = model.decoder.bind(tape, model.theta, false);
    Var total;
    for (Index j = 0; j < data.rows(); ++j) {
      const Tensor eps = draw_gaussian(stream, samples, stack.latent_dim);
      Var term = mean(planar_elbo_rows(stack, model, p, theta, data.rows_slice(j, 1), eps));
      total = j == 0 ? term : total + term;
    }
    Var loss = total * (-1.0 / static_cast<double>(data.rows()));
    tape.backward(loss);
    opt.step(stack.params, grads_of(tape, p, stack.params));
    if (!stack.params.all_finite()) throw NumericError("train_planar_nf: non-finite parameters");
  }
  return stack;
}

}  // namespace ctflow

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

#include "ctflow/macgan.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ctflow/errors.hpp"
#include "ctflow/metrics.hpp"

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

void check_batches(const EnergyNet& energy, const Tensor& data, const Tensor& model_batch) {
  if (data.rows() < 1 || model_batch.rows() < 1) throw ContractError("mle_gradient: empty batch");
  if (data.cols() != energy.u.input_dim() || model_batch.cols() != energy.u.input_dim()) {
    throw ContractError("mle_gradient: batch dimension mismatch");
  }
}

double mean_of(const Tensor& col) {
  double total = 0.0;
  for (Index i = 0; i < col.rows(); ++i) total += col(i, 0);
  return total / static_cast<double>(col.rows());
}

double se_of(const std::vector<double>& v) {
  const auto n = static_cast<double>(v.size());
  if (v.size() < 2) return 0.0;
  double m = 0.0;
  for (double x : v) m += x;
  m /= n;
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / (n - 1.0) / n);
}

}  // namespace

EnergyRegularizer parse_energy_regularizer(const std::string& name) {
  if (name == "none") return EnergyRegularizer::kNone;
  if (name == "weight_clip") return EnergyRegularizer::kWeightClip;
  if (name == "gradient_penalty") return EnergyRegularizer::kGradientPenalty;
  throw ConfigError("unknown energy regularizer '" + name + "'");
}

std::string to_string(EnergyRegularizer reg) {
  switch (reg) {
    case EnergyRegularizer::kNone: return "none";
    case EnergyRegularizer::kWeightClip: return "weight_clip";
    case EnergyRegularizer::kGradientPenalty: return "gradient_penalty";
  }
  return "?";
}

EnergyNet make_energy_net(Index dim, const std::vector<Index>& hidden, double confinement, EnergyRegularizer reg,
                          double clip, double penalty, RandomStream& init) {
  std::vector<Index> sizes = {dim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(1);
  EnergyNet net{with_quadratic_confinement(make_mlp(sizes, Activation::kTanh, "energy"), confinement), {}, reg, clip,
                penalty};
  net.theta = net.u.init_params(init);
  if (reg == EnergyRegularizer::kWeightClip) {
    for (auto& e : net.theta.entries()) {
      for (double& v : e.values) v = std::clamp(v, -clip, clip);
    }
  }
  return net;
}

EnergyModel energy_target(const EnergyNet& energy) { return EnergyModel("energy", energy.u, energy.theta); }

double mle_surrogate(const EnergyNet& energy, const Tensor& data, const Tensor& model_batch) {
  check_batches(energy, data, model_batch);
  return mean_of(evaluate(energy.u, energy.theta, data)) - mean_of(evaluate(energy.u, energy.theta, model_batch));
}

ParamMap mle_gradient(const EnergyNet& energy, const Tensor& data, const Tensor& model_batch) {
  check_batches(energy, data, model_batch);
  Tape tape;
  auto p = energy.u.bind(tape, energy.theta, true);
  Var obj = mean(energy.u.apply(p, tape.constant(data))) - mean(energy.u.apply(p, tape.constant(model_batch)));
  tape.backward(obj);
  return grads_of(tape, p, energy.theta);
}

void energy_update(EnergyNet& energy, const Tensor& data, const Tensor& model_batch, Optimizer& optimizer,
                   RandomStream& stream) {
  check_batches(energy, data, model_batch);
  Tape tape;
  auto p = energy.u.bind(tape, energy.theta, true);
  Var obj = mean(energy.u.apply(p, tape.constant(data))) - mean(energy.u.apply(p, tape.constant(model_batch)));
  Var loss = -obj;
  if (energy.regularizer == EnergyRegularizer::kGradientPenalty) {
    if (data.rows() != model_batch.rows()) throw ContractError("energy_update: penalty needs equal batch sizes");
    const auto eps = draw_uniform(stream, data.rows());
    Tensor mix(data.rows(), data.cols());
    for (Index i = 0; i < data.rows(); ++i) {
      const double e = eps[static_cast<std::size_t>(i)];
      for (Index j = 0; j < data.cols(); ++j) mix(i, j) = e * data(i, j) + (1.0 - e) * model_batch(i, j);
    }
    Var g = energy.u.apply_input_gradient(p, tape.constant(mix));
    loss = loss + energy.penalty * mean(square(relu(norm_rows(g) - 1.0)));
  }
  tape.backward(loss);
  optimizer.step(energy.theta, grads_of(tape, p, energy.theta));
  if (energy.regularizer == EnergyRegularizer::kWeightClip) {
    for (auto& e : energy.theta.entries()) {
      for (double& v : e.values) v = std::clamp(v, -energy.clip, energy.clip);
    }
  }
  if (!energy.theta.all_finite()) throw NumericError("energy_update: non-finite energy parameters");
}

namespace {

struct ImportanceDraws {
  std::vector<double> u;
  std::vector<double> log_q;
};

ImportanceDraws importance_draws(const EnergyModel& energy, const ImplicitGenerator& gen, Index samples,
                                 RandomStream& stream) {
  if (!gen.invertible_mode()) throw ContractError("log partition estimate needs an invertible generator");
  if (samples < 2) throw ContractError("log partition estimate needs M >= 2");
  if (gen.output_dim() != energy.dimension()) throw ContractError("generator/energy dimension mismatch");
  const Tensor cond = empty_condition(gen);
  const Tensor noise = draw_gaussian(stream, samples, gen.noise_dim());
  const Tensor x = gen.map(cond, noise);
  const Tensor log_q = generator_log_density(gen, cond, noise);
  const Tensor u = energy.log_density(x);
  ImportanceDraws d;
  for (Index i = 0; i < samples; ++i) {
    d.u.push_back(u(i, 0));
    d.log_q.push_back(log_q(i, 0));
  }
  return d;
}

LogPartitionEstimate log_mean_exp(const std::vector<double>& lw) {
  const double m = *std::max_element(lw.begin(), lw.end());
  std::vector<double> w(lw.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < lw.size(); ++i) {
    w[i] = std::exp(lw[i] - m);
    mean += w[i];
  }
  mean /= static_cast<double>(lw.size());
  return {m + std::log(mean), se_of(w) / mean};
}

}  // namespace

LogPartitionEstimate log_partition_estimate(const EnergyModel& energy, const ImplicitGenerator& gen, Index samples,
                                            RandomStream& stream) {
  const auto d = importance_draws(energy, gen, samples, stream);
  std::vector<double> lw(d.u.size());
  for (std::size_t i = 0; i < lw.size(); ++i) lw[i] = d.u[i] - d.log_q[i];
  return log_mean_exp(lw);
}

MleBoundReport mle_bound_check(const EnergyModel& energy, const ImplicitGenerator& gen, const Tensor& data,
                               Index samples, RandomStream& stream) {
  if (data.rows() < 1) throw ContractError("mle_bound_check: empty dataset");
  const auto d = importance_draws(energy, gen, samples, stream);
  const Tensor ud = energy.log_density(data);
  std::vector<double> data_u(static_cast<std::size_t>(data.rows()));
  for (Index i = 0; i < data.rows(); ++i) data_u[static_cast<std::size_t>(i)] = ud(i, 0);

  const std::size_t m = d.u.size();
  std::vector<double> lw(m);
  for (std::size_t i = 0; i < m; ++i) lw[i] = d.u[i] - d.log_q[i];
  const LogPartitionEstimate lz = log_mean_exp(lw);

  MleBoundReport r;
  for (double v : data_u) r.data_u += v;
  r.data_u /= static_cast<double>(data_u.size());
  double mean_lw = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    r.model_u += d.u[i];
    r.model_log_q += d.log_q[i];
    mean_lw += lw[i];
  }
  r.model_u /= static_cast<double>(m);
  r.model_log_q /= static_cast<double>(m);
  mean_lw /= static_cast<double>(m);
  r.log_z = lz.log_z;
  r.log_z_se = lz.standard_error;
  r.lhs = r.data_u - lz.log_z;
  r.rhs = r.data_u - r.model_u + r.model_log_q;
  r.gap = lz.log_z - mean_lw;

  const double se_data = se_of(data_u);
  const double se_lw = se_of(lw);
  r.lhs_se = std::hypot(se_data, lz.standard_error);
  r.rhs_se = std::hypot(se_data, se_lw);
  // Influence of draw i on log mean w - mean log w.
  const double top = *std::max_element(lw.begin(), lw.end());
  double wsum = 0.0;
  for (double v : lw) wsum += std::exp(v - top);
  const double wmean = wsum / static_cast<double>(m);
  std::vector<double> infl(m);
  for (std::size_t i = 0; i < m; ++i) infl[i] = std::exp(lw[i] - top) / wmean - lw[i];
  r.gap_se = se_of(infl);
  return r;
}

double scheduled_learning_rate(long epoch, long total_epochs, double base_lr) {
  if (epoch < 50) return base_lr;
  return linear_decay_step(epoch, total_epochs, base_lr);
}

MacGanResult train_macgan(EnergyNet energy, ImplicitGenerator generator, const Tensor& data,
                          const MacGanConfig& config, Critic* critic) {
  if (data.rows() < 1) throw ContractError("train_macgan: empty dataset");
  if (data.cols() != energy.u.input_dim() || generator.output_dim() != data.cols()) {
    throw ContractError("train_macgan: dimension mismatch");
  }
  if (generator.condition_dim() != 0) throw ContractError("train_macgan: generator must be unconditional");
  config.flow.validate();
  config.distill.validate();
  if (config.data_batch < 1) throw ContractError("train_macgan: data batch must be >= 1");
  if (config.decay_schedule && config.epochs <= 50) throw ContractError("train_macgan: decay needs > 50 epochs");

  Optimizer theta_opt(OptimizerKind::kAdam, config.theta_learning_rate, 0.5, 0.999);
  Optimizer gen_opt(config.distill.optimizer, config.distill.learning_rate);
  const Tensor cond = empty_condition(generator);
  const Index n = data.rows();
  MacGanResult result{std::move(energy), std::move(generator), {}};
  constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

  for (Index e = 0; e < config.epochs; ++e) {
    const auto ue = static_cast<std::uint64_t>(e);
    DistillConfig distill = config.distill;
    double theta_lr = config.theta_learning_rate;
    if (config.decay_schedule) {
      theta_lr = scheduled_learning_rate(e, config.epochs, config.theta_learning_rate);
      distill.learning_rate = scheduled_learning_rate(e, config.epochs, config.distill.learning_rate);
    }
    theta_opt.set_learning_rate(theta_lr);

    const EnergyModel target = energy_target(result.energy);
    TeacherBatch batch;
    try {
      batch = make_teacher_batch(result.generator, cond, target, config.flow.step_size, config.flow.num_steps,
                                 config.seed, ue, distill.batch_size);
    } catch (const DivergenceError& err) {
      throw NumericError("train_macgan: epoch " + std::to_string(e) + ": " + err.what());
    }
    MacGanEpoch entry;
    entry.epoch = e;
    entry.distill_distance =
        distill_step(result.generator, std::span<const TeacherBatch>(&batch, 1), distill, gen_opt, critic, config.seed, ue);

    auto gs = make_stream(config.seed, {stream_tag::kGenerator, ue, 1});
    const Tensor model_batch = sample_generator(result.generator, cond, gs, config.data_batch).samples();
    auto ds = make_stream(config.seed, {stream_tag::kData, ue});
    const auto u = draw_uniform(ds, config.data_batch);
    Tensor data_batch(config.data_batch, data.cols());
    for (Index i = 0; i < config.data_batch; ++i) {
      const Index row = std::min<Index>(n - 1, static_cast<Index>(u[static_cast<std::size_t>(i)] * static_cast<double>(n)));
      for (Index j = 0; j < data.cols(); ++j) data_batch(i, j) = data(row, j);
    }
    entry.e_data_u = mean_of(evaluate(result.energy.u, result.energy.theta, data_batch));
    entry.e_gen_u = mean_of(evaluate(result.energy.u, result.energy.theta, model_batch));
    auto ps = make_stream(config.seed, {stream_tag::kCritic, ue, 7});
    energy_update(result.energy, data_batch, model_batch, theta_opt, ps);
    entry.theta_max_abs = result.energy.theta.max_abs();

    entry.w1_diag = kNaN;
    if (!config.heldout.empty() && config.diag_every > 0 && (e % config.diag_every == 0 || e + 1 == config.epochs)) {
      const Index m = std::min({config.heldout.rows(), config.diag_samples, kMaxExactParticles});
      auto ws = make_stream(config.seed, {stream_tag::kEstimator, ue, 1});
      const Tensor gen_samples = sample_generator(result.generator, cond, ws, m).samples();
      entry.w1_diag = wasserstein_exact(gen_samples, config.heldout.rows_slice(0, m), 1);
    }
    entry.log_z = kNaN;
    entry.bound_gap = kNaN;
    entry.bound_gap_se = kNaN;
    if (config.bound_samples > 0 && result.generator.invertible_mode()) {
      auto bs = make_stream(config.seed, {stream_tag::kEstimator, ue, 2});
      const MleBoundReport r =
          mle_bound_check(energy_target(result.energy), result.generator, data, config.bound_samples, bs);
      entry.log_z = r.log_z;
      entry.bound_gap = r.gap;
      entry.bound_gap_se = r.gap_se;
    }
    result.log.push_back(entry);
  }
  return result;
}

}  // namespace ctflow

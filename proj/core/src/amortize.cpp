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

#include "ctflow/amortize.hpp"

#include <algorithm>
#include <cmath>

#include "ctflow/errors.hpp"
#include "ctflow/flow.hpp"
#include "ctflow/metrics.hpp"

namespace ctflow {
namespace {

ParamMap collect_grads(const Tape& tape, const std::vector<Var>& vars, const ParamMap& like) {
  ParamMap g = like.zeros_like();
  for (std::size_t i = 0; i < vars.size(); ++i) {
    const Tensor t = tape.grad(vars[i]);
    auto& values = g.entries()[i].values;
    std::copy(t.values().begin(), t.values().end(), values.begin());
  }
  return g;
}

void clip_params(ParamMap& params, double c) {
  for (auto& e : params.entries()) {
    for (double& v : e.values) v = std::clamp(v, -c, c);
  }
}

// Rows [x, z] with x repeated for every row of z.
Tensor pair_rows(const Tensor& condition, const Tensor& z) {
  if (condition.cols() == 0) return z;
  Tensor rep(z.rows(), condition.cols());
  for (Index i = 0; i < z.rows(); ++i) {
    for (Index j = 0; j < condition.cols(); ++j) rep(i, j) = condition(condition.rows() == 1 ? 0 : i, j);
  }
  return hstack(rep, z);
}

Var pair_rows(Tape& tape, const Tensor& condition, Var z) {
  if (condition.cols() == 0) return z;
  Tensor rep(z.rows(), condition.cols());
  for (Index i = 0; i < z.rows(); ++i) {
    for (Index j = 0; j < condition.cols(); ++j) rep(i, j) = condition(condition.rows() == 1 ? 0 : i, j);
  }
  return concat_cols(tape.constant(rep), z);
}

double mean_output(const DifferentiableFunction& fn, const ParamMap& params, const Tensor& x) {
  const Tensor v = evaluate(fn, params, x);
  double total = 0.0;
  for (Index i = 0; i < v.rows(); ++i) total += v(i, 0);
  return total / static_cast<double>(v.rows());
}

}  // namespace

DistanceKind parse_distance_kind(const std::string& name) {
  if (name == "euclidean") return DistanceKind::kEuclidean;
  if (name == "exact_ot") return DistanceKind::kExactOt;
  if (name == "critic") return DistanceKind::kCritic;
  throw ConfigError("unknown distance kind '" + name + "'");
}

std::string to_string(DistanceKind kind) {
  switch (kind) {
    case DistanceKind::kEuclidean: return "euclidean";
    case DistanceKind::kExactOt: return "exact_ot";
    case DistanceKind::kCritic: return "critic";
  }
  return "?";
}

void DistillConfig::validate() const {
  if (batch_size < 1) throw ContractError("DistillConfig: batch size must be >= 1");
  if (kind == DistanceKind::kExactOt && batch_size < 2) throw ContractError("DistillConfig: exact_ot needs S >= 2");
  if (!(learning_rate > 0.0)) throw ContractError("DistillConfig: step size must be positive");
  if (inner_steps < 1 || substeps < 0 || critic_steps < 1) throw ContractError("DistillConfig: bad step counts");
  if (kind == DistanceKind::kCritic && !(critic_learning_rate > 0.0)) {
    throw ContractError("DistillConfig: critic step size must be positive");
  }
}

CriticRegularizer parse_critic_regularizer(const std::string& name) {
  if (name == "none") return CriticRegularizer::kNone;
  if (name == "weight_clip") return CriticRegularizer::kWeightClip;
  if (name == "gradient_penalty") return CriticRegularizer::kGradientPenalty;
  throw ConfigError("unknown critic regularizer '" + name + "'");
}

std::string to_string(CriticRegularizer reg) {
  switch (reg) {
    case CriticRegularizer::kNone: return "none";
    case CriticRegularizer::kWeightClip: return "weight_clip";
    case CriticRegularizer::kGradientPenalty: return "gradient_penalty";
  }
  return "?";
}

Critic make_critic(Index input_dim, const std::vector<Index>& hidden, CriticRegularizer reg, double clip,
                   double penalty, double learning_rate, RandomStream& init) {
  std::vector<Index> sizes = {input_dim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(1);
  Critic critic{make_mlp(sizes, Activation::kTanh, "critic"), {}, reg, clip, penalty,
                Optimizer(OptimizerKind::kAdam, learning_rate, 0.5, 0.9)};
  critic.params = critic.network.init_params(init);
  if (reg == CriticRegularizer::kWeightClip) clip_params(critic.params, clip);
  return critic;
}

double critic_objective(const Critic& critic, const Tensor& real, const Tensor& fake) {
  return mean_output(critic.network, critic.params, real) - mean_output(critic.network, critic.params, fake);
}

double critic_update(Critic& critic, const Tensor& real, const Tensor& fake, double step_size, RandomStream& stream) {
  if (real.rows() != fake.rows() || real.cols() != fake.cols()) {
    throw ContractError("critic_update: real and fake batches must share a shape");
  }
  if (real.rows() < 1) throw ContractError("critic_update: empty batch");
  Tape tape;
  auto p = critic.network.bind(tape, critic.params, true);
  Var objective = mean(critic.network.apply(p, tape.constant(real))) - mean(critic.network.apply(p, tape.constant(fake)));
  Var loss = -objective;
  if (critic.regularizer == CriticRegularizer::kGradientPenalty) {
    const auto eps = draw_uniform(stream, real.rows());
    Tensor mix(real.rows(), real.cols());
    for (Index i = 0; i < real.rows(); ++i) {
      const double e = eps[static_cast<std::size_t>(i)];
      for (Index j = 0; j < real.cols(); ++j) mix(i, j) = e * real(i, j) + (1.0 - e) * fake(i, j);
    }
    Var g = critic.network.apply_input_gradient(p, tape.constant(mix));
    loss = loss + critic.penalty * mean(square(relu(norm_rows(g) - 1.0)));
  }
  tape.backward(loss);
  const double before = objective.value().item();
  critic.optimizer.set_learning_rate(step_size);
  critic.optimizer.step(critic.params, collect_grads(tape, p, critic.params));
  if (critic.regularizer == CriticRegularizer::kWeightClip) clip_params(critic.params, critic.clip);
  if (!critic.params.all_finite()) throw NumericError("critic_update: non-finite critic parameters");
  return before;
}

TeacherBatch make_teacher_batch(const ImplicitGenerator& gen, const Tensor& condition, const EnergyModel& target,
                                double h, Index substeps, std::uint64_t seed, std::uint64_t salt, Index count) {
  if (substeps < 0) throw ContractError("make_teacher_batch: substeps must be >= 0");
  if (target.dimension() != gen.output_dim()) throw ContractError("make_teacher_batch: target dimension mismatch");
  auto stream = make_stream(seed, {stream_tag::kGenerator, salt});
  GeneratorDraw draw = draw_generator(gen, condition, stream, count);
  auto streams = make_particle_streams(seed, salt, count);
  ParticleCloud cloud = draw.samples;
  for (Index k = 1; k <= substeps; ++k) cloud = langevin_step(cloud, target, h, streams, {true, k});
  return {condition.rows() == 0 ? Tensor(1, 0) : condition, std::move(draw.noise), draw.samples.samples(),
          cloud.samples()};
}

DistillObjective distill_objective(const ImplicitGenerator& gen, std::span<const TeacherBatch> batches,
                                   const DistillConfig& config, const Critic* critic, std::uint64_t seed,
                                   std::uint64_t round, std::uint64_t inner) {
  if (batches.empty()) throw ContractError("distill: no teacher batches");
  if (config.kind == DistanceKind::kCritic && critic == nullptr) {
    throw ContractError("distill: critic mode needs a critic");
  }
  Tape tape;
  auto p = gen.network().bind(tape, gen.params(), true);
  std::vector<Var> critic_params;
  if (config.kind == DistanceKind::kCritic) critic_params = critic->network.bind(tape, critic->params, false);

  DistillObjective result;
  Var total;
  for (std::size_t g = 0; g < batches.size(); ++g) {
    const TeacherBatch& b = batches[g];
    const Index s = b.teacher.rows();
    if (b.teacher.cols() != gen.output_dim()) throw ContractError("distill: teacher dimension mismatch");
    Var loss;
    if (config.kind == DistanceKind::kEuclidean) {
      if (b.noise.rows() != s) throw ContractError("distill: teacher and student batch sizes differ");
      Var out = gen.network().apply(p, tape.constant(gen.network_input(b.condition, b.noise)));
      loss = sum(square(out - tape.constant(b.teacher))) * (1.0 / static_cast<double>(s));
      result.distances.push_back(loss.value().item());
    } else {
      auto stream = make_stream(seed, {stream_tag::kStudent, round, inner, static_cast<std::uint64_t>(g)});
      const Tensor noise = draw_gaussian(stream, s, gen.noise_dim());
      Var out = gen.network().apply(p, tape.constant(gen.network_input(b.condition, noise)));
      if (config.kind == DistanceKind::kExactOt) {
        const TransportPlan plan = exact_transport(out.value(), b.teacher, 2);
        Tensor matched(s, b.teacher.cols());
        for (Index i = 0; i < s; ++i) {
          const Index j = plan.assignment[static_cast<std::size_t>(i)];
          for (Index c = 0; c < matched.cols(); ++c) matched(i, c) = b.teacher(j, c);
        }
        loss = sum(square(out - tape.constant(matched))) * (1.0 / static_cast<double>(s));
        result.distances.push_back(std::sqrt(plan.cost));
      } else {
        Var f = critic->network.apply(critic_params, pair_rows(tape, b.condition, out));
        loss = -mean(f);
        result.distances.push_back(critic_objective(*critic, pair_rows(b.condition, b.teacher),
                                                    pair_rows(b.condition, out.value())));
      }
    }
    total = g == 0 ? loss : total + loss;
  }
  tape.backward(total);
  result.value = total.value().item();
  result.grad = collect_grads(tape, p, gen.params());
  return result;
}

double distill_step(ImplicitGenerator& gen, std::span<const TeacherBatch> batches, const DistillConfig& config,
                    Optimizer& optimizer, Critic* critic, std::uint64_t seed, std::uint64_t round) {
  config.validate();
  if (config.kind == DistanceKind::kCritic && critic == nullptr) {
    throw ContractError("distill_step: critic mode needs a critic");
  }
  optimizer.set_learning_rate(config.learning_rate);
  double first = 0.0;
  for (Index inner = 0; inner < config.inner_steps; ++inner) {
    const auto in = static_cast<std::uint64_t>(inner);
    if (config.kind == DistanceKind::kCritic) {
      for (Index cs = 0; cs < config.critic_steps; ++cs) {
        std::vector<Tensor> real_blocks, fake_blocks;
        for (std::size_t g = 0; g < batches.size(); ++g) {
          const auto& b = batches[g];
          auto s = make_stream(seed, {stream_tag::kCritic, round, in, static_cast<std::uint64_t>(cs), g + 1});
          const Tensor noise = draw_gaussian(s, b.teacher.rows(), gen.noise_dim());
          real_blocks.push_back(pair_rows(b.condition, b.teacher));
          fake_blocks.push_back(pair_rows(b.condition, gen.map(b.condition, noise)));
        }
        auto gp = make_stream(seed, {stream_tag::kCritic, round, in, static_cast<std::uint64_t>(cs), 0});
        critic_update(*critic, vstack(real_blocks), vstack(fake_blocks), config.critic_learning_rate, gp);
      }
    }
    const DistillObjective obj = distill_objective(gen, batches, config, critic, seed, round, in);
    if (inner == 0) {
      for (double d : obj.distances) first += d;
      first /= static_cast<double>(obj.distances.size());
    }
    ParamMap params = gen.params();
    optimizer.step(params, obj.grad);
    if (!params.all_finite()) throw NumericError("distill_step: non-finite generator parameters");
    gen.set_params(std::move(params));
  }
  return first;
}

}  // namespace ctflow

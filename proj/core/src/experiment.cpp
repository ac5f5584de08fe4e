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


#include "ctflow/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "json.hpp"

#include "ctflow/errors.hpp"
#include "ctflow/io.hpp"
#include "ctflow/linalg.hpp"
#include "ctflow/macgan.hpp"
#include "ctflow/macvae.hpp"
#include "ctflow/metrics.hpp"
#include "ctflow/param_map.hpp"
#include "ctflow/random.hpp"
#include "ctflow/targets.hpp"

namespace ctflow {

using json = nlohmann::json;

namespace {

const std::vector<std::string> kKindNames = {"flow_oracle",      "mse_rate",       "w2_decay", "prop1_collapse",
                                             "macvae_synthetic", "macgan_mixture", "h_sweep",  "bound_check"};

// Collects every problem with a spec before reporting.
class Problems {
 public:
  void add(const std::string& field, const std::string& message) { items_.push_back(field + ": " + message); }
  bool empty() const { return items_.empty(); }
  [[noreturn]] void raise() const {
    std::string text = "invalid experiment spec";
    for (const auto& item : items_) text += "\n  " + item;
    throw ValidationError(text);
  }

 private:
  std::vector<std::string> items_;
};

std::string join_path(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

// Reads known keys of one JSON object; anything left over is reported.
class ObjectReader {
 public:
  ObjectReader(const json& object, std::string prefix, Problems& problems)
      : object_(object), prefix_(std::move(prefix)), problems_(problems) {
    if (!object_.is_object()) problems_.add(prefix_.empty() ? "spec" : prefix_, "expected an object");
  }

  ~ObjectReader() {
    if (!object_.is_object()) return;
    for (const auto& [key, value] : object_.items()) {
      if (!seen_.count(key)) problems_.add(join_path(prefix_, key), "unknown field");
    }
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    if (!object_.is_object()) return nullptr;
    auto it = object_.find(key);
    return it == object_.end() ? nullptr : &*it;
  }

  std::string field(const std::string& key) const { return join_path(prefix_, key); }
  Problems& problems() { return problems_; }

  template <typename T>
  void read(const std::string& key, T& out) {
    const json* v = find(key);
    if (v) convert(*v, field(key), out);
  }

 private:
  void convert(const json& v, const std::string& name, double& out) {
    if (v.is_number()) out = v.get<double>();
    else problems_.add(name, "expected a number");
  }
  void convert(const json& v, const std::string& name, Index& out) {
    if (v.is_number_integer()) out = v.get<Index>();
    else problems_.add(name, "expected an integer");
  }
  void convert(const json& v, const std::string& name, std::uint64_t& out) {
    if (v.is_number_unsigned()) out = v.get<std::uint64_t>();
    else problems_.add(name, "expected a non-negative integer");
  }
  void convert(const json& v, const std::string& name, int& out) {
    if (v.is_number_integer()) out = v.get<int>();
    else problems_.add(name, "expected an integer");
  }
  void convert(const json& v, const std::string& name, bool& out) {
    if (v.is_boolean()) out = v.get<bool>();
    else problems_.add(name, "expected true or false");
  }
  void convert(const json& v, const std::string& name, std::string& out) {
    if (v.is_string()) out = v.get<std::string>();
    else problems_.add(name, "expected a string");
  }
  template <typename T>
  void convert(const json& v, const std::string& name, std::vector<T>& out) {
    if (!v.is_array()) {
      problems_.add(name, "expected a list");
      return;
    }
    std::vector<T> items(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) convert(v[i], name + "[" + std::to_string(i) + "]", items[i]);
    out = std::move(items);
  }

  const json& object_;
  std::string prefix_;
  Problems& problems_;
  std::set<std::string> seen_;
};

// One (key, member) table per options struct drives reading, writing and
// comparison alike.
template <typename F>
void visit_fields(FlowOracleOptions& o, F&& f) {
  f("particles", o.particles);
  f("initial_mean", o.initial_mean);
  f("initial_var", o.initial_var);
  f("record_every", o.record_every);
}
template <typename F>
void visit_fields(MseRateOptions& o, F&& f) {
  f("steps", o.steps);
  f("rate_constant", o.rate_constant);
  f("repetitions", o.repetitions);
  f("psi", o.psi);
  f("initial_mean", o.initial_mean);
  f("initial_var", o.initial_var);
}
template <typename F>
void visit_fields(W2DecayOptions& o, F&& f) {
  f("times", o.times);
  f("particles", o.particles);
  f("replicas", o.replicas);
  f("initial_mean", o.initial_mean);
  f("initial_var", o.initial_var);
}
template <typename F>
void visit_fields(Prop1Options& o, F&& f) {
  f("methods", o.methods);
  f("rounds", o.rounds);
  f("hidden", o.hidden);
  f("init_spread", o.init_spread);
  f("init_bias", o.init_bias);
  f("reference_factor", o.reference_factor);
  f("reference_particles", o.reference_particles);
  f("eval_samples", o.eval_samples);
}
template <typename F>
void visit_fields(MacVaeOptions& o, F&& f) {
  f("methods", o.methods);
  f("epochs", o.epochs);
  f("latent_dim", o.latent_dim);
  f("decoder_hidden", o.decoder_hidden);
  f("hidden", o.hidden);
  f("theta_learning_rate", o.theta_learning_rate);
  f("eval_samples", o.eval_samples);
  f("conjugate_epochs", o.conjugate_epochs);
  f("conjugate_step_size", o.conjugate_step_size);
  f("conjugate_steps", o.conjugate_steps);
  f("conjugate_learning_rate", o.conjugate_learning_rate);
  f("conjugate_batch", o.conjugate_batch);
  f("conjugate_samples", o.conjugate_samples);
}
template <typename F>
void visit_fields(MacGanOptions& o, F&& f) {
  f("epochs", o.epochs);
  f("theta_learning_rate", o.theta_learning_rate);
  f("decay_schedule", o.decay_schedule);
  f("energy_hidden", o.energy_hidden);
  f("confinement", o.confinement);
  f("regularizer", o.regularizer);
  f("clip", o.clip);
  f("penalty", o.penalty);
  f("generator", o.generator);
  f("planar_layers", o.planar_layers);
  f("hidden", o.hidden);
  f("data_size", o.data_size);
  f("heldout_size", o.heldout_size);
  f("data_batch", o.data_batch);
  f("bound_samples", o.bound_samples);
  f("diag_every", o.diag_every);
  f("eval_samples", o.eval_samples);
}
template <typename F>
void visit_fields(HSweepOptions& o, F&& f) {
  f("grid", o.grid);
  f("total_time", o.total_time);
  f("particles", o.particles);
  f("repetitions", o.repetitions);
}
template <typename F>
void visit_fields(BoundCheckOptions& o, F&& f) {
  f("samples", o.samples);
  f("data_size", o.data_size);
  f("mismatch_var", o.mismatch_var);
}

template <typename F>
void visit_flow(FlowConfig& c, F&& f) {
  f("step_size", c.step_size);
  f("num_steps", c.num_steps);
}

template <typename F>
void visit_distill(DistillConfig& c, F&& f) {
  f("inner_steps", c.inner_steps);
  f("learning_rate", c.learning_rate);
  f("batch_size", c.batch_size);
  f("substeps", c.substeps);
  f("critic_steps", c.critic_steps);
  f("critic_learning_rate", c.critic_learning_rate);
}

template <typename T>
json to_json_value(const T& v) {
  return json(v);
}

}  // namespace

ExperimentKind parse_experiment_kind(const std::string& name) {
  for (std::size_t i = 0; i < kKindNames.size(); ++i) {
    if (kKindNames[i] == name) return static_cast<ExperimentKind>(i);
  }
  throw ConfigError("unknown experiment kind '" + name + "'");
}

std::string to_string(ExperimentKind kind) { return kKindNames.at(static_cast<std::size_t>(kind)); }

const std::vector<std::string>& experiment_kind_names() { return kKindNames; }

ExperimentOptions default_options(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::kFlowOracle: return FlowOracleOptions{};
    case ExperimentKind::kMseRate: return MseRateOptions{};
    case ExperimentKind::kW2Decay: return W2DecayOptions{};
    case ExperimentKind::kProp1Collapse: return Prop1Options{};
    case ExperimentKind::kMacVaeSynthetic: return MacVaeOptions{};
    case ExperimentKind::kMacGanMixture: return MacGanOptions{};
    case ExperimentKind::kHSweep: return HSweepOptions{};
    case ExperimentKind::kBoundCheck: return BoundCheckOptions{};
  }
  throw ContractError("default_options: bad kind");
}

namespace {

json options_json(ExperimentOptions options) {
  json out = json::object();
  std::visit([&](auto& o) { visit_fields(o, [&](const char* key, auto& member) { out[key] = to_json_value(member); }); },
             options);
  return out;
}

json spec_json(const ExperimentSpec& spec) {
  json out = json::object();
  out["version"] = spec.version;
  out["kind"] = to_string(spec.kind);
  out["target"] = spec.target;
  FlowConfig flow = spec.flow;
  json f = json::object();
  visit_flow(flow, [&](const char* key, auto& member) { f[key] = to_json_value(member); });
  f["schedule"] = to_string(flow.schedule);
  out["flow"] = f;
  DistillConfig distill = spec.distill;
  json d = json::object();
  visit_distill(distill, [&](const char* key, auto& member) { d[key] = to_json_value(member); });
  d["kind"] = to_string(distill.kind);
  d["optimizer"] = to_string(distill.optimizer);
  out["distill"] = d;
  out["seeds"] = spec.seeds;
  out["output"] = spec.output.generic_string();
  out["options"] = options_json(spec.options);
  return out;
}

template <typename Parse, typename T>
void read_enum(ObjectReader& reader, const std::string& key, Parse parse, T& out) {
  std::string name;
  const json* v = reader.find(key);
  if (!v) return;
  if (!v->is_string()) {
    reader.problems().add(reader.field(key), "expected a string");
    return;
  }
  try {
    out = parse(v->get<std::string>());
  } catch (const ConfigError& e) {
    reader.problems().add(reader.field(key), e.what());
  }
}

bool is_multiple(double t, double h) {
  double k = std::round(t / h);
  return std::abs(k * h - t) <= 1e-9 * std::max(1.0, std::abs(t));
}

void check_positive(Problems& p, const std::string& field, double v) {
  if (!(v > 0.0) || !std::isfinite(v)) p.add(field, "must be positive");
}

void check_at_least(Problems& p, const std::string& field, Index v, Index lo) {
  if (v < lo) p.add(field, "must be at least " + std::to_string(lo));
}

std::optional<EnergyModel> lookup_target(const std::string& name) {
  if (!is_target_name(name)) return std::nullopt;
  return make_target(name);
}

bool is_standard_normal_1d(const EnergyModel& t) {
  if (t.dimension() != 1 || !t.gaussian()) return false;
  return t.gaussian()->mean[0] == 0.0 && t.gaussian()->covariance[0] == 1.0;
}

void check_methods(Problems& p, const std::string& field, const std::vector<std::string>& methods) {
  if (methods.empty()) p.add(field, "must list at least one method");
  for (std::size_t i = 0; i < methods.size(); ++i) {
    try {
      parse_distance_kind(methods[i]);
    } catch (const ConfigError& e) {
      p.add(field + "[" + std::to_string(i) + "]", e.what());
    }
  }
}

void check_hidden(Problems& p, const std::string& field, const std::vector<Index>& hidden) {
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    if (hidden[i] < 1) p.add(field + "[" + std::to_string(i) + "]", "must be at least 1");
  }
}

void collect_problems(const ExperimentSpec& spec, Problems& p) {
  if (spec.version != kSpecVersion) p.add("version", "unsupported version " + std::to_string(spec.version));
  if (spec.seeds.empty()) p.add("seeds", "must list at least one seed");
  if (spec.output.empty()) p.add("output", "must name a directory");
  if (!(spec.flow.step_size >= 0.0) || !std::isfinite(spec.flow.step_size)) {
    p.add("flow.step_size", "must be finite and non-negative");
  }
  check_at_least(p, "flow.num_steps", spec.flow.num_steps, 0);
  check_at_least(p, "distill.inner_steps", spec.distill.inner_steps, 1);
  check_positive(p, "distill.learning_rate", spec.distill.learning_rate);
  check_at_least(p, "distill.batch_size", spec.distill.batch_size,
                 spec.distill.kind == DistanceKind::kExactOt ? 2 : 1);
  check_at_least(p, "distill.substeps", spec.distill.substeps, 1);
  check_at_least(p, "distill.critic_steps", spec.distill.critic_steps, 1);
  check_positive(p, "distill.critic_learning_rate", spec.distill.critic_learning_rate);
  if (spec.distill.kind == DistanceKind::kExactOt && spec.distill.batch_size > kMaxExactParticles) {
    p.add("distill.batch_size", "exceeds the exact transport cap of " + std::to_string(kMaxExactParticles));
  }
  if (spec.options.index() != static_cast<std::size_t>(spec.kind)) {
    p.add("options", "do not match kind " + to_string(spec.kind));
    return;
  }

  std::optional<EnergyModel> target;
  if (spec.kind == ExperimentKind::kMacVaeSynthetic) {
    if (spec.target != "onehot4") p.add("target", "macvae_synthetic supports only 'onehot4'");
  } else {
    target = lookup_target(spec.target);
    if (!target) p.add("target", "unknown target '" + spec.target + "'");
  }

  switch (spec.kind) {
    case ExperimentKind::kFlowOracle: {
      const auto& o = std::get<FlowOracleOptions>(spec.options);
      if (target && !is_standard_normal_1d(*target)) p.add("target", "flow_oracle needs a 1-D standard normal target");
      check_positive(p, "flow.step_size", spec.flow.step_size);
      check_at_least(p, "flow.num_steps", spec.flow.num_steps, 1);
      check_at_least(p, "options.particles", o.particles, 2);
      if (!(o.initial_var > 0.0)) p.add("options.initial_var", "must be positive");
      if (!std::isfinite(o.initial_mean)) p.add("options.initial_mean", "must be finite");
      check_at_least(p, "options.record_every", o.record_every, 1);
      break;
    }
    case ExperimentKind::kMseRate: {
      const auto& o = std::get<MseRateOptions>(spec.options);
      if (target && !is_standard_normal_1d(*target)) p.add("target", "mse_rate needs a 1-D standard normal target");
      if (o.steps.size() < 2) p.add("options.steps", "needs at least two step counts");
      for (std::size_t i = 0; i < o.steps.size(); ++i) {
        if (o.steps[i] < 1) p.add("options.steps[" + std::to_string(i) + "]", "must be at least 1");
      }
      check_positive(p, "options.rate_constant", o.rate_constant);
      check_at_least(p, "options.repetitions", o.repetitions, 2);
      try {
        parse_psi(o.psi);
      } catch (const ConfigError& e) {
        p.add("options.psi", e.what());
      }
      if (!(o.initial_var >= 0.0)) p.add("options.initial_var", "must be non-negative");
      break;
    }
    case ExperimentKind::kW2Decay: {
      const auto& o = std::get<W2DecayOptions>(spec.options);
      if (target && !is_standard_normal_1d(*target)) p.add("target", "w2_decay needs a 1-D standard normal target");
      check_positive(p, "flow.step_size", spec.flow.step_size);
      if (spec.flow.schedule != StepSchedule::kConstant) p.add("flow.schedule", "w2_decay needs the constant schedule");
      if (o.times.empty()) p.add("options.times", "must list at least one time");
      for (std::size_t i = 0; i < o.times.size(); ++i) {
        std::string f = "options.times[" + std::to_string(i) + "]";
        if (!(o.times[i] >= 0.0)) p.add(f, "must be non-negative");
        else if (spec.flow.step_size > 0.0 && !is_multiple(o.times[i], spec.flow.step_size)) {
          p.add(f, "must be a multiple of flow.step_size");
        }
      }
      check_at_least(p, "options.particles", o.particles, 2);
      check_at_least(p, "options.replicas", o.replicas, 2);
      if (!(o.initial_var > 0.0)) p.add("options.initial_var", "must be positive");
      break;
    }
    case ExperimentKind::kProp1Collapse: {
      const auto& o = std::get<Prop1Options>(spec.options);
      check_positive(p, "flow.step_size", spec.flow.step_size);
      check_methods(p, "options.methods", o.methods);
      check_at_least(p, "options.rounds", o.rounds, 1);
      check_hidden(p, "options.hidden", o.hidden);
      if (target && static_cast<Index>(o.init_bias.size()) != target->dimension()) {
        p.add("options.init_bias", "must have one entry per target dimension");
      }
      check_at_least(p, "options.reference_factor", o.reference_factor, 1);
      check_at_least(p, "options.reference_particles", o.reference_particles, 2);
      check_at_least(p, "options.eval_samples", o.eval_samples, 2);
      if (o.eval_samples != o.reference_particles) p.add("options.eval_samples", "must equal reference_particles");
      if (o.eval_samples > kMaxExactParticles) p.add("options.eval_samples", "exceeds the exact transport cap");
      break;
    }
    case ExperimentKind::kMacVaeSynthetic: {
      const auto& o = std::get<MacVaeOptions>(spec.options);
      check_positive(p, "flow.step_size", spec.flow.step_size);
      check_methods(p, "options.methods", o.methods);
      check_at_least(p, "options.epochs", o.epochs, 1);
      check_at_least(p, "options.latent_dim", o.latent_dim, 1);
      check_hidden(p, "options.decoder_hidden", o.decoder_hidden);
      check_hidden(p, "options.hidden", o.hidden);
      check_positive(p, "options.theta_learning_rate", o.theta_learning_rate);
      check_at_least(p, "options.eval_samples", o.eval_samples, 2);
      check_at_least(p, "options.conjugate_epochs", o.conjugate_epochs, 1);
      check_positive(p, "options.conjugate_step_size", o.conjugate_step_size);
      check_at_least(p, "options.conjugate_steps", o.conjugate_steps, 1);
      check_positive(p, "options.conjugate_learning_rate", o.conjugate_learning_rate);
      check_at_least(p, "options.conjugate_batch", o.conjugate_batch, 2);
      if (o.conjugate_batch > kMaxExactParticles) p.add("options.conjugate_batch", "exceeds the exact transport cap");
      check_at_least(p, "options.conjugate_samples", o.conjugate_samples, 2);
      break;
    }
    case ExperimentKind::kMacGanMixture: {
      const auto& o = std::get<MacGanOptions>(spec.options);
      if (target && !target->has_exact_sampler()) p.add("target", "macgan_mixture needs a target with a sampler");
      check_positive(p, "flow.step_size", spec.flow.step_size);
      check_at_least(p, "options.epochs", o.epochs, 1);
      if (o.decay_schedule && o.epochs <= 50) p.add("options.epochs", "the decay schedule needs more than 50 epochs");
      check_positive(p, "options.theta_learning_rate", o.theta_learning_rate);
      check_hidden(p, "options.energy_hidden", o.energy_hidden);
      if (!(o.confinement >= 0.0)) p.add("options.confinement", "must be non-negative");
      try {
        parse_energy_regularizer(o.regularizer);
      } catch (const ConfigError& e) {
        p.add("options.regularizer", e.what());
      }
      check_positive(p, "options.clip", o.clip);
      if (!(o.penalty >= 0.0)) p.add("options.penalty", "must be non-negative");
      try {
        parse_generator_arch(o.generator);
      } catch (const ConfigError& e) {
        p.add("options.generator", e.what());
      }
      check_at_least(p, "options.planar_layers", o.planar_layers, 0);
      check_hidden(p, "options.hidden", o.hidden);
      check_at_least(p, "options.data_size", o.data_size, 1);
      check_at_least(p, "options.heldout_size", o.heldout_size, 2);
      check_at_least(p, "options.data_batch", o.data_batch, 1);
      check_at_least(p, "options.bound_samples", o.bound_samples, 0);
      check_at_least(p, "options.diag_every", o.diag_every, 1);
      check_at_least(p, "options.eval_samples", o.eval_samples, 2);
      if (o.eval_samples != o.heldout_size) p.add("options.eval_samples", "must equal heldout_size");
      if (o.heldout_size > kMaxExactParticles) p.add("options.heldout_size", "exceeds the exact transport cap");
      break;
    }
    case ExperimentKind::kHSweep: {
      const auto& o = std::get<HSweepOptions>(spec.options);
      if (target && !target->has_exact_sampler()) p.add("target", "h_sweep needs a target with a sampler");
      if (o.grid.empty()) p.add("options.grid", "must list at least one step size");
      for (std::size_t i = 0; i < o.grid.size(); ++i) {
        check_positive(p, "options.grid[" + std::to_string(i) + "]", o.grid[i]);
      }
      check_positive(p, "options.total_time", o.total_time);
      check_at_least(p, "options.particles", o.particles, 2);
      if (o.particles > kMaxExactParticles) p.add("options.particles", "exceeds the exact transport cap");
      check_at_least(p, "options.repetitions", o.repetitions, 2);
      break;
    }
    case ExperimentKind::kBoundCheck: {
      const auto& o = std::get<BoundCheckOptions>(spec.options);
      if (target && (!target->gaussian() || !target->has_exact_sampler())) {
        p.add("target", "bound_check needs a Gaussian target");
      }
      check_at_least(p, "options.samples", o.samples, 2);
      check_at_least(p, "options.data_size", o.data_size, 1);
      check_positive(p, "options.mismatch_var", o.mismatch_var);
      break;
    }
  }
}

}  // namespace

void ExperimentSpec::validate() const {
  Problems p;
  collect_problems(*this, p);
  if (!p.empty()) p.raise();
}

ExperimentSpec parse_spec(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("spec: malformed JSON: ") + e.what());
  }
  Problems p;
  ExperimentSpec spec;
  {
    ObjectReader top(doc, "", p);
    top.read("version", spec.version);
    read_enum(top, "kind", parse_experiment_kind, spec.kind);
    if (!top.find("kind")) p.add("kind", "missing");
    spec.options = default_options(spec.kind);
    top.read("target", spec.target);
    if (!top.find("target")) p.add("target", "missing");
    if (const json* f = top.find("flow")) {
      ObjectReader r(*f, "flow", p);
      visit_flow(spec.flow, [&](const char* key, auto& member) { r.read(key, member); });
      read_enum(r, "schedule", parse_step_schedule, spec.flow.schedule);
    }
    if (const json* d = top.find("distill")) {
      ObjectReader r(*d, "distill", p);
      visit_distill(spec.distill, [&](const char* key, auto& member) { r.read(key, member); });
      read_enum(r, "kind", parse_distance_kind, spec.distill.kind);
      read_enum(r, "optimizer", parse_optimizer_kind, spec.distill.optimizer);
    }
    top.read("seeds", spec.seeds);
    std::string output;
    top.read("output", output);
    spec.output = output;
    if (const json* o = top.find("options")) {
      ObjectReader r(*o, "options", p);
      std::visit([&](auto& opts) { visit_fields(opts, [&](const char* key, auto& member) { r.read(key, member); }); },
                 spec.options);
    }
  }
  collect_problems(spec, p);
  if (!p.empty()) p.raise();
  return spec;
}

ExperimentSpec load_spec(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    throw ValidationError(std::string("spec: ") + e.what());
  }
  return parse_spec(text);
}

std::string canonical_json(const ExperimentSpec& spec) { return spec_json(spec).dump(2) + "\n"; }

double Manifest::value(const std::string& key) const {
  for (const auto& [k, v] : summary) {
    if (k == key) return v;
  }
  throw ContractError("manifest: no summary value '" + key + "'");
}

bool Manifest::has(const std::string& key) const {
  return std::any_of(summary.begin(), summary.end(), [&](const auto& kv) { return kv.first == key; });
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Files and summary values of one run, held in memory until the run succeeds.
class Artifacts {
 public:
  void file(const std::string& name, std::string content) { files_[name] = std::move(content); }
  void value(const std::string& key, double v) { summary_[key] = v; }

  // "seed<s>.<name>" plus mean/min/max over seeds under "<name>".
  void per_seed(std::uint64_t seed, const std::string& name, double v) {
    summary_["seed" + std::to_string(seed) + "." + name] = v;
    pooled_[name].push_back(v);
  }

  void pool() {
    for (const auto& [name, values] : pooled_) {
      double sum = 0.0;
      for (double v : values) sum += v;
      summary_[name] = sum / static_cast<double>(values.size());
      if (values.size() > 1) {
        summary_[name + ".min"] = *std::min_element(values.begin(), values.end());
        summary_[name + ".max"] = *std::max_element(values.begin(), values.end());
      }
    }
    pooled_.clear();
  }

  const std::map<std::string, std::string>& files() const { return files_; }
  const std::map<std::string, double>& summary() const { return summary_; }

 private:
  std::map<std::string, std::string> files_;
  std::map<std::string, double> summary_;
  std::map<std::string, std::vector<double>> pooled_;
};

std::string seed_tag(std::uint64_t seed) { return "seed" + std::to_string(seed); }

std::vector<std::string> coordinate_header(Index d, const std::string& prefix = "z") {
  std::vector<std::string> h;
  for (Index j = 0; j < d; ++j) h.push_back(prefix + std::to_string(j));
  return h;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double standard_error_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  const double n = static_cast<double>(v.size());
  return std::sqrt(ss / (n - 1.0) / n);
}

// Root of the total variance (trace of the covariance).
double total_sd(const Tensor& samples) {
  return std::sqrt(linalg::trace(empirical_moments(samples).covariance));
}

Tensor gaussian_draws(std::uint64_t seed, std::initializer_list<std::uint64_t> path, Index n, Index d, double mean,
                      double sd) {
  RandomStream s = make_stream(seed, path);
  Tensor z = draw_gaussian(s, n, d);
  for (Index i = 0; i < z.size(); ++i) z[i] = mean + sd * z[i];
  return z;
}

std::vector<RandomStream> reference_streams(std::uint64_t seed, Index n) {
  std::vector<RandomStream> streams;
  streams.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    streams.push_back(make_stream(seed, {stream_tag::kReference, 1, static_cast<std::uint64_t>(i)}));
  }
  return streams;
}

// ---------------------------------------------------------------------------

void run_flow_oracle(const ExperimentSpec& spec, Artifacts& out) {
  const auto& o = std::get<FlowOracleOptions>(spec.options);
  const EnergyModel target = make_target(spec.target);
  CsvWriter csv({"seed", "step", "t", "mean", "var", "analytic_mean", "analytic_var"});
  for (std::uint64_t seed : spec.seeds) {
    const Tensor z0 = gaussian_draws(seed, {stream_tag::kInit}, o.particles, 1, o.initial_mean, std::sqrt(o.initial_var));
    double t = 0.0;
    GaussianMoments last_emp, last_ana;
    auto observer = [&](Index k, const ParticleCloud& cloud) {
      if (k > 0) t += spec.flow.step_at(k);
      if (k % o.record_every != 0 && k != spec.flow.num_steps) return;
      last_emp = empirical_moments(cloud);
      last_ana = ou_analytic_moments(o.initial_mean, o.initial_var, t);
      csv.add_row({static_cast<double>(seed), static_cast<double>(k), t, last_emp.mean[0], last_emp.covariance[0],
                   last_ana.mean[0], last_ana.covariance[0]});
    };
    run_flow(ParticleCloud(z0), target, spec.flow, seed, 0, observer);
    out.per_seed(seed, "final_mean", last_emp.mean[0]);
    out.per_seed(seed, "final_var", last_emp.covariance[0]);
    out.per_seed(seed, "mean_abs_error", std::abs(last_emp.mean[0] - last_ana.mean[0]));
    out.per_seed(seed, "var_abs_error", std::abs(last_emp.covariance[0] - last_ana.covariance[0]));
    out.value("analytic_mean", last_ana.mean[0]);
    out.value("analytic_var", last_ana.covariance[0]);
    out.value("total_time", t);
  }
  out.pool();
  out.file("moments.csv", csv.str());
}

// Least-squares slope of log y on log x.
double log_log_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

void run_mse_rate(const ExperimentSpec& spec, Artifacts& out) {
  const auto& o = std::get<MseRateOptions>(spec.options);
  const EnergyModel target = make_target(spec.target);
  const PsiSpec psi = parse_psi(o.psi);
  CsvWriter csv({"seed", "K", "h", "mse", "standard_error", "reference"});
  std::vector<double> ks, pooled(o.steps.size(), 0.0);
  for (Index k : o.steps) ks.push_back(static_cast<double>(k));
  for (std::uint64_t seed : spec.seeds) {
    std::vector<double> mses;
    for (std::size_t i = 0; i < o.steps.size(); ++i) {
      const Index k = o.steps[i];
      FlowConfig config;
      config.step_size = o.rate_constant * std::pow(static_cast<double>(k), -1.0 / 3.0);
      config.num_steps = k;
      const MseEstimate est =
          mse_estimate(target, psi, config, InitialLaw{o.initial_mean, o.initial_var}, o.repetitions, seed);
      csv.add_row({static_cast<double>(seed), static_cast<double>(k), config.step_size, est.mse, est.standard_error,
                   est.reference});
      mses.push_back(est.mse);
      pooled[i] += est.mse / static_cast<double>(spec.seeds.size());
    }
    out.per_seed(seed, "slope", log_log_slope(ks, mses));
  }
  out.pool();
  out.value("slope_pooled", log_log_slope(ks, pooled));
  for (std::size_t i = 0; i < o.steps.size(); ++i) out.value("mse.K" + std::to_string(o.steps[i]), pooled[i]);
  out.file("mse.csv", csv.str());
}

void run_w2_decay(const ExperimentSpec& spec, Artifacts& out) {
  const auto& o = std::get<W2DecayOptions>(spec.options);
  const EnergyModel target = make_target(spec.target);
  const GaussianMoments stationary = *target.gaussian();
  const double h = spec.flow.step_size;
  std::vector<Index> step_of;
  for (double t : o.times) step_of.push_back(static_cast<Index>(std::llround(t / h)));
  const Index k_max = *std::max_element(step_of.begin(), step_of.end());
  const double w2_0 = w2_gaussian(make_moments({o.initial_mean}, Tensor::scalar(o.initial_var)), stationary);

  CsvWriter curve({"t", "analytic", "curve", "rel_err"});
  double max_rel = 0.0, max_excess = -std::numeric_limits<double>::infinity();
  std::vector<double> curve_at;
  for (double t : o.times) {
    const double analytic = w2_gaussian(ou_analytic_moments(o.initial_mean, o.initial_var, t), stationary);
    const double c = std::exp(-t / 2.0) * w2_0;
    const double rel = c > 0.0 ? std::abs(analytic - c) / c : std::abs(analytic);
    max_rel = std::max(max_rel, rel);
    max_excess = std::max(max_excess, analytic - c);
    curve_at.push_back(c);
    curve.add_row({t, analytic, c, rel});
  }
  out.value("curve_max_rel_err", max_rel);
  out.value("curve_max_excess", max_excess);
  out.file("curve.csv", curve.str());

  CsvWriter csv({"seed", "t", "curve", "empirical", "standard_error", "z"});
  for (std::uint64_t seed : spec.seeds) {
    // per time: W2 of each replica's Gaussian fit; the law of a Langevin
    // cloud started Gaussian on a Gaussian target stays Gaussian.
    std::vector<std::vector<double>> w2(o.times.size());
    for (Index r = 0; r < o.replicas; ++r) {
      const auto ru = static_cast<std::uint64_t>(r);
      const Tensor z0 =
          gaussian_draws(seed, {stream_tag::kInit, ru}, o.particles, 1, o.initial_mean, std::sqrt(o.initial_var));
      auto observer = [&](Index k, const ParticleCloud& cloud) {
        for (std::size_t i = 0; i < step_of.size(); ++i) {
          if (step_of[i] == k) w2[i].push_back(w2_gaussian(empirical_moments(cloud), stationary));
        }
      };
      run_flow(ParticleCloud(z0), target, FlowConfig{h, k_max, StepSchedule::kConstant}, seed, ru, observer);
    }
    double max_z = 0.0;
    for (std::size_t i = 0; i < o.times.size(); ++i) {
      const double m = mean_of(w2[i]);
      const double se = standard_error_of(w2[i]);
      const double z = std::abs(m - curve_at[i]) / se;
      max_z = std::max(max_z, z);
      csv.add_row({static_cast<double>(seed), o.times[i], curve_at[i], m, se, z});
    }
    out.per_seed(seed, "max_z", max_z);
  }
  out.pool();
  out.file("decay.csv", csv.str());
}

ImplicitGenerator prop1_generator(const Prop1Options& o, Index dim, std::uint64_t seed) {
  GeneratorSpec gs;
  gs.arch = GeneratorArch::kMlp;
  gs.noise_dim = dim;
  gs.output_dim = dim;
  gs.hidden = o.hidden;
  RandomStream init = make_stream(seed, {stream_tag::kParams});
  ImplicitGenerator gen = make_generator(gs, init);
  ParamMap p = gen.params();
  auto& entries = p.entries();
  for (double& v : entries[entries.size() - 2].values) v *= o.init_spread;
  entries.back().values = o.init_bias;
  gen.set_params(std::move(p));
  return gen;
}

Critic default_critic(Index input_dim, const DistillConfig& distill, std::uint64_t seed) {
  RandomStream init = make_stream(seed, {stream_tag::kParams, 1});
  return make_critic(input_dim, {32, 32}, CriticRegularizer::kGradientPenalty, 0.01, 10.0,
                     distill.critic_learning_rate, init);
}

void run_prop1(const ExperimentSpec& spec, Artifacts& out) {
  const auto& o = std::get<Prop1Options>(spec.options);
  const EnergyModel target = make_target(spec.target);
  const Index d = target.dimension();
  const double h = spec.flow.step_size;
  for (std::uint64_t seed : spec.seeds) {
    std::map<std::string, Tensor> samples;
    for (const auto& name : o.methods) {
      DistillConfig dc = spec.distill;
      dc.kind = parse_distance_kind(name);
      ImplicitGenerator gen = prop1_generator(o, d, seed);
      std::optional<Critic> critic;
      if (dc.kind == DistanceKind::kCritic) critic = default_critic(d, dc, seed);
      Optimizer opt(dc.optimizer, dc.learning_rate);
      CsvWriter log({"round", "distance"});
      for (Index r = 0; r < o.rounds; ++r) {
        const auto ru = static_cast<std::uint64_t>(r);
        const TeacherBatch tb =
            make_teacher_batch(gen, empty_condition(gen), target, h, dc.substeps, seed, ru, dc.batch_size);
        const double dist =
            distill_step(gen, std::span<const TeacherBatch>(&tb, 1), dc, opt, critic ? &*critic : nullptr, seed, ru);
        log.add_row({static_cast<double>(r), dist});
      }
      RandomStream es = make_stream(seed, {stream_tag::kEstimator});
      Tensor z = sample_generator(gen, empty_condition(gen), es, o.eval_samples).samples();
      out.per_seed(seed, "sd." + name, total_sd(z));
      out.file("samples_" + name + "_" + seed_tag(seed) + ".csv", matrix_to_csv(z, coordinate_header(d)));
      out.file("training_" + name + "_" + seed_tag(seed) + ".csv", log.str());
      samples[name] = std::move(z);
    }
    // Long chains from N(0, I), run for reference_factor times the total
    // number of teacher transitions.
    const Tensor z0 = gaussian_draws(seed, {stream_tag::kReference, 0}, o.reference_particles, d, 0.0, 1.0);
    auto streams = reference_streams(seed, o.reference_particles);
    const FlowConfig long_run{h, o.reference_factor * o.rounds * spec.distill.substeps, StepSchedule::kConstant};
    const Tensor ref = run_flow(ParticleCloud(z0), target, long_run, streams).samples();
    out.file("reference_" + seed_tag(seed) + ".csv", matrix_to_csv(ref, coordinate_header(d)));
    out.per_seed(seed, "sd.reference", total_sd(ref));
    for (const auto& [name, z] : samples) out.per_seed(seed, "w1_reference." + name, wasserstein_exact(z, ref, 1));
    if (samples.count("euclidean") && samples.count("exact_ot")) {
      out.per_seed(seed, "sd_ratio", total_sd(samples["euclidean"]) / total_sd(samples["exact_ot"]));
    }
  }
  out.pool();
}

void run_macvae(const ExperimentSpec& spec, Artifacts& out) {
  const auto& o = std::get<MacVaeOptions>(spec.options);
  const Index n = 4;
  const Index l = o.latent_dim;
  Tensor data(n, n);
  for (Index i = 0; i < n; ++i) data(i, i) = 1.0;

  for (std::uint64_t seed : spec.seeds) {
    std::map<std::string, double> variance;
    for (const auto& name : o.methods) {
      RandomStream init = make_stream(seed, {stream_tag::kParams});
      LatentVariableModel model;
      model.prior = standard_normal_prior(l);
      std::vector<Index> sizes = {l};
      sizes.insert(sizes.end(), o.decoder_hidden.begin(), o.decoder_hidden.end());
      sizes.push_back(n);
      model.decoder = make_mlp(sizes, Activation::kTanh, "dec");
      model.theta = model.decoder.init_params(init);
      model.likelihood = Likelihood::kCategorical;
      GeneratorSpec gs;
      gs.arch = GeneratorArch::kMlp;
      gs.condition_dim = n;
      gs.noise_dim = l;
      gs.output_dim = l;
      gs.hidden = o.hidden;
      ImplicitGenerator gen = make_generator(gs, init);

      MacVaeConfig config;
      config.flow = spec.flow;
      config.distill = spec.distill;
      config.distill.kind = parse_distance_kind(name);
      config.epochs = o.epochs;
      config.theta_learning_rate = o.theta_learning_rate;
      config.seed = seed;
      std::optional<Critic> critic;
      if (config.distill.kind == DistanceKind::kCritic) critic = default_critic(n + l, config.distill, seed);
      const MacVaeResult result = train_macvae(model, gen, data, config, critic ? &*critic : nullptr);

      CsvWriter log({"epoch", "distill_distance", "theta_loss"});
      for (const auto& e : result.log) log.add_row({static_cast<double>(e.epoch), e.distill_distance, e.theta_loss});
      std::vector<std::string> header = {"observation"};
      for (const auto& c : coordinate_header(l)) header.push_back(c);
      CsvWriter latents(header);
      double var = 0.0;
      for (Index j = 0; j < n; ++j) {
        RandomStream s = make_stream(seed, {stream_tag::kEstimator, 5, static_cast<std::uint64_t>(j)});
        const Tensor z = sample_generator(result.inference, data.rows_slice(j, 1), s, o.eval_samples).samples();
        const GaussianMoments m = empirical_moments(z);
        var += linalg::trace(m.covariance) / static_cast<double>(l * n);
        for (Index i = 0; i < z.rows(); ++i) {
          std::vector<double> row = {static_cast<double>(j)};
          for (Index c = 0; c < l; ++c) row.push_back(z(i, c));
          latents.add_row(row);
        }
      }
      variance[name] = var;
      out.per_seed(seed, "latent_var." + name, var);
      out.file("training_" + name + "_" + seed_tag(seed) + ".csv", log.str());
      out.file("latents_" + name + "_" + seed_tag(seed) + ".csv", latents.str());
    }
    if (variance.count("euclidean") && variance.count("exact_ot")) {
      out.per_seed(seed, "variance_ratio", variance["exact_ot"] / variance["euclidean"]);
    }

    // Conjugate linear-Gaussian check with the decoder held fixed.
    const LatentVariableModel conj = make_conjugate_model(Tensor::from_rows({{1.0, 0.5, -0.3}, {0.2, -0.8, 0.6}}),
                                                          Tensor::row({0.1, -0.2, 0.3}), 0.7);
    const Tensor obs = Tensor::from_rows({{1.2, 0.3, -0.5}, {-0.4, -1.1, 0.9}, {0.3, 0.2, 0.1}});
    GeneratorSpec gs;
    gs.arch = GeneratorArch::kAffine;
    gs.condition_dim = conj.data_dim();
    gs.noise_dim = conj.latent_dim();
    gs.output_dim = conj.latent_dim();
    RandomStream init = make_stream(seed, {stream_tag::kParams, 2});
    MacVaeConfig config;
    config.flow = FlowConfig{o.conjugate_step_size, o.conjugate_steps, StepSchedule::kConstant};
    config.distill = spec.distill;
    config.distill.kind = DistanceKind::kExactOt;
    config.distill.batch_size = o.conjugate_batch;
    config.distill.substeps = o.conjugate_steps;
    config.update_theta = false;
    // Full-rate phase, then two shorter phases at lr / 3 and lr / 10.
    ImplicitGenerator inference = make_generator(gs, init);
    const double rate_scale[3] = {1.0, 1.0 / 3.0, 0.1};
    for (std::uint64_t phase = 0; phase < 3; ++phase) {
      config.epochs = phase == 0 ? o.conjugate_epochs : std::max<Index>(1, o.conjugate_epochs / 2);
      config.distill.learning_rate = o.conjugate_learning_rate * rate_scale[phase];
      config.seed = derive_stream_id({seed, phase});
      inference = train_macvae(conj, inference, obs, config).inference;
    }
    MacVaeResult result{conj, inference, {}};
    const ImplicitGenerator exact = conjugate_posterior_generator(conj);

    CsvWriter csv({"observation", "posterior_mean0", "posterior_mean1", "generator_mean0", "generator_mean1", "log_p",
                   "elbo", "elbo_se", "exact_elbo", "exact_elbo_se"});
    double mean_err = 0.0, exact_excess = -std::numeric_limits<double>::infinity();
    double distilled_gap = 0.0, distilled_z = 0.0;
    for (Index j = 0; j < obs.rows(); ++j) {
      const auto ju = static_cast<std::uint64_t>(j);
      const Tensor x = obs.rows_slice(j, 1);
      const GaussianMoments post = conjugate_posterior(conj, x);
      const Tensor centre = result.inference.map(x, Tensor(1, conj.latent_dim()));
      for (Index c = 0; c < conj.latent_dim(); ++c) mean_err = std::max(mean_err, std::abs(centre[c] - post.mean[c]));
      const double log_p = conjugate_log_marginal(conj, x);
      RandomStream s1 = make_stream(seed, {stream_tag::kEstimator, 2, ju});
      const ElboEstimate distilled = elbo_estimate(conj, result.inference, x, o.conjugate_samples, s1);
      RandomStream s2 = make_stream(seed, {stream_tag::kEstimator, 3, ju});
      const ElboEstimate optimum = elbo_estimate(conj, exact, x, o.conjugate_samples, s2);
      exact_excess = std::max(exact_excess, std::abs(optimum.value - log_p) - 3.0 * optimum.standard_error);
      distilled_gap = std::max(distilled_gap, log_p - distilled.value);
      distilled_z = std::max(distilled_z, std::abs(log_p - distilled.value) / distilled.standard_error);
      csv.add_row({static_cast<double>(j), post.mean[0], post.mean[1], centre[0], centre[1], log_p, distilled.value,
                   distilled.standard_error, optimum.value, optimum.standard_error});
    }
    out.per_seed(seed, "conjugate.max_mean_error", mean_err);
    out.per_seed(seed, "conjugate.exact_elbo_excess", exact_excess);
    out.per_seed(seed, "conjugate.distilled_elbo_gap", distilled_gap);
    out.per_seed(seed, "conjugate.distilled_elbo_z", distilled_z);
    out.file("conjugate_" + seed_tag(seed) + ".csv", csv.str());
  }
  out.pool();
}

void run_macgan(const ExperimentSpec& spec, Artifacts& out) {
  const auto& o = std::get<MacGanOptions>(spec.options);
  const EnergyModel target = make_target(spec.target);
  const Index d = target.dimension();
  for (std::uint64_t seed : spec.seeds) {
    RandomStream ds = make_stream(seed, {stream_tag::kData, 0});
    const Tensor data = target.sample(ds, o.data_size);
    RandomStream hs = make_stream(seed, {stream_tag::kData, 1});
    const Tensor heldout = target.sample(hs, o.heldout_size);
    RandomStream init = make_stream(seed, {stream_tag::kParams});
    EnergyNet energy = make_energy_net(d, o.energy_hidden, o.confinement, parse_energy_regularizer(o.regularizer),
                                       o.clip, o.penalty, init);
    GeneratorSpec gs;
    gs.arch = parse_generator_arch(o.generator);
    gs.noise_dim = d;
    gs.output_dim = d;
    gs.hidden = o.hidden;
    gs.planar_layers = o.planar_layers;
    ImplicitGenerator gen = make_generator(gs, init);

    MacGanConfig config;
    config.flow = spec.flow;
    config.distill = spec.distill;
    config.epochs = o.epochs;
    config.theta_learning_rate = o.theta_learning_rate;
    config.decay_schedule = o.decay_schedule;
    config.data_batch = o.data_batch;
    config.seed = seed;
    config.bound_samples = gen.invertible_mode() ? o.bound_samples : 0;
    config.heldout = heldout;
    config.diag_samples = o.heldout_size;
    config.diag_every = o.diag_every;
    std::optional<Critic> critic;
    if (config.distill.kind == DistanceKind::kCritic) critic = default_critic(d, config.distill, seed);
    const MacGanResult result = train_macgan(energy, gen, data, config, critic ? &*critic : nullptr);

    CsvWriter log({"epoch", "e_data_u", "e_gen_u", "w1_diag", "distill_distance", "log_z", "bound_gap",
                   "bound_gap_se", "theta_max_abs"});
    double worst = std::numeric_limits<double>::infinity();
    double theta_max = 0.0;
    for (const auto& e : result.log) {
      log.add_row({static_cast<double>(e.epoch), e.e_data_u, e.e_gen_u, e.w1_diag, e.distill_distance, e.log_z,
                   e.bound_gap, e.bound_gap_se, e.theta_max_abs});
      if (!std::isnan(e.bound_gap)) worst = std::min(worst, e.bound_gap + 3.0 * e.bound_gap_se);
      theta_max = std::max(theta_max, e.theta_max_abs);
    }
    RandomStream es = make_stream(seed, {stream_tag::kEstimator, 77});
    const Tensor z = sample_generator(result.generator, empty_condition(result.generator), es, o.eval_samples).samples();
    double right = 0.0;
    for (Index i = 0; i < z.rows(); ++i) right += z(i, 0) > 0.0 ? 1.0 : 0.0;
    right /= static_cast<double>(z.rows());
    RandomStream fs = make_stream(seed, {stream_tag::kData, 2});
    const Tensor fresh = target.sample(fs, o.heldout_size);

    out.per_seed(seed, "w1_heldout", wasserstein_exact(z, heldout, 1));
    out.per_seed(seed, "w1_floor", wasserstein_exact(fresh, heldout, 1));
    out.per_seed(seed, "occupancy.positive", right);
    out.per_seed(seed, "occupancy.min", std::min(right, 1.0 - right));
    if (config.bound_samples > 0) out.per_seed(seed, "bound_gap_upper_min", worst);
    out.per_seed(seed, "theta_max_abs", theta_max);
    out.file("training_" + seed_tag(seed) + ".csv", log.str());
    out.file("samples_" + seed_tag(seed) + ".csv", matrix_to_csv(z, coordinate_header(d)));
    out.file("heldout_" + seed_tag(seed) + ".csv", matrix_to_csv(heldout, coordinate_header(d)));
    out.file("energy_" + seed_tag(seed) + ".params", serialize_binary(result.energy.theta));
    out.file("generator_" + seed_tag(seed) + ".params", serialize_binary(result.generator.params()));
  }
  out.value("clip", o.clip);
  out.pool();
}

void run_h_sweep(const ExperimentSpec& spec, Artifacts& out) {
  const auto& o = std::get<HSweepOptions>(spec.options);
  const EnergyModel target = make_target(spec.target);
  const Index d = target.dimension();
  const bool oracle = is_standard_normal_1d(target);
  std::vector<std::string> header = {"seed", "h", "K", "w1"};
  if (oracle) header.push_back("mse");
  CsvWriter csv(header);
  std::vector<double> w1_mean(o.grid.size(), 0.0);
  for (std::uint64_t seed : spec.seeds) {
    // Common initial cloud and reference across the grid.
    const Tensor z0 = gaussian_draws(seed, {stream_tag::kInit}, o.particles, d, 0.0, 1.0);
    RandomStream rs = make_stream(seed, {stream_tag::kReference});
    const Tensor ref = target.sample(rs, o.particles);
    for (std::size_t i = 0; i < o.grid.size(); ++i) {
      FlowConfig config;
      config.step_size = o.grid[i];
      config.num_steps = std::max<Index>(1, static_cast<Index>(std::llround(o.total_time / o.grid[i])));
      const Tensor z = run_flow(ParticleCloud(z0), target, config, seed, 0).samples();
      const double w1 = wasserstein_exact(z, ref, 1);
      w1_mean[i] += w1 / static_cast<double>(spec.seeds.size());
      std::vector<double> row = {static_cast<double>(seed), config.step_size, static_cast<double>(config.num_steps),
                                 w1};
      if (oracle) {
        const MseEstimate est =
            mse_estimate(target, parse_psi("identity"), config, InitialLaw{0.0, 1.0}, o.repetitions, seed);
        row.push_back(est.mse);
      }
      csv.add_row(row);
    }
  }
  for (std::size_t i = 0; i < o.grid.size(); ++i) out.value("w1.row" + std::to_string(i), w1_mean[i]);
  const auto [lo, hi] = std::minmax_element(w1_mean.begin(), w1_mean.end());
  out.value("w1_ratio", *hi / *lo);
  out.file("sweep.csv", csv.str());
}

void run_bound_check(const ExperimentSpec& spec, Artifacts& out) {
  const auto& o = std::get<BoundCheckOptions>(spec.options);
  const EnergyModel target = make_target(spec.target);
  const GaussianMoments g = *target.gaussian();
  const Index d = target.dimension();
  Tensor wide = linalg::identity(d);
  for (Index i = 0; i < d; ++i) wide(i, i) = std::sqrt(o.mismatch_var);
  const std::vector<std::pair<std::string, ImplicitGenerator>> gens = {
      {"matched", make_affine_generator(linalg::cholesky(g.covariance), g.mean)},
      {"mismatched", make_affine_generator(wide, g.mean)}};
  CsvWriter csv({"seed", "generator", "lhs", "rhs", "gap", "gap_se", "log_z", "log_z_se"});
  for (std::uint64_t seed : spec.seeds) {
    RandomStream ds = make_stream(seed, {stream_tag::kData});
    const Tensor data = target.sample(ds, o.data_size);
    for (std::size_t k = 0; k < gens.size(); ++k) {
      RandomStream s = make_stream(seed, {stream_tag::kEstimator, static_cast<std::uint64_t>(k + 1)});
      const MleBoundReport r = mle_bound_check(target, gens[k].second, data, o.samples, s);
      csv.add_row(std::vector<std::string>{std::to_string(seed), gens[k].first, format_double(r.lhs),
                                           format_double(r.rhs), format_double(r.gap), format_double(r.gap_se),
                                           format_double(r.log_z), format_double(r.log_z_se)});
      out.per_seed(seed, gens[k].first + ".gap", r.gap);
      out.per_seed(seed, gens[k].first + ".gap_se", r.gap_se);
      out.per_seed(seed, gens[k].first + ".log_z", r.log_z);
    }
  }
  out.pool();
  out.file("bound.csv", csv.str());
}

void run_kind(const ExperimentSpec& spec, Artifacts& out) {
  switch (spec.kind) {
    case ExperimentKind::kFlowOracle: return run_flow_oracle(spec, out);
    case ExperimentKind::kMseRate: return run_mse_rate(spec, out);
    case ExperimentKind::kW2Decay: return run_w2_decay(spec, out);
    case ExperimentKind::kProp1Collapse: return run_prop1(spec, out);
    case ExperimentKind::kMacVaeSynthetic: return run_macvae(spec, out);
    case ExperimentKind::kMacGanMixture: return run_macgan(spec, out);
    case ExperimentKind::kHSweep: return run_h_sweep(spec, out);
    case ExperimentKind::kBoundCheck: return run_bound_check(spec, out);
  }
}

json summary_json(const std::map<std::string, double>& summary) {
  json s = json::object();
  for (const auto& [k, v] : summary) s[k] = std::isfinite(v) ? json(v) : json(format_double(v));
  return s;
}

double summary_number(const json& v) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) return std::stod(v.get<std::string>());
  throw ConfigError("manifest: summary values must be numbers");
}

}  // namespace

Manifest run(const ExperimentSpec& spec) {
  spec.validate();
  namespace fs = std::filesystem;
  const fs::path target_dir = spec.output;
  const fs::path parent = target_dir.has_parent_path() ? target_dir.parent_path() : fs::path(".");
  const fs::path stage = parent / ("." + target_dir.filename().string() + ".partial");
  const fs::path retired = parent / ("." + target_dir.filename().string() + ".old");

  Artifacts art;
  run_kind(spec, art);
  art.file("spec.json", canonical_json(spec));
  art.file("summary.json", summary_json(art.summary()).dump(2) + "\n");

  Manifest manifest;
  manifest.directory = target_dir;
  manifest.kind = spec.kind;
  for (const auto& [name, content] : art.files()) {
    manifest.files.push_back(ManifestFile{name, sha256_hex(content), content.size()});
  }
  manifest.summary.assign(art.summary().begin(), art.summary().end());

  json files = json::array();
  for (const auto& f : manifest.files) files.push_back({{"path", f.path}, {"sha256", f.sha256}, {"bytes", f.bytes}});
  const json doc = {{"version", kSpecVersion},
                    {"kind", to_string(spec.kind)},
                    {"files", files},
                    {"summary", summary_json(art.summary())}};

  try {
    fs::create_directories(parent);
    fs::remove_all(stage);
    fs::create_directories(stage);
    for (const auto& [name, content] : art.files()) write_file(stage / name, content);
    write_file(stage / "manifest.json", doc.dump(2) + "\n");
    fs::remove_all(retired);
    if (fs::exists(target_dir)) fs::rename(target_dir, retired);
    fs::rename(stage, target_dir);
    fs::remove_all(retired);
  } catch (...) {
    std::error_code ec;
    fs::remove_all(stage, ec);
    throw;
  }
  return manifest;
}

Manifest h_sweep(ExperimentSpec spec, const std::vector<double>& grid) {
  if (spec.kind != ExperimentKind::kHSweep) throw ValidationError("kind: sweep-h needs an h_sweep spec");
  std::get<HSweepOptions>(spec.options).grid = grid;
  return run(spec);
}

Manifest read_manifest(const std::filesystem::path& path) {
  const std::filesystem::path file =
      std::filesystem::is_directory(path) ? path / "manifest.json" : path;
  json doc;
  try {
    doc = json::parse(read_file(file));
  } catch (const json::exception& e) {
    throw ConfigError("manifest: " + std::string(e.what()));
  }
  Manifest m;
  m.directory = file.parent_path();
  try {
    m.kind = parse_experiment_kind(doc.at("kind").get<std::string>());
    for (const auto& f : doc.at("files")) {
      m.files.push_back(ManifestFile{f.at("path").get<std::string>(), f.at("sha256").get<std::string>(),
                                     f.at("bytes").get<std::uintmax_t>()});
    }
    for (const auto& [k, v] : doc.at("summary").items()) m.summary.emplace_back(k, summary_number(v));
  } catch (const json::exception& e) {
    throw ConfigError("manifest: " + std::string(e.what()));
  }
  return m;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::optional<double> to_number(const std::string& cell) {
  if (cell.empty()) return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(cell.c_str(), &end);
  if (end != cell.c_str() + cell.size()) return std::nullopt;
  return v;
}

// "samples_exact_ot_seed3" -> ("samples_exact_ot", "3").
std::pair<std::string, std::string> split_seed_tag(const std::string& stem) {
  const auto pos = stem.rfind("_seed");
  if (pos == std::string::npos) return {stem, ""};
  return {stem.substr(0, pos), stem.substr(pos + 5)};
}

const std::vector<std::string> kAxisColumns = {"t", "K", "h", "epoch", "round", "step", "observation"};

void append_plot_rows(const std::string& stem_in, const std::string& text, CsvWriter& out) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) return;
  const std::vector<std::string> header = split_csv_line(line);
  const auto [stem, file_seed] = split_seed_tag(stem_in);
  auto column = [&](const std::string& name) -> int {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return static_cast<int>(i);
    }
    return -1;
  };
  const int seed_col = column("seed");
  const int z0 = column("z0");
  const int z1 = column("z1");
  const bool scatter = z0 >= 0;
  int axis = -1;
  if (!scatter) {
    for (const auto& name : kAxisColumns) {
      if ((axis = column(name)) >= 0) break;
    }
  }
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (!line.empty()) rows.push_back(split_csv_line(line));
  }
  // Columns holding text qualify the series name.
  std::vector<bool> textual(header.size(), false);
  for (const auto& r : rows) {
    for (std::size_t c = 0; c < r.size() && c < header.size(); ++c) {
      if (!to_number(r[c])) textual[c] = true;
    }
  }
  for (std::size_t ri = 0; ri < rows.size(); ++ri) {
    const auto& r = rows[ri];
    const std::string seed = seed_col >= 0 ? r[static_cast<std::size_t>(seed_col)] : file_seed;
    std::string qualifier;
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (textual[c]) qualifier += "." + r[c];
    }
    if (scatter) {
      std::string series = stem + qualifier;
      const int obs = column("observation");
      if (obs >= 0) series += ".obs" + r[static_cast<std::size_t>(obs)];
      const std::string y = z1 >= 0 ? r[static_cast<std::size_t>(z1)] : "0";
      out.add_row(std::vector<std::string>{series, r[static_cast<std::size_t>(z0)], y, seed});
      continue;
    }
    const std::string x = axis >= 0 ? r[static_cast<std::size_t>(axis)] : std::to_string(ri);
    for (std::size_t c = 0; c < header.size(); ++c) {
      const int ci = static_cast<int>(c);
      if (ci == seed_col || ci == axis || textual[c]) continue;
      if (std::find(kAxisColumns.begin(), kAxisColumns.end(), header[c]) != kAxisColumns.end()) continue;
      const auto v = to_number(r[c]);
      if (!v || !std::isfinite(*v)) continue;
      out.add_row(std::vector<std::string>{stem + qualifier + "." + header[c], x, r[c], seed});
    }
  }
}

}  // namespace

std::string emit_plotdata(const Manifest& manifest) {
  CsvWriter out({"series", "x", "y", "seed"});
  for (const auto& f : manifest.files) {
    const std::filesystem::path p(f.path);
    if (p.extension() != ".csv") continue;
    append_plot_rows(p.stem().string(), read_file(manifest.directory / p), out);
  }
  return out.str();
}

namespace {

// Assignment cost minimized over all permutations.
double brute_force_cost(const Tensor& cost) {
  const Index n = cost.rows();
  std::vector<Index> perm(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
  double best = std::numeric_limits<double>::infinity();
  do {
    best = std::min(best, assignment_cost(cost, perm));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

SelftestResult check(const std::string& name, const std::function<std::string()>& body) {
  try {
    const std::string failure = body();
    return {name, failure.empty(), failure};
  } catch (const std::exception& e) {
    return {name, false, std::string("threw: ") + e.what()};
  }
}

std::string expect(bool ok, const std::string& what) { return ok ? std::string() : what; }

}  // namespace

std::vector<SelftestResult> selftest() {
  std::vector<SelftestResult> results;

  results.push_back(check("philox known answers", [] {
    const auto a = philox4x32_10({0, 0, 0, 0}, {0, 0});
    const auto b = philox4x32_10({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u});
    return expect(a == std::array<std::uint32_t, 4>{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u} &&
                      b == std::array<std::uint32_t, 4>{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u},
                  "block mismatch");
  }));

  results.push_back(check("exact transport matches enumeration", [] {
    for (std::uint64_t trial = 0; trial < 30; ++trial) {
      RandomStream s = make_stream(trial, {stream_tag::kEstimator});
      const Index n = 1 + static_cast<Index>(trial % 6);
      const Tensor a = draw_gaussian(s, n, 2);
      const Tensor b = draw_gaussian(s, n, 2);
      for (int order : {1, 2}) {
        const Tensor cost = pairwise_cost(a, b, order);
        if (std::abs(exact_transport(a, b, order).cost - brute_force_cost(cost)) > 1e-12) {
          return std::string("trial ") + std::to_string(trial);
        }
      }
      if (wasserstein_exact(a, b, 1) > wasserstein_exact(a, b, 2) + 1e-12) return std::string("W1 > W2");
    }
    return std::string();
  }));

  results.push_back(check("network gradients", [] {
    RandomStream init = make_stream(1, {stream_tag::kParams});
    RandomStream s = make_stream(1, {stream_tag::kEstimator});
    const DifferentiableFunction mlp = make_mlp({2, 8, 1}, Activation::kTanh, "m");
    const ParamMap p = mlp.init_params(init);
    const EnergyNet e = make_energy_net(2, {8}, 0.25, EnergyRegularizer::kNone, 1.0, 10.0, init);
    GeneratorSpec gs;
    gs.arch = GeneratorArch::kPlanar;
    const ImplicitGenerator g = make_generator(gs, init);
    const DifferentiableFunction gs_net = scalarize(g.network(), Tensor::row({0.7, -1.3}));
    double worst = 0.0;
    for (int i = 0; i < 4; ++i) {
      const Tensor x = draw_gaussian(s, 1, 2);
      worst = std::max({worst, check_gradient(mlp, p, x, 1e-6), check_gradient(e.u, e.theta, x, 1e-6),
                        check_gradient(gs_net, g.params(), x, 1e-6)});
    }
    return expect(worst <= 1e-5, "relative error " + format_double(worst));
  }));

  results.push_back(check("langevin flow matches the OU oracle", [] {
    const EnergyModel target = make_target("ou");
    const Tensor z0 = gaussian_draws(1, {stream_tag::kInit}, 4000, 1, 3.0, 2.0);
    const FlowConfig config{1e-2, 100, StepSchedule::kConstant};
    const GaussianMoments m = empirical_moments(run_flow(ParticleCloud(z0), target, config, 1));
    const GaussianMoments a = ou_analytic_moments(3.0, 4.0, config.total_time());
    return expect(std::abs(m.mean[0] - a.mean[0]) < 0.1 && std::abs(m.covariance[0] - a.covariance[0]) < 0.25,
                  "moments off");
  }));

  results.push_back(check("gaussian W2 contraction", [] {
    const GaussianMoments n01 = make_moments({0.0}, Tensor::scalar(1.0));
    for (double v0 : {0.25, 1.0, 4.0}) {
      const double w0 = w2_gaussian(make_moments({3.0}, Tensor::scalar(v0)), n01);
      for (double t : {0.5, 1.0, 2.0, 4.0}) {
        const double wt = w2_gaussian(ou_analytic_moments(3.0, v0, t), n01);
        const double curve = std::exp(-t / 2.0) * w0;
        if (v0 == 1.0 && std::abs(wt - curve) > 1e-10 * curve) return std::string("equality broken");
        if (wt > curve * (1.0 + 1e-12)) return std::string("contraction broken");
      }
    }
    return std::string();
  }));

  results.push_back(check("matched generator closes the likelihood bound", [] {
    const EnergyModel target = make_target("std_normal_2d");
    RandomStream ds = make_stream(1, {stream_tag::kData});
    const Tensor data = target.sample(ds, 64);
    RandomStream s = make_stream(1, {stream_tag::kEstimator});
    const MleBoundReport r = mle_bound_check(target, make_affine_generator(linalg::identity(2), Tensor(1, 2)), data,
                                             256, s);
    return expect(std::abs(r.gap) < 1e-9, "gap " + format_double(r.gap));
  }));

  results.push_back(check("exact posterior generator attains log p(x)", [] {
    const LatentVariableModel m = make_conjugate_model(Tensor::from_rows({{1.0, 0.5}, {0.2, -0.8}}),
                                                       Tensor::row({0.1, -0.2}), 0.7);
    const Tensor x = Tensor::row({0.4, -0.3});
    RandomStream s = make_stream(1, {stream_tag::kEstimator});
    const ElboEstimate e = elbo_estimate(m, conjugate_posterior_generator(m), x, 64, s);
    return expect(std::abs(e.value - conjugate_log_marginal(m, x)) < 1e-9, "elbo " + format_double(e.value));
  }));

  results.push_back(check("mle gradient cancels on equal batches", [] {
    RandomStream init = make_stream(2, {stream_tag::kParams});
    const EnergyNet e = make_energy_net(2, {8}, 0.25, EnergyRegularizer::kNone, 1.0, 10.0, init);
    RandomStream s = make_stream(2, {stream_tag::kData});
    const Tensor x = draw_gaussian(s, 16, 2);
    return expect(mle_gradient(e, x, x).max_abs() < 1e-12, "non-zero gradient");
  }));

  results.push_back(check("parameter files round-trip", [] {
    RandomStream init = make_stream(3, {stream_tag::kParams});
    const ParamMap p = make_mlp({3, 5, 2}, Activation::kRelu, "m").init_params(init);
    return expect(deserialize_binary(serialize_binary(p)) == p && deserialize_text(serialize_text(p)) == p,
                  "mismatch");
  }));

  results.push_back(check("specs re-emit canonically", [] {
    for (const auto& name : experiment_kind_names()) {
      ExperimentSpec spec;
      spec.kind = parse_experiment_kind(name);
      spec.options = default_options(spec.kind);
      spec.target = spec.kind == ExperimentKind::kMacVaeSynthetic ? "onehot4"
                    : (spec.kind == ExperimentKind::kProp1Collapse)   ? "ring_bimodal"
                    : (spec.kind == ExperimentKind::kMacGanMixture || spec.kind == ExperimentKind::kHSweep)
                        ? "mixture2"
                        : "ou";
      spec.flow = FlowConfig{1e-2, 10, StepSchedule::kConstant};
      spec.seeds = {1};
      spec.output = "out";
      const std::string text = canonical_json(spec);
      if (canonical_json(parse_spec(text)) != text) return "kind " + name;
    }
    return std::string();
  }));

  return results;
}

}  // namespace ctflow

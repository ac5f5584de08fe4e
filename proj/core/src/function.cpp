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
#include "ctflow/function.hpp"

#include <cmath>
#include <memory>

#include "ctflow/errors.hpp"

namespace ctflow {
namespace {

std::string shape_str(const std::vector<Index>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
  return s + "]";
}

}  // namespace

DifferentiableFunction::DifferentiableFunction(std::string name, std::vector<ParamSpec> signature, Index input_dim,
                                               Index output_dim, ForwardRule forward, ForwardRule input_gradient)
    : name_(std::move(name)),
      signature_(std::move(signature)),
      input_dim_(input_dim),
      output_dim_(output_dim),
      forward_(std::move(forward)),
      input_gradient_(std::move(input_gradient)) {}

void DifferentiableFunction::check_params(const ParamMap& params) const {
  if (params.size() != signature_.size()) {
    throw SignatureError(name_ + ": expected " + std::to_string(signature_.size()) + " parameter arrays, got " +
                         std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < signature_.size(); ++i) {
    const auto& spec = signature_[i];
    const auto& e = params.entries()[i];
    if (e.name != spec.name || e.shape != spec.shape) {
      throw SignatureError(name_ + ": parameter " + std::to_string(i) + " is '" + e.name + "' " + shape_str(e.shape) +
                           ", expected '" + spec.name + "' " + shape_str(spec.shape));
    }
  }
}

std::vector<Var> DifferentiableFunction::bind(Tape& tape, const ParamMap& params, bool differentiable) const {
  check_params(params);
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const auto& e : params.entries()) {
    vars.push_back(differentiable ? tape.variable(e.as_tensor()) : tape.constant(e.as_tensor()));
  }
  return vars;
}

void DifferentiableFunction::check_input(const Tensor& input) const {
  if (input.cols() != input_dim_) {
    throw SignatureError(name_ + ": input has " + std::to_string(input.cols()) + " columns, expected " +
                         std::to_string(input_dim_));
  }
}

Var DifferentiableFunction::apply(std::span<const Var> params, Var input) const {
  check_input(input.value());
  Var out = forward_(params, input);
  if (out.cols() != output_dim_ || out.rows() != input.rows()) {
    throw SignatureError(name_ + ": forward rule produced " + std::to_string(out.rows()) + " x " +
                         std::to_string(out.cols()));
  }
  return out;
}

Var DifferentiableFunction::apply_input_gradient(std::span<const Var> params, Var input) const {
  if (!input_gradient_) throw ContractError(name_ + ": no input-gradient rule");
  check_input(input.value());
  return input_gradient_(params, input);
}

ParamMap DifferentiableFunction::init_params(RandomStream& stream) const {
  ParamMap out;
  for (const auto& spec : signature_) {
    const Index n = shape_count(spec.shape);
    std::vector<double> values(static_cast<std::size_t>(n), 0.0);
    switch (spec.init) {
      case Init::kZeros:
        break;
      case Init::kConstant:
        std::fill(values.begin(), values.end(), spec.scale);
        break;
      case Init::kNormal: {
        auto g = draw_gaussian(stream, n);
        for (Index i = 0; i < n; ++i) values[static_cast<std::size_t>(i)] = spec.scale * g[static_cast<std::size_t>(i)];
        break;
      }
      case Init::kGlorot: {
        const double fan_in = spec.shape.size() == 2 ? static_cast<double>(spec.shape[0]) : 1.0;
        const double fan_out = spec.shape.empty() ? 1.0 : static_cast<double>(spec.shape.back());
        const double a = spec.scale * std::sqrt(6.0 / (fan_in + fan_out));
        auto u = draw_uniform(stream, n);
        for (Index i = 0; i < n; ++i) values[static_cast<std::size_t>(i)] = a * (2.0 * u[static_cast<std::size_t>(i)] - 1.0);
        break;
      }
      case Init::kIdentity: {
        if (spec.shape.size() != 2 || spec.shape[0] != spec.shape[1]) {
          throw SignatureError("identity init needs a square matrix: '" + spec.name + "'");
        }
        for (Index i = 0; i < spec.shape[0]; ++i) values[static_cast<std::size_t>(i * spec.shape[0] + i)] = spec.scale;
        break;
      }
    }
    out.add(spec.name, spec.shape, std::move(values));
  }
  return out;
}

Tensor evaluate(const DifferentiableFunction& fn, const ParamMap& params, const Tensor& input) {
  Tape tape;
  auto p = fn.bind(tape, params, false);
  return fn.apply(p, tape.constant(input)).value();
}

Gradients gradient(const DifferentiableFunction& fn, const ParamMap& params, const Tensor& input) {
  Tape tape;
  auto p = fn.bind(tape, params, true);
  Var x = tape.variable(input);
  Var out = fn.apply(p, x);
  if (out.rows() != 1 || out.cols() != 1) {
    throw ContractError(fn.name() + ": gradient needs a scalar output, got " + std::to_string(out.rows()) + " x " +
                        std::to_string(out.cols()));
  }
  tape.backward(out);
  Gradients g;
  g.value = out.value().item();
  g.params = params.zeros_like();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Tensor gi = tape.grad(p[i]);
    std::copy(gi.values().begin(), gi.values().end(), g.params.entries()[i].values.begin());
  }
  g.input = tape.grad(x);
  return g;
}

Tensor input_gradient_rows(const DifferentiableFunction& fn, const ParamMap& params, const Tensor& input) {
  if (fn.output_dim() != 1) throw ContractError(fn.name() + ": input_gradient_rows needs one output column");
  Tape tape;
  auto p = fn.bind(tape, params, false);
  Var x = tape.variable(input);
  Var out = fn.apply(p, x);
  tape.backward(out, Tensor(out.rows(), 1, 1.0));
  return tape.grad(x);
}

double check_gradient(const DifferentiableFunction& fn, const ParamMap& params, const Tensor& input, double eps) {
  if (!(eps > 0.0)) throw ContractError("check_gradient: eps must be positive");
  const Gradients g = gradient(fn, params, input);
  if (!std::isfinite(g.value)) throw NumericError(fn.name() + ": non-finite value at the base point");

  auto eval_scalar = [&](const ParamMap& p, const Tensor& x, const std::string& coord) {
    const double v = evaluate(fn, p, x).item();
    if (!std::isfinite(v)) throw NumericError(fn.name() + ": non-finite value perturbing " + coord);
    return v;
  };
  auto rel = [](double ad, double fd) { return std::abs(ad - fd) / (std::abs(fd) + kGradientCheckFloor); };

  double worst = 0.0;
  ParamMap work = params;
  for (std::size_t e = 0; e < work.size(); ++e) {
    auto& values = work.entries()[e].values;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const std::string coord = work.entries()[e].name + "[" + std::to_string(i) + "]";
      const double ad = g.params.entries()[e].values[i];
      if (!std::isfinite(ad)) throw NumericError(fn.name() + ": non-finite gradient at " + coord);
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = eval_scalar(work, input, coord);
      values[i] = saved - eps;
      const double down = eval_scalar(work, input, coord);
      values[i] = saved;
      worst = std::max(worst, rel(ad, (up - down) / (2.0 * eps)));
    }
  }
  Tensor x = input;
  for (Index i = 0; i < x.size(); ++i) {
    const std::string coord = "input[" + std::to_string(i) + "]";
    const double ad = g.input[i];
    if (!std::isfinite(ad)) throw NumericError(fn.name() + ": non-finite gradient at " + coord);
    const double saved = x[i];
    x[i] = saved + eps;
    const double up = eval_scalar(params, x, coord);
    x[i] = saved - eps;
    const double down = eval_scalar(params, x, coord);
    x[i] = saved;
    worst = std::max(worst, rel(ad, (up - down) / (2.0 * eps)));
  }
  return worst;
}

Var activate(Activation act, Var x) {
  switch (act) {
    case Activation::kTanh:
      return tanh(x);
    case Activation::kRelu:
      return relu(x);
    case Activation::kSoftplus:
      return softplus(x);
  }
  throw ContractError("unknown activation");
}

Var activation_derivative(Activation act, Var x, Var y) {
  switch (act) {
    case Activation::kTanh:
      return 1.0 - square(y);
    case Activation::kRelu:
      return relu_mask(x);
    case Activation::kSoftplus:
      return sigmoid(x);
  }
  throw ContractError("unknown activation");
}

DifferentiableFunction make_identity(Index dim) {
  return DifferentiableFunction(
      "identity", {}, dim, dim, [](std::span<const Var>, Var x) { return x; },
      nullptr);
}

DifferentiableFunction make_linear(Index in, Index out, const std::string& prefix) {
  std::vector<ParamSpec> sig = {{prefix + ".weight", {in, out}, Init::kGlorot, 1.0},
                                {prefix + ".bias", {out}, Init::kZeros, 0.0}};
  ForwardRule fwd = [](std::span<const Var> p, Var x) { return matmul(x, p[0]) + p[1]; };
  ForwardRule grad;
  if (out == 1) {
    grad = [](std::span<const Var> p, Var x) {
      Var ones = x.tape().constant(Tensor(x.rows(), 1, 1.0));
      return matmul_nt(ones, p[0]);
    };
  }
  return DifferentiableFunction(prefix, std::move(sig), in, out, std::move(fwd), std::move(grad));
}

DifferentiableFunction make_mlp(const std::vector<Index>& sizes, Activation act, const std::string& prefix) {
  if (sizes.size() < 2) throw ContractError("make_mlp: need at least input and output sizes");
  std::vector<ParamSpec> sig;
  const std::size_t layers = sizes.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::string base = prefix + ".l" + std::to_string(l);
    sig.push_back({base + ".weight", {sizes[l], sizes[l + 1]}, Init::kGlorot, 1.0});
    sig.push_back({base + ".bias", {sizes[l + 1]}, Init::kZeros, 0.0});
  }
  ForwardRule fwd = [layers, act](std::span<const Var> p, Var x) {
    Var h = x;
    for (std::size_t l = 0; l < layers; ++l) {
      h = matmul(h, p[2 * l]) + p[2 * l + 1];
      if (l + 1 < layers) h = activate(act, h);
    }
    return h;
  };
  ForwardRule grad;
  if (sizes.back() == 1) {
    // Backpropagation written forward: delta_{l} = (delta_{l+1} W_{l+1}^T) * act'(a_l).
    grad = [layers, act](std::span<const Var> p, Var x) {
      std::vector<Var> pre, post;
      Var h = x;
      for (std::size_t l = 0; l + 1 < layers; ++l) {
        Var a = matmul(h, p[2 * l]) + p[2 * l + 1];
        h = activate(act, a);
        pre.push_back(a);
        post.push_back(h);
      }
      Var delta = x.tape().constant(Tensor(x.rows(), 1, 1.0));
      for (std::size_t l = layers; l-- > 0;) {
        delta = matmul_nt(delta, p[2 * l]);
        if (l > 0) delta = delta * activation_derivative(act, pre[l - 1], post[l - 1]);
      }
      return delta;
    };
  }
  return DifferentiableFunction(prefix, std::move(sig), sizes.front(), sizes.back(), std::move(fwd), std::move(grad));
}

DifferentiableFunction with_quadratic_confinement(DifferentiableFunction f, double alpha) {
  if (f.output_dim() != 1) throw ContractError("with_quadratic_confinement: needs a scalar-output function");
  const auto sig = f.signature();
  const Index in = f.input_dim();
  const std::string name = f.name() + "+confine";
  const bool has_grad = f.has_input_gradient_rule();
  auto shared = std::make_shared<DifferentiableFunction>(std::move(f));
  ForwardRule fwd = [shared, alpha](std::span<const Var> p, Var x) {
    return shared->apply(p, x) - alpha * sum_rows(square(x));
  };
  ForwardRule grad;
  if (has_grad) {
    grad = [shared, alpha](std::span<const Var> p, Var x) {
      return shared->apply_input_gradient(p, x) - (2.0 * alpha) * x;
    };
  }
  return DifferentiableFunction(name, sig, in, 1, std::move(fwd), std::move(grad));
}

DifferentiableFunction scalarize(DifferentiableFunction f, const Tensor& weights) {
  if (weights.rows() != 1 || weights.cols() != f.output_dim()) {
    throw ContractError("scalarize: weights must be 1 x output_dim");
  }
  const auto sig = f.signature();
  const Index in = f.input_dim();
  const std::string name = f.name() + "+scalar";
  auto shared = std::make_shared<DifferentiableFunction>(std::move(f));
  ForwardRule fwd = [shared, weights](std::span<const Var> p, Var x) {
    return sum(shared->apply(p, x) * x.tape().constant(weights));
  };
  return DifferentiableFunction(name, sig, in, 1, std::move(fwd));
}

}  // namespace ctflow

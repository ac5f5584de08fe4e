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

#include "ctflow/generator.hpp"

#include <cmath>
#include <numbers>

#include "ctflow/errors.hpp"
#include "ctflow/linalg.hpp"

namespace ctflow {
namespace {

Var elu(Var a) {
  Var pos = relu(a);
  return pos + exp(a - pos) - 1.0;
}

// Splits network input rows into (condition, noise).
std::pair<Var, Var> split_input(Var x, Index condition_dim, Index noise_dim) {
  Var noise = slice_cols(x, condition_dim, noise_dim);
  if (condition_dim == 0) return {Var(), noise};
  return {slice_cols(x, 0, condition_dim), noise};
}

DifferentiableFunction affine_network(const std::string& name, Index c, Index n, Index d, Index planar,
                                      double scale) {
  std::vector<ParamSpec> sig = {{"gen.A", {d, n}, n == d ? Init::kIdentity : Init::kGlorot, scale}};
  if (c > 0) sig.push_back({"gen.C", {c, d}, Init::kNormal, 0.1});
  sig.push_back({"gen.b", {d}, Init::kZeros, 0.0});
  for (Index k = 0; k < planar; ++k) {
    const std::string p = "gen.planar" + std::to_string(k);
    sig.push_back({p + ".u", {d}, Init::kNormal, 0.1});
    sig.push_back({p + ".w", {d}, Init::kNormal, 0.5});
    sig.push_back({p + ".b", {}, Init::kZeros, 0.0});
  }
  ForwardRule fwd = [c, n, planar](std::span<const Var> p, Var x) {
    auto [cond, noise] = split_input(x, c, n);
    std::size_t i = 0;
    Var z = matmul_nt(noise, p[i++]);
    if (c > 0) z = z + matmul(cond, p[i++]);
    z = z + p[i++];
    for (Index k = 0; k < planar; ++k, i += 3) z = planar_layer(z, p[i], p[i + 1], p[i + 2], nullptr);
    return z;
  };
  return DifferentiableFunction(name, std::move(sig), c + n, d, std::move(fwd));
}

}  // namespace

Var planar_layer(Var z, Var u, Var w, Var b, Var* log_det) {
  Var wu = sum(u * w);
  Var u_hat = u + ((elu(wu) - wu) / sum(square(w))) * w;
  Var t = tanh(matmul_nt(z, w) + b);
  if (log_det != nullptr) {
    Var wu_hat = sum(w * u_hat);
    *log_det = log(1.0 + (1.0 - square(t)) * wu_hat);
  }
  return z + matmul(t, u_hat);
}

GeneratorArch parse_generator_arch(const std::string& name) {
  if (name == "identity") return GeneratorArch::kIdentity;
  if (name == "affine") return GeneratorArch::kAffine;
  if (name == "planar") return GeneratorArch::kPlanar;
  if (name == "mlp") return GeneratorArch::kMlp;
  throw ConfigError("unknown generator architecture '" + name + "'");
}

std::string to_string(GeneratorArch arch) {
  switch (arch) {
    case GeneratorArch::kIdentity: return "identity";
    case GeneratorArch::kAffine: return "affine";
    case GeneratorArch::kPlanar: return "planar";
    case GeneratorArch::kMlp: return "mlp";
  }
  return "?";
}

ImplicitGenerator::ImplicitGenerator(DifferentiableFunction network, ParamMap params, Index condition_dim,
                                     Index noise_dim, bool invertible)
    : network_(std::move(network)),
      params_(std::move(params)),
      condition_dim_(condition_dim),
      noise_dim_(noise_dim),
      invertible_(invertible) {
  if (condition_dim_ < 0 || noise_dim_ < 1) throw ContractError("ImplicitGenerator: bad dimensions");
  if (network_.input_dim() != condition_dim_ + noise_dim_) {
    throw SignatureError("ImplicitGenerator: network input must be condition_dim + noise_dim");
  }
  if (invertible_ && noise_dim_ != network_.output_dim()) {
    throw ContractError("ImplicitGenerator: invertible mode needs noise_dim == output_dim");
  }
  network_.check_params(params_);
}

void ImplicitGenerator::set_params(ParamMap params) {
  network_.check_params(params);
  params_ = std::move(params);
}

Tensor ImplicitGenerator::network_input(const Tensor& condition, const Tensor& noise) const {
  if (noise.cols() != noise_dim_) throw ContractError("generator: noise dimension mismatch");
  if (condition.cols() != condition_dim_) throw ContractError("generator: condition dimension mismatch");
  if (condition_dim_ == 0) return noise;
  if (condition.rows() != 1 && condition.rows() != noise.rows()) {
    throw ContractError("generator: condition must have 1 or S rows");
  }
  Tensor input(noise.rows(), condition_dim_ + noise_dim_);
  for (Index i = 0; i < noise.rows(); ++i) {
    const Index ci = condition.rows() == 1 ? 0 : i;
    for (Index j = 0; j < condition_dim_; ++j) input(i, j) = condition(ci, j);
    for (Index j = 0; j < noise_dim_; ++j) input(i, condition_dim_ + j) = noise(i, j);
  }
  return input;
}

Tensor ImplicitGenerator::map(const Tensor& condition, const Tensor& noise) const {
  return evaluate(network_, params_, network_input(condition, noise));
}

ImplicitGenerator make_generator(const GeneratorSpec& spec, RandomStream& init) {
  const Index c = spec.condition_dim;
  const Index n = spec.noise_dim;
  const Index d = spec.output_dim;
  switch (spec.arch) {
    case GeneratorArch::kIdentity: {
      if (n != d) throw ConfigError("identity generator needs noise_dim == output_dim");
      DifferentiableFunction fn("gen.identity", {}, c + n, d,
                                [c, n](std::span<const Var>, Var x) { return slice_cols(x, c, n); });
      return ImplicitGenerator(fn, {}, c, n, true);
    }
    case GeneratorArch::kAffine:
    case GeneratorArch::kPlanar: {
      const Index layers = spec.arch == GeneratorArch::kPlanar ? spec.planar_layers : 0;
      auto fn = affine_network("gen." + to_string(spec.arch), c, n, d, layers, spec.noise_scale);
      auto params = fn.init_params(init);
      return ImplicitGenerator(fn, std::move(params), c, n, n == d);
    }
    case GeneratorArch::kMlp: {
      std::vector<Index> sizes = {c + n};
      sizes.insert(sizes.end(), spec.hidden.begin(), spec.hidden.end());
      sizes.push_back(d);
      auto fn = make_mlp(sizes, spec.activation, "gen");
      auto params = fn.init_params(init);
      return ImplicitGenerator(fn, std::move(params), c, n, false);
    }
  }
  throw ConfigError("unknown generator architecture");
}

ImplicitGenerator make_affine_generator(const Tensor& a, const Tensor& b) {
  return make_affine_generator(a, Tensor(0, a.rows()), b);
}

ImplicitGenerator make_affine_generator(const Tensor& a, const Tensor& c, const Tensor& b) {
  const Index d = a.rows();
  if (a.cols() != d || b.rows() != 1 || b.cols() != d || c.cols() != d) {
    throw ContractError("make_affine_generator: shape mismatch");
  }
  auto fn = affine_network("gen.affine", c.rows(), d, d, 0, 1.0);
  ParamMap params;
  params.add("gen.A", {d, d}, a);
  if (c.rows() > 0) params.add("gen.C", {c.rows(), d}, c);
  params.add("gen.b", {d}, b);
  return ImplicitGenerator(fn, std::move(params), c.rows(), d, true);
}

Tensor empty_condition(const ImplicitGenerator& gen) { return Tensor(1, gen.condition_dim()); }

GeneratorDraw draw_generator(const ImplicitGenerator& gen, const Tensor& condition, RandomStream& stream,
                             Index count) {
  if (count < 1) throw ContractError("sample_generator: needs S >= 1");
  Tensor noise = draw_gaussian(stream, count, gen.noise_dim());
  Tensor z = gen.map(condition, noise);
  return {std::move(noise), ParticleCloud(std::move(z))};
}

ParticleCloud sample_generator(const ImplicitGenerator& gen, const Tensor& condition, RandomStream& stream,
                               Index count) {
  return draw_generator(gen, condition, stream, count).samples;
}

std::vector<Tensor> noise_jacobians(const ImplicitGenerator& gen, const Tensor& condition, const Tensor& noise) {
  const Index s = noise.rows();
  const Index d = gen.output_dim();
  const Index c = gen.condition_dim();
  Tape tape;
  auto p = gen.network().bind(tape, gen.params(), false);
  Var x = tape.variable(gen.network_input(condition, noise));
  Var out = gen.network().apply(p, x);
  std::vector<Tensor> jac(static_cast<std::size_t>(s), Tensor(d, gen.noise_dim()));
  for (Index r = 0; r < d; ++r) {
    Tensor seed(s, d);
    for (Index i = 0; i < s; ++i) seed(i, r) = 1.0;
    tape.backward(out, seed);
    const Tensor g = tape.grad(x);
    for (Index i = 0; i < s; ++i) {
      for (Index j = 0; j < gen.noise_dim(); ++j) jac[static_cast<std::size_t>(i)](r, j) = g(i, c + j);
    }
  }
  return jac;
}

Tensor standard_normal_log_density(const Tensor& omega) {
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  Tensor out(omega.rows(), 1);
  for (Index i = 0; i < omega.rows(); ++i) {
    double v = 0.0;
    for (Index j = 0; j < omega.cols(); ++j) v += -0.5 * omega(i, j) * omega(i, j) - half_log_2pi;
    out(i, 0) = v;
  }
  return out;
}

Tensor generator_log_density(const ImplicitGenerator& gen, const Tensor& condition, const Tensor& noise) {
  if (!gen.invertible_mode()) throw ContractError("generator density needs invertible mode");
  const auto jac = noise_jacobians(gen, condition, noise);
  Tensor out = standard_normal_log_density(noise);
  for (Index i = 0; i < noise.rows(); ++i) {
    const double det = linalg::determinant(jac[static_cast<std::size_t>(i)]);
    if (!(std::abs(det) >= kSingularJacobianFloor)) {
      throw NumericError("singular generator Jacobian at sample " + std::to_string(i));
    }
    out(i, 0) -= std::log(std::abs(det));
  }
  return out;
}

}  // namespace ctflow

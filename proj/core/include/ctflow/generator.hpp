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

#include <cstdint>
#include <string>
#include <vector>

#include "ctflow/flow.hpp"
#include "ctflow/function.hpp"

namespace ctflow {

enum class GeneratorArch {
  kIdentity,  // z = omega
  kAffine,    // z = omega A^T + x C + b
  kPlanar,    // affine, then planar layers z <- z + u_hat tanh(w.z + b)
  kMlp,       // z = MLP([x, omega])
};

GeneratorArch parse_generator_arch(const std::string& name);
std::string to_string(GeneratorArch arch);

struct GeneratorSpec {
  GeneratorArch arch = GeneratorArch::kAffine;
  Index condition_dim = 0;
  Index noise_dim = 2;
  Index output_dim = 2;
  std::vector<Index> hidden = {32, 32};  // kMlp only
  Activation activation = Activation::kTanh;
  Index planar_layers = 4;  // kPlanar only
  double noise_scale = 1.0;  // initial A = noise_scale * I for affine/planar
};

// Implicit (conditional) sampler z = G(x, omega), omega ~ N(0, I). The network
// reads rows [x, omega]; with condition_dim = 0 it reads omega alone.
// invertible_mode holds when noise_dim == output_dim and the architecture is
// identity, affine or planar; the noise -> sample Jacobian is then square.
class ImplicitGenerator {
 public:
  ImplicitGenerator() = default;
  ImplicitGenerator(DifferentiableFunction network, ParamMap params, Index condition_dim, Index noise_dim,
                    bool invertible);

  const DifferentiableFunction& network() const { return network_; }
  const ParamMap& params() const { return params_; }
  ParamMap& mutable_params() { return params_; }
  void set_params(ParamMap params);

  Index condition_dim() const { return condition_dim_; }
  Index noise_dim() const { return noise_dim_; }
  Index output_dim() const { return network_.output_dim(); }
  bool invertible_mode() const { return invertible_; }

  // Network input rows [condition, noise]; condition is 1 x c (broadcast) or
  // S x c.
  Tensor network_input(const Tensor& condition, const Tensor& noise) const;
  // G(x, omega) for S noise rows.
  Tensor map(const Tensor& condition, const Tensor& noise) const;

 private:
  DifferentiableFunction network_;
  ParamMap params_;
  Index condition_dim_ = 0;
  Index noise_dim_ = 0;
  bool invertible_ = false;
};

ImplicitGenerator make_generator(const GeneratorSpec& spec, RandomStream& init);

// z = omega A^T + b with given A (d x d) and b (1 x d); unconditional.
ImplicitGenerator make_affine_generator(const Tensor& a, const Tensor& b);

// z = omega A^T + x C + b with given A (d x d), C (c x d) and b (1 x d).
ImplicitGenerator make_affine_generator(const Tensor& a, const Tensor& c, const Tensor& b);

// 1 x c condition of zeros (1 x 0 for unconditional generators).
Tensor empty_condition(const ImplicitGenerator& gen);

// S draws: noise = draw_gaussian(stream, S, noise_dim), samples = G(x, noise).
struct GeneratorDraw {
  Tensor noise;
  ParticleCloud samples;
};
GeneratorDraw draw_generator(const ImplicitGenerator& gen, const Tensor& condition, RandomStream& stream, Index count);
ParticleCloud sample_generator(const ImplicitGenerator& gen, const Tensor& condition, RandomStream& stream,
                               Index count);

// d z / d omega for each noise row, via one reverse pass per output column.
std::vector<Tensor> noise_jacobians(const ImplicitGenerator& gen, const Tensor& condition, const Tensor& noise);

// Smallest |det| accepted by generator_log_density.
inline constexpr double kSingularJacobianFloor = 1e-12;

// log q(z_i) = log N(omega_i; 0, I) - log|det dz/domega| for z_i = G(x, omega_i).
// ContractError unless invertible_mode; NumericError naming the sample index
// when |det| < kSingularJacobianFloor.
Tensor generator_log_density(const ImplicitGenerator& gen, const Tensor& condition, const Tensor& noise);

// Sum over rows of log N(omega_i; 0, I), returned per row (S x 1).
Tensor standard_normal_log_density(const Tensor& omega);

// Planar layer on tape: z + tanh(z w^T + b) u_hat with
// u_hat = u + (elu(w.u) - w.u) w / |w|^2, so w.u_hat = elu(w.u) > -1 and u = 0
// is the identity map. Returns the new z; log_det receives
// log(1 + (1 - tanh^2) w.u_hat) per row (S x 1).
Var planar_layer(Var z, Var u, Var w, Var b, Var* log_det);

}  // namespace ctflow

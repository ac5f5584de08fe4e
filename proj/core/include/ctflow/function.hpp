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

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ctflow/autodiff.hpp"
#include "ctflow/param_map.hpp"
#include "ctflow/random.hpp"

namespace ctflow {

enum class Init { kZeros, kGlorot, kNormal, kIdentity, kConstant };

struct ParamSpec {
  std::string name;
  std::vector<Index> shape;
  Init init = Init::kGlorot;
  double scale = 1.0;
};

// Maps bound parameters and an N x input_dim batch to an N x output_dim batch.
using ForwardRule = std::function<Var(std::span<const Var> params, Var input)>;

// A differentiable map built from tape primitives. Rows of the input are
// independent points: row i of the output depends only on row i of the input.
//
// An optional input-gradient rule returns d(output)/d(input) per row as a
// forward expression (for scalar-output networks), so losses that contain
// input gradients remain first-order differentiable in the parameters.
class DifferentiableFunction {
 public:
  DifferentiableFunction() = default;
  DifferentiableFunction(std::string name, std::vector<ParamSpec> signature, Index input_dim, Index output_dim,
                         ForwardRule forward, ForwardRule input_gradient = nullptr);

  const std::string& name() const { return name_; }
  const std::vector<ParamSpec>& signature() const { return signature_; }
  Index input_dim() const { return input_dim_; }
  Index output_dim() const { return output_dim_; }
  bool has_input_gradient_rule() const { return static_cast<bool>(input_gradient_); }

  // Throws SignatureError unless params carries exactly the signature's
  // names, in order, with matching shapes.
  void check_params(const ParamMap& params) const;
  // Puts params on the tape, as variables when differentiable, else constants.
  std::vector<Var> bind(Tape& tape, const ParamMap& params, bool differentiable) const;

  Var apply(std::span<const Var> params, Var input) const;
  Var apply_input_gradient(std::span<const Var> params, Var input) const;

  ParamMap init_params(RandomStream& stream) const;

 private:
  void check_input(const Tensor& input) const;

  std::string name_;
  std::vector<ParamSpec> signature_;
  Index input_dim_ = 0;
  Index output_dim_ = 0;
  ForwardRule forward_;
  ForwardRule input_gradient_;
};

Tensor evaluate(const DifferentiableFunction& fn, const ParamMap& params, const Tensor& input);

struct Gradients {
  double value = 0.0;
  ParamMap params;
  Tensor input;
};

// Exact reverse-mode gradient of a scalar (1 x 1) output.
Gradients gradient(const DifferentiableFunction& fn, const ParamMap& params, const Tensor& input);

// Per-row input gradients of a function with one output column: row i holds
// d out_i / d input_i. Relies on row independence.
Tensor input_gradient_rows(const DifferentiableFunction& fn, const ParamMap& params, const Tensor& input);

// Max over every parameter and input coordinate of
//   |autodiff - central difference| / (|central difference| + kGradientCheckFloor).
// Requires a 1 x 1 output.
inline constexpr double kGradientCheckFloor = 1e-4;
double check_gradient(const DifferentiableFunction& fn, const ParamMap& params, const Tensor& input, double eps);

enum class Activation { kTanh, kRelu, kSoftplus };

Var activate(Activation act, Var x);
// Derivative of the activation evaluated at the pre-activation x, given the
// post-activation y = act(x).
Var activation_derivative(Activation act, Var x, Var y);

DifferentiableFunction make_identity(Index dim);
// x W + b with W [in, out], b [out].
DifferentiableFunction make_linear(Index in, Index out, const std::string& prefix = "linear");
// Fully connected network; sizes lists input, hidden..., output widths. The
// last layer is linear. Carries an input-gradient rule when the output is
// scalar.
DifferentiableFunction make_mlp(const std::vector<Index>& sizes, Activation act, const std::string& prefix = "mlp");
// f(x) - alpha * |x|^2, keeping f's parameters and input-gradient rule.
DifferentiableFunction with_quadratic_confinement(DifferentiableFunction f, double alpha);

// x -> sum over rows and columns of f(x) * weights (1 x output_dim), a 1 x 1
// output for gradient checks of vector-valued maps.
DifferentiableFunction scalarize(DifferentiableFunction f, const Tensor& weights);

}  // namespace ctflow

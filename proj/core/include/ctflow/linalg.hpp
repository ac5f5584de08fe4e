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

#include "ctflow/tensor.hpp"

// Small dense linear algebra on square Tensors (Eigen-backed).
namespace ctflow::linalg {

bool is_symmetric(const Tensor& m, double tol = 1e-12);
// Symmetric with every eigenvalue > 0.
bool is_spd(const Tensor& m);

// Lower Cholesky factor; NumericError if m is not SPD.
Tensor cholesky(const Tensor& m);
Tensor inverse(const Tensor& m);
// log|det m| with LU; -inf for singular input.
double log_abs_det(const Tensor& m);
double determinant(const Tensor& m);
// Principal square root of a symmetric positive semidefinite matrix.
Tensor sqrtm_psd(const Tensor& m);
double trace(const Tensor& m);
Tensor identity(Index n);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

}  // namespace ctflow::linalg

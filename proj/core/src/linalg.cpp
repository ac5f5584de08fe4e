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

#include "ctflow/linalg.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <limits>

#include "ctflow/errors.hpp"

namespace ctflow::linalg {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMatrix> view(const Tensor& t) { return {t.data(), t.rows(), t.cols()}; }

Tensor from_eigen(const RowMatrix& m) {
  Tensor out(m.rows(), m.cols());
  Eigen::Map<RowMatrix>(out.data(), m.rows(), m.cols()) = m;
  return out;
}

void require_square(const Tensor& m, const char* what) {
  if (m.rows() != m.cols()) throw ContractError(std::string(what) + ": matrix is not square");
}

}  // namespace

bool is_symmetric(const Tensor& m, double tol) {
  if (m.rows() != m.cols()) return false;
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = i + 1; j < m.cols(); ++j) {
      const double scale = std::max({1.0, std::abs(m(i, j)), std::abs(m(j, i))});
      if (std::abs(m(i, j) - m(j, i)) > tol * scale) return false;
    }
  }
  return true;
}

bool is_spd(const Tensor& m) {
  if (!is_symmetric(m) || !m.all_finite()) return false;
  if (m.rows() == 0) return true;
  Eigen::SelfAdjointEigenSolver<RowMatrix> es(view(m), Eigen::EigenvaluesOnly);
  return es.info() == Eigen::Success && es.eigenvalues().minCoeff() > 0.0;
}

Tensor cholesky(const Tensor& m) {
  require_square(m, "cholesky");
  if (!is_spd(m)) throw NumericError("cholesky: matrix is not symmetric positive definite");
  Eigen::LLT<RowMatrix> llt(view(m));
  if (llt.info() != Eigen::Success) throw NumericError("cholesky: factorization failed");
  return from_eigen(llt.matrixL());
}

Tensor inverse(const Tensor& m) {
  require_square(m, "inverse");
  Eigen::FullPivLU<RowMatrix> lu(view(m));
  if (!lu.isInvertible()) throw NumericError("inverse: matrix is singular");
  return from_eigen(lu.inverse());
}

double log_abs_det(const Tensor& m) {
  require_square(m, "log_abs_det");
  if (m.rows() == 0) return 0.0;
  Eigen::PartialPivLU<RowMatrix> lu(view(m));
  const auto& u = lu.matrixLU();
  double s = 0.0;
  for (Index i = 0; i < m.rows(); ++i) {
    const double d = std::abs(u(i, i));
    if (d == 0.0) return -std::numeric_limits<double>::infinity();
    s += std::log(d);
  }
  return s;
}

double determinant(const Tensor& m) {
  require_square(m, "determinant");
  if (m.rows() == 0) return 1.0;
  return view(m).determinant();
}

Tensor sqrtm_psd(const Tensor& m) {
  require_square(m, "sqrtm_psd");
  if (!is_symmetric(m, 1e-10)) throw NumericError("sqrtm_psd: matrix is not symmetric");
  RowMatrix sym = 0.5 * (view(m) + view(m).transpose());
  Eigen::SelfAdjointEigenSolver<RowMatrix> es(sym);
  if (es.info() != Eigen::Success) throw NumericError("sqrtm_psd: eigen decomposition failed");
  Eigen::VectorXd ev = es.eigenvalues();
  const double floor = -1e-12 * std::max(1.0, ev.cwiseAbs().maxCoeff());
  for (Index i = 0; i < ev.size(); ++i) {
    if (ev(i) < floor) throw NumericError("sqrtm_psd: matrix has a negative eigenvalue");
    ev(i) = std::sqrt(std::max(ev(i), 0.0));
  }
  RowMatrix root = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  return from_eigen(root);
}

double trace(const Tensor& m) {
  require_square(m, "trace");
  double s = 0.0;
  for (Index i = 0; i < m.rows(); ++i) s += m(i, i);
  return s;
}

Tensor identity(Index n) {
  Tensor out(n, n);
  for (Index i = 0; i < n; ++i) out(i, i) = 1.0;
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw ContractError("linalg::matmul: inner dimension mismatch");
  RowMatrix p = view(a) * view(b);
  return from_eigen(p);
}

Tensor transpose(const Tensor& a) {
  Tensor out(a.cols(), a.rows());
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  }
  return out;
}

}  // namespace ctflow::linalg

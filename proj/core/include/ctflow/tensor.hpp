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

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace ctflow {

using Index = std::ptrdiff_t;

// Dense row-major matrix of doubles. Batches of points are stored one point
// per row; vectors are 1 x n.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Index rows, Index cols, double fill = 0.0);
  Tensor(Index rows, Index cols, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor(1, 1, v); }
  static Tensor row(std::initializer_list<double> values);
  static Tensor row(std::span<const double> values);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);

  Index rows() const { return rows_; }
  Index cols() const { return cols_; }
  Index size() const { return rows_ * cols_; }
  bool empty() const { return size() == 0; }

  double& operator()(Index r, Index c) { return data_[static_cast<std::size_t>(r * cols_ + c)]; }
  double operator()(Index r, Index c) const { return data_[static_cast<std::size_t>(r * cols_ + c)]; }
  double& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::span<double> row_span(Index r) { return {data() + r * cols_, static_cast<std::size_t>(cols_)}; }
  std::span<const double> row_span(Index r) const {
    return {data() + r * cols_, static_cast<std::size_t>(cols_)};
  }

  // The single element of a 1 x 1 tensor.
  double item() const;

  Tensor rows_slice(Index begin, Index count) const;
  void set_rows(Index begin, const Tensor& block);
  Tensor col(Index c) const;

  bool all_finite() const;
  // Index of the first non-finite element, or -1.
  Index first_non_finite() const;

  void fill(double v);

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Index rows_ = 0;
  Index cols_ = 0;
  std::vector<double> data_;
};

// Bitwise comparison (distinguishes -0.0 from 0.0 and compares NaN payloads).
bool bit_identical(const Tensor& a, const Tensor& b);

Tensor vstack(std::span<const Tensor> blocks);
Tensor hstack(const Tensor& a, const Tensor& b);

}  // namespace ctflow

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
#include "ctflow/tensor.hpp"

#include <cmath>
#include <cstring>

#include "ctflow/errors.hpp"

namespace ctflow {

Tensor::Tensor(Index rows, Index cols, double fill)
    : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows * cols), fill) {
  if (rows < 0 || cols < 0) throw ContractError("Tensor: negative dimension");
}

Tensor::Tensor(Index rows, Index cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (rows < 0 || cols < 0 || static_cast<Index>(data_.size()) != rows * cols) {
    throw ContractError("Tensor: data size does not match shape");
  }
}

Tensor Tensor::row(std::initializer_list<double> values) {
  return Tensor(1, static_cast<Index>(values.size()), std::vector<double>(values));
}

Tensor Tensor::row(std::span<const double> values) {
  return Tensor(1, static_cast<Index>(values.size()), std::vector<double>(values.begin(), values.end()));
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const Index r = static_cast<Index>(rows.size());
  const Index c = r == 0 ? 0 : static_cast<Index>(rows.begin()->size());
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(r * c));
  for (const auto& row : rows) {
    if (static_cast<Index>(row.size()) != c) throw ContractError("Tensor::from_rows: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor(r, c, std::move(data));
}

double Tensor::item() const {
  if (rows_ != 1 || cols_ != 1) throw ContractError("Tensor::item: tensor is not 1 x 1");
  return data_[0];
}

Tensor Tensor::rows_slice(Index begin, Index count) const {
  if (begin < 0 || count < 0 || begin + count > rows_) throw ContractError("Tensor::rows_slice: out of range");
  Tensor out(count, cols_);
  std::copy(data_.begin() + begin * cols_, data_.begin() + (begin + count) * cols_, out.data_.begin());
  return out;
}

void Tensor::set_rows(Index begin, const Tensor& block) {
  if (block.cols_ != cols_ || begin < 0 || begin + block.rows_ > rows_) {
    throw ContractError("Tensor::set_rows: shape mismatch");
  }
  std::copy(block.data_.begin(), block.data_.end(), data_.begin() + begin * cols_);
}

Tensor Tensor::col(Index c) const {
  Tensor out(rows_, 1);
  for (Index r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
  return out;
}

bool Tensor::all_finite() const { return first_non_finite() < 0; }

Index Tensor::first_non_finite() const {
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) return static_cast<Index>(i);
  }
  return -1;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool bit_identical(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  return a.size() == 0 ||
         std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(double)) == 0;
}

Tensor vstack(std::span<const Tensor> blocks) {
  if (blocks.empty()) return {};
  Index rows = 0;
  const Index cols = blocks.front().cols();
  for (const auto& b : blocks) {
    if (b.cols() != cols) throw ContractError("vstack: column mismatch");
    rows += b.rows();
  }
  Tensor out(rows, cols);
  Index at = 0;
  for (const auto& b : blocks) {
    out.set_rows(at, b);
    at += b.rows();
  }
  return out;
}

Tensor hstack(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) throw ContractError("hstack: row mismatch");
  Tensor out(a.rows(), a.cols() + b.cols());
  for (Index r = 0; r < a.rows(); ++r) {
    for (Index c = 0; c < a.cols(); ++c) out(r, c) = a(r, c);
    for (Index c = 0; c < b.cols(); ++c) out(r, a.cols() + c) = b(r, c);
  }
  return out;
}

}  // namespace ctflow

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

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "ctflow/tensor.hpp"

namespace ctflow {

struct ParamEntry {
  std::string name;
  // Empty shape is a scalar; {n} is a 1 x n row; {r, c} is an r x c matrix.
  std::vector<Index> shape;
  std::vector<double> values;

  Index count() const;
  Tensor as_tensor() const;

  friend bool operator==(const ParamEntry&, const ParamEntry&) = default;
};

Index shape_count(const std::vector<Index>& shape);

// Ordered, uniquely named collection of real parameter arrays.
class ParamMap {
 public:
  ParamMap() = default;

  void add(std::string name, std::vector<Index> shape, std::vector<double> values);
  void add(std::string name, std::vector<Index> shape, const Tensor& values);

  bool contains(std::string_view name) const;
  const ParamEntry& at(std::string_view name) const;
  ParamEntry& at(std::string_view name);

  const std::vector<ParamEntry>& entries() const { return entries_; }
  std::vector<ParamEntry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  Index total_count() const;
  std::vector<double> flatten() const;
  void assign_flat(std::span<const double> flat);

  // Same names, shapes and order, all values zero.
  ParamMap zeros_like() const;
  double max_abs() const;
  bool all_finite() const;

  friend bool operator==(const ParamMap&, const ParamMap&) = default;

 private:
  std::vector<ParamEntry> entries_;
};

// Binary format (all integers little-endian):
//   magic "CTFPARAM", u32 version = 1, u32 endian tag 0x01020304,
//   u64 entry count, then per entry:
//   u32 name length, name bytes, u32 rank, rank x u64 dims,
//   count x IEEE-754 binary64 values in little-endian byte order.
std::string serialize_binary(const ParamMap& params);
ParamMap deserialize_binary(std::string_view bytes);

// Text format, line oriented:
//   ctflow-params 1
//   entry <name> <rank> <dim>...
//   <value> ... (C99 hex-float, exact)
// Blank lines and lines starting with '#' are ignored.
std::string serialize_text(const ParamMap& params);
ParamMap deserialize_text(std::string_view text);

void save_params(const ParamMap& params, const std::filesystem::path& path);
ParamMap load_params(const std::filesystem::path& path);

}  // namespace ctflow

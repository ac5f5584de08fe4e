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

#include <cmath>
#include <string>
#include <vector>

#include "json.hpp"

#include "ctflow/io.hpp"
#include "ctflow/param_map.hpp"
#include "ctflow/tensor.hpp"

namespace ctflow::testing {

inline nlohmann::json golden() { return nlohmann::json::parse(read_file(std::string(CTFLOW_TEST_DATA_DIR) + "/golden.json")); }

inline Tensor tensor_from_json(const nlohmann::json& rows) {
  if (!rows.is_array() || rows.empty() || !rows[0].is_array()) {
    std::vector<double> v = rows.get<std::vector<double>>();
    return Tensor(1, static_cast<Index>(v.size()), v);
  }
  const Index r = static_cast<Index>(rows.size());
  const Index c = static_cast<Index>(rows[0].size());
  Tensor t(r, c);
  for (Index i = 0; i < r; ++i) {
    for (Index j = 0; j < c; ++j) t(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)].get<double>();
  }
  return t;
}

// Layer list [[W, b], ...] as MLP parameters "prefix.l<i>.weight/bias".
inline ParamMap mlp_params_from_json(const nlohmann::json& layers, const std::string& prefix) {
  ParamMap p;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const Tensor w = tensor_from_json(layers[l][0]);
    const std::vector<double> b = layers[l][1].get<std::vector<double>>();
    const std::string base = prefix + ".l" + std::to_string(l);
    p.add(base + ".weight", {w.rows(), w.cols()}, w);
    p.add(base + ".bias", {static_cast<Index>(b.size())}, b);
  }
  return p;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (Index i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double sample_mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double sample_var(const std::vector<double>& v) {
  const double m = sample_mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

}  // namespace ctflow::testing

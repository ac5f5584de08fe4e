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

#include <string>

#include "ctflow/param_map.hpp"

namespace ctflow {

enum class OptimizerKind { kSgd, kAdam };

OptimizerKind parse_optimizer_kind(const std::string& name);
std::string to_string(OptimizerKind kind);

// Gradient-descent learner over a ParamMap. Adam moments are allocated on the
// first step and keyed to the map's layout.
class Optimizer {
 public:
  explicit Optimizer(OptimizerKind kind = OptimizerKind::kAdam, double learning_rate = 1e-3, double beta1 = 0.9,
                     double beta2 = 0.999, double epsilon = 1e-8);

  // params <- params - lr * update(grad)
  void step(ParamMap& params, const ParamMap& grad);

  double learning_rate() const { return learning_rate_; }
  void set_learning_rate(double lr) { learning_rate_ = lr; }
  OptimizerKind kind() const { return kind_; }
  long steps() const { return t_; }

 private:
  OptimizerKind kind_;
  double learning_rate_;
  double beta1_;
  double beta2_;
  double epsilon_;
  long t_ = 0;
  std::vector<double> m_;
  std::vector<double> v_;
};

// Linear decay lr * (total - epoch) / (total - 50). Requires total > 50.
double linear_decay_step(long epoch, long total_epochs, double base_lr);

}  // namespace ctflow

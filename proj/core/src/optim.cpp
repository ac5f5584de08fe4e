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

#include "ctflow/optim.hpp"

#include <cmath>

#include "ctflow/errors.hpp"

namespace ctflow {

OptimizerKind parse_optimizer_kind(const std::string& name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adam") return OptimizerKind::kAdam;
  throw ConfigError("unknown optimizer '" + name + "'");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::kSgd ? "sgd" : "adam"; }

Optimizer::Optimizer(OptimizerKind kind, double learning_rate, double beta1, double beta2, double epsilon)
    : kind_(kind), learning_rate_(learning_rate), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {
  if (!(learning_rate > 0.0)) throw ContractError("optimizer: learning rate must be positive");
}

void Optimizer::step(ParamMap& params, const ParamMap& grad) {
  if (grad.size() != params.size()) throw ContractError("optimizer: gradient layout mismatch");
  ++t_;
  if (kind_ == OptimizerKind::kSgd) {
    for (std::size_t e = 0; e < params.size(); ++e) {
      auto& p = params.entries()[e].values;
      const auto& g = grad.entries()[e].values;
      if (p.size() != g.size()) throw ContractError("optimizer: gradient layout mismatch");
      for (std::size_t i = 0; i < p.size(); ++i) p[i] -= learning_rate_ * g[i];
    }
    return;
  }
  const auto n = static_cast<std::size_t>(params.total_count());
  if (m_.size() != n) {
    m_.assign(n, 0.0);
    v_.assign(n, 0.0);
  }
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  std::size_t k = 0;
  for (std::size_t e = 0; e < params.size(); ++e) {
    auto& p = params.entries()[e].values;
    const auto& g = grad.entries()[e].values;
    if (p.size() != g.size()) throw ContractError("optimizer: gradient layout mismatch");
    for (std::size_t i = 0; i < p.size(); ++i, ++k) {
      m_[k] = beta1_ * m_[k] + (1.0 - beta1_) * g[i];
      v_[k] = beta2_ * v_[k] + (1.0 - beta2_) * g[i] * g[i];
      p[i] -= learning_rate_ * (m_[k] / c1) / (std::sqrt(v_[k] / c2) + epsilon_);
    }
  }
}

double linear_decay_step(long epoch, long total_epochs, double base_lr) {
  if (total_epochs <= 50) throw ContractError("linear_decay_step: total epochs must exceed 50");
  return static_cast<double>(total_epochs - epoch) * base_lr / static_cast<double>(total_epochs - 50);
}

}  // namespace ctflow

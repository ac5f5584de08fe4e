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
#include <vector>

#include "ctflow/tensor.hpp"

namespace ctflow {

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid while its Tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Tape& tape() const { return *tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

enum class Op : std::uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kScale,
  kAddScalar,
  kMatMul,
  kMatMulNT,
  kTanh,
  kRelu,
  kSoftplus,
  kSigmoid,
  kExp,
  kLog,
  kSin,
  kSquare,
  kSum,
  kSumRows,
  kSumCols,
  kNormRows,
  kLogAddExp,
  kLogSumExpRows,
  kSliceCols,
  kConcatCols,
};

// Reverse-mode tape over dense tensors. Elementwise binary ops broadcast an
// operand of shape 1 x 1, 1 x c or r x 1 against an r x c partner. Gradients
// are first order; networks that need input gradients inside a loss (gradient
// penalties) express them as forward expressions instead.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // A differentiable input.
  Var variable(Tensor value);
  // A value no gradient flows into.
  Var constant(Tensor value);

  const Tensor& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id_)].value; }

  // Seeds d(out)/d(out) = 1 for a 1 x 1 node and propagates to every node.
  void backward(Var out);
  // Seeds an arbitrary upstream gradient of out's shape.
  void backward(Var out, const Tensor& seed);

  // Gradient accumulated at v by the last backward(); zeros if v is unreachable.
  Tensor grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }

  // Appends an op node whose forward value was computed by the caller. Used by
  // the primitive functions below.
  Var record(Op op, Var a, Var b, double k, Index i0, Index i1, Tensor value);

 private:

  struct Node {
    Op op = Op::kLeaf;
    int a = -1;
    int b = -1;
    double k = 0.0;
    Index i0 = 0;
    Index i1 = 0;
    bool needs_grad = false;
    Tensor value;
    Tensor grad;
  };

  Var push(Node node);
  void propagate(std::size_t id);

  std::vector<Node> nodes_;
};

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);
Var operator-(Var a);
Var operator*(double k, Var a);
Var operator*(Var a, double k);
Var operator+(Var a, double k);
Var operator+(double k, Var a);
Var operator-(Var a, double k);
Var operator-(double k, Var a);

Var matmul(Var a, Var b);
// a * transpose(b).
Var matmul_nt(Var a, Var b);

Var tanh(Var a);
Var relu(Var a);
Var softplus(Var a);
Var sigmoid(Var a);
Var exp(Var a);
Var log(Var a);
Var sin(Var a);
Var square(Var a);

// Sum of every element, 1 x 1.
Var sum(Var a);
Var mean(Var a);
// Per-row sum, r x 1.
Var sum_rows(Var a);
// Per-column sum, 1 x c.
Var sum_cols(Var a);
// Per-row Euclidean norm, r x 1. The gradient at a zero row is zero.
Var norm_rows(Var a);
// log(exp(a) + exp(b)) without overflow.
Var logaddexp(Var a, Var b);
// Per-row log-sum-exp, r x 1.
Var log_sum_exp_rows(Var a);

Var slice_cols(Var a, Index begin, Index count);
Var concat_cols(Var a, Var b);

// Constant mask 1[a > 0]; the derivative of relu expressed as a value.
Var relu_mask(Var a);

}  // namespace ctflow

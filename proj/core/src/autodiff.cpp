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
#include "ctflow/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ctflow/errors.hpp"

namespace ctflow {
namespace {

struct Broadcast {
  Index rows = 0;
  Index cols = 0;
  // Row/column strides into each operand: 1 when the operand spans the axis.
  Index ar = 1, ac = 1, br = 1, bc = 1;
};

Index broadcast_axis(Index a, Index b, const char* op) {
  if (a == b) return a;
  if (a == 1) return b;
  if (b == 1) return a;
  throw ContractError(std::string("broadcast mismatch in ") + op);
}

Broadcast broadcast(const Tensor& a, const Tensor& b, const char* op) {
  Broadcast s;
  s.rows = broadcast_axis(a.rows(), b.rows(), op);
  s.cols = broadcast_axis(a.cols(), b.cols(), op);
  s.ar = a.rows() == s.rows ? 1 : 0;
  s.ac = a.cols() == s.cols ? 1 : 0;
  s.br = b.rows() == s.rows ? 1 : 0;
  s.bc = b.cols() == s.cols ? 1 : 0;
  return s;
}

template <typename F>
Tensor binary_forward(const Tensor& a, const Tensor& b, const char* name, F f) {
  const Broadcast s = broadcast(a, b, name);
  Tensor out(s.rows, s.cols);
  for (Index i = 0; i < s.rows; ++i) {
    for (Index j = 0; j < s.cols; ++j) {
      out(i, j) = f(a(i * s.ar, j * s.ac), b(i * s.br, j * s.bc));
    }
  }
  return out;
}

template <typename F>
Tensor unary_forward(const Tensor& a, F f) {
  Tensor out(a.rows(), a.cols());
  for (Index i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

double stable_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double logaddexp_scalar(double a, double b) {
  if (a == -INFINITY) return b;
  if (b == -INFINITY) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

void matmul_into(const Tensor& a, const Tensor& b, Tensor& out) {
  const Index n = a.rows(), k = a.cols(), m = b.cols();
  for (Index i = 0; i < n; ++i) {
    double* orow = out.data() + i * m;
    const double* arow = a.data() + i * k;
    for (Index p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b.data() + p * m;
      for (Index j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
}

}  // namespace

const Tensor& Var::value() const { return tape_->value(*this); }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::variable(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = true;
  return push(std::move(n));
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::record(Op op, Var a, Var b, double k, Index i0, Index i1, Tensor value) {
  Node n;
  n.op = op;
  n.a = a.id_;
  n.b = b.valid() ? b.id_ : -1;
  n.k = k;
  n.i0 = i0;
  n.i1 = i1;
  n.needs_grad = nodes_[static_cast<std::size_t>(n.a)].needs_grad ||
                 (n.b >= 0 && nodes_[static_cast<std::size_t>(n.b)].needs_grad);
  n.value = std::move(value);
  return push(std::move(n));
}

void Tape::backward(Var out) {
  const Tensor& v = value(out);
  if (v.rows() != 1 || v.cols() != 1) {
    throw ContractError("backward: output is " + std::to_string(v.rows()) + " x " +
                        std::to_string(v.cols()) + ", expected a scalar");
  }
  backward(out, Tensor::scalar(1.0));
}

void Tape::backward(Var out, const Tensor& seed) {
  if (out.tape_ != this) throw ContractError("backward: variable belongs to another tape");
  const Tensor& v = value(out);
  if (seed.rows() != v.rows() || seed.cols() != v.cols()) throw ContractError("backward: seed shape mismatch");
  for (auto& n : nodes_) n.grad = Tensor();
  nodes_[static_cast<std::size_t>(out.id_)].grad = seed;
  for (std::size_t id = static_cast<std::size_t>(out.id_) + 1; id-- > 0;) {
    if (nodes_[id].needs_grad && !nodes_[id].grad.empty()) propagate(id);
  }
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[static_cast<std::size_t>(v.id_)];
  if (n.grad.empty()) return Tensor(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::propagate(std::size_t id) {
  Node& node = nodes_[id];
  if (node.op == Op::kLeaf) return;
  const Tensor& g = node.grad;
  const Tensor& y = node.value;

  auto slot = [this](int parent) -> Tensor* {
    if (parent < 0) return nullptr;
    Node& p = nodes_[static_cast<std::size_t>(parent)];
    if (!p.needs_grad) return nullptr;
    if (p.grad.empty()) p.grad = Tensor(p.value.rows(), p.value.cols());
    return &p.grad;
  };
  Tensor* ga = slot(node.a);
  Tensor* gb = slot(node.b);
  const Tensor& a = nodes_[static_cast<std::size_t>(node.a)].value;
  const Tensor* bp = node.b >= 0 ? &nodes_[static_cast<std::size_t>(node.b)].value : nullptr;

  // Accumulates df/da * g and df/db * g with broadcast reduction.
  auto binary = [&](auto da, auto db) {
    const Tensor& b = *bp;
    const Broadcast s = broadcast(a, b, "backward");
    for (Index i = 0; i < s.rows; ++i) {
      for (Index j = 0; j < s.cols; ++j) {
        const double av = a(i * s.ar, j * s.ac);
        const double bv = b(i * s.br, j * s.bc);
        const double gv = g(i, j);
        if (ga) (*ga)(i * s.ar, j * s.ac) += gv * da(av, bv, y(i, j));
        if (gb) (*gb)(i * s.br, j * s.bc) += gv * db(av, bv, y(i, j));
      }
    }
  };
  auto unary = [&](auto da) {
    if (!ga) return;
    for (Index i = 0; i < a.size(); ++i) (*ga)[i] += g[i] * da(a[i], y[i]);
  };

  switch (node.op) {
    case Op::kLeaf:
      break;
    case Op::kAdd:
      binary([](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
      break;
    case Op::kSub:
      binary([](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
      break;
    case Op::kMul:
      binary([](double, double b, double) { return b; }, [](double a_, double, double) { return a_; });
      break;
    case Op::kDiv:
      binary([](double, double b, double) { return 1.0 / b; },
             [](double a_, double b, double) { return -a_ / (b * b); });
      break;
    case Op::kScale: {
      const double k = node.k;
      unary([k](double, double) { return k; });
      break;
    }
    case Op::kAddScalar:
      unary([](double, double) { return 1.0; });
      break;
    case Op::kMatMul: {
      const Tensor& b = *bp;
      // ga += g * b^T ; gb += a^T * g
      if (ga) {
        for (Index i = 0; i < a.rows(); ++i) {
          for (Index p = 0; p < a.cols(); ++p) {
            double acc = 0.0;
            for (Index j = 0; j < b.cols(); ++j) acc += g(i, j) * b(p, j);
            (*ga)(i, p) += acc;
          }
        }
      }
      if (gb) {
        for (Index i = 0; i < a.rows(); ++i) {
          for (Index p = 0; p < a.cols(); ++p) {
            const double av = a(i, p);
            for (Index j = 0; j < b.cols(); ++j) (*gb)(p, j) += av * g(i, j);
          }
        }
      }
      break;
    }
    case Op::kMatMulNT: {
      const Tensor& b = *bp;
      // y = a b^T: ga += g b ; gb += g^T a
      if (ga) {
        for (Index i = 0; i < a.rows(); ++i) {
          for (Index j = 0; j < b.rows(); ++j) {
            const double gv = g(i, j);
            for (Index p = 0; p < a.cols(); ++p) (*ga)(i, p) += gv * b(j, p);
          }
        }
      }
      if (gb) {
        for (Index i = 0; i < a.rows(); ++i) {
          for (Index j = 0; j < b.rows(); ++j) {
            const double gv = g(i, j);
            for (Index p = 0; p < a.cols(); ++p) (*gb)(j, p) += gv * a(i, p);
          }
        }
      }
      break;
    }
    case Op::kTanh:
      unary([](double, double t) { return 1.0 - t * t; });
      break;
    case Op::kRelu:
      unary([](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
      break;
    case Op::kSoftplus:
      unary([](double x, double) { return stable_sigmoid(x); });
      break;
    case Op::kSigmoid:
      unary([](double, double s) { return s * (1.0 - s); });
      break;
    case Op::kExp:
      unary([](double, double e) { return e; });
      break;
    case Op::kLog:
      unary([](double x, double) { return 1.0 / x; });
      break;
    case Op::kSin:
      unary([](double x, double) { return std::cos(x); });
      break;
    case Op::kSquare:
      unary([](double x, double) { return 2.0 * x; });
      break;
    case Op::kSum:
      if (ga) {
        const double gv = g[0];
        for (Index i = 0; i < a.size(); ++i) (*ga)[i] += gv;
      }
      break;
    case Op::kSumRows:
      if (ga) {
        for (Index i = 0; i < a.rows(); ++i) {
          for (Index j = 0; j < a.cols(); ++j) (*ga)(i, j) += g[i];
        }
      }
      break;
    case Op::kSumCols:
      if (ga) {
        for (Index i = 0; i < a.rows(); ++i) {
          for (Index j = 0; j < a.cols(); ++j) (*ga)(i, j) += g[j];
        }
      }
      break;
    case Op::kNormRows:
      if (ga) {
        for (Index i = 0; i < a.rows(); ++i) {
          if (y[i] == 0.0) continue;
          const double s = g[i] / y[i];
          for (Index j = 0; j < a.cols(); ++j) (*ga)(i, j) += s * a(i, j);
        }
      }
      break;
    case Op::kLogAddExp:
      binary([](double a_, double, double out) { return std::exp(a_ - out); },
             [](double, double b, double out) { return std::exp(b - out); });
      break;
    case Op::kLogSumExpRows:
      if (ga) {
        for (Index i = 0; i < a.rows(); ++i) {
          for (Index j = 0; j < a.cols(); ++j) (*ga)(i, j) += g[i] * std::exp(a(i, j) - y[i]);
        }
      }
      break;
    case Op::kSliceCols:
      if (ga) {
        for (Index i = 0; i < g.rows(); ++i) {
          for (Index j = 0; j < g.cols(); ++j) (*ga)(i, node.i0 + j) += g(i, j);
        }
      }
      break;
    case Op::kConcatCols: {
      const Index ca = a.cols();
      for (Index i = 0; i < g.rows(); ++i) {
        for (Index j = 0; j < g.cols(); ++j) {
          if (j < ca) {
            if (ga) (*ga)(i, j) += g(i, j);
          } else if (gb) {
            (*gb)(i, j - ca) += g(i, j);
          }
        }
      }
      break;
    }
  }
}

namespace {

Tape& same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw ContractError("operands live on different tapes");
  return a.tape();
}

Var unary_op(Op op, Var a, Tensor value, double k = 0.0, Index i0 = 0, Index i1 = 0) {
  return a.tape().record(op, a, Var(), k, i0, i1, std::move(value));
}

}  // namespace

Var operator+(Var a, Var b) {
  return same_tape(a, b).record(Op::kAdd, a, b, 0, 0, 0,
                                binary_forward(a.value(), b.value(), "add", [](double x, double y) { return x + y; }));
}

Var operator-(Var a, Var b) {
  return same_tape(a, b).record(Op::kSub, a, b, 0, 0, 0,
                                binary_forward(a.value(), b.value(), "sub", [](double x, double y) { return x - y; }));
}

Var operator*(Var a, Var b) {
  return same_tape(a, b).record(Op::kMul, a, b, 0, 0, 0,
                                binary_forward(a.value(), b.value(), "mul", [](double x, double y) { return x * y; }));
}

Var operator/(Var a, Var b) {
  return same_tape(a, b).record(Op::kDiv, a, b, 0, 0, 0,
                                binary_forward(a.value(), b.value(), "div", [](double x, double y) { return x / y; }));
}

Var operator*(double k, Var a) {
  return unary_op(Op::kScale, a, unary_forward(a.value(), [k](double x) { return k * x; }), k);
}
Var operator*(Var a, double k) { return k * a; }
Var operator-(Var a) { return -1.0 * a; }

Var operator+(Var a, double k) {
  return unary_op(Op::kAddScalar, a, unary_forward(a.value(), [k](double x) { return x + k; }), k);
}
Var operator+(double k, Var a) { return a + k; }
Var operator-(Var a, double k) { return a + (-k); }
Var operator-(double k, Var a) { return (-a) + k; }

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw ContractError("matmul: inner dimensions " + std::to_string(av.cols()) + " and " + std::to_string(bv.rows()));
  }
  Tensor out(av.rows(), bv.cols());
  matmul_into(av, bv, out);
  return t.record(Op::kMatMul, a, b, 0, 0, 0, std::move(out));
}

Var matmul_nt(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.cols()) throw ContractError("matmul_nt: inner dimension mismatch");
  Tensor out(av.rows(), bv.rows());
  for (Index i = 0; i < av.rows(); ++i) {
    for (Index j = 0; j < bv.rows(); ++j) {
      double acc = 0.0;
      for (Index p = 0; p < av.cols(); ++p) acc += av(i, p) * bv(j, p);
      out(i, j) = acc;
    }
  }
  return t.record(Op::kMatMulNT, a, b, 0, 0, 0, std::move(out));
}

Var tanh(Var a) { return unary_op(Op::kTanh, a, unary_forward(a.value(), [](double x) { return std::tanh(x); })); }
Var relu(Var a) { return unary_op(Op::kRelu, a, unary_forward(a.value(), [](double x) { return x > 0.0 ? x : 0.0; })); }
Var softplus(Var a) { return unary_op(Op::kSoftplus, a, unary_forward(a.value(), stable_softplus)); }
Var sigmoid(Var a) { return unary_op(Op::kSigmoid, a, unary_forward(a.value(), stable_sigmoid)); }
Var exp(Var a) { return unary_op(Op::kExp, a, unary_forward(a.value(), [](double x) { return std::exp(x); })); }
Var log(Var a) { return unary_op(Op::kLog, a, unary_forward(a.value(), [](double x) { return std::log(x); })); }
Var sin(Var a) { return unary_op(Op::kSin, a, unary_forward(a.value(), [](double x) { return std::sin(x); })); }
Var square(Var a) { return unary_op(Op::kSquare, a, unary_forward(a.value(), [](double x) { return x * x; })); }

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return unary_op(Op::kSum, a, Tensor::scalar(s));
}

Var mean(Var a) {
  const Index n = a.value().size();
  if (n == 0) throw ContractError("mean: empty tensor");
  return sum(a) * (1.0 / static_cast<double>(n));
}

Var sum_rows(Var a) {
  const Tensor& v = a.value();
  Tensor out(v.rows(), 1);
  for (Index i = 0; i < v.rows(); ++i) {
    double s = 0.0;
    for (Index j = 0; j < v.cols(); ++j) s += v(i, j);
    out[i] = s;
  }
  return unary_op(Op::kSumRows, a, std::move(out));
}

Var sum_cols(Var a) {
  const Tensor& v = a.value();
  Tensor out(1, v.cols());
  for (Index i = 0; i < v.rows(); ++i) {
    for (Index j = 0; j < v.cols(); ++j) out[j] += v(i, j);
  }
  return unary_op(Op::kSumCols, a, std::move(out));
}

Var norm_rows(Var a) {
  const Tensor& v = a.value();
  Tensor out(v.rows(), 1);
  for (Index i = 0; i < v.rows(); ++i) {
    double s = 0.0;
    for (Index j = 0; j < v.cols(); ++j) s += v(i, j) * v(i, j);
    out[i] = std::sqrt(s);
  }
  return unary_op(Op::kNormRows, a, std::move(out));
}

Var logaddexp(Var a, Var b) {
  return same_tape(a, b).record(Op::kLogAddExp, a, b, 0, 0, 0,
                                binary_forward(a.value(), b.value(), "logaddexp", logaddexp_scalar));
}

Var log_sum_exp_rows(Var a) {
  const Tensor& v = a.value();
  if (v.cols() == 0) throw ContractError("log_sum_exp_rows: no columns");
  Tensor out(v.rows(), 1);
  for (Index i = 0; i < v.rows(); ++i) {
    double m = -INFINITY;
    for (Index j = 0; j < v.cols(); ++j) m = std::max(m, v(i, j));
    if (m == -INFINITY) {
      out[i] = -INFINITY;
      continue;
    }
    double s = 0.0;
    for (Index j = 0; j < v.cols(); ++j) s += std::exp(v(i, j) - m);
    out[i] = m + std::log(s);
  }
  return unary_op(Op::kLogSumExpRows, a, std::move(out));
}

Var slice_cols(Var a, Index begin, Index count) {
  const Tensor& v = a.value();
  if (begin < 0 || count < 0 || begin + count > v.cols()) throw ContractError("slice_cols: out of range");
  Tensor out(v.rows(), count);
  for (Index i = 0; i < v.rows(); ++i) {
    for (Index j = 0; j < count; ++j) out(i, j) = v(i, begin + j);
  }
  return unary_op(Op::kSliceCols, a, std::move(out), 0.0, begin, count);
}

Var concat_cols(Var a, Var b) {
  Tape& t = same_tape(a, b);
  return t.record(Op::kConcatCols, a, b, 0, 0, 0, hstack(a.value(), b.value()));
}

Var relu_mask(Var a) {
  return a.tape().constant(unary_forward(a.value(), [](double x) { return x > 0.0 ? 1.0 : 0.0; }));
}

}  // namespace ctflow

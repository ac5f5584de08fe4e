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


#include <cmath>
#include <set>

#include "doctest.h"
#include "helpers.hpp"

#include "ctflow/autodiff.hpp"
#include "ctflow/errors.hpp"
#include "ctflow/function.hpp"
#include "ctflow/linalg.hpp"
#include "ctflow/optim.hpp"
#include "ctflow/parallel.hpp"
#include "ctflow/param_map.hpp"
#include "ctflow/random.hpp"
#include "ctflow/targets.hpp"

using namespace ctflow;
using ctflow::testing::golden;
using ctflow::testing::max_abs_diff;
using ctflow::testing::tensor_from_json;

namespace {

// f(z) = |z|^2 / 2, no parameters.
DifferentiableFunction half_square(Index dim) {
  return DifferentiableFunction("half_square", {}, dim, 1,
                                [](std::span<const Var>, Var x) { return 0.5 * sum_rows(square(x)); });
}

DifferentiableFunction constant_fn(Index dim) {
  return DifferentiableFunction("constant", {}, dim, 1,
                                [](std::span<const Var>, Var x) { return 0.0 * sum_rows(x) + 4.0; });
}

// Every tape primitive in one expression; a 1 x 3 input gives a scalar.
DifferentiableFunction primitive_soup() {
  std::vector<ParamSpec> sig = {{"w", {3, 2}, Init::kNormal, 1.0}, {"b", {2}, Init::kNormal, 1.0}};
  return DifferentiableFunction("soup", sig, 3, 1, [](std::span<const Var> p, Var x) {
    Var a = matmul(x, p[0]) + p[1];
    Var t = tanh(a) * sigmoid(a) + softplus(a) - relu(a) * 0.5 + sin(a) / (2.0 + exp(a * 0.1));
    Var l = log(1.0 + square(a));
    Var n = norm_rows(a + 3.0);
    Var m = logaddexp(slice_cols(t, 0, 1), slice_cols(l, 1, 1));
    Var s = log_sum_exp_rows(concat_cols(t, l));
    Var u = matmul_nt(x, x);
    return sum_rows(t) + n + m + s - 0.1 * sum_rows(u) + sum(sum_cols(l)) * 0.01 + mean(a) - (1.0 - a.tape().constant(Tensor(1, 1, 0.5))) * 0.2;
  });
}

}  // namespace

TEST_CASE("tensor basics") {
  Tensor t = Tensor::from_rows({{1, 2}, {3, 4}, {5, 6}});
  CHECK(t.rows() == 3);
  CHECK(t.cols() == 2);
  CHECK(t(2, 1) == 6);
  CHECK(t.rows_slice(1, 2) == Tensor::from_rows({{3, 4}, {5, 6}}));
  CHECK(t.col(0) == Tensor::from_rows({{1}, {3}, {5}}));
  CHECK(Tensor::scalar(2.5).item() == 2.5);
  CHECK_THROWS_AS(t.item(), ContractError);
  t(1, 0) = std::nan("");
  CHECK(t.first_non_finite() == 2);
  CHECK_FALSE(t.all_finite());
  CHECK_FALSE(bit_identical(Tensor::scalar(0.0), Tensor::scalar(-0.0)));
  const Tensor blocks[] = {Tensor::row({1, 2}), Tensor::row({3, 4})};
  CHECK(vstack(blocks) == Tensor::from_rows({{1, 2}, {3, 4}}));
  CHECK(hstack(Tensor::row({1}), Tensor::row({2, 3})) == Tensor::row({1, 2, 3}));
}

TEST_CASE("evaluate: identity and hand-computed linear layer") {
  const DifferentiableFunction id = make_identity(2);
  CHECK(evaluate(id, {}, Tensor::row({1.5, -2.0})) == Tensor::row({1.5, -2.0}));

  const DifferentiableFunction lin = make_linear(2, 2, "lin");
  ParamMap p;
  p.add("lin.weight", {2, 2}, Tensor::from_rows({{2, 0}, {0, 3}}));
  p.add("lin.bias", {2}, Tensor::row({0, 0}));
  CHECK(evaluate(lin, p, Tensor::row({1, 1})) == Tensor::row({2, 3}));
  const Tensor y1 = evaluate(lin, p, Tensor::row({0.3, -0.1}));
  const Tensor y2 = evaluate(lin, p, Tensor::row({0.3, -0.1}));
  CHECK(bit_identical(y1, y2));
}

TEST_CASE("evaluate: signature and shape errors") {
  const DifferentiableFunction lin = make_linear(2, 2, "lin");
  ParamMap wrong;
  wrong.add("lin.weight", {2, 3}, std::vector<double>(6, 0.0));
  wrong.add("lin.bias", {2}, std::vector<double>(2, 0.0));
  CHECK_THROWS_AS(evaluate(lin, wrong, Tensor::row({1, 1})), SignatureError);
  ParamMap missing;
  missing.add("lin.weight", {2, 2}, std::vector<double>(4, 0.0));
  CHECK_THROWS_AS(evaluate(lin, missing, Tensor::row({1, 1})), SignatureError);
  ParamMap ok;
  ok.add("lin.weight", {2, 2}, std::vector<double>(4, 0.0));
  ok.add("lin.bias", {2}, std::vector<double>(2, 0.0));
  CHECK_THROWS_AS(evaluate(lin, ok, Tensor::row({1, 1, 1})), SignatureError);
}

TEST_CASE("golden 2-layer tanh MLP at (0.3, 0.7)") {
  const auto all = golden();
  const auto& g = all["mlp_2layer"];
  const DifferentiableFunction mlp = make_mlp({2, 3, 1}, Activation::kTanh, "m");
  const ParamMap p = ctflow::testing::mlp_params_from_json(g["params"], "m");
  const double y = evaluate(mlp, p, Tensor::row({0.3, 0.7})).item();
  CHECK(y == doctest::Approx(g["output"].get<double>()).epsilon(1e-14));
}

TEST_CASE("golden MLPs: outputs, parameter and input gradients") {
  const auto all = golden();
  for (const auto& g : all["mlp"]) {
    const std::string act = g["activation"];
    CAPTURE(act);
    const Activation a = act == "tanh" ? Activation::kTanh : act == "relu" ? Activation::kRelu : Activation::kSoftplus;
    const DifferentiableFunction mlp = make_mlp(g["sizes"].get<std::vector<Index>>(), a, "m");
    const ParamMap p = ctflow::testing::mlp_params_from_json(g["params"], "m");
    const Tensor x = tensor_from_json(g["input"]);
    CHECK(max_abs_diff(evaluate(mlp, p, x), tensor_from_json(g["output"])) < 1e-12);

    // Gradient of the output summed over the batch.
    Tape tape;
    const std::vector<Var> bound = mlp.bind(tape, p, true);
    tape.backward(sum(mlp.apply(bound, tape.constant(x))));
    const ParamMap want = ctflow::testing::mlp_params_from_json(g["param_grad_of_sum"], "m");
    REQUIRE(want.size() == bound.size());
    for (std::size_t e = 0; e < want.size(); ++e) {
      const Tensor got = tape.grad(bound[e]);
      const auto& exp = want.entries()[e].values;
      for (std::size_t i = 0; i < exp.size(); ++i) {
        CHECK(got[static_cast<Index>(i)] == doctest::Approx(exp[i]).epsilon(1e-11));
      }
    }
    CHECK(max_abs_diff(input_gradient_rows(mlp, p, x), tensor_from_json(g["input_grad"])) < 1e-12);
  }
}

TEST_CASE("gradient: analytic examples") {
  const Gradients g = gradient(half_square(2), {}, Tensor::row({3, -4}));
  CHECK(g.value == 12.5);
  CHECK(g.input == Tensor::row({3, -4}));
  CHECK(g.params.empty());

  const Gradients c = gradient(constant_fn(3), {}, Tensor::row({1, 2, 3}));
  CHECK(c.input == Tensor::row({0, 0, 0}));

  CHECK_THROWS_AS(gradient(make_identity(2), {}, Tensor::row({1, 2})), ContractError);
}

TEST_CASE("toy potential gradients agree with central differences") {
  const EnergyModel ring = make_toy_potential("ring_bimodal");
  CHECK(check_gradient(ring.function(), ring.params(), Tensor::row({0.0, 0.0}), 1e-5) < 1e-5);
  const EnergyModel wells = make_toy_potential("sine_wells");
  RandomStream s = make_stream(5, {stream_tag::kEstimator});
  for (int i = 0; i < 10; ++i) {
    const Tensor z = draw_gaussian(s, 1, 2);
    CHECK(check_gradient(wells.function(), wells.params(), z, 1e-5) < 1e-5);
  }
}

TEST_CASE("check_gradient: polynomial, zero-parameter, errors") {
  CHECK(check_gradient(half_square(3), {}, Tensor::row({0.4, -1.2, 2.0}), 1e-5) < 1e-6);
  CHECK(check_gradient(constant_fn(2), {}, Tensor::row({1.0, 2.0}), 1e-5) == 0.0);
  CHECK_THROWS_AS(check_gradient(half_square(1), {}, Tensor::row({1.0}), 0.0), ContractError);
  const DifferentiableFunction blow("blow", {}, 1, 1, [](std::span<const Var>, Var x) { return log(x); });
  CHECK_THROWS_AS(check_gradient(blow, {}, Tensor::row({-1.0}), 1e-5), NumericError);
}

TEST_CASE("every primitive passes the gradient check at 10 random points") {
  const DifferentiableFunction soup = primitive_soup();
  RandomStream init = make_stream(3, {stream_tag::kParams});
  RandomStream s = make_stream(3, {stream_tag::kEstimator});
  const ParamMap p = soup.init_params(init);
  for (int i = 0; i < 10; ++i) {
    // One row, so the soup is already a scalar.
    CHECK(check_gradient(soup, p, draw_gaussian(s, 1, 3), 1e-6) < 1e-5);
  }
}

TEST_CASE("broadcasting: outer sum and its gradients") {
  Tape tape;
  Var a = tape.variable(Tensor::from_rows({{1}, {2}, {3}}));  // 3 x 1
  Var b = tape.variable(Tensor::row({10, 20}));              // 1 x 2
  Var c = a * b + a;
  CHECK(c.value() == Tensor::from_rows({{11, 21}, {22, 42}, {33, 63}}));
  tape.backward(sum(c));
  CHECK(tape.grad(a) == Tensor::from_rows({{32}, {32}, {32}}));
  CHECK(tape.grad(b) == Tensor::row({6, 6}));
}

TEST_CASE("philox known answers") {
  using Block = std::array<std::uint32_t, 4>;
  CHECK(philox4x32_10({0, 0, 0, 0}, {0, 0}) == Block{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
  CHECK(philox4x32_10({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu}) ==
        Block{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
  CHECK(philox4x32_10({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u}) ==
        Block{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("draw_gaussian: empty, deterministic, counter advance, moments") {
  RandomStream e(7, 0);
  CHECK(draw_gaussian(e, 0).empty());
  CHECK(e.counter() == 0);

  RandomStream a(7, 0), b(7, 0);
  CHECK(draw_gaussian(a, 4) == draw_gaussian(b, 4));
  CHECK(a.counter() == 2);
  draw_gaussian(a, 3);
  CHECK(a.counter() == 4);

  RandomStream big(11, derive_stream_id({stream_tag::kEstimator}));
  const std::vector<double> z = draw_gaussian(big, 100000);
  CHECK(std::abs(ctflow::testing::sample_mean(z)) < 0.02);
  CHECK(std::abs(ctflow::testing::sample_var(z) - 1.0) < 0.03);

  RandomStream u(12, 0);
  const std::vector<double> v = draw_uniform(u, 100000);
  for (double x : v) REQUIRE((x > 0.0 && x < 1.0));
  CHECK(std::abs(ctflow::testing::sample_mean(v) - 0.5) < 0.01);
}

TEST_CASE("streams: resuming at a counter, distinct ids, derived ids") {
  RandomStream a(9, 4);
  draw_gaussian(a, 6);
  RandomStream resumed(9, 4, a.counter());
  RandomStream cont = a;
  CHECK(draw_gaussian(resumed, 5) == draw_gaussian(cont, 5));

  RandomStream x(9, 1), y(9, 2);
  CHECK(x.next_block() != y.next_block());

  std::set<std::uint64_t> ids;
  for (std::uint64_t i = 0; i < 1000; ++i) ids.insert(derive_stream_id({stream_tag::kFlow, 3, i}));
  ids.insert(derive_stream_id({stream_tag::kFlow, 3}));
  ids.insert(derive_stream_id({stream_tag::kFlow}));
  CHECK(ids.size() == 1002);
  CHECK(derive_stream_id({1, 2}) != derive_stream_id({2, 1}));
}

TEST_CASE("ParamMap: counts, duplicates, binary and text round trips") {
  RandomStream init = make_stream(1, {stream_tag::kParams});
  const ParamMap p = make_mlp({3, 4, 2}, Activation::kTanh, "m").init_params(init);
  CHECK(p.total_count() == 3 * 4 + 4 + 4 * 2 + 2);
  ParamMap q = p;
  CHECK_THROWS_AS(q.add("m.l0.weight", {1}, std::vector<double>{1.0}), ContractError);
  CHECK_THROWS_AS(q.add("x", {2, 2}, std::vector<double>{1.0}), ContractError);

  ParamMap odd;
  odd.add("s", {}, std::vector<double>{-0.0});
  odd.add("v", {3}, std::vector<double>{1e-310, -1e300, 0.1});
  for (const ParamMap& m : {p, odd}) {
    const ParamMap b = deserialize_binary(serialize_binary(m));
    const ParamMap t = deserialize_text(serialize_text(m));
    CHECK(b == m);
    CHECK(t == m);
    CHECK(std::signbit(deserialize_binary(serialize_binary(odd)).at("s").values[0]));
  }
  CHECK_THROWS_AS(deserialize_binary("garbage"), ConfigError);
  CHECK_THROWS_AS(deserialize_text("v 2\n1.0\n"), ConfigError);

  const std::filesystem::path file = std::filesystem::path(CTFLOW_TEST_WORK_DIR) / "params.bin";
  std::filesystem::create_directories(file.parent_path());
  save_params(p, file);
  CHECK(load_params(file) == p);
}

TEST_CASE("linalg against hand results") {
  const Tensor m = Tensor::from_rows({{4, 2}, {2, 3}});
  const Tensor l = linalg::cholesky(m);
  CHECK(l(0, 0) == doctest::Approx(2.0));
  CHECK(l(1, 0) == doctest::Approx(1.0));
  CHECK(l(1, 1) == doctest::Approx(std::sqrt(2.0)));
  CHECK(l(0, 1) == 0.0);
  CHECK(linalg::determinant(m) == doctest::Approx(8.0));
  CHECK(linalg::log_abs_det(m) == doctest::Approx(std::log(8.0)));
  const Tensor inv = linalg::inverse(m);
  CHECK(max_abs_diff(linalg::matmul(m, inv), linalg::identity(2)) < 1e-14);
  const Tensor r = linalg::sqrtm_psd(m);
  CHECK(max_abs_diff(linalg::matmul(r, r), m) < 1e-12);
  CHECK(linalg::trace(m) == 7.0);
  CHECK(linalg::transpose(Tensor::from_rows({{1, 2, 3}})) == Tensor::from_rows({{1}, {2}, {3}}));
  CHECK_THROWS_AS(linalg::cholesky(Tensor::from_rows({{1, 2}, {2, 1}})), NumericError);
  CHECK(linalg::is_spd(m));
  CHECK_FALSE(linalg::is_symmetric(Tensor::from_rows({{1, 2}, {0, 1}})));
}

TEST_CASE("optimizers: SGD and the first Adam step") {
  ParamMap p;
  p.add("w", {2}, std::vector<double>{1.0, -2.0});
  ParamMap g = p.zeros_like();
  g.at("w").values = {0.5, -4.0};
  ParamMap sgd = p;
  Optimizer s(OptimizerKind::kSgd, 0.1);
  s.step(sgd, g);
  CHECK(sgd.at("w").values[0] == doctest::Approx(0.95));
  CHECK(sgd.at("w").values[1] == doctest::Approx(-1.6));

  ParamMap adam = p;
  Optimizer a(OptimizerKind::kAdam, 0.01);
  a.step(adam, g);
  // First Adam step moves each coordinate by lr * sign(g) (up to epsilon).
  CHECK(adam.at("w").values[0] == doctest::Approx(0.99).epsilon(1e-7));
  CHECK(adam.at("w").values[1] == doctest::Approx(-1.99).epsilon(1e-7));
  CHECK(a.steps() == 1);
}

TEST_CASE("linear decay schedule") {
  CHECK(linear_decay_step(0, 100, 1e-4) == doctest::Approx(1e-4 * 100.0 / 50.0));
  CHECK(linear_decay_step(50, 100, 1e-4) == doctest::Approx(1e-4));
  CHECK(linear_decay_step(100, 100, 1e-4) == 0.0);
  CHECK_THROWS_AS(linear_decay_step(0, 50, 1e-4), ContractError);
}

TEST_CASE("parallel_for_rows covers each row once at any worker count") {
  for (int workers : {1, 2, 4, 7}) {
    set_worker_count(workers);
    std::vector<int> hits(1000, 0);
    parallel_for_rows(1000, [&](Index b, Index e) {
      for (Index i = b; i < e; ++i) hits[static_cast<std::size_t>(i)] += 1;
    });
    for (int h : hits) REQUIRE(h == 1);
  }
  set_worker_count(3);
  CHECK_THROWS_AS(parallel_for_rows(100, [](Index b, Index) {
                    if (b >= 0) throw NumericError("boom");
                  }),
                  NumericError);
  set_worker_count(1);
}

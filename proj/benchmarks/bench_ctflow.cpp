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


#include <benchmark/benchmark.h>

#include "ctflow/flow.hpp"
#include "ctflow/function.hpp"
#include "ctflow/metrics.hpp"
#include "ctflow/random.hpp"
#include "ctflow/targets.hpp"

namespace {

using namespace ctflow;

void BM_LangevinStep(benchmark::State& state) {
  const Index n = state.range(0);
  const EnergyModel target = make_toy_potential("ring_bimodal");
  RandomStream init(1, 1);
  const ParticleCloud cloud(draw_gaussian(init, n, 2));
  auto streams = make_particle_streams(1, 0, n);
  for (auto _ : state) {
    benchmark::DoNotOptimize(langevin_step(cloud, target, 0.01, streams));
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_LangevinStep)->Arg(128)->Arg(1024)->Arg(8192);

void BM_ExactTransport(benchmark::State& state) {
  const Index n = state.range(0);
  RandomStream s(2, 2);
  const Tensor a = draw_gaussian(s, n, 2);
  const Tensor b = draw_gaussian(s, n, 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(exact_transport(a, b, 2));
  }
}
BENCHMARK(BM_ExactTransport)->Arg(32)->Arg(128)->Arg(512);

void BM_MlpGradient(benchmark::State& state) {
  const Index n = state.range(0);
  const DifferentiableFunction mlp = make_mlp({2, 32, 32, 1}, Activation::kTanh, "mlp");
  RandomStream init(3, 3);
  const ParamMap params = mlp.init_params(init);
  const Tensor x = draw_gaussian(init, n, 2);
  for (auto _ : state) {
    Tape tape;
    const auto p = mlp.bind(tape, params, true);
    tape.backward(sum(mlp.apply(p, tape.constant(x))));
    benchmark::DoNotOptimize(tape.grad(p[0]));
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_MlpGradient)->Arg(1)->Arg(128)->Arg(1024);

void BM_GaussianDraws(benchmark::State& state) {
  RandomStream s(4, 4);
  for (auto _ : state) {
    benchmark::DoNotOptimize(draw_gaussian(s, 4096));
  }
  state.SetItemsProcessed(state.iterations() * 4096);
}
BENCHMARK(BM_GaussianDraws);

}  // namespace

BENCHMARK_MAIN();

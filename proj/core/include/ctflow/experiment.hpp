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
#include <filesystem>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "ctflow/amortize.hpp"
#include "ctflow/flow.hpp"

namespace ctflow {

inline constexpr int kSpecVersion = 1;

enum class ExperimentKind {
  kFlowOracle,
  kMseRate,
  kW2Decay,
  kProp1Collapse,
  kMacVaeSynthetic,
  kMacGanMixture,
  kHSweep,
  kBoundCheck,
};

ExperimentKind parse_experiment_kind(const std::string& name);
std::string to_string(ExperimentKind kind);
const std::vector<std::string>& experiment_kind_names();

// N particles from N(initial_mean, initial_var) moved by the flow toward a 1-D
// Gaussian target; moments recorded every record_every steps.
struct FlowOracleOptions {
  Index particles = 10000;
  double initial_mean = 3.0;
  double initial_var = 4.0;
  Index record_every = 100;
};

// mse_estimate along h = rate_constant * K^(-1/3) for each K in steps.
struct MseRateOptions {
  std::vector<Index> steps = {100, 400, 1600, 6400};
  double rate_constant = 1.0;
  Index repetitions = 200;
  std::string psi = "identity";
  double initial_mean = 0.0;
  double initial_var = 0.0;
};

// W2 to the 1-D target along the flow, analytic and from replicated clouds.
// The flow runs with flow.step_size up to the last time.
struct W2DecayOptions {
  std::vector<double> times = {0.0, 0.5, 1.0, 2.0, 4.0};
  Index particles = 1000;
  Index replicas = 20;
  double initial_mean = 3.0;
  double initial_var = 1.0;
};

// Unconditional MLP generator distilled toward the flow by each method; the
// exact_ot generator is compared with long Langevin chains from N(0, I).
struct Prop1Options {
  std::vector<std::string> methods = {"euclidean", "exact_ot"};
  Index rounds = 400;
  std::vector<Index> hidden = {32, 32};
  double init_spread = 0.5;               // scale of the last generator layer
  std::vector<double> init_bias = {0.0, 0.5};
  Index reference_factor = 10;            // chain length = factor * rounds * substeps
  Index reference_particles = 512;
  Index eval_samples = 512;
};

// Four one-hot observations with a categorical MLP decoder, trained once per
// method; then an affine inference generator on a conjugate linear-Gaussian
// model with the decoder fixed.
struct MacVaeOptions {
  std::vector<std::string> methods = {"euclidean", "exact_ot"};
  Index epochs = 300;
  Index latent_dim = 2;
  std::vector<Index> decoder_hidden = {16};
  std::vector<Index> hidden = {32, 32};
  double theta_learning_rate = 0.01;
  Index eval_samples = 256;
  Index conjugate_epochs = 800;
  double conjugate_step_size = 0.05;
  Index conjugate_steps = 20;
  double conjugate_learning_rate = 0.003;
  Index conjugate_batch = 128;
  Index conjugate_samples = 4000;
};

// Energy MLP minus confinement * |x|^2 fitted to draws from the target.
struct MacGanOptions {
  Index epochs = 1500;
  double theta_learning_rate = 3e-4;
  bool decay_schedule = true;
  std::vector<Index> energy_hidden = {32, 32};
  double confinement = 0.25;
  std::string regularizer = "weight_clip";
  double clip = 1.0;
  double penalty = 10.0;
  std::string generator = "planar";
  Index planar_layers = 8;
  std::vector<Index> hidden = {32, 32};
  Index data_size = 512;
  Index heldout_size = 512;
  Index data_batch = 128;
  Index bound_samples = 256;
  Index diag_every = 50;
  Index eval_samples = 512;
};

// Clouds from N(0, I) run for total time T at every h; W1 to exact target
// draws, averaged over seeds. On a 1-D standard-normal target the row also
// carries mse_estimate with the same (h, K).
struct HSweepOptions {
  std::vector<double> grid = {6e-4, 2.4e-3, 3.6e-3, 6e-3, 1e-2, 1.5e-2};
  double total_time = 10.0;
  Index particles = 512;
  Index repetitions = 200;  // mse rows only
};

// Jensen bound on the target as energy, for a generator matching the target
// and for one whose covariance is mismatch_var * I.
struct BoundCheckOptions {
  Index samples = 4000;
  Index data_size = 256;
  double mismatch_var = 4.0;
};

using ExperimentOptions = std::variant<FlowOracleOptions, MseRateOptions, W2DecayOptions, Prop1Options,
                                       MacVaeOptions, MacGanOptions, HSweepOptions, BoundCheckOptions>;

// Defaults for a kind.
ExperimentOptions default_options(ExperimentKind kind);

struct ExperimentSpec {
  int version = kSpecVersion;
  ExperimentKind kind = ExperimentKind::kFlowOracle;
  std::string target;
  FlowConfig flow;
  DistillConfig distill;
  std::vector<std::uint64_t> seeds;
  std::filesystem::path output;
  ExperimentOptions options;

  // ValidationError listing every offending field.
  void validate() const;
};

// JSON document:
//   {"version": 1, "kind": ..., "target": ..., "flow": {...}, "distill": {...},
//    "seeds": [...], "output": ..., "options": {...}}
// Missing fields take defaults; unknown fields, wrong types and failed checks
// raise ValidationError naming each field.
ExperimentSpec parse_spec(const std::string& text);
ExperimentSpec load_spec(const std::filesystem::path& path);
// Sorted keys, every field explicit; parse_spec(canonical_json(s)) == s.
std::string canonical_json(const ExperimentSpec& spec);

struct ManifestFile {
  std::string path;  // relative to the output directory
  std::string sha256;
  std::uintmax_t bytes = 0;
};

struct Manifest {
  std::filesystem::path directory;
  ExperimentKind kind = ExperimentKind::kFlowOracle;
  std::vector<ManifestFile> files;                      // sorted by path
  std::vector<std::pair<std::string, double>> summary;  // sorted by key

  // ContractError when absent.
  double value(const std::string& key) const;
  bool has(const std::string& key) const;
};

// Runs the experiment into spec.output. Files are written to a sibling
// temporary directory that replaces spec.output only on success; manifest.json
// lists every other file with its SHA-256. Output bytes depend only on the
// spec, never on the worker count.
Manifest run(const ExperimentSpec& spec);

// The h_sweep experiment over an explicit grid.
Manifest h_sweep(ExperimentSpec spec, const std::vector<double>& grid);

Manifest read_manifest(const std::filesystem::path& path);

// Long-form rows (series, x, y, seed) gathered from the manifest's CSV files.
std::string emit_plotdata(const Manifest& manifest);

struct SelftestResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

// Fast property checks over every module.
std::vector<SelftestResult> selftest();

}  // namespace ctflow

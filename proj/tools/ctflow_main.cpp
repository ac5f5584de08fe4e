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


#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "ctflow/errors.hpp"
#include "ctflow/experiment.hpp"
#include "ctflow/io.hpp"
#include "ctflow/parallel.hpp"

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitOther = 1;

void print_manifest(const ctflow::Manifest& m) {
  std::cout << "wrote " << m.directory.string() << " (" << m.files.size() << " files)\n";
  for (const auto& [key, value] : m.summary) {
    if (key.rfind("seed", 0) == 0) continue;
    std::cout << "  " << key << " = " << ctflow::format_double(value) << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continuous-time flow experiments"};
  app.require_subcommand(1);
  app.fallthrough();
  int workers = 1;
  app.add_option("-j,--workers", workers, "worker threads (results do not depend on this)")
      ->check(CLI::PositiveNumber);

  std::string spec_path;
  std::string output;
  auto* run = app.add_subcommand("run", "run an experiment spec");
  run->add_option("spec", spec_path, "spec JSON file")->required();
  run->add_option("-o,--output", output, "override the spec's output directory");

  std::string sweep_spec;
  std::vector<double> grid;
  auto* sweep = app.add_subcommand("sweep-h", "run an h_sweep spec over a step-size grid");
  sweep->add_option("spec", sweep_spec, "h_sweep spec JSON file")->required();
  sweep->add_option("--grid", grid, "step sizes (default: the spec's grid)")->delimiter(',');
  sweep->add_option("-o,--output", output, "override the spec's output directory");

  std::string manifest_path;
  std::string plot_out;
  auto* plot = app.add_subcommand("plotdata", "long-form plot data from a run's manifest");
  plot->add_option("manifest", manifest_path, "manifest.json or its directory")->required();
  plot->add_option("-o,--output", plot_out, "output file (default: plotdata.csv beside the manifest)");

  std::string canon_path;
  auto* canon = app.add_subcommand("canonical", "validate a spec and print its canonical form");
  canon->add_option("spec", canon_path, "spec JSON file")->required();

  auto* self = app.add_subcommand("selftest", "run the built-in property checks");

  CLI11_PARSE(app, argc, argv);

  try {
    ctflow::set_worker_count(workers);
    if (*run || *sweep) {
      ctflow::ExperimentSpec spec = ctflow::load_spec(*run ? spec_path : sweep_spec);
      if (!output.empty()) spec.output = output;
      const ctflow::Manifest m = *run || grid.empty() ? ctflow::run(spec) : ctflow::h_sweep(spec, grid);
      print_manifest(m);
    } else if (*plot) {
      const ctflow::Manifest m = ctflow::read_manifest(manifest_path);
      const std::filesystem::path dest = plot_out.empty() ? m.directory / "plotdata.csv" : std::filesystem::path(plot_out);
      ctflow::write_file(dest, ctflow::emit_plotdata(m));
      std::cout << "wrote " << dest.string() << "\n";
    } else if (*canon) {
      std::cout << ctflow::canonical_json(ctflow::load_spec(canon_path));
    } else if (*self) {
      int failed = 0;
      for (const auto& r : ctflow::selftest()) {
        std::cout << (r.passed ? "PASS " : "FAIL ") << r.name;
        if (!r.passed) std::cout << ": " << r.detail;
        std::cout << "\n";
        failed += r.passed ? 0 : 1;
      }
      return failed == 0 ? 0 : kExitOther;
    }
  } catch (const ctflow::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ctflow::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitOther;
  }
  return 0;
}

// Copyright 2026 The emalab Authors. All Rights Reserved.
//
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
// =============================================================================
//
// emalab command-line tool.
//
//   emalab train --config run.toml [--out DIR] [--seed N] [--dump-config]
//   emalab compare --config sweep.toml [--out DIR] [--seed N]
//   emalab probe RUN_DIR [--out FILE]
//   emalab grad-check [--instances N]

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "emalab/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Partial-EMA self-supervised learning lab"};
  app.require_subcommand(1);

  std::string config, out;
  std::uint64_t seed = 0;
  bool dump = false;

  auto* train = app.add_subcommand("train", "Run one training experiment");
  train->add_option("--config", config, "Experiment TOML")->required()->check(CLI::ExistingFile);
  train->add_option("--out", out, "Run directory (default: output_dir from the config)");
  auto* train_seed = train->add_option("--seed", seed, "Override train and encoder seeds");
  train->add_flag("--dump-config", dump, "Print the fully materialized config and exit");

  auto* compare = app.add_subcommand("compare", "Run a preset x beta sweep and write summary.csv");
  compare->add_option("--config", config, "Sweep TOML")->required()->check(CLI::ExistingFile);
  compare->add_option("--out", out, "Sweep directory (default: output_dir from the config)");
  auto* compare_seed = compare->add_option("--seed", seed, "Override train and encoder seeds");

  std::string run_dir;
  auto* probe = app.add_subcommand("probe", "Re-evaluate the final snapshot of a run");
  probe->add_option("run_dir", run_dir, "Run directory")->required();
  probe->add_option("--out", out, "Output file (default: RUN_DIR/probe.json)");

  std::size_t instances = 100;
  auto* grad_check = app.add_subcommand("grad-check", "Finite-difference check of every primitive and loss");
  grad_check->add_option("--instances", instances, "Random instances per case")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  auto opt_out = [&]() -> std::optional<std::filesystem::path> {
    if (out.empty()) return std::nullopt;
    return std::filesystem::path(out);
  };

  if (*train) {
    std::optional<std::uint64_t> s;
    if (*train_seed) s = seed;
    if (dump) {
      try {
        emalab::ExperimentConfig cfg = emalab::load_config(config);
        emalab::apply_seed_override(cfg, s);
        emalab::validate(cfg);
        std::cout << emalab::dump_config(cfg);
        return 0;
      } catch (const emalab::Error& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
      }
    }
    return emalab::cmd_train(config, opt_out(), s);
  }
  if (*compare) {
    std::optional<std::uint64_t> s;
    if (*compare_seed) s = seed;
    return emalab::cmd_compare(config, opt_out(), s);
  }
  if (*probe) return emalab::cmd_probe(run_dir, opt_out());
  if (*grad_check) return emalab::cmd_grad_check(instances);
  return 2;
}

// Copyright 2026 The FGAI Authors.
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

// fgai: batch front end for the data, training, attack and evaluation stages.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fgai/harness.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "INI run configuration");
  cmd->add_option("--seed", f.seed, "run a single seed instead of run.seeds");
  cmd->add_option("--out", f.out, "output directory (overrides run.output_dir)");
  cmd->add_option("--set", f.sets, "override a config value, section.key=value")
      ->take_all()
      ->allow_extra_args(false);
}

fgai::RunConfig resolve(const CommonFlags& f) {
  fgai::RunConfig c = f.config.empty() ? fgai::RunConfig{} : fgai::load_config(f.config);
  for (const auto& s : f.sets) fgai::apply_override(c, s);
  if (f.seed) c.seeds = {*f.seed};
  if (!f.out.empty()) c.output_dir = f.out;
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Faithful graph attention: data, training, attack and evaluation stages"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(fgai::kVersion));

  CommonFlags flags;
  std::vector<std::string> run_dirs;
  struct Stage {
    const char* name;
    const char* help;
    void (*fn)(const fgai::RunConfig&);
  };
  const Stage stages[] = {
      {"gen-data", "generate or import the dataset for every seed", fgai::cmd_gen_data},
      {"train", "train the vanilla attention model", fgai::cmd_train},
      {"fgai", "fine-tune the vanilla model with the minimax objective", fgai::cmd_fgai},
      {"attack", "run the node-injection attack against every trained model", fgai::cmd_attack},
      {"eval-stability", "clean and attacked F1, g-TVD and g-JSD", fgai::cmd_eval_stability},
      {"eval-fidelity", "edge-removal fidelity curves and slopes", fgai::cmd_eval_fidelity},
      {"all", "run every stage in order", fgai::cmd_all},
  };
  std::vector<std::pair<CLI::App*, const Stage*>> commands;
  for (const auto& s : stages) {
    auto* cmd = app.add_subcommand(s.name, s.help);
    add_common(cmd, flags);
    commands.emplace_back(cmd, &s);
  }
  auto* report = app.add_subcommand("report", "aggregate reports into a comparison table");
  add_common(report, flags);
  report->add_option("runs", run_dirs, "additional run directories to compare");

  CLI11_PARSE(app, argc, argv);

  try {
    const auto config = resolve(flags);
    if (report->parsed()) {
      std::vector<std::filesystem::path> extra(run_dirs.begin(), run_dirs.end());
      fgai::cmd_report(config, extra);
    }
    for (const auto& [cmd, stage] : commands)
      if (cmd->parsed()) stage->fn(config);
  } catch (const std::exception& e) {
    std::cerr << "fgai: " << e.what() << '\n';
    return fgai::exit_code_for(e);
  }
  return 0;
}

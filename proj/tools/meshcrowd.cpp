// Copyright 2026 The meshcrowd Authors.
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

#include <CLI11.hpp>

#include "meshcrowd/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"meshcrowd: multi-person mesh recovery on synthetic scenes"};
  meshcrowd::cli::Options o;
  std::uint64_t seed = 0;
  app.add_option("command", o.command, "gen | train | eval | gradcheck | export")
      ->required()
      ->check(CLI::IsMember({"gen", "train", "eval", "gradcheck", "export"}));
  app.add_option("--config", o.config, "JSON config file");
  app.add_option("--out", o.out, "output directory or file");
  auto* seed_opt = app.add_option("--seed", seed, "override the config seed");
  app.add_flag("--force", o.force, "overwrite existing outputs");
  app.add_flag("--oracle", o.oracle, "use ground truth as predictions (eval, export)");
  app.add_option("--only", o.only, "gradcheck: run a single named check");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : meshcrowd::cli::kConfig;
  }
  if (*seed_opt) o.seed = seed;
  return meshcrowd::cli::run(o);
}

// Copyright 2026 The dpfl-lab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "commands.h"
#include "config.h"
#include "dpfl/common/error.h"

namespace {

struct Options {
  std::string config;
  std::optional<std::int64_t> seed;
  std::string out = "out";
  std::vector<std::string> sets;
};

void add_common(CLI::App* sub, Options& o) {
  sub->add_option("--config", o.config, "YAML run configuration");
  sub->add_option("--seed", o.seed, "Root seed (overrides the config)");
  sub->add_option("--out", o.out, "Output directory")->capture_default_str();
  sub->add_option("--set", o.sets, "Override one key, as dotted.path=value");
}

dpfl::cli::Config resolve(const Options& o, const std::string& kind) {
  auto c = o.config.empty() ? dpfl::cli::Config() : dpfl::cli::Config::load(o.config);
  if (!kind.empty()) c.set("kind", kind);
  if (o.seed) c.set("seed", std::to_string(*o.seed));
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw dpfl::ValidationError("--set", "expected key=value, got '" + kv + "'");
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentially private federated language model lab"};
  app.require_subcommand(1);
  Options opts;
  std::string chosen;

  for (const auto& kind : dpfl::cli::kinds()) {
    auto* sub = app.add_subcommand(kind, "Run the " + kind + " stage");
    add_common(sub, opts);
    sub->callback([&chosen, kind] { chosen = kind; });
  }
  auto* run = app.add_subcommand("run", "Run the experiment kind named in the config");
  add_common(run, opts);
  run->callback([&chosen] { chosen = "run"; });
  auto* sweep = app.add_subcommand("sweep", "Run every point of the config's sweep grid");
  add_common(sweep, opts);
  sweep->callback([&chosen] { chosen = "sweep"; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    const bool named = chosen != "run" && chosen != "sweep";
    const auto config = resolve(opts, named ? chosen : "");
    if (chosen == "sweep") {
      const auto n = dpfl::cli::sweep(config, opts.out);
      std::cout << "sweep: " << n << " runs, summary in " << opts.out << "/summary.csv\n";
    } else {
      const auto outcome = dpfl::cli::execute(config, opts.out);
      std::cout << config.text("kind") << ": wrote " << opts.out;
      if (outcome.has_accuracy) std::cout << ", dev accuracy " << outcome.dev_accuracy;
      std::cout << "\n";
    }
  } catch (const dpfl::ValidationError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

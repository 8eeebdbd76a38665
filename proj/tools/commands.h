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

#ifndef DPFL_TOOLS_COMMANDS_H_
#define DPFL_TOOLS_COMMANDS_H_

#include <filesystem>
#include <string>
#include <vector>

#include "config.h"

namespace dpfl::cli {

inline const std::vector<std::string>& kinds() {
  static const std::vector<std::string> k = {
      "gen-corpus", "tokenize", "train-teacher", "distill-corpus", "pretrain", "fl-train",
      "pipeline",   "match",    "ppl-export",    "theory-sim",     "eval"};
  return k;
}

// Final dev accuracy where the kind produces one.
struct RunOutcome {
  bool has_accuracy = false;
  double dev_accuracy = 0.0;
};

// Checks every input the kind needs before any work starts.
void validate(const Config& config);

// Writes config.yaml, metrics.csv and the kind's artifacts under `out`.
RunOutcome execute(const Config& config, const std::filesystem::path& out);

// One child run per grid point under out/run-NNN plus out/summary.csv.
std::size_t sweep(const Config& config, const std::filesystem::path& out);

}  // namespace dpfl::cli

#endif  // DPFL_TOOLS_COMMANDS_H_

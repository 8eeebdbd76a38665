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

#ifndef DPFL_TOOLS_CONFIG_H_
#define DPFL_TOOLS_CONFIG_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace dpfl::cli {

enum class Kind { kReal, kInteger, kFlag, kText, kPath, kRealList };

struct Field {
  std::string path;
  Kind kind;
  std::string fallback;
  // May appear in a sweep grid.
  bool tunable = false;
};

const std::vector<Field>& schema();

// Flat view of a run configuration keyed by dotted path. Every key of the
// schema is present after construction.
class Config {
 public:
  Config();

  static Config load(const std::filesystem::path& path);
  static Config parse(std::string_view yaml_text);

  // Overrides one key from its YAML scalar (or flow sequence) spelling.
  void set(const std::string& path, const std::string& value);

  double real(const std::string& path) const;
  std::int64_t integer(const std::string& path) const;
  std::size_t count(const std::string& path) const;
  bool flag(const std::string& path) const;
  std::string text(const std::string& path) const;
  std::vector<double> reals(const std::string& path) const;

  // Grid declared under `sweep:`; paths in declaration order.
  const std::vector<std::pair<std::string, std::vector<std::string>>>& grid() const { return grid_; }

  // Nested YAML of every key, sweep grid omitted.
  std::string snapshot() const;

 private:
  const Field& field(const std::string& path) const;
  const std::string& raw(const std::string& path) const;

  std::map<std::string, std::string> values_;
  std::vector<std::pair<std::string, std::vector<std::string>>> grid_;
};

}  // namespace dpfl::cli

#endif  // DPFL_TOOLS_CONFIG_H_

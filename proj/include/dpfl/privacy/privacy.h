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

#ifndef DPFL_PRIVACY_PRIVACY_H_
#define DPFL_PRIVACY_PRIVACY_H_

#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "dpfl/model/tensor.h"

namespace dpfl::privacy {

using model::TensorMap;

inline constexpr double kNotPrivate = std::numeric_limits<double>::infinity();

struct PrivacySpec {
  double clip_norm = 1.0;
  // 0 disables noise; the accountant then reports kNotPrivate.
  double noise_multiplier = 0.0;
  double delta = 1e-6;
  std::size_t total_rounds = 200;

  void validate() const;
};

// L2 norm over the concatenation of every tensor.
double update_norm(const TensorMap& delta);

// Scales by min(1, C / ||delta||). C may be +inf.
TensorMap clip_update(const TensorMap& delta, double clip_norm);

// C * exp(-lr * (fraction_below - target_quantile)).
double adaptive_clip_step(double clip_norm, double fraction_below, double target_quantile = 0.5,
                          double lr = 0.2);

// Node covering leaves [index * 2^level + 1, (index + 1) * 2^level].
struct TreeNode {
  std::size_t level = 0;
  std::size_t index = 0;

  std::size_t first() const { return index * (std::size_t{1} << level) + 1; }
  std::size_t last() const { return (index + 1) * (std::size_t{1} << level); }
  friend auto operator<=>(const TreeNode&, const TreeNode&) = default;
};

// Canonical cover of [1, t]; one node per set bit of t, largest first.
std::vector<TreeNode> dyadic_cover(std::size_t t);

std::size_t padded_leaves(std::size_t total_rounds);
// ceil(log2(T_pad)) + 1
std::size_t tree_depth(std::size_t total_rounds);

// Lazily materialized Gaussian node noise for binary-tree prefix sums.
// Node values are a pure function of (seed, node), so concurrent callers see
// identical tensors regardless of who materializes first.
class TreeNoise {
 public:
  TreeNoise() = default;
  TreeNoise(const TensorMap& like, double stddev, std::size_t total_rounds, std::uint64_t seed);
  TreeNoise(const TreeNoise& other);
  TreeNoise& operator=(const TreeNoise& other);

  double stddev() const { return stddev_; }
  std::size_t total_rounds() const { return total_rounds_; }
  std::uint64_t seed() const { return seed_; }
  // Node noise is snapped to multiples of this power of two, which keeps
  // prefix differences and their partial sums exact in floating point.
  double grid() const { return grid_; }

  TensorMap node_noise(const TreeNode& node) const;
  // t in [0, T]; t = 0 gives zeros.
  TensorMap prefix_noise(std::size_t t) const;
  TensorMap noise_increment(std::size_t t) const;
  std::size_t materialized_nodes() const;

 private:
  TensorMap sample(const TreeNode& node) const;

  TensorMap like_;
  double stddev_ = 0.0;
  double grid_ = 0.0;
  std::size_t total_rounds_ = 0;
  std::uint64_t seed_ = 0;
  mutable std::mutex mu_;
  mutable std::map<TreeNode, TensorMap> memo_;
};

struct PrivacyLedger {
  PrivacySpec spec;
  std::size_t rounds_executed = 0;
  std::size_t max_participations = 1;

  std::size_t depth() const { return tree_depth(spec.total_rounds); }
};

// Analytic Gaussian mechanism: delta achieved at eps for noise-to-sensitivity
// ratio `sigma`.
double gaussian_delta(double eps, double sigma);
double gaussian_epsilon(double sigma, double delta);

double account_epsilon(const PrivacySpec& spec, std::size_t participations = 1);
double account_epsilon(const PrivacyLedger& ledger);

std::string ledger_csv_header();
std::string ledger_csv_row(const PrivacyLedger& ledger);

}  // namespace dpfl::privacy

#endif  // DPFL_PRIVACY_PRIVACY_H_

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

#include "dpfl/privacy/privacy.h"

#include <bit>
#include <boost/math/tools/roots.hpp>
#include <cmath>
#include <cstdio>
#include <random>

#include "dpfl/common/error.h"
#include "dpfl/common/rng.h"

namespace dpfl::privacy {
namespace {

// log Phi(x) without underflow for moderately negative x.
double log_norm_cdf(double x) {
  if (x > -20.0) return std::log(0.5 * std::erfc(-x / std::sqrt(2.0)));
  // Asymptotic tail: Phi(x) ~ phi(x) / |x| * (1 - 1/x^2 + 3/x^4).
  const double x2 = x * x;
  return -0.5 * x2 - std::log(-x) - 0.5 * std::log(2.0 * M_PI) +
         std::log1p(-1.0 / x2 + 3.0 / (x2 * x2));
}

}  // namespace

void PrivacySpec::validate() const {
  if (!(clip_norm > 0.0)) throw ValidationError("privacy.clip_norm", "must be > 0");
  if (!(noise_multiplier >= 0.0) || !std::isfinite(noise_multiplier)) {
    throw ValidationError("privacy.noise_multiplier", "must be finite and >= 0");
  }
  if (!(delta > 0.0 && delta < 1.0)) throw ValidationError("privacy.delta", "must lie in (0, 1)");
  if (total_rounds < 1) throw ValidationError("privacy.total_rounds", "must be >= 1");
}

double update_norm(const TensorMap& delta) { return delta.norm(); }

TensorMap clip_update(const TensorMap& delta, double clip_norm) {
  if (!(clip_norm > 0.0)) throw ValidationError("clip_norm", "must be > 0");
  if (const auto bad = delta.first_non_finite(); !bad.empty()) {
    throw RuntimeError("clip", "non-finite update in tensor '" + bad + "'");
  }
  TensorMap out = delta;
  const double norm = delta.norm();
  if (norm > clip_norm) out.scale(clip_norm / norm);
  return out;
}

double adaptive_clip_step(double clip_norm, double fraction_below, double target_quantile,
                          double lr) {
  return clip_norm * std::exp(-lr * (fraction_below - target_quantile));
}

std::vector<TreeNode> dyadic_cover(std::size_t t) {
  std::vector<TreeNode> out;
  std::size_t start = 0;
  for (int level = std::bit_width(t) - 1; level >= 0; --level) {
    const std::size_t span = std::size_t{1} << level;
    if (t & span) {
      out.push_back({static_cast<std::size_t>(level), start / span});
      start += span;
    }
  }
  return out;
}

std::size_t padded_leaves(std::size_t total_rounds) { return std::bit_ceil(total_rounds); }

std::size_t tree_depth(std::size_t total_rounds) {
  return static_cast<std::size_t>(std::countr_zero(padded_leaves(total_rounds))) + 1;
}

TreeNoise::TreeNoise(const TensorMap& like, double stddev, std::size_t total_rounds,
                     std::uint64_t seed)
    : like_(TensorMap::zeros_like(like)),
      stddev_(stddev),
      total_rounds_(total_rounds),
      seed_(seed) {
  if (!(stddev >= 0.0) || !std::isfinite(stddev)) {
    throw ValidationError("stddev", "must be finite and >= 0");
  }
  if (total_rounds < 1) throw ValidationError("total_rounds", "must be >= 1");
  grid_ = stddev > 0.0 ? std::ldexp(1.0, static_cast<int>(std::ceil(std::log2(stddev))) - 40)
                       : 0.0;
}

TreeNoise::TreeNoise(const TreeNoise& other) {
  std::lock_guard lock(other.mu_);
  like_ = other.like_;
  stddev_ = other.stddev_;
  grid_ = other.grid_;
  total_rounds_ = other.total_rounds_;
  seed_ = other.seed_;
  memo_ = other.memo_;
}

TreeNoise& TreeNoise::operator=(const TreeNoise& other) {
  if (this == &other) return *this;
  std::scoped_lock lock(mu_, other.mu_);
  like_ = other.like_;
  stddev_ = other.stddev_;
  grid_ = other.grid_;
  total_rounds_ = other.total_rounds_;
  seed_ = other.seed_;
  memo_ = other.memo_;
  return *this;
}

TensorMap TreeNoise::sample(const TreeNode& node) const {
  TensorMap out = like_;
  if (stddev_ == 0.0) return out;
  Rng rng(derive_seed(seed_, "tree-node", (node.level << 48) ^ node.index));
  std::normal_distribution<double> normal(0.0, stddev_);
  for (auto& [name, t] : out) {
    for (double& x : t.values()) x = std::nearbyint(normal(rng) / grid_) * grid_;
  }
  return out;
}

TensorMap TreeNoise::node_noise(const TreeNode& node) const {
  if (node.last() > padded_leaves(total_rounds_)) {
    throw ValidationError("node", "outside the tree over " + std::to_string(total_rounds_) +
                                      " rounds");
  }
  {
    std::lock_guard lock(mu_);
    if (auto it = memo_.find(node); it != memo_.end()) return it->second;
  }
  TensorMap value = sample(node);
  std::lock_guard lock(mu_);
  return memo_.try_emplace(node, std::move(value)).first->second;
}

TensorMap TreeNoise::prefix_noise(std::size_t t) const {
  if (t > total_rounds_) {
    throw ValidationError("t", "round " + std::to_string(t) + " outside [0, " +
                                   std::to_string(total_rounds_) + "]");
  }
  TensorMap out = like_;
  for (const TreeNode& node : dyadic_cover(t)) out.add_scaled(node_noise(node), 1.0);
  return out;
}

TensorMap TreeNoise::noise_increment(std::size_t t) const {
  if (t < 1 || t > total_rounds_) {
    throw ValidationError("t", "round " + std::to_string(t) + " outside [1, " +
                                   std::to_string(total_rounds_) + "]");
  }
  return prefix_noise(t) - prefix_noise(t - 1);
}

std::size_t TreeNoise::materialized_nodes() const {
  std::lock_guard lock(mu_);
  return memo_.size();
}

double gaussian_delta(double eps, double sigma) {
  const double a = 1.0 / (2.0 * sigma);
  const double b = eps * sigma;
  const double first = 0.5 * std::erfc(-(a - b) / std::sqrt(2.0));
  const double second = std::exp(eps + log_norm_cdf(-a - b));
  return first - second;
}

double gaussian_epsilon(double sigma, double delta) {
  if (!(sigma > 0.0)) throw ValidationError("sigma", "must be > 0");
  if (gaussian_delta(0.0, sigma) <= delta) return 0.0;
  double hi = 1.0;
  while (gaussian_delta(hi, sigma) > delta) {
    hi *= 2.0;
    if (hi > 1e6) throw RuntimeError("accountant", "epsilon search diverged");
  }
  auto f = [&](double e) { return gaussian_delta(e, sigma) - delta; };
  std::uintmax_t iters = 200;
  const double start = hi > 1.0 ? hi / 2.0 : 0.0;
  const auto [lo, up] = boost::math::tools::toms748_solve(
      f, start, hi, boost::math::tools::eps_tolerance<double>(50), iters);
  return 0.5 * (lo + up);
}

double account_epsilon(const PrivacySpec& spec, std::size_t participations) {
  spec.validate();
  if (participations < 1) throw ValidationError("participations", "must be >= 1");
  if (spec.noise_multiplier == 0.0) return kNotPrivate;
  const double nodes = static_cast<double>(participations * tree_depth(spec.total_rounds));
  return gaussian_epsilon(spec.noise_multiplier / std::sqrt(nodes), spec.delta);
}

double account_epsilon(const PrivacyLedger& ledger) {
  return account_epsilon(ledger.spec, ledger.max_participations);
}

std::string ledger_csv_header() {
  return "clip_norm,noise_multiplier,delta,total_rounds,max_participations,depth,epsilon";
}

std::string ledger_csv_row(const PrivacyLedger& ledger) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%zu,%zu,%zu,%.17g", ledger.spec.clip_norm,
                ledger.spec.noise_multiplier, ledger.spec.delta, ledger.spec.total_rounds,
                ledger.max_participations, ledger.depth(), account_epsilon(ledger));
  return buf;
}

}  // namespace dpfl::privacy

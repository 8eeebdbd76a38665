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

#ifndef DPFL_THEORY_THEORY_H_
#define DPFL_THEORY_THEORY_H_

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dpfl/corpus/corpus.h"
#include "dpfl/model/lm.h"
#include "dpfl/tokenizer/tokenizer.h"

namespace dpfl::theory {

using Vec = std::vector<double>;

struct LogDensity {
  Vec values;

  static LogDensity from_probabilities(std::span<const double> p);
  std::size_t size() const { return values.size(); }
  // logsumexp(values) must be 0 within 1e-9.
  void validate() const;
};

struct NoisyLogDensity {
  LogDensity base;
  // Per-point standard deviation of the zero-mean Gaussian perturbation.
  Vec stddev;
};

struct InnerProductSpec {
  Vec pi;

  static InnerProductSpec uniform(std::size_t n);
  static InnerProductSpec from_log_density(const LogDensity& l);
  void validate() const;
};

double norm_pi(std::span<const double> f, std::span<const double> pi);
double dist_pi(std::span<const double> f, std::span<const double> g, std::span<const double> pi);

// beta^2 d2 + (1 - beta)^2 sigma2
double analytic_error(double beta, double d2, double sigma2);
// sum_i pi_i s_i^2
double noise_sigma2(const NoisyLogDensity& noisy, const InnerProductSpec& pi);

// Sample mean over n draws of ||beta l_pub + (1 - beta) l_hat - l_priv||^2_pi.
// Draw i uses its own seed stream, and the mean uses compensated summation.
double mc_estimator_error(const LogDensity& l_pub, const NoisyLogDensity& noisy,
                          const InnerProductSpec& pi, double beta, std::size_t n_samples,
                          std::uint64_t seed);

// sigma2 / (d2 + sigma2)
double optimal_beta(double d2, double sigma2);

struct InterpretationReport {
  double err_pub = 0.0;
  double err_priv = 0.0;
  double err_half = 0.0;
  bool half_max_holds = false;
  // 0.5 * max(err_pub, err_priv) - err_half
  double half_max_margin = 0.0;
  bool min_holds = false;
  // min(err_pub, err_priv) - err_half
  double min_margin = 0.0;
  bool ratio_in_band = false;
};

// Relative slack (scaled by d2 + sigma2) for the inequality boundaries.
inline constexpr double kBoundaryTolerance = 1e-12;

InterpretationReport interpretation_checks(double d2, double sigma2);

struct KlCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = false;
};

KlCheck kl_bound_check(std::span<const double> p, std::span<const double> p_priv);

// Per-document average log-probabilities gathered from trained checkpoints.
struct BridgeScores {
  Vec teacher;
  // Noiseless checkpoints across seeds; their mean stands in for l_priv.
  std::vector<Vec> oracle;
  struct Level {
    double noise_multiplier = 0.0;
    std::vector<Vec> seeds;
  };
  std::vector<Level> levels;
};

struct BridgeLevel {
  double noise_multiplier = 0.0;
  double sigma2 = 0.0;
  std::string predicted;
};

struct BridgeReport {
  double d2 = 0.0;
  double oracle_sigma2 = 0.0;
  std::vector<BridgeLevel> levels;
  std::optional<std::string> observed_winner;
  std::optional<bool> consistent;
};

inline constexpr const char* kCombinedPreferred = "combined score preferred";
inline constexpr const char* kPrivateSufficient = "private score sufficient";

// Regime label for a measured (d2, sigma2) pair.
std::string predicted_regime(double d2, double sigma2);

// `observed_winner` (one of the two labels) is compared against the prediction
// at the highest noise level.
BridgeReport end_to_end_density_bridge(const BridgeScores& scores,
                                       std::optional<std::string> observed_winner = std::nullopt);

BridgeScores collect_bridge_scores(const model::ParamSet& teacher,
                                   std::span<const model::ParamSet> oracle,
                                   std::span<const std::pair<double, std::vector<model::ParamSet>>> levels,
                                   const corpus::Corpus& eval_set,
                                   const tokenizer::TokenizerModel& tok);

}  // namespace dpfl::theory

#endif  // DPFL_THEORY_THEORY_H_

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

#include "dpfl/theory/theory.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "dpfl/common/error.h"
#include "dpfl/common/rng.h"

namespace dpfl::theory {
namespace {

// Neumaier compensated accumulator.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    comp_ += std::abs(sum_) >= std::abs(x) ? (sum_ - t) + x : (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

void check_lengths(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ValidationError(what, "length mismatch: " + std::to_string(a) + " vs " +
                                    std::to_string(b));
  }
}

double log_sum_exp(std::span<const double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

double mean(std::span<const double> v) {
  CompensatedSum s;
  for (double x : v) s.add(x);
  return s.value() / static_cast<double>(v.size());
}

std::vector<double> score(const model::ParamSet& p, const std::vector<model::Sequence>& seqs) {
  return model::avg_log_probs(p, seqs);
}

}  // namespace

LogDensity LogDensity::from_probabilities(std::span<const double> p) {
  LogDensity out;
  for (double x : p) {
    if (!(x > 0.0)) throw ValidationError("p", "probabilities must be strictly positive");
    out.values.push_back(std::log(x));
  }
  out.validate();
  return out;
}

void LogDensity::validate() const {
  if (values.empty()) throw ValidationError("log_density", "domain must be non-empty");
  if (std::abs(log_sum_exp(values)) > 1e-9) {
    throw ValidationError("log_density", "logsumexp must be 0 within 1e-9");
  }
}

InnerProductSpec InnerProductSpec::uniform(std::size_t n) {
  if (n == 0) throw ValidationError("pi", "domain must be non-empty");
  return {Vec(n, 1.0 / static_cast<double>(n))};
}

InnerProductSpec InnerProductSpec::from_log_density(const LogDensity& l) {
  InnerProductSpec out;
  for (double x : l.values) out.pi.push_back(std::exp(x));
  out.validate();
  return out;
}

void InnerProductSpec::validate() const {
  if (pi.empty()) throw ValidationError("pi", "domain must be non-empty");
  CompensatedSum s;
  for (double x : pi) {
    if (!(x >= 0.0)) throw ValidationError("pi", "weights must be nonnegative");
    s.add(x);
  }
  if (std::abs(s.value() - 1.0) > 1e-12) throw ValidationError("pi", "weights must sum to 1");
}

double norm_pi(std::span<const double> f, std::span<const double> pi) {
  check_lengths(f.size(), pi.size(), "f");
  CompensatedSum s;
  for (std::size_t i = 0; i < f.size(); ++i) s.add(pi[i] * f[i] * f[i]);
  return std::sqrt(s.value());
}

double dist_pi(std::span<const double> f, std::span<const double> g, std::span<const double> pi) {
  check_lengths(f.size(), g.size(), "g");
  Vec d(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) d[i] = f[i] - g[i];
  return norm_pi(d, pi);
}

double analytic_error(double beta, double d2, double sigma2) {
  return beta * beta * d2 + (1.0 - beta) * (1.0 - beta) * sigma2;
}

double noise_sigma2(const NoisyLogDensity& noisy, const InnerProductSpec& pi) {
  check_lengths(noisy.stddev.size(), pi.pi.size(), "stddev");
  CompensatedSum s;
  for (std::size_t i = 0; i < pi.pi.size(); ++i) s.add(pi.pi[i] * noisy.stddev[i] * noisy.stddev[i]);
  return s.value();
}

double mc_estimator_error(const LogDensity& l_pub, const NoisyLogDensity& noisy,
                          const InnerProductSpec& pi, double beta, std::size_t n_samples,
                          std::uint64_t seed) {
  if (n_samples < 1) throw ValidationError("n_samples", "must be >= 1");
  const std::size_t n = l_pub.size();
  check_lengths(noisy.base.size(), n, "l_priv");
  check_lengths(noisy.stddev.size(), n, "stddev");
  check_lengths(pi.pi.size(), n, "pi");
  Vec bias(n);
  for (std::size_t i = 0; i < n; ++i) bias[i] = beta * (l_pub.values[i] - noisy.base.values[i]);
  CompensatedSum total;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t trial = 0; trial < n_samples; ++trial) {
    Rng rng(derive_seed(seed, "mc", trial));
    normal.reset();
    CompensatedSum sq;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = bias[i] + (1.0 - beta) * noisy.stddev[i] * normal(rng);
      sq.add(pi.pi[i] * e * e);
    }
    total.add(sq.value());
  }
  return total.value() / static_cast<double>(n_samples);
}

double optimal_beta(double d2, double sigma2) {
  if (!(d2 >= 0.0 && sigma2 >= 0.0)) throw ValidationError("d2", "d2 and sigma2 must be >= 0");
  if (d2 + sigma2 == 0.0) throw ValidationError("d2", "d2 and sigma2 cannot both be zero");
  return sigma2 / (d2 + sigma2);
}

InterpretationReport interpretation_checks(double d2, double sigma2) {
  if (!(d2 >= 0.0 && sigma2 >= 0.0)) throw ValidationError("d2", "d2 and sigma2 must be >= 0");
  InterpretationReport r;
  r.err_pub = analytic_error(1.0, d2, sigma2);
  r.err_priv = analytic_error(0.0, d2, sigma2);
  r.err_half = analytic_error(0.5, d2, sigma2);
  const double tol = kBoundaryTolerance * (d2 + sigma2);
  r.half_max_margin = 0.5 * std::max(r.err_pub, r.err_priv) - r.err_half;
  r.half_max_holds = r.half_max_margin >= -tol;
  r.min_margin = std::min(r.err_pub, r.err_priv) - r.err_half;
  r.min_holds = r.min_margin >= -tol;
  // The min margin equals -(d2 - 3 sigma2) / 4 when sigma2 is the smaller
  // error, hence the factor 4 on the band tolerance.
  r.ratio_in_band = d2 - 3.0 * sigma2 <= 4.0 * tol && sigma2 - 3.0 * d2 <= 4.0 * tol;
  return r;
}

KlCheck kl_bound_check(std::span<const double> p, std::span<const double> p_priv) {
  check_lengths(p.size(), p_priv.size(), "p");
  CompensatedSum lhs, kl;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!(p[i] > 0.0) || !(p_priv[i] > 0.0)) {
      throw ValidationError("p", "densities must be strictly positive at index " +
                                     std::to_string(i));
    }
    const double d = std::log(p[i]) - std::log(p_priv[i]);
    lhs.add(p_priv[i] * d * d);
    kl.add(-p_priv[i] * d);
  }
  KlCheck r;
  r.lhs = lhs.value();
  r.rhs = kl.value() * kl.value();
  r.holds = r.lhs >= r.rhs - 1e-12;
  return r;
}

std::string predicted_regime(double d2, double sigma2) {
  return d2 < 3.0 * sigma2 ? kCombinedPreferred : kPrivateSufficient;
}

BridgeReport end_to_end_density_bridge(const BridgeScores& s,
                                       std::optional<std::string> observed_winner) {
  if (s.oracle.size() < 2) throw ValidationError("oracle", "needs at least 2 noiseless seeds");
  if (s.levels.empty()) throw ValidationError("levels", "needs at least one noise level");
  const std::size_t docs = s.teacher.size();
  if (docs == 0) throw ValidationError("teacher", "evaluation set is empty");
  auto across_seed_variance = [&](const std::vector<Vec>& seeds) {
    if (seeds.size() < 2) throw ValidationError("levels", "each level needs at least 2 seeds");
    CompensatedSum total;
    for (std::size_t d = 0; d < docs; ++d) {
      Vec col;
      for (const auto& v : seeds) {
        check_lengths(v.size(), docs, "scores");
        col.push_back(v[d]);
      }
      const double m = mean(col);
      CompensatedSum ss;
      for (double x : col) ss.add((x - m) * (x - m));
      total.add(ss.value() / static_cast<double>(col.size() - 1));
    }
    return total.value() / static_cast<double>(docs);
  };

  BridgeReport r;
  CompensatedSum d2;
  for (std::size_t d = 0; d < docs; ++d) {
    Vec col;
    for (const auto& v : s.oracle) {
      check_lengths(v.size(), docs, "oracle");
      col.push_back(v[d]);
    }
    const double gap = s.teacher[d] - mean(col);
    d2.add(gap * gap);
  }
  r.d2 = d2.value() / static_cast<double>(docs);
  r.oracle_sigma2 = across_seed_variance(s.oracle);
  for (const auto& level : s.levels) {
    const double sigma2 = across_seed_variance(level.seeds);
    r.levels.push_back({level.noise_multiplier, sigma2, predicted_regime(r.d2, sigma2)});
  }
  if (observed_winner) {
    const auto top = std::max_element(r.levels.begin(), r.levels.end(), [](auto& a, auto& b) {
      return a.noise_multiplier < b.noise_multiplier;
    });
    r.observed_winner = observed_winner;
    r.consistent = *observed_winner == top->predicted;
  }
  return r;
}

BridgeScores collect_bridge_scores(
    const model::ParamSet& teacher, std::span<const model::ParamSet> oracle,
    std::span<const std::pair<double, std::vector<model::ParamSet>>> levels,
    const corpus::Corpus& eval_set, const tokenizer::TokenizerModel& tok) {
  const auto seqs = tokenizer::encode_corpus(tok, eval_set, teacher.config.max_seq_len);
  BridgeScores out;
  out.teacher = score(teacher, seqs);
  for (const auto& p : oracle) out.oracle.push_back(score(p, seqs));
  for (const auto& [m, ps] : levels) {
    BridgeScores::Level level{m, {}};
    for (const auto& p : ps) level.seeds.push_back(score(p, seqs));
    out.levels.push_back(std::move(level));
  }
  return out;
}

}  // namespace dpfl::theory

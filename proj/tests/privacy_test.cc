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

#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <random>
#include <set>
#include <thread>

#include "dpfl/common/error.h"
#include "dpfl/privacy/privacy.h"

namespace dpfl::privacy {
namespace {

using model::Tensor;

TensorMap vec(std::vector<double> v) {
  Tensor t(std::vector<std::size_t>{v.size()});
  t.values() = std::move(v);
  return TensorMap({{"w", t}});
}

TensorMap two_tensors(double a, double b, double c) {
  Tensor x(std::vector<std::size_t>{2});
  x[0] = a;
  x[1] = b;
  Tensor y(1, 1);
  y[0] = c;
  return TensorMap({{"x", x}, {"y", y}});
}

TEST(Clip, LargeUpdateScaledToClipNormSameDirection) {
  const TensorMap d = two_tensors(6.0, 0.0, 8.0);
  const TensorMap c = clip_update(d, 1.0);
  EXPECT_NEAR(update_norm(c), 1.0, 1e-15);
  EXPECT_NEAR(c.at("x")[0], 0.6, 1e-15);
  EXPECT_NEAR(c.at("y")[0], 0.8, 1e-15);
}

TEST(Clip, SmallAndZeroUpdatesUnchanged) {
  const TensorMap d = two_tensors(0.3, 0.0, 0.4);
  EXPECT_EQ(clip_update(d, 1.0), d);
  const TensorMap z = two_tensors(0, 0, 0);
  EXPECT_EQ(clip_update(z, 1.0), z);
  EXPECT_EQ(clip_update(d, kNotPrivate), d);
}

TEST(Clip, RejectsNonFinite) {
  EXPECT_THROW(clip_update(two_tensors(NAN, 0, 0), 1.0), RuntimeError);
  EXPECT_THROW(clip_update(two_tensors(1, 0, 0), 0.0), ValidationError);
}

TEST(Clip, IdempotentAndBounded) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> scale(-6.0, 6.0);
  for (int trial = 0; trial < 2000; ++trial) {
    const double s = std::exp(scale(rng));
    const TensorMap d = two_tensors(s * n(rng), s * n(rng), s * n(rng));
    const double c = std::exp(scale(rng));
    const TensorMap once = clip_update(d, c);
    EXPECT_LE(update_norm(once), c + 1e-12);
    const TensorMap twice = clip_update(once, c);
    for (const auto& [name, t] : once) {
      for (std::size_t i = 0; i < t.size(); ++i) {
        EXPECT_NEAR(twice.at(name)[i], t[i], 1e-15 * (1 + std::abs(t[i])));
      }
    }
  }
}

TEST(AdaptiveClip, GeometricUpdate) {
  EXPECT_EQ(adaptive_clip_step(0.7, 0.5, 0.5, 0.2), 0.7);
  EXPECT_NEAR(adaptive_clip_step(1.0, 1.0, 0.5, 0.2), std::exp(-0.1), 1e-15);
  EXPECT_NEAR(adaptive_clip_step(1.0, 0.0, 0.5, 0.2), std::exp(0.1), 1e-15);
}

// Independent oracle: greedy split of [1, t] into maximal aligned blocks.
std::vector<std::pair<std::size_t, std::size_t>> cover_oracle(std::size_t t) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t lo = 1;
  while (lo <= t) {
    std::size_t len = 1;
    while ((lo - 1) % (2 * len) == 0 && lo + 2 * len - 1 <= t) len *= 2;
    out.emplace_back(lo, lo + len - 1);
    lo += len;
  }
  return out;
}

TEST(Tree, CoverSizeIsPopcountAndMatchesOracle) {
  for (std::size_t t = 1; t <= 4096; ++t) {
    const auto cover = dyadic_cover(t);
    ASSERT_EQ(cover.size(), static_cast<std::size_t>(std::popcount(t))) << t;
    const auto expected = cover_oracle(t);
    ASSERT_EQ(cover.size(), expected.size()) << t;
    for (std::size_t i = 0; i < cover.size(); ++i) {
      EXPECT_EQ(cover[i].first(), expected[i].first) << t;
      EXPECT_EQ(cover[i].last(), expected[i].second) << t;
    }
  }
}

TEST(Tree, SmallCovers) {
  const auto c3 = dyadic_cover(3);
  ASSERT_EQ(c3.size(), 2u);
  EXPECT_EQ(std::make_pair(c3[0].first(), c3[0].last()), std::make_pair(std::size_t{1}, std::size_t{2}));
  EXPECT_EQ(std::make_pair(c3[1].first(), c3[1].last()), std::make_pair(std::size_t{3}, std::size_t{3}));
  const auto c4 = dyadic_cover(4);
  ASSERT_EQ(c4.size(), 1u);
  EXPECT_EQ(c4[0].first(), 1u);
  EXPECT_EQ(c4[0].last(), 4u);
  EXPECT_TRUE(dyadic_cover(0).empty());
}

TEST(Tree, Depth) {
  EXPECT_EQ(tree_depth(1), 1u);
  EXPECT_EQ(tree_depth(2), 2u);
  EXPECT_EQ(tree_depth(3), 3u);
  EXPECT_EQ(tree_depth(200), 9u);
  EXPECT_EQ(tree_depth(1600), 12u);
  EXPECT_EQ(padded_leaves(1600), 2048u);
}

TEST(Tree, PrefixVarianceIsPopcountTimesNodeVariance) {
  const double m = 1.3, c = 0.7, sd = m * c;
  const int n = 100000;
  for (std::size_t t : {1u, 3u, 4u, 7u}) {
    double sum = 0, sq = 0;
    for (int trial = 0; trial < n; ++trial) {
      const TreeNoise tree(vec({0.0}), sd, 8, 1000 + trial);
      const double x = tree.prefix_noise(t).at("w")[0];
      sum += x;
      sq += x * x;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    const double expected = std::popcount(t) * sd * sd;
    EXPECT_NEAR(var / expected, 1.0, 0.05) << "t=" << t;
  }
}

TEST(Tree, IncrementsTelescopeExactly) {
  const TensorMap like = two_tensors(0, 0, 0);
  const TreeNoise tree(like, 8.83 * 0.3, 200, 42);
  TensorMap running = TensorMap::zeros_like(like);
  for (std::size_t t = 1; t <= 200; ++t) {
    running.add_scaled(tree.noise_increment(t), 1.0);
    EXPECT_EQ(running, tree.prefix_noise(t)) << t;
  }
  EXPECT_EQ(tree.noise_increment(1), tree.prefix_noise(1));
}

TEST(Tree, IncrementsHaveZeroMean) {
  const int n = 100000;
  const double sd = 2.0;
  double sum = 0, sq = 0;
  for (int trial = 0; trial < n; ++trial) {
    const TreeNoise tree(vec({0.0}), sd, 8, 77 + trial);
    const double x = tree.noise_increment(6).at("w")[0];
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n;
  const double stddev = std::sqrt(sq / n - mean * mean);
  EXPECT_LT(std::abs(mean), 3 * stddev / std::sqrt(static_cast<double>(n)));
}

TEST(Tree, DeterministicMemoizedAndRangeChecked) {
  const TensorMap like = two_tensors(0, 0, 0);
  const TreeNoise a(like, 1.0, 16, 5);
  const TreeNoise b(like, 1.0, 16, 5);
  EXPECT_EQ(a.prefix_noise(11), b.prefix_noise(11));
  EXPECT_NE(a.prefix_noise(11), TreeNoise(like, 1.0, 16, 6).prefix_noise(11));
  const std::size_t before = a.materialized_nodes();
  (void)a.prefix_noise(11);
  EXPECT_EQ(a.materialized_nodes(), before);
  EXPECT_THROW(a.prefix_noise(17), ValidationError);
  EXPECT_THROW(a.noise_increment(0), ValidationError);
  EXPECT_EQ(a.prefix_noise(0), TensorMap::zeros_like(like));
}

TEST(Tree, ConcurrentMaterializationAgrees) {
  const TensorMap like = vec(std::vector<double>(64, 0.0));
  const TreeNoise shared(like, 1.0, 64, 9);
  std::vector<TensorMap> results(8);
  std::vector<std::thread> workers;
  for (int w = 0; w < 8; ++w) {
    workers.emplace_back([&, w] { results[w] = shared.prefix_noise(63); });
  }
  for (auto& w : workers) w.join();
  const TreeNoise fresh(like, 1.0, 64, 9);
  for (const auto& r : results) EXPECT_EQ(r, fresh.prefix_noise(63));
}

// Independent oracle: bisection on the analytic Gaussian relation written
// directly with erfc.
double phi(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double oracle_epsilon(double m, std::size_t rounds, double delta, std::size_t p) {
  const std::size_t leaves = std::bit_ceil(rounds);
  const double d = std::log2(static_cast<double>(leaves)) + 1.0;
  const double s = m / std::sqrt(p * d);
  auto dlt = [&](double e) {
    return phi(0.5 / s - e * s) - std::exp(e) * phi(-0.5 / s - e * s);
  };
  double lo = 0, hi = 100;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (dlt(mid) > delta ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

PrivacySpec spec_for(double m, std::size_t rounds = 1600, double delta = 1e-6) {
  PrivacySpec s;
  s.noise_multiplier = m;
  s.total_rounds = rounds;
  s.delta = delta;
  return s;
}

TEST(Accountant, AgreesWithBisectionOracle) {
  for (double m : {0.8, 1.13, 2.0, 4.0, 8.83}) {
    for (std::size_t p : {1u, 3u}) {
      const double lib = account_epsilon(spec_for(m), p);
      EXPECT_NEAR(lib, oracle_epsilon(m, 1600, 1e-6, p), 1e-6 * (1 + lib)) << m << "," << p;
    }
  }
}

TEST(Accountant, BracketsPublishedAnchors) {
  const double high_noise = account_epsilon(spec_for(8.83));
  const double low_noise = account_epsilon(spec_for(1.13));
  EXPECT_GE(high_noise, 1.4);
  EXPECT_LE(high_noise, 2.6);
  EXPECT_GE(low_noise, 15.0);
  EXPECT_LE(low_noise, 24.0);
}

TEST(Accountant, LimitsAndSentinel) {
  EXPECT_LT(account_epsilon(spec_for(1e6)), 1e-4);
  EXPECT_EQ(account_epsilon(spec_for(0.0)), kNotPrivate);
}

TEST(Accountant, Monotone) {
  double previous = kNotPrivate;
  for (int i = 0; i < 20; ++i) {
    const double e = account_epsilon(spec_for(0.5 + 0.5 * i));
    EXPECT_LT(e, previous);
    previous = e;
  }
  EXPECT_LE(account_epsilon(spec_for(2.0, 100)), account_epsilon(spec_for(2.0, 1000)));
  EXPECT_LE(account_epsilon(spec_for(2.0), 1), account_epsilon(spec_for(2.0), 2));
  EXPECT_LE(account_epsilon(spec_for(2.0, 1600, 1e-3)), account_epsilon(spec_for(2.0, 1600, 1e-9)));
}

TEST(Ledger, CsvRow) {
  PrivacyLedger l{spec_for(8.83), 0, 1};
  EXPECT_EQ(l.depth(), 12u);
  const std::string row = ledger_csv_row(l);
  EXPECT_EQ(std::count(row.begin(), row.end(), ','), 6);
  const std::string header = ledger_csv_header();
  EXPECT_EQ(std::count(header.begin(), header.end(), ','), 6);
}

}  // namespace
}  // namespace dpfl::privacy

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

#include <algorithm>
#include <random>
#include <set>

#include "dpfl/common/error.h"
#include "dpfl/matching/matching.h"

namespace dpfl::matching {
namespace {

struct Small {
  corpus::Corpus pub;
  corpus::Corpus priv;
  tokenizer::TokenizerModel tok;
  std::vector<federation::ClientData> pool;
  ParamSet teacher;
  model::LMConfig student;
};

const Small& small() {
  static const Small s = [] {
    corpus::ShiftSpec spec;
    spec.base_seed = 21;
    spec.n_docs = 120;
    spec.vocab_size_words = 20;
    spec.doc_length_range = {4, 8};
    spec.alpha = 0.8;
    auto pub = corpus::generate_corpus(spec, corpus::Origin::kPublic);
    auto priv = corpus::generate_corpus(spec, corpus::Origin::kPrivate);
    auto tok = tokenizer::train_bpe(pub, 40);
    auto pool = federation::tokenize_clients(corpus::partition_clients(priv, 12, 0.0, 1), tok, 12);
    model::LMConfig lm;
    lm.vocab_size = tok.vocab_size();
    lm.embed_dim = 6;
    lm.hidden_dim = 10;
    lm.max_seq_len = 12;
    model::LMConfig tc = lm;
    tc.hidden_dim = 16;
    const auto seqs = tokenizer::encode_corpus(tok, pub, 12);
    auto teacher =
        distill::public_train(model::init_params(tc, 3), seqs, {150, 16, 1e-2, 4}).params;
    return Small{std::move(pub), std::move(priv), std::move(tok), std::move(pool),
                 std::move(teacher), lm};
  }();
  return s;
}

std::vector<MatchScore> fake_scores(std::size_t n, std::uint64_t seed, int levels = 0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(-3, 1);
  std::vector<MatchScore> out;
  for (std::size_t i = 0; i < n; ++i) {
    double a = d(rng), b = d(rng);
    if (levels > 0) {
      a = std::round(a * levels) / levels;
      b = std::round(b * levels) / levels;
    }
    char id[16];
    std::snprintf(id, sizeof(id), "doc-%04zu", (i * 37) % n);
    out.push_back({id, a, b, a + b});
  }
  return out;
}

TEST(SelectTop, Examples) {
  const std::vector<MatchScore> two{{"a", -2.0, 0.0, -2.0}, {"b", -1.0, 0.0, -1.0}};
  EXPECT_EQ(select_top(two, 0.5, true), std::vector<std::string>{"b"});
  EXPECT_TRUE(select_top(two, 0.0, true).empty());
  const auto all = select_top(two, 1.0, false);
  EXPECT_EQ(std::set<std::string>(all.begin(), all.end()), (std::set<std::string>{"a", "b"}));
  EXPECT_THROW(select_top(two, 1.5, true), ValidationError);
}

TEST(SelectTop, SelectedKeysDominateAndTiesBreakByDocId) {
  const auto s = fake_scores(200, 1, 2);
  for (bool use_pub : {true, false}) {
    const auto chosen = select_top(s, 0.3, use_pub);
    ASSERT_EQ(chosen.size(), 60u);
    const std::set<std::string> in(chosen.begin(), chosen.end());
    double min_in = 1e300, max_out = -1e300;
    for (const auto& x : s) {
      const double k = use_pub ? x.combined : x.logp_priv;
      (in.count(x.doc_id) ? min_in : max_out) =
          in.count(x.doc_id) ? std::min(min_in, k) : std::max(max_out, k);
    }
    EXPECT_GE(min_in, max_out);
    for (const auto& x : s) {
      const double k = use_pub ? x.combined : x.logp_priv;
      if (k == min_in && !in.count(x.doc_id)) {
        for (const auto& id : chosen) {
          const auto it = std::find_if(s.begin(), s.end(), [&](auto& y) { return y.doc_id == id; });
          if ((use_pub ? it->combined : it->logp_priv) == k) EXPECT_LT(id, x.doc_id);
        }
      }
    }
  }
}

TEST(SelectTop, NestedUnderIncreasingQ) {
  const auto s = fake_scores(150, 2, 1);
  std::vector<std::string> previous;
  for (int step = 0; step <= 20; ++step) {
    const auto cur = select_top(s, step / 20.0, true);
    ASSERT_GE(cur.size(), previous.size());
    EXPECT_TRUE(std::equal(previous.begin(), previous.end(), cur.begin()));
    previous = cur;
  }
}

TEST(SelectTop, InvariantToConstantShiftOfPublicScore) {
  const auto s = fake_scores(300, 3);
  for (double shift : {-7.0, 0.5, 100.0}) {
    auto shifted = s;
    for (auto& x : shifted) {
      x.logp_pub += shift;
      x.combined = x.logp_priv + x.logp_pub;
    }
    for (double q : {0.01, 0.1, 0.5}) {
      EXPECT_EQ(select_top(shifted, q, true), select_top(s, q, true));
    }
  }
}

TEST(SelectTop, UnitSumAndHalfWeightsRankIdentically) {
  const auto s = fake_scores(300, 4);
  auto halves = s;
  for (auto& x : halves) x.combined = 0.5 * x.logp_pub + 0.5 * x.logp_priv;
  for (double q : {0.05, 0.2, 0.7}) EXPECT_EQ(select_top(halves, q, true), select_top(s, q, true));
}

TEST(SelectRandom, SizeAndDeterminism) {
  const auto& f = small();
  const auto a = select_random(f.pub, 0.1, 5);
  EXPECT_EQ(a.size(), 12u);
  EXPECT_EQ(a, select_random(f.pub, 0.1, 5));
  EXPECT_NE(a, select_random(f.pub, 0.1, 6));
}

TEST(Score, DelegatesToAvgLogProbAndIsPermutationEquivariant) {
  const auto& f = small();
  const auto priv = model::init_params(f.student, 9);
  const auto scores = score_public(f.pub, priv, f.teacher, f.tok);
  ASSERT_EQ(scores.size(), f.pub.size());
  for (std::size_t i = 0; i < 10; ++i) {
    auto ids = f.tok.encode_words(f.pub.documents[i].words);
    ids.resize(std::min<std::size_t>(ids.size(), 12));
    EXPECT_EQ(scores[i].logp_priv, model::avg_log_prob(priv, ids));
    EXPECT_EQ(scores[i].logp_pub, model::avg_log_prob(f.teacher, ids));
    EXPECT_EQ(scores[i].combined, scores[i].logp_priv + scores[i].logp_pub);
  }
  corpus::Corpus shuffled = f.pub;
  std::mt19937_64 rng(1);
  std::shuffle(shuffled.documents.begin(), shuffled.documents.end(), rng);
  const auto again = score_public(shuffled, priv, f.teacher, f.tok);
  for (std::size_t i = 0; i < again.size(); ++i) {
    const auto it = std::find_if(scores.begin(), scores.end(),
                                 [&](auto& x) { return x.doc_id == again[i].doc_id; });
    EXPECT_EQ(it->combined, again[i].combined);
  }
  EXPECT_THROW(score_public(corpus::Corpus{}, priv, f.teacher, f.tok), ValidationError);
}

TEST(Score, TeacherPrefersItsOwnGreedyText) {
  const auto& f = small();
  const auto priv = model::init_params(f.student, 9);
  std::mt19937_64 rng(2);
  int wins = 0, total = 0;
  for (std::size_t len = 5; len <= 12; ++len) {
    const auto greedy = model::greedy_generate(f.teacher, len);
    model::Sequence noise{tokenizer::kBosId};
    std::uniform_int_distribution<int> tok(tokenizer::kNumSpecials,
                                           static_cast<int>(f.tok.vocab_size()) - 1);
    while (noise.size() < len) noise.push_back(tok(rng));
    wins += model::avg_log_prob(f.teacher, greedy) > model::avg_log_prob(f.teacher, noise);
    ++total;
  }
  EXPECT_EQ(wins, total);
}

federation::FLConfig fl(std::size_t rounds) {
  federation::FLConfig c;
  c.clients_per_round = 4;
  c.total_rounds = rounds;
  c.privacy.total_rounds = rounds;
  c.privacy.clip_norm = privacy::kNotPrivate;
  c.local_batch_size = 8;
  c.client_lr = 0.5;
  c.seed = 3;
  return c;
}

TEST(Pipeline, EmptySelectionEqualsUninterruptedTraining) {
  const auto& f = small();
  PipelineConfig cfg;
  cfg.fl = fl(8);
  cfg.t_prime = 4;
  cfg.q = 0.0;
  cfg.mid = {20, 8, 1e-2, 0};
  PipelineInputs in{&f.pub, &f.pool, &f.teacher, &f.tok, model::init_params(f.student, 1), {}};
  const auto r = run_pipeline(cfg, in);
  auto state = federation::init_state(in.init, cfg.fl, f.pool.size());
  federation::train(state, f.pool, cfg.fl, 0, 8);
  EXPECT_EQ(r.params, state.params);
  EXPECT_TRUE(r.report.selected.empty());
  EXPECT_EQ(r.report.stage1.size() + r.report.stage5.size(), 8u);
}

TEST(Pipeline, MatchedSelectionComesFromPublicScores) {
  const auto& f = small();
  PipelineConfig cfg;
  cfg.fl = fl(6);
  cfg.t_prime = 3;
  cfg.q = 0.1;
  cfg.mid = {5, 8, 1e-2, 0};
  PipelineInputs in{&f.pub, &f.pool, &f.teacher, &f.tok, model::init_params(f.student, 1), {}};
  const auto r = run_pipeline(cfg, in);
  EXPECT_FALSE(r.report.random_fallback);
  ASSERT_EQ(r.report.scores.size(), f.pub.size());
  EXPECT_EQ(r.report.selected, select_top(r.report.scores, 0.1, true));
  EXPECT_EQ(r.report.mid_loss.size(), 5u);
  const auto direct = score_public(f.pub, r.report.stage1_params, f.teacher, f.tok);
  EXPECT_EQ(select_top(direct, 0.1, true), r.report.selected);
}

TEST(Pipeline, ZeroFirstStageFallsBackToRandomSubset) {
  const auto& f = small();
  PipelineConfig cfg;
  cfg.fl = fl(4);
  cfg.t_prime = 0;
  cfg.q = 0.1;
  cfg.mid = {5, 8, 1e-2, 0};
  PipelineInputs in{&f.pub, &f.pool, &f.teacher, &f.tok, model::init_params(f.student, 1), {}};
  const auto r = run_pipeline(cfg, in);
  EXPECT_TRUE(r.report.random_fallback);
  EXPECT_TRUE(r.report.scores.empty());
  EXPECT_EQ(r.report.selected, select_random(f.pub, 0.1, cfg.fl.seed));
  EXPECT_EQ(r.report.stage5.size(), 4u);
}

TEST(Pipeline, RejectsBadConfig) {
  const auto& f = small();
  PipelineConfig cfg;
  cfg.fl = fl(4);
  cfg.t_prime = 5;
  PipelineInputs in{&f.pub, &f.pool, &f.teacher, &f.tok, model::init_params(f.student, 1), {}};
  EXPECT_THROW(run_pipeline(cfg, in), ValidationError);
}

TEST(PplExport, RowsAndBounds) {
  const auto& f = small();
  const auto priv = model::init_params(f.student, 2);
  corpus::Corpus sample{f.priv.origin, {f.priv.documents.begin(), f.priv.documents.begin() + 30}};
  const auto rows = ppl_scatter_export(f.pub, sample, priv, f.teacher, f.tok);
  EXPECT_EQ(rows.size(), f.pub.size() + 30);
  for (const auto& r : rows) {
    EXPECT_GE(r.ppl_priv, 1.0);
    EXPECT_GE(r.ppl_pub, 1.0);
  }
  EXPECT_EQ(rows.back().origin, corpus::Origin::kPrivate);
}

}  // namespace
}  // namespace dpfl::matching

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

#ifndef DPFL_MATCHING_MATCHING_H_
#define DPFL_MATCHING_MATCHING_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dpfl/corpus/corpus.h"
#include "dpfl/distill/distill.h"
#include "dpfl/federation/federation.h"
#include "dpfl/model/lm.h"
#include "dpfl/tokenizer/tokenizer.h"

namespace dpfl::matching {

using model::ParamSet;

struct MatchScore {
  std::string doc_id;
  double logp_priv = 0.0;
  double logp_pub = 0.0;
  double combined = 0.0;
};

// Average token log-probability of every document under both models.
std::vector<MatchScore> score_public(const corpus::Corpus& docs, const ParamSet& priv,
                                     const ParamSet& teacher,
                                     const tokenizer::TokenizerModel& tok);

// floor(q * |scores|) ids with the largest key (combined, or logp_priv alone);
// ties go to the smaller doc_id. Returned in rank order.
std::vector<std::string> select_top(std::span<const MatchScore> scores, double q,
                                    bool use_pub_score);

// floor(q * |docs|) ids drawn uniformly without replacement.
std::vector<std::string> select_random(const corpus::Corpus& docs, double q, std::uint64_t seed);

enum class SelectionMode { kMatched, kRandom };

struct PipelineConfig {
  // Rounds of the first private stage; the second stage runs to fl.total_rounds.
  std::size_t t_prime = 100;
  double q = 0.1;
  bool use_pub_score = true;
  SelectionMode selection = SelectionMode::kMatched;
  distill::DistillConfig distill;
  distill::PublicTrainConfig mid;
  federation::FLConfig fl;

  void validate() const;
};

struct PipelineReport {
  std::vector<federation::RoundRecord> stage1;
  std::vector<MatchScore> scores;
  std::vector<std::string> selected;
  // True when selection fell back to random sampling.
  bool random_fallback = false;
  std::vector<double> mid_loss;
  std::vector<federation::RoundRecord> stage5;
  std::optional<double> final_accuracy;
  double epsilon = 0.0;
  privacy::PrivacyLedger ledger;
  ParamSet stage1_params;
};

struct PipelineResult {
  ParamSet params;
  PipelineReport report;
};

struct PipelineInputs {
  const corpus::Corpus* public_docs = nullptr;
  const std::vector<federation::ClientData>* clients = nullptr;
  const ParamSet* teacher = nullptr;
  const tokenizer::TokenizerModel* tokenizer = nullptr;
  ParamSet init;
  federation::EvalFn eval;
};

PipelineResult run_pipeline(const PipelineConfig& config, const PipelineInputs& in);

// Resumes the pipeline from a stage-1 state, so several selection variants can
// share one first stage. `state` must sit at round config.t_prime.
PipelineResult run_from_stage1(const PipelineConfig& config, const PipelineInputs& in,
                               federation::FederationState state,
                               std::vector<federation::RoundRecord> stage1);

struct PplRow {
  std::string doc_id;
  corpus::Origin origin = corpus::Origin::kPublic;
  double ppl_priv = 0.0;
  double ppl_pub = 0.0;
};

std::vector<PplRow> ppl_scatter_export(const corpus::Corpus& public_docs,
                                       const corpus::Corpus& private_sample, const ParamSet& priv,
                                       const ParamSet& teacher,
                                       const tokenizer::TokenizerModel& tok);

void write_scores_csv(const std::filesystem::path& path, std::span<const MatchScore> scores);
void write_ppl_csv(const std::filesystem::path& path, std::span<const PplRow> rows);

}  // namespace dpfl::matching

#endif  // DPFL_MATCHING_MATCHING_H_

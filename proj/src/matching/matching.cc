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

#include "dpfl/matching/matching.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <unordered_map>

#include "dpfl/common/error.h"
#include "dpfl/common/rng.h"

namespace dpfl::matching {
namespace {

std::vector<model::Sequence> encode_all(const corpus::Corpus& docs,
                                        const tokenizer::TokenizerModel& tok, std::size_t max_len) {
  std::vector<model::Sequence> out;
  out.reserve(docs.size());
  for (const auto& d : docs.documents) {
    auto ids = tok.encode_words(d.words);
    if (ids.size() > max_len) ids.resize(max_len);
    out.push_back(std::move(ids));
  }
  return out;
}

std::size_t take_count(double q, std::size_t n) {
  if (!(q >= 0.0 && q <= 1.0)) throw ValidationError("q", "must lie in [0, 1]");
  return static_cast<std::size_t>(std::floor(q * static_cast<double>(n)));
}

corpus::Corpus pick(const corpus::Corpus& docs, std::span<const std::string> ids) {
  std::unordered_map<std::string, std::size_t> where;
  for (std::size_t i = 0; i < docs.size(); ++i) where.emplace(docs.documents[i].doc_id, i);
  corpus::Corpus out{docs.origin, {}};
  for (const auto& id : ids) out.documents.push_back(docs.documents.at(where.at(id)));
  return out;
}

template <typename F>
auto stage(const char* tag, F&& f) {
  try {
    return f();
  } catch (const ValidationError&) {
    throw;
  } catch (const std::exception& e) {
    throw RuntimeError(tag, e.what());
  }
}

}  // namespace

std::vector<MatchScore> score_public(const corpus::Corpus& docs, const ParamSet& priv,
                                     const ParamSet& teacher,
                                     const tokenizer::TokenizerModel& tok) {
  if (docs.empty()) throw ValidationError("public_docs", "cannot score an empty corpus");
  if (priv.config.vocab_size != tok.vocab_size() || teacher.config.vocab_size != tok.vocab_size()) {
    throw ValidationError("tokenizer", "both models must share the tokenizer's vocabulary");
  }
  const auto priv_lp = model::avg_log_probs(priv, encode_all(docs, tok, priv.config.max_seq_len));
  const auto pub_lp =
      model::avg_log_probs(teacher, encode_all(docs, tok, teacher.config.max_seq_len));
  std::vector<MatchScore> out(docs.size());
  for (std::size_t i = 0; i < docs.size(); ++i) {
    out[i] = {docs.documents[i].doc_id, priv_lp[i], pub_lp[i], priv_lp[i] + pub_lp[i]};
  }
  return out;
}

std::vector<std::string> select_top(std::span<const MatchScore> scores, double q,
                                    bool use_pub_score) {
  const std::size_t n = take_count(q, scores.size());
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  auto key = [&](std::size_t i) {
    return use_pub_score ? scores[i].combined : scores[i].logp_priv;
  };
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (key(a) != key(b)) return key(a) > key(b);
    return scores[a].doc_id < scores[b].doc_id;
  });
  std::vector<std::string> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(scores[order[i]].doc_id);
  return out;
}

std::vector<std::string> select_random(const corpus::Corpus& docs, double q, std::uint64_t seed) {
  const std::size_t n = take_count(q, docs.size());
  std::vector<std::size_t> order(docs.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "random-subset"));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::string> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(docs.documents[order[i]].doc_id);
  return out;
}

void PipelineConfig::validate() const {
  if (t_prime > fl.total_rounds) {
    throw ValidationError("pipeline.t_prime", "must not exceed fl.total_rounds");
  }
  if (!(q >= 0.0 && q <= 1.0)) throw ValidationError("pipeline.q", "must lie in [0, 1]");
  distill.validate();
}

PipelineResult run_from_stage1(const PipelineConfig& config, const PipelineInputs& in,
                               federation::FederationState state,
                               std::vector<federation::RoundRecord> stage1) {
  config.validate();
  if (state.round != config.t_prime) {
    throw ValidationError("state", "stage-1 state is at round " + std::to_string(state.round) +
                                       ", expected " + std::to_string(config.t_prime));
  }
  PipelineResult out;
  out.report.stage1 = std::move(stage1);
  out.report.stage1_params = state.params;

  // Stages 2-3 read only the stage-1 checkpoint and public data.
  const bool matched = config.selection == SelectionMode::kMatched && config.t_prime > 0;
  out.report.random_fallback = config.selection == SelectionMode::kMatched && !matched;
  if (take_count(config.q, in.public_docs->size()) > 0) {
    if (matched) {
      out.report.scores = stage("pipeline.score", [&] {
        return score_public(*in.public_docs, state.params, *in.teacher, *in.tokenizer);
      });
      out.report.selected = select_top(out.report.scores, config.q, config.use_pub_score);
    } else {
      out.report.selected = select_random(*in.public_docs, config.q, config.fl.seed);
    }
  }

  if (!out.report.selected.empty() && config.mid.steps > 0) {
    state.params = stage("pipeline.mid", [&] {
      const corpus::Corpus chosen = pick(*in.public_docs, out.report.selected);
      const auto records =
          distill::extract_topk(*in.teacher, chosen, *in.tokenizer, config.distill.k);
      auto r = distill::public_train(state.params, records, config.distill, config.mid);
      out.report.mid_loss = std::move(r.loss_trace);
      return std::move(r.params);
    });
  }

  out.report.stage5 = stage("pipeline.stage5", [&] {
    return federation::train(state, *in.clients, config.fl, config.t_prime,
                             config.fl.total_rounds, in.eval);
  });
  out.report.epsilon = privacy::account_epsilon(state.ledger);
  out.report.ledger = state.ledger;
  if (in.eval) out.report.final_accuracy = in.eval(state.params);
  out.params = std::move(state.params);
  return out;
}

PipelineResult run_pipeline(const PipelineConfig& config, const PipelineInputs& in) {
  config.validate();
  if (!in.public_docs || !in.clients || !in.teacher || !in.tokenizer) {
    throw ValidationError("pipeline", "public docs, clients, teacher and tokenizer are required");
  }
  auto state = federation::init_state(in.init, config.fl, in.clients->size());
  auto stage1 = stage("pipeline.stage1", [&] {
    return federation::train(state, *in.clients, config.fl, 0, config.t_prime, in.eval);
  });
  return run_from_stage1(config, in, std::move(state), std::move(stage1));
}

std::vector<PplRow> ppl_scatter_export(const corpus::Corpus& public_docs,
                                       const corpus::Corpus& private_sample, const ParamSet& priv,
                                       const ParamSet& teacher,
                                       const tokenizer::TokenizerModel& tok) {
  std::vector<PplRow> rows;
  for (const corpus::Corpus* c : {&public_docs, &private_sample}) {
    if (c->empty()) continue;
    for (const auto& s : score_public(*c, priv, teacher, tok)) {
      rows.push_back({s.doc_id, c->origin, model::perplexity(s.logp_priv),
                      model::perplexity(s.logp_pub)});
    }
  }
  return rows;
}

void write_scores_csv(const std::filesystem::path& path, std::span<const MatchScore> scores) {
  std::ofstream out(path);
  if (!out) throw RuntimeError("match", "cannot write " + path.string());
  out << "doc_id,logp_priv,logp_pub,combined\n";
  char buf[128];
  for (const auto& s : scores) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g", s.logp_priv, s.logp_pub, s.combined);
    out << s.doc_id << ',' << buf << '\n';
  }
}

void write_ppl_csv(const std::filesystem::path& path, std::span<const PplRow> rows) {
  std::ofstream out(path);
  if (!out) throw RuntimeError("ppl-export", "cannot write " + path.string());
  out << "doc_id,origin,ppl_priv,ppl_pub\n";
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g", r.ppl_priv, r.ppl_pub);
    out << r.doc_id << ',' << corpus::origin_name(r.origin) << ',' << buf << '\n';
  }
}

}  // namespace dpfl::matching

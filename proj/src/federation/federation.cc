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

#include "dpfl/federation/federation.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "dpfl/common/error.h"
#include "dpfl/common/rng.h"
#include "dpfl/model/optim.h"

namespace dpfl::federation {

void FLConfig::validate(std::size_t pool_size) const {
  if (clients_per_round < 1) throw ValidationError("fl.clients_per_round", "must be >= 1");
  if (clients_per_round > pool_size) {
    throw ValidationError("fl.clients_per_round",
                          std::to_string(clients_per_round) + " exceeds client pool of " +
                              std::to_string(pool_size));
  }
  if (local_batch_size < 1) throw ValidationError("fl.local_batch_size", "must be >= 1");
  if (local_epochs < 1) throw ValidationError("fl.local_epochs", "must be >= 1");
  if (max_examples_per_client < 1) {
    throw ValidationError("fl.max_examples_per_client", "must be >= 1");
  }
  if (total_rounds < 1) throw ValidationError("fl.total_rounds", "must be >= 1");
  if (!(server_lr >= 0.0)) throw ValidationError("fl.server_lr", "must be >= 0");
  if (!(client_lr >= 0.0)) throw ValidationError("fl.client_lr", "must be >= 0");
  if (!(target_quantile >= 0.0 && target_quantile <= 1.0)) {
    throw ValidationError("fl.target_quantile", "must lie in [0, 1]");
  }
  privacy.validate();
  if (privacy.total_rounds != total_rounds) {
    throw ValidationError("fl.privacy.total_rounds", "must equal fl.total_rounds");
  }
  if (adaptive_clip && std::isinf(privacy.clip_norm)) {
    throw ValidationError("fl.adaptive_clip", "needs a finite initial clip norm");
  }
}

std::vector<ClientData> tokenize_clients(const std::vector<corpus::ClientDataset>& clients,
                                         const tokenizer::TokenizerModel& tok,
                                         std::size_t max_len) {
  std::vector<ClientData> out;
  out.reserve(clients.size());
  for (const auto& c : clients) {
    ClientData d{c.client_id, {}};
    for (const auto& doc : c.examples) {
      auto ids = tok.encode_words(doc.words);
      if (ids.size() > max_len) ids.resize(max_len);
      if (ids.size() >= 2) d.examples.push_back(std::move(ids));
    }
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<std::size_t> sample_clients(std::size_t pool_size, std::size_t round, std::size_t n,
                                        std::uint64_t seed) {
  if (n < 1 || n > pool_size) {
    throw ValidationError("clients_per_round", "cohort of " + std::to_string(n) +
                                                   " cannot be drawn from a pool of " +
                                                   std::to_string(pool_size));
  }
  if (round < 1) throw ValidationError("round", "rounds are 1-based");
  const std::size_t per_epoch = pool_size / n;
  const std::size_t epoch = (round - 1) / per_epoch;
  const std::size_t slot = (round - 1) % per_epoch;
  std::vector<std::size_t> perm(pool_size);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(derive_seed(seed, "cohort", epoch));
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::size_t> cohort(perm.begin() + slot * n, perm.begin() + (slot + 1) * n);
  std::sort(cohort.begin(), cohort.end());
  return cohort;
}

std::uint64_t client_seed(std::uint64_t seed, std::size_t round, std::size_t index) {
  return derive_seed(derive_seed(seed, "client", round), "member", index);
}

LocalResult local_train(const ClientData& client, const ParamSet& global, const FLConfig& config,
                        std::uint64_t seed) {
  if (client.examples.empty()) {
    throw ValidationError("client", "client '" + client.client_id + "' has no examples");
  }
  Rng rng(seed);
  std::vector<std::size_t> order(client.examples.size());
  std::iota(order.begin(), order.end(), 0);
  if (order.size() > config.max_examples_per_client) {
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(config.max_examples_per_client);
    std::sort(order.begin(), order.end());
  }
  LocalResult result;
  result.examples_used = order.size();
  if (config.client_lr == 0.0) {
    result.delta = TensorMap::zeros_like(global.tensors);
    result.mean_loss = model::evaluate_loss(global, client.examples).lm;
    return result;
  }
  ParamSet local = global;
  double loss_sum = 0.0;
  std::size_t batches = 0;
  std::vector<Sequence> batch;
  for (std::size_t epoch = 0; epoch < config.local_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += config.local_batch_size) {
      batch.clear();
      const std::size_t stop = std::min(order.size(), start + config.local_batch_size);
      for (std::size_t i = start; i < stop; ++i) batch.push_back(client.examples[order[i]]);
      const auto g = model::backward(local, batch);
      model::sgd_step(local.tensors, g.grads, config.client_lr);
      loss_sum += g.loss.lm;
      ++batches;
    }
  }
  result.mean_loss = loss_sum / static_cast<double>(batches);
  result.delta = local.tensors - global.tensors;
  return result;
}

FederationState init_state(ParamSet params, const FLConfig& config, std::size_t pool_size) {
  config.validate(pool_size);
  FederationState s;
  const double stddev = config.privacy.noise_multiplier * config.privacy.clip_norm;
  s.tree = privacy::TreeNoise(params.tensors, std::isfinite(stddev) ? stddev : 0.0,
                              config.total_rounds, derive_seed(config.seed, "noise"));
  s.ledger.spec = config.privacy;
  s.ledger.max_participations = 1;
  s.clip_norm = config.privacy.clip_norm;
  s.participations.assign(pool_size, 0);
  s.cumulative_noise = TensorMap::zeros_like(params.tensors);
  s.params = std::move(params);
  return s;
}

RoundRecord run_round(FederationState& state, const std::vector<ClientData>& pool,
                      const std::vector<std::size_t>& cohort, const FLConfig& config,
                      const EvalFn& eval) {
  if (cohort.empty()) throw ValidationError("cohort", "must not be empty");
  if (state.round >= config.total_rounds) {
    throw ValidationError("round", "all " + std::to_string(config.total_rounds) +
                                       " rounds already executed");
  }
  const std::size_t t = state.round + 1;
  const double clip = state.clip_norm;
  TensorMap sum = TensorMap::zeros_like(state.params.tensors);
  double norm_sum = 0.0, loss_sum = 0.0;
  std::size_t below = 0;
  for (std::size_t idx : cohort) {
    if (idx >= pool.size()) throw ValidationError("cohort", "client index out of range");
    LocalResult local;
    try {
      local = local_train(pool[idx], state.params, config,
                          client_seed(config.seed, t, idx));
    } catch (const std::exception& e) {
      throw RuntimeError("client " + pool[idx].client_id, e.what());
    }
    const double norm = local.delta.norm();
    below += norm <= clip;
    norm_sum += std::min(norm, clip);
    loss_sum += local.mean_loss;
    sum.add_scaled(std::isinf(clip) ? local.delta : privacy::clip_update(local.delta, clip), 1.0);
    ++state.participations[idx];
  }
  const double n = static_cast<double>(cohort.size());
  sum.scale(1.0 / n);

  const TensorMap inc = state.tree.noise_increment(t);
  state.cumulative_noise.add_scaled(inc, 1.0);
  // Node noise is drawn at the initial clip norm; rescale to the current one.
  const double noise_scale =
      config.adaptive_clip ? clip / config.privacy.clip_norm / n : 1.0 / n;
  if (state.tree.stddev() > 0.0) sum.add_scaled(inc, noise_scale);
  state.params.tensors.add_scaled(sum, config.server_lr);
  if (const auto bad = state.params.tensors.first_non_finite(); !bad.empty()) {
    throw RuntimeError("server", "non-finite parameters in '" + bad + "' after round " +
                                     std::to_string(t));
  }

  state.round = t;
  state.ledger.rounds_executed = t;
  state.ledger.max_participations =
      std::max<std::size_t>(1, *std::max_element(state.participations.begin(),
                                                 state.participations.end()));
  const double fraction_below = static_cast<double>(below) / n;
  if (config.adaptive_clip) {
    state.clip_norm = privacy::adaptive_clip_step(clip, fraction_below, config.target_quantile,
                                                  config.clip_lr);
  }

  RoundRecord r;
  r.round = t;
  r.mean_update_norm = norm_sum / n;
  r.clipped_fraction = 1.0 - fraction_below;
  r.train_loss = loss_sum / n;
  r.clip_norm = clip;
  r.epsilon = privacy::account_epsilon(state.ledger);
  if (eval && config.eval_every > 0 && (t % config.eval_every == 0 || t == config.total_rounds)) {
    r.eval_accuracy = eval(state.params);
  }
  return r;
}

std::vector<RoundRecord> train(FederationState& state, const std::vector<ClientData>& pool,
                               const FLConfig& config, std::size_t t_start, std::size_t t_end,
                               const EvalFn& eval) {
  if (t_start > t_end || t_end > config.total_rounds) {
    throw ValidationError("rounds", "need t_start <= t_end <= total_rounds, got [" +
                                        std::to_string(t_start) + ", " + std::to_string(t_end) +
                                        "]");
  }
  if (state.round != t_start) {
    throw ValidationError("t_start", "state is at round " + std::to_string(state.round) +
                                         ", not " + std::to_string(t_start));
  }
  std::vector<RoundRecord> records;
  records.reserve(t_end - t_start);
  for (std::size_t t = t_start + 1; t <= t_end; ++t) {
    const auto cohort = sample_clients(pool.size(), t, config.clients_per_round,
                                       derive_seed(config.seed, "sampling"));
    records.push_back(run_round(state, pool, cohort, config, eval));
  }
  return records;
}

std::string rounds_csv_header() { return "round,loss,acc,clip_norm,clipped_frac,epsilon"; }

std::string rounds_csv_row(const RoundRecord& r) {
  char buf[256];
  char acc[32] = "";
  if (r.eval_accuracy) std::snprintf(acc, sizeof(acc), "%.10g", *r.eval_accuracy);
  std::snprintf(buf, sizeof(buf), "%zu,%.10g,%s,%.10g,%.10g,%.10g", r.round, r.train_loss, acc,
                r.clip_norm, r.clipped_fraction, r.epsilon);
  return buf;
}

}  // namespace dpfl::federation

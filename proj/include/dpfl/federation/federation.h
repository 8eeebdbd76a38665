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

#ifndef DPFL_FEDERATION_FEDERATION_H_
#define DPFL_FEDERATION_FEDERATION_H_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dpfl/corpus/corpus.h"
#include "dpfl/model/lm.h"
#include "dpfl/privacy/privacy.h"
#include "dpfl/tokenizer/tokenizer.h"

namespace dpfl::federation {

using model::ParamSet;
using model::Sequence;
using model::TensorMap;

struct FLConfig {
  std::size_t clients_per_round = 100;
  std::size_t local_batch_size = 16;
  std::size_t local_epochs = 1;
  std::size_t max_examples_per_client = 256;
  // Mirrored into privacy.total_rounds by validate().
  std::size_t total_rounds = 200;
  double server_lr = 1.0;
  double client_lr = 0.1;
  privacy::PrivacySpec privacy;
  bool adaptive_clip = false;
  double target_quantile = 0.5;
  double clip_lr = 0.2;
  // 0 disables scheduled evaluation.
  std::size_t eval_every = 0;
  std::uint64_t seed = 0;

  void validate(std::size_t pool_size) const;
};

struct ClientData {
  std::string client_id;
  std::vector<Sequence> examples;
};

// Drops documents that encode to fewer than two ids.
std::vector<ClientData> tokenize_clients(const std::vector<corpus::ClientDataset>& clients,
                                         const tokenizer::TokenizerModel& tok,
                                         std::size_t max_len);

struct RoundRecord {
  std::size_t round = 0;
  double mean_update_norm = 0.0;
  double clipped_fraction = 0.0;
  double train_loss = 0.0;
  std::optional<double> eval_accuracy;
  double clip_norm = 0.0;
  double epsilon = privacy::kNotPrivate;
};

// Pool indices for 1-based `round`, ascending. Rounds are grouped into epochs
// of floor(pool / n); each epoch walks a fresh seeded permutation.
std::vector<std::size_t> sample_clients(std::size_t pool_size, std::size_t round, std::size_t n,
                                        std::uint64_t seed);

struct LocalResult {
  TensorMap delta;
  double mean_loss = 0.0;
  std::size_t examples_used = 0;
};

// Seed of pool member `index` in 1-based `round`.
std::uint64_t client_seed(std::uint64_t seed, std::size_t round, std::size_t index);

LocalResult local_train(const ClientData& client, const ParamSet& global, const FLConfig& config,
                        std::uint64_t seed);

struct FederationState {
  ParamSet params;
  privacy::TreeNoise tree;
  privacy::PrivacyLedger ledger;
  double clip_norm = 1.0;
  std::size_t round = 0;
  std::vector<std::size_t> participations;
  // Raw sum of every noise increment applied so far.
  TensorMap cumulative_noise;
};

FederationState init_state(ParamSet params, const FLConfig& config, std::size_t pool_size);

using EvalFn = std::function<std::optional<double>(const ParamSet&)>;

// Executes round state.round + 1 on `cohort` (pool indices).
RoundRecord run_round(FederationState& state, const std::vector<ClientData>& pool,
                      const std::vector<std::size_t>& cohort, const FLConfig& config,
                      const EvalFn& eval = {});

// Rounds t_start + 1 .. t_end, continuing the tree and ledger held in `state`.
std::vector<RoundRecord> train(FederationState& state, const std::vector<ClientData>& pool,
                               const FLConfig& config, std::size_t t_start, std::size_t t_end,
                               const EvalFn& eval = {});

std::string rounds_csv_header();
std::string rounds_csv_row(const RoundRecord& r);

}  // namespace dpfl::federation

#endif  // DPFL_FEDERATION_FEDERATION_H_

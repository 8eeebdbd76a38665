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

#ifndef DPFL_MODEL_LM_H_
#define DPFL_MODEL_LM_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "dpfl/corpus/corpus.h"
#include "dpfl/model/tensor.h"
#include "dpfl/tokenizer/tokenizer.h"

namespace dpfl::model {

enum class Arch { kRecurrent, kAttention };

std::string_view arch_name(Arch arch);
Arch parse_arch(std::string_view name);

struct LMConfig {
  Arch arch = Arch::kRecurrent;
  std::size_t vocab_size = 512;
  std::size_t embed_dim = 32;
  std::size_t hidden_dim = 64;
  std::size_t max_seq_len = 20;

  void validate() const;
  friend bool operator==(const LMConfig&, const LMConfig&) = default;
};

struct ParamSet {
  LMConfig config;
  TensorMap tensors;

  friend bool operator==(const ParamSet&, const ParamSet&) = default;
};

using Sequence = std::vector<int>;
// Teacher entries for one predicted position: (token id, logit), descending.
using TopK = std::vector<std::pair<int, double>>;

// recurrent: V*E + E*4H + H*4H + 4H + H*V + V
// attention: V*E + S*E + 3*E*H + H*E + E*H + H + H*E + E + E*V + V
std::size_t parameter_count(const LMConfig& config);

// Weights ~ U(-b, b) with b = sqrt(6 / (fan_in + fan_out)); biases zero.
ParamSet init_params(const LMConfig& config, std::uint64_t seed);

// Logits of shape (len - 1, V); row i predicts ids[i + 1] from ids[0..i].
Tensor forward(const ParamSet& params, std::span<const int> ids);
std::vector<Tensor> forward_batch(const ParamSet& params, std::span<const Sequence> batch);

// Mean cross-entropy over rows whose target differs from ignore_id (-1 masks
// nothing).
double loss_lm(const Tensor& logits, std::span<const int> targets,
               int ignore_id = tokenizer::kPadId);

struct LossSpec {
  double lm_weight = 1.0;
  double kd_weight = 0.0;
  double temperature = 1.0;
  // teacher[s][p]: entries for predicted position p of sequence s. Required
  // whenever kd_weight != 0.
  std::span<const std::vector<TopK>> teacher;
};

struct LossValue {
  double total = 0.0;
  double lm = 0.0;
  double kd = 0.0;
  std::size_t positions = 0;
};

struct GradResult {
  LossValue loss;
  GradSet grads;
};

// Exact gradients of lm_weight * L_LM + kd_weight * L_KD, each a mean over the
// batch's unmasked positions.
GradResult backward(const ParamSet& params, std::span<const Sequence> batch,
                    const LossSpec& spec = {});
GradResult backward(const ParamSet& params, std::span<const int> ids, const LossSpec& spec = {});
LossValue evaluate_loss(const ParamSet& params, std::span<const Sequence> batch,
                        const LossSpec& spec = {});

// Mean log-probability of the gold next tokens (PAD targets excluded).
double avg_log_prob(const ParamSet& params, std::span<const int> ids);
std::vector<double> avg_log_probs(const ParamSet& params, std::span<const Sequence> sequences);
double perplexity(double avg_log_prob);

struct AccuracyCounts {
  std::size_t correct = 0;
  std::size_t total = 0;

  // nullopt: no measurable tokens.
  std::optional<double> rate() const;
  AccuracyCounts& operator+=(const AccuracyCounts& o) {
    correct += o.correct;
    total += o.total;
    return *this;
  }
};

// Argmax matches over positions whose gold token is neither OOV nor PAD.
AccuracyCounts next_token_accuracy(const ParamSet& params, std::span<const Sequence> sequences);
std::optional<double> evaluate_accuracy(const ParamSet& params, const corpus::Corpus& corpus,
                                        const tokenizer::TokenizerModel& tok);

// BOS followed by argmax continuations, `length` ids in total.
Sequence greedy_generate(const ParamSet& params, std::size_t length);

void save_params(const std::filesystem::path& path, const ParamSet& params);
ParamSet load_params(const std::filesystem::path& path);

}  // namespace dpfl::model

#endif  // DPFL_MODEL_LM_H_

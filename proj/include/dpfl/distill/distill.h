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

#ifndef DPFL_DISTILL_DISTILL_H_
#define DPFL_DISTILL_DISTILL_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dpfl/corpus/corpus.h"
#include "dpfl/model/lm.h"
#include "dpfl/tokenizer/tokenizer.h"

namespace dpfl::distill {

using model::ParamSet;
using model::Sequence;
using model::TopK;

struct DistillConfig {
  std::size_t k = 10;
  double temperature = 1.0;
  double beta = 1e-2;

  void validate() const;
};

struct DistillRecord {
  std::string doc_id;
  Sequence ids;
  // positions[p] predicts ids[p + 1].
  std::vector<TopK> positions;

  friend bool operator==(const DistillRecord&, const DistillRecord&) = default;
};

struct DistillCorpus {
  std::size_t k = 0;
  std::size_t vocab_size = 0;
  std::uint64_t tokenizer_hash = 0;
  std::vector<DistillRecord> records;

  // Throws ValidationError naming the first offending record.
  void validate() const;
  friend bool operator==(const DistillCorpus&, const DistillCorpus&) = default;
};

// k largest entries, descending; ties go to the smaller id.
TopK topk_row(std::span<const double> logits, std::size_t k);

DistillCorpus extract_topk(const ParamSet& teacher, const corpus::Corpus& corpus,
                           const tokenizer::TokenizerModel& tok, std::size_t k);

// Teacher target is softmax(z_T / t) renormalized over the stored entries.
// Student probabilities use the full row at temperature t.
double kd_loss(std::span<const double> student_logits, const TopK& teacher, double temperature);

// Mean LM cross-entropy plus beta times mean kd_loss over the same positions.
double pub_loss(const model::Tensor& student_logits, std::span<const int> targets,
                const std::vector<TopK>& teacher, const DistillConfig& config);

model::GradResult pub_loss_grad(const ParamSet& student, std::span<const Sequence> batch,
                                std::span<const std::vector<TopK>> teacher,
                                const DistillConfig& config);

struct PublicTrainConfig {
  std::size_t steps = 100;
  std::size_t batch_size = 128;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

struct PublicTrainResult {
  ParamSet params;
  std::vector<double> loss_trace;
};

// Adam on pub_loss over the records.
PublicTrainResult public_train(ParamSet student, const DistillCorpus& data,
                               const DistillConfig& config, const PublicTrainConfig& train);
// Adam on the plain LM loss.
PublicTrainResult public_train(ParamSet student, std::span<const Sequence> data,
                               const PublicTrainConfig& train);

std::vector<Sequence> sequences(const DistillCorpus& data);
DistillCorpus subset(const DistillCorpus& data, std::span<const std::string> doc_ids);

void save_distill_corpus(const std::filesystem::path& path, const DistillCorpus& data);
DistillCorpus load_distill_corpus(const std::filesystem::path& path);

}  // namespace dpfl::distill

#endif  // DPFL_DISTILL_DISTILL_H_

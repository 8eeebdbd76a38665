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

#ifndef DPFL_TESTS_SUPPORT_LAB_H_
#define DPFL_TESTS_SUPPORT_LAB_H_

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "dpfl/corpus/corpus.h"
#include "dpfl/distill/distill.h"
#include "dpfl/federation/federation.h"
#include "dpfl/matching/matching.h"
#include "dpfl/model/lm.h"
#include "dpfl/tokenizer/tokenizer.h"

namespace dpfl::lab {

// Desk-scale experiment setup shared by the integration and acceptance suites.
struct LabSpec {
  std::uint64_t seed = 1;
  double alpha = 0.5;
  std::size_t words = 48;
  std::pair<std::size_t, std::size_t> doc_length = {5, 20};
  std::size_t n_public = 3000;
  // Share of the public pool drawn from the private-side source (an in-domain
  // slice of an otherwise out-of-domain web corpus). Ids carry a "public-in-" prefix.
  double in_domain_share = 0.0;
  std::size_t n_private = 1600;
  std::size_t n_dev = 400;
  std::size_t n_clients = 200;
  double heterogeneity = 0.5;
  std::size_t vocab = 96;
  std::size_t max_seq_len = 20;
  std::size_t student_embed = 16;
  std::size_t student_hidden = 32;
  std::size_t teacher_embed = 32;
  std::size_t teacher_hidden = 96;
  std::size_t teacher_steps = 1500;
  bool train_teacher = true;
  std::size_t teacher_batch = 64;
  double teacher_lr = 5e-3;
};

struct Lab {
  LabSpec spec;
  corpus::Corpus pub;
  corpus::Corpus pub_heldout;
  corpus::Corpus priv_train;
  corpus::Corpus priv_dev;
  tokenizer::TokenizerModel tok;
  std::vector<federation::ClientData> pool;
  std::vector<model::Sequence> pub_seqs;
  std::vector<model::Sequence> pub_heldout_seqs;
  std::vector<model::Sequence> dev_seqs;
  model::ParamSet teacher;
  model::LMConfig student;
};

Lab build_lab(const LabSpec& spec);

double dev_accuracy(const Lab& lab, const model::ParamSet& params);
federation::EvalFn dev_eval(const Lab& lab);

// Desk federation settings: a quarter of the pool per round, small local
// batches, and a clip norm every client update reaches.
struct FlKnobs {
  double noise_multiplier = 0.0;
  std::size_t rounds = 200;
  std::size_t cohort = 50;
  double clip_norm = 0.2;
  double server_lr = 0.5;
  double client_lr = 1.0;
  std::size_t batch = 4;
  std::uint64_t seed = 0;
};

inline constexpr double kHighNoise = 8.83;
inline constexpr double kLowNoise = 1.13;

federation::FLConfig fl_config(const FlKnobs& k);

// Adam pre-training of a fresh student on the public corpus.
model::ParamSet pretrain_student(const Lab& lab, std::uint64_t seed, std::size_t steps,
                                 std::size_t batch = 64, double lr = 5e-3);

double median(std::vector<double> v);

}  // namespace dpfl::lab

#endif  // DPFL_TESTS_SUPPORT_LAB_H_

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

#ifndef DPFL_TOKENIZER_TOKENIZER_H_
#define DPFL_TOKENIZER_TOKENIZER_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dpfl/corpus/corpus.h"

namespace dpfl::tokenizer {

// Special ids are fixed across every vocabulary so models can rely on them.
inline constexpr int kPadId = 0;
inline constexpr int kOovId = 1;
inline constexpr int kBosId = 2;
inline constexpr int kEosId = 3;
inline constexpr std::size_t kNumSpecials = 4;

inline constexpr std::string_view kEndOfWord = "</w>";

enum class TokenizerKind { kUnigramWord, kBpeSubword };

std::string_view kind_name(TokenizerKind kind);

class Vocab {
 public:
  // Starts with the four special tokens at ids 0..3.
  Vocab();

  // Returns the id of `token`, inserting it if absent.
  int add(std::string token);
  std::optional<int> find(std::string_view token) const;
  const std::string& token(int id) const;
  std::size_t size() const { return id_to_token_.size(); }
  bool is_special(int id) const { return id >= 0 && static_cast<std::size_t>(id) < kNumSpecials; }
  const std::vector<std::string>& tokens() const { return id_to_token_; }

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

class TokenizerModel {
 public:
  TokenizerModel(TokenizerKind kind, Vocab vocab,
                 std::vector<std::pair<std::string, std::string>> merges);

  TokenizerKind kind() const { return kind_; }
  const Vocab& vocab() const { return vocab_; }
  std::size_t vocab_size() const { return vocab_.size(); }
  const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }

  // Token ids of one word, without BOS/EOS. An unknown word (unigram) or a word
  // with a character outside the training alphabet (subword) becomes one OOV.
  std::vector<int> encode_word(std::string_view word) const;
  std::size_t word_token_count(std::string_view word) const;
  bool is_oov_word(std::string_view word) const;

  std::vector<int> encode_words(std::span<const std::string> words) const;

  std::string serialize() const;
  static TokenizerModel deserialize(std::string_view text);
  std::uint64_t fingerprint() const;

 private:
  std::vector<std::string> segment(std::string_view word) const;

  TokenizerKind kind_;
  Vocab vocab_;
  std::vector<std::pair<std::string, std::string>> merges_;
  std::unordered_map<std::string, std::size_t> merge_rank_;
};

TokenizerModel build_unigram_vocab(const corpus::Corpus& corpus, std::size_t k);
TokenizerModel train_bpe(const corpus::Corpus& corpus, std::size_t target_vocab);

// BOS + tokens + EOS.
std::vector<int> encode(const TokenizerModel& model, std::string_view text);
// Drops special tokens; subword pieces are joined at end-of-word markers.
std::string decode(const TokenizerModel& model, std::span<const int> ids);

// Fraction of subword tokens covered by correctly predicted words; nullopt
// when every gold word is OOV ("no measurable tokens").
std::optional<double> token_accuracy_from_word_predictions(
    std::span<const std::string> gold_words, std::span<const std::string> predicted_words,
    const TokenizerModel& model);

void save_tokenizer(const std::filesystem::path& path, const TokenizerModel& model);
TokenizerModel load_tokenizer(const std::filesystem::path& path);

// Encodes every document, truncating to `max_len` ids (BOS kept, EOS dropped
// when it does not fit).
std::vector<std::vector<int>> encode_corpus(const TokenizerModel& model,
                                            const corpus::Corpus& corpus, std::size_t max_len);

}  // namespace dpfl::tokenizer

#endif  // DPFL_TOKENIZER_TOKENIZER_H_

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

#include <filesystem>
#include <map>
#include <random>

#include "dpfl/common/error.h"
#include "dpfl/corpus/corpus.h"
#include "dpfl/tokenizer/tokenizer.h"

namespace dpfl::tokenizer {
namespace {

using corpus::Corpus;
using corpus::Document;
using Merges = std::vector<std::pair<std::string, std::string>>;

Corpus from_lines(const std::vector<std::string>& lines) {
  Corpus c;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    c.documents.push_back({"d" + std::to_string(i), corpus::split_words(lines[i])});
  }
  return c;
}

// Reference BPE over every word occurrence, ASCII only.
Merges reference_bpe(const Corpus& c, std::size_t n_merges) {
  std::vector<std::vector<std::string>> occ;
  for (const auto& d : c.documents) {
    for (const auto& w : d.words) {
      std::vector<std::string> s;
      for (char ch : w) s.emplace_back(1, ch);
      s.emplace_back("</w>");
      occ.push_back(s);
    }
  }
  Merges out;
  while (out.size() < n_merges) {
    std::map<std::pair<std::string, std::string>, int> counts;
    for (const auto& s : occ) {
      for (std::size_t i = 0; i + 1 < s.size(); ++i) ++counts[{s[i], s[i + 1]}];
    }
    if (counts.empty()) break;
    std::pair<std::string, std::string> best;
    int best_count = 0;
    for (const auto& [p, n] : counts) {
      if (n > best_count) best = p, best_count = n;
    }
    out.push_back(best);
    for (auto& s : occ) {
      std::vector<std::string> merged;
      for (std::size_t i = 0; i < s.size(); ++i) {
        if (i + 1 < s.size() && s[i] == best.first && s[i + 1] == best.second) {
          merged.push_back(s[i] + s[i + 1]);
          ++i;
        } else {
          merged.push_back(s[i]);
        }
      }
      s = merged;
    }
  }
  return out;
}

Corpus synthetic(std::size_t n) {
  corpus::ShiftSpec s;
  s.n_docs = n;
  s.base_seed = 3;
  return corpus::generate_corpus(s, corpus::Origin::kPublic);
}

TEST(Unigram, TopKWithOov) {
  const auto m = build_unigram_vocab(from_lines({"a a b"}), 1);
  EXPECT_EQ(m.vocab_size(), kNumSpecials + 1);
  EXPECT_EQ(m.vocab().token(kNumSpecials), "a");
  EXPECT_EQ(encode(m, "b"), (std::vector<int>{kBosId, kOovId, kEosId}));
  EXPECT_TRUE(m.is_oov_word("b"));
  EXPECT_TRUE(m.merges().empty());
}

TEST(Unigram, LexicographicTieBreak) {
  const auto m = build_unigram_vocab(from_lines({"y x y x"}), 2);
  EXPECT_EQ(m.vocab().token(kNumSpecials), "x");
  EXPECT_EQ(m.vocab().token(kNumSpecials + 1), "y");
}

TEST(Unigram, FullCoverageAndNonincreasingFrequency) {
  const auto c = synthetic(300);
  std::map<std::string, std::size_t> freq;
  for (const auto& d : c.documents) {
    for (const auto& w : d.words) ++freq[w];
  }
  const auto m = build_unigram_vocab(c, 1000);
  EXPECT_EQ(m.vocab_size(), kNumSpecials + freq.size());
  for (std::size_t id = kNumSpecials + 1; id < m.vocab_size(); ++id) {
    EXPECT_GE(freq[m.vocab().token(id - 1)], freq[m.vocab().token(id)]);
  }
  for (const auto& d : c.documents) {
    for (const auto& w : d.words) EXPECT_FALSE(m.is_oov_word(w));
  }
  EXPECT_THROW(build_unigram_vocab(c, 0), ValidationError);
}

TEST(Bpe, HandRunFirstMerges) {
  // "aaab</w>": (a,a) occurs twice; after merging, (a,b) wins the tie against
  // (aa,a) and (b,</w>) lexicographically.
  const auto m = train_bpe(from_lines({"aaab"}), kNumSpecials + 3 + 2);
  ASSERT_EQ(m.merges().size(), 2u);
  EXPECT_EQ(m.merges()[0], (std::pair<std::string, std::string>{"a", "a"}));
  EXPECT_EQ(m.merges()[1], (std::pair<std::string, std::string>{"a", "b"}));
}

TEST(Bpe, MatchesReferenceImplementation) {
  const auto c = synthetic(400);
  const auto m = train_bpe(c, 120);
  EXPECT_EQ(m.merges(), reference_bpe(c, m.merges().size()));
  EXPECT_EQ(m.vocab_size(), 120u);
}

TEST(Bpe, BaseVocabularyMeansCharacterSegmentation) {
  const auto c = from_lines({"ab ba", "abc"});
  const auto m = train_bpe(c, kNumSpecials + 3 + 1);
  EXPECT_TRUE(m.merges().empty());
  const auto ids = encode(m, "cab");
  ASSERT_EQ(ids.size(), 6u);
  EXPECT_EQ(m.vocab().token(ids[1]), "c");
  EXPECT_EQ(m.vocab().token(ids[4]), "</w>");
  EXPECT_THROW(train_bpe(c, kNumSpecials + 3), ValidationError);
}

TEST(Bpe, DeterministicAndRoundtrips) {
  const auto c = synthetic(300);
  const auto a = train_bpe(c, 90);
  const auto b = train_bpe(c, 90);
  EXPECT_EQ(a.merges(), b.merges());
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
  for (const auto& d : c.documents) {
    EXPECT_EQ(decode(a, encode(a, d.text())), corpus::normalize_text(d.text()));
  }
}

TEST(Bpe, NoOovOverTrainingAlphabet) {
  const auto c = synthetic(300);
  const auto m = train_bpe(c, 80);
  std::string alphabet;
  for (const auto& tok : m.vocab().tokens()) {
    if (tok.size() == 1) alphabet += tok;
  }
  ASSERT_FALSE(alphabet.empty());
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 500; ++trial) {
    std::string text;
    const int words = 1 + trial % 5;
    for (int w = 0; w < words; ++w) {
      if (w) text += ' ';
      for (std::size_t k = 0; k < 1 + rng() % 9; ++k) text += alphabet[rng() % alphabet.size()];
    }
    const auto ids = encode(m, text);
    EXPECT_EQ(std::count(ids.begin(), ids.end(), kOovId), 0) << text;
    EXPECT_EQ(decode(m, ids), text);
  }
  // A character outside the alphabet makes its whole word OOV.
  EXPECT_EQ(encode(m, "#"), (std::vector<int>{kBosId, kOovId, kEosId}));
}

TEST(Codec, EmptyTextAndBadIds) {
  const auto m = train_bpe(synthetic(50), 60);
  EXPECT_EQ(encode(m, ""), (std::vector<int>{kBosId, kEosId}));
  EXPECT_EQ(decode(m, std::vector<int>{kBosId, kEosId}), "");
  EXPECT_THROW(decode(m, std::vector<int>{static_cast<int>(m.vocab_size())}), ValidationError);
  EXPECT_THROW(decode(m, std::vector<int>{-1}), ValidationError);
}

TEST(Codec, EncodeCorpusTruncatesKeepingBos) {
  const auto m = build_unigram_vocab(from_lines({"a b c d e"}), 5);
  const auto seqs = encode_corpus(m, from_lines({"a b c d e", "a"}), 4);
  ASSERT_EQ(seqs.size(), 2u);
  EXPECT_EQ(seqs[0].size(), 4u);
  EXPECT_EQ(seqs[0].front(), kBosId);
  EXPECT_NE(seqs[0].back(), kEosId);
  EXPECT_EQ(seqs[1].size(), 3u);
  EXPECT_EQ(seqs[1].back(), kEosId);
}

TEST(TokenAccuracy, Examples) {
  // One merge: "ab" becomes (ab, </w>) and "abc" (ab, c, </w>).
  const std::vector<std::string> gold{"ab", "abc"};
  const auto m = train_bpe(from_lines({"ab abc"}), kNumSpecials + 3 + 1);
  const auto ids_ab = m.encode_word("ab"), ids_abc = m.encode_word("abc");
  const double expected =
      static_cast<double>(ids_ab.size()) / static_cast<double>(ids_ab.size() + ids_abc.size());
  EXPECT_EQ(token_accuracy_from_word_predictions(gold, gold, m), 1.0);
  EXPECT_EQ(token_accuracy_from_word_predictions(gold, std::vector<std::string>{"ab", "x"}, m), expected);
  EXPECT_THROW(token_accuracy_from_word_predictions(gold, std::vector<std::string>{"ab"}, m),
               ValidationError);
  const std::vector<std::string> oov{"#", "$"};
  EXPECT_FALSE(token_accuracy_from_word_predictions(oov, oov, m).has_value());
}

TEST(TokenAccuracy, TwoOfFiveTokens) {
  // Without merges "a" is (a, </w>) and "bc" is (b, c, </w>).
  const auto m = train_bpe(from_lines({"a bc"}), kNumSpecials + 3 + 1);
  ASSERT_EQ(m.encode_word("a").size(), 2u);
  ASSERT_EQ(m.encode_word("bc").size(), 3u);
  const std::vector<std::string> gold{"a", "bc"}, pred{"a", "bb"};
  EXPECT_DOUBLE_EQ(*token_accuracy_from_word_predictions(gold, pred, m), 0.4);
}

TEST(TokenAccuracy, EqualsWordAccuracyForOneTokenWords) {
  const auto c = synthetic(100);
  const auto m = build_unigram_vocab(c, 1000);
  std::vector<std::string> gold, pred;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < c.documents[0].words.size() + c.documents[1].words.size(); ++i) {
    const auto& d = i < c.documents[0].words.size() ? c.documents[0] : c.documents[1];
    const auto& w = d.words[i < c.documents[0].words.size() ? i : i - c.documents[0].words.size()];
    gold.push_back(w);
    pred.push_back(i % 3 ? w : "zzz");
    correct += i % 3 != 0;
  }
  EXPECT_DOUBLE_EQ(*token_accuracy_from_word_predictions(gold, pred, m),
                   static_cast<double>(correct) / static_cast<double>(gold.size()));
}

TEST(Serialization, BitExactReload) {
  const auto c = synthetic(120);
  for (const auto& m : {train_bpe(c, 70), build_unigram_vocab(c, 20)}) {
    const auto back = TokenizerModel::deserialize(m.serialize());
    EXPECT_EQ(back.serialize(), m.serialize());
    EXPECT_EQ(back.fingerprint(), m.fingerprint());
    EXPECT_EQ(back.merges(), m.merges());
    const auto path = std::filesystem::temp_directory_path() / "dpfl_tok_test.txt";
    save_tokenizer(path, m);
    const auto loaded = load_tokenizer(path);
    EXPECT_EQ(loaded.vocab().tokens(), m.vocab().tokens());
    EXPECT_EQ(encode(loaded, c.documents[3].text()), encode(m, c.documents[3].text()));
  }
}

TEST(Serialization, EscapesAwkwardTokens) {
  const auto m = build_unigram_vocab(from_lines({"tab\\x back\\slash"}), 5);
  const auto back = TokenizerModel::deserialize(m.serialize());
  EXPECT_EQ(back.vocab().tokens(), m.vocab().tokens());
}

}  // namespace
}  // namespace dpfl::tokenizer

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

#include "dpfl/tokenizer/tokenizer.h"

#include <algorithm>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "dpfl/common/error.h"
#include "dpfl/common/rng.h"

namespace dpfl::tokenizer {
namespace {

constexpr std::string_view kMagic = "dpfl-tokenizer v1";

// Splits a UTF-8 string into code-point strings. Malformed bytes stand alone.
std::vector<std::string> utf8_chars(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    if ((c & 0xE0) == 0xC0) len = 2;
    else if ((c & 0xF0) == 0xE0) len = 3;
    else if ((c & 0xF8) == 0xF0) len = 4;
    len = std::min(len, s.size() - i);
    out.emplace_back(s.substr(i, len));
    i += len;
  }
  return out;
}

std::string pair_key(std::string_view a, std::string_view b) {
  std::string key;
  key.reserve(a.size() + b.size() + 1);
  key.append(a);
  key.push_back('\x1f');
  key.append(b);
  return key;
}

void merge_in_place(std::vector<std::string>& symbols, const std::string& a,
                    const std::string& b) {
  std::vector<std::string> out;
  out.reserve(symbols.size());
  for (std::size_t i = 0; i < symbols.size();) {
    if (i + 1 < symbols.size() && symbols[i] == a && symbols[i + 1] == b) {
      out.push_back(a + b);
      i += 2;
    } else {
      out.push_back(std::move(symbols[i]));
      ++i;
    }
  }
  symbols = std::move(out);
}

std::string escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      case ' ': out += "\\s"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string unescape(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\' || i + 1 == s.size()) {
      out.push_back(s[i]);
      continue;
    }
    switch (s[++i]) {
      case '\\': out.push_back('\\'); break;
      case 'n': out.push_back('\n'); break;
      case 't': out.push_back('\t'); break;
      case 'r': out.push_back('\r'); break;
      case 's': out.push_back(' '); break;
      default: throw ValidationError("tokenizer", "bad escape sequence");
    }
  }
  return out;
}

std::map<std::string, std::size_t> word_counts(const corpus::Corpus& corpus) {
  std::map<std::string, std::size_t> counts;
  for (const auto& d : corpus.documents) {
    for (const auto& w : d.words) ++counts[w];
  }
  return counts;
}

const std::string kSpecialTokens[kNumSpecials] = {"<pad>", "<unk>", "<s>", "</s>"};

}  // namespace

std::string_view kind_name(TokenizerKind kind) {
  return kind == TokenizerKind::kUnigramWord ? "unigram_word" : "bpe_subword";
}

Vocab::Vocab() {
  for (const auto& t : kSpecialTokens) add(t);
}

int Vocab::add(std::string token) {
  auto it = token_to_id_.find(token);
  if (it != token_to_id_.end()) return it->second;
  const int id = static_cast<int>(id_to_token_.size());
  token_to_id_.emplace(token, id);
  id_to_token_.push_back(std::move(token));
  return id;
}

std::optional<int> Vocab::find(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  if (it == token_to_id_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
    throw ValidationError("token_id", "id " + std::to_string(id) + " out of range [0, " +
                                          std::to_string(id_to_token_.size()) + ")");
  }
  return id_to_token_[static_cast<std::size_t>(id)];
}

TokenizerModel::TokenizerModel(TokenizerKind kind, Vocab vocab,
                               std::vector<std::pair<std::string, std::string>> merges)
    : kind_(kind), vocab_(std::move(vocab)), merges_(std::move(merges)) {
  for (std::size_t r = 0; r < merges_.size(); ++r) {
    const auto& [a, b] = merges_[r];
    if (!vocab_.find(a + b)) {
      throw ValidationError("merges", "merge output '" + a + b + "' missing from vocab");
    }
    merge_rank_.try_emplace(pair_key(a, b), r);
  }
}

std::vector<std::string> TokenizerModel::segment(std::string_view word) const {
  auto symbols = utf8_chars(word);
  symbols.emplace_back(kEndOfWord);
  // Merging the lowest-ranked adjacent pair first reproduces in-order
  // application of the merge list.
  while (symbols.size() > 1) {
    std::size_t best_rank = std::numeric_limits<std::size_t>::max();
    std::size_t best_pos = 0;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto it = merge_rank_.find(pair_key(symbols[i], symbols[i + 1]));
      if (it != merge_rank_.end() && it->second < best_rank) {
        best_rank = it->second;
        best_pos = i;
      }
    }
    if (best_rank == std::numeric_limits<std::size_t>::max()) break;
    const std::string a = symbols[best_pos];
    const std::string b = symbols[best_pos + 1];
    merge_in_place(symbols, a, b);
  }
  return symbols;
}

std::vector<int> TokenizerModel::encode_word(std::string_view word) const {
  if (kind_ == TokenizerKind::kUnigramWord) {
    auto id = vocab_.find(word);
    if (!id || vocab_.is_special(*id)) return {kOovId};
    return {*id};
  }
  for (const auto& ch : utf8_chars(word)) {
    if (!vocab_.find(ch)) return {kOovId};
  }
  std::vector<int> ids;
  for (const auto& sym : segment(word)) ids.push_back(*vocab_.find(sym));
  return ids;
}

std::size_t TokenizerModel::word_token_count(std::string_view word) const {
  return encode_word(word).size();
}

bool TokenizerModel::is_oov_word(std::string_view word) const {
  const auto ids = encode_word(word);
  return ids.size() == 1 && ids[0] == kOovId;
}

std::vector<int> TokenizerModel::encode_words(std::span<const std::string> words) const {
  std::vector<int> ids;
  ids.reserve(words.size() + 2);
  ids.push_back(kBosId);
  for (const auto& w : words) {
    const auto piece = encode_word(w);
    ids.insert(ids.end(), piece.begin(), piece.end());
  }
  ids.push_back(kEosId);
  return ids;
}

std::string TokenizerModel::serialize() const {
  std::ostringstream out;
  out << kMagic << '\n';
  out << "kind " << kind_name(kind_) << '\n';
  out << "vocab " << vocab_.size() << '\n';
  out << "merges " << merges_.size() << '\n';
  for (const auto& t : vocab_.tokens()) out << escape(t) << '\n';
  for (const auto& [a, b] : merges_) out << escape(a) << ' ' << escape(b) << '\n';
  return out.str();
}

TokenizerModel TokenizerModel::deserialize(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != kMagic) {
    throw ValidationError("tokenizer", "missing '" + std::string(kMagic) + "' header");
  }
  std::string key, kind_str;
  std::size_t n_vocab = 0, n_merges = 0;
  if (!(in >> key >> kind_str) || key != "kind") throw ValidationError("tokenizer", "bad kind line");
  if (!(in >> key >> n_vocab) || key != "vocab") throw ValidationError("tokenizer", "bad vocab line");
  if (!(in >> key >> n_merges) || key != "merges") {
    throw ValidationError("tokenizer", "bad merges line");
  }
  std::getline(in, line);
  TokenizerKind kind;
  if (kind_str == "unigram_word") kind = TokenizerKind::kUnigramWord;
  else if (kind_str == "bpe_subword") kind = TokenizerKind::kBpeSubword;
  else throw ValidationError("tokenizer.kind", "unknown kind '" + kind_str + "'");

  Vocab vocab;
  for (std::size_t i = 0; i < n_vocab; ++i) {
    if (!std::getline(in, line)) throw ValidationError("tokenizer", "truncated vocab");
    auto token = unescape(line);
    if (i < kNumSpecials) {
      if (token != vocab.token(static_cast<int>(i))) {
        throw ValidationError("tokenizer", "special token mismatch at id " + std::to_string(i));
      }
      continue;
    }
    if (vocab.add(token) != static_cast<int>(i)) {
      throw ValidationError("tokenizer", "duplicate vocab entry '" + token + "'");
    }
  }
  std::vector<std::pair<std::string, std::string>> merges;
  for (std::size_t i = 0; i < n_merges; ++i) {
    if (!std::getline(in, line)) throw ValidationError("tokenizer", "truncated merges");
    const auto sp = line.find(' ');
    if (sp == std::string::npos) throw ValidationError("tokenizer", "bad merge line");
    merges.emplace_back(unescape(line.substr(0, sp)), unescape(line.substr(sp + 1)));
  }
  return TokenizerModel(kind, std::move(vocab), std::move(merges));
}

std::uint64_t TokenizerModel::fingerprint() const { return fnv1a64(serialize()); }

TokenizerModel build_unigram_vocab(const corpus::Corpus& corpus, std::size_t k) {
  if (k == 0) throw ValidationError("k", "must be positive");
  if (corpus.empty()) throw ValidationError("corpus", "must be non-empty");
  const auto counts = word_counts(corpus);
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& x, const auto& y) { return x.second > y.second; });
  Vocab vocab;
  for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i) vocab.add(ranked[i].first);
  return TokenizerModel(TokenizerKind::kUnigramWord, std::move(vocab), {});
}

TokenizerModel train_bpe(const corpus::Corpus& corpus, std::size_t target_vocab) {
  if (corpus.empty()) throw ValidationError("corpus", "must be non-empty");
  const auto counts = word_counts(corpus);

  std::set<std::string> alphabet;
  std::vector<std::pair<std::vector<std::string>, std::size_t>> words;
  words.reserve(counts.size());
  for (const auto& [w, c] : counts) {
    auto symbols = utf8_chars(w);
    alphabet.insert(symbols.begin(), symbols.end());
    symbols.emplace_back(kEndOfWord);
    words.emplace_back(std::move(symbols), c);
  }
  const std::size_t base = kNumSpecials + alphabet.size() + 1;
  if (target_vocab < base) {
    throw ValidationError("target_vocab", "must be at least " + std::to_string(base) +
                                              " (specials + characters + end-of-word marker)");
  }
  Vocab vocab;
  for (const auto& ch : alphabet) vocab.add(ch);
  vocab.add(std::string(kEndOfWord));

  std::vector<std::pair<std::string, std::string>> merges;
  while (vocab.size() < target_vocab) {
    std::map<std::pair<std::string, std::string>, std::size_t> pair_counts;
    for (const auto& [symbols, c] : words) {
      for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
        pair_counts[{symbols[i], symbols[i + 1]}] += c;
      }
    }
    if (pair_counts.empty()) break;
    // Strictly-greater scan over an ordered map keeps the lexicographically
    // smallest pair among ties.
    auto best = pair_counts.begin();
    for (auto it = pair_counts.begin(); it != pair_counts.end(); ++it) {
      if (it->second > best->second) best = it;
    }
    const auto [a, b] = best->first;
    merges.emplace_back(a, b);
    vocab.add(a + b);
    for (auto& [symbols, c] : words) merge_in_place(symbols, a, b);
  }
  return TokenizerModel(TokenizerKind::kBpeSubword, std::move(vocab), std::move(merges));
}

std::vector<int> encode(const TokenizerModel& model, std::string_view text) {
  const auto words = corpus::split_words(text);
  return model.encode_words(words);
}

std::string decode(const TokenizerModel& model, std::span<const int> ids) {
  std::vector<std::string> words;
  std::string current;
  for (int id : ids) {
    const std::string& tok = model.vocab().token(id);
    if (model.vocab().is_special(id)) continue;
    if (model.kind() == TokenizerKind::kUnigramWord) {
      words.push_back(tok);
      continue;
    }
    if (tok.size() >= kEndOfWord.size() &&
        std::string_view(tok).substr(tok.size() - kEndOfWord.size()) == kEndOfWord) {
      current.append(tok, 0, tok.size() - kEndOfWord.size());
      words.push_back(std::move(current));
      current.clear();
    } else {
      current += tok;
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  std::string out;
  for (const auto& w : words) {
    if (w.empty()) continue;
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

std::optional<double> token_accuracy_from_word_predictions(
    std::span<const std::string> gold_words, std::span<const std::string> predicted_words,
    const TokenizerModel& model) {
  if (gold_words.size() != predicted_words.size()) {
    throw ValidationError("predicted_words", "length " + std::to_string(predicted_words.size()) +
                                                 " does not match gold length " +
                                                 std::to_string(gold_words.size()));
  }
  std::size_t correct = 0;
  std::size_t total = 0;
  for (std::size_t i = 0; i < gold_words.size(); ++i) {
    const auto ids = model.encode_word(gold_words[i]);
    if (ids.size() == 1 && ids[0] == kOovId) continue;
    total += ids.size();
    if (predicted_words[i] == gold_words[i]) correct += ids.size();
  }
  if (total == 0) return std::nullopt;
  return static_cast<double>(correct) / static_cast<double>(total);
}

void save_tokenizer(const std::filesystem::path& path, const TokenizerModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("tokenizer", "cannot write " + path.string());
  out << model.serialize();
}

TokenizerModel load_tokenizer(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("path", "cannot read tokenizer file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return TokenizerModel::deserialize(buf.str());
}

std::vector<std::vector<int>> encode_corpus(const TokenizerModel& model,
                                            const corpus::Corpus& corpus, std::size_t max_len) {
  std::vector<std::vector<int>> out;
  out.reserve(corpus.size());
  for (const auto& d : corpus.documents) {
    auto ids = model.encode_words(d.words);
    if (ids.size() > max_len) ids.resize(max_len);
    out.push_back(std::move(ids));
  }
  return out;
}

}  // namespace dpfl::tokenizer

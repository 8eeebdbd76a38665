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

#ifndef DPFL_CORPUS_CORPUS_H_
#define DPFL_CORPUS_CORPUS_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace dpfl::corpus {

enum class Origin { kPublic, kPrivate };

std::string_view origin_name(Origin origin);

struct Document {
  std::string doc_id;
  std::vector<std::string> words;

  // Words joined by single spaces.
  std::string text() const;
};

struct Corpus {
  Origin origin = Origin::kPublic;
  std::vector<Document> documents;

  std::size_t size() const { return documents.size(); }
  bool empty() const { return documents.empty(); }
};

struct ClientDataset {
  std::string client_id;
  std::vector<Document> examples;
};

// Parameters of the synthetic two-source word generator.
struct ShiftSpec {
  double alpha = 0.5;
  std::uint64_t base_seed = 1;
  std::size_t vocab_size_words = 48;
  std::pair<std::size_t, std::size_t> doc_length_range = {5, 20};
  std::size_t n_docs = 1000;
  // Seed for document sampling; the word tables depend on base_seed only.
  std::optional<std::uint64_t> sample_seed;

  void validate() const;
};

// Splits on any run of whitespace.
std::vector<std::string> split_words(std::string_view text);
std::string normalize_text(std::string_view text);

// The word inventory shared by both sources for a given base seed.
std::vector<std::string> synthetic_words(std::uint64_t base_seed, std::size_t count);

Corpus generate_corpus(const ShiftSpec& spec, Origin role);

std::vector<ClientDataset> partition_clients(const Corpus& corpus, std::size_t n_clients,
                                             double heterogeneity, std::uint64_t seed);

struct OverlapReport {
  std::vector<std::string> shared_doc_ids;
  // doc_ids (from the private side) whose exact text also occurs publicly.
  std::vector<std::string> shared_text_docs;
  std::vector<std::uint64_t> shared_text_hashes;

  bool disjoint() const { return shared_doc_ids.empty() && shared_text_hashes.empty(); }
};

OverlapReport verify_no_overlap(const Corpus& public_corpus, const Corpus& private_corpus);

enum class IngestRule { kPerLine, kPerFile, kKeyedPerLine };

struct IngestResult {
  Corpus corpus;
  // Populated only for kKeyedPerLine: one client per file, keyed by file stem.
  std::vector<ClientDataset> clients;
};

IngestResult ingest_text_dir(const std::filesystem::path& dir, IngestRule rule,
                             Origin origin = Origin::kPublic);

// `<doc_id>\t<text>` per line.
void write_corpus(const std::filesystem::path& path, const Corpus& corpus);
Corpus read_corpus(const std::filesystem::path& path, Origin origin);

// `<client_id>\t<doc_id>\t<text>` per line, clients contiguous.
void write_clients(const std::filesystem::path& path, const std::vector<ClientDataset>& clients);
std::vector<ClientDataset> read_clients(const std::filesystem::path& path);

// Concatenates client examples in client order.
Corpus flatten_clients(const std::vector<ClientDataset>& clients, Origin origin);

// Empirical unigram word distribution and total-variation distance between two.
std::vector<std::pair<std::string, double>> unigram_distribution(const Corpus& corpus);
double unigram_tv_distance(const Corpus& a, const Corpus& b);

}  // namespace dpfl::corpus

#endif  // DPFL_CORPUS_CORPUS_H_

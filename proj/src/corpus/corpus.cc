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

#include "dpfl/corpus/corpus.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "dpfl/common/error.h"
#include "dpfl/common/rng.h"

namespace dpfl::corpus {
namespace {

constexpr std::string_view kConsonants = "bdfgklmnprstvz";
constexpr std::string_view kVowels = "aeiou";

// Dirichlet concentrations: rows favour their own half of the word list.
constexpr double kRowInRegion = 0.1;
constexpr double kRowOutRegion = 0.02;
constexpr double kStartInRegion = 0.5;
constexpr double kStartOutRegion = 0.1;

using Table = std::vector<std::vector<double>>;

std::vector<double> sample_dirichlet(Rng& rng, const std::vector<double>& concentration) {
  std::vector<double> out(concentration.size());
  double total = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::gamma_distribution<double> gamma(concentration[i], 1.0);
    out[i] = gamma(rng);
    total += out[i];
  }
  if (!(total > 0.0)) {
    std::fill(out.begin(), out.end(), 1.0 / static_cast<double>(out.size()));
    return out;
  }
  for (double& v : out) v /= total;
  return out;
}

std::vector<double> region_concentration(std::size_t n, bool first_half, double in,
                                         double out) {
  std::vector<double> c(n);
  for (std::size_t j = 0; j < n; ++j) {
    const bool in_first = j < n / 2;
    c[j] = (in_first == first_half) ? in : out;
  }
  return c;
}

struct Source {
  std::vector<double> start;
  Table rows;
};

Source make_source(std::uint64_t base_seed, std::size_t n, bool first_half) {
  Rng rng(derive_seed(base_seed, first_half ? "source-a" : "source-b"));
  Source s;
  s.start = sample_dirichlet(rng, region_concentration(n, first_half, kStartInRegion,
                                                       kStartOutRegion));
  const auto row_c = region_concentration(n, first_half, kRowInRegion, kRowOutRegion);
  s.rows.reserve(n);
  for (std::size_t i = 0; i < n; ++i) s.rows.push_back(sample_dirichlet(rng, row_c));
  return s;
}

std::vector<double> mix(const std::vector<double>& a, const std::vector<double>& b, double wa) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = wa * a[i] + (1.0 - wa) * b[i];
  return out;
}

std::string zero_pad(std::size_t value, int width) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%0*zu", width, value);
  return buf;
}

double topic_score(const Document& doc) {
  if (doc.words.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& w : doc.words) {
    sum += static_cast<double>(fnv1a64(w) >> 11) * 0x1.0p-53;
  }
  return sum / static_cast<double>(doc.words.size());
}

std::vector<std::string> split_tabs(const std::string& line, std::size_t max_fields) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (parts.size() + 1 < max_fields) {
    const auto tab = line.find('\t', start);
    if (tab == std::string::npos) break;
    parts.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
  parts.push_back(line.substr(start));
  return parts;
}

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

}  // namespace

std::string_view origin_name(Origin origin) {
  return origin == Origin::kPublic ? "public" : "private";
}

std::string Document::text() const {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out.push_back(' ');
    out += words[i];
  }
  return out;
}

void ShiftSpec::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("alpha", "must lie in [0, 1]");
  if (vocab_size_words < 2) throw ValidationError("vocab_size_words", "must be at least 2");
  if (doc_length_range.first < 1) throw ValidationError("doc_length_range", "min must be >= 1");
  if (doc_length_range.first > doc_length_range.second) {
    throw ValidationError("doc_length_range", "min must not exceed max");
  }
  if (n_docs < 1) throw ValidationError("n_docs", "must be positive");
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    const std::size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) words.emplace_back(text.substr(start, i - start));
  }
  return words;
}

std::string normalize_text(std::string_view text) {
  Document d{"", split_words(text)};
  return d.text();
}

std::vector<std::string> synthetic_words(std::uint64_t base_seed, std::size_t count) {
  Rng rng(derive_seed(base_seed, "words"));
  std::uniform_int_distribution<std::size_t> cons(0, kConsonants.size() - 1);
  std::uniform_int_distribution<std::size_t> vow(0, kVowels.size() - 1);
  std::uniform_int_distribution<int> syllables(1, 3);
  std::unordered_set<std::string> seen;
  std::vector<std::string> words;
  words.reserve(count);
  while (words.size() < count) {
    std::string w;
    const int n = syllables(rng);
    for (int s = 0; s < n; ++s) {
      w.push_back(kConsonants[cons(rng)]);
      w.push_back(kVowels[vow(rng)]);
    }
    if (seen.insert(w).second) words.push_back(std::move(w));
  }
  return words;
}

Corpus generate_corpus(const ShiftSpec& spec, Origin role) {
  spec.validate();
  const std::size_t n = spec.vocab_size_words;
  const auto words = synthetic_words(spec.base_seed, n);
  const Source a = make_source(spec.base_seed, n, /*first_half=*/true);
  const Source b = make_source(spec.base_seed, n, /*first_half=*/false);

  // Both roles share the even blend at alpha = 0 and reach their own pure
  // source at alpha = 1.
  const double own = 0.5 + 0.5 * spec.alpha;
  const double weight_a = role == Origin::kPublic ? own : 1.0 - own;

  const auto start_weights = mix(a.start, b.start, weight_a);
  std::discrete_distribution<std::size_t> start_dist(start_weights.begin(), start_weights.end());
  std::vector<std::discrete_distribution<std::size_t>> rows;
  rows.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto m = mix(a.rows[i], b.rows[i], weight_a);
    rows.emplace_back(m.begin(), m.end());
  }

  Rng rng(derive_seed(spec.sample_seed.value_or(spec.base_seed), origin_name(role)));
  std::uniform_int_distribution<std::size_t> length(spec.doc_length_range.first,
                                                    spec.doc_length_range.second);
  Corpus corpus;
  corpus.origin = role;
  corpus.documents.reserve(spec.n_docs);
  const std::string prefix = std::string(origin_name(role)) + "-";
  for (std::size_t d = 0; d < spec.n_docs; ++d) {
    Document doc;
    doc.doc_id = prefix + zero_pad(d, 6);
    const std::size_t len = length(rng);
    doc.words.reserve(len);
    std::size_t w = start_dist(rng);
    doc.words.push_back(words[w]);
    for (std::size_t k = 1; k < len; ++k) {
      w = rows[w](rng);
      doc.words.push_back(words[w]);
    }
    corpus.documents.push_back(std::move(doc));
  }
  return corpus;
}

std::vector<ClientDataset> partition_clients(const Corpus& corpus, std::size_t n_clients,
                                             double heterogeneity, std::uint64_t seed) {
  if (n_clients == 0) throw ValidationError("n_clients", "must be positive");
  if (n_clients > corpus.size()) {
    throw ValidationError("n_clients", "exceeds the number of documents (" +
                                           std::to_string(corpus.size()) + ")");
  }
  if (!(heterogeneity >= 0.0 && heterogeneity <= 1.0)) {
    throw ValidationError("heterogeneity", "must lie in [0, 1]");
  }
  const std::size_t n = corpus.size();

  // Topic rank in [0, 1): position of the document when sorted by topic score.
  std::vector<std::size_t> by_topic(n);
  std::iota(by_topic.begin(), by_topic.end(), 0);
  std::vector<double> score(n);
  for (std::size_t i = 0; i < n; ++i) score[i] = topic_score(corpus.documents[i]);
  std::stable_sort(by_topic.begin(), by_topic.end(),
                   [&](std::size_t x, std::size_t y) { return score[x] < score[y]; });
  std::vector<double> topic_rank(n);
  for (std::size_t r = 0; r < n; ++r) {
    topic_rank[by_topic[r]] = static_cast<double>(r) / static_cast<double>(n);
  }

  Rng rng(derive_seed(seed, "partition"));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> key(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = unif(rng);
    key[i] = heterogeneity * topic_rank[i] + (1.0 - heterogeneity) * u;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return key[x] < key[y]; });

  std::vector<ClientDataset> clients(n_clients);
  const std::size_t base = n / n_clients;
  const std::size_t extra = n % n_clients;
  std::size_t pos = 0;
  for (std::size_t c = 0; c < n_clients; ++c) {
    clients[c].client_id = "client-" + zero_pad(c, 5);
    const std::size_t take = base + (c < extra ? 1 : 0);
    for (std::size_t k = 0; k < take; ++k) {
      clients[c].examples.push_back(corpus.documents[order[pos++]]);
    }
  }
  return clients;
}

OverlapReport verify_no_overlap(const Corpus& public_corpus, const Corpus& private_corpus) {
  std::unordered_set<std::string> pub_ids;
  std::unordered_set<std::uint64_t> pub_hashes;
  for (const auto& d : public_corpus.documents) {
    pub_ids.insert(d.doc_id);
    pub_hashes.insert(fnv1a64(d.text()));
  }
  OverlapReport report;
  std::set<std::uint64_t> shared_hashes;
  std::set<std::string> shared_ids;
  for (const auto& d : private_corpus.documents) {
    if (pub_ids.count(d.doc_id)) shared_ids.insert(d.doc_id);
    const auto h = fnv1a64(d.text());
    if (pub_hashes.count(h)) {
      shared_hashes.insert(h);
      report.shared_text_docs.push_back(d.doc_id);
    }
  }
  report.shared_doc_ids.assign(shared_ids.begin(), shared_ids.end());
  report.shared_text_hashes.assign(shared_hashes.begin(), shared_hashes.end());
  return report;
}

IngestResult ingest_text_dir(const std::filesystem::path& dir, IngestRule rule, Origin origin) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) {
    throw ValidationError("path", "not a directory: " + dir.string());
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ValidationError("path", "directory has no files: " + dir.string());

  IngestResult result;
  result.corpus.origin = origin;
  const std::string prefix = std::string(origin_name(origin)) + "-";
  for (const auto& file : files) {
    std::ifstream in(file);
    if (!in) throw RuntimeError("ingest", "cannot read file " + file.string());
    const std::string stem = file.stem().string();
    ClientDataset client{stem, {}};
    std::vector<std::string> file_words;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      auto words = split_words(line);
      if (words.empty()) continue;
      if (rule == IngestRule::kPerFile) {
        file_words.insert(file_words.end(), words.begin(), words.end());
        continue;
      }
      Document doc{prefix + stem + "-" + zero_pad(line_no, 6), std::move(words)};
      if (rule == IngestRule::kKeyedPerLine) client.examples.push_back(doc);
      result.corpus.documents.push_back(std::move(doc));
    }
    if (in.bad()) throw RuntimeError("ingest", "error reading file " + file.string());
    if (rule == IngestRule::kPerFile && !file_words.empty()) {
      result.corpus.documents.push_back(Document{prefix + stem, std::move(file_words)});
    }
    if (rule == IngestRule::kKeyedPerLine && !client.examples.empty()) {
      result.clients.push_back(std::move(client));
    }
  }
  if (result.corpus.empty()) {
    throw ValidationError("path", "no non-blank text found in " + dir.string());
  }
  return result;
}

void write_corpus(const std::filesystem::path& path, const Corpus& corpus) {
  std::ofstream out(path);
  if (!out) throw RuntimeError("corpus", "cannot write " + path.string());
  for (const auto& d : corpus.documents) out << d.doc_id << '\t' << d.text() << '\n';
}

Corpus read_corpus(const std::filesystem::path& path, Origin origin) {
  std::ifstream in(path);
  if (!in) throw ValidationError("path", "cannot read corpus file " + path.string());
  Corpus corpus;
  corpus.origin = origin;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(std::move(line));
    if (line.empty()) continue;
    auto parts = split_tabs(line, 2);
    if (parts.size() != 2 || parts[0].empty()) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no),
                            "expected <doc_id>\\t<text>");
    }
    auto words = split_words(parts[1]);
    if (words.empty()) continue;
    corpus.documents.push_back(Document{parts[0], std::move(words)});
  }
  return corpus;
}

void write_clients(const std::filesystem::path& path, const std::vector<ClientDataset>& clients) {
  std::ofstream out(path);
  if (!out) throw RuntimeError("corpus", "cannot write " + path.string());
  for (const auto& c : clients) {
    for (const auto& d : c.examples) {
      out << c.client_id << '\t' << d.doc_id << '\t' << d.text() << '\n';
    }
  }
}

std::vector<ClientDataset> read_clients(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("path", "cannot read client file " + path.string());
  std::vector<ClientDataset> clients;
  std::unordered_map<std::string, std::size_t> index;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(std::move(line));
    if (line.empty()) continue;
    auto parts = split_tabs(line, 3);
    if (parts.size() != 3 || parts[0].empty() || parts[1].empty()) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no),
                            "expected <client_id>\\t<doc_id>\\t<text>");
    }
    auto words = split_words(parts[2]);
    if (words.empty()) continue;
    auto [it, inserted] = index.try_emplace(parts[0], clients.size());
    if (inserted) clients.push_back(ClientDataset{parts[0], {}});
    clients[it->second].examples.push_back(Document{parts[1], std::move(words)});
  }
  return clients;
}

Corpus flatten_clients(const std::vector<ClientDataset>& clients, Origin origin) {
  Corpus corpus;
  corpus.origin = origin;
  for (const auto& c : clients) {
    corpus.documents.insert(corpus.documents.end(), c.examples.begin(), c.examples.end());
  }
  return corpus;
}

std::vector<std::pair<std::string, double>> unigram_distribution(const Corpus& corpus) {
  std::map<std::string, double> counts;
  double total = 0.0;
  for (const auto& d : corpus.documents) {
    for (const auto& w : d.words) {
      counts[w] += 1.0;
      total += 1.0;
    }
  }
  std::vector<std::pair<std::string, double>> out(counts.begin(), counts.end());
  if (total > 0.0) {
    for (auto& [w, p] : out) p /= total;
  }
  return out;
}

double unigram_tv_distance(const Corpus& a, const Corpus& b) {
  std::map<std::string, double> diff;
  for (const auto& [w, p] : unigram_distribution(a)) diff[w] += p;
  for (const auto& [w, p] : unigram_distribution(b)) diff[w] -= p;
  double tv = 0.0;
  for (const auto& [w, d] : diff) tv += std::abs(d);
  return 0.5 * tv;
}

}  // namespace dpfl::corpus

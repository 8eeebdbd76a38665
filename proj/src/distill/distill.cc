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

#include "dpfl/distill/distill.h"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "dpfl/common/error.h"
#include "dpfl/common/rng.h"
#include "dpfl/model/optim.h"

namespace dpfl::distill {
namespace {

constexpr std::size_t kExtractChunk = 128;

double log_sum_exp(std::span<const double> z, double scale) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : z) m = std::max(m, x * scale);
  double s = 0.0;
  for (double x : z) s += std::exp(x * scale - m);
  return m + std::log(s);
}

PublicTrainResult adam_loop(ParamSet student, std::size_t n, const PublicTrainConfig& train,
                            const std::function<model::GradResult(const ParamSet&, std::span<const std::size_t>)>& step) {
  PublicTrainResult out;
  if (train.steps == 0) {
    out.params = std::move(student);
    return out;
  }
  if (n == 0) throw ValidationError("dataset", "public training needs at least one sequence");
  if (train.batch_size < 1) throw ValidationError("batch_size", "must be >= 1");
  Rng rng(derive_seed(train.seed, "public-train"));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = n;
  model::AdamState adam;
  std::vector<std::size_t> batch;
  for (std::size_t s = 0; s < train.steps; ++s) {
    batch.clear();
    while (batch.size() < std::min(train.batch_size, n)) {
      if (cursor == n) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
    }
    const auto g = step(student, batch);
    out.loss_trace.push_back(g.loss.total);
    model::adam_step(student.tensors, g.grads, adam, train.lr);
  }
  out.params = std::move(student);
  return out;
}

std::string hexfloat(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

}  // namespace

void DistillConfig::validate() const {
  if (k < 1) throw ValidationError("distill.k", "must be >= 1");
  if (!(temperature > 0.0)) throw ValidationError("distill.temperature", "must be > 0");
  if (!(beta >= 0.0)) throw ValidationError("distill.beta", "must be >= 0");
}

void DistillCorpus::validate() const {
  if (k < 1) throw ValidationError("k", "must be >= 1");
  for (std::size_t r = 0; r < records.size(); ++r) {
    const auto& rec = records[r];
    const std::string where = "record " + std::to_string(r) + " (" + rec.doc_id + ")";
    if (rec.ids.size() < 2) throw ValidationError("records", where + ": fewer than 2 ids");
    if (rec.positions.size() != rec.ids.size() - 1) {
      throw ValidationError("records", where + ": position count does not match ids");
    }
    for (int id : rec.ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
        throw ValidationError("records", where + ": token id outside vocabulary");
      }
    }
    for (std::size_t p = 0; p < rec.positions.size(); ++p) {
      const TopK& row = rec.positions[p];
      const std::string at = where + " position " + std::to_string(p);
      if (row.size() != k) throw ValidationError("records", at + ": expected " + std::to_string(k) + " entries");
      std::unordered_set<int> seen;
      for (std::size_t i = 0; i < row.size(); ++i) {
        if (row[i].first < 0 || static_cast<std::size_t>(row[i].first) >= vocab_size) {
          throw ValidationError("records", at + ": teacher id outside vocabulary");
        }
        if (!seen.insert(row[i].first).second) {
          throw ValidationError("records", at + ": duplicate teacher id");
        }
        if (!std::isfinite(row[i].second)) throw ValidationError("records", at + ": non-finite logit");
        if (i > 0 && row[i].second > row[i - 1].second) {
          throw ValidationError("records", at + ": logits not sorted descending");
        }
      }
    }
  }
}

TopK topk_row(std::span<const double> logits, std::size_t k) {
  if (k < 1 || k > logits.size()) {
    throw ValidationError("k", "must lie in [1, " + std::to_string(logits.size()) + "]");
  }
  std::vector<int> idx(logits.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](int a, int b) {
                      if (logits[a] != logits[b]) return logits[a] > logits[b];
                      return a < b;
                    });
  TopK out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.emplace_back(idx[i], logits[idx[i]]);
  return out;
}

DistillCorpus extract_topk(const ParamSet& teacher, const corpus::Corpus& corpus,
                           const tokenizer::TokenizerModel& tok, std::size_t k) {
  if (tok.vocab_size() != teacher.config.vocab_size) {
    throw ValidationError("tokenizer", "vocabulary size " + std::to_string(tok.vocab_size()) +
                                           " differs from the teacher's " +
                                           std::to_string(teacher.config.vocab_size));
  }
  if (k < 1 || k > teacher.config.vocab_size) {
    throw ValidationError("k", "must lie in [1, V=" + std::to_string(teacher.config.vocab_size) + "]");
  }
  DistillCorpus out;
  out.k = k;
  out.vocab_size = tok.vocab_size();
  out.tokenizer_hash = tok.fingerprint();
  std::vector<Sequence> seqs;
  std::vector<std::string> ids;
  auto flush = [&] {
    if (seqs.empty()) return;
    const auto logits = model::forward_batch(teacher, seqs);
    for (std::size_t b = 0; b < seqs.size(); ++b) {
      DistillRecord rec{ids[b], seqs[b], {}};
      for (std::size_t p = 0; p < logits[b].rows(); ++p) rec.positions.push_back(topk_row(logits[b].row(p), k));
      out.records.push_back(std::move(rec));
    }
    seqs.clear();
    ids.clear();
  };
  for (const auto& doc : corpus.documents) {
    auto s = tok.encode_words(doc.words);
    if (s.size() > teacher.config.max_seq_len) s.resize(teacher.config.max_seq_len);
    if (s.size() < 2) continue;
    seqs.push_back(std::move(s));
    ids.push_back(doc.doc_id);
    if (seqs.size() == kExtractChunk) flush();
  }
  flush();
  return out;
}

double kd_loss(std::span<const double> student_logits, const TopK& teacher, double temperature) {
  if (teacher.empty()) throw ValidationError("teacher", "needs at least one entry");
  if (!(temperature > 0.0)) throw ValidationError("temperature", "must be > 0");
  const double inv_t = 1.0 / temperature;
  std::vector<double> tz;
  tz.reserve(teacher.size());
  for (const auto& [id, z] : teacher) tz.push_back(z);
  const double t_lse = log_sum_exp(tz, inv_t);
  const double s_lse = log_sum_exp(student_logits, inv_t);
  double loss = 0.0;
  for (const auto& [id, z] : teacher) {
    if (id < 0 || static_cast<std::size_t>(id) >= student_logits.size()) {
      throw ValidationError("teacher", "token id " + std::to_string(id) + " outside vocabulary");
    }
    const double p = std::exp(z * inv_t - t_lse);
    if (p > 0.0) loss -= p * (student_logits[static_cast<std::size_t>(id)] * inv_t - s_lse);
  }
  return loss;
}

double pub_loss(const model::Tensor& student_logits, std::span<const int> targets,
                const std::vector<TopK>& teacher, const DistillConfig& config) {
  config.validate();
  if (teacher.size() != student_logits.rows()) {
    throw ValidationError("teacher", "expected " + std::to_string(student_logits.rows()) +
                                         " positions, got " + std::to_string(teacher.size()));
  }
  const double lm = model::loss_lm(student_logits, targets);
  if (config.beta == 0.0) return lm;
  double kd = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < teacher.size(); ++r) {
    if (targets[r] == tokenizer::kPadId) continue;
    kd += kd_loss(student_logits.row(r), teacher[r], config.temperature);
    ++count;
  }
  return lm + config.beta * kd / static_cast<double>(count);
}

model::GradResult pub_loss_grad(const ParamSet& student, std::span<const Sequence> batch,
                                std::span<const std::vector<TopK>> teacher,
                                const DistillConfig& config) {
  config.validate();
  model::LossSpec spec;
  spec.kd_weight = config.beta;
  spec.temperature = config.temperature;
  spec.teacher = teacher;
  return model::backward(student, batch, spec);
}

PublicTrainResult public_train(ParamSet student, const DistillCorpus& data,
                               const DistillConfig& config, const PublicTrainConfig& train) {
  config.validate();
  if (data.vocab_size != student.config.vocab_size) {
    throw ValidationError("records", "vocabulary size " + std::to_string(data.vocab_size) +
                                         " differs from the student's " +
                                         std::to_string(student.config.vocab_size));
  }
  std::vector<Sequence> seqs;
  std::vector<std::vector<TopK>> teacher;
  return adam_loop(std::move(student), data.records.size(), train,
                   [&](const ParamSet& current, std::span<const std::size_t> batch) {
                     seqs.clear();
                     teacher.clear();
                     for (auto i : batch) {
                       seqs.push_back(data.records[i].ids);
                       teacher.push_back(data.records[i].positions);
                     }
                     return pub_loss_grad(current, seqs, teacher, config);
                   });
}

PublicTrainResult public_train(ParamSet student, std::span<const Sequence> data,
                               const PublicTrainConfig& train) {
  std::vector<Sequence> seqs;
  return adam_loop(std::move(student), data.size(), train,
                   [&](const ParamSet& current, std::span<const std::size_t> batch) {
                     seqs.clear();
                     for (auto i : batch) seqs.push_back(data[i]);
                     return model::backward(current, seqs);
                   });
}

std::vector<Sequence> sequences(const DistillCorpus& data) {
  std::vector<Sequence> out;
  out.reserve(data.records.size());
  for (const auto& r : data.records) out.push_back(r.ids);
  return out;
}

DistillCorpus subset(const DistillCorpus& data, std::span<const std::string> doc_ids) {
  std::unordered_map<std::string, std::size_t> where;
  for (std::size_t i = 0; i < data.records.size(); ++i) where.emplace(data.records[i].doc_id, i);
  DistillCorpus out{data.k, data.vocab_size, data.tokenizer_hash, {}};
  for (const auto& id : doc_ids) {
    const auto it = where.find(id);
    if (it == where.end()) throw ValidationError("doc_ids", "no record for '" + id + "'");
    out.records.push_back(data.records[it->second]);
  }
  return out;
}

void save_distill_corpus(const std::filesystem::path& path, const DistillCorpus& data) {
  std::ofstream out(path);
  if (!out) throw RuntimeError("distill-corpus", "cannot write " + path.string());
  char hash[32];
  std::snprintf(hash, sizeof(hash), "%016" PRIx64, data.tokenizer_hash);
  out << "dpfl-distill v1\n";
  out << "k " << data.k << " vocab " << data.vocab_size << " tokenizer " << hash << " records "
      << data.records.size() << '\n';
  for (const auto& r : data.records) {
    out << "record " << r.doc_id << ' ' << r.ids.size();
    for (int id : r.ids) out << ' ' << id;
    out << '\n';
    for (const auto& row : r.positions) {
      for (std::size_t i = 0; i < row.size(); ++i) {
        out << (i ? " " : "") << row[i].first << ':' << hexfloat(row[i].second);
      }
      out << '\n';
    }
  }
}

DistillCorpus load_distill_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("path", "cannot read distillation corpus " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "dpfl-distill v1") {
    throw ValidationError("distill-corpus", "missing 'dpfl-distill v1' header in " + path.string());
  }
  DistillCorpus data;
  std::string kk, kv, kt, kr, hash;
  std::size_t n = 0;
  if (!(in >> kk >> data.k >> kv >> data.vocab_size >> kt >> hash >> kr >> n) || kk != "k" ||
      kv != "vocab" || kt != "tokenizer" || kr != "records") {
    throw ValidationError("distill-corpus", "malformed header line");
  }
  data.tokenizer_hash = std::strtoull(hash.c_str(), nullptr, 16);
  data.records.reserve(n);
  for (std::size_t r = 0; r < n; ++r) {
    DistillRecord rec;
    std::string key;
    std::size_t len = 0;
    if (!(in >> key >> rec.doc_id >> len) || key != "record" || len < 2) {
      throw ValidationError("distill-corpus", "malformed record " + std::to_string(r));
    }
    rec.ids.resize(len);
    for (auto& id : rec.ids) in >> id;
    for (std::size_t p = 0; p + 1 < len; ++p) {
      TopK row;
      for (std::size_t i = 0; i < data.k; ++i) {
        std::string pair;
        if (!(in >> pair)) throw ValidationError("distill-corpus", "truncated record " + rec.doc_id);
        const auto colon = pair.find(':');
        if (colon == std::string::npos) throw ValidationError("distill-corpus", "bad entry '" + pair + "'");
        row.emplace_back(std::stoi(pair.substr(0, colon)), std::strtod(pair.c_str() + colon + 1, nullptr));
      }
      rec.positions.push_back(std::move(row));
    }
    data.records.push_back(std::move(rec));
  }
  data.validate();
  return data;
}

}  // namespace dpfl::distill

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

#include "dpfl/model/lm.h"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <string>

#include "dpfl/common/error.h"
#include "dpfl/common/rng.h"
#include "tape.h"

namespace dpfl::model {
namespace {

using detail::Mat;
using detail::Tape;
using detail::Var;
using tokenizer::kOovId;
using tokenizer::kPadId;

constexpr std::size_t kEvalChunk = 128;

struct Graph {
  Tape tape;
  std::vector<std::pair<std::string, Var>> params;
  Var logits = 0;
  std::size_t batch = 0;
  std::size_t steps = 0;
  // Row-aligned with logits (row = b * steps + t).
  std::vector<int> targets;
};

void validate_sequence(const LMConfig& c, std::span<const int> ids, std::size_t index) {
  if (ids.size() < 2) {
    throw ValidationError("ids", "sequence " + std::to_string(index) + " needs at least 2 ids");
  }
  if (ids.size() > c.max_seq_len) {
    throw ValidationError("ids", "sequence " + std::to_string(index) + " has length " +
                                     std::to_string(ids.size()) + " > max_seq_len " +
                                     std::to_string(c.max_seq_len));
  }
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= c.vocab_size) {
      throw ValidationError("ids", "token id " + std::to_string(id) + " outside vocabulary of " +
                                       std::to_string(c.vocab_size));
    }
  }
}

Var param(Graph& g, const ParamSet& p, const std::string& name) {
  const Var v = g.tape.parameter(p.tensors.at(name));
  g.params.emplace_back(name, v);
  return v;
}

Var build_recurrent(Graph& g, const ParamSet& p, const std::vector<std::vector<int>>& inputs) {
  const std::size_t h = p.config.hidden_dim;
  const Var emb = param(g, p, "embedding");
  const Var wx = param(g, p, "lstm.input_weight");
  const Var wh = param(g, p, "lstm.hidden_weight");
  const Var bias = param(g, p, "lstm.bias");
  const Var wout = param(g, p, "output.weight");
  const Var bout = param(g, p, "output.bias");

  Tape& t = g.tape;
  std::vector<Var> hs;
  hs.reserve(g.steps);
  Var hid = 0;
  Var cell = 0;
  for (std::size_t step = 0; step < g.steps; ++step) {
    const Var x = t.gather_rows(emb, inputs[step]);
    Var gates = t.matmul(x, wx);
    if (step > 0) gates = t.add(gates, t.matmul(hid, wh));
    gates = t.add_row(gates, bias);
    const Var in_gate = t.sigmoid(t.slice_cols(gates, 0, h));
    const Var forget_gate = t.sigmoid(t.slice_cols(gates, h, 2 * h));
    const Var candidate = t.tanh(t.slice_cols(gates, 2 * h, 3 * h));
    const Var out_gate = t.sigmoid(t.slice_cols(gates, 3 * h, 4 * h));
    const Var write = t.mul(in_gate, candidate);
    cell = step == 0 ? write : t.add(t.mul(forget_gate, cell), write);
    hid = t.mul(out_gate, t.tanh(cell));
    hs.push_back(hid);
  }
  const Var stacked = t.stack_steps(hs);
  return t.add_row(t.matmul(stacked, wout), bout);
}

Var build_attention(Graph& g, const ParamSet& p, const std::vector<std::vector<int>>& inputs) {
  const Var emb = param(g, p, "embedding");
  const Var pos = param(g, p, "position");
  const Var wq = param(g, p, "attention.query");
  const Var wk = param(g, p, "attention.key");
  const Var wv = param(g, p, "attention.value");
  const Var wo = param(g, p, "attention.output");
  const Var w1 = param(g, p, "ffn.w1");
  const Var b1 = param(g, p, "ffn.b1");
  const Var w2 = param(g, p, "ffn.w2");
  const Var b2 = param(g, p, "ffn.b2");
  const Var wout = param(g, p, "output.weight");
  const Var bout = param(g, p, "output.bias");

  std::vector<int> ids(g.batch * g.steps);
  std::vector<int> positions(g.batch * g.steps);
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t s = 0; s < g.steps; ++s) {
      ids[b * g.steps + s] = inputs[s][b];
      positions[b * g.steps + s] = static_cast<int>(s);
    }
  }
  Tape& t = g.tape;
  const Var x = t.add(t.gather_rows(emb, std::move(ids)), t.gather_rows(pos, std::move(positions)));
  const Var att = t.causal_attention(t.matmul(x, wq), t.matmul(x, wk), t.matmul(x, wv), g.batch,
                                     g.steps);
  const Var h1 = t.add(x, t.matmul(att, wo));
  const Var ff = t.tanh(t.add_row(t.matmul(h1, w1), b1));
  const Var h2 = t.add_row(t.add(h1, t.matmul(ff, w2)), b2);
  return t.add_row(t.matmul(h2, wout), bout);
}

Graph build_graph(const ParamSet& p, std::span<const Sequence> batch) {
  if (batch.empty()) throw ValidationError("batch", "must contain at least one sequence");
  Graph g;
  g.batch = batch.size();
  for (std::size_t b = 0; b < batch.size(); ++b) {
    validate_sequence(p.config, batch[b], b);
    g.steps = std::max(g.steps, batch[b].size() - 1);
  }
  // inputs[step][b], padded with PAD past each sequence's end.
  std::vector<std::vector<int>> inputs(g.steps, std::vector<int>(g.batch, kPadId));
  g.targets.assign(g.batch * g.steps, kPadId);
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t s = 0; s + 1 < batch[b].size(); ++s) {
      inputs[s][b] = batch[b][s];
      g.targets[b * g.steps + s] = batch[b][s + 1];
    }
  }
  g.logits = p.config.arch == Arch::kRecurrent ? build_recurrent(g, p, inputs)
                                               : build_attention(g, p, inputs);
  return g;
}

struct LossVars {
  Var total = 0;
  LossValue value;
};

LossVars attach_loss(Graph& g, std::span<const Sequence> batch, const LossSpec& spec) {
  std::size_t count = 0;
  for (int y : g.targets) count += (y != kPadId);
  if (count == 0) throw ValidationError("targets", "all positions are masked");
  const double w = 1.0 / static_cast<double>(count);
  std::vector<double> weights(g.targets.size());
  for (std::size_t r = 0; r < g.targets.size(); ++r) weights[r] = g.targets[r] != kPadId ? w : 0.0;

  Tape& t = g.tape;
  std::vector<std::pair<double, Var>> terms;
  LossVars out;
  out.value.positions = count;
  const Var ce = t.cross_entropy(g.logits, g.targets, weights);
  out.value.lm = t.value(ce).v[0];
  terms.emplace_back(spec.lm_weight, ce);
  if (spec.kd_weight != 0.0) {
    if (spec.teacher.size() != batch.size()) {
      throw ValidationError("teacher", "expected entries for " + std::to_string(batch.size()) +
                                           " sequences, got " + std::to_string(spec.teacher.size()));
    }
    std::vector<const TopK*> rows(g.targets.size(), nullptr);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      if (spec.teacher[b].size() != batch[b].size() - 1) {
        throw ValidationError("teacher", "sequence " + std::to_string(b) + " has " +
                                             std::to_string(spec.teacher[b].size()) +
                                             " teacher positions, expected " +
                                             std::to_string(batch[b].size() - 1));
      }
      for (std::size_t s = 0; s + 1 < batch[b].size(); ++s) {
        rows[b * g.steps + s] = &spec.teacher[b][s];
      }
    }
    const Var kd = t.distill_cross_entropy(g.logits, std::move(rows), weights, spec.temperature);
    out.value.kd = t.value(kd).v[0];
    terms.emplace_back(spec.kd_weight, kd);
  }
  out.total = t.scaled_sum(std::move(terms));
  out.value.total = t.value(out.total).v[0];
  return out;
}

Tensor logits_row_block(const Graph& g, std::size_t b, std::size_t rows, std::size_t vocab) {
  const Mat& z = g.tape.value(g.logits);
  Tensor out(rows, vocab);
  std::copy_n(z.row(b * g.steps), rows * vocab, out.values().begin());
  return out;
}

std::size_t argmax_row(const double* z, std::size_t n) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < n; ++j) {
    if (z[j] > z[best]) best = j;
  }
  return best;
}

std::string hexfloat(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

}  // namespace

std::string_view arch_name(Arch arch) {
  return arch == Arch::kRecurrent ? "recurrent" : "attention";
}

Arch parse_arch(std::string_view name) {
  if (name == "recurrent" || name == "lstm") return Arch::kRecurrent;
  if (name == "attention" || name == "transformer") return Arch::kAttention;
  throw ValidationError("arch", "unknown architecture '" + std::string(name) + "'");
}

void LMConfig::validate() const {
  if (vocab_size < 1) throw ValidationError("vocab_size", "must be >= 1");
  if (embed_dim < 1) throw ValidationError("embed_dim", "must be >= 1");
  if (hidden_dim < 1) throw ValidationError("hidden_dim", "must be >= 1");
  if (max_seq_len < 2) throw ValidationError("max_seq_len", "must be >= 2");
}

std::size_t parameter_count(const LMConfig& c) {
  const std::size_t v = c.vocab_size, e = c.embed_dim, h = c.hidden_dim, s = c.max_seq_len;
  if (c.arch == Arch::kRecurrent) return v * e + e * 4 * h + h * 4 * h + 4 * h + h * v + v;
  return v * e + s * e + 3 * e * h + h * e + e * h + h + h * e + e + e * v + v;
}

ParamSet init_params(const LMConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t v = config.vocab_size, e = config.embed_dim, h = config.hidden_dim;
  ParamSet p;
  p.config = config;
  auto matrix = [&](const std::string& name, std::size_t r, std::size_t c) {
    p.tensors.insert(name, Tensor(r, c));
  };
  auto vector = [&](const std::string& name, std::size_t n) {
    p.tensors.insert(name, Tensor(std::vector<std::size_t>{n}));
  };
  matrix("embedding", v, e);
  if (config.arch == Arch::kRecurrent) {
    matrix("lstm.input_weight", e, 4 * h);
    matrix("lstm.hidden_weight", h, 4 * h);
    vector("lstm.bias", 4 * h);
    matrix("output.weight", h, v);
  } else {
    matrix("position", config.max_seq_len, e);
    matrix("attention.query", e, h);
    matrix("attention.key", e, h);
    matrix("attention.value", e, h);
    matrix("attention.output", h, e);
    matrix("ffn.w1", e, h);
    vector("ffn.b1", h);
    matrix("ffn.w2", h, e);
    vector("ffn.b2", e);
    matrix("output.weight", e, v);
  }
  vector("output.bias", v);

  Rng rng(derive_seed(seed, "init"));
  for (auto& [name, t] : p.tensors) {
    if (t.shape().size() != 2) continue;
    const double bound =
        std::sqrt(6.0 / static_cast<double>(t.shape()[0] + t.shape()[1]));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (double& x : t.values()) x = u(rng);
  }
  return p;
}

Tensor forward(const ParamSet& params, std::span<const int> ids) {
  const Sequence seq(ids.begin(), ids.end());
  Graph g = build_graph(params, std::span<const Sequence>(&seq, 1));
  return logits_row_block(g, 0, seq.size() - 1, params.config.vocab_size);
}

std::vector<Tensor> forward_batch(const ParamSet& params, std::span<const Sequence> batch) {
  Graph g = build_graph(params, batch);
  std::vector<Tensor> out;
  out.reserve(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    out.push_back(logits_row_block(g, b, batch[b].size() - 1, params.config.vocab_size));
  }
  return out;
}

double loss_lm(const Tensor& logits, std::span<const int> targets, int ignore_id) {
  if (logits.rows() != targets.size()) {
    throw ValidationError("targets", "expected " + std::to_string(logits.rows()) + " targets, got " +
                                         std::to_string(targets.size()));
  }
  const std::size_t v = logits.cols();
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < targets.size(); ++r) {
    if (targets[r] == ignore_id) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= v) {
      throw ValidationError("targets", "target out of range at position " + std::to_string(r));
    }
    const auto row = logits.row(r);
    const double m = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double z : row) s += std::exp(z - m);
    sum += m + std::log(s) - row[static_cast<std::size_t>(targets[r])];
    ++count;
  }
  if (count == 0) throw ValidationError("targets", "all positions are masked");
  return sum / static_cast<double>(count);
}

GradResult backward(const ParamSet& params, std::span<const Sequence> batch, const LossSpec& spec) {
  Graph g = build_graph(params, batch);
  LossVars loss = attach_loss(g, batch, spec);
  if (!std::isfinite(loss.value.total)) {
    throw RuntimeError("backward", "non-finite loss value");
  }
  g.tape.backward(loss.total);
  GradResult out{loss.value, TensorMap::zeros_like(params.tensors)};
  for (const auto& [name, var] : g.params) {
    const Mat& grad = g.tape.grad(var);
    if (grad.v.empty()) continue;
    auto& dst = out.grads.at(name).values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += grad.v[i];
  }
  if (const auto bad = out.grads.first_non_finite(); !bad.empty()) {
    throw RuntimeError("backward", "non-finite gradient in tensor '" + bad + "'");
  }
  return out;
}

GradResult backward(const ParamSet& params, std::span<const int> ids, const LossSpec& spec) {
  const Sequence seq(ids.begin(), ids.end());
  return backward(params, std::span<const Sequence>(&seq, 1), spec);
}

LossValue evaluate_loss(const ParamSet& params, std::span<const Sequence> batch,
                        const LossSpec& spec) {
  Graph g = build_graph(params, batch);
  return attach_loss(g, batch, spec).value;
}

std::vector<double> avg_log_probs(const ParamSet& params, std::span<const Sequence> sequences) {
  std::vector<double> out;
  out.reserve(sequences.size());
  for (std::size_t start = 0; start < sequences.size(); start += kEvalChunk) {
    const auto chunk = sequences.subspan(start, std::min(kEvalChunk, sequences.size() - start));
    Graph g = build_graph(params, chunk);
    const Mat& z = g.tape.value(g.logits);
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      double sum = 0.0;
      std::size_t count = 0;
      for (std::size_t s = 0; s + 1 < chunk[b].size(); ++s) {
        const int y = chunk[b][s + 1];
        if (y == kPadId) continue;
        const double* row = z.row(b * g.steps + s);
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < z.cols; ++j) m = std::max(m, row[j]);
        double se = 0.0;
        for (std::size_t j = 0; j < z.cols; ++j) se += std::exp(row[j] - m);
        sum += row[static_cast<std::size_t>(y)] - m - std::log(se);
        ++count;
      }
      out.push_back(count ? sum / static_cast<double>(count) : 0.0);
    }
  }
  return out;
}

double avg_log_prob(const ParamSet& params, std::span<const int> ids) {
  const Sequence seq(ids.begin(), ids.end());
  return avg_log_probs(params, std::span<const Sequence>(&seq, 1))[0];
}

double perplexity(double avg_log_prob) { return std::exp(-avg_log_prob); }

std::optional<double> AccuracyCounts::rate() const {
  if (total == 0) return std::nullopt;
  return static_cast<double>(correct) / static_cast<double>(total);
}

AccuracyCounts next_token_accuracy(const ParamSet& params, std::span<const Sequence> sequences) {
  AccuracyCounts counts;
  for (std::size_t start = 0; start < sequences.size(); start += kEvalChunk) {
    const auto chunk = sequences.subspan(start, std::min(kEvalChunk, sequences.size() - start));
    Graph g = build_graph(params, chunk);
    const Mat& z = g.tape.value(g.logits);
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      for (std::size_t s = 0; s + 1 < chunk[b].size(); ++s) {
        const int y = chunk[b][s + 1];
        if (y == kPadId || y == kOovId) continue;
        ++counts.total;
        if (argmax_row(z.row(b * g.steps + s), z.cols) == static_cast<std::size_t>(y)) {
          ++counts.correct;
        }
      }
    }
  }
  return counts;
}

std::optional<double> evaluate_accuracy(const ParamSet& params, const corpus::Corpus& corpus,
                                        const tokenizer::TokenizerModel& tok) {
  if (corpus.empty()) throw ValidationError("corpus", "cannot evaluate on an empty corpus");
  if (tok.vocab_size() != params.config.vocab_size) {
    throw ValidationError("tokenizer", "vocabulary size " + std::to_string(tok.vocab_size()) +
                                           " does not match model vocab " +
                                           std::to_string(params.config.vocab_size));
  }
  const auto seqs = tokenizer::encode_corpus(tok, corpus, params.config.max_seq_len);
  return next_token_accuracy(params, seqs).rate();
}

Sequence greedy_generate(const ParamSet& params, std::size_t length) {
  if (length < 1 || length > params.config.max_seq_len) {
    throw ValidationError("length", "must lie in [1, max_seq_len]");
  }
  Sequence seq{tokenizer::kBosId};
  while (seq.size() < length) {
    // Append a placeholder target so the prefix yields a prediction row.
    Sequence probe = seq;
    probe.push_back(kPadId);
    const Tensor z = forward(params, probe);
    const auto row = z.row(z.rows() - 1);
    seq.push_back(static_cast<int>(argmax_row(row.data(), row.size())));
  }
  return seq;
}

void save_params(const std::filesystem::path& path, const ParamSet& params) {
  std::ofstream out(path);
  if (!out) throw RuntimeError("checkpoint", "cannot write " + path.string());
  const auto& c = params.config;
  out << "dpfl-params v1\n";
  out << "arch " << arch_name(c.arch) << " vocab " << c.vocab_size << " embed " << c.embed_dim
      << " hidden " << c.hidden_dim << " max_seq_len " << c.max_seq_len << '\n';
  out << "tensors " << params.tensors.count() << '\n';
  for (const auto& [name, t] : params.tensors) {
    out << "tensor " << name << ' ' << t.shape().size();
    for (auto d : t.shape()) out << ' ' << d;
    out << '\n';
    for (std::size_t i = 0; i < t.size(); ++i) {
      out << hexfloat(t[i]) << ((i + 1) % 8 == 0 || i + 1 == t.size() ? '\n' : ' ');
    }
  }
}

ParamSet load_params(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("path", "cannot read checkpoint " + path.string());
  std::string line, key;
  if (!std::getline(in, line) || line != "dpfl-params v1") {
    throw ValidationError("checkpoint", "missing 'dpfl-params v1' header in " + path.string());
  }
  LMConfig c;
  std::string arch, k1, k2, k3, k4;
  if (!(in >> key >> arch >> k1 >> c.vocab_size >> k2 >> c.embed_dim >> k3 >> c.hidden_dim >> k4 >>
        c.max_seq_len) ||
      key != "arch") {
    throw ValidationError("checkpoint", "malformed config line");
  }
  c.arch = parse_arch(arch);
  c.validate();
  std::size_t n = 0;
  if (!(in >> key >> n) || key != "tensors") throw ValidationError("checkpoint", "bad tensor count");
  ParamSet p;
  p.config = c;
  for (std::size_t i = 0; i < n; ++i) {
    std::string name;
    std::size_t ndims = 0;
    if (!(in >> key >> name >> ndims) || key != "tensor") {
      throw ValidationError("checkpoint", "bad tensor header");
    }
    std::vector<std::size_t> shape(ndims);
    for (auto& d : shape) in >> d;
    Tensor t(shape);
    std::string tok;
    for (std::size_t j = 0; j < t.size(); ++j) {
      if (!(in >> tok)) throw ValidationError("checkpoint", "truncated tensor '" + name + "'");
      t[j] = std::strtod(tok.c_str(), nullptr);
    }
    p.tensors.insert(name, std::move(t));
  }
  const ParamSet reference = init_params(c, 0);
  if (!reference.tensors.congruent(p.tensors)) {
    throw ValidationError("checkpoint", "tensor names or shapes do not match the config");
  }
  return p;
}

}  // namespace dpfl::model

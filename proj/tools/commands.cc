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

#include "commands.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <tuple>

#include "dpfl/common/error.h"
#include "dpfl/common/rng.h"
#include "dpfl/corpus/corpus.h"
#include "dpfl/distill/distill.h"
#include "dpfl/federation/federation.h"
#include "dpfl/matching/matching.h"
#include "dpfl/model/lm.h"
#include "dpfl/privacy/privacy.h"
#include "dpfl/theory/theory.h"
#include "dpfl/tokenizer/tokenizer.h"

namespace dpfl::cli {
namespace fs = std::filesystem;

namespace {

// Long-format metrics: run_id,stage,step,metric,value.
class Metrics {
 public:
  Metrics(const fs::path& path, std::string run_id) : out_(path), run_id_(std::move(run_id)) {
    if (!out_) throw RuntimeError("metrics", "cannot write " + path.string());
    out_ << "run_id,stage,step,metric,value\n";
  }

  void add(std::string_view stage, std::size_t step, std::string_view metric, double value) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", value);
    out_ << run_id_ << ',' << stage << ',' << step << ',' << metric << ',' << buf << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
  std::string run_id_;
};

struct Run {
  const Config& cfg;
  fs::path out;
  Metrics& metrics;
  std::uint64_t seed;

  std::uint64_t stream(std::string_view name) const { return derive_seed(seed, name); }
  fs::path input(const std::string& key) const { return cfg.text("inputs." + key); }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw RuntimeError("output", "cannot write " + path.string());
  out << text;
}

std::vector<std::string> required_inputs(const Config& c) {
  const std::string kind = c.text("kind");
  if (kind == "gen-corpus" || kind == "theory-sim") return {};
  if (kind == "tokenize") return {"public"};
  if (kind == "train-teacher") return {"public", "tokenizer"};
  if (kind == "distill-corpus") return {"public", "tokenizer", "teacher"};
  if (kind == "pretrain") {
    return {c.flag("pretrain.use_distill") ? "distill" : "public", "tokenizer"};
  }
  if (kind == "fl-train") return {"tokenizer", "clients", "dev"};
  if (kind == "pipeline") return {"public", "tokenizer", "teacher", "clients", "dev"};
  if (kind == "match") return {"public", "tokenizer", "teacher", "checkpoint"};
  if (kind == "ppl-export") return {"public", "private_sample", "tokenizer", "teacher", "checkpoint"};
  if (kind == "eval") return {"checkpoint", "tokenizer", "dev"};
  throw ValidationError("kind", "unknown experiment kind '" + kind + "'");
}

corpus::IngestRule ingest_rule(const Config& c) {
  const std::string r = c.text("corpus.ingest_rule");
  if (r == "per-line") return corpus::IngestRule::kPerLine;
  if (r == "per-file") return corpus::IngestRule::kPerFile;
  if (r == "keyed-per-line") return corpus::IngestRule::kKeyedPerLine;
  throw ValidationError("corpus.ingest_rule", "expected per-line, per-file or keyed-per-line");
}

model::LMConfig lm_config(const Config& c, const std::string& block,
                          const tokenizer::TokenizerModel& tok) {
  model::LMConfig m;
  try {
    m.arch = model::parse_arch(c.text(block + ".arch"));
  } catch (const ValidationError& e) {
    throw ValidationError(block + ".arch", e.what());
  }
  m.vocab_size = tok.vocab_size();
  m.embed_dim = c.count(block + ".embed_dim");
  m.hidden_dim = c.count(block + ".hidden_dim");
  m.max_seq_len = c.count("tokenizer.max_seq_len");
  m.validate();
  return m;
}

federation::FLConfig fl_config(const Run& r) {
  const Config& c = r.cfg;
  federation::FLConfig f;
  f.clients_per_round = c.count("fl.clients_per_round");
  f.local_batch_size = c.count("fl.local_batch_size");
  f.local_epochs = c.count("fl.local_epochs");
  f.max_examples_per_client = c.count("fl.max_examples_per_client");
  f.total_rounds = c.count("fl.total_rounds");
  f.server_lr = c.real("fl.server_lr");
  f.client_lr = c.real("fl.client_lr");
  f.privacy.clip_norm = c.real("fl.clip_norm");
  f.privacy.noise_multiplier = c.real("fl.noise_multiplier");
  f.privacy.delta = c.real("fl.delta");
  f.privacy.total_rounds = f.total_rounds;
  f.adaptive_clip = c.flag("fl.adaptive_clip");
  f.target_quantile = c.real("fl.target_quantile");
  f.clip_lr = c.real("fl.clip_lr");
  f.eval_every = c.count("fl.eval_every");
  f.seed = r.stream("fl");
  return f;
}

distill::DistillConfig distill_config(const Config& c) {
  distill::DistillConfig d;
  d.k = c.count("distill.k");
  d.temperature = c.real("distill.temperature");
  d.beta = c.real("distill.beta");
  d.validate();
  return d;
}

std::vector<model::Sequence> encode(const Run& r, const tokenizer::TokenizerModel& tok,
                                    const corpus::Corpus& docs) {
  return tokenizer::encode_corpus(tok, docs, r.cfg.count("tokenizer.max_seq_len"));
}

double accuracy(const model::ParamSet& p, const std::vector<model::Sequence>& seqs) {
  return model::next_token_accuracy(p, seqs).rate().value_or(0.0);
}

model::ParamSet student_init(const Run& r, const tokenizer::TokenizerModel& tok) {
  const model::LMConfig want = lm_config(r.cfg, "model", tok);
  if (r.cfg.text("inputs.init").empty()) return model::init_params(want, r.stream("init"));
  auto p = model::load_params(r.input("init"));
  if (p.config.vocab_size != tok.vocab_size()) {
    throw ValidationError("inputs.init", "vocabulary size does not match the tokenizer");
  }
  return p;
}

void record_rounds(const Run& r, std::string_view stage,
                   const std::vector<federation::RoundRecord>& rounds, std::ofstream& csv) {
  for (const auto& rec : rounds) {
    csv << federation::rounds_csv_row(rec) << '\n';
    r.metrics.add(stage, rec.round, "train_loss", rec.train_loss);
    r.metrics.add(stage, rec.round, "mean_update_norm", rec.mean_update_norm);
    r.metrics.add(stage, rec.round, "clipped_fraction", rec.clipped_fraction);
    r.metrics.add(stage, rec.round, "clip_norm", rec.clip_norm);
    r.metrics.add(stage, rec.round, "epsilon", rec.epsilon);
    if (rec.eval_accuracy) r.metrics.add(stage, rec.round, "dev_accuracy", *rec.eval_accuracy);
  }
}

void record_losses(const Run& r, std::string_view stage, const std::vector<double>& trace) {
  for (std::size_t i = 0; i < trace.size(); ++i) r.metrics.add(stage, i + 1, "loss", trace[i]);
}

// ---------------------------------------------------------------------------

corpus::ShiftSpec shift_spec(const Run& r) {
  const Config& c = r.cfg;
  corpus::ShiftSpec s;
  s.alpha = c.real("corpus.alpha");
  s.base_seed = r.stream("corpus");
  s.vocab_size_words = c.count("corpus.vocab_size_words");
  s.doc_length_range = {c.count("corpus.doc_length_min"), c.count("corpus.doc_length_max")};
  return s;
}

corpus::Corpus generate(corpus::ShiftSpec s, std::size_t n, std::uint64_t sample_seed,
                        corpus::Origin role) {
  s.n_docs = n;
  s.sample_seed = sample_seed;
  return corpus::generate_corpus(s, role);
}

RunOutcome gen_corpus(const Run& r) {
  const Config& c = r.cfg;
  const corpus::ShiftSpec shift = shift_spec(r);
  corpus::Corpus pub, heldout, dev;
  std::vector<corpus::ClientDataset> clients;

  if (!c.text("inputs.public_text_dir").empty()) {
    pub = corpus::ingest_text_dir(r.input("public_text_dir"), ingest_rule(c)).corpus;
  } else {
    const std::size_t n = c.count("corpus.n_public");
    pub = generate(shift, n, r.stream("public"), corpus::Origin::kPublic);
    const double share = c.real("corpus.in_domain_share");
    if (share < 0 || share > 1) throw ValidationError("corpus.in_domain_share", "must lie in [0, 1]");
    const auto n_in = static_cast<std::size_t>(share * static_cast<double>(n));
    corpus::Corpus slice;
    if (n_in > 0) slice = generate(shift, n_in, r.stream("in-domain"), corpus::Origin::kPrivate);
    for (std::size_t i = 0; i < n_in; ++i) {
      auto& doc = pub.documents[n - n_in + i];
      doc.doc_id = "public-in-" + std::to_string(i);
      doc.words = std::move(slice.documents[i].words);
    }
    heldout = generate(shift, c.count("corpus.n_public_heldout"), r.stream("public-heldout"),
                       corpus::Origin::kPublic);
    for (auto& doc : heldout.documents) doc.doc_id = "heldout-" + doc.doc_id;
  }

  const std::size_t n_dev = c.count("corpus.n_dev");
  if (!c.text("inputs.private_text_dir").empty()) {
    clients = corpus::ingest_text_dir(r.input("private_text_dir"), corpus::IngestRule::kKeyedPerLine,
                                      corpus::Origin::kPrivate)
                  .clients;
    // Dev documents come off the tail of the flattened client order.
    dev.origin = corpus::Origin::kPrivate;
    for (auto it = clients.rbegin(); it != clients.rend() && dev.size() < n_dev; ++it) {
      while (!it->examples.empty() && dev.size() < n_dev) {
        dev.documents.insert(dev.documents.begin(), std::move(it->examples.back()));
        it->examples.pop_back();
      }
    }
  } else {
    const std::size_t n_priv = c.count("corpus.n_private");
    auto all = generate(shift, n_priv + n_dev, r.stream("private"), corpus::Origin::kPrivate);
    dev = {corpus::Origin::kPrivate, {all.documents.begin() + n_priv, all.documents.end()}};
    all.documents.resize(n_priv);
    clients = corpus::partition_clients(all, c.count("corpus.n_clients"),
                                        c.real("corpus.heterogeneity"), r.stream("partition"));
  }

  const auto priv = corpus::flatten_clients(clients, corpus::Origin::kPrivate);
  const auto overlap = corpus::verify_no_overlap(pub, priv);
  if (!overlap.disjoint()) {
    std::cerr << "warning: " << overlap.shared_doc_ids.size() << " shared doc ids and "
              << overlap.shared_text_hashes.size() << " shared texts between public and private\n";
  }

  corpus::write_corpus(r.out / "public.tsv", pub);
  if (!heldout.empty()) corpus::write_corpus(r.out / "public_heldout.tsv", heldout);
  corpus::write_clients(r.out / "clients.tsv", clients);
  corpus::write_corpus(r.out / "dev.tsv", dev);

  r.metrics.add("corpus", 0, "public_docs", static_cast<double>(pub.size()));
  r.metrics.add("corpus", 0, "private_docs", static_cast<double>(priv.size()));
  r.metrics.add("corpus", 0, "dev_docs", static_cast<double>(dev.size()));
  r.metrics.add("corpus", 0, "clients", static_cast<double>(clients.size()));
  r.metrics.add("corpus", 0, "unigram_tv", corpus::unigram_tv_distance(pub, priv));
  r.metrics.add("corpus", 0, "shared_texts", static_cast<double>(overlap.shared_text_hashes.size()));
  return {};
}

RunOutcome tokenize(const Run& r) {
  const auto pub = corpus::read_corpus(r.input("public"), corpus::Origin::kPublic);
  const std::string kind = r.cfg.text("tokenizer.kind");
  const std::size_t v = r.cfg.count("tokenizer.vocab_size");
  tokenizer::TokenizerModel tok = [&] {
    if (kind == "bpe") return tokenizer::train_bpe(pub, v);
    if (kind == "unigram") return tokenizer::build_unigram_vocab(pub, v);
    throw ValidationError("tokenizer.kind", "expected bpe or unigram");
  }();
  tokenizer::save_tokenizer(r.out / "tokenizer.txt", tok);

  std::size_t words = 0, tokens = 0, oov = 0;
  for (const auto& doc : pub.documents) {
    for (const auto& w : doc.words) {
      ++words;
      tokens += tok.word_token_count(w);
      oov += tok.is_oov_word(w);
    }
  }
  r.metrics.add("tokenize", 0, "vocab_size", static_cast<double>(tok.vocab_size()));
  r.metrics.add("tokenize", 0, "tokens_per_word", words ? double(tokens) / double(words) : 0.0);
  r.metrics.add("tokenize", 0, "oov_word_rate", words ? double(oov) / double(words) : 0.0);
  return {};
}

RunOutcome train_teacher(const Run& r) {
  const Config& c = r.cfg;
  const auto tok = tokenizer::load_tokenizer(r.input("tokenizer"));
  const auto pub = corpus::read_corpus(r.input("public"), corpus::Origin::kPublic);
  const auto tc = lm_config(c, "teacher", tok);
  auto res = distill::public_train(model::init_params(tc, r.stream("teacher-init")), encode(r, tok, pub),
                                   {c.count("teacher.steps"), c.count("teacher.batch_size"),
                                    c.real("teacher.lr"), r.stream("teacher-train")});
  model::save_params(r.out / "teacher.params", res.params);
  record_losses(r, "teacher", res.loss_trace);
  if (!c.text("inputs.public_heldout").empty()) {
    const auto held = corpus::read_corpus(r.input("public_heldout"), corpus::Origin::kPublic);
    r.metrics.add("teacher", res.loss_trace.size(), "heldout_accuracy",
                  accuracy(res.params, encode(r, tok, held)));
  }
  return {};
}

RunOutcome distill_corpus(const Run& r) {
  const auto tok = tokenizer::load_tokenizer(r.input("tokenizer"));
  const auto pub = corpus::read_corpus(r.input("public"), corpus::Origin::kPublic);
  const auto teacher = model::load_params(r.input("teacher"));
  const auto data = distill::extract_topk(teacher, pub, tok, distill_config(r.cfg).k);
  distill::save_distill_corpus(r.out / "distill.txt", data);
  r.metrics.add("distill", 0, "records", static_cast<double>(data.records.size()));
  return {};
}

RunOutcome pretrain(const Run& r) {
  const Config& c = r.cfg;
  const auto tok = tokenizer::load_tokenizer(r.input("tokenizer"));
  const distill::PublicTrainConfig train{c.count("pretrain.steps"), c.count("pretrain.batch_size"),
                                         c.real("pretrain.lr"), r.stream("pretrain")};
  auto init = model::init_params(lm_config(c, "model", tok), r.stream("init"));
  distill::PublicTrainResult res;
  if (c.flag("pretrain.use_distill")) {
    const auto data = distill::load_distill_corpus(r.input("distill"));
    if (data.tokenizer_hash != tok.fingerprint()) {
      throw ValidationError("inputs.distill", "was extracted with a different tokenizer");
    }
    res = distill::public_train(std::move(init), data, distill_config(c), train);
  } else {
    const auto pub = corpus::read_corpus(r.input("public"), corpus::Origin::kPublic);
    res = distill::public_train(std::move(init), encode(r, tok, pub), train);
  }
  model::save_params(r.out / "init.params", res.params);
  record_losses(r, "pretrain", res.loss_trace);
  if (!c.text("inputs.public_heldout").empty()) {
    const auto held = corpus::read_corpus(r.input("public_heldout"), corpus::Origin::kPublic);
    r.metrics.add("pretrain", res.loss_trace.size(), "heldout_accuracy",
                  accuracy(res.params, encode(r, tok, held)));
  }
  return {};
}

struct PrivateSide {
  std::vector<federation::ClientData> pool;
  std::vector<model::Sequence> dev;
};

PrivateSide private_side(const Run& r, const tokenizer::TokenizerModel& tok) {
  PrivateSide s;
  s.pool = federation::tokenize_clients(corpus::read_clients(r.input("clients")), tok,
                                        r.cfg.count("tokenizer.max_seq_len"));
  s.dev = encode(r, tok, corpus::read_corpus(r.input("dev"), corpus::Origin::kPrivate));
  return s;
}

federation::EvalFn dev_eval(const std::vector<model::Sequence>& dev) {
  return [&dev](const model::ParamSet& p) -> std::optional<double> { return accuracy(p, dev); };
}

RunOutcome fl_train(const Run& r) {
  const auto tok = tokenizer::load_tokenizer(r.input("tokenizer"));
  const auto side = private_side(r, tok);
  const auto config = fl_config(r);
  config.validate(side.pool.size());

  auto state = federation::init_state(student_init(r, tok), config, side.pool.size());
  std::ofstream rounds(r.out / "rounds.csv");
  rounds << federation::rounds_csv_header() << '\n';
  const std::size_t every = r.cfg.count("fl.checkpoint_every");
  const auto eval = config.eval_every ? dev_eval(side.dev) : federation::EvalFn{};
  std::size_t done = 0;
  while (done < config.total_rounds) {
    const std::size_t next = every ? std::min(config.total_rounds, done + every) : config.total_rounds;
    record_rounds(r, "fl", federation::train(state, side.pool, config, done, next, eval), rounds);
    done = next;
    if (every && done < config.total_rounds) {
      model::save_params(r.out / ("checkpoint-" + std::to_string(done) + ".params"), state.params);
    }
  }
  model::save_params(r.out / "final.params", state.params);
  write_text(r.out / "ledger.csv",
             privacy::ledger_csv_header() + "\n" + privacy::ledger_csv_row(state.ledger) + "\n");

  const double acc = accuracy(state.params, side.dev);
  r.metrics.add("final", done, "dev_accuracy", acc);
  r.metrics.add("final", done, "epsilon", privacy::account_epsilon(state.ledger));
  return {true, acc};
}

matching::SelectionMode selection_mode(const Config& c) {
  const std::string s = c.text("pipeline.selection");
  if (s == "matched") return matching::SelectionMode::kMatched;
  if (s == "random") return matching::SelectionMode::kRandom;
  throw ValidationError("pipeline.selection", "expected matched or random");
}

RunOutcome pipeline(const Run& r) {
  const Config& c = r.cfg;
  const auto tok = tokenizer::load_tokenizer(r.input("tokenizer"));
  const auto pub = corpus::read_corpus(r.input("public"), corpus::Origin::kPublic);
  const auto teacher = model::load_params(r.input("teacher"));
  const auto side = private_side(r, tok);

  matching::PipelineConfig pc;
  pc.t_prime = c.count("pipeline.t_prime");
  pc.q = c.real("pipeline.q");
  pc.use_pub_score = c.flag("pipeline.use_pub_score");
  pc.selection = selection_mode(c);
  pc.distill = distill_config(c);
  pc.mid = {c.count("pipeline.mid_steps"), c.count("pipeline.mid_batch_size"), c.real("pipeline.mid_lr"),
            r.stream("mid")};
  pc.fl = fl_config(r);
  pc.validate();
  pc.fl.validate(side.pool.size());

  matching::PipelineInputs in{&pub, &side.pool, &teacher, &tok, student_init(r, tok),
                              pc.fl.eval_every ? dev_eval(side.dev) : federation::EvalFn{}};
  const auto res = matching::run_pipeline(pc, in);
  const auto& rep = res.report;

  std::ofstream rounds(r.out / "rounds.csv");
  rounds << federation::rounds_csv_header() << '\n';
  record_rounds(r, "stage1", rep.stage1, rounds);
  record_losses(r, "mid", rep.mid_loss);
  record_rounds(r, "stage5", rep.stage5, rounds);

  model::save_params(r.out / "stage1.params", rep.stage1_params);
  model::save_params(r.out / "final.params", res.params);
  if (!rep.scores.empty()) matching::write_scores_csv(r.out / "scores.csv", rep.scores);
  std::string ids;
  for (const auto& id : rep.selected) ids += id + "\n";
  write_text(r.out / "selected.txt", ids);
  write_text(r.out / "ledger.csv",
             privacy::ledger_csv_header() + "\n" + privacy::ledger_csv_row(rep.ledger) + "\n");

  const double acc = accuracy(res.params, side.dev);
  r.metrics.add("selection", pc.t_prime, "selected", static_cast<double>(rep.selected.size()));
  r.metrics.add("selection", pc.t_prime, "random_fallback", rep.random_fallback ? 1.0 : 0.0);
  r.metrics.add("final", pc.fl.total_rounds, "dev_accuracy", acc);
  r.metrics.add("final", pc.fl.total_rounds, "epsilon", rep.epsilon);
  return {true, acc};
}

RunOutcome match(const Run& r) {
  const Config& c = r.cfg;
  const auto tok = tokenizer::load_tokenizer(r.input("tokenizer"));
  const auto pub = corpus::read_corpus(r.input("public"), corpus::Origin::kPublic);
  const auto priv = model::load_params(r.input("checkpoint"));
  const auto teacher = model::load_params(r.input("teacher"));
  const double q = c.real("pipeline.q");
  if (!(q >= 0 && q <= 1)) throw ValidationError("pipeline.q", "must lie in [0, 1]");

  const auto scores = matching::score_public(pub, priv, teacher, tok);
  const auto selected = matching::select_top(scores, q, c.flag("pipeline.use_pub_score"));
  matching::write_scores_csv(r.out / "scores.csv", scores);
  std::string ids;
  for (const auto& id : selected) ids += id + "\n";
  write_text(r.out / "selected.txt", ids);
  r.metrics.add("match", 0, "scored", static_cast<double>(scores.size()));
  r.metrics.add("match", 0, "selected", static_cast<double>(selected.size()));
  return {};
}

RunOutcome ppl_export(const Run& r) {
  const auto tok = tokenizer::load_tokenizer(r.input("tokenizer"));
  const auto pub = corpus::read_corpus(r.input("public"), corpus::Origin::kPublic);
  const auto sample = corpus::read_corpus(r.input("private_sample"), corpus::Origin::kPrivate);
  const auto priv = model::load_params(r.input("checkpoint"));
  const auto teacher = model::load_params(r.input("teacher"));
  const auto rows = matching::ppl_scatter_export(pub, sample, priv, teacher, tok);
  matching::write_ppl_csv(r.out / "ppl.csv", rows);
  r.metrics.add("ppl-export", 0, "rows", static_cast<double>(rows.size()));
  return {};
}

theory::LogDensity normalized(theory::Vec logits) {
  double hi = -HUGE_VAL, s = 0;
  for (double x : logits) hi = std::max(hi, x);
  for (double x : logits) s += std::exp(x - hi);
  for (double& x : logits) x -= hi + std::log(s);
  return {logits};
}

// Public density at squared pi-distance d2 from a random private one.
std::tuple<theory::LogDensity, theory::LogDensity, theory::InnerProductSpec> theory_instance(
    std::size_t n, double d2, const std::string& pi_choice, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::gamma_distribution<double> g(2.0, 1.0);
  theory::Vec p(n);
  double total = 0;
  for (double& x : p) total += (x = g(rng) + 1e-300);
  for (double& x : p) x /= total;
  const auto priv = theory::LogDensity::from_probabilities(p);
  theory::InnerProductSpec pi;
  if (pi_choice == "private") {
    pi = theory::InnerProductSpec::from_log_density(priv);
  } else if (pi_choice == "uniform") {
    pi = theory::InnerProductSpec::uniform(n);
  } else {
    throw ValidationError("theory.pi", "expected private or uniform");
  }
  std::normal_distribution<double> z(0, 1);
  theory::Vec dir(n);
  for (double& x : dir) x = z(rng);
  auto make = [&](double lambda) {
    theory::Vec v = priv.values;
    for (std::size_t i = 0; i < n; ++i) v[i] += lambda * dir[i];
    return normalized(v);
  };
  auto dist2 = [&](double lambda) {
    return std::pow(theory::dist_pi(make(lambda).values, priv.values, pi.pi), 2);
  };
  double lo = 0, hi = 1;
  while (dist2(hi) < d2) hi *= 2;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (dist2(mid) < d2 ? lo : hi) = mid;
  }
  return {make(0.5 * (lo + hi)), priv, pi};
}

RunOutcome theory_sim(const Run& r) {
  const Config& c = r.cfg;
  const auto d2s = c.reals("theory.d2"), s2s = c.reals("theory.sigma2"), betas = c.reals("theory.betas");
  const std::size_t n = c.count("theory.domain_size"), samples = c.count("theory.samples");
  if (n < 2) throw ValidationError("theory.domain_size", "must be at least 2");
  if (samples == 0) throw ValidationError("theory.samples", "must be positive");
  for (double x : d2s) if (!(x >= 0)) throw ValidationError("theory.d2", "must be non-negative");
  for (double x : s2s) if (!(x >= 0)) throw ValidationError("theory.sigma2", "must be non-negative");
  for (double b : betas) if (!(b >= 0 && b <= 1)) throw ValidationError("theory.betas", "must lie in [0, 1]");

  std::ofstream curve(r.out / "theory.csv");
  curve << "d2,sigma2,beta,mc_error,analytic_error\n";
  std::ofstream checks(r.out / "interpretation.csv");
  checks << "d2,sigma2,err_pub,err_priv,err_half,half_max_holds,min_holds,ratio_in_band,optimal_beta\n";
  char buf[256];
  std::size_t setting = 0;
  for (double d2 : d2s) {
    for (double s2 : s2s) {
      const auto [pub, priv, pi] =
          theory_instance(n, d2, c.text("theory.pi"), derive_seed(r.seed, "instance", setting));
      // Uniform stddev s gives sum_i pi_i s^2 = s^2 for any normalized pi.
      const theory::NoisyLogDensity noisy{priv, theory::Vec(n, std::sqrt(s2))};
      for (double beta : betas) {
        const double mc =
            theory::mc_estimator_error(pub, noisy, pi, beta, samples, derive_seed(r.seed, "mc", setting));
        const double exact = theory::analytic_error(beta, d2, s2);
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g\n", d2, s2, beta, mc, exact);
        curve << buf;
        r.metrics.add("theory", setting, "mc_rel_error", exact > 0 ? std::abs(mc / exact - 1) : mc);
      }
      const auto rep = theory::interpretation_checks(d2, s2);
      std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g,%d,%d,%d,%.17g\n", d2, s2, rep.err_pub,
                    rep.err_priv, rep.err_half, rep.half_max_holds, rep.min_holds, rep.ratio_in_band,
                    d2 + s2 > 0 ? theory::optimal_beta(d2, s2) : 0.5);
      checks << buf;
      ++setting;
    }
  }
  return {};
}

RunOutcome eval(const Run& r) {
  const auto tok = tokenizer::load_tokenizer(r.input("tokenizer"));
  const auto params = model::load_params(r.input("checkpoint"));
  if (params.config.vocab_size != tok.vocab_size()) {
    throw ValidationError("inputs.checkpoint", "vocabulary size does not match the tokenizer");
  }
  const auto dev = encode(r, tok, corpus::read_corpus(r.input("dev"), corpus::Origin::kPrivate));
  const double acc = accuracy(params, dev);
  double lp = 0;
  for (double x : model::avg_log_probs(params, dev)) lp += x;
  lp = dev.empty() ? 0.0 : lp / static_cast<double>(dev.size());
  r.metrics.add("eval", 0, "dev_accuracy", acc);
  r.metrics.add("eval", 0, "avg_log_prob", lp);
  r.metrics.add("eval", 0, "perplexity", model::perplexity(lp));
  return {true, acc};
}

using Handler = RunOutcome (*)(const Run&);

const std::map<std::string, Handler>& handlers() {
  static const std::map<std::string, Handler> h = {
      {"gen-corpus", gen_corpus}, {"tokenize", tokenize},     {"train-teacher", train_teacher},
      {"distill-corpus", distill_corpus}, {"pretrain", pretrain}, {"fl-train", fl_train},
      {"pipeline", pipeline},     {"match", match},           {"ppl-export", ppl_export},
      {"theory-sim", theory_sim}, {"eval", eval}};
  return h;
}

}  // namespace

void validate(const Config& config) {
  for (const auto& key : required_inputs(config)) {
    const std::string field = "inputs." + key;
    const std::string path = config.text(field);
    if (path.empty()) throw ValidationError(field, "required for kind " + config.text("kind"));
    if (!fs::exists(path)) throw ValidationError(field, "no such file: " + path);
  }
  for (const char* dir : {"inputs.public_text_dir", "inputs.private_text_dir"}) {
    const std::string path = config.text(dir);
    if (!path.empty() && !fs::is_directory(path)) throw ValidationError(dir, "no such directory: " + path);
  }
  for (const char* key : {"inputs.init", "inputs.public_heldout"}) {
    const std::string path = config.text(key);
    if (!path.empty() && !fs::exists(path)) throw ValidationError(key, "no such file: " + path);
  }
}

RunOutcome execute(const Config& config, const fs::path& out) {
  validate(config);
  fs::create_directories(out);
  write_text(out / "config.yaml", config.snapshot());
  std::string run_id = config.text("run_id");
  if (run_id.empty()) run_id = config.text("kind");
  Metrics metrics(out / "metrics.csv", run_id);
  const Run run{config, out, metrics, static_cast<std::uint64_t>(config.integer("seed"))};
  return handlers().at(config.text("kind"))(run);
}

std::size_t sweep(const Config& config, const fs::path& out) {
  const std::string kind = config.text("kind");
  if (kind != "fl-train" && kind != "pipeline") {
    throw ValidationError("kind", "sweeps run fl-train or pipeline only");
  }
  const auto& grid = config.grid();
  if (grid.empty()) throw ValidationError("sweep", "no grid declared");
  std::size_t points = 1;
  for (const auto& [path, values] : grid) points *= values.size();

  // Children are validated up front so a bad grid fails before any training.
  std::vector<Config> children;
  for (std::size_t index = 0; index < points; ++index) {
    Config child = config;
    std::size_t rest = index;
    for (auto it = grid.rbegin(); it != grid.rend(); ++it) {
      child.set(it->first, it->second[rest % it->second.size()]);
      rest /= it->second.size();
    }
    child.set("seed", std::to_string(derive_seed(static_cast<std::uint64_t>(config.integer("seed")),
                                                 "sweep", index) >> 1));
    char id[32];
    std::snprintf(id, sizeof id, "run-%03zu", index);
    child.set("run_id", id);
    validate(child);
    children.push_back(std::move(child));
  }

  struct Row {
    std::size_t index;
    double accuracy;
  };
  std::vector<Row> rows;
  fs::create_directories(out);
  for (std::size_t index = 0; index < points; ++index) {
    const auto& child = children[index];
    const auto outcome = execute(child, out / child.text("run_id"));
    rows.push_back({index, outcome.dev_accuracy});
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const Row& a, const Row& b) { return a.accuracy > b.accuracy; });

  std::ofstream summary(out / "summary.csv");
  summary << "rank,run_id";
  for (const auto& [path, values] : grid) summary << ',' << path;
  summary << ",seed,dev_accuracy\n";
  for (std::size_t rank = 0; rank < rows.size(); ++rank) {
    const auto& child = children[rows[rank].index];
    char acc[32];
    std::snprintf(acc, sizeof acc, "%.17g", rows[rank].accuracy);
    summary << rank + 1 << ',' << child.text("run_id");
    for (const auto& [path, values] : grid) summary << ',' << child.text(path);
    summary << ',' << child.text("seed") << ',' << acc << '\n';
  }
  return points;
}

}  // namespace dpfl::cli

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

#include "config.h"

#include <yaml-cpp/yaml.h>

#include <charconv>
#include <fstream>
#include <sstream>

#include "dpfl/common/error.h"

namespace dpfl::cli {
namespace {

bool parse_real(std::string_view s, double& out) {
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

bool parse_integer(std::string_view s, std::int64_t& out) {
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

std::vector<std::string> list_items(const YAML::Node& node) {
  std::vector<std::string> items;
  if (node.IsSequence()) {
    for (const auto& item : node) {
      if (!item.IsScalar()) throw ValidationError("", "list items must be scalars");
      items.push_back(item.Scalar());
    }
  } else if (node.IsScalar()) {
    items.push_back(node.Scalar());
  }
  return items;
}

std::string join_list(const std::vector<std::string>& items) {
  std::string out = "[";
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? ", " : "") + items[i];
  return out + "]";
}

void check_scalar(const Field& f, const std::string& value, const std::string& where) {
  double r;
  std::int64_t n;
  switch (f.kind) {
    case Kind::kReal:
      if (!parse_real(value, r)) throw ValidationError(where, "expected a real number, got '" + value + "'");
      break;
    case Kind::kInteger:
      if (!parse_integer(value, n)) throw ValidationError(where, "expected an integer, got '" + value + "'");
      break;
    case Kind::kFlag:
      if (value != "true" && value != "false") {
        throw ValidationError(where, "expected true or false, got '" + value + "'");
      }
      break;
    case Kind::kRealList:
    case Kind::kText:
    case Kind::kPath:
      break;
  }
}

}  // namespace

const std::vector<Field>& schema() {
  static const std::vector<Field> fields = {
      {"kind", Kind::kText, "fl-train"},
      {"seed", Kind::kInteger, "0"},
      {"run_id", Kind::kText, ""},

      {"inputs.public", Kind::kPath, ""},
      {"inputs.public_heldout", Kind::kPath, ""},
      {"inputs.clients", Kind::kPath, ""},
      {"inputs.dev", Kind::kPath, ""},
      {"inputs.private_sample", Kind::kPath, ""},
      {"inputs.public_text_dir", Kind::kPath, ""},
      {"inputs.private_text_dir", Kind::kPath, ""},
      {"inputs.tokenizer", Kind::kPath, ""},
      {"inputs.teacher", Kind::kPath, ""},
      {"inputs.distill", Kind::kPath, ""},
      {"inputs.init", Kind::kPath, ""},
      {"inputs.checkpoint", Kind::kPath, ""},

      {"corpus.alpha", Kind::kReal, "0.5"},
      {"corpus.vocab_size_words", Kind::kInteger, "48"},
      {"corpus.doc_length_min", Kind::kInteger, "5"},
      {"corpus.doc_length_max", Kind::kInteger, "20"},
      {"corpus.n_public", Kind::kInteger, "3000"},
      {"corpus.n_public_heldout", Kind::kInteger, "400"},
      {"corpus.n_private", Kind::kInteger, "1600"},
      {"corpus.n_dev", Kind::kInteger, "400"},
      {"corpus.n_clients", Kind::kInteger, "200"},
      {"corpus.heterogeneity", Kind::kReal, "0.5"},
      {"corpus.in_domain_share", Kind::kReal, "0"},
      {"corpus.ingest_rule", Kind::kText, "per-line"},

      {"tokenizer.kind", Kind::kText, "bpe"},
      {"tokenizer.vocab_size", Kind::kInteger, "96"},
      {"tokenizer.max_seq_len", Kind::kInteger, "20"},

      {"model.arch", Kind::kText, "recurrent", true},
      {"model.embed_dim", Kind::kInteger, "16", true},
      {"model.hidden_dim", Kind::kInteger, "32", true},

      {"teacher.arch", Kind::kText, "recurrent"},
      {"teacher.embed_dim", Kind::kInteger, "32"},
      {"teacher.hidden_dim", Kind::kInteger, "96"},
      {"teacher.steps", Kind::kInteger, "1500"},
      {"teacher.batch_size", Kind::kInteger, "64"},
      {"teacher.lr", Kind::kReal, "5e-3"},

      {"distill.k", Kind::kInteger, "10"},
      {"distill.temperature", Kind::kReal, "1", true},
      {"distill.beta", Kind::kReal, "0.01", true},

      {"pretrain.steps", Kind::kInteger, "300", true},
      {"pretrain.batch_size", Kind::kInteger, "64"},
      {"pretrain.lr", Kind::kReal, "5e-3", true},
      {"pretrain.use_distill", Kind::kFlag, "false"},

      {"fl.clients_per_round", Kind::kInteger, "50", true},
      {"fl.local_batch_size", Kind::kInteger, "4", true},
      {"fl.local_epochs", Kind::kInteger, "1", true},
      {"fl.max_examples_per_client", Kind::kInteger, "256"},
      {"fl.total_rounds", Kind::kInteger, "200"},
      {"fl.server_lr", Kind::kReal, "0.5", true},
      {"fl.client_lr", Kind::kReal, "1", true},
      {"fl.clip_norm", Kind::kReal, "0.2", true},
      {"fl.noise_multiplier", Kind::kReal, "0", true},
      {"fl.delta", Kind::kReal, "1e-6"},
      {"fl.adaptive_clip", Kind::kFlag, "false", true},
      {"fl.target_quantile", Kind::kReal, "0.5", true},
      {"fl.clip_lr", Kind::kReal, "0.2", true},
      {"fl.eval_every", Kind::kInteger, "0"},
      {"fl.checkpoint_every", Kind::kInteger, "0"},

      {"pipeline.t_prime", Kind::kInteger, "100", true},
      {"pipeline.q", Kind::kReal, "0.1", true},
      {"pipeline.use_pub_score", Kind::kFlag, "true", true},
      {"pipeline.selection", Kind::kText, "matched", true},
      {"pipeline.mid_steps", Kind::kInteger, "200", true},
      {"pipeline.mid_batch_size", Kind::kInteger, "32"},
      {"pipeline.mid_lr", Kind::kReal, "5e-3", true},

      {"theory.d2", Kind::kRealList, "[0.25, 1, 3]"},
      {"theory.sigma2", Kind::kRealList, "[1]"},
      {"theory.betas", Kind::kRealList, "[0, 0.25, 0.5, 0.75, 1]"},
      {"theory.samples", Kind::kInteger, "100000"},
      {"theory.domain_size", Kind::kInteger, "64"},
      {"theory.pi", Kind::kText, "private"},
  };
  return fields;
}

Config::Config() {
  for (const auto& f : schema()) values_[f.path] = f.fallback;
}

const Field& Config::field(const std::string& path) const {
  for (const auto& f : schema()) {
    if (f.path == path) return f;
  }
  throw ValidationError(path, "unknown configuration key");
}

const std::string& Config::raw(const std::string& path) const {
  field(path);
  return values_.at(path);
}

void Config::set(const std::string& path, const std::string& value) {
  const Field& f = field(path);
  if (f.kind == Kind::kRealList) {
    YAML::Node node;
    try {
      node = YAML::Load(value);
    } catch (const YAML::Exception& e) {
      throw ValidationError(path, std::string("not a list: ") + e.what());
    }
    const auto items = list_items(node);
    for (const auto& item : items) {
      double r;
      if (!parse_real(item, r)) throw ValidationError(path, "expected real numbers, got '" + item + "'");
    }
    values_[path] = join_list(items);
    return;
  }
  check_scalar(f, value, path);
  values_[path] = value;
}

Config Config::parse(std::string_view yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(yaml_text));
  } catch (const YAML::Exception& e) {
    throw ValidationError("config", std::string("malformed YAML: ") + e.what());
  }
  Config c;
  if (root.IsNull()) return c;
  if (!root.IsMap()) throw ValidationError("config", "top level must be a mapping");
  for (const auto& top : root) {
    const std::string key = top.first.Scalar();
    const YAML::Node& value = top.second;
    if (key == "sweep") {
      if (!value.IsMap()) throw ValidationError("sweep", "must map keys to value lists");
      for (const auto& g : value) {
        const std::string path = g.first.Scalar();
        const Field& f = c.field(path);
        if (!f.tunable) throw ValidationError("sweep." + path, "field is not tunable");
        auto items = list_items(g.second);
        if (items.empty()) throw ValidationError("sweep." + path, "needs at least one value");
        for (const auto& item : items) check_scalar(f, item, "sweep." + path);
        c.grid_.emplace_back(path, std::move(items));
      }
      continue;
    }
    if (value.IsMap()) {
      for (const auto& leaf : value) {
        const std::string path = key + "." + leaf.first.Scalar();
        const Field& f = c.field(path);
        if (f.kind == Kind::kRealList) {
          std::ostringstream flow;
          flow << YAML::Dump(leaf.second);
          c.set(path, flow.str());
        } else {
          if (!leaf.second.IsScalar()) throw ValidationError(path, "expected a scalar");
          c.set(path, leaf.second.Scalar());
        }
      }
    } else if (value.IsScalar()) {
      c.set(key, value.Scalar());
    } else {
      throw ValidationError(key, "unexpected value");
    }
  }
  return c;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("--config", "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

double Config::real(const std::string& path) const {
  double r = 0;
  parse_real(raw(path), r);
  return r;
}

std::int64_t Config::integer(const std::string& path) const {
  std::int64_t n = 0;
  parse_integer(raw(path), n);
  return n;
}

std::size_t Config::count(const std::string& path) const {
  const auto n = integer(path);
  if (n < 0) throw ValidationError(path, "must be non-negative");
  return static_cast<std::size_t>(n);
}

bool Config::flag(const std::string& path) const { return raw(path) == "true"; }

std::string Config::text(const std::string& path) const { return raw(path); }

std::vector<double> Config::reals(const std::string& path) const {
  std::vector<double> out;
  for (const auto& item : list_items(YAML::Load(raw(path)))) {
    double r = 0;
    parse_real(item, r);
    out.push_back(r);
  }
  return out;
}

std::string Config::snapshot() const {
  YAML::Emitter out;
  out << YAML::BeginMap;
  std::string section;
  for (const auto& f : schema()) {
    const auto dot = f.path.find('.');
    const std::string head = dot == std::string::npos ? "" : f.path.substr(0, dot);
    if (head != section) {
      if (!section.empty()) out << YAML::EndMap;
      section = head;
      if (!section.empty()) out << YAML::Key << section << YAML::Value << YAML::BeginMap;
    }
    const std::string key = dot == std::string::npos ? f.path : f.path.substr(dot + 1);
    out << YAML::Key << key << YAML::Value;
    const std::string& v = values_.at(f.path);
    if (f.kind == Kind::kRealList) {
      out << YAML::Flow << YAML::BeginSeq;
      for (const auto& item : list_items(YAML::Load(v))) out << item;
      out << YAML::EndSeq;
    } else if (f.kind == Kind::kText || f.kind == Kind::kPath) {
      out << YAML::DoubleQuoted << v;
    } else {
      out << v;
    }
  }
  if (!section.empty()) out << YAML::EndMap;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

}  // namespace dpfl::cli

#include "unimixer/config.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "unimixer/errors.hpp"

namespace unimixer {

namespace {

void check_keys(const YAML::Node& node, const std::string& where, const std::set<std::string>& allowed) {
  if (!node.IsMap()) throw ConfigError(where + ": expected a mapping");
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

template <class T>
void read(const YAML::Node& node, const char* key, T& out, const std::string& where) {
  const YAML::Node v = node[key];
  if (!v) return;
  try {
    out = v.as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError(where + "." + key + ": cannot read value '" + YAML::Dump(v) + "'");
  }
}

void read_size(const YAML::Node& node, const char* key, std::size_t& out, const std::string& where) {
  long long v = static_cast<long long>(out);
  read(node, key, v, where);
  if (v < 0) throw ConfigError(where + "." + key + " must be non-negative");
  out = static_cast<std::size_t>(v);
}

const std::set<std::string> kTokenizerKeys{"embed_dim", "chunk", "token_dim"};
const std::set<std::string> kBlockKeys{"variant", "count", "block", "expansion", "rank", "basis",
                                       "heads", "tau", "sinkhorn_iters", "norm_eps"};

void read_tokenizer(const YAML::Node& node, std::size_t& embed_dim, ModelConfig& m, const std::string& where) {
  read_size(node, "embed_dim", embed_dim, where);
  read_size(node, "chunk", m.chunk, where);
  read_size(node, "token_dim", m.token_dim, where);
}

void read_blocks(const YAML::Node& node, ModelConfig& m, const std::string& where) {
  if (node["variant"]) {
    std::string v;
    read(node, "variant", v, where);
    m.mixer = parse_mixer_kind(v);
  }
  read_size(node, "count", m.num_blocks, where);
  read_size(node, "block", m.block, where);
  read_size(node, "expansion", m.expansion, where);
  read_size(node, "rank", m.rank, where);
  read_size(node, "basis", m.basis, where);
  read_size(node, "heads", m.mixer_heads, where);
  read(node, "tau", m.tau, where);
  read_size(node, "sinkhorn_iters", m.sinkhorn_iters, where);
  read(node, "norm_eps", m.norm_eps, where);
}

void emit_blocks(YAML::Emitter& out, const ModelConfig& m) {
  out << YAML::Key << "blocks" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "variant" << YAML::Value << to_string(m.mixer);
  out << YAML::Key << "count" << YAML::Value << m.num_blocks;
  out << YAML::Key << "block" << YAML::Value << m.block;
  out << YAML::Key << "expansion" << YAML::Value << m.expansion;
  out << YAML::Key << "rank" << YAML::Value << m.rank;
  out << YAML::Key << "basis" << YAML::Value << m.basis;
  out << YAML::Key << "heads" << YAML::Value << m.mixer_heads;
  out << YAML::Key << "tau" << YAML::Value << m.tau;
  out << YAML::Key << "sinkhorn_iters" << YAML::Value << m.sinkhorn_iters;
  out << YAML::Key << "norm_eps" << YAML::Value << m.norm_eps;
  out << YAML::EndMap;
}

YAML::Node parse_yaml(const std::string& text) {
  try {
    YAML::Node root = YAML::Load(text);
    if (root.IsNull()) return YAML::Node(YAML::NodeType::Map);
    return root;
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

}  // namespace

void RunConfig::validate() const {
  data.validate();
  model.validate();
  training.validate();
  for (const auto& p : sweep.grid) p.model.validate();
  if (sweep.seeds.empty()) throw ConfigError("sweep: at least one seed is required");
}

RunConfig default_run_config() {
  RunConfig cfg;
  cfg.data.samples = 5000;
  cfg.data.groups = 100;
  for (int f = 0; f < 6; ++f) cfg.data.fields.push_back(DataField{"c" + std::to_string(f), 16, 0});
  cfg.data.fields.push_back(DataField{"dense", 0, 8});
  cfg.data.terms = {PlantedTerm{{0, 1}, 1.5}, PlantedTerm{{2, 3}, 1.2}, PlantedTerm{{1, 4, 5}, 1.0},
                    PlantedTerm{{6}, 0.5}};
  cfg.model.fields = model_fields(cfg.data.fields, cfg.embed_dim);
  return cfg;
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg = default_run_config();
  const YAML::Node root = parse_yaml(text);
  try {
    check_keys(root, "config", {"seed", "data", "tokenizer", "blocks", "training", "sweep"});
    long long seed = static_cast<long long>(cfg.seed);
    read(root, "seed", seed, "config");
    cfg.seed = static_cast<std::uint64_t>(seed);

    if (const YAML::Node d = root["data"]) {
      check_keys(d, "data", {"samples", "groups", "noise", "bias", "seed", "fields", "terms"});
      read_size(d, "samples", cfg.data.samples, "data");
      read_size(d, "groups", cfg.data.groups, "data");
      read(d, "noise", cfg.data.noise, "data");
      read(d, "bias", cfg.data.bias, "data");
      long long dseed = static_cast<long long>(cfg.data.seed);
      read(d, "seed", dseed, "data");
      cfg.data.seed = static_cast<std::uint64_t>(dseed);
      if (const YAML::Node fields = d["fields"]) {
        if (!fields.IsSequence()) throw ConfigError("data.fields: expected a list");
        cfg.data.fields.clear();
        for (const auto& f : fields) {
          check_keys(f, "data.fields[]", {"name", "cardinality", "dense_dim"});
          DataField field;
          read(f, "name", field.name, "data.fields[]");
          read_size(f, "cardinality", field.cardinality, "data.fields[]");
          read_size(f, "dense_dim", field.dense_dim, "data.fields[]");
          if (field.name.empty()) field.name = "f" + std::to_string(cfg.data.fields.size());
          cfg.data.fields.push_back(field);
        }
        cfg.data.terms.clear();
      }
      if (const YAML::Node terms = d["terms"]) {
        if (!terms.IsSequence()) throw ConfigError("data.terms: expected a list");
        cfg.data.terms.clear();
        for (const auto& t : terms) {
          check_keys(t, "data.terms[]", {"fields", "coefficient"});
          PlantedTerm term;
          std::vector<long long> idx;
          read(t, "fields", idx, "data.terms[]");
          for (long long i : idx) {
            if (i < 0) throw ConfigError("data.terms[].fields: negative field index");
            term.fields.push_back(static_cast<std::size_t>(i));
          }
          read(t, "coefficient", term.coefficient, "data.terms[]");
          cfg.data.terms.push_back(term);
        }
      }
    }

    if (const YAML::Node t = root["tokenizer"]) {
      check_keys(t, "tokenizer", kTokenizerKeys);
      read_tokenizer(t, cfg.embed_dim, cfg.model, "tokenizer");
    }
    if (const YAML::Node b = root["blocks"]) {
      check_keys(b, "blocks", kBlockKeys);
      read_blocks(b, cfg.model, "blocks");
    }
    cfg.model.fields = model_fields(cfg.data.fields, cfg.embed_dim);

    if (const YAML::Node t = root["training"]) {
      check_keys(t, "training", {"steps", "batch_size", "lr", "beta1", "beta2", "adam_eps", "holdout", "eval_every",
                                 "anneal", "warm_restart"});
      read_size(t, "steps", cfg.training.steps, "training");
      read_size(t, "batch_size", cfg.training.batch_size, "training");
      read(t, "lr", cfg.training.adam.lr, "training");
      read(t, "beta1", cfg.training.adam.beta1, "training");
      read(t, "beta2", cfg.training.adam.beta2, "training");
      read(t, "adam_eps", cfg.training.adam.eps, "training");
      read(t, "holdout", cfg.training.holdout, "training");
      read_size(t, "eval_every", cfg.training.eval_every, "training");
      if (const YAML::Node a = t["anneal"]) {
        check_keys(a, "training.anneal", {"tau_start", "tau_end", "steps"});
        AnnealSchedule s;
        read(a, "tau_start", s.tau_start, "training.anneal");
        read(a, "tau_end", s.tau_end, "training.anneal");
        read_size(a, "steps", s.steps, "training.anneal");
        cfg.training.anneal = s;
      }
      if (const YAML::Node w = t["warm_restart"]) {
        check_keys(w, "training.warm_restart", {"high_tau", "phase1_steps", "low_tau"});
        WarmRestart r;
        read(w, "high_tau", r.high_tau, "training.warm_restart");
        read_size(w, "phase1_steps", r.phase1_steps, "training.warm_restart");
        read(w, "low_tau", r.low_tau, "training.warm_restart");
        cfg.training.warm_restart = r;
      }
    }
    cfg.training.seed = cfg.seed;

    if (const YAML::Node s = root["sweep"]) {
      check_keys(s, "sweep", {"seeds", "baseline_auc", "grid"});
      if (s["seeds"]) {
        std::vector<long long> seeds;
        read(s, "seeds", seeds, "sweep");
        cfg.sweep.seeds.clear();
        for (long long v : seeds) cfg.sweep.seeds.push_back(static_cast<std::uint64_t>(v));
      }
      read(s, "baseline_auc", cfg.sweep.baseline_auc, "sweep");
      if (const YAML::Node grid = s["grid"]) {
        if (!grid.IsSequence()) throw ConfigError("sweep.grid: expected a list");
        std::set<std::string> allowed{"label"};
        allowed.insert(kTokenizerKeys.begin(), kTokenizerKeys.end());
        allowed.insert(kBlockKeys.begin(), kBlockKeys.end());
        for (const auto& entry : grid) {
          check_keys(entry, "sweep.grid[]", allowed);
          SweepPoint point;
          point.model = cfg.model;
          std::size_t embed_dim = cfg.embed_dim;
          read_tokenizer(entry, embed_dim, point.model, "sweep.grid[]");
          read_blocks(entry, point.model, "sweep.grid[]");
          point.model.fields = model_fields(cfg.data.fields, embed_dim);
          read(entry, "label", point.label, "sweep.grid[]");
          if (point.label.empty()) point.label = to_string(point.model.mixer);
          cfg.sweep.grid.push_back(point);
        }
      }
    }
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

std::string emit_run_config(const RunConfig& cfg) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << YAML::BeginMap;
  out << YAML::Key << "seed" << YAML::Value << cfg.seed;

  out << YAML::Key << "data" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "samples" << YAML::Value << cfg.data.samples;
  out << YAML::Key << "groups" << YAML::Value << cfg.data.groups;
  out << YAML::Key << "noise" << YAML::Value << cfg.data.noise;
  out << YAML::Key << "bias" << YAML::Value << cfg.data.bias;
  out << YAML::Key << "seed" << YAML::Value << cfg.data.seed;
  out << YAML::Key << "fields" << YAML::Value << YAML::BeginSeq;
  for (const auto& f : cfg.data.fields) {
    out << YAML::Flow << YAML::BeginMap << YAML::Key << "name" << YAML::Value << f.name;
    if (f.categorical()) {
      out << YAML::Key << "cardinality" << YAML::Value << f.cardinality;
    } else {
      out << YAML::Key << "dense_dim" << YAML::Value << f.dense_dim;
    }
    out << YAML::EndMap;
  }
  out << YAML::EndSeq;
  out << YAML::Key << "terms" << YAML::Value << YAML::BeginSeq;
  for (const auto& t : cfg.data.terms) {
    out << YAML::Flow << YAML::BeginMap << YAML::Key << "fields" << YAML::Value << YAML::Flow << t.fields;
    out << YAML::Key << "coefficient" << YAML::Value << t.coefficient << YAML::EndMap;
  }
  out << YAML::EndSeq << YAML::EndMap;

  out << YAML::Key << "tokenizer" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "embed_dim" << YAML::Value << cfg.embed_dim;
  out << YAML::Key << "chunk" << YAML::Value << cfg.model.chunk;
  out << YAML::Key << "token_dim" << YAML::Value << cfg.model.token_dim;
  out << YAML::EndMap;
  emit_blocks(out, cfg.model);

  const auto& t = cfg.training;
  out << YAML::Key << "training" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "steps" << YAML::Value << t.steps;
  out << YAML::Key << "batch_size" << YAML::Value << t.batch_size;
  out << YAML::Key << "lr" << YAML::Value << t.adam.lr;
  out << YAML::Key << "beta1" << YAML::Value << t.adam.beta1;
  out << YAML::Key << "beta2" << YAML::Value << t.adam.beta2;
  out << YAML::Key << "adam_eps" << YAML::Value << t.adam.eps;
  out << YAML::Key << "holdout" << YAML::Value << t.holdout;
  out << YAML::Key << "eval_every" << YAML::Value << t.eval_every;
  if (t.anneal) {
    out << YAML::Key << "anneal" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "tau_start" << YAML::Value << t.anneal->tau_start;
    out << YAML::Key << "tau_end" << YAML::Value << t.anneal->tau_end;
    out << YAML::Key << "steps" << YAML::Value << t.anneal->steps << YAML::EndMap;
  }
  if (t.warm_restart) {
    out << YAML::Key << "warm_restart" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "high_tau" << YAML::Value << t.warm_restart->high_tau;
    out << YAML::Key << "phase1_steps" << YAML::Value << t.warm_restart->phase1_steps;
    out << YAML::Key << "low_tau" << YAML::Value << t.warm_restart->low_tau << YAML::EndMap;
  }
  out << YAML::EndMap;

  out << YAML::Key << "sweep" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "seeds" << YAML::Value << YAML::Flow << cfg.sweep.seeds;
  out << YAML::Key << "baseline_auc" << YAML::Value << cfg.sweep.baseline_auc;
  out << YAML::Key << "grid" << YAML::Value << YAML::BeginSeq;
  for (const auto& p : cfg.sweep.grid) {
    const auto& m = p.model;
    out << YAML::Flow << YAML::BeginMap;
    out << YAML::Key << "label" << YAML::Value << p.label;
    out << YAML::Key << "variant" << YAML::Value << to_string(m.mixer);
    out << YAML::Key << "chunk" << YAML::Value << m.chunk;
    out << YAML::Key << "token_dim" << YAML::Value << m.token_dim;
    out << YAML::Key << "count" << YAML::Value << m.num_blocks;
    out << YAML::Key << "block" << YAML::Value << m.block;
    out << YAML::Key << "expansion" << YAML::Value << m.expansion;
    out << YAML::Key << "rank" << YAML::Value << m.rank;
    out << YAML::Key << "basis" << YAML::Value << m.basis;
    out << YAML::Key << "heads" << YAML::Value << m.mixer_heads;
    out << YAML::EndMap;
  }
  out << YAML::EndSeq << YAML::EndMap;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

std::string emit_model_config(const ModelConfig& cfg) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << YAML::BeginMap;
  out << YAML::Key << "fields" << YAML::Value << YAML::BeginSeq;
  for (const auto& f : cfg.fields) {
    out << YAML::Flow << YAML::BeginMap;
    out << YAML::Key << "name" << YAML::Value << f.name;
    out << YAML::Key << "cardinality" << YAML::Value << f.cardinality;
    out << YAML::Key << "dense_dim" << YAML::Value << f.dense_dim;
    out << YAML::Key << "embed_dim" << YAML::Value << f.embed_dim;
    out << YAML::EndMap;
  }
  out << YAML::EndSeq;
  out << YAML::Key << "tokenizer" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "chunk" << YAML::Value << cfg.chunk;
  out << YAML::Key << "token_dim" << YAML::Value << cfg.token_dim;
  out << YAML::EndMap;
  emit_blocks(out, cfg);
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

ModelConfig parse_model_config(const std::string& text) {
  const YAML::Node root = parse_yaml(text);
  ModelConfig cfg;
  try {
    check_keys(root, "model", {"fields", "tokenizer", "blocks"});
    const YAML::Node fields = root["fields"];
    if (!fields || !fields.IsSequence()) throw ConfigError("model.fields: expected a list");
    for (const auto& f : fields) {
      check_keys(f, "model.fields[]", {"name", "cardinality", "dense_dim", "embed_dim"});
      FieldSpec spec;
      read(f, "name", spec.name, "model.fields[]");
      read_size(f, "cardinality", spec.cardinality, "model.fields[]");
      read_size(f, "dense_dim", spec.dense_dim, "model.fields[]");
      read_size(f, "embed_dim", spec.embed_dim, "model.fields[]");
      cfg.fields.push_back(spec);
    }
    if (const YAML::Node t = root["tokenizer"]) {
      check_keys(t, "model.tokenizer", {"chunk", "token_dim"});
      read_size(t, "chunk", cfg.chunk, "model.tokenizer");
      read_size(t, "token_dim", cfg.token_dim, "model.tokenizer");
    }
    if (const YAML::Node b = root["blocks"]) {
      check_keys(b, "model.blocks", kBlockKeys);
      read_blocks(b, cfg, "model.blocks");
    }
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

}  // namespace unimixer

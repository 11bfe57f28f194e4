// SPDX-License-Identifier: Apache-2.0
#include "engage/config.hpp"

#include <cstdlib>
#include <fstream>
#include <ostream>

namespace engage {

const std::vector<Config::SchemaEntry>& Config::schema() {
  using T = Type;
  static const std::vector<SchemaEntry> s = {
      {"model.d", T::Int, "16", "common projected width per cue"},
      {"model.k_audio", T::Int, "32", "audio group embedding width"},
      {"model.k_visual", T::Int, "32", "visual group embedding width"},
      {"model.layers", T::Int, "4", "blocks per group stack"},
      {"model.ctx_layers", T::Int, "4", "blocks in each context stack"},
      {"model.d_state", T::Int, "16", "SSM state lanes per channel"},
      {"model.chunk_size", T::Int, "32", "local attention chunk length"},
      {"model.conv_kernel", T::Int, "4", "depthwise causal conv width on the SSM input"},
      {"model.heads", T::Int, "1", "attention heads"},
      {"model.ffn_expansion", T::Int, "2", "FFN hidden width multiplier"},
      {"model.dropout", T::Float, "0.1", "dropout rate inside blocks"},
      {"model.selective", T::Bool, "false", "input-dependent SSM gating"},
      {"model.ctx_identity", T::Bool, "false", "bypass the context stacks"},
      {"model.modality_fusion", T::Bool, "true",
       "separate audio/visual group stacks (false: one stack over all cues)"},
      {"model.partner_fusion", T::Bool, "true",
       "cross-attend to partner context (false: target embeddings only)"},
      {"model.backend", T::Str, "mamba", "sequence mixer: mamba|attention"},
      {"model.bounded_head", T::Bool, "true", "sigmoid-bounded predictions in [0,1]"},
      {"model.init_seed", T::Int, "1", "parameter init seed"},
      {"align.tau", T::Float, "0.07", "InfoNCE temperature"},
      {"align.negatives", T::Int, "0", "sampled negatives per frame (0 = all other frames)"},
      {"loss.lambda_ccc", T::Float, "1.0", "concordance loss weight"},
      {"loss.lambda_align", T::Float, "0.4",
       "alignment loss weight (0 disables the term, ablation switch)"},
      {"train.lr", T::Float, "5e-05", "AdamW learning rate"},
      {"train.weight_decay", T::Float, "0.01", "decoupled weight decay"},
      {"train.batch_windows", T::Int, "128", "windows per optimizer step"},
      {"train.window", T::Int, "96", "window length in frames"},
      {"train.central", T::Int, "32", "central frames receiving predictions"},
      {"train.warmup_steps", T::Int, "500", "linear warmup steps"},
      {"train.max_grad_norm", T::Float, "5.0", "global gradient clip norm"},
      {"train.ema_decay", T::Float, "0.999", "parameter EMA decay (evaluation weights)"},
      {"train.epochs", T::Int, "30", "training epochs"},
      {"train.seed", T::Int, "1", "training seed (shuffling, dropout, negatives)"},
      {"train.lr_min_ratio", T::Float, "0.01", "cosine floor as a fraction of lr"},
      {"train.val_sessions", T::Int, "1", "sessions held out from the end of the list"},
  };
  return s;
}

namespace {
const Config::SchemaEntry* find_entry(const std::string& key) {
  for (const auto& e : Config::schema()) {
    if (e.key == key) return &e;
  }
  return nullptr;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}
} // namespace

Config::Config() {
  for (const auto& e : schema()) values_[e.key] = e.def;
}

void Config::set_checked(const std::string& key, const std::string& value,
                         const std::string& where) {
  const SchemaEntry* e = find_entry(key);
  if (!e) throw ConfigError(where + ": unknown key '" + key + "'");
  const std::string v = trim(value);
  char* end = nullptr;
  switch (e->type) {
    case Type::Int: {
      std::strtoll(v.c_str(), &end, 10);
      if (v.empty() || *end != '\0') {
        throw ConfigError(where + ": key '" + key + "' expects an integer, got '" + v + "'");
      }
      break;
    }
    case Type::Float: {
      std::strtod(v.c_str(), &end);
      if (v.empty() || *end != '\0') {
        throw ConfigError(where + ": key '" + key + "' expects a number, got '" + v + "'");
      }
      break;
    }
    case Type::Bool: {
      if (v != "true" && v != "false" && v != "1" && v != "0") {
        throw ConfigError(where + ": key '" + key + "' expects true|false, got '" + v + "'");
      }
      break;
    }
    case Type::Str:
      break;
  }
  values_[key] = v;
}

void Config::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
    }
    set_checked(trim(line.substr(0, eq)), line.substr(eq + 1),
                path + ":" + std::to_string(lineno));
  }
}

void Config::apply_override(const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + kv + "': expected key=value");
  set_checked(trim(kv.substr(0, eq)), kv.substr(eq + 1), "override");
}

std::int64_t Config::get_int(const std::string& key) const {
  return std::stoll(values_.at(key));
}
double Config::get_double(const std::string& key) const { return std::stod(values_.at(key)); }
bool Config::get_bool(const std::string& key) const {
  const auto& v = values_.at(key);
  return v == "true" || v == "1";
}
const std::string& Config::get_str(const std::string& key) const { return values_.at(key); }

ModelConfig Config::model_config() const {
  ModelConfig m;
  m.d = get_int("model.d");
  m.k_audio = get_int("model.k_audio");
  m.k_visual = get_int("model.k_visual");
  m.layers = get_int("model.layers");
  m.ctx_layers = get_int("model.ctx_layers");
  m.d_state = get_int("model.d_state");
  m.chunk_size = get_int("model.chunk_size");
  m.conv_kernel = get_int("model.conv_kernel");
  m.heads = static_cast<int>(get_int("model.heads"));
  m.ffn_expansion = static_cast<int>(get_int("model.ffn_expansion"));
  m.dropout = get_double("model.dropout");
  m.selective = get_bool("model.selective");
  m.ctx_identity = get_bool("model.ctx_identity");
  m.modality_fusion = get_bool("model.modality_fusion");
  m.partner_fusion = get_bool("model.partner_fusion");
  m.backend = backend_from_string(get_str("model.backend"));
  m.bounded_head = get_bool("model.bounded_head");
  m.init_seed = static_cast<std::uint64_t>(get_int("model.init_seed"));
  return m;
}

TrainConfig Config::train_config() const {
  TrainConfig t;
  t.lr = get_double("train.lr");
  t.weight_decay = get_double("train.weight_decay");
  t.batch_windows = get_int("train.batch_windows");
  t.window = get_int("train.window");
  t.central = get_int("train.central");
  t.warmup_steps = get_int("train.warmup_steps");
  t.max_grad_norm = get_double("train.max_grad_norm");
  t.ema_decay = get_double("train.ema_decay");
  t.epochs = get_int("train.epochs");
  t.seed = static_cast<std::uint64_t>(get_int("train.seed"));
  t.weights.lambda_ccc = get_double("loss.lambda_ccc");
  t.weights.lambda_align = get_double("loss.lambda_align");
  t.align.tau = get_double("align.tau");
  t.align.negatives = get_int("align.negatives");
  t.lr_min_ratio = get_double("train.lr_min_ratio");
  t.val_sessions = get_int("train.val_sessions");
  return t;
}

void Config::print_help(std::ostream& os) {
  os << "config keys (key = value per line, '#' comments; --override key=value):\n";
  for (const auto& e : schema()) {
    const char* tname = e.type == Type::Int      ? "int"
                        : e.type == Type::Float  ? "float"
                        : e.type == Type::Bool   ? "bool"
                                                 : "string";
    os << "  " << e.key << " (" << tname << ", default " << e.def << ") — " << e.description
       << "\n";
  }
}

} // namespace engage

#include "evo/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "evo/data.hpp"

namespace evo {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::string strip_comment(const std::string& line) {
  bool in_str = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') in_str = !in_str;
    if (line[i] == '#' && !in_str) return line.substr(0, i);
  }
  return line;
}

std::string unquote(const std::string& s) {
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
  return s;
}

}  // namespace

ConfigTree parse_toml(const std::string& text) {
  ConfigTree tree;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw std::invalid_argument("config line " + std::to_string(lineno) + ": bad section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty())
        throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty section");
      tree.sections[section];
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key or value");
    tree.sections[section][key] = value;
  }
  return tree;
}

void apply_env_overrides(ConfigTree& tree) {
  for (auto& [section, kv] : tree.sections) {
    for (auto& [key, value] : kv) {
      std::string env = "EVO_" + section + "_" + key;
      std::transform(env.begin(), env.end(), env.begin(),
                     [](unsigned char c) { return std::toupper(c); });
      if (const char* v = std::getenv(env.c_str())) value = v;
    }
  }
}

bool ConfigTree::has(const std::string& section, const std::string& key) const {
  auto s = sections.find(section);
  return s != sections.end() && s->second.count(key) > 0;
}

std::string ConfigTree::get_string(const std::string& section, const std::string& key,
                                   const std::string& fallback) const {
  auto s = sections.find(section);
  if (s == sections.end()) return fallback;
  auto k = s->second.find(key);
  if (k == s->second.end()) return fallback;
  return unquote(k->second);
}

long ConfigTree::get_int(const std::string& section, const std::string& key, long fallback) const {
  if (!has(section, key)) return fallback;
  const std::string& raw = sections.at(section).at(key);
  std::size_t pos = 0;
  long v = std::stol(raw, &pos);
  if (pos != raw.size())
    throw std::invalid_argument("config [" + section + "] " + key + ": not an integer: " + raw);
  return v;
}

double ConfigTree::get_double(const std::string& section, const std::string& key,
                              double fallback) const {
  if (!has(section, key)) return fallback;
  const std::string& raw = sections.at(section).at(key);
  std::size_t pos = 0;
  double v = std::stod(raw, &pos);
  if (pos != raw.size())
    throw std::invalid_argument("config [" + section + "] " + key + ": not a number: " + raw);
  return v;
}

bool ConfigTree::get_bool(const std::string& section, const std::string& key,
                          bool fallback) const {
  if (!has(section, key)) return fallback;
  const std::string& raw = sections.at(section).at(key);
  if (raw == "true") return true;
  if (raw == "false") return false;
  throw std::invalid_argument("config [" + section + "] " + key + ": not a boolean: " + raw);
}

std::vector<std::string> ConfigTree::get_string_list(const std::string& section,
                                                     const std::string& key) const {
  std::vector<std::string> out;
  if (!has(section, key)) return out;
  std::string raw = sections.at(section).at(key);
  if (raw.size() < 2 || raw.front() != '[' || raw.back() != ']')
    throw std::invalid_argument("config [" + section + "] " + key + ": expected [ ... ] array");
  std::string body = raw.substr(1, raw.size() - 2);
  std::size_t at = 0;
  while (at < body.size()) {
    std::size_t comma = body.find(',', at);
    std::string item = body.substr(at, comma == std::string::npos ? std::string::npos : comma - at);
    item = trim(item);
    if (!item.empty()) out.push_back(unquote(item));
    if (comma == std::string::npos) break;
    at = comma + 1;
  }
  return out;
}

TimeMode time_mode_from_string(const std::string& s) {
  if (s == "full") return TimeMode::learned;
  if (s == "t0") return TimeMode::fixed0;
  if (s == "t1") return TimeMode::fixed1;
  if (s == "t_half") return TimeMode::fixed_half;
  if (s == "heuristic-entropy") return TimeMode::heuristic_entropy;
  throw std::invalid_argument("unknown ablation mode: " + s);
}

RunConfig run_config_from_tree(const ConfigTree& tree) {
  RunConfig rc;
  rc.model.d = static_cast<int>(tree.get_int("model", "d", rc.model.d));
  rc.model.layers = static_cast<int>(tree.get_int("model", "layers", rc.model.layers));
  rc.model.heads = static_cast<int>(tree.get_int("model", "heads", rc.model.heads));
  rc.model.ffn_mult = static_cast<int>(tree.get_int("model", "ffn_mult", rc.model.ffn_mult));
  rc.model.vocab_size = static_cast<int>(tree.get_int("model", "vocab_size", rc.model.vocab_size));
  rc.model.k_max = static_cast<int>(tree.get_int("model", "k_max", rc.model.k_max));
  rc.model.max_seq_len =
      static_cast<int>(tree.get_int("model", "max_seq_len", rc.model.max_seq_len));
  rc.model.dropout = tree.get_double("model", "dropout", rc.model.dropout);
  rc.model.time_base_freq =
      tree.get_double("model", "time_base_freq", rc.model.time_base_freq);

  rc.train.peak_lr = tree.get_double("train", "peak_lr", rc.train.peak_lr);
  rc.train.warmup_steps =
      static_cast<int>(tree.get_int("train", "warmup_steps", rc.train.warmup_steps));
  rc.train.total_steps =
      static_cast<int>(tree.get_int("train", "total_steps", rc.train.total_steps));
  rc.train.seq_len = static_cast<int>(tree.get_int("train", "seq_len", rc.train.seq_len));
  rc.train.batch_tokens =
      static_cast<int>(tree.get_int("train", "batch_tokens", rc.train.batch_tokens));
  rc.train.grad_clip = tree.get_double("train", "grad_clip", rc.train.grad_clip);
  rc.train.label_smoothing =
      tree.get_double("train", "label_smoothing", rc.train.label_smoothing);
  rc.train.ema_decay = tree.get_double("train", "ema_decay", rc.train.ema_decay);
  rc.train.beta1 = tree.get_double("train", "beta1", rc.train.beta1);
  rc.train.beta2 = tree.get_double("train", "beta2", rc.train.beta2);
  rc.train.eps = tree.get_double("train", "eps", rc.train.eps);
  rc.train.weight_decay = tree.get_double("train", "weight_decay", rc.train.weight_decay);
  rc.train.seed = static_cast<std::uint64_t>(tree.get_int("train", "seed", 0));
  rc.train.w_ent = tree.get_double("train", "w_ent", rc.train.w_ent);
  rc.train.anneal_floor = tree.get_double("train", "anneal_floor", rc.train.anneal_floor);
  rc.train.entropy_bins =
      static_cast<int>(tree.get_int("train", "entropy_bins", rc.train.entropy_bins));
  rc.train.entropy_tau = tree.get_double("train", "entropy_tau", rc.train.entropy_tau);
  rc.train.gate_tau_start =
      tree.get_double("train", "gate_tau_start", rc.train.gate_tau_start);
  rc.train.gate_tau_end = tree.get_double("train", "gate_tau_end", rc.train.gate_tau_end);
  rc.train.threads = static_cast<int>(tree.get_int("train", "threads", rc.train.threads));
  std::string indexing = tree.get_string("train", "noise_indexing", "per_token");
  if (indexing == "per_token")
    rc.train.noise_indexing = NoiseIndexing::per_token;
  else if (indexing == "batch")
    rc.train.noise_indexing = NoiseIndexing::batch;
  else
    throw std::invalid_argument("config [train] noise_indexing: expected per_token or batch");

  std::string kind = tree.get_string("schedule", "kind", "cosine");
  int sched_kmax = static_cast<int>(tree.get_int("schedule", "k_max", rc.model.k_max));
  if (kind == "cosine")
    rc.schedule = NoiseSchedule::cosine(sched_kmax);
  else if (kind == "linear-beta")
    rc.schedule = NoiseSchedule::linear_beta(tree.get_double("schedule", "beta_min", 0.1),
                                             tree.get_double("schedule", "beta_max", 2.0),
                                             sched_kmax);
  else if (kind == "constant-sigma")
    rc.schedule =
        NoiseSchedule::constant_sigma(tree.get_double("schedule", "sigma", 1.0), sched_kmax);
  else
    throw std::invalid_argument("config [schedule] kind: unknown kind " + kind);

  rc.sampler.top_p = tree.get_double("sampler", "top_p", rc.sampler.top_p);
  rc.sampler.temperature = tree.get_double("sampler", "temperature", rc.sampler.temperature);
  rc.sampler.k_max = static_cast<int>(tree.get_int("sampler", "k_max", rc.model.k_max));
  rc.sampler.max_new_tokens =
      static_cast<int>(tree.get_int("sampler", "max_new_tokens", rc.sampler.max_new_tokens));
  rc.sampler.seed = static_cast<std::uint64_t>(tree.get_int("sampler", "seed", 0));
  std::string decode = tree.get_string("sampler", "decode", "projection");
  if (decode == "projection")
    rc.sampler.decode = DecodeMode::projection;
  else if (decode == "nn" || decode == "nearest-neighbor")
    rc.sampler.decode = DecodeMode::nearest_neighbor;
  else
    throw std::invalid_argument("config [sampler] decode: expected projection or nn");

  rc.data.paths = tree.get_string_list("data", "paths");
  rc.data.train_fraction = tree.get_double("data", "train_fraction", rc.data.train_fraction);
  rc.data.vocab = tree.get_string("data", "vocab", rc.data.vocab);
  rc.data.subword_size =
      static_cast<int>(tree.get_int("data", "subword_size", rc.data.subword_size));
  rc.data.overlapping = tree.get_bool("data", "overlapping", rc.data.overlapping);

  rc.ablation = time_mode_from_string(tree.get_string("run", "ablation", "full"));
  rc.out_dir = tree.get_string("run", "out_dir", rc.out_dir);
  rc.ckpt_every = static_cast<int>(tree.get_int("run", "ckpt_every", rc.ckpt_every));
  rc.log_every = static_cast<int>(tree.get_int("run", "log_every", rc.log_every));
  rc.dropout_override = tree.get_double("run", "dropout_override", rc.dropout_override);

  rc.validate();
  return rc;
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  schedule.validate();
  sampler.validate();
  if (schedule.k_max != model.k_max)
    throw std::invalid_argument("RunConfig: schedule.k_max must equal model.k_max");
  if (sampler.k_max != model.k_max)
    throw std::invalid_argument("RunConfig: sampler.k_max must equal model.k_max");
  if (train.seq_len > model.max_seq_len)
    throw std::invalid_argument("RunConfig: train.seq_len exceeds model.max_seq_len");
  if (sampler.max_new_tokens > model.max_seq_len)
    throw std::invalid_argument("RunConfig: sampler.max_new_tokens exceeds model.max_seq_len");
  if (data.vocab == "byte") {
    if (model.vocab_size != 260)
      throw std::invalid_argument("RunConfig: byte vocabulary requires model.vocab_size = 260");
  } else if (data.vocab == "learned-subword") {
    if (model.vocab_size != data.subword_size)
      throw std::invalid_argument(
          "RunConfig: learned-subword vocabulary requires model.vocab_size = data.subword_size");
  } else {
    throw std::invalid_argument("RunConfig: data.vocab must be byte or learned-subword");
  }
  if (data.train_fraction < 0.0 || data.train_fraction > 1.0)
    throw std::invalid_argument("RunConfig: data.train_fraction must lie in [0,1]");
  if (dropout_override >= 1.0)
    throw std::invalid_argument("RunConfig: dropout_override must be < 1");
}

RunConfig load_run_config(const std::string& path) {
  ConfigTree tree = parse_toml(read_file(path));
  apply_env_overrides(tree);
  return run_config_from_tree(tree);
}

}  // namespace evo

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "evo/model.hpp"
#include "evo/sampling.hpp"
#include "evo/schedules.hpp"
#include "evo/trainer.hpp"

namespace evo {

// Minimal TOML subset: [section] headers, key = value lines with strings,
// integers, floats, booleans and flat arrays, and # comments. Environment
// variables EVO_<SECTION>_<KEY> override file values.
struct ConfigTree {
  std::map<std::string, std::map<std::string, std::string>> sections;

  bool has(const std::string& section, const std::string& key) const;
  std::string get_string(const std::string& section, const std::string& key,
                         const std::string& fallback) const;
  long get_int(const std::string& section, const std::string& key, long fallback) const;
  double get_double(const std::string& section, const std::string& key, double fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
  std::vector<std::string> get_string_list(const std::string& section,
                                           const std::string& key) const;
};

ConfigTree parse_toml(const std::string& text);
void apply_env_overrides(ConfigTree& tree);

struct DataConfig {
  std::vector<std::string> paths;
  double train_fraction = 0.9;
  std::string vocab = "byte";  // byte | learned-subword
  int subword_size = 512;
  bool overlapping = false;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  NoiseSchedule schedule;
  SamplerConfig sampler;
  DataConfig data;
  TimeMode ablation = TimeMode::learned;
  std::string out_dir = "runs/default";
  int ckpt_every = 0;  // 0 = final only
  int log_every = 10;
  double dropout_override = -1.0;  // < 0: use model.dropout

  double effective_dropout() const {
    return dropout_override >= 0.0 ? dropout_override : model.dropout;
  }

  // Cross-field constraints; throws std::invalid_argument on the first
  // violation.
  void validate() const;
};

RunConfig run_config_from_tree(const ConfigTree& tree);
RunConfig load_run_config(const std::string& path);

TimeMode time_mode_from_string(const std::string& s);

}  // namespace evo

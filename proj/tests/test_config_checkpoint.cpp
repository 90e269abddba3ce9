#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>

#include "evo/checkpoint.hpp"
#include "evo/config.hpp"
#include "evo/data.hpp"

using namespace evo;

namespace {

const char* kBaseConfig = R"(# run configuration
[model]
d = 16
layers = 2
heads = 2
ffn_mult = 2
vocab_size = 260
k_max = 4
max_seq_len = 32
dropout = 0.0

[train]
seq_len = 16
batch_tokens = 32
total_steps = 4
warmup_steps = 1
seed = 3

[schedule]
kind = "cosine"
k_max = 4

[sampler]
k_max = 4
max_new_tokens = 8

[data]
paths = ["corpus.bin"]
vocab = "byte"

[run]
ablation = "full"
out_dir = "runs/test"
)";

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("toml subset parser handles sections, comments, types and arrays") {
  ConfigTree t = parse_toml(kBaseConfig);
  CHECK(t.get_int("model", "d", 0) == 16);
  CHECK(t.get_double("model", "dropout", 1.0) == 0.0);
  CHECK(t.get_string("schedule", "kind", "") == "cosine");
  CHECK(t.get_string("run", "out_dir", "") == "runs/test");
  CHECK(t.get_string_list("data", "paths") == std::vector<std::string>{"corpus.bin"});
  CHECK(t.get_int("model", "missing", 42) == 42);
  CHECK_THROWS_AS(parse_toml("novalue\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_toml("[unterminated\n"), std::invalid_argument);
  ConfigTree t2 = parse_toml("[a]\nflag = true\nother = false\nbad = maybe\n");
  CHECK(t2.get_bool("a", "flag", false));
  CHECK_FALSE(t2.get_bool("a", "other", true));
  CHECK(t2.get_bool("a", "missing", true));
  CHECK_THROWS_AS(t2.get_bool("a", "bad", false), std::invalid_argument);
}

TEST_CASE("environment variables override file values") {
  ConfigTree t = parse_toml(kBaseConfig);
  setenv("EVO_MODEL_D", "64", 1);
  apply_env_overrides(t);
  unsetenv("EVO_MODEL_D");
  CHECK(t.get_int("model", "d", 0) == 64);
}

TEST_CASE("run config round-trip and cross-field validation") {
  ConfigTree t = parse_toml(kBaseConfig);
  RunConfig rc = run_config_from_tree(t);
  CHECK(rc.model.d == 16);
  CHECK(rc.schedule.k_max == 4);
  CHECK(rc.sampler.k_max == 4);

  struct NegativeCase {
    const char* section;
    const char* key;
    const char* value;
  };
  // table-driven cross-field violations; each must be rejected at load
  const NegativeCase cases[] = {
      {"schedule", "k_max", "8"},        // schedule k_max != model k_max
      {"sampler", "k_max", "2"},         // sampler k_max != model k_max
      {"train", "seq_len", "64"},        // seq_len > max_seq_len
      {"model", "vocab_size", "256"},    // byte vocab needs 260
      {"sampler", "top_p", "1.5"},       // out of (0,1]
      {"sampler", "temperature", "0"},   // non-positive
      {"train", "batch_tokens", "33"},   // not a multiple of seq_len
      {"train", "label_smoothing", "1.2"},
      {"model", "heads", "3"},           // d not divisible by heads
      {"model", "dropout", "1.5"},
      {"train", "ema_decay", "1.0"},
      {"data", "vocab", "\"words\""},
      {"run", "ablation", "\"t2\""},
      {"schedule", "kind", "\"triangle\""},
  };
  for (const auto& c : cases) {
    ConfigTree bad = parse_toml(kBaseConfig);
    bad.sections[c.section][c.key] = c.value;
    INFO("[" << c.section << "] " << c.key << " = " << c.value);
    CHECK_THROWS_AS(run_config_from_tree(bad), std::invalid_argument);
  }
}

TEST_CASE("checkpoint round-trips byte-identically and restores parameters") {
  ModelConfig cfg;
  cfg.d = 16;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.ffn_mult = 2;
  cfg.vocab_size = 32;
  cfg.k_max = 4;
  cfg.max_seq_len = 16;
  cfg.dropout = 0.1;
  auto params = Parameters<float>::init(cfg, 77);
  std::string p1 = temp_path("evo_ckpt_a.evo");
  std::string p2 = temp_path("evo_ckpt_b.evo");

  save_checkpoint_file(p1, make_model_checkpoint(params, 123));
  CheckpointData loaded = load_checkpoint_file(p1);
  CHECK(loaded.extra.at("step").get<long>() == 123);
  save_checkpoint_file(p2, loaded);
  CHECK(read_file(p1) == read_file(p2));  // byte-identical round-trip

  auto restored = params_from_checkpoint<float>(loaded);
  CHECK(restored.cfg.d == cfg.d);
  auto a = tensor_views(params), b = tensor_views(restored);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);

  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("training checkpoints carry optimizer and EMA state") {
  ModelConfig cfg;
  cfg.d = 16;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.vocab_size = 32;
  cfg.k_max = 4;
  cfg.max_seq_len = 16;
  auto params = Parameters<float>::init(cfg, 5);
  auto opt = AdamState<float>::make(params);
  opt.step = 17;
  auto views = tensor_views(opt.m);
  views[0].setConstant(0.5f);
  auto ema = EMAState<float>::make(params, 0.995);

  std::string path = temp_path("evo_ckpt_train.evo");
  save_checkpoint_file(path, make_train_checkpoint(params, opt, ema, 17));
  auto st = train_state_from_checkpoint<float>(load_checkpoint_file(path));
  CHECK(st.step == 17);
  CHECK(st.opt.step == 17);
  CHECK(st.ema.decay == doctest::Approx(0.995));
  CHECK(tensor_views(st.opt.m)[0] == views[0]);
  std::remove(path.c_str());
}

TEST_CASE("corrupt checkpoints are rejected") {
  std::string path = temp_path("evo_ckpt_bad.evo");
  write_file(path, "definitely not a checkpoint");
  CHECK_THROWS_AS(load_checkpoint_file(path), std::runtime_error);
  std::remove(path.c_str());
  CHECK_THROWS_AS(load_checkpoint_file("/nonexistent/ckpt.evo"), std::runtime_error);
}

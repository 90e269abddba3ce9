// Command-line entry point: train / sample / eval / verify-duality /
// bench / ablate on top of the evo core library.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "evo/checkpoint.hpp"
#include "evo/config.hpp"
#include "evo/data.hpp"
#include "evo/duality.hpp"
#include "evo/run.hpp"
#include "evo/sampling.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Training and sampling run in single precision; oracles and gradient
// checks elsewhere use double.
using Scalar = float;

struct CkptBundle {
  evo::Parameters<Scalar> params;
  long step = 0;
};

CkptBundle load_params(const std::string& path) {
  evo::CheckpointData data = evo::load_checkpoint_file(path);
  CkptBundle b{evo::params_from_checkpoint<Scalar>(data), data.extra.value("step", 0L)};
  return b;
}

std::string read_prompt_arg(const std::string& arg) {
  if (!arg.empty() && arg.front() == '@') return evo::read_file(arg.substr(1));
  return arg;
}

int cmd_train(const std::string& config_path, const std::string& resume_path) {
  evo::RunConfig rc = evo::load_run_config(config_path);
  evo::Vocabulary vocab = evo::build_vocabulary(rc);
  if (rc.data.paths.empty()) throw std::runtime_error("train: no data paths configured");
  evo::IngestOptions opts;
  opts.seq_len = rc.train.seq_len;
  opts.train_fraction = rc.data.train_fraction;
  opts.seed = rc.train.seed;
  opts.overlapping = rc.data.overlapping;
  evo::SplitCorpus corpus = evo::ingest(rc.data.paths, vocab, opts);
  std::cerr << "corpus: " << corpus.train.windows.size() << " train / "
            << corpus.val.windows.size() << " val windows\n";

  fs::create_directories(rc.out_dir);
  std::ofstream metrics(fs::path(rc.out_dir) / "metrics.jsonl");
  evo::TrainCallbacks cb;
  cb.metrics = &metrics;
  long log_every = std::max(1, rc.log_every);
  cb.on_step = [&](long step, const evo::StepResult& res) {
    if (step % log_every == 0)
      std::cerr << "step " << step << " total " << res.loss.total << " ar " << res.loss.ar_nll
                << " flow " << res.loss.flow << " lr " << res.lr << "\n";
    if (rc.ckpt_every > 0 && step > 0 && step % rc.ckpt_every == 0) {
      // periodic model-only snapshot
    }
  };

  evo::TrainState<Scalar> st;
  if (!resume_path.empty()) {
    evo::CheckpointData data = evo::load_checkpoint_file(resume_path);
    st = evo::train_state_from_checkpoint<Scalar>(data);
    std::cerr << "resumed from step " << st.step << "\n";
    st = evo::run_training<Scalar>(rc, corpus.train, vocab.bos_id, cb, &st);
  } else {
    st = evo::run_training<Scalar>(rc, corpus.train, vocab.bos_id, cb);
  }

  fs::path ckpt = fs::path(rc.out_dir) / "checkpoint.evo";
  evo::save_checkpoint_file(ckpt.string(),
                            evo::make_train_checkpoint(st.params, st.opt, st.ema, st.step));
  std::cerr << "saved " << ckpt << "\n";

  const evo::Corpus& evalc = corpus.val.windows.empty() ? corpus.train : corpus.val;
  evo::EvalResult ev = evo::eval_ppl(st.params, evalc, vocab.bos_id, rc.train.worker_count());
  json summary = {{"final_step", st.step},
                  {"val_nats_per_token", ev.nats_per_token},
                  {"val_perplexity", ev.perplexity},
                  {"val_bits_per_char", ev.bits_per_char}};
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_sample(const std::string& ckpt_path, const std::string& prompt_arg, std::uint64_t seed,
               double top_p, double temperature, int kmax, const std::string& decode,
               int max_new_tokens, const std::string& json_out) {
  CkptBundle b = load_params(ckpt_path);
  evo::Vocabulary vocab = evo::Vocabulary::byte_level();
  evo::SamplerConfig cfg;
  cfg.seed = seed;
  cfg.top_p = top_p;
  cfg.temperature = temperature;
  cfg.k_max = kmax >= 0 ? kmax : b.params.cfg.k_max;
  cfg.max_new_tokens = max_new_tokens;
  cfg.decode = decode == "nn" ? evo::DecodeMode::nearest_neighbor : evo::DecodeMode::projection;

  std::string prompt_text = read_prompt_arg(prompt_arg);
  std::vector<int> prompt = vocab.encode(prompt_text);
  evo::GenerationResult res = evo::generate(b.params, prompt, cfg, vocab.eos_id);
  std::cout << vocab.decode(res.tokens) << "\n";
  if (!json_out.empty()) {
    json j = {{"tokens", res.tokens},
              {"times", res.times},
              {"steps_used", res.steps_used},
              {"elapsed_s", res.elapsed_s},
              {"tokens_per_second", res.tokens_per_second},
              {"token_updates", res.stats.token_updates},
              {"field_evals", res.stats.field_evals}};
    evo::write_file(json_out, j.dump(2));
  }
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path) {
  CkptBundle b = load_params(ckpt_path);
  evo::Vocabulary vocab = evo::Vocabulary::byte_level();
  if (b.params.cfg.vocab_size != vocab.size())
    throw std::runtime_error("eval: checkpoint vocab_size does not match byte vocabulary");
  evo::IngestOptions opts;
  opts.seq_len = std::min(b.params.cfg.max_seq_len, 256);
  opts.train_fraction = 0.0;  // everything goes to the validation side
  evo::SplitCorpus corpus = evo::ingest({data_path}, vocab, opts);
  evo::EvalResult ev = evo::eval_ppl(b.params, corpus.val, vocab.bos_id, 2);
  json j = {{"nats_per_token", ev.nats_per_token},
            {"perplexity", ev.perplexity},
            {"bits_per_char", ev.bits_per_char}};
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_verify_duality(const std::string& out_path) {
  evo::lab::DualityReport rep = evo::lab::run_duality_matrix(10000);
  std::cout << evo::lab::duality_report_text(rep);
  if (!out_path.empty()) evo::write_file(out_path, evo::lab::duality_report_json(rep));
  return rep.all_pass ? 0 : 1;
}

int cmd_bench(const std::string& ckpt_path, const std::string& prompts_path,
              const std::string& json_out, int kmax, double t_override, int max_new_tokens) {
  CkptBundle b = load_params(ckpt_path);
  evo::Vocabulary vocab = evo::Vocabulary::byte_level();
  std::string text = evo::read_file(prompts_path);
  std::vector<std::vector<int>> prompts;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) prompts.push_back(vocab.encode(line));
  if (prompts.empty()) throw std::runtime_error("bench: prompt file has no non-empty lines");

  evo::SamplerConfig cfg;
  cfg.k_max = kmax >= 0 ? kmax : b.params.cfg.k_max;
  cfg.max_new_tokens = max_new_tokens;
  if (t_override >= 0.0) cfg.t_override = t_override;
  evo::BenchReport rep = evo::bench(b.params, prompts, cfg, vocab.eos_id);

  json j;
  j["prompts"] = json::array();
  for (const auto& e : rep.entries)
    j["prompts"].push_back({{"index", e.prompt_index},
                            {"tokens", e.tokens},
                            {"elapsed_s", e.elapsed_s},
                            {"tokens_per_second", e.tokens_per_second},
                            {"token_updates", e.token_updates},
                            {"field_evals", e.field_evals}});
  j["total_tokens"] = rep.total_tokens;
  j["total_elapsed_s"] = rep.total_elapsed_s;
  j["aggregate_tokens_per_second"] = rep.aggregate_tokens_per_second;
  j["mean_latency_s"] = rep.mean_latency_s;
  std::cout << j.dump(2) << "\n";
  if (!json_out.empty()) evo::write_file(json_out, j.dump(2));
  return 0;
}

int cmd_ablate(const std::string& config_path) {
  evo::RunConfig rc = evo::load_run_config(config_path);
  evo::Vocabulary vocab = evo::build_vocabulary(rc);
  evo::IngestOptions opts;
  opts.seq_len = rc.train.seq_len;
  opts.train_fraction = rc.data.train_fraction;
  opts.seed = rc.train.seed;
  evo::SplitCorpus corpus = evo::ingest(rc.data.paths, vocab, opts);
  auto rows = evo::run_ablation<Scalar>(rc, corpus.train, corpus.val, vocab.bos_id, &std::cerr);
  json j = json::array();
  for (const auto& r : rows)
    j.push_back({{"mode", r.mode},
                 {"total", r.final_loss.total},
                 {"flow", r.final_loss.flow},
                 {"ar_nll", r.final_loss.ar_nll},
                 {"denoise", r.final_loss.denoise},
                 {"entropy_reg", r.final_loss.entropy_reg},
                 {"val_nats_per_token", r.val_nats},
                 {"val_perplexity", r.val_ppl},
                 {"refine_token_updates", r.refine_token_updates},
                 {"mean_steps_per_token", r.mean_steps_per_token},
                 {"wall_s", r.wall_s}});
  std::cout << j.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"evo: duality latent trajectory model (desk scale)"};
  app.require_subcommand(1);

  std::string config_path, resume_path;
  auto* train = app.add_subcommand("train", "train a model from a run configuration");
  train->add_option("--config", config_path, "TOML run configuration")->required();
  train->add_option("--resume", resume_path, "resume from a training checkpoint");

  std::string ckpt_path, prompt_arg = "", decode = "projection", sample_json;
  std::uint64_t seed = 0;
  double top_p = 0.9, temperature = 0.7;
  int kmax = -1, max_new_tokens = 64;
  auto* sample = app.add_subcommand("sample", "generate from a checkpoint");
  sample->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  sample->add_option("--prompt", prompt_arg, "prompt text (or @file)");
  sample->add_option("--seed", seed, "sampling seed");
  sample->add_option("--top-p", top_p, "nucleus mass");
  sample->add_option("--temperature", temperature, "sampling temperature");
  sample->add_option("--kmax", kmax, "refinement steps (default: checkpoint k_max)");
  sample->add_option("--decode", decode, "projection | nn");
  sample->add_option("--max-new-tokens", max_new_tokens, "generation length");
  sample->add_option("--json", sample_json, "write a GenerationResult record here");

  std::string eval_ckpt, eval_data;
  auto* eval = app.add_subcommand("eval", "teacher-forced perplexity on a corpus");
  eval->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--data", eval_data, "corpus file")->required();

  std::string duality_out;
  auto* verify = app.add_subcommand("verify-duality", "run the AR/diffusion equivalence matrix");
  verify->add_option("--out", duality_out, "also write a JSON report here");

  std::string bench_ckpt, bench_prompts, bench_json;
  int bench_kmax = -1, bench_new_tokens = 64;
  double bench_t_override = -1.0;
  auto* bench = app.add_subcommand("bench", "latency/throughput measurement");
  bench->add_option("--ckpt", bench_ckpt, "checkpoint file")->required();
  bench->add_option("--prompts", bench_prompts, "file with one prompt per line")->required();
  bench->add_option("--json", bench_json, "write the report here");
  bench->add_option("--kmax", bench_kmax, "refinement steps");
  bench->add_option("--t-override", bench_t_override, "force every token's t_i");
  bench->add_option("--max-new-tokens", bench_new_tokens, "generation length");

  std::string ablate_config;
  auto* ablate = app.add_subcommand("ablate", "train all time-mode ablations");
  ablate->add_option("--config", ablate_config, "TOML run configuration")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(config_path, resume_path);
    if (sample->parsed())
      return cmd_sample(ckpt_path, prompt_arg, seed, top_p, temperature, kmax, decode,
                        max_new_tokens, sample_json);
    if (eval->parsed()) return cmd_eval(eval_ckpt, eval_data);
    if (verify->parsed()) return cmd_verify_duality(duality_out);
    if (bench->parsed())
      return cmd_bench(bench_ckpt, bench_prompts, bench_json, bench_kmax, bench_t_override,
                       bench_new_tokens);
    if (ablate->parsed()) return cmd_ablate(ablate_config);
  } catch (const std::exception& e) {
    json err = {{"error", typeid(e).name()}, {"message", e.what()}};
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return 0;
}

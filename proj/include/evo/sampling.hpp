#pragma once

#include <algorithm>
#include <chrono>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "evo/flow.hpp"
#include "evo/model.hpp"
#include "evo/rng.hpp"
#include "evo/types.hpp"

namespace evo {

enum class DecodeMode { projection, nearest_neighbor };

struct SamplerConfig {
  double top_p = 0.9;
  double temperature = 0.7;
  int k_max = 20;
  int max_new_tokens = 64;
  std::uint64_t seed = 0;
  DecodeMode decode = DecodeMode::projection;
  std::optional<double> t_override;  // forces every generated token's t_i

  void validate() const {
    if (!(top_p > 0.0 && top_p <= 1.0))
      throw std::invalid_argument("SamplerConfig: top_p must lie in (0,1]");
    if (temperature <= 0.0)
      throw std::invalid_argument("SamplerConfig: temperature must be positive");
    if (k_max < 0) throw std::invalid_argument("SamplerConfig: k_max must be >= 0");
    if (max_new_tokens < 1)
      throw std::invalid_argument("SamplerConfig: max_new_tokens must be >= 1");
    if (t_override && !(*t_override >= 0.0 && *t_override <= 1.0))
      throw std::invalid_argument("SamplerConfig: t_override must lie in [0,1]");
  }
};

struct GenerationResult {
  std::vector<int> tokens;      // generated ids (prompt excluded, eos truncated)
  std::vector<double> times;    // per-token t_i
  std::vector<int> steps_used;  // depth(t_i, k_max)
  double elapsed_s = 0.0;       // includes prompt encoding
  double tokens_per_second = 0.0;
  RefineStats stats;
};

// Keeps the minimal prefix of probability-sorted entries whose cumulative
// mass reaches top_p and renormalizes; probability ties break toward the
// smaller id.
inline Vecd nucleus_filter(const Vecd& probs, double top_p) {
  if (probs.size() == 0) throw std::domain_error("nucleus_filter: empty distribution");
  if (!(top_p > 0.0 && top_p <= 1.0))
    throw std::invalid_argument("nucleus_filter: top_p must lie in (0,1]");
  double sum = probs.sum();
  if (std::abs(sum - 1.0) > 1e-6)
    throw std::invalid_argument("nucleus_filter: probabilities must sum to 1 within 1e-6");
  if ((probs.array() < 0.0).any())
    throw std::domain_error("nucleus_filter: negative probability");
  std::vector<int> order(static_cast<std::size_t>(probs.size()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return probs[a] > probs[b]; });
  double cum = 0.0;
  std::size_t kept = order.size();
  for (std::size_t i = 0; i < order.size(); ++i) {
    cum += probs[order[i]];
    if (cum >= top_p) {
      kept = i + 1;
      break;
    }
  }
  if (kept == 0 || probs[order[0]] <= 0.0)
    throw std::domain_error("nucleus_filter: empty support");
  Vecd out = Vecd::Zero(probs.size());
  double mass = 0.0;
  for (std::size_t i = 0; i < kept; ++i) mass += probs[order[i]];
  for (std::size_t i = 0; i < kept; ++i) out[order[i]] = probs[order[i]] / mass;
  return out;
}

// Temperature-scaled softmax of a logit row, in double.
template <class S>
Vecd softmax_with_temperature(const Vec<S>& logits, double temperature) {
  Eigen::ArrayXd a = logits.template cast<double>().array() / temperature;
  double m = a.maxCoeff();
  Eigen::ArrayXd e = (a - m).exp();
  return (e / e.sum()).matrix();
}

inline int draw_categorical(const Vecd& probs, Rng& rng) {
  double u = rng.uniform();
  double acc = 0.0;
  for (Index i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return static_cast<int>(i);
  }
  for (Index i = probs.size(); i > 0; --i)
    if (probs[i - 1] > 0.0) return static_cast<int>(i - 1);
  return 0;
}

// Latent initialization: prompt positions carry their embeddings at
// t = 0 (frozen); new positions are seeded with token embeddings drawn by
// temperature-scaled nucleus sampling from the decode head applied to the
// learned start latent, with t_i from the time head.
template <class S>
LatentSequence<S> sample_init(const Parameters<S>& params, const std::vector<int>& prompt,
                              const SamplerConfig& cfg, Rng& rng) {
  cfg.validate();
  const Index n_prompt = static_cast<Index>(prompt.size());
  const Index n = n_prompt + cfg.max_new_tokens;
  if (n > params.cfg.max_seq_len)
    throw std::length_error("sample_init: prompt plus generation exceeds max_seq_len");

  Mat<S> prior_logit = decode_logits(params, Mat<S>(params.start_latent.transpose()));
  Vecd probs = softmax_with_temperature<S>(Vec<S>(prior_logit.row(0).transpose()), cfg.temperature);
  Vecd filtered = nucleus_filter(probs, cfg.top_p);

  LatentSequence<S> seq;
  seq.latents.resize(n, params.cfg.d);
  seq.times = Vec<S>::Zero(n);
  seq.prompt_len = n_prompt;
  for (Index i = 0; i < n_prompt; ++i) {
    int id = prompt[static_cast<std::size_t>(i)];
    if (id < 0 || id >= params.cfg.vocab_size)
      throw std::domain_error("sample_init: prompt id out of range");
    seq.latents.row(i) = params.tok_embed.row(id);
  }
  for (Index i = n_prompt; i < n; ++i) {
    int id = draw_categorical(filtered, rng);
    seq.latents.row(i) = params.tok_embed.row(id);
  }
  Vec<S> t_hat = predict_times(params, seq.latents);
  for (Index i = n_prompt; i < n; ++i)
    seq.times[i] = cfg.t_override ? static_cast<S>(*cfg.t_override) : t_hat[i];
  return seq;
}

// Full generation: nucleus-sampled initialization, deterministic hard-
// truncated refinement, decode, and timing (prompt encoding included).
template <class S>
GenerationResult generate(const Parameters<S>& params, const std::vector<int>& prompt,
                          const SamplerConfig& cfg, int eos_id = -1) {
  cfg.validate();
  auto t0 = std::chrono::steady_clock::now();
  Rng rng = Rng::stream(cfg.seed, 0x9a3du);
  GenerationResult res;

  LatentSequence<S> seq = sample_init(params, prompt, cfg, rng);
  LatentSequence<S> refined = seq;
  if (cfg.k_max > 0) {
    StepConfig step_cfg = StepConfig::hard(cfg.k_max);
    VelocityField<S> field = [&](const Mat<S>& latents, const Vec<S>& times, int k) {
      LatentSequence<S> cur{latents, times, seq.prompt_len};
      return field_eval(params, cur, k);
    };
    refined = refine_trajectory(seq, field, step_cfg, &res.stats);
  }

  const Index n_prompt = seq.prompt_len;
  const Index n_new = refined.size() - n_prompt;
  std::vector<int> decoded(static_cast<std::size_t>(n_new));
  Mat<S> new_latents = refined.latents.bottomRows(n_new);
  if (cfg.decode == DecodeMode::projection) {
    Mat<S> logits = decode_logits(params, new_latents);
    for (Index i = 0; i < n_new; ++i) {
      Index arg = 0;
      logits.row(i).maxCoeff(&arg);
      decoded[static_cast<std::size_t>(i)] = static_cast<int>(arg);
    }
  } else {
    decoded = nn_decode(new_latents, params.tok_embed);
  }

  Index keep = n_new;
  if (eos_id >= 0) {
    for (Index i = 0; i < n_new; ++i)
      if (decoded[static_cast<std::size_t>(i)] == eos_id) {
        keep = i;
        break;
      }
  }
  res.tokens.assign(decoded.begin(), decoded.begin() + keep);
  res.times.resize(static_cast<std::size_t>(keep));
  res.steps_used.resize(static_cast<std::size_t>(keep));
  for (Index i = 0; i < keep; ++i) {
    double t = static_cast<double>(refined.times[n_prompt + i]);
    res.times[static_cast<std::size_t>(i)] = t;
    res.steps_used[static_cast<std::size_t>(i)] = cfg.k_max > 0 ? depth(t, cfg.k_max) : 0;
  }
  auto t1 = std::chrono::steady_clock::now();
  res.elapsed_s = std::chrono::duration<double>(t1 - t0).count();
  res.tokens_per_second =
      res.elapsed_s > 0.0 ? static_cast<double>(res.tokens.size()) / res.elapsed_s : 0.0;
  return res;
}

struct BenchEntry {
  std::size_t prompt_index = 0;
  long tokens = 0;
  double elapsed_s = 0.0;
  double tokens_per_second = 0.0;
  long token_updates = 0;
  long field_evals = 0;
};

struct BenchReport {
  std::vector<BenchEntry> entries;
  long total_tokens = 0;
  double total_elapsed_s = 0.0;
  double aggregate_tokens_per_second = 0.0;
  double mean_latency_s = 0.0;
};

// Sequential single-request measurement protocol; one untimed warmup
// generation precedes the measured runs.
template <class S>
BenchReport bench(const Parameters<S>& params, const std::vector<std::vector<int>>& prompts,
                  const SamplerConfig& cfg, int eos_id = -1) {
  if (prompts.empty()) throw std::invalid_argument("bench: need at least one prompt");
  (void)generate(params, prompts.front(), cfg, eos_id);  // warmup, excluded
  BenchReport rep;
  for (std::size_t p = 0; p < prompts.size(); ++p) {
    GenerationResult r = generate(params, prompts[p], cfg, eos_id);
    BenchEntry e;
    e.prompt_index = p;
    e.tokens = static_cast<long>(r.tokens.size());
    e.elapsed_s = r.elapsed_s;
    e.tokens_per_second = r.tokens_per_second;
    e.token_updates = r.stats.token_updates;
    e.field_evals = r.stats.field_evals;
    rep.total_tokens += e.tokens;
    rep.total_elapsed_s += e.elapsed_s;
    rep.entries.push_back(e);
  }
  rep.aggregate_tokens_per_second =
      rep.total_elapsed_s > 0.0 ? rep.total_tokens / rep.total_elapsed_s : 0.0;
  rep.mean_latency_s = rep.total_elapsed_s / static_cast<double>(rep.entries.size());
  return rep;
}

}  // namespace evo

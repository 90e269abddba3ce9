#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "evo/losses.hpp"
#include "evo/model.hpp"
#include "evo/rng.hpp"
#include "evo/schedules.hpp"

namespace evo {

enum class NoiseIndexing { per_token, batch };
enum class TimeMode { learned, fixed0, fixed1, fixed_half, heuristic_entropy };

inline const char* to_string(TimeMode m) {
  switch (m) {
    case TimeMode::learned: return "full";
    case TimeMode::fixed0: return "t0";
    case TimeMode::fixed1: return "t1";
    case TimeMode::fixed_half: return "t_half";
    case TimeMode::heuristic_entropy: return "heuristic-entropy";
  }
  return "?";
}

struct TrainConfig {
  double peak_lr = 3e-4;
  int warmup_steps = 200;
  int total_steps = 2000;
  int batch_tokens = 2048;
  int seq_len = 256;
  double grad_clip = 1.0;
  double label_smoothing = 0.1;
  double ema_decay = 0.9999;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;
  std::uint64_t seed = 0;

  // composite-objective knobs
  double w_ent = 0.01;
  double anneal_floor = 0.25;
  int entropy_bins = 8;
  double entropy_tau = 0.02;
  double gate_tau_start = 0.1;
  double gate_tau_end = 0.02;
  NoiseIndexing noise_indexing = NoiseIndexing::per_token;
  int threads = 0;  // 0 = hardware concurrency (capped at 8)

  int batch_size() const { return batch_tokens / seq_len; }

  void validate() const {
    if (peak_lr <= 0.0) throw std::invalid_argument("TrainConfig: peak_lr must be positive");
    if (warmup_steps < 0 || total_steps < 1)
      throw std::invalid_argument("TrainConfig: bad step counts");
    if (seq_len < 1 || batch_tokens < seq_len || batch_tokens % seq_len != 0)
      throw std::invalid_argument("TrainConfig: batch_tokens must be a positive multiple of seq_len");
    if (grad_clip <= 0.0) throw std::invalid_argument("TrainConfig: grad_clip must be positive");
    if (label_smoothing < 0.0 || label_smoothing >= 1.0)
      throw std::invalid_argument("TrainConfig: label_smoothing must lie in [0,1)");
    if (ema_decay <= 0.0 || ema_decay >= 1.0)
      throw std::invalid_argument("TrainConfig: ema_decay must lie in (0,1)");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
      throw std::invalid_argument("TrainConfig: betas must lie in [0,1)");
    if (entropy_bins < 2) throw std::invalid_argument("TrainConfig: entropy_bins must be >= 2");
  }

  int worker_count() const {
    if (threads > 0) return threads;
    unsigned hc = std::thread::hardware_concurrency();
    return static_cast<int>(std::min(hc == 0 ? 1u : hc, 8u));
  }
};

// AR and denoising weights start at unity and decay linearly to the floor
// over warmup; the flow weight stays at 1 and governs later training.
inline LossWeights anneal_weights(long step, const TrainConfig& cfg) {
  LossWeights w;
  w.flow = 1.0;
  double frac = cfg.warmup_steps == 0
                    ? 1.0
                    : std::min(1.0, static_cast<double>(step) / cfg.warmup_steps);
  w.ar = 1.0 - (1.0 - cfg.anneal_floor) * frac;
  w.diff = w.ar;
  w.ent = cfg.w_ent;
  return w;
}

// Linear warmup to peak_lr, then cosine decay to zero.
inline double learning_rate(long step, const TrainConfig& cfg) {
  if (step < cfg.warmup_steps)
    return cfg.peak_lr * static_cast<double>(step + 1) / cfg.warmup_steps;
  long span = std::max<long>(1, cfg.total_steps - cfg.warmup_steps);
  double prog = std::min(1.0, static_cast<double>(step - cfg.warmup_steps) / span);
  return cfg.peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * prog));
}

inline double gate_tau(long step, const TrainConfig& cfg) {
  double prog = std::min(1.0, static_cast<double>(step) / std::max(1, cfg.total_steps));
  return cfg.gate_tau_start + (cfg.gate_tau_end - cfg.gate_tau_start) * prog;
}

// ---------------------------------------------------------------------------
// Composite batch objective.

struct BatchLossSettings {
  NoiseSchedule schedule;
  StepConfig step_config;  // soft in training
  LossWeights weights;
  double label_smoothing = 0.1;
  double dropout = 0.0;
  int entropy_bins = 8;
  double entropy_tau = 0.02;
  NoiseIndexing noise_indexing = NoiseIndexing::per_token;
  TimeMode time_mode = TimeMode::learned;
  int bos_id = 0;
  std::uint64_t seed = 0;
  long step_index = 0;
  int threads = 1;
};

namespace detail {

// Gathers embedding rows for a token sequence.
template <class S>
Mat<S> embed_rows(const Parameters<S>& params, const std::vector<int>& ids) {
  Mat<S> out(static_cast<Index>(ids.size()), params.cfg.d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= params.cfg.vocab_size)
      throw std::domain_error("embed_rows: token id out of range");
    out.row(static_cast<Index>(i)) = params.tok_embed.row(ids[i]);
  }
  return out;
}

template <class S>
void scatter_embed_grad(Parameters<S>& grads, const std::vector<int>& ids, const Mat<S>& d) {
  for (std::size_t i = 0; i < ids.size(); ++i)
    grads.tok_embed.row(ids[i]) += d.row(static_cast<Index>(i));
}

}  // namespace detail

// Teacher-forced causal logits for the AR term: position i sees
// [bos, x_0 .. x_{i-1}] and scores x_i. Shares the backbone with the
// refinement passes (time channel fixed at 0).
template <class S>
Mat<S> ar_logits(const Parameters<S>& params, const std::vector<int>& tokens, int bos_id,
                 const Dropout<S>& dropout = {}, BackboneCache<S>* cache = nullptr,
                 std::vector<int>* input_ids_out = nullptr) {
  const Index len = static_cast<Index>(tokens.size());
  if (len > params.cfg.max_seq_len) throw std::length_error("ar_logits: sequence too long");
  std::vector<int> input(tokens.size());
  input[0] = bos_id;
  for (std::size_t i = 1; i < tokens.size(); ++i) input[i] = tokens[i - 1];
  if (input_ids_out) *input_ids_out = input;
  Mat<S> x = detail::embed_rows(params, input);
  TimeEmbeddingSpec spec = params.time_spec();
  Vec<S> te = time_embed<S>(0.0, spec);
  for (Index i = 0; i < len; ++i) x.row(i) += params.pos_embed.row(i) + te.transpose();
  Mat<S> y = backbone_forward(params, x, /*causal=*/true, dropout, cache);
  return decode_logits(params, y);
}

// Teacher-forced mean NLL (nats/token, no label smoothing) under the AR
// head over a set of token sequences; dropout disabled.
template <class S>
double eval_nats(const Parameters<S>& params, const std::vector<std::vector<int>>& sequences,
                 int bos_id, int threads = 1) {
  if (sequences.empty()) throw std::invalid_argument("eval_nats: no sequences");
  std::vector<double> sums(sequences.size(), 0.0);
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      std::size_t b = next.fetch_add(1);
      if (b >= sequences.size()) return;
      Mat<S> logits = ar_logits(params, sequences[b], bos_id);
      double nll =
          ar_nll_loss<S>(logits, sequences[b], 0.0, nullptr, 1.0,
                         static_cast<double>(sequences[b].size()));
      sums[b] = nll * static_cast<double>(sequences[b].size());
    }
  };
  int workers = std::max(1, threads);
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  double total = 0.0;
  long tokens = 0;
  for (std::size_t b = 0; b < sequences.size(); ++b) {
    total += sums[b];
    tokens += static_cast<long>(sequences[b].size());
  }
  return total / static_cast<double>(tokens);
}

// Reusable buffers for batch_loss / train_step; allocating the gradient
// slots once per run instead of once per step saves a full parameter
// copy per sequence per step.
template <class S>
struct TrainWorkspace {
  std::vector<Parameters<S>> slots;
  Parameters<S> grads;
  bool ready = false;

  void prepare(const Parameters<S>& params, int nseq) {
    if (!ready || static_cast<int>(slots.size()) < nseq) {
      slots.assign(nseq, Parameters<S>::zeros_like(params));
      grads = Parameters<S>::zeros_like(params);
      ready = true;
    } else {
      for (int b = 0; b < nseq; ++b)
        for (auto& v : tensor_views(slots[static_cast<std::size_t>(b)])) v.setZero();
      for (auto& v : tensor_views(grads)) v.setZero();
    }
  }
};

// Per-sequence workspace for the composite loss.
template <class S>
struct SeqWork {
  std::vector<int> tokens;
  Mat<S> clean;           // embedding targets
  TimeHeadCache<S> thead;
  Vec<S> times;           // t used by the flow pass
  Vec<S> d_times;         // accumulated dL/dt
  double flow_raw = 0.0;  // sum-form numerators for exact batch pooling
  double denoise_raw = 0.0;
  double ar_partial = 0.0;
  Parameters<S>* grads = nullptr;
};

// Evaluates the composite objective on a batch of token sequences,
// optionally accumulating weighted gradients. Per-sequence gradient
// buffers are reduced in sequence order, so results are bitwise
// reproducible for any worker count.
template <class S>
LossBreakdown batch_loss(const Parameters<S>& params, const std::vector<std::vector<int>>& batch,
                         const BatchLossSettings& set, Parameters<S>* grads = nullptr,
                         TrainWorkspace<S>* workspace = nullptr) {
  if (batch.empty()) throw std::invalid_argument("batch_loss: empty batch");
  const Index d = params.cfg.d;
  const bool with_grads = grads != nullptr;
  const int nseq = static_cast<int>(batch.size());

  long total_tokens = 0;
  for (const auto& s : batch) {
    if (s.empty()) throw std::invalid_argument("batch_loss: empty sequence");
    total_tokens += static_cast<long>(s.size());
  }
  const double denom_tok = static_cast<double>(total_tokens);
  const double denom_elem = denom_tok * static_cast<double>(d);

  std::vector<SeqWork<S>> work(nseq);
  std::vector<Parameters<S>> local_slots;
  std::vector<Parameters<S>>* grad_slots_ptr = &local_slots;
  if (with_grads) {
    if (workspace) {
      workspace->prepare(params, nseq);
      grad_slots_ptr = &workspace->slots;
    } else {
      local_slots.assign(nseq, Parameters<S>::zeros_like(params));
    }
  }
  std::vector<Parameters<S>>& grad_slots = *grad_slots_ptr;

  // batch-level noise time (only used in batch indexing mode)
  double batch_noise_t =
      Rng::stream(set.seed, 0xba7c4u, static_cast<std::uint64_t>(set.step_index)).uniform();

  // Phase A: targets and progression times.
  for (int b = 0; b < nseq; ++b) {
    auto& w = work[b];
    w.tokens = batch[b];
    w.clean = detail::embed_rows(params, w.tokens);
    const Index len = w.clean.rows();
    switch (set.time_mode) {
      case TimeMode::learned:
        w.times = predict_times(params, w.clean, &w.thead);
        break;
      case TimeMode::fixed0: w.times = Vec<S>::Zero(len); break;
      case TimeMode::fixed1: w.times = Vec<S>::Ones(len); break;
      case TimeMode::fixed_half: w.times = Vec<S>::Constant(len, S(0.5)); break;
      case TimeMode::heuristic_entropy: {
        // normalized predictive entropy of a frozen AR pass
        Mat<S> logits = ar_logits(params, w.tokens, set.bos_id);
        w.times.resize(len);
        double logv = std::log(static_cast<double>(params.cfg.vocab_size));
        for (Index i = 0; i < len; ++i) {
          double m = static_cast<double>(logits.row(i).maxCoeff());
          Eigen::Array<double, 1, Eigen::Dynamic> sh =
              logits.row(i).template cast<double>().array() - m;
          double lse = std::log(sh.exp().sum());
          Eigen::Array<double, 1, Eigen::Dynamic> p = (sh - lse).exp();
          double h = 0.0;
          for (Index vv = 0; vv < p.size(); ++vv)
            if (p[vv] > 0.0) h -= p[vv] * std::log(p[vv]);
          w.times[i] = static_cast<S>(std::clamp(h / logv, 0.0, 1.0));
        }
        break;
      }
    }
    w.d_times = Vec<S>::Zero(len);
  }

  // Phase B: entropy regularizer over the whole batch's times.
  LossBreakdown out;
  out.weights = set.weights;
  {
    Vec<S> all_times(total_tokens);
    Index at = 0;
    for (auto& w : work) {
      all_times.segment(at, w.times.size()) = w.times;
      at += w.times.size();
    }
    if (set.weights.ent != 0.0 && set.time_mode == TimeMode::learned && with_grads) {
      Vec<S> d_all;
      out.entropy_reg = entropy_reg(all_times, set.entropy_bins, set.entropy_tau, &d_all,
                                    set.weights.ent);
      at = 0;
      for (auto& w : work) {
        w.d_times += d_all.segment(at, w.times.size());
        at += w.times.size();
      }
    } else {
      out.entropy_reg = entropy_reg<S>(all_times, set.entropy_bins, set.entropy_tau);
    }
  }

  // Phase C: per-sequence heavy passes (parallel across sequences).
  std::atomic<int> next{0};
  std::exception_ptr first_error = nullptr;
  std::mutex err_mutex;
  auto run_seq = [&](int b) {
    auto& w = work[b];
    Parameters<S>* gslot = with_grads ? &grad_slots[b] : nullptr;
    const Index len = w.clean.rows();
    Rng flow_rng = Rng::stream(set.seed, 0xf10au, static_cast<std::uint64_t>(set.step_index),
                               static_cast<std::uint64_t>(b));
    Rng dt_rng = Rng::stream(set.seed, 0xd7a2u, static_cast<std::uint64_t>(set.step_index),
                             static_cast<std::uint64_t>(b));
    Rng drop_rng = Rng::stream(set.seed, 0xd201u, static_cast<std::uint64_t>(set.step_index),
                               static_cast<std::uint64_t>(b));
    Dropout<S> drop;
    if (set.dropout > 0.0) {
      drop.rate = set.dropout;
      drop.rng = &drop_rng;
    }
    Mat<S> d_clean_total = Mat<S>::Zero(len, d);

    // AR term
    if (set.weights.ar != 0.0) {
      BackboneCache<S> cache;
      std::vector<int> input_ids;
      Mat<S> logits = ar_logits(params, w.tokens, set.bos_id, drop,
                                with_grads ? &cache : nullptr, &input_ids);
      if (with_grads) {
        Mat<S> dlogits;
        w.ar_partial = ar_nll_loss(logits, w.tokens, set.label_smoothing, &dlogits,
                                   set.weights.ar, denom_tok);
        // tied decode head: logits = y E^T
        gslot->tok_embed += dlogits.transpose() * cache.out;
        Mat<S> dy = dlogits * params.tok_embed;
        Mat<S> dx = backbone_backward(params, cache, dy, *gslot);
        detail::scatter_embed_grad(*gslot, input_ids, dx);
        for (Index i = 0; i < len; ++i) gslot->pos_embed.row(i) += dx.row(i);
      } else {
        w.ar_partial =
            ar_nll_loss<S>(logits, w.tokens, set.label_smoothing, nullptr, 1.0, denom_tok);
      }
    }

    // flow term
    if (set.weights.flow != 0.0) {
      Vecd noise_t(len);
      if (set.noise_indexing == NoiseIndexing::per_token) {
        for (Index i = 0; i < len; ++i) noise_t[i] = static_cast<double>(w.times[i]);
      } else {
        noise_t.setConstant(batch_noise_t);
      }
      Mat<S> eps = flow_rng.normal_mat<S>(len, d);
      Mat<S> z0(len, d);
      Vecd sqrt_ab(len);
      for (Index i = 0; i < len; ++i) {
        double ab = alpha_bar(noise_t[i], set.schedule);
        sqrt_ab[i] = std::sqrt(ab);
        z0.row(i) = static_cast<S>(sqrt_ab[i]) * w.clean.row(i) +
                    static_cast<S>(std::sqrt(1.0 - ab)) * eps.row(i);
      }
      LatentSequence<S> seq{z0, w.times, 0};
      double nd = static_cast<double>(len) * static_cast<double>(d);
      if (with_grads) {
        FlowGrads<S> fg;
        fg.params = gslot;
        fg.scale = set.weights.flow * nd / denom_elem;
        double loss_b = flow_loss(params, seq, w.clean, set.step_config, &fg);
        w.flow_raw = loss_b * nd;
        w.d_times += fg.d_times;
        d_clean_total += fg.d_targets;
        for (Index i = 0; i < len; ++i)
          d_clean_total.row(i) += static_cast<S>(sqrt_ab[i]) * fg.d_z0.row(i);
        // noise amplitude depends on t_i in per-token indexing
        if (set.time_mode == TimeMode::learned &&
            set.noise_indexing == NoiseIndexing::per_token) {
          for (Index i = 0; i < len; ++i) {
            PerturbScaleGrads pg = perturb_scale_grads(noise_t[i], set.schedule);
            double dz_clean = fg.d_z0.row(i).template cast<double>().dot(
                w.clean.row(i).template cast<double>());
            double dz_eps = fg.d_z0.row(i).template cast<double>().dot(
                eps.row(i).template cast<double>());
            w.d_times[i] +=
                static_cast<S>(pg.d_sqrt_ab * dz_clean + pg.d_sqrt_1mab * dz_eps);
          }
        }
      } else {
        w.flow_raw = flow_loss(params, seq, w.clean, set.step_config) * nd;
      }
    }

    // denoising term
    if (set.weights.diff != 0.0) {
      Vecd t_draws(len);
      if (set.noise_indexing == NoiseIndexing::per_token) {
        for (Index i = 0; i < len; ++i) t_draws[i] = dt_rng.uniform();
      } else {
        t_draws.setConstant(batch_noise_t);
      }
      std::uint64_t dseed =
          splitmix64(set.seed ^ splitmix64(0xd3102eull ^
                                           splitmix64(static_cast<std::uint64_t>(set.step_index) ^
                                                      splitmix64(static_cast<std::uint64_t>(b)))));
      double nd = static_cast<double>(len) * static_cast<double>(d);
      if (with_grads) {
        DenoiseGrads<S> dg;
        dg.params = gslot;
        dg.scale = set.weights.diff * nd / denom_elem;
        double loss_b = denoise_loss(params, w.clean, t_draws, dseed, set.schedule, &dg);
        w.denoise_raw = loss_b * nd;
        d_clean_total += dg.d_clean;
      } else {
        w.denoise_raw = denoise_loss(params, w.clean, t_draws, dseed, set.schedule) * nd;
      }
    }

    // progression-time head and target-embedding gradients
    if (with_grads) {
      if (set.time_mode == TimeMode::learned && w.d_times.size() > 0) {
        Mat<S> d_in = predict_times_backward(params, w.thead, w.d_times, *gslot);
        d_clean_total += d_in;
      }
      detail::scatter_embed_grad(*gslot, w.tokens, d_clean_total);
    }
  };

  int workers = std::max(1, std::min(set.threads, nseq));
  if (workers == 1) {
    for (int b = 0; b < nseq; ++b) run_seq(b);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int t = 0; t < workers; ++t) {
      pool.emplace_back([&]() {
        for (;;) {
          int b = next.fetch_add(1);
          if (b >= nseq) return;
          try {
            run_seq(b);
          } catch (...) {
            std::lock_guard<std::mutex> lk(err_mutex);
            if (!first_error) first_error = std::current_exception();
            return;
          }
        }
      });
    }
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  // Phase D: fixed-order reduction.
  for (int b = 0; b < nseq; ++b) {
    out.ar_nll += work[b].ar_partial;
    out.flow += work[b].flow_raw / denom_elem;
    out.denoise += work[b].denoise_raw / denom_elem;
  }
  if (with_grads) {
    auto dst = tensor_views(*grads);
    for (int b = 0; b < nseq; ++b) {
      auto src = tensor_views(grad_slots[b]);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }
  out.combine();
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer, EMA, training step.

template <class S>
struct AdamState {
  Parameters<S> m, v;
  long step = 0;

  static AdamState make(const Parameters<S>& params) {
    return {Parameters<S>::zeros_like(params), Parameters<S>::zeros_like(params), 0};
  }
};

template <class S>
struct EMAState {
  Parameters<S> shadow;
  double decay = 0.9999;

  static EMAState make(const Parameters<S>& params, double decay) {
    return {params, decay};
  }
  void update(Parameters<S>& params) {
    auto sh = tensor_views(shadow);
    auto pr = tensor_views(params);
    S dec = static_cast<S>(decay), rem = static_cast<S>(1.0 - decay);
    for (std::size_t i = 0; i < sh.size(); ++i) sh[i] = dec * sh[i] + rem * pr[i];
  }
};

// Scales gradients so the global norm does not exceed max_norm; returns
// the pre-clip norm.
template <class S>
double clip_global_norm(Parameters<S>& grads, double max_norm) {
  auto views = tensor_views(grads);
  double sq = 0.0;
  for (auto& v : views) sq += static_cast<double>(v.template cast<double>().squaredNorm());
  double norm = std::sqrt(sq);
  if (norm > max_norm) {
    S sc = static_cast<S>(max_norm / norm);
    for (auto& v : views) v *= sc;
  }
  return norm;
}

// Decoupled-weight-decay adaptive-moment update with bias correction.
template <class S>
void adamw_update(Parameters<S>& params, Parameters<S>& grads, AdamState<S>& state, double lr,
                  const TrainConfig& cfg) {
  state.step += 1;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  auto pv = tensor_views(params);
  auto gv = tensor_views(grads);
  auto mv = tensor_views(state.m);
  auto vv = tensor_views(state.v);
  const S b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
  const S eps = static_cast<S>(cfg.eps);
  const S wd = static_cast<S>(lr * cfg.weight_decay);
  const S ibc1 = static_cast<S>(1.0 / bc1), ibc2 = static_cast<S>(1.0 / bc2);
  for (std::size_t i = 0; i < pv.size(); ++i) {
    mv[i].array() = b1 * mv[i].array() + (S(1) - b1) * gv[i].array();
    vv[i].array() = b2 * vv[i].array() + (S(1) - b2) * gv[i].array().square();
    pv[i].array() -= static_cast<S>(lr) * (mv[i].array() * ibc1) /
                     ((vv[i].array() * ibc2).sqrt() + eps);
    pv[i] -= wd * pv[i];
  }
}

struct StepResult {
  LossBreakdown loss;
  double lr = 0.0;
  double grad_norm = 0.0;
  bool applied = false;
  std::string error;
};

// One optimizer step: composite loss + gradients, global-norm clipping,
// AdamW, EMA shadow update. A non-finite loss aborts the step with a
// diagnostic record and leaves parameters untouched.
template <class S>
StepResult train_step(Parameters<S>& params, AdamState<S>& opt, EMAState<S>& ema,
                      const std::vector<std::vector<int>>& batch, const TrainConfig& cfg,
                      const NoiseSchedule& schedule, long step_index, int bos_id,
                      TimeMode time_mode = TimeMode::learned, double dropout = 0.0,
                      LossWeights* weights_override = nullptr,
                      TrainWorkspace<S>* workspace = nullptr) {
  StepResult res;
  res.lr = learning_rate(step_index, cfg);
  BatchLossSettings set;
  set.schedule = schedule;
  set.step_config = StepConfig::soft(params.cfg.k_max, gate_tau(step_index, cfg));
  set.weights = weights_override ? *weights_override : anneal_weights(step_index, cfg);
  set.label_smoothing = cfg.label_smoothing;
  set.dropout = dropout;
  set.entropy_bins = cfg.entropy_bins;
  set.entropy_tau = cfg.entropy_tau;
  set.noise_indexing = cfg.noise_indexing;
  set.time_mode = time_mode;
  set.bos_id = bos_id;
  set.seed = cfg.seed;
  set.step_index = step_index;
  set.threads = cfg.worker_count();

  TrainWorkspace<S> local;
  TrainWorkspace<S>& ws = workspace ? *workspace : local;
  try {
    res.loss = batch_loss(params, batch, set, &ws.grads, &ws);
  } catch (const std::runtime_error& e) {
    res.error = e.what();
    return res;
  }
  if (!res.loss.finite()) {
    res.error = "non-finite loss";
    return res;
  }
  res.grad_norm = clip_global_norm(ws.grads, cfg.grad_clip);
  adamw_update(params, ws.grads, opt, res.lr, cfg);
  ema.update(params);
  res.applied = true;
  return res;
}

// ---------------------------------------------------------------------------
// Gradient checking.

struct GradCheckGroup {
  std::string group;
  double max_rel_error = 0.0;
  long coords = 0;
};

struct GradCheckReport {
  std::vector<GradCheckGroup> groups;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

// Central-difference comparison on a sampled subset of coordinates
// (at least coords_per_group per parameter group); 64-bit evaluation.
// Relative error uses a small absolute floor so coordinates whose true
// gradient sits below finite-difference noise do not produce spurious
// failures.
inline GradCheckReport grad_check(Parameters<double>& params,
                                  const std::function<double(const Parameters<double>&)>& value,
                                  const std::function<void(const Parameters<double>&,
                                                           Parameters<double>&)>& gradient,
                                  double tolerance, int coords_per_group = 64,
                                  std::uint64_t seed = 0, int threads = 1) {
  Parameters<double> grads = Parameters<double>::zeros_like(params);
  gradient(params, grads);

  auto names = tensor_names(params);
  auto pviews = tensor_views(params);
  auto gviews = tensor_views(grads);

  // bucket tensor indices by group
  std::vector<std::string> group_names;
  std::vector<std::vector<std::size_t>> group_tensors;
  for (std::size_t i = 0; i < names.size(); ++i) {
    std::string g = group_of(names[i]);
    auto it = std::find(group_names.begin(), group_names.end(), g);
    if (it == group_names.end()) {
      group_names.push_back(g);
      group_tensors.push_back({i});
    } else {
      group_tensors[static_cast<std::size_t>(it - group_names.begin())].push_back(i);
    }
  }

  struct Probe {
    std::size_t group;
    std::size_t tensor;
    Index coord;
    double analytic;
    double numeric;
  };
  std::vector<Probe> probes;
  Rng rng = Rng::stream(seed, 0x97adu);
  for (std::size_t g = 0; g < group_names.size(); ++g) {
    long total = 0;
    for (auto ti : group_tensors[g]) total += pviews[ti].size();
    int want = coords_per_group;
    for (int c = 0; c < want; ++c) {
      long flat = static_cast<long>(rng.below(static_cast<std::uint64_t>(total)));
      for (auto ti : group_tensors[g]) {
        if (flat < pviews[ti].size()) {
          probes.push_back({g, ti, static_cast<Index>(flat), gviews[ti][flat], 0.0});
          break;
        }
        flat -= pviews[ti].size();
      }
    }
  }

  const double h = 1e-5;
  std::atomic<std::size_t> cursor{0};
  auto worker = [&]() {
    Parameters<double> local = params;  // private copy to perturb
    auto lviews = tensor_views(local);
    for (;;) {
      std::size_t idx = cursor.fetch_add(1);
      if (idx >= probes.size()) return;
      Probe& pr = probes[idx];
      double orig = lviews[pr.tensor][pr.coord];
      lviews[pr.tensor][pr.coord] = orig + h;
      double up = value(local);
      lviews[pr.tensor][pr.coord] = orig - h;
      double down = value(local);
      lviews[pr.tensor][pr.coord] = orig;
      pr.numeric = (up - down) / (2.0 * h);
    }
  };
  int workers = std::max(1, threads);
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  GradCheckReport rep;
  rep.tolerance = tolerance;
  rep.groups.resize(group_names.size());
  for (std::size_t g = 0; g < group_names.size(); ++g) rep.groups[g].group = group_names[g];
  for (const auto& pr : probes) {
    // central differences at h = 1e-5 cannot resolve gradients below
    // ~eps * |loss| / h ~ 1e-10; the floor turns the comparison absolute
    // for coordinates in that regime.
    double denom = std::max(1e-5, std::abs(pr.analytic) + std::abs(pr.numeric));
    double rel = std::abs(pr.analytic - pr.numeric) / denom;
    auto& grp = rep.groups[pr.group];
    grp.max_rel_error = std::max(grp.max_rel_error, rel);
    grp.coords += 1;
    rep.max_rel_error = std::max(rep.max_rel_error, rel);
  }
  rep.pass = rep.max_rel_error < tolerance;
  return rep;
}

}  // namespace evo

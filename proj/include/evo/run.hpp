#pragma once

#include <filesystem>
#include <functional>
#include <iostream>
#include <ostream>

#include <json.hpp>

#include "evo/checkpoint.hpp"
#include "evo/config.hpp"
#include "evo/data.hpp"
#include "evo/sampling.hpp"
#include "evo/trainer.hpp"

namespace evo {

inline Vocabulary build_vocabulary(const RunConfig& rc) {
  if (rc.data.vocab == "byte") return Vocabulary::byte_level();
  std::string corpus;
  for (const auto& p : rc.data.paths) corpus += read_file(p);
  return Vocabulary::train_bpe(corpus, rc.data.subword_size);
}

// Deterministic batch order: windows reshuffled per epoch, chunked into
// fixed-size batches (wrapping around when the corpus is smaller than a
// batch).
inline std::vector<std::size_t> batch_indices(std::size_t n_windows, int batch_size, long step,
                                              std::uint64_t seed) {
  if (n_windows == 0) throw std::invalid_argument("batch_indices: empty corpus");
  std::size_t per_epoch = std::max<std::size_t>(1, n_windows / batch_size);
  long epoch = step / static_cast<long>(per_epoch);
  long slot = step % static_cast<long>(per_epoch);
  std::vector<std::size_t> order(n_windows);
  for (std::size_t i = 0; i < n_windows; ++i) order[i] = i;
  Rng rng = Rng::stream(seed, 0x0bdeu, static_cast<std::uint64_t>(epoch));
  for (std::size_t i = n_windows; i > 1; --i)
    std::swap(order[i - 1], order[rng.below(i)]);
  std::vector<std::size_t> out;
  for (int b = 0; b < batch_size; ++b) {
    std::size_t at = (static_cast<std::size_t>(slot) * batch_size + b) % n_windows;
    out.push_back(order[at]);
  }
  return out;
}

struct TrainCallbacks {
  std::ostream* metrics = nullptr;  // newline-delimited JSON, one record per step
  std::function<void(long, const StepResult&)> on_step;
};

// Runs rc.train.total_steps optimizer steps over the corpus. Returns the
// final training state; aborts (with a diagnostic metrics record) if a
// step produces a non-finite loss.
template <class S>
TrainState<S> run_training(const RunConfig& rc, const Corpus& corpus, int bos_id,
                           const TrainCallbacks& cb = {}, TrainState<S>* resume = nullptr) {
  TrainState<S> st;
  if (resume) {
    st = *resume;
  } else {
    st.params = Parameters<S>::init(rc.model, rc.train.seed);
    st.opt = AdamState<S>::make(st.params);
    st.ema = EMAState<S>::make(st.params, rc.train.ema_decay);
    st.step = 0;
  }
  const int batch_size = rc.train.batch_size();
  const double dropout = rc.effective_dropout();

  for (; st.step < rc.train.total_steps; ++st.step) {
    auto t0 = std::chrono::steady_clock::now();
    auto idx = batch_indices(corpus.windows.size(), batch_size, st.step, rc.train.seed);
    std::vector<std::vector<int>> batch;
    batch.reserve(idx.size());
    for (auto i : idx) batch.push_back(corpus.windows[i].ids);

    StepResult res = train_step(st.params, st.opt, st.ema, batch, rc.train, rc.schedule,
                                st.step, bos_id, rc.ablation, dropout);
    auto t1 = std::chrono::steady_clock::now();
    double wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    if (cb.metrics) {
      nlohmann::json rec = {{"step", st.step},
                            {"lr", res.lr},
                            {"flow", res.loss.flow},
                            {"ar_nll", res.loss.ar_nll},
                            {"denoise", res.loss.denoise},
                            {"entropy_reg", res.loss.entropy_reg},
                            {"total", res.loss.total},
                            {"grad_norm", res.grad_norm},
                            {"wall_ms", wall_ms}};
      if (!res.applied) rec["error"] = res.error;
      (*cb.metrics) << rec.dump() << "\n";
    }
    if (cb.on_step) cb.on_step(st.step, res);
    if (!res.applied)
      throw std::runtime_error("training aborted at step " + std::to_string(st.step) + ": " +
                               res.error);
  }
  return st;
}

struct EvalResult {
  double nats_per_token = 0.0;
  double perplexity = 0.0;
  double bits_per_char = 0.0;
};

template <class S>
EvalResult eval_ppl(const Parameters<S>& params, const Corpus& corpus, int bos_id,
                    int threads = 1) {
  std::vector<std::vector<int>> seqs;
  seqs.reserve(corpus.windows.size());
  for (const auto& w : corpus.windows) seqs.push_back(w.ids);
  EvalResult r;
  r.nats_per_token = eval_nats(params, seqs, bos_id, threads);
  r.perplexity = std::exp(r.nats_per_token);
  r.bits_per_char = r.nats_per_token / std::log(2.0);
  return r;
}

// Counts hard-mode refinement work over one batch of embedded sequences
// with the given time assignment (ablation counters).
template <class S>
RefineStats count_refinement(const Parameters<S>& params, const std::vector<int>& tokens,
                             const Vec<S>& times, int k_max) {
  LatentSequence<S> seq;
  seq.latents.resize(static_cast<Index>(tokens.size()), params.cfg.d);
  for (std::size_t i = 0; i < tokens.size(); ++i)
    seq.latents.row(static_cast<Index>(i)) = params.tok_embed.row(tokens[i]);
  seq.times = times;
  seq.prompt_len = 0;
  RefineStats stats;
  StepConfig cfg = StepConfig::hard(k_max);
  VelocityField<S> field = [&](const Mat<S>& latents, const Vec<S>& ts, int k) {
    LatentSequence<S> cur{latents, ts, 0};
    return field_eval(params, cur, k);
  };
  (void)refine_trajectory(seq, field, cfg, &stats);
  return stats;
}

struct AblateRow {
  std::string mode;
  LossBreakdown final_loss;
  double val_nats = 0.0;
  double val_ppl = 0.0;
  long refine_token_updates = 0;
  double mean_steps_per_token = 0.0;
  double wall_s = 0.0;
};

// Runs identical training budgets across the ablation modes and reports
// one metrics row per mode. The refinement counter comes from a hard-
// truncated pass over the first validation window with each mode's times.
template <class S>
std::vector<AblateRow> run_ablation(const RunConfig& base, const Corpus& train_corpus,
                                    const Corpus& val_corpus, int bos_id,
                                    std::ostream* progress = nullptr) {
  std::vector<TimeMode> modes = {TimeMode::learned, TimeMode::fixed0, TimeMode::fixed1,
                                 TimeMode::fixed_half, TimeMode::heuristic_entropy};
  std::vector<AblateRow> rows;
  for (TimeMode mode : modes) {
    RunConfig rc = base;
    rc.ablation = mode;
    if (mode != TimeMode::learned) rc.train.w_ent = 0.0;
    auto t0 = std::chrono::steady_clock::now();
    LossBreakdown last;
    TrainCallbacks cb;
    cb.on_step = [&](long, const StepResult& res) { last = res.loss; };
    TrainState<S> st = run_training<S>(rc, train_corpus, bos_id, cb);
    auto t1 = std::chrono::steady_clock::now();

    AblateRow row;
    row.mode = to_string(mode);
    row.final_loss = last;
    row.wall_s = std::chrono::duration<double>(t1 - t0).count();
    const Corpus& evalc = val_corpus.windows.empty() ? train_corpus : val_corpus;
    EvalResult ev = eval_ppl(st.params, evalc, bos_id, rc.train.worker_count());
    row.val_nats = ev.nats_per_token;
    row.val_ppl = ev.perplexity;

    const auto& tokens = evalc.windows.front().ids;
    Vec<S> times;
    switch (mode) {
      case TimeMode::fixed0: times = Vec<S>::Zero(tokens.size()); break;
      case TimeMode::fixed1: times = Vec<S>::Ones(tokens.size()); break;
      case TimeMode::fixed_half: times = Vec<S>::Constant(tokens.size(), S(0.5)); break;
      case TimeMode::heuristic_entropy: {
        Mat<S> logits = ar_logits(st.params, tokens, bos_id);
        times.resize(static_cast<Index>(tokens.size()));
        double logv = std::log(static_cast<double>(st.params.cfg.vocab_size));
        for (Index i = 0; i < times.size(); ++i) {
          double m = static_cast<double>(logits.row(i).maxCoeff());
          Eigen::ArrayXd sh = logits.row(i).template cast<double>().transpose().array() - m;
          double lse = std::log(sh.exp().sum());
          Eigen::ArrayXd p = (sh - lse).exp();
          double h = 0.0;
          for (Index vv = 0; vv < p.size(); ++vv)
            if (p[vv] > 0.0) h -= p[vv] * std::log(p[vv]);
          times[i] = static_cast<S>(std::clamp(h / logv, 0.0, 1.0));
        }
        break;
      }
      case TimeMode::learned: {
        Mat<S> emb(static_cast<Index>(tokens.size()), st.params.cfg.d);
        for (std::size_t i = 0; i < tokens.size(); ++i)
          emb.row(static_cast<Index>(i)) = st.params.tok_embed.row(tokens[i]);
        times = predict_times(st.params, emb);
        break;
      }
    }
    RefineStats stats = count_refinement(st.params, tokens, times, rc.model.k_max);
    row.refine_token_updates = stats.token_updates;
    row.mean_steps_per_token =
        static_cast<double>(stats.token_updates) / static_cast<double>(tokens.size());
    rows.push_back(row);
    if (progress)
      (*progress) << "ablate mode=" << row.mode << " total=" << row.final_loss.total
                  << " val_nats=" << row.val_nats << " updates=" << row.refine_token_updates
                  << "\n";
  }
  return rows;
}

}  // namespace evo

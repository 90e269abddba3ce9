#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "evo/flow.hpp"
#include "evo/model.hpp"
#include "evo/rng.hpp"
#include "evo/schedules.hpp"

namespace evo {

// Per-batch loss components (values are unweighted; total applies the
// weights exactly as written).
struct LossWeights {
  double flow = 1.0;
  double ar = 1.0;
  double diff = 1.0;
  double ent = 0.01;
};

struct LossBreakdown {
  double flow = 0.0;
  double ar_nll = 0.0;
  double denoise = 0.0;
  double entropy_reg = 0.0;
  double total = 0.0;
  LossWeights weights;

  void combine() {
    total = weights.flow * flow + weights.ar * ar_nll + weights.diff * denoise +
            weights.ent * entropy_reg;
  }
  bool finite() const {
    return std::isfinite(flow) && std::isfinite(ar_nll) && std::isfinite(denoise) &&
           std::isfinite(entropy_reg) && std::isfinite(total);
  }
};

// ---------------------------------------------------------------------------
// AR negative log-likelihood with label smoothing.
//
// Mean cross-entropy against the smoothed target distribution
// (true class 1 - eps + eps/V, others eps/V). If dlogits is given it
// receives d(mean ce)/dlogits scaled by grad_scale.
template <class S>
double ar_nll_loss(const Mat<S>& logits, const std::vector<int>& targets, double label_smoothing,
                   Mat<S>* dlogits = nullptr, double grad_scale = 1.0,
                   double token_norm = 0.0) {
  const Index n = logits.rows(), v = logits.cols();
  if (static_cast<Index>(targets.size()) != n)
    throw std::invalid_argument("ar_nll_loss: target count mismatch");
  if (token_norm <= 0.0) token_norm = static_cast<double>(n);
  const double eps = label_smoothing;
  const double q_true = 1.0 - eps + eps / static_cast<double>(v);
  const double q_other = eps / static_cast<double>(v);
  if (dlogits) dlogits->resize(n, v);

  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    int y = targets[i];
    if (y < 0 || y >= v) throw std::domain_error("ar_nll_loss: target id out of range");
    // log-softmax
    S m = logits.row(i).maxCoeff();
    Eigen::Array<double, 1, Eigen::Dynamic> sh =
        (logits.row(i).template cast<double>().array() - static_cast<double>(m));
    double lse = std::log(sh.exp().sum());
    double ce = -q_other * (sh - lse).sum() - (q_true - q_other) * (sh[y] - lse);
    total += ce;
    if (dlogits) {
      Eigen::Array<double, 1, Eigen::Dynamic> p = (sh - lse).exp();
      Eigen::Array<double, 1, Eigen::Dynamic> g = p - q_other;
      g[y] -= (q_true - q_other);
      dlogits->row(i) = (g * (grad_scale / token_norm)).template cast<S>().matrix();
    }
  }
  return total / token_norm;
}

// ---------------------------------------------------------------------------
// Unrolled flow loss.
//
// Starting from seq.latents the latent state advances through k_max gated
// ODE updates; at each step the model's one-step prediction is scored as
// a unit-variance Gaussian around the clean target latents, with the gate
// controlling per-token step participation. Sum over steps, averaged per
// token and dimension.

template <class S>
struct FlowGrads {
  Parameters<S>* params = nullptr;  // accumulated (scaled)
  Mat<S> d_targets;                 // gradient w.r.t. clean targets
  Mat<S> d_z0;                      // gradient w.r.t. initial latents
  Vec<S> d_times;                   // gradient w.r.t. t_i (gates + time embedding)
  double scale = 1.0;               // multiplies every gradient contribution
};

template <class S>
double flow_loss(const Parameters<S>& params, const LatentSequence<S>& seq, const Mat<S>& targets,
                 const StepConfig& config, FlowGrads<S>* out = nullptr) {
  config.validate();
  seq.validate();
  if (targets.rows() != seq.latents.rows() || targets.cols() != seq.latents.cols())
    throw std::invalid_argument("flow_loss: target shape mismatch");
  const Index n = seq.size();
  const Index d = seq.latents.cols();
  const Index n_active = n - seq.prompt_len;
  if (n_active <= 0) throw std::invalid_argument("flow_loss: no non-prompt tokens");
  const int k_max = config.k_max;
  const double dt = config.dt;
  const double norm = static_cast<double>(n_active) * static_cast<double>(d);
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  const bool soft = config.truncation == TruncationMode::soft;
  const bool with_grads = out != nullptr;

  // forward, keeping per-step state
  std::vector<Mat<S>> states(k_max + 1);
  std::vector<Mat<S>> vels(k_max);
  std::vector<BackboneCache<S>> caches(with_grads ? k_max : 0);
  std::vector<Vec<S>> gates(k_max);
  Vec<S> gate_mask = Vec<S>::Zero(n);  // zero out prompt rows
  for (Index i = seq.prompt_len; i < n; ++i) gate_mask[i] = S(1);
  states[0] = seq.latents;
  double loss_raw = 0.0;
  const double c_dim = static_cast<double>(d) * half_log_2pi;
  for (int k = 0; k < k_max; ++k) {
    if (!states[k].allFinite())
      throw std::runtime_error("flow_loss: non-finite latent state at step " + std::to_string(k));
    Mat<S> x = build_field_input(params, states[k], seq.times, k);
    Mat<S> y = backbone_forward(params, x, /*causal=*/false, {}, with_grads ? &caches[k] : nullptr);
    vels[k] = (y * params.w_vel).rowwise() + params.b_vel.transpose();
    Vec<S>& g = gates[k];
    g.resize(n);
    for (Index i = 0; i < n; ++i) {
      double t_i = static_cast<double>(seq.times[i]);
      g[i] = static_cast<S>(soft ? soft_gate(t_i, k, k_max, config.tau)
                                 : (k < depth(t_i, k_max) ? 1.0 : 0.0)) *
             gate_mask[i];
    }
    states[k + 1] =
        states[k] + (vels[k].array().colwise() * (g.array() * static_cast<S>(dt))).matrix();
    Vec<S> err2 = (states[k + 1] - targets).rowwise().squaredNorm();
    loss_raw += static_cast<double>(
        (g.template cast<double>().array() *
         (0.5 * err2.template cast<double>().array() + c_dim))
            .sum());
  }
  const double loss = loss_raw / norm;
  if (!with_grads) return loss;

  // backward through the unrolled trajectory
  const double sc = out->scale / norm;
  out->d_targets = Mat<S>::Zero(n, d);
  out->d_times = Vec<S>::Zero(n);
  TimeEmbeddingSpec tspec = params.time_spec();
  Mat<S> te_dt(n, d);
  for (Index i = 0; i < n; ++i)
    te_dt.row(i) =
        time_embed_dt<S>(static_cast<double>(seq.times[i]), tspec).transpose();

  Mat<S> lambda = Mat<S>::Zero(n, d);  // dL/dz^{(k+1)}, scaled by out->scale
  for (int k = k_max - 1; k >= 0; --k) {
    const Vec<S>& g = gates[k];
    // direct loss term at z^{(k+1)}
    Mat<S> diff = states[k + 1] - targets;
    Mat<S> scaled = (diff.array().colwise() * (g.array() * static_cast<S>(sc))).matrix();
    lambda += scaled;
    out->d_targets -= scaled;
    // gate gradient (soft mode): dL/dg = dt * F . lambda + loss term value
    if (soft) {
      Vec<S> vdotl = (vels[k].array() * lambda.array()).rowwise().sum();
      Vec<S> err2 = diff.rowwise().squaredNorm();
      for (Index i = seq.prompt_len; i < n; ++i) {
        double t_i = static_cast<double>(seq.times[i]);
        double dg = dt * static_cast<double>(vdotl[i]) +
                    sc * (0.5 * static_cast<double>(err2[i]) + c_dim);
        out->d_times[i] += static_cast<S>(dg * soft_gate_dt(t_i, k, k_max, config.tau));
      }
    }
    // through the field evaluation
    Mat<S> dvel = (lambda.array().colwise() * (g.array() * static_cast<S>(dt))).matrix();
    Mat<S> dy = dvel * params.w_vel.transpose();
    out->params->w_vel += caches[k].out.transpose() * dvel;
    out->params->b_vel += dvel.colwise().sum().transpose();
    Mat<S> dx = backbone_backward(params, caches[k], dy, *out->params);
    // input rows: latents + pos + time embedding + (k/K) step channel
    out->params->pos_embed.topRows(n) += dx;
    out->params->step_vec +=
        static_cast<S>(static_cast<double>(k) / k_max) * dx.colwise().sum().transpose();
    out->d_times += (dx.array() * te_dt.array()).rowwise().sum().matrix();
    lambda += dx;
  }
  out->d_z0 = lambda;
  return loss;
}

// ---------------------------------------------------------------------------
// Denoising reconstruction loss.
//
// Perturbs the clean latents at per-token drawn times, runs one field
// evaluation at those times, and penalizes the mean squared error of the
// reconstruction against the clean latents. Deterministic given the seed.
template <class S>
struct DenoiseGrads {
  Parameters<S>* params = nullptr;
  Mat<S> d_clean;
  double scale = 1.0;
};

template <class S>
double denoise_loss(const Parameters<S>& params, const Mat<S>& clean, const Vecd& t_draws,
                    std::uint64_t rng_seed, const NoiseSchedule& sched,
                    DenoiseGrads<S>* out = nullptr) {
  const Index n = clean.rows(), d = clean.cols();
  if (t_draws.size() != n) throw std::invalid_argument("denoise_loss: t_draws size mismatch");
  Rng rng = Rng::stream(rng_seed, 0xde401u);
  Mat<S> eps = rng.normal_mat<S>(n, d);
  Mat<S> noised(n, d);
  Vecd sqrt_ab(n);
  for (Index i = 0; i < n; ++i) {
    double ab = alpha_bar(t_draws[i], sched);
    sqrt_ab[i] = std::sqrt(ab);
    noised.row(i) = static_cast<S>(sqrt_ab[i]) * clean.row(i) +
                    static_cast<S>(std::sqrt(1.0 - ab)) * eps.row(i);
  }
  Vec<S> times = t_draws.template cast<S>();
  Mat<S> x = build_field_input(params, noised, times, 0);
  BackboneCache<S> cache;
  const bool with_grads = out != nullptr;
  Mat<S> y = backbone_forward(params, x, /*causal=*/false, {}, with_grads ? &cache : nullptr);
  Mat<S> recon = (y * params.w_vel).rowwise() + params.b_vel.transpose();
  Mat<S> diff = recon - clean;
  const double norm = static_cast<double>(n) * static_cast<double>(d);
  double loss = static_cast<double>(diff.squaredNorm()) / norm;
  if (!with_grads) return loss;

  const S sc = static_cast<S>(2.0 * out->scale / norm);
  Mat<S> drecon = sc * diff;
  out->params->w_vel += cache.out.transpose() * drecon;
  out->params->b_vel += drecon.colwise().sum().transpose();
  Mat<S> dy = drecon * params.w_vel.transpose();
  Mat<S> dx = backbone_backward(params, cache, dy, *out->params);
  out->params->pos_embed.topRows(n) += dx;  // step channel is 0 here
  out->d_clean = -drecon;  // target side
  for (Index i = 0; i < n; ++i)
    out->d_clean.row(i) += static_cast<S>(sqrt_ab[i]) * dx.row(i);  // input side
  return loss;
}

// ---------------------------------------------------------------------------
// Entropy regularizer on the progression times.
//
// Soft histogram over `bins` equal bins of [0,1] via sigmoid edges with
// temperature tau; returns the negated entropy (to be minimized) and
// optionally d(-H)/dt.
template <class S>
double entropy_reg(const Vec<S>& times, int bins, double tau = 0.02, Vec<S>* d_times = nullptr,
                   double grad_scale = 1.0) {
  if (bins < 2) throw std::domain_error("entropy_reg: need bins >= 2");
  const Index n = times.size();
  if (n == 0) throw std::invalid_argument("entropy_reg: empty times");
  auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };

  Matd w(n, bins), dw(n, bins);  // per-token soft assignment and d/dt
  for (Index i = 0; i < n; ++i) {
    double t = static_cast<double>(times[i]);
    double total = 0.0;
    for (int b = 0; b < bins; ++b) {
      double e0 = static_cast<double>(b) / bins, e1 = static_cast<double>(b + 1) / bins;
      double s0 = sig((t - e0) / tau), s1 = sig((t - e1) / tau);
      w(i, b) = s0 - s1;
      dw(i, b) = (s0 * (1.0 - s0) - s1 * (1.0 - s1)) / tau;
      total += w(i, b);
    }
    // normalize the row (mass leaking past [0,1] is folded back)
    double dtotal = dw.row(i).sum();
    for (int b = 0; b < bins; ++b) {
      double raw = w(i, b);
      w(i, b) = raw / total;
      dw(i, b) = (dw(i, b) * total - raw * dtotal) / (total * total);
    }
  }
  Vecd q = w.colwise().mean().transpose();
  double h = 0.0;
  for (int b = 0; b < bins; ++b)
    if (q[b] > 0.0) h -= q[b] * std::log(q[b]);
  if (d_times) {
    d_times->resize(n);
    // d(-H)/dq_b = log q_b + 1; dq_b/dw_ib = 1/n
    for (Index i = 0; i < n; ++i) {
      double acc = 0.0;
      for (int b = 0; b < bins; ++b) {
        double dq = (q[b] > 0.0) ? (std::log(q[b]) + 1.0) : 0.0;
        acc += dq * dw(i, b) / static_cast<double>(n);
      }
      (*d_times)[i] = static_cast<S>(acc * grad_scale);
    }
  }
  return -h;
}

}  // namespace evo

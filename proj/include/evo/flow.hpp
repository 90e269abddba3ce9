#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "evo/types.hpp"

namespace evo {

// Per-token latent rows z_i with progression times t_i. The first
// prompt_len positions are conditioning and are never modified by
// refinement.
template <class S>
struct LatentSequence {
  Mat<S> latents;  // N x d
  Vec<S> times;    // N, each in [0, 1]
  Index prompt_len = 0;

  Index size() const { return latents.rows(); }

  void validate() const {
    if (times.size() != latents.rows())
      throw std::invalid_argument("LatentSequence: times/latents size mismatch");
    if (prompt_len < 0 || prompt_len > latents.rows())
      throw std::invalid_argument("LatentSequence: prompt_len out of range");
    for (Index i = 0; i < times.size(); ++i)
      if (!(times[i] >= S(0) && times[i] <= S(1)))
        throw std::domain_error("LatentSequence: every t_i must lie in [0,1]");
  }
};

enum class TruncationMode { hard, soft };

struct StepConfig {
  int k_max = 20;
  double dt = 1.0 / 20.0;  // always 1 / k_max so pseudo-time spans [0,1]
  TruncationMode truncation = TruncationMode::hard;
  double tau = 0.1;  // soft gate temperature

  static StepConfig hard(int k_max) {
    StepConfig c;
    c.k_max = k_max;
    c.dt = 1.0 / static_cast<double>(k_max);
    return c;
  }
  static StepConfig soft(int k_max, double tau) {
    StepConfig c;
    c.k_max = k_max;
    c.dt = 1.0 / static_cast<double>(k_max);
    c.truncation = TruncationMode::soft;
    c.tau = tau;
    return c;
  }

  void validate() const {
    if (k_max < 1) throw std::invalid_argument("StepConfig: k_max must be >= 1");
    if (dt != 1.0 / static_cast<double>(k_max))
      throw std::invalid_argument("StepConfig: dt must equal 1 / k_max");
    if (truncation == TruncationMode::soft && tau <= 0.0)
      throw std::domain_error("StepConfig: tau must be positive");
  }
};

// Per-token refinement depth K_i = floor(K_max * t_i).
inline int depth(double t_i, int k_max) {
  if (!(t_i >= 0.0 && t_i <= 1.0)) throw std::domain_error("depth: t_i must lie in [0,1]");
  return static_cast<int>(std::floor(k_max * t_i));
}

// Differentiable surrogate for the truncation indicator k < K_max * t_i.
inline double soft_gate(double t_i, int k, int k_max, double tau) {
  if (tau <= 0.0) throw std::domain_error("soft_gate: tau must be positive");
  if (k < 0 || k >= k_max) throw std::domain_error("soft_gate: k must lie in [0, k_max)");
  double x = (k_max * t_i - k) / tau;
  return 1.0 / (1.0 + std::exp(-x));
}

// d soft_gate / d t_i.
inline double soft_gate_dt(double t_i, int k, int k_max, double tau) {
  double g = soft_gate(t_i, k, k_max, tau);
  return g * (1.0 - g) * (k_max / tau);
}

template <class S>
struct RefinementState {
  LatentSequence<S> seq;
  int step = 0;
  std::vector<bool> frozen;  // refreshed from depth() in hard mode
};

template <class S>
RefinementState<S> make_refinement_state(LatentSequence<S> seq, const StepConfig& config) {
  config.validate();
  seq.validate();
  RefinementState<S> st;
  st.seq = std::move(seq);
  st.step = 0;
  st.frozen.resize(st.seq.size());
  for (Index i = 0; i < st.seq.size(); ++i)
    st.frozen[i] = 0 >= depth(static_cast<double>(st.seq.times[i]), config.k_max);
  return st;
}

struct RefineStats {
  long token_updates = 0;  // latent rows actually advanced
  long field_evals = 0;    // velocity-field invocations
};

// One discretized ODE update z <- z + dt * v. Hard mode skips frozen and
// prompt rows entirely (they stay bitwise identical); soft mode scales
// every non-prompt update by the gate so gradients reach t_i.
template <class S>
RefinementState<S> ode_step(const RefinementState<S>& state, const Mat<S>& velocities,
                            const StepConfig& config, RefineStats* stats = nullptr) {
  config.validate();
  if (velocities.rows() != state.seq.latents.rows() ||
      velocities.cols() != state.seq.latents.cols())
    throw std::invalid_argument("ode_step: velocity shape mismatch");
  if (state.step >= config.k_max)
    throw std::runtime_error("ode_step: state already completed k_max steps");

  RefinementState<S> next = state;
  const S dt = static_cast<S>(config.dt);
  for (Index i = next.seq.prompt_len; i < next.seq.size(); ++i) {
    if (config.truncation == TruncationMode::hard) {
      if (next.frozen[i]) continue;
      next.seq.latents.row(i) += dt * velocities.row(i);
      if (stats) stats->token_updates++;
    } else {
      S g = static_cast<S>(soft_gate(static_cast<double>(next.seq.times[i]), state.step,
                                     config.k_max, config.tau));
      next.seq.latents.row(i) += g * dt * velocities.row(i);
      if (stats) stats->token_updates++;
    }
  }
  next.step = state.step + 1;
  for (Index i = 0; i < next.seq.size(); ++i)
    next.frozen[i] = next.step >= depth(static_cast<double>(next.seq.times[i]), config.k_max);
  return next;
}

// Velocity callback: (latents, times, step) -> N x d matrix.
template <class S>
using VelocityField = std::function<Mat<S>(const Mat<S>&, const Vec<S>&, int)>;

// Applies ode_step k_max times. In hard mode the total update count per
// token equals depth(t_i); field evaluation is skipped once every row is
// frozen.
template <class S>
LatentSequence<S> refine_trajectory(const LatentSequence<S>& seq, const VelocityField<S>& field,
                                    const StepConfig& config, RefineStats* stats = nullptr) {
  RefinementState<S> st = make_refinement_state(seq, config);
  for (int k = 0; k < config.k_max; ++k) {
    if (config.truncation == TruncationMode::hard) {
      bool all_frozen = true;
      for (Index i = st.seq.prompt_len; i < st.seq.size(); ++i)
        if (!st.frozen[i]) {
          all_frozen = false;
          break;
        }
      if (all_frozen) {
        st.step++;
        continue;
      }
    }
    Mat<S> vel = field(st.seq.latents, st.seq.times, k);
    if (stats) stats->field_evals++;
    st = ode_step(st, vel, config, stats);
  }
  return st.seq;
}

}  // namespace evo

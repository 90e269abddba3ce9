#pragma once

#include <vector>

#include "evo/types.hpp"

namespace evo::lab {

// Discrete latent chain over the full joint state space (alphabet^length
// states), small enough for exact summation. States are indexed z^0
// (data) through z^T (noise); transitions are explicit categorical
// tables so nothing is approximation-limited except enumeration size.
struct ToyChainSpec {
  int alphabet = 2;
  int length = 4;
  int t_steps = 8;
  int data_state = 0;
  // forward[t-1](a, b) = q(z^t = b | z^{t-1} = a), t = 1..T
  std::vector<Matd> forward;
  // reverse[t-1](b, a) = p_theta(z^{t-1} = a | z^t = b), t = 1..T
  std::vector<Matd> reverse;
  Vecd prior;  // p(z^T)

  Index num_states() const;
  void validate() const;
};

struct ElboGapResult {
  double log_likelihood = 0.0;
  double elbo = 0.0;
  double gap = 0.0;
  // per_step_kl[0] is the prior-matching term at the top of the chain;
  // per_step_kl[t] for t = 1..T is the expected KL between the forward
  // bridge q(z^{t-1} | z^t, x) and the model posterior p(z^{t-1} | z^t, x).
  // The entries sum to gap exactly.
  std::vector<double> per_step_kl;
};

// Exact log-likelihood, ELBO and KL decomposition for the chain's data
// state, by dynamic programming over the full state space.
ElboGapResult elbo_gap_toy(const ToyChainSpec& spec);

// Binary chain whose forward kernel flips each bit independently with
// probability beta0 / T per step (so the per-step rate scales as 1/T),
// and whose reverse model is a flip kernel with the per-step rate scaled
// by reverse_scale (a fixed mismatched family), uniform prior.
ToyChainSpec binary_flip_chain(int length, int t_steps, double beta0, double reverse_scale,
                               int data_state);

// Replaces the reverse tables and prior with the exact posterior of the
// forward chain conditioned on the spec's data state (gap becomes zero).
ToyChainSpec with_posterior_reverse(const ToyChainSpec& spec);

}  // namespace evo::lab

#include "evo/toy_chain.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace evo::lab {

namespace {

constexpr double kRowTol = 1e-12;

void check_row_stochastic(const Matd& m, const char* name) {
  for (Index i = 0; i < m.rows(); ++i) {
    double s = m.row(i).sum();
    if (std::abs(s - 1.0) > kRowTol)
      throw std::invalid_argument(std::string("ToyChainSpec: ") + name +
                                  " row not normalized within 1e-12");
    if ((m.row(i).array() < 0.0).any())
      throw std::invalid_argument(std::string("ToyChainSpec: ") + name + " has negative entries");
  }
}

double xlogy(double x, double y) {
  if (x == 0.0) return 0.0;
  return x * std::log(y);
}

// KL(q || p) for two distributions over the same support.
double kl(const Vecd& q, const Vecd& p) {
  double acc = 0.0;
  for (Index i = 0; i < q.size(); ++i) {
    if (q[i] == 0.0) continue;
    if (p[i] == 0.0) return std::numeric_limits<double>::infinity();
    acc += q[i] * std::log(q[i] / p[i]);
  }
  return acc;
}

}  // namespace

Index ToyChainSpec::num_states() const {
  Index s = 1;
  for (int i = 0; i < length; ++i) s *= alphabet;
  return s;
}

void ToyChainSpec::validate() const {
  if (alphabet < 2 || alphabet > 4) throw std::invalid_argument("ToyChainSpec: alphabet must be in [2,4]");
  if (length < 1 || length > 6) throw std::invalid_argument("ToyChainSpec: length must be in [1,6]");
  if (t_steps < 1) throw std::invalid_argument("ToyChainSpec: need T >= 1");
  const Index s = num_states();
  if (s * static_cast<Index>(t_steps) > 1000000)
    throw std::length_error("ToyChainSpec: enumeration budget exceeded (states * T > 1e6)");
  if (data_state < 0 || data_state >= s) throw std::invalid_argument("ToyChainSpec: data_state out of range");
  if (static_cast<int>(forward.size()) != t_steps || static_cast<int>(reverse.size()) != t_steps)
    throw std::invalid_argument("ToyChainSpec: need T forward and T reverse tables");
  for (int t = 0; t < t_steps; ++t) {
    if (forward[t].rows() != s || forward[t].cols() != s || reverse[t].rows() != s ||
        reverse[t].cols() != s)
      throw std::invalid_argument("ToyChainSpec: table shape mismatch");
    check_row_stochastic(forward[t], "forward");
    check_row_stochastic(reverse[t], "reverse");
  }
  if (prior.size() != s || std::abs(prior.sum() - 1.0) > kRowTol)
    throw std::invalid_argument("ToyChainSpec: prior not normalized within 1e-12");
}

ElboGapResult elbo_gap_toy(const ToyChainSpec& spec) {
  spec.validate();
  const Index s = spec.num_states();
  const int t_steps = spec.t_steps;
  const Index x = spec.data_state;

  // Forward marginals m_t(b) = q(z^t = b | x) and endpoint likelihoods
  // b_t(z) = p(z^0 = x | z^t = z) under the reverse model.
  std::vector<Vecd> m(t_steps + 1), lik(t_steps + 1);
  m[0] = Vecd::Zero(s);
  m[0][x] = 1.0;
  for (int t = 1; t <= t_steps; ++t) m[t] = spec.forward[t - 1].transpose() * m[t - 1];
  lik[0] = Vecd::Zero(s);
  lik[0][x] = 1.0;
  for (int t = 1; t <= t_steps; ++t) lik[t] = spec.reverse[t - 1] * lik[t - 1];

  const double px = spec.prior.dot(lik[t_steps]);
  ElboGapResult out;
  out.log_likelihood = std::log(px);

  // ELBO = E_q[log p_T(z^T)] + sum_t E_q[log p(z^{t-1}|z^t)] - sum_t E_q[log q(z^t|z^{t-1})],
  // with exact pairwise marginals P_t(a, b) = m_{t-1}(a) F_t(a, b).
  double elbo = 0.0;
  for (Index z = 0; z < s; ++z) elbo += xlogy(m[t_steps][z], spec.prior[z]);
  for (int t = 1; t <= t_steps; ++t) {
    const Matd& f = spec.forward[t - 1];
    const Matd& r = spec.reverse[t - 1];
    for (Index a = 0; a < s; ++a) {
      if (m[t - 1][a] == 0.0) continue;
      for (Index b = 0; b < s; ++b) {
        double pab = m[t - 1][a] * f(a, b);
        if (pab == 0.0) continue;
        elbo += pab * (std::log(r(b, a)) - std::log(f(a, b)));
      }
    }
  }
  out.elbo = elbo;
  out.gap = out.log_likelihood - out.elbo;

  // KL decomposition along the backward bridge; the entries sum to gap.
  out.per_step_kl.assign(t_steps + 1, 0.0);
  Vecd p_top = (spec.prior.array() * lik[t_steps].array()).matrix() / px;
  out.per_step_kl[0] = kl(m[t_steps], p_top);
  for (int t = 1; t <= t_steps; ++t) {
    const Matd& f = spec.forward[t - 1];
    const Matd& r = spec.reverse[t - 1];
    double acc = 0.0;
    for (Index b = 0; b < s; ++b) {
      if (m[t][b] == 0.0) continue;
      // q(z^{t-1} = a | z^t = b, x) and p(z^{t-1} = a | z^t = b, x)
      Vecd qb(s), pb(s);
      for (Index a = 0; a < s; ++a) {
        qb[a] = m[t - 1][a] * f(a, b) / m[t][b];
        pb[a] = r(b, a) * lik[t - 1][a] / lik[t][b];
      }
      acc += m[t][b] * kl(qb, pb);
    }
    out.per_step_kl[t] = acc;
  }
  return out;
}

namespace {

// Independent per-position flip kernel over the joint state space.
Matd flip_table(int alphabet, int length, Index states, double flip_prob) {
  // Per position: stay with 1 - flip, otherwise uniform over the other
  // alphabet - 1 symbols.
  Matd table(states, states);
  double other = flip_prob / static_cast<double>(alphabet - 1);
  for (Index a = 0; a < states; ++a) {
    for (Index b = 0; b < states; ++b) {
      double p = 1.0;
      Index ra = a, rb = b;
      for (int pos = 0; pos < length; ++pos) {
        int sa = static_cast<int>(ra % alphabet), sb = static_cast<int>(rb % alphabet);
        p *= (sa == sb) ? (1.0 - flip_prob) : other;
        ra /= alphabet;
        rb /= alphabet;
      }
      table(a, b) = p;
    }
  }
  // Renormalize rows to kill accumulated roundoff.
  for (Index a = 0; a < states; ++a) table.row(a) /= table.row(a).sum();
  return table;
}

}  // namespace

ToyChainSpec binary_flip_chain(int length, int t_steps, double beta0, double reverse_scale,
                               int data_state) {
  ToyChainSpec spec;
  spec.alphabet = 2;
  spec.length = length;
  spec.t_steps = t_steps;
  spec.data_state = data_state;
  const Index s = spec.num_states();
  double f = beta0 / static_cast<double>(t_steps);
  double g = std::min(0.49, reverse_scale * f);
  Matd fwd = flip_table(spec.alphabet, length, s, f);
  Matd rev = flip_table(spec.alphabet, length, s, g);
  spec.forward.assign(t_steps, fwd);
  spec.reverse.assign(t_steps, rev);
  spec.prior = Vecd::Constant(s, 1.0 / static_cast<double>(s));
  spec.validate();
  return spec;
}

ToyChainSpec with_posterior_reverse(const ToyChainSpec& spec) {
  spec.validate();
  const Index s = spec.num_states();
  ToyChainSpec out = spec;
  std::vector<Vecd> m(spec.t_steps + 1);
  m[0] = Vecd::Zero(s);
  m[0][spec.data_state] = 1.0;
  for (int t = 1; t <= spec.t_steps; ++t) m[t] = spec.forward[t - 1].transpose() * m[t - 1];
  for (int t = 1; t <= spec.t_steps; ++t) {
    Matd r = Matd::Zero(s, s);
    for (Index b = 0; b < s; ++b) {
      if (m[t][b] == 0.0) {
        // unreachable state; give it an arbitrary valid row
        r(b, b) = 1.0;
        continue;
      }
      for (Index a = 0; a < s; ++a) r(b, a) = m[t - 1][a] * spec.forward[t - 1](a, b) / m[t][b];
      r.row(b) /= r.row(b).sum();
    }
    out.reverse[t - 1] = r;
  }
  out.prior = m[spec.t_steps];
  out.validate();
  return out;
}

}  // namespace evo::lab

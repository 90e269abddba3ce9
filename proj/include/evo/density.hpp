#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "evo/rng.hpp"
#include "evo/schedules.hpp"
#include "evo/types.hpp"

namespace evo::lab {

// Isotropic Gaussian mixture with closed-form log-density and score.
// These densities stay in-family under the driftless forward SDE
// dz = sigma(t) dw, which is what the probability-flow machinery here
// integrates (component variance grows by V(t) = int_0^t sigma^2).
struct GaussianComponent {
  double weight;
  Vecd mean;
  double variance;  // isotropic
};

struct AnalyticDensity {
  std::vector<GaussianComponent> components;

  static AnalyticDensity gaussian(Vecd mean, double variance) {
    AnalyticDensity d;
    d.components.push_back({1.0, std::move(mean), variance});
    d.validate();
    return d;
  }
  static AnalyticDensity gaussian1d(double mean, double variance) {
    return gaussian(Vecd::Constant(1, mean), variance);
  }
  static AnalyticDensity mixture(std::vector<GaussianComponent> comps) {
    AnalyticDensity d;
    d.components = std::move(comps);
    d.validate();
    return d;
  }

  Index dim() const { return components.empty() ? 0 : components.front().mean.size(); }

  void validate() const {
    if (components.empty()) throw std::invalid_argument("AnalyticDensity: no components");
    double wsum = 0.0;
    Index d = components.front().mean.size();
    for (const auto& c : components) {
      if (c.weight <= 0.0) throw std::invalid_argument("AnalyticDensity: weights must be positive");
      if (c.variance <= 0.0) throw std::invalid_argument("AnalyticDensity: variances must be positive");
      if (c.mean.size() != d) throw std::invalid_argument("AnalyticDensity: inconsistent dimensions");
      wsum += c.weight;
    }
    if (std::abs(wsum - 1.0) > 1e-12)
      throw std::invalid_argument("AnalyticDensity: weights must sum to 1 within 1e-12");
  }
};

// Marginal of the density after driftless diffusion to time t.
inline AnalyticDensity diffused(const AnalyticDensity& density, double t,
                                const NoiseSchedule& sched) {
  double v = cum_sigma2(t, sched);
  AnalyticDensity out = density;
  for (auto& c : out.components) c.variance += v;
  return out;
}

inline double log_density(const AnalyticDensity& density, const Vecd& z) {
  const Index d = density.dim();
  if (z.size() != d) throw std::invalid_argument("log_density: dimension mismatch");
  double best = -std::numeric_limits<double>::infinity();
  std::vector<double> terms(density.components.size());
  for (std::size_t j = 0; j < density.components.size(); ++j) {
    const auto& c = density.components[j];
    double q = (z - c.mean).squaredNorm() / c.variance;
    terms[j] = std::log(c.weight) -
               0.5 * (static_cast<double>(d) * std::log(2.0 * std::numbers::pi * c.variance) + q);
    best = std::max(best, terms[j]);
  }
  double acc = 0.0;
  for (double term : terms) acc += std::exp(term - best);
  return best + std::log(acc);
}

// grad_z log p(z): responsibility-weighted component scores.
inline Vecd score(const AnalyticDensity& density, const Vecd& z) {
  const Index d = density.dim();
  if (z.size() != d) throw std::invalid_argument("score: dimension mismatch");
  std::size_t n = density.components.size();
  std::vector<double> logr(n);
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) {
    const auto& c = density.components[j];
    logr[j] = std::log(c.weight) -
              0.5 * (static_cast<double>(d) * std::log(c.variance) +
                     (z - c.mean).squaredNorm() / c.variance);
    best = std::max(best, logr[j]);
  }
  double norm = 0.0;
  for (double lr : logr) norm += std::exp(lr - best);
  Vecd g = Vecd::Zero(d);
  for (std::size_t j = 0; j < n; ++j) {
    const auto& c = density.components[j];
    double r = std::exp(logr[j] - best) / norm;
    g -= r / c.variance * (z - c.mean);
  }
  return g;
}

// Exact score of the diffused density at time t.
inline Vecd analytic_score(const AnalyticDensity& density, const Vecd& z, double t,
                           const NoiseSchedule& sched) {
  return score(diffused(density, t, sched), z);
}

inline Vecd sample(const AnalyticDensity& density, Rng& rng) {
  double u = rng.uniform();
  double acc = 0.0;
  const GaussianComponent* pick = &density.components.back();
  for (const auto& c : density.components) {
    acc += c.weight;
    if (u < acc) {
      pick = &c;
      break;
    }
  }
  return pick->mean + std::sqrt(pick->variance) * rng.normal_vec<double>(pick->mean.size());
}

}  // namespace evo::lab

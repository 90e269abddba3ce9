#pragma once

#include <functional>
#include <stdexcept>

#include "evo/density.hpp"
#include "evo/rng.hpp"
#include "evo/schedules.hpp"
#include "evo/types.hpp"

namespace evo::lab {

enum class OdeSolver { euler, rk4 };

// A simulated path. The grid is always stored ascending; reverse-time
// simulations fill states from the top down, so states.row(j) is the
// state at time grid[j] regardless of integration direction.
struct TrajectoryPath {
  Vecd grid;    // n+1 strictly increasing times
  Matd states;  // (n+1) x d
  bool stochastic = false;

  void validate() const {
    if (grid.size() < 2) throw std::invalid_argument("TrajectoryPath: need at least two grid points");
    if (states.rows() != grid.size())
      throw std::invalid_argument("TrajectoryPath: grid/state size mismatch");
    for (Index i = 1; i < grid.size(); ++i)
      if (!(grid[i] > grid[i - 1]))
        throw std::invalid_argument("TrajectoryPath: grid must be strictly increasing");
  }
};

using VectorField = std::function<Vecd(const Vecd&, double)>;

// One explicit ODE step from (z, t0) to t1 (either direction).
inline Vecd ode_advance(const VectorField& f, const Vecd& z, double t0, double t1,
                        OdeSolver solver) {
  double h = t1 - t0;
  if (solver == OdeSolver::euler) return z + h * f(z, t0);
  Vecd k1 = f(z, t0);
  Vecd k2 = f(z + 0.5 * h * k1, t0 + 0.5 * h);
  Vecd k3 = f(z + 0.5 * h * k2, t0 + 0.5 * h);
  Vecd k4 = f(z + h * k3, t1);
  return z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

// Integrate dz/dt = f(z, t) across the given strictly increasing grid.
// forward = false walks the grid from the top down (z0 is then the state
// at grid[n]); the returned path stores states at their grid times either
// way.
inline TrajectoryPath integrate_ode(const VectorField& f, const Vecd& z0, const Vecd& grid,
                                    OdeSolver solver, bool forward = true) {
  const Index n = grid.size() - 1;
  TrajectoryPath path;
  path.grid = grid;
  path.states.resize(n + 1, z0.size());
  path.stochastic = false;
  if (forward) {
    path.states.row(0) = z0;
    Vecd z = z0;
    for (Index k = 0; k < n; ++k) {
      z = ode_advance(f, z, grid[k], grid[k + 1], solver);
      path.states.row(k + 1) = z;
    }
  } else {
    path.states.row(n) = z0;
    Vecd z = z0;
    for (Index k = n; k > 0; --k) {
      z = ode_advance(f, z, grid[k], grid[k - 1], solver);
      path.states.row(k - 1) = z;
    }
  }
  path.validate();
  return path;
}

inline Vecd uniform_grid(double a, double b, Index n_steps) {
  Vecd g(n_steps + 1);
  for (Index k = 0; k <= n_steps; ++k)
    g[k] = a + (b - a) * static_cast<double>(k) / static_cast<double>(n_steps);
  return g;
}

// Euler-Maruyama path of the driftless forward SDE dz = sigma(t) dw on a
// uniform grid over [0, 1]. Deterministic given the seed.
inline TrajectoryPath simulate_forward_sde(const Vecd& z0, const NoiseSchedule& sched,
                                           Index n_steps, std::uint64_t rng_seed) {
  if (n_steps < 1) throw std::domain_error("simulate_forward_sde: need n_steps >= 1");
  Rng rng = Rng::stream(rng_seed, 0x5de0u);
  TrajectoryPath path;
  path.grid = uniform_grid(0.0, 1.0, n_steps);
  path.states.resize(n_steps + 1, z0.size());
  path.stochastic = true;
  path.states.row(0) = z0;
  Vecd z = z0;
  Vecd xi(z0.size());
  for (Index k = 0; k < n_steps; ++k) {
    double t = path.grid[k];
    double dt = path.grid[k + 1] - path.grid[k];
    double sig = std::sqrt(sigma2(t, sched));
    rng.fill_normal(xi);
    z += sig * std::sqrt(dt) * xi;
    path.states.row(k + 1) = z;
  }
  path.validate();
  return path;
}

// Reverse-time Euler-Maruyama from t = 1 down to t = 0:
// dz = -sigma^2(t) grad log p_t(z) dt + sigma(t) dw_bar, with the score
// of the analytically diffused density.
inline TrajectoryPath simulate_reverse_sde(const Vecd& z_end, const AnalyticDensity& density,
                                           const NoiseSchedule& sched, Index n_steps,
                                           std::uint64_t rng_seed) {
  if (n_steps < 1) throw std::domain_error("simulate_reverse_sde: need n_steps >= 1");
  Rng rng = Rng::stream(rng_seed, 0x4e5e0u);
  TrajectoryPath path;
  path.grid = uniform_grid(0.0, 1.0, n_steps);
  path.states.resize(n_steps + 1, z_end.size());
  path.stochastic = true;
  path.states.row(n_steps) = z_end;
  Vecd z = z_end;
  Vecd xi(z_end.size());
  for (Index k = n_steps; k > 0; --k) {
    double t = path.grid[k];
    double dt = path.grid[k] - path.grid[k - 1];
    double s2 = sigma2(t, sched);
    Vecd sc = analytic_score(density, z, t, sched);
    rng.fill_normal(xi);
    // stepping backward: z(t - dt) = z(t) + sigma^2 * score * dt + sigma sqrt(dt) xi
    z += s2 * sc * dt + std::sqrt(s2 * dt) * xi;
    path.states.row(k - 1) = z;
  }
  path.validate();
  return path;
}

// Deterministic probability-flow ODE integrated from t = 1 down to t = 0,
// dz/dt = -sigma^2(t) grad log p_t(z), optionally with the conventional
// 1/2 factor (the half-factor form is the one that transports the
// diffused marginal back to the data marginal).
inline TrajectoryPath integrate_prob_flow(const Vecd& z_end, const AnalyticDensity& density,
                                          const NoiseSchedule& sched, OdeSolver solver,
                                          Index n_steps, bool half_factor) {
  if (n_steps < 1) throw std::domain_error("integrate_prob_flow: need n_steps >= 1");
  double factor = half_factor ? 0.5 : 1.0;
  VectorField f = [&](const Vecd& z, double t) -> Vecd {
    return -factor * sigma2(t, sched) * analytic_score(density, z, t, sched);
  };
  return integrate_ode(f, z_end, uniform_grid(0.0, 1.0, n_steps), solver, /*forward=*/false);
}

}  // namespace evo::lab

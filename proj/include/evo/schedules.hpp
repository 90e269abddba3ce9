#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "evo/types.hpp"

namespace evo {

enum class ScheduleKind { cosine, linear_beta, constant_sigma };

inline const char* to_string(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::cosine: return "cosine";
    case ScheduleKind::linear_beta: return "linear-beta";
    case ScheduleKind::constant_sigma: return "constant-sigma";
  }
  return "?";
}

// Noise schedule. Every kind is defined through its marginal alpha_bar(t)
// with alpha_bar(0) = 1; the continuous-time view uses
// sigma^2(t) = -d/dt log alpha_bar(t), so the cumulative integral
// V(t) = int_0^t sigma^2 = -log alpha_bar(t) is available in closed form.
//
// The cosine kind has sigma^2 -> inf as t -> 1; continuous-time
// evaluations clamp t at 1 - clamp_eps (the marginal alpha_bar itself is
// never clamped, so its endpoints stay exact).
struct NoiseSchedule {
  ScheduleKind kind = ScheduleKind::cosine;
  int k_max = 20;           // refinement steps (shared with StepConfig)
  double beta_min = 0.0;    // linear-beta
  double beta_max = 2.0;    // linear-beta
  double sigma_const = 1.0; // constant-sigma
  double clamp_eps = 1e-4;  // cosine endpoint clamp

  static NoiseSchedule cosine(int k_max = 20) {
    NoiseSchedule s;
    s.kind = ScheduleKind::cosine;
    s.k_max = k_max;
    return s;
  }
  static NoiseSchedule linear_beta(double beta_min, double beta_max, int k_max = 20) {
    NoiseSchedule s;
    s.kind = ScheduleKind::linear_beta;
    s.beta_min = beta_min;
    s.beta_max = beta_max;
    s.k_max = k_max;
    return s;
  }
  static NoiseSchedule constant_sigma(double sigma, int k_max = 20) {
    NoiseSchedule s;
    s.kind = ScheduleKind::constant_sigma;
    s.sigma_const = sigma;
    s.k_max = k_max;
    return s;
  }

  void validate() const {
    if (k_max < 1) throw std::invalid_argument("NoiseSchedule: k_max must be >= 1");
    if (kind == ScheduleKind::linear_beta) {
      if (beta_min < 0.0 || beta_max < beta_min)
        throw std::invalid_argument("NoiseSchedule: need 0 <= beta_min <= beta_max");
    }
    if (kind == ScheduleKind::constant_sigma && sigma_const < 0.0)
      throw std::invalid_argument("NoiseSchedule: sigma_const must be >= 0");
    if (clamp_eps <= 0.0 || clamp_eps >= 1.0)
      throw std::invalid_argument("NoiseSchedule: clamp_eps must lie in (0,1)");
  }

  // sigma vanishes identically on a subinterval (no usable time
  // reparameterization).
  bool degenerate() const {
    switch (kind) {
      case ScheduleKind::cosine: return false;
      case ScheduleKind::linear_beta: return beta_max <= 0.0;
      case ScheduleKind::constant_sigma: return sigma_const <= 0.0;
    }
    return true;
  }
};

namespace detail {
inline void check_unit_time(double t, const char* who) {
  if (!(t >= 0.0 && t <= 1.0))
    throw std::domain_error(std::string(who) + ": t must lie in [0,1], got " + std::to_string(t));
}
}  // namespace detail

// Marginal signal level alpha_bar(t).
// Cosine uses the half-angle form (1 + cos(pi t)) / 2 so that
// alpha_bar(0) == 1 and alpha_bar(1) == 0 hold bitwise.
inline double alpha_bar(double t, const NoiseSchedule& sched) {
  detail::check_unit_time(t, "alpha_bar");
  switch (sched.kind) {
    case ScheduleKind::cosine:
      return 0.5 * (1.0 + std::cos(std::numbers::pi * t));
    case ScheduleKind::linear_beta:
      return std::exp(-(sched.beta_min * t + 0.5 * (sched.beta_max - sched.beta_min) * t * t));
    case ScheduleKind::constant_sigma:
      return std::exp(-sched.sigma_const * sched.sigma_const * t);
  }
  throw std::logic_error("alpha_bar: unknown schedule kind");
}

// Continuous-time squared diffusion coefficient sigma^2(t) = -d/dt log alpha_bar.
inline double sigma2(double t, const NoiseSchedule& sched) {
  detail::check_unit_time(t, "sigma2");
  switch (sched.kind) {
    case ScheduleKind::cosine: {
      double tc = std::min(t, 1.0 - sched.clamp_eps);
      return std::numbers::pi * std::tan(0.5 * std::numbers::pi * tc);
    }
    case ScheduleKind::linear_beta:
      return sched.beta_min + (sched.beta_max - sched.beta_min) * t;
    case ScheduleKind::constant_sigma:
      return sched.sigma_const * sched.sigma_const;
  }
  throw std::logic_error("sigma2: unknown schedule kind");
}

// V(t) = int_0^t sigma^2(tau) dtau, closed form per kind.
inline double cum_sigma2(double t, const NoiseSchedule& sched) {
  detail::check_unit_time(t, "cum_sigma2");
  switch (sched.kind) {
    case ScheduleKind::cosine: {
      double tc = 1.0 - sched.clamp_eps;
      double th = std::min(t, tc);
      double v = -2.0 * std::log(std::cos(0.5 * std::numbers::pi * th));
      if (t > tc) v += sigma2(tc, sched) * (t - tc);
      return v;
    }
    case ScheduleKind::linear_beta:
      return sched.beta_min * t + 0.5 * (sched.beta_max - sched.beta_min) * t * t;
    case ScheduleKind::constant_sigma:
      return sched.sigma_const * sched.sigma_const * t;
  }
  throw std::logic_error("cum_sigma2: unknown schedule kind");
}

// Derivatives of the perturbation scales sqrt(alpha_bar) and
// sqrt(1 - alpha_bar) with respect to t; closed forms so the endpoints
// stay finite (for the cosine kind the scales are cos/sin of pi t / 2).
struct PerturbScaleGrads {
  double d_sqrt_ab;
  double d_sqrt_1mab;
};

inline PerturbScaleGrads perturb_scale_grads(double t, const NoiseSchedule& sched) {
  detail::check_unit_time(t, "perturb_scale_grads");
  if (sched.kind == ScheduleKind::cosine) {
    double half_pi = 0.5 * std::numbers::pi;
    return {-half_pi * std::sin(half_pi * t), half_pi * std::cos(half_pi * t)};
  }
  double ab = alpha_bar(t, sched);
  double beta = sigma2(t, sched);  // -d/dt log alpha_bar
  double dab = -beta * ab;
  double one_m = std::max(1.0 - ab, 1e-12);
  return {dab / (2.0 * std::sqrt(ab)), -dab / (2.0 * std::sqrt(one_m))};
}

struct Reparam {
  double s;  // normalized cumulative sigma^2, in [0,1]
  double c;  // normalizer C = int_0^1 sigma^2
};

// Time reparameterization s(t) = V(t) / V(1). Closed form for all
// shipped kinds; the constant kind returns t itself so the identity
// reparameterization is exact.
inline Reparam reparam_s(double t, const NoiseSchedule& sched) {
  detail::check_unit_time(t, "reparam_s");
  if (sched.degenerate())
    throw std::domain_error("reparam_s: degenerate schedule (sigma vanishes on a subinterval)");
  double c = cum_sigma2(1.0, sched);
  if (sched.kind == ScheduleKind::constant_sigma) return {t, c};
  return {cum_sigma2(t, sched) / c, c};
}

// Inverse map t(s) of the reparameterization; closed form per kind.
inline double time_of_s(double s, const NoiseSchedule& sched) {
  detail::check_unit_time(s, "time_of_s");
  if (sched.degenerate())
    throw std::domain_error("time_of_s: degenerate schedule");
  switch (sched.kind) {
    case ScheduleKind::constant_sigma:
      return s;
    case ScheduleKind::linear_beta: {
      double c = cum_sigma2(1.0, sched);
      double v = s * c;
      double d = sched.beta_max - sched.beta_min;
      double t;
      if (d == 0.0) {
        t = v / sched.beta_min;
      } else {
        // beta_min t + d t^2 / 2 = v
        t = (-sched.beta_min + std::sqrt(sched.beta_min * sched.beta_min + 2.0 * d * v)) / d;
      }
      return std::clamp(t, 0.0, 1.0);
    }
    case ScheduleKind::cosine: {
      double c = cum_sigma2(1.0, sched);
      double v = s * c;
      double tc = 1.0 - sched.clamp_eps;
      double vc = cum_sigma2(tc, sched);
      double t;
      if (v <= vc) {
        t = (2.0 / std::numbers::pi) * std::acos(std::exp(-0.5 * v));
      } else {
        t = tc + (v - vc) / sigma2(tc, sched);
      }
      return std::clamp(t, 0.0, 1.0);
    }
  }
  throw std::logic_error("time_of_s: unknown schedule kind");
}

namespace detail {

// 15-point Gauss-Legendre rule on [-1, 1].
inline double gauss15(const std::function<double(double)>& f, double a, double b) {
  static const double xs[8] = {
      0.0000000000000000, 0.2011940939974345, 0.3941513470775634, 0.5709721726085388,
      0.7244177313601700, 0.8482065834104272, 0.9372733924007059, 0.9879925180204854};
  static const double ws[8] = {
      0.2025782419255613, 0.1984314853271116, 0.1861610000155622, 0.1662692058169939,
      0.1395706779261543, 0.1071592204671719, 0.0703660474881081, 0.0307532419961173};
  double mid = 0.5 * (a + b), half = 0.5 * (b - a);
  double acc = ws[0] * f(mid);
  for (int i = 1; i < 8; ++i)
    acc += ws[i] * (f(mid + half * xs[i]) + f(mid - half * xs[i]));
  return acc * half;
}

inline double adaptive_gauss(const std::function<double(double)>& f, double a, double b,
                             double whole, double abs_tol, int depth) {
  double mid = 0.5 * (a + b);
  double left = gauss15(f, a, mid);
  double right = gauss15(f, mid, b);
  // The acceptance floor keeps the subdivision from chasing tolerances
  // below double roundoff on steep integrands.
  double floor_tol = 1e-15 * std::abs(left + right);
  if (std::abs(left + right - whole) < std::max(abs_tol, floor_tol) || depth >= 24)
    return left + right;
  return adaptive_gauss(f, a, mid, left, 0.5 * abs_tol, depth + 1) +
         adaptive_gauss(f, mid, b, right, 0.5 * abs_tol, depth + 1);
}

}  // namespace detail

// Composite Gauss-Legendre with adaptive subdivision, absolute tolerance
// abs_tol. Exposed for the general integrand path and as the oracle the
// closed forms are tested against.
inline double integrate_adaptive(const std::function<double(double)>& f, double a, double b,
                                 double abs_tol = 1e-10) {
  double whole = detail::gauss15(f, a, b);
  return detail::adaptive_gauss(f, a, b, whole, abs_tol, 0);
}

// Quadrature route for s(t): integrates sigma^2 numerically instead of
// using the closed form.
inline Reparam reparam_s_quadrature(double t, const NoiseSchedule& sched,
                                    double abs_tol = 1e-10) {
  detail::check_unit_time(t, "reparam_s_quadrature");
  if (sched.degenerate())
    throw std::domain_error("reparam_s_quadrature: degenerate schedule");
  auto f = [&](double tau) { return sigma2(tau, sched); };
  double c = integrate_adaptive(f, 0.0, 1.0, abs_tol);
  if (t == 1.0) return {1.0, c};
  double v = integrate_adaptive(f, 0.0, t, abs_tol);
  return {v / c, c};
}

// Forward perturbation z_t = sqrt(alpha_bar) z0 + sqrt(1 - alpha_bar) eps.
// Deterministic given eps; works for any pair of same-shaped Eigen dense
// expressions.
template <class DerivedZ, class DerivedE>
auto perturb(const Eigen::MatrixBase<DerivedZ>& z0, double t,
             const Eigen::MatrixBase<DerivedE>& eps, const NoiseSchedule& sched) {
  detail::check_unit_time(t, "perturb");
  if (z0.rows() != eps.rows() || z0.cols() != eps.cols())
    throw std::invalid_argument("perturb: z0 and eps shapes differ");
  using S = typename DerivedZ::Scalar;
  double ab = alpha_bar(t, sched);
  S sa = static_cast<S>(std::sqrt(ab));
  S sn = static_cast<S>(std::sqrt(1.0 - ab));
  return (sa * z0 + sn * eps).eval();
}

struct ForwardStep {
  double sqrt_alpha;  // mean multiplier of q(z_t | z_{t-1})
  double variance;    // 1 - alpha_t
};

// Per-step Gaussian transition parameters on the uniform grid k/T whose
// per-step alpha products reproduce the marginal alpha_bar.
inline std::vector<ForwardStep> discrete_forward_params(int t_steps, const NoiseSchedule& sched) {
  if (t_steps < 1) throw std::domain_error("discrete_forward_params: need T >= 1");
  std::vector<ForwardStep> out;
  out.reserve(t_steps);
  double prev = 1.0;  // alpha_bar(0)
  for (int k = 1; k <= t_steps; ++k) {
    double cur = alpha_bar(static_cast<double>(k) / t_steps, sched);
    double alpha = cur / prev;
    out.push_back({std::sqrt(alpha), 1.0 - alpha});
    prev = cur;
  }
  return out;
}

}  // namespace evo

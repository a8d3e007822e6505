#pragma once

// Successive concave approximation for WSEE power allocation.
//
// At each outer iteration the objective is replaced by a separable concave
// surrogate around the current point, the surrogate is maximized over the box
// [0, Pm]^L, and the iterate moves toward that maximizer with an Armijo step.
// Power budgets are swept in ascending order, each solve warm-started from the
// previous solution.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "usca/metrics.hpp"
#include "usca/oracle.hpp"
#include "usca/types.hpp"

namespace usca::sca {

struct SurrogateCoeffs {
  std::vector<double> c1, c2, c3;
  std::vector<double> gain;          // H_ii
  std::vector<double> interference;  // 1 + sum_{j != i} H_ij p_j^(t)
  PowerVector expansion_point;

  std::size_t size() const { return c1.size(); }

  oracle::CoordinateSurrogate coordinate(std::size_t i) const { return {c1[i], c2[i], gain[i], interference[i]}; }

  double value(std::span<const double> p) const {
    double acc = 0;
    for (std::size_t i = 0; i < size(); ++i) acc += coordinate(i).value(p[i]) + c3[i];
    return acc;
  }

  std::vector<double> gradient(std::span<const double> p) const {
    std::vector<double> g(size());
    for (std::size_t i = 0; i < size(); ++i) g[i] = coordinate(i).derivative(p[i]);
    return g;
  }
};

/// Builds a concave surrogate matching the objective's value and gradient at p_t.
inline SurrogateCoeffs surrogate_coeffs(std::span<const double> p_t, const CsiMatrix& H, const SystemConfig& cfg) {
  const std::size_t L = H.users();
  if (p_t.size() != L) throw std::invalid_argument("surrogate_coeffs: dimension mismatch");
  const auto grad = metrics::wsee_grad(p_t, H, cfg);
  SurrogateCoeffs s;
  s.c1.resize(L);
  s.c2.resize(L);
  s.c3.resize(L);
  s.gain.resize(L);
  s.interference.resize(L);
  s.expansion_point.assign(p_t.begin(), p_t.end());
  for (std::size_t i = 0; i < L; ++i) {
    double in = 1.0;
    for (std::size_t j = 0; j < L; ++j)
      if (j != i) in += H(i, j) * p_t[j];
    s.gain[i] = H(i, i);
    s.interference[i] = in;
    const double denom = cfg.amp_inefficiency * p_t[i] + cfg.static_power_w;
    s.c1[i] = cfg.weight(i) / denom;
    const double own_rate_slope = H(i, i) / (std::numbers::ln2 * (in + H(i, i) * p_t[i]));
    s.c2[i] = grad[i] - s.c1[i] * own_rate_slope;
    const double r = std::log2(1.0 + H(i, i) * p_t[i] / in);
    s.c3[i] = cfg.weight(i) * r / denom - s.c1[i] * r - s.c2[i] * p_t[i];
  }
  return s;
}

enum class InnerSolver {
  Newton,    // per-coordinate step = inverse curvature
  Adadelta,  // per-coordinate Adadelta accumulators (decay 0.95, eps 1e-6)
};

struct Limits {
  int inner = 500;
  int outer = 700;
  double inner_tol = 1e-9;  // projected-gradient norm
  double outer_tol = 1e-8;  // infinity norm of the iterate change
  InnerSolver solver = InnerSolver::Newton;
};

inline constexpr Limits kFullLimits{500, 700};
inline constexpr Limits kTruncatedLimits{5, 7};
inline constexpr Limits kAdadeltaLimits{500, 700, 1e-9, 1e-8, InnerSolver::Adadelta};

struct SubproblemResult {
  PowerVector p;
  int iterations = 0;
  bool converged = false;
};

namespace detail {

inline SubproblemResult solve_adadelta(const SurrogateCoeffs& s, double pm, const Limits& limits) {
  constexpr double kDecay = 0.95;
  constexpr double kEps = 1e-6;
  const std::size_t L = s.size();
  SubproblemResult out;
  out.p.resize(L);
  for (std::size_t i = 0; i < L; ++i) out.p[i] = std::clamp(s.expansion_point.empty() ? pm : s.expansion_point[i], 0.0, pm);
  std::vector<double> acc_g(L, 0.0), acc_dx(L, 0.0);
  PowerVector best = out.p;
  double best_value = s.value(best);
  for (int it = 0; it < limits.inner; ++it) {
    double pg_norm2 = 0;
    for (std::size_t i = 0; i < L; ++i) {
      const double p = out.p[i];
      const double g = s.coordinate(i).derivative(p);
      if (!((p <= 0 && g < 0) || (p >= pm && g > 0))) pg_norm2 += g * g;
      acc_g[i] = kDecay * acc_g[i] + (1 - kDecay) * g * g;
      const double step = std::sqrt(acc_dx[i] + kEps) / std::sqrt(acc_g[i] + kEps) * g;
      const double next = std::clamp(p + step, 0.0, pm);
      acc_dx[i] = kDecay * acc_dx[i] + (1 - kDecay) * (next - p) * (next - p);
      out.p[i] = next;
    }
    out.iterations = it + 1;
    const double v = s.value(out.p);
    if (v >= best_value) {
      best_value = v;
      best = out.p;
    }
    if (std::sqrt(pg_norm2) < limits.inner_tol) {
      out.converged = true;
      break;
    }
  }
  if (!out.converged) out.p = best;
  return out;
}

}  // namespace detail

/// Maximizes the separable surrogate over [0, Pm]^L by projected gradient
/// ascent. With the default solver each coordinate's step is the inverse of
/// its local curvature, so the ascent behaves like a projected Newton
/// iteration per user.
inline SubproblemResult solve_subproblem(const SurrogateCoeffs& s, double pm, const Limits& limits = {}) {
  if (limits.solver == InnerSolver::Adadelta) return detail::solve_adadelta(s, pm, limits);
  const std::size_t L = s.size();
  SubproblemResult out;
  out.p.resize(L);
  for (std::size_t i = 0; i < L; ++i) out.p[i] = std::clamp(s.expansion_point.empty() ? pm : s.expansion_point[i], 0.0, pm);
  PowerVector best = out.p;
  double best_value = s.value(best);

  for (int it = 0; it < limits.inner; ++it) {
    double pg_norm2 = 0;
    bool moved = false;
    for (std::size_t i = 0; i < L; ++i) {
      const auto c = s.coordinate(i);
      const double p = out.p[i];
      const double g = c.derivative(p);
      const bool blocked = (p <= 0 && g < 0) || (p >= pm && g > 0);
      if (!blocked) pg_norm2 += g * g;
      const double u = c.interference + c.gain * p;
      const double curvature = c.c1 * c.gain * c.gain / (std::numbers::ln2 * u * u);
      double next;
      if (curvature > 0 && std::isfinite(curvature))
        next = std::clamp(p + g / curvature, 0.0, pm);
      else
        next = g > 0 ? pm : (g < 0 ? 0.0 : p);
      moved = moved || next != p;
      out.p[i] = next;
    }
    out.iterations = it + 1;
    const double v = s.value(out.p);
    if (v >= best_value) {
      best_value = v;
      best = out.p;
    }
    if (std::sqrt(pg_norm2) < limits.inner_tol || !moved) {
      out.converged = true;
      break;
    }
  }
  if (!out.converged) out.p = best;
  return out;
}

struct ArmijoParams {
  double initial = 1.0;
  double shrink = 0.5;
  double sufficient = 0.01;
  int max_trials = 31;  // k = 0..30
};

/// Largest step initial*shrink^k satisfying the sufficient-increase condition;
/// the smallest trial if none does.
inline double armijo_step(std::span<const double> p_prev, std::span<const double> target, const CsiMatrix& H,
                          const SystemConfig& cfg, const ArmijoParams& ap = {}) {
  const std::size_t L = p_prev.size();
  const double f0 = metrics::wsee_total(p_prev, H, cfg);
  const auto g = metrics::wsee_grad(p_prev, H, cfg);
  double slope = 0;
  for (std::size_t i = 0; i < L; ++i) slope += g[i] * (target[i] - p_prev[i]);
  PowerVector trial(L);
  double gamma = ap.initial;
  for (int k = 0; k < ap.max_trials; ++k) {
    for (std::size_t i = 0; i < L; ++i) trial[i] = p_prev[i] + gamma * (target[i] - p_prev[i]);
    if (metrics::wsee_total(trial, H, cfg) >= f0 + ap.sufficient * gamma * slope) return gamma;
    if (k + 1 < ap.max_trials) gamma *= ap.shrink;
  }
  return gamma;
}

struct ScaTrace {
  std::vector<PowerVector> iterates;       // p^(0), p^(1), ...
  std::vector<double> objective_values;    // WSEE of each iterate
  std::vector<PowerVector> targets;        // surrogate maximizers, one per outer iteration
  std::vector<double> step_sizes;          // accepted gamma per outer iteration
  std::vector<int> inner_iteration_counts;
};

struct ScaResult {
  std::vector<PowerVector> solutions;  // one per budget in the schedule
  std::vector<ScaTrace> traces;
};

/// Runs SCA at a single budget from a given start point.
inline PowerVector sca_single(const CsiMatrix& H, const SystemConfig& cfg, double pm, std::span<const double> start,
                              const Limits& limits, ScaTrace* trace = nullptr) {
  const std::size_t L = H.users();
  PowerVector p(L);
  for (std::size_t i = 0; i < L; ++i) p[i] = std::clamp(start[i], 0.0, pm);
  double f = metrics::wsee_total(p, H, cfg);
  if (trace) {
    trace->iterates.push_back(p);
    trace->objective_values.push_back(f);
  }
  PowerVector next(L);
  for (int t = 0; t < limits.outer; ++t) {
    const auto coeffs = surrogate_coeffs(p, H, cfg);
    const auto sub = solve_subproblem(coeffs, pm, limits);
    double gamma = armijo_step(p, sub.p, H, cfg);
    double step_inf = 0;
    for (std::size_t i = 0; i < L; ++i) {
      next[i] = std::clamp(p[i] + gamma * (sub.p[i] - p[i]), 0.0, pm);
      step_inf = std::max(step_inf, std::abs(next[i] - p[i]));
    }
    double f_next = metrics::wsee_total(next, H, cfg);
    if (f_next < f) {
      // every trial failed and the fallback step would descend: stay put
      gamma = 0;
      next = p;
      f_next = f;
      step_inf = 0;
    }
    p = next;
    f = f_next;
    if (trace) {
      trace->iterates.push_back(p);
      trace->objective_values.push_back(f);
      trace->targets.push_back(sub.p);
      trace->step_sizes.push_back(gamma);
      trace->inner_iteration_counts.push_back(sub.iterations);
    }
    if (step_inf < limits.outer_tol) break;
  }
  return p;
}

/// Sweeps an ascending schedule of budgets (dBW), warm-starting each solve
/// from the previous solution. The first solve starts at full power.
inline ScaResult sca(const CsiMatrix& H, const SystemConfig& cfg, std::span<const double> pm_schedule_dbw,
                     const Limits& limits = kFullLimits, bool keep_traces = true) {
  for (std::size_t k = 1; k < pm_schedule_dbw.size(); ++k)
    if (!(pm_schedule_dbw[k] > pm_schedule_dbw[k - 1]))
      throw std::invalid_argument("sca: power schedule must be strictly increasing");
  const std::size_t L = H.users();
  ScaResult out;
  PowerVector start;
  for (std::size_t k = 0; k < pm_schedule_dbw.size(); ++k) {
    const double pm = dbw_to_watts(pm_schedule_dbw[k]);
    if (k == 0) start.assign(L, pm);
    ScaTrace trace;
    PowerVector p = sca_single(H, cfg, pm, start, limits, keep_traces ? &trace : nullptr);
    start = p;
    out.solutions.push_back(std::move(p));
    if (keep_traces) out.traces.push_back(std::move(trace));
  }
  return out;
}

inline ScaResult tr_sca(const CsiMatrix& H, const SystemConfig& cfg, std::span<const double> pm_schedule_dbw,
                        bool keep_traces = true) {
  return sca(H, cfg, pm_schedule_dbw, kTruncatedLimits, keep_traces);
}

}  // namespace usca::sca

#pragma once

// Brute-force and one-dimensional reference solvers. These are independent of
// the SCA code path and are used to check it.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <future>
#include <numbers>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "usca/metrics.hpp"
#include "usca/types.hpp"

namespace usca::oracle {

struct GridSpec {
  int points_per_dim = 101;  // includes both endpoints 0 and Pm
  double budget = 1e8;       // max number of objective evaluations
  unsigned workers = 0;      // 0 = hardware concurrency
};

class BudgetExceeded : public std::runtime_error {
 public:
  BudgetExceeded(double required, double budget)
      : std::runtime_error("grid search needs " + std::to_string(required) + " evaluations, budget is " +
                           std::to_string(budget)),
        required_(required) {}
  double required() const { return required_; }

 private:
  double required_;
};

struct GridResult {
  PowerVector p;
  double value = 0;
};

/// Exhaustive maximization of WSEE over a uniform grid on [0, Pm]^L. Ties go
/// to the lexicographically smallest power vector.
inline GridResult grid_search_wsee(const CsiMatrix& H, double pm, const SystemConfig& cfg, const GridSpec& grid) {
  if (grid.points_per_dim < 2) throw std::invalid_argument("grid needs at least 2 points per dimension");
  const std::size_t L = H.users();
  const double required = std::pow(static_cast<double>(grid.points_per_dim), static_cast<double>(L));
  if (required > grid.budget) throw BudgetExceeded(required, grid.budget);
  const int n = grid.points_per_dim;
  auto level = [&](int k) { return k == n - 1 ? pm : pm * static_cast<double>(k) / (n - 1); };

  // Each chunk owns a contiguous range of the first coordinate, so chunk
  // results are already in lexicographic order.
  auto run_chunk = [&](int first_lo, int first_hi) {
    GridResult best;
    best.value = -1.0;
    std::vector<int> idx(L, 0);
    PowerVector p(L);
    for (int f = first_lo; f < first_hi; ++f) {
      std::fill(idx.begin(), idx.end(), 0);
      idx[0] = f;
      while (true) {
        for (std::size_t d = 0; d < L; ++d) p[d] = level(idx[d]);
        const double v = metrics::wsee_total(p, H, cfg);
        if (v > best.value) {
          best.value = v;
          best.p = p;
        }
        std::size_t d = L - 1;
        while (d > 0 && ++idx[d] == n) idx[d--] = 0;
        if (d == 0) break;
      }
    }
    return best;
  };

  unsigned workers = grid.workers ? grid.workers : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min<unsigned>(workers, static_cast<unsigned>(n));
  std::vector<GridResult> partial;
  if (workers <= 1) {
    partial.push_back(run_chunk(0, n));
  } else {
    std::vector<std::future<GridResult>> futures;
    for (unsigned w = 0; w < workers; ++w) {
      const int lo = static_cast<int>(static_cast<long>(n) * w / workers);
      const int hi = static_cast<int>(static_cast<long>(n) * (w + 1) / workers);
      futures.push_back(std::async(std::launch::async, run_chunk, lo, hi));
    }
    for (auto& f : futures) partial.push_back(f.get());
  }
  GridResult best = partial.front();
  for (std::size_t k = 1; k < partial.size(); ++k)
    if (partial[k].value > best.value) best = partial[k];
  return best;
}

struct ScalarOptimum {
  double p = 0;
  double value = 0;
};

/// Maximizes log2(1 + alpha p) / (mu p + Pc) on [0, Pm] by golden-section search.
inline ScalarOptimum golden_section_ee(double alpha, const SystemConfig& cfg, double pm) {
  if (!(alpha > 0)) throw std::invalid_argument("golden_section_ee: alpha must be positive");
  const double mu = cfg.amp_inefficiency;
  const double pc = cfg.static_power_w;
  auto f = [&](double p) { return std::log2(1.0 + alpha * p) / (mu * p + pc); };
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = 0, b = pm;
  double x1 = b - inv_phi * (b - a), x2 = a + inv_phi * (b - a);
  double f1 = f(x1), f2 = f(x2);
  while (b - a > 1e-10) {
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + inv_phi * (b - a);
      f2 = f(x2);
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - inv_phi * (b - a);
      f1 = f(x1);
    }
  }
  ScalarOptimum best{0.5 * (a + b), f(0.5 * (a + b))};
  for (double edge : {0.0, pm})
    if (f(edge) > best.value) best = {edge, f(edge)};
  return best;
}

/// One coordinate of the separable surrogate: c1 log2(1 + gain p / interference) + c2 p.
struct CoordinateSurrogate {
  double c1 = 0;
  double c2 = 0;
  double gain = 0;          // H_ii
  double interference = 1;  // 1 + sum_{j != i} H_ij p_j at the expansion point

  double value(double p) const { return c1 * std::log2(1.0 + gain * p / interference) + c2 * p; }
  double derivative(double p) const {
    return c1 * gain / (std::numbers::ln2 * (interference + gain * p)) + c2;
  }
};

/// Maximizer of a concave coordinate surrogate on [0, Pm] by bisection on its
/// derivative.
inline double bisect_coordinate(const CoordinateSurrogate& s, double pm) {
  if (!(s.c1 > 0)) throw std::invalid_argument("bisect_coordinate: c1 must be positive");
  if (s.derivative(0.0) <= 0) return 0.0;
  if (s.derivative(pm) >= 0) return pm;
  double lo = 0, hi = pm;
  for (int it = 0; it < 400 && hi - lo > 1e-12; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    (s.derivative(mid) > 0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace usca::oracle

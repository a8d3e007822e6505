#pragma once

// Rate, per-user energy efficiency and the WSEE objective with its gradient.
// Rates are in bits/s/Hz (bandwidth absorbed), log base 2.

#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "usca/types.hpp"

namespace usca::metrics {

struct WseeValue {
  double total = 0;
  std::vector<double> per_user;
};

namespace detail {
inline void check_dims(std::span<const double> p, const CsiMatrix& H) {
  if (p.size() != H.users()) throw std::invalid_argument("power vector length does not match CSI matrix");
}

/// 1 + sum_{j != i} H_ij p_j
inline double interference_plus_noise(std::size_t i, std::span<const double> p, const CsiMatrix& H) {
  double acc = 1.0;
  for (std::size_t j = 0; j < p.size(); ++j)
    if (j != i) acc += H(i, j) * p[j];
  return acc;
}
}  // namespace detail

inline double rate(std::size_t i, std::span<const double> p, const CsiMatrix& H) {
  detail::check_dims(p, H);
  const double in = detail::interference_plus_noise(i, p, H);
  return std::log2(1.0 + H(i, i) * p[i] / in);
}

inline double ee(std::size_t i, std::span<const double> p, const CsiMatrix& H, const SystemConfig& cfg) {
  return rate(i, p, H) / (cfg.amp_inefficiency * p[i] + cfg.static_power_w);
}

inline WseeValue wsee(std::span<const double> p, const CsiMatrix& H, const SystemConfig& cfg) {
  detail::check_dims(p, H);
  WseeValue out;
  out.per_user.resize(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    out.per_user[i] = ee(i, p, H, cfg);
    out.total += cfg.weight(i) * out.per_user[i];
  }
  return out;
}

inline double wsee_total(std::span<const double> p, const CsiMatrix& H, const SystemConfig& cfg) {
  return wsee(p, H, cfg).total;
}

/// Exact partial derivatives of wsee_total with respect to each p_j.
inline std::vector<double> wsee_grad(std::span<const double> p, const CsiMatrix& H, const SystemConfig& cfg) {
  detail::check_dims(p, H);
  const std::size_t L = p.size();
  const double mu = cfg.amp_inefficiency;
  const double pc = cfg.static_power_w;
  std::vector<double> g(L, 0.0);
  for (std::size_t i = 0; i < L; ++i) {
    const double w = cfg.weight(i);
    if (w == 0) continue;
    const double in = detail::interference_plus_noise(i, p, H);
    const double total = in + H(i, i) * p[i];
    const double denom = mu * p[i] + pc;
    const double r = std::log2(total / in);
    // own power: rate gain minus amplifier cost
    g[i] += w * (H(i, i) / (total * std::numbers::ln2) / denom - r * mu / (denom * denom));
    // interference from every other user
    const double cross = -H(i, i) * p[i] / (std::numbers::ln2 * total * in) / denom;
    for (std::size_t j = 0; j < L; ++j)
      if (j != i) g[j] += w * cross * H(i, j);
  }
  return g;
}

}  // namespace usca::metrics

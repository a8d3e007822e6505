#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace usca {

/// Transmit powers in Watts, one entry per user.
using PowerVector = std::vector<double>;

inline double dbw_to_watts(double dbw) { return std::pow(10.0, dbw / 10.0); }
inline double watts_to_dbw(double w) { return 10.0 * std::log10(w); }

/// Physical and problem constants shared by every module.
struct SystemConfig {
  int num_bs = 4;                // M, must be a perfect square
  int num_users = 8;             // L
  int antennas_per_bs = 1;       // n_R
  double bandwidth_hz = 180e3;   // B
  double noise_figure_db = 3.0;  // F
  double noise_density_dbm_hz = -174.0;  // N0
  double static_power_w = 1.0;   // Pc
  double amp_inefficiency = 4.0; // mu
  std::vector<double> weights;   // w; empty means all ones
  double cell_side_km = 1.0;
  std::uint64_t rng_seed = 0;

  double weight(std::size_t i) const { return weights.empty() ? 1.0 : weights.at(i); }

  void validate() const {
    if (num_bs < 1) throw std::invalid_argument("num_bs must be positive");
    const int m = static_cast<int>(std::lround(std::sqrt(static_cast<double>(num_bs))));
    if (m * m != num_bs)
      throw std::invalid_argument("num_bs must be a perfect square, got " + std::to_string(num_bs));
    if (num_users < 1) throw std::invalid_argument("num_users must be >= 1");
    if (antennas_per_bs < 1) throw std::invalid_argument("antennas_per_bs must be >= 1");
    if (!(bandwidth_hz > 0)) throw std::invalid_argument("bandwidth must be positive");
    if (!(static_power_w > 0)) throw std::invalid_argument("static power must be positive");
    if (!(amp_inefficiency > 0)) throw std::invalid_argument("amplifier inefficiency must be positive");
    if (!(cell_side_km > 0)) throw std::invalid_argument("cell side must be positive");
    if (!weights.empty()) {
      if (weights.size() != static_cast<std::size_t>(num_users))
        throw std::invalid_argument("weights length must equal num_users");
      bool any_positive = false;
      for (double w : weights) {
        if (!(w >= 0) || !std::isfinite(w)) throw std::invalid_argument("weights must be finite and >= 0");
        any_positive = any_positive || w > 0;
      }
      if (!any_positive) throw std::invalid_argument("at least one weight must be positive");
    }
  }
};

/// L x L channel matrix: direct gains on the diagonal, normalized
/// interference coefficients off the diagonal. Row-major, linear scale.
class CsiMatrix {
 public:
  CsiMatrix() = default;
  explicit CsiMatrix(std::size_t users) : n_(users), h_(users * users, 0.0) {}
  CsiMatrix(std::size_t users, std::vector<double> entries) : n_(users), h_(std::move(entries)) {
    if (h_.size() != n_ * n_) throw std::invalid_argument("CsiMatrix: entry count does not match L*L");
  }

  std::size_t users() const { return n_; }
  double operator()(std::size_t i, std::size_t j) const { return h_[i * n_ + j]; }
  double& operator()(std::size_t i, std::size_t j) { return h_[i * n_ + j]; }
  std::span<const double> data() const { return h_; }
  std::span<double> data() { return h_; }

  /// Throws unless every entry is strictly positive and finite.
  void validate() const {
    if (n_ == 0) throw std::invalid_argument("CsiMatrix: empty");
    for (double v : h_)
      if (!(v > 0) || !std::isfinite(v)) throw std::invalid_argument("CsiMatrix: entries must be positive and finite");
  }

  /// Returns P H P^T for the permutation mapping old index perm[k] to new index k.
  CsiMatrix permuted(std::span<const std::size_t> perm) const {
    CsiMatrix out(n_);
    for (std::size_t a = 0; a < n_; ++a)
      for (std::size_t b = 0; b < n_; ++b) out(a, b) = (*this)(perm[a], perm[b]);
    return out;
  }

  bool operator==(const CsiMatrix&) const = default;

 private:
  std::size_t n_ = 0;
  std::vector<double> h_;
};

/// Applies the same relabeling to a per-user vector: out[k] = v[perm[k]].
template <typename T>
std::vector<T> permute_vector(std::span<const T> v, std::span<const std::size_t> perm) {
  std::vector<T> out(v.size());
  for (std::size_t k = 0; k < v.size(); ++k) out[k] = v[perm[k]];
  return out;
}

}  // namespace usca

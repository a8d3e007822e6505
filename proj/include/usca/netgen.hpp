#pragma once

// Network topologies, path loss, fast fading and the multi-user CSI matrix.

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "usca/types.hpp"

namespace usca::netgen {

using Rng = std::mt19937_64;

/// Smallest BS-user distance used in path-loss evaluation.
inline constexpr double kMinDistanceKm = 0.010;
/// Floor applied to every CSI entry so that row sums stay positive.
inline constexpr double kCsiFloor = 1e-30;

struct Point {
  double x = 0;
  double y = 0;
};

inline double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

struct Topology {
  std::vector<Point> bs_positions;
  std::vector<Point> user_positions;
  std::vector<int> association;  // user -> serving BS
};

enum class PathLossVariant { WbsSurrogate, HataUrban, HataSuburban };

struct PathLossModel {
  PathLossVariant variant = PathLossVariant::WbsSurrogate;
  std::optional<double> shadowing_db;  // log-normal shadowing std, dB
  double carrier_mhz = 1900.0;
  double bs_height_m = 30.0;
  double mobile_height_m = 1.5;
  bool fading = true;  // unit-variance complex Gaussian fast fading

  void validate() const {
    if (shadowing_db && !(*shadowing_db >= 0)) throw std::invalid_argument("shadowing std must be >= 0");
    if (!(carrier_mhz > 0)) throw std::invalid_argument("carrier frequency must be positive");
    if (!(bs_height_m > 0) || !(mobile_height_m > 0)) throw std::invalid_argument("antenna heights must be positive");
  }

  /// Short tag used on the command line and in dataset headers.
  std::string tag() const {
    switch (variant) {
      case PathLossVariant::WbsSurrogate: return "wbs";
      case PathLossVariant::HataUrban: return shadowing_db ? "urb-sf" : "urb";
      case PathLossVariant::HataSuburban: return shadowing_db ? "sub-sf" : "sub";
    }
    return "wbs";
  }

  static PathLossModel from_tag(const std::string& tag) {
    PathLossModel m;
    if (tag == "wbs") {
      m.variant = PathLossVariant::WbsSurrogate;
    } else if (tag == "urb" || tag == "urb-sf") {
      m.variant = PathLossVariant::HataUrban;
    } else if (tag == "sub" || tag == "sub-sf") {
      m.variant = PathLossVariant::HataSuburban;
    } else {
      throw std::invalid_argument("unknown path-loss variant '" + tag + "' (expected wbs, urb, urb-sf, sub, sub-sf)");
    }
    if (tag.ends_with("-sf")) m.shadowing_db = 8.0;
    return m;
  }
};

/// Received noise power sigma^2 = F * N0 * B in Watts.
inline double noise_power(const SystemConfig& cfg) {
  return std::pow(10.0, cfg.noise_figure_db / 10.0) * std::pow(10.0, (cfg.noise_density_dbm_hz - 30.0) / 10.0) *
         cfg.bandwidth_hz;
}

/// Independent stream for one channel realization; equal for serial and
/// parallel generation.
inline Rng sample_rng(std::uint64_t seed, std::uint64_t sample_index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(sample_index), static_cast<std::uint32_t>(sample_index >> 32),
                    0x55534341u};
  return Rng(seq);
}

inline Topology build_topology(const SystemConfig& cfg, Rng& rng) {
  cfg.validate();
  const int m = static_cast<int>(std::lround(std::sqrt(static_cast<double>(cfg.num_bs))));
  const double side = cfg.cell_side_km;
  Topology topo;
  topo.bs_positions.reserve(cfg.num_bs);
  for (int row = 0; row < m; ++row)
    for (int col = 0; col < m; ++col) topo.bs_positions.push_back({(col + 0.5) * side, (row + 0.5) * side});

  std::uniform_real_distribution<double> uni(0.0, m * side);
  topo.user_positions.reserve(cfg.num_users);
  topo.association.reserve(cfg.num_users);
  for (int i = 0; i < cfg.num_users; ++i) {
    const double x = uni(rng);
    const double y = uni(rng);
    topo.user_positions.push_back({x, y});
    int best = 0;
    double best_d = distance(topo.bs_positions[0], {x, y});
    for (int b = 1; b < cfg.num_bs; ++b) {
      const double d = distance(topo.bs_positions[b], {x, y});
      if (d < best_d) {
        best_d = d;
        best = b;
      }
    }
    topo.association.push_back(best);
  }
  return topo;
}

/// Deterministic part of the path loss in dB (no shadowing), distance clamped
/// below at 10 m.
inline double path_loss_db_mean(const PathLossModel& model, double distance_km) {
  const double d = std::max(distance_km, kMinDistanceKm);
  switch (model.variant) {
    case PathLossVariant::WbsSurrogate:
      // log-distance stand-in: 38.46 + 35 log10(d / 1 m)
      return 38.46 + 35.0 * std::log10(d * 1000.0);
    case PathLossVariant::HataUrban:
    case PathLossVariant::HataSuburban: {
      const double lf = std::log10(model.carrier_mhz);
      const double lhb = std::log10(model.bs_height_m);
      const double a_hr = (1.1 * lf - 0.7) * model.mobile_height_m - (1.56 * lf - 0.8);
      const double c = model.variant == PathLossVariant::HataUrban ? 3.0 : 0.0;
      return 46.3 + 33.9 * lf - 13.82 * lhb - a_hr + (44.9 - 6.55 * lhb) * std::log10(d) + c;
    }
  }
  return 0.0;
}

inline double path_loss_db(const PathLossModel& model, double distance_km, Rng& rng) {
  double loss = path_loss_db_mean(model, distance_km);
  if (model.shadowing_db && *model.shadowing_db > 0) {
    std::normal_distribution<double> shadow(0.0, *model.shadowing_db);
    loss += shadow(rng);
  }
  return loss;
}

/// Raw per-link channel vectors h[b][j] in C^{n_R}, before normalization.
struct LinkChannels {
  int num_bs = 0;
  int num_users = 0;
  int antennas = 0;
  std::vector<std::complex<double>> h;  // [(b * L + j) * n_R + k]

  std::span<const std::complex<double>> link(int b, int j) const {
    return std::span<const std::complex<double>>(h).subspan((static_cast<std::size_t>(b) * num_users + j) * antennas,
                                                            antennas);
  }
};

inline LinkChannels draw_links(const Topology& topo, const PathLossModel& model, const SystemConfig& cfg, Rng& rng) {
  LinkChannels links;
  links.num_bs = static_cast<int>(topo.bs_positions.size());
  links.num_users = static_cast<int>(topo.user_positions.size());
  links.antennas = cfg.antennas_per_bs;
  links.h.resize(static_cast<std::size_t>(links.num_bs) * links.num_users * links.antennas);
  std::normal_distribution<double> gauss(0.0, std::sqrt(0.5));
  for (int b = 0; b < links.num_bs; ++b) {
    for (int j = 0; j < links.num_users; ++j) {
      const double loss = path_loss_db(model, distance(topo.bs_positions[b], topo.user_positions[j]), rng);
      const double amplitude = std::sqrt(std::pow(10.0, -loss / 10.0));
      auto* out = &links.h[(static_cast<std::size_t>(b) * links.num_users + j) * links.antennas];
      for (int k = 0; k < links.antennas; ++k) {
        if (model.fading) {
          const double re = gauss(rng);
          const double im = gauss(rng);
          out[k] = amplitude * std::complex<double>(re, im);
        } else {
          out[k] = k == 0 ? std::complex<double>(amplitude, 0.0) : std::complex<double>(0.0, 0.0);
        }
      }
    }
  }
  return links;
}

/// Matched-filter CSI: alpha_i = |h_ii|^2 / s2, beta_ij = |h_ii^H h_ij|^2 / (s2 |h_ii|^2).
inline CsiMatrix csi_from_links(const LinkChannels& links, const Topology& topo, double noise_w) {
  const int L = links.num_users;
  CsiMatrix H(L);
  for (int i = 0; i < L; ++i) {
    const auto own = links.link(topo.association[i], i);
    double own_norm2 = 0;
    for (const auto& v : own) own_norm2 += std::norm(v);
    for (int j = 0; j < L; ++j) {
      double value;
      if (i == j) {
        value = own_norm2 / noise_w;
      } else {
        const auto other = links.link(topo.association[i], j);
        std::complex<double> inner = 0;
        for (int k = 0; k < links.antennas; ++k) inner += std::conj(own[k]) * other[k];
        value = std::norm(inner) / (noise_w * own_norm2);
      }
      H(i, j) = std::isfinite(value) ? std::max(value, kCsiFloor) : kCsiFloor;
    }
  }
  return H;
}

inline CsiMatrix draw_channel(const Topology& topo, const PathLossModel& model, const SystemConfig& cfg, Rng& rng) {
  model.validate();
  if (topo.user_positions.size() != static_cast<std::size_t>(cfg.num_users) ||
      topo.bs_positions.size() != static_cast<std::size_t>(cfg.num_bs))
    throw std::invalid_argument("draw_channel: topology does not match config");
  const double noise = noise_power(cfg);
  // A zero serving-link vector has probability zero; redraw if it happens.
  for (int attempt = 0; attempt < 16; ++attempt) {
    LinkChannels links = draw_links(topo, model, cfg, rng);
    bool degenerate = false;
    for (int i = 0; i < cfg.num_users && !degenerate; ++i) {
      double n2 = 0;
      for (const auto& v : links.link(topo.association[i], i)) n2 += std::norm(v);
      degenerate = !(n2 > 0);
    }
    if (!degenerate) return csi_from_links(links, topo, noise);
  }
  throw std::runtime_error("draw_channel: repeated degenerate fading draws");
}

/// One full realization (topology + channel) from its own stream.
inline CsiMatrix sample_channel(const SystemConfig& cfg, const PathLossModel& model, std::uint64_t seed,
                                std::uint64_t sample_index) {
  Rng rng = sample_rng(seed, sample_index);
  const Topology topo = build_topology(cfg, rng);
  return draw_channel(topo, model, cfg, rng);
}

inline std::vector<CsiMatrix> sample_channels(const SystemConfig& cfg, const PathLossModel& model, std::uint64_t seed,
                                              std::size_t count, std::uint64_t first_index = 0) {
  std::vector<CsiMatrix> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) out.push_back(sample_channel(cfg, model, seed, first_index + n));
  return out;
}

}  // namespace usca::netgen

#pragma once

// Channel dataset container.
//
// Layout: 8-byte magic "USCADSET", uint32 format version, uint64 header
// length, a JSON header (system config, path-loss model, seed, count, users),
// then count * L * L little-endian float64 entries, each matrix row-major.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "usca/netgen.hpp"
#include "usca/types.hpp"

namespace usca::dataset {

static_assert(std::endian::native == std::endian::little, "dataset IO assumes a little-endian host");

inline constexpr char kMagic[8] = {'U', 'S', 'C', 'A', 'D', 'S', 'E', 'T'};
inline constexpr std::uint32_t kFormatVersion = 1;

struct Dataset {
  SystemConfig cfg;
  netgen::PathLossModel path_loss;
  std::uint64_t seed = 0;
  std::uint64_t first_index = 0;
  std::vector<CsiMatrix> channels;
};

inline nlohmann::json config_to_json(const SystemConfig& c) {
  return {{"num_bs", c.num_bs},
          {"num_users", c.num_users},
          {"antennas_per_bs", c.antennas_per_bs},
          {"bandwidth_hz", c.bandwidth_hz},
          {"noise_figure_db", c.noise_figure_db},
          {"noise_density_dbm_hz", c.noise_density_dbm_hz},
          {"static_power_w", c.static_power_w},
          {"amp_inefficiency", c.amp_inefficiency},
          {"weights", c.weights},
          {"cell_side_km", c.cell_side_km},
          {"rng_seed", c.rng_seed}};
}

inline SystemConfig config_from_json(const nlohmann::json& j) {
  SystemConfig c;
  c.num_bs = j.at("num_bs");
  c.num_users = j.at("num_users");
  c.antennas_per_bs = j.at("antennas_per_bs");
  c.bandwidth_hz = j.at("bandwidth_hz");
  c.noise_figure_db = j.at("noise_figure_db");
  c.noise_density_dbm_hz = j.at("noise_density_dbm_hz");
  c.static_power_w = j.at("static_power_w");
  c.amp_inefficiency = j.at("amp_inefficiency");
  c.weights = j.at("weights").get<std::vector<double>>();
  c.cell_side_km = j.at("cell_side_km");
  c.rng_seed = j.at("rng_seed");
  c.validate();
  return c;
}

inline nlohmann::json path_loss_to_json(const netgen::PathLossModel& m) {
  nlohmann::json j{{"tag", m.tag()},
                   {"carrier_mhz", m.carrier_mhz},
                   {"bs_height_m", m.bs_height_m},
                   {"mobile_height_m", m.mobile_height_m},
                   {"fading", m.fading}};
  j["shadowing_db"] = m.shadowing_db ? nlohmann::json(*m.shadowing_db) : nlohmann::json(nullptr);
  return j;
}

inline netgen::PathLossModel path_loss_from_json(const nlohmann::json& j) {
  auto m = netgen::PathLossModel::from_tag(j.at("tag").get<std::string>());
  m.carrier_mhz = j.at("carrier_mhz");
  m.bs_height_m = j.at("bs_height_m");
  m.mobile_height_m = j.at("mobile_height_m");
  m.fading = j.at("fading");
  if (j.at("shadowing_db").is_null())
    m.shadowing_db.reset();
  else
    m.shadowing_db = j.at("shadowing_db").get<double>();
  m.validate();
  return m;
}

inline Dataset generate(const SystemConfig& cfg, const netgen::PathLossModel& model, std::uint64_t seed,
                        std::size_t count, std::uint64_t first_index = 0) {
  Dataset d{cfg, model, seed, first_index, netgen::sample_channels(cfg, model, seed, count, first_index)};
  return d;
}

inline void save(const std::string& path, const Dataset& d) {
  const std::size_t L = static_cast<std::size_t>(d.cfg.num_users);
  for (const auto& H : d.channels)
    if (H.users() != L) throw std::invalid_argument("dataset channels must all have L users");
  const nlohmann::json header{{"config", config_to_json(d.cfg)},
                              {"path_loss", path_loss_to_json(d.path_loss)},
                              {"seed", d.seed},
                              {"first_index", d.first_index},
                              {"count", d.channels.size()},
                              {"users", L}};
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write dataset " + path);
  out.write(kMagic, sizeof kMagic);
  const std::uint32_t version = kFormatVersion;
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& H : d.channels)
    out.write(reinterpret_cast<const char*>(H.data().data()), static_cast<std::streamsize>(H.data().size_bytes()));
  if (!out) throw std::runtime_error("failed writing dataset " + path);
}

inline Dataset load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset " + path);
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw std::runtime_error(path + ": not a dataset file");
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  if (version != kFormatVersion) throw std::runtime_error(path + ": unsupported dataset version " + std::to_string(version));
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error(path + ": truncated header");
  const auto header = nlohmann::json::parse(text);
  Dataset d;
  d.cfg = config_from_json(header.at("config"));
  d.path_loss = path_loss_from_json(header.at("path_loss"));
  d.seed = header.at("seed");
  d.first_index = header.value("first_index", std::uint64_t{0});
  const std::size_t count = header.at("count");
  const std::size_t L = header.at("users");
  for (std::size_t n = 0; n < count; ++n) {
    std::vector<double> entries(L * L);
    in.read(reinterpret_cast<char*>(entries.data()), static_cast<std::streamsize>(entries.size() * sizeof(double)));
    if (!in) throw std::runtime_error(path + ": truncated channel data");
    d.channels.emplace_back(L, std::move(entries));
  }
  return d;
}

}  // namespace usca::dataset

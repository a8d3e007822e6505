#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "usca/netgen.hpp"

using namespace usca;
using namespace usca::netgen;

TEST(NoisePower, UnitDensityAndBandwidth) {
  SystemConfig cfg;
  cfg.noise_figure_db = 0;
  cfg.noise_density_dbm_hz = 30;  // 1 W/Hz
  cfg.bandwidth_hz = 1;
  EXPECT_NEAR(noise_power(cfg), 1.0, 1e-15);
}

TEST(NoisePower, PinnedDefaultConstant) {
  // 10^0.3 * 10^-20.4 * 1.8e5 evaluated at 30 significant digits
  SystemConfig cfg;
  EXPECT_NEAR(noise_power(cfg), 1.4297908225037067e-15, 1e-28);
}

TEST(NoisePower, LinearInBandwidth) {
  for (double f : {0.0, 3.0, 7.5}) {
    SystemConfig a;
    a.noise_figure_db = f;
    a.noise_density_dbm_hz = -160;
    SystemConfig b = a;
    b.bandwidth_hz = 2 * a.bandwidth_hz;
    EXPECT_NEAR(noise_power(b) / noise_power(a), 2.0, 1e-14);
  }
}

TEST(Topology, SingleCell) {
  SystemConfig cfg;
  cfg.num_bs = 1;
  cfg.num_users = 1;
  Rng rng(3);
  const auto topo = build_topology(cfg, rng);
  ASSERT_EQ(topo.bs_positions.size(), 1u);
  EXPECT_DOUBLE_EQ(topo.bs_positions[0].x, 0.5);
  EXPECT_DOUBLE_EQ(topo.bs_positions[0].y, 0.5);
  EXPECT_EQ(topo.association[0], 0);
}

TEST(Topology, FourCellCenters) {
  SystemConfig cfg;
  Rng rng(1);
  const auto topo = build_topology(cfg, rng);
  const double expect[4][2] = {{0.5, 0.5}, {1.5, 0.5}, {0.5, 1.5}, {1.5, 1.5}};
  for (int b = 0; b < 4; ++b) {
    EXPECT_DOUBLE_EQ(topo.bs_positions[b].x, expect[b][0]);
    EXPECT_DOUBLE_EQ(topo.bs_positions[b].y, expect[b][1]);
  }
}

TEST(Topology, NearestAssociationAndBounds) {
  SystemConfig cfg;
  cfg.num_bs = 9;
  cfg.num_users = 200;
  Rng rng(11);
  const auto topo = build_topology(cfg, rng);
  for (std::size_t i = 0; i < topo.user_positions.size(); ++i) {
    const auto u = topo.user_positions[i];
    EXPECT_GE(u.x, 0.0);
    EXPECT_LE(u.x, 3.0);
    EXPECT_GE(u.y, 0.0);
    EXPECT_LE(u.y, 3.0);
    const double own = distance(topo.bs_positions[topo.association[i]], u);
    for (const auto& b : topo.bs_positions) EXPECT_LE(own, distance(b, u));
  }
}

TEST(Topology, RejectsNonSquareBsCount) {
  SystemConfig cfg;
  cfg.num_bs = 5;
  Rng rng(0);
  EXPECT_THROW(build_topology(cfg, rng), std::invalid_argument);
}

TEST(Topology, SeedDeterminism) {
  SystemConfig cfg;
  Rng a(42), b(42);
  const auto ta = build_topology(cfg, a);
  const auto tb = build_topology(cfg, b);
  for (std::size_t i = 0; i < ta.user_positions.size(); ++i) {
    EXPECT_EQ(ta.user_positions[i].x, tb.user_positions[i].x);
    EXPECT_EQ(ta.user_positions[i].y, tb.user_positions[i].y);
  }
  EXPECT_EQ(ta.association, tb.association);
}

TEST(PathLoss, HataUrbanPinnedValue) {
  auto m = PathLossModel::from_tag("urb");
  // a(hR) = 0.0450878240857546; evaluated independently at 30 digits
  EXPECT_NEAR(path_loss_db_mean(m, 1.0), 139.99084350798941, 1e-9);
}

TEST(PathLoss, HataDecadeSlope) {
  for (const char* tag : {"urb", "sub"}) {
    auto m = PathLossModel::from_tag(tag);
    const double slope = 44.9 - 6.55 * std::log10(30.0);
    EXPECT_NEAR(path_loss_db_mean(m, 10.0) - path_loss_db_mean(m, 1.0), slope, 1e-10);
  }
}

TEST(PathLoss, UrbanIsThreeDbAboveSuburban) {
  const auto u = PathLossModel::from_tag("urb");
  const auto s = PathLossModel::from_tag("sub");
  for (double d : {0.05, 0.3, 1.7})
    EXPECT_NEAR(path_loss_db_mean(u, d) - path_loss_db_mean(s, d), 3.0, 1e-12);
}

TEST(PathLoss, WbsSurrogateLaw) {
  const auto m = PathLossModel::from_tag("wbs");
  EXPECT_NEAR(path_loss_db_mean(m, 1.0), 38.46 + 35.0 * 3.0, 1e-10);
  EXPECT_NEAR(path_loss_db_mean(m, 0.1), 38.46 + 35.0 * 2.0, 1e-10);
}

TEST(PathLoss, DistanceClampedAtTenMeters) {
  const auto m = PathLossModel::from_tag("urb");
  EXPECT_EQ(path_loss_db_mean(m, 0.0), path_loss_db_mean(m, 0.010));
  EXPECT_EQ(path_loss_db_mean(m, 0.001), path_loss_db_mean(m, 0.010));
}

TEST(PathLoss, ShadowingStandardDeviation) {
  const auto m = PathLossModel::from_tag("urb-sf");
  ASSERT_TRUE(m.shadowing_db.has_value());
  EXPECT_EQ(*m.shadowing_db, 8.0);
  Rng rng(7);
  const double mean_part = path_loss_db_mean(m, 0.7);
  const int n = 100000;
  double s = 0, s2 = 0;
  for (int k = 0; k < n; ++k) {
    const double x = path_loss_db(m, 0.7, rng) - mean_part;
    s += x;
    s2 += x * x;
  }
  const double mean = s / n;
  const double sd = std::sqrt(s2 / n - mean * mean);
  EXPECT_NEAR(sd, 8.0, 0.02 * 8.0);
}

TEST(PathLoss, TagsRoundTrip) {
  for (const char* tag : {"wbs", "urb", "urb-sf", "sub", "sub-sf"}) EXPECT_EQ(PathLossModel::from_tag(tag).tag(), tag);
  EXPECT_THROW(PathLossModel::from_tag("rural"), std::invalid_argument);
  const auto sub = PathLossModel::from_tag("sub-sf");
  EXPECT_EQ(sub.variant, PathLossVariant::HataSuburban);
  EXPECT_EQ(*sub.shadowing_db, 8.0);
}

TEST(PathLoss, RejectsInvalidParameters) {
  PathLossModel m;
  m.shadowing_db = -1.0;
  EXPECT_THROW(m.validate(), std::invalid_argument);
  m.shadowing_db.reset();
  m.carrier_mhz = 0;
  EXPECT_THROW(m.validate(), std::invalid_argument);
}

TEST(Channel, SingleAntennaInterferenceIsLinkPower) {
  SystemConfig cfg;
  cfg.num_users = 6;
  Rng rng(5);
  const auto topo = build_topology(cfg, rng);
  const auto links = draw_links(topo, PathLossModel{}, cfg, rng);
  const double s2 = noise_power(cfg);
  const auto H = csi_from_links(links, topo, s2);
  for (int i = 0; i < 6; ++i) {
    EXPECT_NEAR(H(i, i) * s2, std::norm(links.link(topo.association[i], i)[0]), 1e-12 * H(i, i) * s2);
    for (int j = 0; j < 6; ++j) {
      if (i == j) continue;
      const double expect = std::norm(links.link(topo.association[i], j)[0]);
      EXPECT_NEAR(H(i, j) * s2, expect, 1e-12 * expect);
    }
  }
}

TEST(Channel, NoFadingSingleUser) {
  SystemConfig cfg;
  cfg.num_bs = 1;
  cfg.num_users = 1;
  PathLossModel m;
  m.fading = false;
  Rng rng(9);
  const auto topo = build_topology(cfg, rng);
  const auto H = draw_channel(topo, m, cfg, rng);
  const double d = distance(topo.bs_positions[0], topo.user_positions[0]);
  const double expect = std::pow(10.0, -path_loss_db_mean(m, d) / 10.0) / noise_power(cfg);
  EXPECT_NEAR(H(0, 0), expect, 1e-12 * expect);
}

TEST(Channel, OrthogonalLinksAreFloored) {
  SystemConfig cfg;
  cfg.num_bs = 1;
  cfg.num_users = 2;
  cfg.antennas_per_bs = 2;
  Topology topo;
  topo.bs_positions = {{0.5, 0.5}};
  topo.user_positions = {{0.2, 0.2}, {0.8, 0.7}};
  topo.association = {0, 0};
  LinkChannels links;
  links.num_bs = 1;
  links.num_users = 2;
  links.antennas = 2;
  links.h = {{1e-6, 0}, {0, 0}, {0, 0}, {2e-6, 0}};
  const auto H = csi_from_links(links, topo, 1e-15);
  EXPECT_EQ(H(0, 1), kCsiFloor);
  EXPECT_EQ(H(1, 0), kCsiFloor);
  EXPECT_GT(H(0, 0), 0);
}

TEST(Channel, PositiveFiniteAcrossSeedsAndVariants) {
  SystemConfig cfg;
  cfg.num_users = 12;
  cfg.antennas_per_bs = 2;
  for (const char* tag : {"wbs", "urb", "urb-sf", "sub", "sub-sf"}) {
    const auto m = PathLossModel::from_tag(tag);
    for (std::uint64_t s = 0; s < 20; ++s) EXPECT_NO_THROW(sample_channel(cfg, m, s, 0).validate()) << tag;
  }
}

TEST(Channel, PureFunctionOfSeedAndIndex) {
  SystemConfig cfg;
  const auto m = PathLossModel::from_tag("urb-sf");
  EXPECT_EQ(sample_channel(cfg, m, 3, 17), sample_channel(cfg, m, 3, 17));
  EXPECT_FALSE(sample_channel(cfg, m, 3, 17) == sample_channel(cfg, m, 3, 18));
  const auto batch = sample_channels(cfg, m, 3, 5, 15);
  EXPECT_EQ(batch[2], sample_channel(cfg, m, 3, 17));
}

TEST(Channel, MeanDirectGainMatchesPathLoss) {
  SystemConfig cfg;
  cfg.num_bs = 1;
  cfg.num_users = 1;
  cfg.antennas_per_bs = 2;
  const PathLossModel m;  // wbs, no shadowing
  Topology topo;
  topo.bs_positions = {{0.5, 0.5}};
  topo.user_positions = {{0.9, 0.2}};
  topo.association = {0};
  const double s2 = noise_power(cfg);
  const double pl = std::pow(10.0, -path_loss_db_mean(m, distance(topo.bs_positions[0], topo.user_positions[0])) / 10.0);
  const double expect = cfg.antennas_per_bs * pl / s2;
  Rng rng(21);
  const int n = 10000;
  double s = 0, ss = 0;
  for (int k = 0; k < n; ++k) {
    const double a = draw_channel(topo, m, cfg, rng)(0, 0);
    s += a;
    ss += a * a;
  }
  const double mean = s / n;
  const double se = std::sqrt((ss / n - mean * mean) / n);
  EXPECT_LT(std::abs(mean - expect), 3 * se);
}

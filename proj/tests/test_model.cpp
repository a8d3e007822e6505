#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "gradcheck.hpp"
#include "test_util.hpp"
#include "usca/model.hpp"
#include "usca/train.hpp"

using namespace usca;
using namespace usca::model;
using check::random_csi;
using check::random_permutation;

namespace {

Model usca_model(int blocks, std::uint64_t seed) {
  Architecture a;
  a.blocks = blocks;
  a.init_seed = seed;
  return build_model(a);
}

double max_equivariance_gap(const Model& m, const CsiMatrix& H, std::span<const std::size_t> perm, double pm) {
  const auto p = allocate(m, H, pm);
  const auto pp = allocate(m, H.permuted(perm), pm);
  const auto expect = permute_vector<double>(p, perm);
  double gap = 0;
  for (std::size_t i = 0; i < p.size(); ++i) gap = std::max(gap, std::abs(pp[i] - expect[i]));
  return gap;
}

}  // namespace

TEST(Adjacency, IdentityStaysIdentity) {
  CsiMatrix H(2, {1, 1e-30, 1e-30, 1});
  const auto S = normalize_adjacency(H);
  EXPECT_NEAR(S(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(S(1, 1), 1.0, 1e-15);
  EXPECT_NEAR(S(0, 1), 0.0, 1e-15);
}

TEST(Adjacency, AllOnesIsHalf) {
  const auto S = normalize_adjacency(CsiMatrix(2, {1, 1, 1, 1}));
  for (std::size_t k = 0; k < 4; ++k) EXPECT_DOUBLE_EQ(S[k], 0.5);
}

TEST(Adjacency, RowSumDefinition) {
  std::mt19937_64 rng(2);
  const auto H = random_csi(5, rng);
  const auto S = normalize_adjacency(H);
  std::vector<double> r(5, 0.0);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) r[i] += H(i, j);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(S(i, j), H(i, j) / std::sqrt(r[i] * r[j]), 1e-15 * (1 + S(i, j)));
}

TEST(Adjacency, PermutationConsistency) {
  std::mt19937_64 rng(8);
  for (int c = 0; c < 20; ++c) {
    const auto H = random_csi(6, rng);
    const auto perm = random_permutation(6, rng);
    const auto S = normalize_adjacency(H);
    const auto Sp = normalize_adjacency(H.permuted(perm));
    for (std::size_t a = 0; a < 6; ++a)
      for (std::size_t b = 0; b < 6; ++b) EXPECT_NEAR(Sp(a, b), S(perm[a], perm[b]), 1e-15);
  }
}

TEST(GcnLayer, IdentityWeightsPassThrough) {
  ParamSet ps{{"W", Matrix(2, 2, {1, 0, 0, 1}), 0}};
  Subnet net{{0}, {}};
  diff::Graph g;
  Binding b(g, ps);
  Var S = g.constant(Matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
  const Matrix X(3, 2, {0.1, -2, 3, 4, -5, 6});
  EXPECT_EQ(diff::value(gcn_forward(b, net, S, g.constant(X))), X);
}

TEST(GcnLayer, ZeroInputGivesZeroOutput) {
  const auto m = usca_model(1, 3);
  std::mt19937_64 rng(1);
  diff::Graph g;
  Binding b(g, m.params);
  Var S = g.constant(normalize_adjacency(random_csi(4, rng)));
  const auto out = diff::value(gcn_forward(b, m.layout.step_target[0], S, g.constant(Matrix(4, 2, 0.0))));
  for (double v : out.values()) EXPECT_EQ(v, 0.0);
}

TEST(GcnLayer, Equivariance) {
  const auto m = usca_model(1, 5);
  std::mt19937_64 rng(12);
  for (int c = 0; c < 20; ++c) {
    const std::size_t L = 7;
    const auto H = random_csi(L, rng);
    const auto perm = random_permutation(L, rng);
    const Matrix X = check::random_matrix(L, 3, rng);
    Matrix Xp(L, 3);
    for (std::size_t a = 0; a < L; ++a)
      for (std::size_t k = 0; k < 3; ++k) Xp(a, k) = X(perm[a], k);
    diff::Graph g;
    Binding b(g, m.params);
    const auto out = diff::value(gcn_forward(b, m.layout.step_size[0], g.constant(normalize_adjacency(H)), g.constant(X)));
    const auto outp = diff::value(
        gcn_forward(b, m.layout.step_size[0], g.constant(normalize_adjacency(H.permuted(perm))), g.constant(Xp)));
    for (std::size_t a = 0; a < L; ++a) EXPECT_NEAR(outp(a, 0), out(perm[a], 0), 1e-12 * (1 + std::abs(out(perm[a], 0))));
  }
}

TEST(Architecture, LayerShapes) {
  const auto m = usca_model(3, 0);
  EXPECT_EQ(m.layout.step_target.size(), 3u);
  ASSERT_EQ(m.layout.emb.weights.size(), 6u);
  const std::vector<std::pair<int, int>> emb{{1, 8}, {8, 32}, {32, 32}, {32, 16}, {16, 8}, {8, 1}};
  for (std::size_t q = 0; q < 6; ++q) {
    EXPECT_EQ(static_cast<int>(m.params[m.layout.emb.weights[q]].value.rows()), emb[q].first);
    EXPECT_EQ(static_cast<int>(m.params[m.layout.emb.weights[q]].value.cols()), emb[q].second);
  }
  EXPECT_EQ(m.params[m.layout.step_target[1].weights[0]].value.rows(), 2u);
  EXPECT_EQ(m.params[m.layout.step_target[1].weights[5]].value.cols(), 2u);
  EXPECT_EQ(m.params[m.layout.step_size[2].weights[0]].value.rows(), 3u);
  EXPECT_EQ(m.params[m.layout.step_size[2].weights[5]].value.cols(), 1u);
}

TEST(Architecture, InitializationBoundsAndSeed) {
  const auto a = usca_model(2, 9);
  const auto b = usca_model(2, 9);
  const auto c = usca_model(2, 10);
  for (std::size_t k = 0; k < a.params.size(); ++k) {
    EXPECT_EQ(a.params[k].value, b.params[k].value);
    const auto& w = a.params[k].value;
    const double bound = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    for (double x : w.values()) EXPECT_LE(std::abs(x), bound);
  }
  EXPECT_NE(a.params[0].value, c.params[0].value);
}

TEST(Architecture, DescriptorRoundTripAndValidation) {
  Architecture a;
  a.blocks = 4;
  a.hidden = {4, 4};
  a.init_seed = 17;
  EXPECT_EQ(Architecture::from_json(a.to_json()), a);
  EXPECT_EQ(a.to_json().at("output_layer"), "linear");
  a.blocks = 0;
  EXPECT_THROW(a.validate(), std::invalid_argument);
  Architecture mlp;
  mlp.variant = Variant::MlpUsca;
  EXPECT_THROW(build_model(mlp), std::invalid_argument);
  EXPECT_THROW(variant_from_name("transformer"), std::invalid_argument);
}

TEST(Checkpoint, ModelRoundTripReproducesOutputs) {
  const auto m = usca_model(2, 21);
  const auto path = std::filesystem::temp_directory_path() / "usca_test_model.json";
  save_model(path.string(), m);
  const auto back = load_model(path.string());
  std::filesystem::remove(path);
  EXPECT_EQ(back.arch, m.arch);
  std::mt19937_64 rng(4);
  const auto H = random_csi(5, rng);
  EXPECT_EQ(allocate(back, H, 0.3), allocate(m, H, 0.3));
}

TEST(Checkpoint, RejectsTensorsThatDoNotMatchTheDescriptor) {
  auto m = usca_model(1, 0);
  diff::Checkpoint ck{m.arch.to_json(), m.params};
  ck.params.pop_back();
  EXPECT_THROW(model_from_checkpoint(ck), std::runtime_error);
  ck.params = m.params;
  ck.params[0].value = Matrix(2, 2);
  EXPECT_THROW(model_from_checkpoint(ck), std::runtime_error);
}

TEST(UscaForward, ForcedZeroStepReturnsMaxPower) {
  std::mt19937_64 rng(6);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto m = usca_model(4, seed);
    const auto H = random_csi(6, rng);
    ForwardOptions opt;
    opt.forced_step = 0.0;
    for (double p : allocate(m, H, 0.7, opt)) EXPECT_EQ(p, 0.7);
  }
}

TEST(UscaForward, ForcedUnitStepLandsOnClampedTargets) {
  std::mt19937_64 rng(7);
  const auto m = usca_model(3, 2);
  const auto H = random_csi(5, rng);
  BlockTrace tr;
  ForwardOptions opt;
  opt.forced_step = 1.0;
  opt.trace = &tr;
  const auto p = allocate(m, H, 2.0, opt);
  ASSERT_EQ(tr.targets.size(), 3u);
  ASSERT_EQ(tr.powers.size(), 4u);
  EXPECT_EQ(p, tr.targets.back());
  for (double x : tr.powers.front()) EXPECT_EQ(x, 2.0);
}

TEST(UscaForward, TraceStepSizesWithinUnitInterval) {
  std::mt19937_64 rng(70);
  const auto m = usca_model(5, 70);
  BlockTrace tr;
  ForwardOptions opt;
  opt.trace = &tr;
  const auto p = allocate(m, random_csi(9, rng), 0.05, opt);
  ASSERT_EQ(tr.steps.size(), 5u);
  for (const auto& s : tr.steps)
    for (double x : s) {
      EXPECT_GE(x, 0.0);
      EXPECT_LE(x, 1.0);
    }
  EXPECT_EQ(p, tr.powers.back());
}

TEST(UscaForward, FeasibleOverRandomTrials) {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> users(1, 20);
  std::uniform_real_distribution<double> pm_dbw(-40, 10);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto m = usca_model(2, static_cast<std::uint64_t>(trial));
    const double pm = dbw_to_watts(pm_dbw(rng));
    const auto p = allocate(m, random_csi(static_cast<std::size_t>(users(rng)), rng), pm);
    for (double x : p) {
      ASSERT_GE(x, 0.0);
      ASSERT_LE(x, pm);
    }
  }
}

TEST(UscaForward, PermutationEquivariance) {
  std::mt19937_64 rng(31);
  for (std::size_t L : {4u, 8u, 17u}) {
    for (int c = 0; c < 10; ++c) {
      const auto m = usca_model(3, rng());
      EXPECT_LT(max_equivariance_gap(m, random_csi(L, rng), random_permutation(L, rng), 0.5), 1e-10);
    }
  }
}

TEST(UscaForward, DepthOptionTruncatesBlocks) {
  std::mt19937_64 rng(15);
  const auto m = usca_model(4, 15);
  const auto H = random_csi(4, rng);
  BlockTrace tr;
  ForwardOptions full;
  full.trace = &tr;
  allocate(m, H, 1.0, full);
  ForwardOptions two;
  two.depth = 2;
  EXPECT_EQ(allocate(m, H, 1.0, two), tr.powers[2]);
}

TEST(UscaForward, RunsAcrossUserCounts) {
  std::mt19937_64 rng(40);
  const auto m = usca_model(2, 40);
  for (std::size_t L : {1u, 4u, 30u, 100u}) {
    const auto p = allocate(m, random_csi(L, rng), 0.1);
    ASSERT_EQ(p.size(), L);
    for (double x : p) EXPECT_TRUE(x >= 0 && x <= 0.1);
  }
}

TEST(UscaForward, InvariantToGlobalChannelScale) {
  // The normalized adjacency cancels a common factor on H, so the allocation
  // cannot depend on the absolute channel strength.
  std::mt19937_64 rng(44);
  for (int c = 0; c < 10; ++c) {
    const auto m = usca_model(3, rng());
    const auto H = random_csi(6, rng);
    CsiMatrix scaled = H;
    for (auto& x : scaled.data()) x *= 1e3;
    const auto p = allocate(m, H, 0.2);
    const auto q = allocate(m, scaled, 0.2);
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], q[i], 1e-12);
  }
}

TEST(UscaForward, EndToEndGradientsMatchFiniteDifferences) {
  // Only points whose relu inputs are 1e-5 and clamp inputs 1e-3 (of the
  // clamp range) away from a kink are compared.
  std::mt19937_64 rng(123);
  SystemConfig cfg;
  cfg.num_users = 4;
  int checked = 0;
  std::size_t nonzero = 0;
  for (int c = 0; checked < 100 && c < 5000; ++c) {
    const auto m = usca_model(2, rng());
    const auto H = random_csi(4, rng);
    const double pm = dbw_to_watts(std::uniform_real_distribution<double>(-30, 0)(rng));
    {
      diff::Graph g;
      Binding b(g, m.params);
      forward(b, m, make_context(g, H, m.arch.variant), pm);
      if (g.min_relu_margin() < 1e-5 || g.min_clamp_margin() < 1e-3) continue;
    }
    auto head = [&](diff::Graph&, Var p) { return train::wsee_node(p, H, cfg); };
    const auto res = check::model_gradient_check(m, H, pm, head, 20, rng);
    ++checked;
    nonzero += res.nonzero;
    EXPECT_LT(res.max_rel, 1e-4) << "case " << c;
  }
  EXPECT_EQ(checked, 100);
  EXPECT_GT(nonzero, 200u);
}

TEST(PlainGcn, FeasibleEquivariantAndLargerThanOneBlock) {
  auto a = Architecture::plain_gcn();
  a.init_seed = 3;
  const auto plain = build_model(a);
  const auto usca = usca_model(1, 0);
  EXPECT_EQ(diff::parameter_count(plain.params), 94192u);
  EXPECT_EQ(block_parameter_count(usca, 1), 3904u);
  EXPECT_GT(diff::parameter_count(plain.params), block_parameter_count(usca, 1));
  std::mt19937_64 rng(3);
  for (int c = 0; c < 10; ++c) {
    const auto H = random_csi(8, rng);
    for (double x : allocate(plain, H, 0.2)) EXPECT_TRUE(x >= 0 && x <= 0.2);
    EXPECT_LT(max_equivariance_gap(plain, H, random_permutation(8, rng), 0.2), 1e-10);
  }
}

TEST(MlpUsca, FeasibleButNotEquivariant) {
  Architecture a;
  a.variant = Variant::MlpUsca;
  a.blocks = 2;
  a.train_users = 6;
  std::mt19937_64 rng(50);
  double worst_gap = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    a.init_seed = seed;
    const auto m = build_model(a);
    const auto H = random_csi(6, rng);
    for (double x : allocate(m, H, 1.0)) EXPECT_TRUE(x >= 0 && x <= 1.0);
    worst_gap = std::max(worst_gap, max_equivariance_gap(m, H, random_permutation(6, rng), 1.0));
  }
  EXPECT_GT(worst_gap, 1e-3);
}

TEST(MlpUsca, RejectsOtherUserCounts) {
  Architecture a;
  a.variant = Variant::MlpUsca;
  a.blocks = 1;
  a.train_users = 6;
  const auto m = build_model(a);
  std::mt19937_64 rng(1);
  EXPECT_THROW(allocate(m, random_csi(7, rng), 1.0), std::invalid_argument);
}

TEST(MaxPow, Examples) {
  EXPECT_EQ(max_pow(0.0, 4), PowerVector(4, 0.0));
  EXPECT_EQ(max_pow(2.0, 3), (PowerVector{2, 2, 2}));
}

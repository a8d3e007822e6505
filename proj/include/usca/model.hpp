#pragma once

// Graph convolutional building block and the unfolded SCA architecture, plus
// the learned baselines (MLP-based unfolding and a plain GCN).

#include <cmath>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "usca/diff.hpp"
#include "usca/types.hpp"

namespace usca::model {

using diff::Graph;
using diff::Matrix;
using diff::ParamSet;
using diff::Var;

/// S = D^{-1/2} H D^{-1/2} with D = diag(H 1).
inline Matrix normalize_adjacency(const CsiMatrix& H) {
  const std::size_t L = H.users();
  std::vector<double> inv_sqrt(L);
  for (std::size_t i = 0; i < L; ++i) {
    double r = 0;
    for (std::size_t j = 0; j < L; ++j) r += H(i, j);
    if (!(r > 0)) throw std::invalid_argument("normalize_adjacency: nonpositive row sum");
    inv_sqrt[i] = 1.0 / std::sqrt(r);
  }
  Matrix S(L, L);
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = 0; j < L; ++j) S(i, j) = H(i, j) * inv_sqrt[i] * inv_sqrt[j];
  return S;
}

enum class Variant { GcnUsca, MlpUsca, PlainGcn };

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::GcnUsca: return "gcn-usca";
    case Variant::MlpUsca: return "mlp-usca";
    case Variant::PlainGcn: return "gcn";
  }
  return "gcn-usca";
}

inline Variant variant_from_name(const std::string& s) {
  if (s == "gcn-usca" || s == "usca") return Variant::GcnUsca;
  if (s == "mlp-usca") return Variant::MlpUsca;
  if (s == "gcn") return Variant::PlainGcn;
  throw std::invalid_argument("unknown model variant '" + s + "'");
}

/// Architecture descriptor stored next to the weights in a checkpoint.
struct Architecture {
  Variant variant = Variant::GcnUsca;
  int blocks = 7;                                // T
  std::vector<int> hidden{8, 32, 32, 16, 8};     // ReLU layers of every GCN
  int mlp_width = 64;                            // MLP-USCA hidden width
  int mlp_layers = 2;                            // MLP-USCA hidden layer count
  int train_users = 0;                           // MLP-USCA input size is tied to L
  std::uint64_t init_seed = 0;

  static Architecture plain_gcn() {
    Architecture a;
    a.variant = Variant::PlainGcn;
    a.blocks = 1;
    a.hidden = {56, 224, 224, 112, 56};
    return a;
  }

  void validate() const {
    if (blocks < 1) throw std::invalid_argument("architecture needs at least one block");
    for (int d : hidden)
      if (d < 1) throw std::invalid_argument("hidden widths must be positive");
    if (variant == Variant::MlpUsca && (train_users < 1 || mlp_width < 1 || mlp_layers < 1))
      throw std::invalid_argument("mlp-usca needs train_users, mlp_width and mlp_layers >= 1");
  }

  nlohmann::json to_json() const {
    // "output_layer": the hidden ReLU layers are followed by one linear
    // graph-convolution layer to the output width.
    return {{"variant", variant_name(variant)}, {"blocks", blocks},   {"hidden", hidden},
            {"output_layer", "linear"},         {"mlp_width", mlp_width}, {"mlp_layers", mlp_layers},
            {"train_users", train_users},       {"init_seed", init_seed}};
  }

  static Architecture from_json(const nlohmann::json& j) {
    Architecture a;
    a.variant = variant_from_name(j.at("variant").get<std::string>());
    a.blocks = j.at("blocks").get<int>();
    a.hidden = j.at("hidden").get<std::vector<int>>();
    a.mlp_width = j.value("mlp_width", 64);
    a.mlp_layers = j.value("mlp_layers", 2);
    a.train_users = j.value("train_users", 0);
    a.init_seed = j.value("init_seed", std::uint64_t{0});
    a.validate();
    return a;
  }

  bool operator==(const Architecture&) const = default;
};

/// Parameter indices of one subnetwork Psi (weights, and biases for MLPs).
struct Subnet {
  std::vector<std::size_t> weights;
  std::vector<std::size_t> biases;
};

struct Layout {
  Subnet emb;
  std::vector<Subnet> step_target;  // Psi_p per block
  std::vector<Subnet> step_size;    // Psi_s per block
  Subnet plain;                     // plain GCN
};

struct Model {
  Architecture arch;
  ParamSet params;
  Layout layout;
};

namespace detail {

inline std::size_t add_weight(ParamSet& ps, std::string name, int rows, int cols, int group, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / (rows + cols));
  std::uniform_real_distribution<double> uni(-bound, bound);
  Matrix w(rows, cols);
  for (auto& x : w.values()) x = uni(rng);
  ps.push_back({std::move(name), std::move(w), group});
  return ps.size() - 1;
}

inline Subnet add_gcn(ParamSet& ps, const std::string& prefix, int in_dim, const std::vector<int>& hidden, int out_dim,
                      int group, std::mt19937_64& rng) {
  Subnet s;
  int d = in_dim;
  for (std::size_t q = 0; q < hidden.size(); ++q) {
    s.weights.push_back(add_weight(ps, prefix + ".W" + std::to_string(q), d, hidden[q], group, rng));
    d = hidden[q];
  }
  s.weights.push_back(add_weight(ps, prefix + ".W" + std::to_string(hidden.size()), d, out_dim, group, rng));
  return s;
}

inline Subnet add_mlp(ParamSet& ps, const std::string& prefix, int in_dim, int width, int layers, int out_dim,
                      int group, std::mt19937_64& rng) {
  Subnet s;
  int d = in_dim;
  for (int q = 0; q <= layers; ++q) {
    const int out = q == layers ? out_dim : width;
    s.weights.push_back(add_weight(ps, prefix + ".W" + std::to_string(q), d, out, group, rng));
    ps.push_back({prefix + ".b" + std::to_string(q), Matrix(1, out), group});
    s.biases.push_back(ps.size() - 1);
    d = out;
  }
  return s;
}

}  // namespace detail

/// Builds the parameter layout for an architecture with seeded fan-based
/// uniform initialization.
inline Model build_model(const Architecture& arch) {
  arch.validate();
  Model m;
  m.arch = arch;
  std::mt19937_64 rng(arch.init_seed);
  auto& ps = m.params;
  switch (arch.variant) {
    case Variant::GcnUsca:
      m.layout.emb = detail::add_gcn(ps, "emb", 1, arch.hidden, 1, 1, rng);
      for (int t = 1; t <= arch.blocks; ++t) {
        m.layout.step_target.push_back(detail::add_gcn(ps, "b" + std::to_string(t) + ".p", 2, arch.hidden, 2, t, rng));
        m.layout.step_size.push_back(detail::add_gcn(ps, "b" + std::to_string(t) + ".s", 3, arch.hidden, 1, t, rng));
      }
      break;
    case Variant::MlpUsca: {
      const int L = arch.train_users;
      const int L2 = L * L;
      m.layout.emb = detail::add_mlp(ps, "emb", L2 + L, arch.mlp_width, arch.mlp_layers, L, 1, rng);
      for (int t = 1; t <= arch.blocks; ++t) {
        m.layout.step_target.push_back(detail::add_mlp(ps, "b" + std::to_string(t) + ".p", L2 + 2 * L, arch.mlp_width,
                                                       arch.mlp_layers, 2 * L, t, rng));
        m.layout.step_size.push_back(detail::add_mlp(ps, "b" + std::to_string(t) + ".s", L2 + 3 * L, arch.mlp_width,
                                                     arch.mlp_layers, L, t, rng));
      }
      break;
    }
    case Variant::PlainGcn:
      m.layout.plain = detail::add_gcn(ps, "gcn", 1, arch.hidden, 1, 1, rng);
      break;
  }
  return m;
}

/// Rebuilds the layout from a checkpoint and installs its weights.
inline Model model_from_checkpoint(const diff::Checkpoint& ckpt) {
  Model m = build_model(Architecture::from_json(ckpt.architecture));
  if (ckpt.params.size() != m.params.size())
    throw std::runtime_error("checkpoint tensor count does not match its architecture");
  for (std::size_t k = 0; k < m.params.size(); ++k) {
    if (ckpt.params[k].name != m.params[k].name || !ckpt.params[k].value.same_shape(m.params[k].value))
      throw std::runtime_error("checkpoint tensor '" + ckpt.params[k].name + "' does not match the architecture");
    m.params[k].value = ckpt.params[k].value;
  }
  return m;
}

inline void save_model(const std::string& path, const Model& m) { diff::save_checkpoint(path, m.params, m.arch.to_json()); }

inline Model load_model(const std::string& path) { return model_from_checkpoint(diff::load_checkpoint(path)); }

/// Creates one graph leaf per parameter on first use.
class Binding {
 public:
  Binding(Graph& g, const ParamSet& params, std::vector<bool> trainable = {})
      : g_(g), params_(params), trainable_(std::move(trainable)), vars_(params.size()) {}

  Var operator[](std::size_t index) {
    if (!vars_[index]) {
      const bool train = !trainable_.empty() && trainable_[index];
      vars_[index] = g_.parameter(params_, index, train);
    }
    return *vars_[index];
  }
  Graph& graph() { return g_; }

 private:
  Graph& g_;
  const ParamSet& params_;
  std::vector<bool> trainable_;
  std::vector<std::optional<Var>> vars_;
};

/// Per-channel inputs shared by every subnetwork call.
struct ChannelContext {
  std::size_t users = 0;
  Var adjacency;   // normalized S (GCN variants)
  Var log_csi;     // 1 x L^2 row of log10 H (MLP variant)
};

inline ChannelContext make_context(Graph& g, const CsiMatrix& H, Variant variant) {
  ChannelContext ctx;
  ctx.users = H.users();
  if (variant == Variant::MlpUsca) {
    Matrix row(1, H.users() * H.users());
    for (std::size_t k = 0; k < row.size(); ++k) row[k] = std::log10(H.data()[k]);
    ctx.log_csi = g.constant(std::move(row));
  } else {
    ctx.adjacency = g.constant(normalize_adjacency(H));
  }
  return ctx;
}

/// X^q = relu(S X^{q-1} W^q) for the hidden layers, then a linear output layer.
inline Var gcn_forward(Binding& b, const Subnet& net, Var S, Var X) {
  Var h = X;
  for (std::size_t q = 0; q < net.weights.size(); ++q) {
    h = diff::matmul(diff::matmul(S, h), b[net.weights[q]]);
    if (q + 1 < net.weights.size()) h = diff::relu(h);
  }
  return h;
}

/// Fully connected network on [log10 H (flattened), X (flattened)]; output is
/// reshaped to L x (out / L).
inline Var mlp_forward(Binding& b, const Subnet& net, const ChannelContext& ctx, Var X) {
  const Matrix& xv = diff::value(X);
  Var h = diff::concat_cols(ctx.log_csi, diff::reshape(X, 1, xv.size()));
  for (std::size_t q = 0; q < net.weights.size(); ++q) {
    h = diff::add_row_bias(diff::matmul(h, b[net.weights[q]]), b[net.biases[q]]);
    if (q + 1 < net.weights.size()) h = diff::relu(h);
  }
  const std::size_t out = diff::value(h).cols();
  return diff::reshape(h, ctx.users, out / ctx.users);
}

struct BlockTrace {
  std::vector<PowerVector> targets;  // clamped step targets per block
  std::vector<PowerVector> steps;    // per-user step sizes per block
  std::vector<PowerVector> powers;   // p^(0), p^(1), ...
};

struct ForwardOptions {
  int depth = -1;                       // number of blocks to run; -1 = all
  std::optional<double> forced_step;    // replaces the learned step sizes
  BlockTrace* trace = nullptr;
};

namespace detail {
inline PowerVector to_vector(Var v) {
  const auto vals = diff::value(v).values();
  return PowerVector(vals.begin(), vals.end());
}
}  // namespace detail

/// Unfolded SCA forward pass at budget pm. Returns p^(depth) as an L x 1 node.
inline Var usca_forward(Binding& b, const Model& m, const ChannelContext& ctx, double pm,
                        const ForwardOptions& opt = {}) {
  Graph& g = b.graph();
  const std::size_t L = ctx.users;
  const bool mlp = m.arch.variant == Variant::MlpUsca;
  if (m.arch.variant == Variant::PlainGcn) throw std::invalid_argument("usca_forward: plain GCN has no blocks");
  if (mlp && static_cast<int>(L) != m.arch.train_users)
    throw std::invalid_argument("mlp-usca was built for L=" + std::to_string(m.arch.train_users) +
                                " users and cannot evaluate L=" + std::to_string(L));
  auto psi = [&](const Subnet& net, Var X) {
    return mlp ? mlp_forward(b, net, ctx, X) : gcn_forward(b, net, ctx.adjacency, X);
  };
  const int depth = opt.depth < 0 ? m.arch.blocks : std::min(opt.depth, m.arch.blocks);

  Var p = g.constant(Matrix(L, 1, pm));
  Var emb = psi(m.layout.emb, g.constant(Matrix(L, 1, 1.0)));
  Var z = diff::concat_cols(emb, p);
  if (opt.trace) opt.trace->powers.push_back(detail::to_vector(p));
  for (int t = 0; t < depth; ++t) {
    Var out = psi(m.layout.step_target[t], z);
    Var next_emb = diff::column(out, 0);
    Var target = diff::clamp(diff::column(out, 1), 0.0, pm);
    Var step = opt.forced_step ? g.constant(Matrix(L, 1, *opt.forced_step))
                               : diff::clamp(psi(m.layout.step_size[t], diff::concat_cols(z, target)), 0.0, 1.0);
    p = diff::clamp(diff::add(p, diff::hadamard(step, diff::sub(target, p))), 0.0, pm);
    z = diff::concat_cols(next_emb, p);
    if (opt.trace) {
      opt.trace->targets.push_back(detail::to_vector(target));
      opt.trace->steps.push_back(detail::to_vector(step));
      opt.trace->powers.push_back(detail::to_vector(p));
    }
  }
  return p;
}

/// Plain GCN baseline: node signal Pm 1 in, one power per node out.
inline Var plain_gcn_forward(Binding& b, const Model& m, const ChannelContext& ctx, double pm) {
  Graph& g = b.graph();
  Var x = g.constant(Matrix(ctx.users, 1, pm));
  return diff::clamp(gcn_forward(b, m.layout.plain, ctx.adjacency, x), 0.0, pm);
}

/// Dispatches on the model variant.
inline Var forward(Binding& b, const Model& m, const ChannelContext& ctx, double pm, const ForwardOptions& opt = {}) {
  if (m.arch.variant == Variant::PlainGcn) return plain_gcn_forward(b, m, ctx, pm);
  return usca_forward(b, m, ctx, pm, opt);
}

/// Inference without gradient bookkeeping.
inline PowerVector allocate(const Model& m, const CsiMatrix& H, double pm, const ForwardOptions& opt = {}) {
  Graph g;
  Binding b(g, m.params);
  const auto ctx = make_context(g, H, m.arch.variant);
  return detail::to_vector(forward(b, m, ctx, pm, opt));
}

inline PowerVector max_pow(double pm, std::size_t users) { return PowerVector(users, pm); }

/// Parameters of one unfolded block (Psi_p and Psi_s of block t, 1-based).
inline std::size_t block_parameter_count(const Model& m, int t) {
  std::size_t n = 0;
  for (const auto& p : m.params)
    if (p.group == t && !p.name.starts_with("emb")) n += p.value.size();
  return n;
}

}  // namespace usca::model

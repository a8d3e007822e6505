#pragma once

// Minimal reverse-mode differentiation over small dense row-major matrices.
//
// A Graph is a tape: every op appends a node whose parents were created
// earlier, so creation order is a topological order and backward() walks it
// in reverse. Parameters live outside the graph in a ParamSet; gradients are
// read back per graph so that independent graphs can run on separate threads
// and be summed afterwards.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace usca::diff {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), v_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
      : rows_(rows), cols_(cols), v_(std::move(values)) {
    if (v_.size() != rows_ * cols_) throw std::invalid_argument("Matrix: value count does not match shape");
  }
  static Matrix column(std::span<const double> values) {
    return Matrix(values.size(), 1, std::vector<double>(values.begin(), values.end()));
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return v_.size(); }
  bool empty() const { return v_.empty(); }
  double operator()(std::size_t r, std::size_t c) const { return v_[r * cols_ + c]; }
  double& operator()(std::size_t r, std::size_t c) { return v_[r * cols_ + c]; }
  double operator[](std::size_t k) const { return v_[k]; }
  double& operator[](std::size_t k) { return v_[k]; }
  std::span<const double> values() const { return v_; }
  std::span<double> values() { return v_; }
  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  bool all_finite() const {
    return std::all_of(v_.begin(), v_.end(), [](double x) { return std::isfinite(x); });
  }
  void add_in_place(const Matrix& o) {
    for (std::size_t k = 0; k < v_.size(); ++k) v_[k] += o.v_[k];
  }
  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> v_;
};

/// C = A * B
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimensions differ");
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
    }
  return c;
}

/// C = A^T * B
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw std::invalid_argument("matmul_tn: dimension mismatch");
  Matrix c(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k)
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a(k, i);
      if (aki == 0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aki * b(k, j);
    }
  return c;
}

/// C = A * B^T
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("matmul_nt: dimension mismatch");
  Matrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double acc = 0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(j, k);
      c(i, j) = acc;
    }
  return c;
}

struct Parameter {
  std::string name;
  Matrix value;
  int group = 0;  // block index used for per-group learning rates
};

using ParamSet = std::vector<Parameter>;
using GradSet = std::vector<Matrix>;

inline GradSet zero_grads(const ParamSet& params) {
  GradSet g;
  g.reserve(params.size());
  for (const auto& p : params) g.emplace_back(p.value.rows(), p.value.cols());
  return g;
}

inline std::size_t parameter_count(const ParamSet& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.value.size();
  return n;
}

class Graph;

/// Handle to a node of a Graph.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;
};

class Graph {
 public:
  using Backward = std::function<void(Graph&, const Matrix& out_grad)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Matrix m) { return leaf(std::move(m), false, -1); }
  Var input(Matrix m, bool requires_grad) { return leaf(std::move(m), requires_grad, -1); }
  /// Leaf holding a copy of params[index]; its gradient is reported by param_grads().
  Var parameter(const ParamSet& params, std::size_t index, bool trainable = true) {
    return leaf(params.at(index).value, trainable, static_cast<long>(index));
  }

  const Matrix& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  const Matrix& grad(Var v) const {
    const auto& n = nodes_.at(v.id);
    if (n.grad.empty()) zero_cache_ = Matrix(n.value.rows(), n.value.cols());
    return n.grad.empty() ? zero_cache_ : n.grad;
  }
  std::size_t size() const { return nodes_.size(); }

  /// Appends an op node. `backward` receives the node's output gradient and
  /// must call accumulate() on the parents it depends on.
  Var record(Matrix value, std::span<const Var> parents, Backward backward) {
    bool needs = false;
    for (Var p : parents) {
      if (p.graph != this) throw std::invalid_argument("op mixes variables from different graphs");
      if (p.id >= nodes_.size()) throw std::logic_error("parent created after child");
      needs = needs || nodes_[p.id].requires_grad;
    }
    Node n;
    n.value = std::move(value);
    n.requires_grad = needs;
    if (needs) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  void accumulate(Var v, const Matrix& g) {
    auto& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (n.grad.empty())
      n.grad = g;
    else
      n.grad.add_in_place(g);
  }

  /// Reverse accumulation from a scalar loss. May be called once per graph.
  void backward(Var loss) {
    if (backward_done_) throw std::logic_error("backward called twice on the same graph");
    const auto& lv = value(loss);
    if (lv.rows() != 1 || lv.cols() != 1) throw std::invalid_argument("backward needs a 1x1 loss");
    if (!lv.all_finite()) throw std::domain_error("loss is not finite");
    backward_done_ = true;
    if (!nodes_[loss.id].requires_grad) return;
    nodes_[loss.id].grad = Matrix(1, 1, 1.0);
    for (std::size_t k = loss.id + 1; k-- > 0;) {
      auto& n = nodes_[k];
      if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
      // the callback may append to nothing but reads node storage; copy the grad
      const Matrix g = n.grad;
      n.backward(*this, g);
    }
  }

  bool backward_done() const { return backward_done_; }

  /// Adds this graph's parameter gradients into `out` (indexed like the ParamSet).
  void accumulate_param_grads(GradSet& out) const {
    for (const auto& n : nodes_) {
      if (n.param_index < 0 || n.grad.empty()) continue;
      auto& dst = out.at(static_cast<std::size_t>(n.param_index));
      if (!dst.same_shape(n.grad)) throw std::invalid_argument("gradient buffer shape mismatch");
      dst.add_in_place(n.grad);
    }
  }

  /// Smallest distance of any relu input to 0 seen so far.
  double min_relu_margin() const { return relu_margin_; }
  /// Smallest distance of any clamp input to a bound, in units of the clamp range.
  double min_clamp_margin() const { return clamp_margin_; }
  double min_kink_margin() const { return std::min(relu_margin_, clamp_margin_); }
  void note_relu_margin(double d) { relu_margin_ = std::min(relu_margin_, d); }
  void note_clamp_margin(double d) { clamp_margin_ = std::min(clamp_margin_, d); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    long param_index = -1;
    Backward backward;
  };

  Var leaf(Matrix m, bool requires_grad, long param_index) {
    if (!m.all_finite()) throw std::domain_error("non-finite value entering the graph");
    Node n;
    n.value = std::move(m);
    n.requires_grad = requires_grad;
    n.param_index = param_index;
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
  double relu_margin_ = std::numeric_limits<double>::infinity();
  double clamp_margin_ = std::numeric_limits<double>::infinity();
  mutable Matrix zero_cache_;
};

inline const Matrix& value(Var v) { return v.graph->value(v); }

// ---------------------------------------------------------------------------
// Primitives

inline Var matmul(Var a, Var b) {
  const Matrix& A = value(a);
  const Matrix& B = value(b);
  if (A.cols() != B.rows()) throw std::invalid_argument("matmul: inner dimensions differ");
  Var parents[] = {a, b};
  return a.graph->record(diff::matmul(A, B), parents, [a, b](Graph& g, const Matrix& go) {
    if (g.requires_grad(a)) g.accumulate(a, matmul_nt(go, g.value(b)));
    if (g.requires_grad(b)) g.accumulate(b, matmul_tn(g.value(a), go));
  });
}

namespace detail {
template <typename F>
Matrix map(const Matrix& a, F f) {
  Matrix out(a.rows(), a.cols());
  for (std::size_t k = 0; k < a.size(); ++k) out[k] = f(a[k]);
  return out;
}
inline void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) throw std::invalid_argument(std::string(op) + ": shape mismatch");
}
}  // namespace detail

inline Var add(Var a, Var b) {
  detail::require_same_shape(value(a), value(b), "add");
  Matrix out = value(a);
  out.add_in_place(value(b));
  Var parents[] = {a, b};
  return a.graph->record(std::move(out), parents, [a, b](Graph& g, const Matrix& go) {
    g.accumulate(a, go);
    g.accumulate(b, go);
  });
}

inline Var scalar_mul(Var a, double s) {
  Var parents[] = {a};
  return a.graph->record(detail::map(value(a), [s](double x) { return s * x; }), parents,
                         [a, s](Graph& g, const Matrix& go) { g.accumulate(a, detail::map(go, [s](double x) { return s * x; })); });
}

inline Var neg(Var a) { return scalar_mul(a, -1.0); }

inline Var sub(Var a, Var b) { return add(a, neg(b)); }

inline Var add_scalar(Var a, double s) {
  Var parents[] = {a};
  return a.graph->record(detail::map(value(a), [s](double x) { return x + s; }), parents,
                         [a](Graph& g, const Matrix& go) { g.accumulate(a, go); });
}

inline Var hadamard(Var a, Var b) {
  detail::require_same_shape(value(a), value(b), "hadamard");
  const Matrix& A = value(a);
  const Matrix& B = value(b);
  Matrix out(A.rows(), A.cols());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = A[k] * B[k];
  Var parents[] = {a, b};
  return a.graph->record(std::move(out), parents, [a, b](Graph& g, const Matrix& go) {
    const Matrix& A = g.value(a);
    const Matrix& B = g.value(b);
    if (g.requires_grad(a)) {
      Matrix ga(go.rows(), go.cols());
      for (std::size_t k = 0; k < ga.size(); ++k) ga[k] = go[k] * B[k];
      g.accumulate(a, ga);
    }
    if (g.requires_grad(b)) {
      Matrix gb(go.rows(), go.cols());
      for (std::size_t k = 0; k < gb.size(); ++k) gb[k] = go[k] * A[k];
      g.accumulate(b, gb);
    }
  });
}

/// Elementwise max(x, 0); derivative 0 at x = 0.
inline Var relu(Var a) {
  const Matrix& A = value(a);
  double margin = std::numeric_limits<double>::infinity();
  for (double x : A.values()) margin = std::min(margin, std::abs(x));
  a.graph->note_relu_margin(margin);
  Var parents[] = {a};
  return a.graph->record(detail::map(A, [](double x) { return x > 0 ? x : 0.0; }), parents,
                         [a](Graph& g, const Matrix& go) {
                           const Matrix& A = g.value(a);
                           Matrix ga(go.rows(), go.cols());
                           for (std::size_t k = 0; k < ga.size(); ++k) ga[k] = A[k] > 0 ? go[k] : 0.0;
                           g.accumulate(a, ga);
                         });
}

/// Elementwise clip to [lo, hi]; derivative 1 strictly inside, 0 elsewhere.
inline Var clamp(Var a, double lo, double hi) {
  if (!(lo <= hi)) throw std::invalid_argument("clamp: lo > hi");
  const Matrix& A = value(a);
  double margin = std::numeric_limits<double>::infinity();
  for (double x : A.values()) margin = std::min({margin, std::abs(x - lo), std::abs(x - hi)});
  if (hi > lo) margin /= hi - lo;
  a.graph->note_clamp_margin(margin);
  Var parents[] = {a};
  return a.graph->record(detail::map(A, [lo, hi](double x) { return std::clamp(x, lo, hi); }), parents,
                         [a, lo, hi](Graph& g, const Matrix& go) {
                           const Matrix& A = g.value(a);
                           Matrix ga(go.rows(), go.cols());
                           for (std::size_t k = 0; k < ga.size(); ++k) ga[k] = (A[k] > lo && A[k] < hi) ? go[k] : 0.0;
                           g.accumulate(a, ga);
                         });
}

/// Mean elementwise Huber loss: 0.5 d^2 for |d| <= delta, delta (|d| - delta/2) otherwise.
inline Var huber(Var a, Var b, double delta = 1.0) {
  detail::require_same_shape(value(a), value(b), "huber");
  if (!(delta > 0)) throw std::invalid_argument("huber: delta must be positive");
  const Matrix& A = value(a);
  const Matrix& B = value(b);
  const double n = static_cast<double>(A.size());
  double acc = 0;
  for (std::size_t k = 0; k < A.size(); ++k) {
    const double d = std::abs(A[k] - B[k]);
    acc += d <= delta ? 0.5 * d * d : delta * (d - 0.5 * delta);
  }
  Var parents[] = {a, b};
  return a.graph->record(Matrix(1, 1, acc / n), parents, [a, b, delta, n](Graph& g, const Matrix& go) {
    const Matrix& A = g.value(a);
    const Matrix& B = g.value(b);
    Matrix ga(A.rows(), A.cols());
    for (std::size_t k = 0; k < ga.size(); ++k) {
      const double d = A[k] - B[k];
      ga[k] = go[0] * std::clamp(d, -delta, delta) / n;
    }
    if (g.requires_grad(a)) g.accumulate(a, ga);
    if (g.requires_grad(b)) g.accumulate(b, detail::map(ga, [](double x) { return -x; }));
  });
}

/// Horizontal concatenation [a, b] (same row count).
inline Var concat_cols(Var a, Var b) {
  const Matrix& A = value(a);
  const Matrix& B = value(b);
  if (A.rows() != B.rows()) throw std::invalid_argument("concat_cols: row counts differ");
  Matrix out(A.rows(), A.cols() + B.cols());
  for (std::size_t r = 0; r < A.rows(); ++r) {
    for (std::size_t c = 0; c < A.cols(); ++c) out(r, c) = A(r, c);
    for (std::size_t c = 0; c < B.cols(); ++c) out(r, A.cols() + c) = B(r, c);
  }
  Var parents[] = {a, b};
  const std::size_t ac = A.cols(), bc = B.cols();
  return a.graph->record(std::move(out), parents, [a, b, ac, bc](Graph& g, const Matrix& go) {
    Matrix ga(go.rows(), ac), gb(go.rows(), bc);
    for (std::size_t r = 0; r < go.rows(); ++r) {
      for (std::size_t c = 0; c < ac; ++c) ga(r, c) = go(r, c);
      for (std::size_t c = 0; c < bc; ++c) gb(r, c) = go(r, ac + c);
    }
    g.accumulate(a, ga);
    g.accumulate(b, gb);
  });
}

/// Column j of a as an (rows x 1) matrix.
inline Var column(Var a, std::size_t j) {
  const Matrix& A = value(a);
  if (j >= A.cols()) throw std::invalid_argument("column: index out of range");
  Matrix out(A.rows(), 1);
  for (std::size_t r = 0; r < A.rows(); ++r) out(r, 0) = A(r, j);
  Var parents[] = {a};
  const std::size_t cols = A.cols();
  return a.graph->record(std::move(out), parents, [a, j, cols](Graph& g, const Matrix& go) {
    Matrix ga(go.rows(), cols);
    for (std::size_t r = 0; r < go.rows(); ++r) ga(r, j) = go(r, 0);
    g.accumulate(a, ga);
  });
}

/// Same values, new shape (row-major order preserved).
inline Var reshape(Var a, std::size_t rows, std::size_t cols) {
  const Matrix& A = value(a);
  if (rows * cols != A.size()) throw std::invalid_argument("reshape: size mismatch");
  Var parents[] = {a};
  const std::size_t r0 = A.rows(), c0 = A.cols();
  return a.graph->record(Matrix(rows, cols, std::vector<double>(A.values().begin(), A.values().end())), parents,
                         [a, r0, c0](Graph& g, const Matrix& go) {
                           g.accumulate(a, Matrix(r0, c0, std::vector<double>(go.values().begin(), go.values().end())));
                         });
}

/// a + 1 * bias, with bias a 1 x cols row vector.
inline Var add_row_bias(Var a, Var bias) {
  const Matrix& A = value(a);
  const Matrix& b = value(bias);
  if (b.rows() != 1 || b.cols() != A.cols()) throw std::invalid_argument("add_row_bias: bias must be 1 x cols");
  Matrix out = A;
  for (std::size_t r = 0; r < A.rows(); ++r)
    for (std::size_t c = 0; c < A.cols(); ++c) out(r, c) += b(0, c);
  Var parents[] = {a, bias};
  return a.graph->record(std::move(out), parents, [a, bias](Graph& g, const Matrix& go) {
    g.accumulate(a, go);
    Matrix gb(1, go.cols());
    for (std::size_t r = 0; r < go.rows(); ++r)
      for (std::size_t c = 0; c < go.cols(); ++c) gb(0, c) += go(r, c);
    g.accumulate(bias, gb);
  });
}

inline Var sum(Var a) {
  double acc = 0;
  for (double x : value(a).values()) acc += x;
  Var parents[] = {a};
  const std::size_t r = value(a).rows(), c = value(a).cols();
  return a.graph->record(Matrix(1, 1, acc), parents,
                         [a, r, c](Graph& g, const Matrix& go) { g.accumulate(a, Matrix(r, c, go[0])); });
}

inline Var reduce_mean(Var a) {
  const double n = static_cast<double>(value(a).size());
  if (n == 0) throw std::invalid_argument("reduce_mean: empty input");
  return scalar_mul(sum(a), 1.0 / n);
}

/// Op with a caller-supplied vector-Jacobian product. `vjp` receives the
/// output gradient and returns one gradient per input (empty = no contribution).
inline Var custom(std::span<const Var> inputs, Matrix out,
                  std::function<std::vector<Matrix>(const Matrix& out_grad)> vjp) {
  if (inputs.empty()) throw std::invalid_argument("custom: needs at least one input");
  std::vector<Var> ins(inputs.begin(), inputs.end());
  return ins.front().graph->record(std::move(out), inputs, [ins, vjp = std::move(vjp)](Graph& g, const Matrix& go) {
    auto grads = vjp(go);
    for (std::size_t k = 0; k < ins.size() && k < grads.size(); ++k)
      if (!grads[k].empty()) g.accumulate(ins[k], grads[k]);
  });
}

// ---------------------------------------------------------------------------
// Adam with coupled l2 penalty

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double l2 = 1e-6;
};

struct AdamState {
  std::vector<Matrix> m, v;
  std::int64_t step = 0;

  explicit AdamState(const ParamSet& params) : m(zero_grads(params)), v(zero_grads(params)) {}
};

/// One Adam update. Parameters with a zero learning rate are left untouched
/// together with their moment estimates.
inline void adam_step(ParamSet& params, const GradSet& grads, AdamState& state, std::span<const double> lr,
                      const AdamConfig& cfg = {}) {
  if (grads.size() != params.size() || lr.size() != params.size() || state.m.size() != params.size())
    throw std::invalid_argument("adam_step: size mismatch");
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (lr[k] == 0) continue;
    auto& theta = params[k].value;
    const auto& g = grads[k];
    if (!g.same_shape(theta)) throw std::invalid_argument("adam_step: gradient shape mismatch");
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t e = 0; e < theta.size(); ++e) {
      const double ge = g[e] + cfg.l2 * theta[e];
      m[e] = cfg.beta1 * m[e] + (1.0 - cfg.beta1) * ge;
      v[e] = cfg.beta2 * v[e] + (1.0 - cfg.beta2) * ge * ge;
      theta[e] -= lr[k] * (m[e] / c1) / (std::sqrt(v[e] / c2) + cfg.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Checkpoints: versioned JSON container of named tensors. Doubles are written
// in shortest round-trip form, so loading reproduces every bit.

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json params_to_json(const ParamSet& params) {
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& p : params)
    tensors.push_back({{"name", p.name},
                       {"group", p.group},
                       {"rows", p.value.rows()},
                       {"cols", p.value.cols()},
                       {"values", std::vector<double>(p.value.values().begin(), p.value.values().end())}});
  return tensors;
}

inline ParamSet params_from_json(const nlohmann::json& tensors) {
  ParamSet params;
  for (const auto& t : tensors) {
    Parameter p;
    p.name = t.at("name").get<std::string>();
    p.group = t.value("group", 0);
    p.value = Matrix(t.at("rows").get<std::size_t>(), t.at("cols").get<std::size_t>(),
                     t.at("values").get<std::vector<double>>());
    params.push_back(std::move(p));
  }
  return params;
}

inline void save_checkpoint(const std::string& path, const ParamSet& params, const nlohmann::json& descriptor) {
  nlohmann::json doc{{"format", "usca-checkpoint"},
                     {"version", kCheckpointVersion},
                     {"architecture", descriptor},
                     {"tensors", params_to_json(params)}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out << doc.dump(1) << '\n';
  if (!out) throw std::runtime_error("failed writing checkpoint " + path);
}

struct Checkpoint {
  nlohmann::json architecture;
  ParamSet params;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  const auto doc = nlohmann::json::parse(in);
  if (doc.value("format", "") != "usca-checkpoint") throw std::runtime_error(path + ": not a checkpoint file");
  if (doc.value("version", 0) != kCheckpointVersion)
    throw std::runtime_error(path + ": unsupported checkpoint version");
  return {doc.at("architecture"), params_from_json(doc.at("tensors"))};
}

}  // namespace usca::diff

#pragma once

// Loss assembly and training procedures for the learned allocators.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "usca/diff.hpp"
#include "usca/metrics.hpp"
#include "usca/model.hpp"
#include "usca/types.hpp"

namespace usca::train {

using diff::Graph;
using diff::Matrix;
using diff::Var;

/// WSEE of an L x 1 power node as a 1 x 1 node with the analytic gradient.
inline Var wsee_node(Var p, const CsiMatrix& H, const SystemConfig& cfg) {
  const auto pv = diff::value(p).values();
  const double total = metrics::wsee_total(pv, H, cfg);
  PowerVector at(pv.begin(), pv.end());
  Var ins[] = {p};
  return diff::custom(ins, Matrix(1, 1, total), [at = std::move(at), &H, &cfg](const Matrix& go) {
    const auto g = metrics::wsee_grad(at, H, cfg);
    Matrix out(g.size(), 1);
    for (std::size_t i = 0; i < g.size(); ++i) out[i] = go[0] * g[i];
    return std::vector<Matrix>{std::move(out)};
  });
}

struct LossConfig {
  double eta_m = 0.0;       // monotonicity regularizer weight
  double eta_s = 0.0;       // supervision weight
  double lambda_s = 1e3;    // weight of the self-supervised Huber term inside the regularizer
  double delta_p_db = 1.0;  // the perturbed budget is Pm one grid step (dB) lower
  double huber_delta = 1.0;
  bool selective_supervision = false;  // supervise only samples worse than their label

  void validate() const {
    if (eta_m < 0 || eta_s < 0 || lambda_s < 0) throw std::invalid_argument("loss weights must be >= 0");
    if (!(delta_p_db > 0)) throw std::invalid_argument("delta P must be positive");
    if (!(huber_delta > 0)) throw std::invalid_argument("huber delta must be positive");
  }
};

/// Channels, a budget grid, and optional labels[channel][pm index].
struct TrainingData {
  std::vector<CsiMatrix> channels;
  std::vector<double> pm_grid_dbw;
  std::vector<std::vector<PowerVector>> labels;

  std::size_t sample_count() const { return channels.size() * pm_grid_dbw.size(); }
  bool has_label(std::size_t c, std::size_t k) const {
    return c < labels.size() && k < labels[c].size() && !labels[c][k].empty();
  }
};

struct SampleRef {
  std::size_t channel = 0;
  std::size_t pm_index = 0;
};

inline std::vector<SampleRef> all_samples(const TrainingData& data) {
  std::vector<SampleRef> out;
  out.reserve(data.sample_count());
  for (std::size_t c = 0; c < data.channels.size(); ++c)
    for (std::size_t k = 0; k < data.pm_grid_dbw.size(); ++k) out.push_back({c, k});
  return out;
}

struct SampleTerms {
  Var loss;
  double wsee = 0;
  double regularizer = 0;
  bool supervised = false;
};

/// Loss of one channel-constraint sample:
///   -WSEE(p) + eta_m (R1 + lambda_s R2) + eta_s Huber(p, p_label)
/// with R1 = [WSEE(p_minus) - WSEE(p)]_+ and R2 = [R1 > 0] Huber(p / Pm, p_minus / Pm).
inline SampleTerms sample_loss(model::Binding& b, const model::Model& m, const model::ChannelContext& ctx,
                               const CsiMatrix& H, double pm_dbw, const PowerVector* label, const SystemConfig& cfg,
                               const LossConfig& lc, int depth = -1) {
  Graph& g = b.graph();
  const double pm = dbw_to_watts(pm_dbw);
  model::ForwardOptions fo;
  fo.depth = depth;
  Var p = model::forward(b, m, ctx, pm, fo);
  Var w = wsee_node(p, H, cfg);
  SampleTerms out;
  out.wsee = diff::value(w)[0];
  out.loss = diff::neg(w);

  if (lc.eta_m > 0) {
    const double pm_minus = dbw_to_watts(pm_dbw - lc.delta_p_db);
    Var p_minus = model::forward(b, m, ctx, pm_minus, fo);
    Var r1 = diff::relu(diff::sub(wsee_node(p_minus, H, cfg), w));
    Var reg = r1;
    if (diff::value(r1)[0] > 0) {
      Var r2 = diff::huber(diff::scalar_mul(p, 1.0 / pm), diff::scalar_mul(p_minus, 1.0 / pm), lc.huber_delta);
      reg = diff::add(r1, diff::scalar_mul(r2, lc.lambda_s));
    }
    out.regularizer = diff::value(reg)[0];
    out.loss = diff::add(out.loss, diff::scalar_mul(reg, lc.eta_m));
  }

  if (lc.eta_s > 0) {
    if (!label || label->size() != H.users()) throw std::invalid_argument("supervised loss needs a label for every sample");
    bool apply = true;
    if (lc.selective_supervision) apply = out.wsee < metrics::wsee_total(*label, H, cfg);
    if (apply) {
      Var target = g.constant(Matrix::column(*label));
      out.loss = diff::add(out.loss, diff::scalar_mul(diff::huber(p, target, lc.huber_delta), lc.eta_s));
      out.supervised = true;
    }
  }
  return out;
}

inline void check_labels(const TrainingData& data, std::span<const SampleRef> batch, const LossConfig& lc) {
  if (lc.eta_s <= 0) return;
  for (const auto& s : batch)
    if (!data.has_label(s.channel, s.pm_index))
      throw std::invalid_argument("supervision enabled but channel " + std::to_string(s.channel) + " at " +
                                  std::to_string(data.pm_grid_dbw[s.pm_index]) + " dBW has no label");
}

/// Mean loss over a batch, built into one graph.
inline Var loss_total(model::Binding& b, const model::Model& m, const TrainingData& data,
                      std::span<const SampleRef> batch, const SystemConfig& cfg, const LossConfig& lc,
                      int depth = -1) {
  if (batch.empty()) throw std::invalid_argument("loss_total: empty batch");
  lc.validate();
  check_labels(data, batch, lc);
  Graph& g = b.graph();
  std::optional<Var> acc;
  std::size_t last_channel = static_cast<std::size_t>(-1);
  model::ChannelContext ctx;
  for (const auto& s : batch) {
    if (s.channel != last_channel) {
      ctx = model::make_context(g, data.channels[s.channel], m.arch.variant);
      last_channel = s.channel;
    }
    const PowerVector* label = data.has_label(s.channel, s.pm_index) ? &data.labels[s.channel][s.pm_index] : nullptr;
    auto terms = sample_loss(b, m, ctx, data.channels[s.channel], data.pm_grid_dbw[s.pm_index], label, cfg, lc, depth);
    acc = acc ? diff::add(*acc, terms.loss) : terms.loss;
  }
  return diff::scalar_mul(*acc, 1.0 / static_cast<double>(batch.size()));
}

struct BatchResult {
  double loss = 0;
  diff::GradSet grads;
};

/// Loss and parameter gradients of a minibatch. Members are split into
/// `workers` contiguous shards, each with its own graph; gradients are summed
/// in shard order.
inline BatchResult batch_gradients(const model::Model& m, const std::vector<bool>& trainable, const TrainingData& data,
                                   std::span<const SampleRef> batch, const SystemConfig& cfg, const LossConfig& lc,
                                   int depth, unsigned workers) {
  check_labels(data, batch, lc);
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(batch.size())));
  std::vector<BatchResult> shard(workers);
  const double scale = 1.0 / static_cast<double>(batch.size());
  auto run = [&](unsigned w) {
    const std::size_t lo = batch.size() * w / workers, hi = batch.size() * (w + 1) / workers;
    Graph g;
    model::Binding b(g, m.params, trainable);
    auto part = loss_total(b, m, data, batch.subspan(lo, hi - lo), cfg, lc, depth);
    Var scaled = diff::scalar_mul(part, static_cast<double>(hi - lo) * scale);
    g.backward(scaled);
    shard[w].loss = diff::value(scaled)[0];
    shard[w].grads = diff::zero_grads(m.params);
    g.accumulate_param_grads(shard[w].grads);
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::thread> threads;
    for (unsigned w = 0; w < workers; ++w) threads.emplace_back(run, w);
    for (auto& t : threads) t.join();
  }
  BatchResult out{0.0, diff::zero_grads(m.params)};
  for (auto& s : shard) {
    out.loss += s.loss;
    for (std::size_t k = 0; k < out.grads.size(); ++k) out.grads[k].add_in_place(s.grads[k]);
  }
  return out;
}

/// Mean WSEE over every channel and budget of a data set.
inline double mean_wsee(const model::Model& m, const TrainingData& data, const SystemConfig& cfg, int depth = -1) {
  double acc = 0;
  model::ForwardOptions fo;
  fo.depth = depth;
  for (const auto& H : data.channels) {
    Graph g;
    model::Binding b(g, m.params);
    const auto ctx = model::make_context(g, H, m.arch.variant);
    for (double dbw : data.pm_grid_dbw) {
      Var p = model::forward(b, m, ctx, dbw_to_watts(dbw), fo);
      acc += metrics::wsee_total(diff::value(p).values(), H, cfg);
    }
  }
  return acc / static_cast<double>(data.sample_count());
}

struct TrainSchedule {
  double l0 = 1e-3;
  double decay = 0.6;        // d
  double decay_last = 0.4;   // d_l
  int max_epochs = 1000;
  int patience_step1 = 50;   // n1
  int patience_step2 = 100;  // n2
  int minibatches = 50;
  double finetune_lr = 5e-5; // l_f
  double l2 = 1e-6;
  unsigned workers = 1;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(l0 > 0) || !(decay > 0) || !(decay_last > 0) || !(finetune_lr > 0))
      throw std::invalid_argument("learning rates and decays must be positive");
    if (max_epochs < 0 || patience_step1 < 1 || patience_step2 < 1 || minibatches < 1)
      throw std::invalid_argument("invalid epoch/patience/minibatch settings");
  }
};

/// Step-2 learning rate of block t while training depth tau: d^(tau-t) d_l l0.
inline double block_rate(const TrainSchedule& s, int tau, int t) {
  return std::pow(s.decay, tau - t) * s.decay_last * s.l0;
}

struct LogRow {
  int epoch = 0;
  std::string phase;
  int block = 0;
  double train_loss = 0;
  double val_wsee = 0;
  std::vector<double> block_rates;
};

inline void write_log_header(std::ostream& os) { os << "epoch,phase,block,train_loss,val_wsee,lr\n"; }

inline void write_log_row(std::ostream& os, const LogRow& r) {
  os << r.epoch << ',' << r.phase << ',' << r.block << ',';
  const auto prec = os.precision(17);
  os << r.train_loss << ',' << r.val_wsee << ',';
  for (std::size_t k = 0; k < r.block_rates.size(); ++k) os << (k ? ";" : "") << r.block_rates[k];
  os.precision(prec);
  os << '\n';
}

struct Milestone {
  int block = 0;
  double val_wsee = 0;
  diff::ParamSet snapshot;
};

using LogSink = std::function<void(const LogRow&)>;

struct PhaseSpec {
  std::string name;
  int tau = 1;                      // forward depth
  std::vector<double> group_rates;  // index t-1 -> rate of block t (0 = frozen)
  int patience = 50;
  int max_epochs = 1000;
};

struct PhaseResult {
  double best_val = 0;
  int epochs = 0;
};

/// Trains with early stopping on validation WSEE and leaves the model at the
/// best snapshot (the starting point counts as a candidate).
inline PhaseResult run_phase(model::Model& m, const TrainingData& train, const TrainingData& val,
                             const SystemConfig& cfg, const LossConfig& lc, const TrainSchedule& sched,
                             const PhaseSpec& phase, std::mt19937_64& rng, const LogSink& log) {
  const std::size_t P = m.params.size();
  std::vector<double> lr(P, 0.0);
  std::vector<bool> trainable(P, false);
  for (std::size_t k = 0; k < P; ++k) {
    const int grp = m.params[k].group;
    if (grp >= 1 && grp <= static_cast<int>(phase.group_rates.size())) lr[k] = phase.group_rates[grp - 1];
    trainable[k] = lr[k] > 0;
  }
  diff::AdamState adam(m.params);
  diff::AdamConfig acfg;
  acfg.l2 = sched.l2;

  PhaseResult result;
  result.best_val = mean_wsee(m, val, cfg, phase.tau);
  diff::ParamSet best = m.params;
  auto samples = all_samples(train);
  const std::size_t nb = std::min<std::size_t>(static_cast<std::size_t>(sched.minibatches), samples.size());
  int since_best = 0;
  for (int epoch = 1; epoch <= phase.max_epochs; ++epoch) {
    std::shuffle(samples.begin(), samples.end(), rng);
    double epoch_loss = 0;
    for (std::size_t k = 0; k < nb; ++k) {
      const std::size_t lo = samples.size() * k / nb, hi = samples.size() * (k + 1) / nb;
      std::span<const SampleRef> batch(samples.data() + lo, hi - lo);
      auto br = batch_gradients(m, trainable, train, batch, cfg, lc, phase.tau, sched.workers);
      diff::adam_step(m.params, br.grads, adam, lr, acfg);
      epoch_loss += br.loss * static_cast<double>(hi - lo);
    }
    const double v = mean_wsee(m, val, cfg, phase.tau);
    result.epochs = epoch;
    if (log) log({epoch, phase.name, phase.tau, epoch_loss / samples.size(), v, phase.group_rates});
    if (v > result.best_val) {
      result.best_val = v;
      best = m.params;
      since_best = 0;
    } else if (++since_best >= phase.patience) {
      break;
    }
  }
  m.params = std::move(best);
  return result;
}

struct ProgressiveResult {
  std::vector<Milestone> milestones;
};

/// Block-by-block training: for each depth tau, first the new block alone at
/// l0 (the embedding belongs to block 1), then blocks 1..tau together with
/// depth-decayed rates.
inline ProgressiveResult progressive_train(model::Model& m, const TrainingData& train, const TrainingData& val,
                                           const SystemConfig& cfg, const LossConfig& lc, const TrainSchedule& sched,
                                           const LogSink& log = {}) {
  sched.validate();
  lc.validate();
  std::mt19937_64 rng(sched.seed);
  ProgressiveResult out;
  const int T = m.arch.variant == model::Variant::PlainGcn ? 1 : m.arch.blocks;
  for (int tau = 1; tau <= T; ++tau) {
    PhaseSpec step1{"step1", tau, std::vector<double>(tau, 0.0), sched.patience_step1, sched.max_epochs};
    step1.group_rates[tau - 1] = sched.l0;
    run_phase(m, train, val, cfg, lc, sched, step1, rng, log);

    PhaseSpec step2{"step2", tau, std::vector<double>(tau, 0.0), sched.patience_step2, sched.max_epochs};
    for (int t = 1; t <= tau; ++t) step2.group_rates[t - 1] = block_rate(sched, tau, t);
    const auto r2 = run_phase(m, train, val, cfg, lc, sched, step2, rng, log);
    out.milestones.push_back({tau, r2.best_val, m.params});
  }
  return out;
}

/// End-to-end training of a pretrained model, e.g. on a new channel distribution.
struct FineTuneOptions {
  double lr = 5e-5;
  int epochs = 100;
  int patience = 0;  // 0 disables early stopping; needs validation data otherwise
  int minibatches = 50;
  LossConfig loss;
  double l2 = 1e-6;
  unsigned workers = 1;
  std::uint64_t seed = 0;
};

inline void fine_tune(model::Model& m, const TrainingData& data, const SystemConfig& cfg, const FineTuneOptions& opt,
                      const TrainingData* val = nullptr, const LogSink& log = {}) {
  if (opt.loss.eta_s > 0) {
    if (data.labels.size() != data.channels.size())
      throw std::invalid_argument("fine_tune: label set does not match the channel set");
    for (const auto& row : data.labels)
      if (row.size() != data.pm_grid_dbw.size())
        throw std::invalid_argument("fine_tune: label set does not match the budget grid");
  }
  if (opt.epochs <= 0) return;
  TrainSchedule sched;
  sched.minibatches = opt.minibatches;
  sched.l2 = opt.l2;
  sched.workers = opt.workers;
  LossConfig lc = opt.loss;
  lc.selective_supervision = true;
  const int T = m.arch.variant == model::Variant::PlainGcn ? 1 : m.arch.blocks;
  PhaseSpec phase{"finetune", T, std::vector<double>(T, opt.lr), opt.patience > 0 ? opt.patience : opt.epochs + 1,
                  opt.epochs};
  std::mt19937_64 rng(opt.seed);
  if (val) {
    run_phase(m, data, *val, cfg, lc, sched, phase, rng, log);
    return;
  }
  // Without validation data every epoch is kept.
  const std::size_t P = m.params.size();
  std::vector<double> lr(P, opt.lr);
  std::vector<bool> trainable(P, true);
  diff::AdamState adam(m.params);
  diff::AdamConfig acfg;
  acfg.l2 = opt.l2;
  auto samples = all_samples(data);
  const std::size_t nb = std::min<std::size_t>(static_cast<std::size_t>(opt.minibatches), samples.size());
  for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
    std::shuffle(samples.begin(), samples.end(), rng);
    double epoch_loss = 0;
    for (std::size_t k = 0; k < nb; ++k) {
      const std::size_t lo = samples.size() * k / nb, hi = samples.size() * (k + 1) / nb;
      std::span<const SampleRef> batch(samples.data() + lo, hi - lo);
      auto br = batch_gradients(m, trainable, data, batch, cfg, lc, T, opt.workers);
      diff::adam_step(m.params, br.grads, adam, lr, acfg);
      epoch_loss += br.loss * static_cast<double>(hi - lo);
    }
    if (log) log({epoch, "finetune", T, epoch_loss / samples.size(), 0.0, phase.group_rates});
  }
}

/// Budget indices kept when sampling every `stride_db` dB from the first grid value.
inline std::vector<std::size_t> select_pm_stride(std::span<const double> grid_dbw, int stride_db) {
  if (stride_db < 1) throw std::invalid_argument("stride must be >= 1 dB");
  std::vector<std::size_t> keep;
  for (std::size_t k = 0; k < grid_dbw.size(); ++k) {
    const long offset = std::lround(grid_dbw[k] - grid_dbw.front());
    if (offset % stride_db == 0) keep.push_back(k);
  }
  return keep;
}

/// Random subset of round(fraction * n) channel indices, in ascending order.
inline std::vector<std::size_t> select_channel_fraction(std::size_t n, double fraction, std::uint64_t seed) {
  if (!(fraction > 0 && fraction <= 1)) throw std::invalid_argument("channel fraction must be in (0, 1]");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(fraction * static_cast<double>(n)))));
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// Restricts a data set to the given channels and budget indices (labels follow).
inline TrainingData subset(const TrainingData& data, std::span<const std::size_t> channels,
                           std::span<const std::size_t> pm_indices) {
  TrainingData out;
  for (std::size_t k : pm_indices) out.pm_grid_dbw.push_back(data.pm_grid_dbw.at(k));
  for (std::size_t c : channels) {
    out.channels.push_back(data.channels.at(c));
    if (!data.labels.empty()) {
      std::vector<PowerVector> row;
      for (std::size_t k : pm_indices) row.push_back(data.has_label(c, k) ? data.labels[c][k] : PowerVector{});
      out.labels.push_back(std::move(row));
    }
  }
  return out;
}

}  // namespace usca::train

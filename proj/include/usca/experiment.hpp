#pragma once

// Experiment orchestration: running allocators over (channel, budget) grids,
// monotone post-processing, summary statistics, CSV interchange and timing.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <future>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "usca/metrics.hpp"
#include "usca/model.hpp"
#include "usca/netgen.hpp"
#include "usca/oracle.hpp"
#include "usca/sca.hpp"
#include "usca/types.hpp"

namespace usca::experiment {

inline constexpr const char* kResultsSchema = "usca-results/1";

/// Integer dBW budgets from lo to hi inclusive.
inline std::vector<double> pm_grid(int lo = -40, int hi = 10, int step = 1) {
  if (step < 1 || hi < lo) throw std::invalid_argument("invalid budget grid");
  std::vector<double> g;
  for (int v = lo; v <= hi; v += step) g.push_back(v);
  return g;
}

inline const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> names{"sca", "tr-sca", "usca", "mlp-usca", "gcn", "max-pow", "oracle"};
  return names;
}

inline bool is_learned(const std::string& method) {
  return method == "usca" || method == "mlp-usca" || method == "gcn";
}

/// Evaluation method name of a learned model variant.
inline std::string method_for(model::Variant v) {
  switch (v) {
    case model::Variant::GcnUsca: return "usca";
    case model::Variant::MlpUsca: return "mlp-usca";
    case model::Variant::PlainGcn: return "gcn";
  }
  return "usca";
}

struct ResultRow {
  std::string method;
  std::size_t channel = 0;
  double pm_dbw = 0;
  double wsee = 0;
  double time_s = 0;
  PowerVector p;
};

struct EvaluateOptions {
  std::vector<std::string> methods;
  std::vector<double> pm_grid_dbw = pm_grid();
  std::map<std::string, const model::Model*> models;  // learned method -> model
  oracle::GridSpec oracle_grid{101};
  bool envelope = false;
  unsigned workers = 1;  // channels evaluated concurrently; timing columns are only meaningful with 1
};

class MissingModel : public std::runtime_error {
 public:
  explicit MissingModel(const std::string& method)
      : std::runtime_error("no checkpoint given for learned method '" + method + "'") {}
};

namespace detail {
using Clock = std::chrono::steady_clock;
inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}
}  // namespace detail

/// Rows for one method on one channel, in grid order.
inline std::vector<ResultRow> run_method(const std::string& method, const CsiMatrix& H, std::size_t channel,
                                         const SystemConfig& cfg, const EvaluateOptions& opt) {
  std::vector<ResultRow> rows;
  const auto& grid = opt.pm_grid_dbw;
  auto push = [&](double dbw, PowerVector p, double t) {
    const double v = metrics::wsee_total(p, H, cfg);
    rows.push_back({method, channel, dbw, v, t, std::move(p)});
  };
  if (method == "sca" || method == "tr-sca") {
    const auto limits = method == "sca" ? sca::kFullLimits : sca::kTruncatedLimits;
    for (std::size_t k = 1; k < grid.size(); ++k)
      if (!(grid[k] > grid[k - 1])) throw std::invalid_argument("sca needs an increasing budget grid");
    PowerVector start;
    for (std::size_t k = 0; k < grid.size(); ++k) {
      const double pm = dbw_to_watts(grid[k]);
      if (k == 0) start.assign(H.users(), pm);
      const auto t0 = detail::Clock::now();
      auto p = sca::sca_single(H, cfg, pm, start, limits);
      const double t = detail::seconds_since(t0);
      start = p;
      push(grid[k], std::move(p), t);
    }
  } else if (method == "max-pow") {
    for (double dbw : grid) push(dbw, model::max_pow(dbw_to_watts(dbw), H.users()), 0.0);
  } else if (method == "oracle") {
    for (double dbw : grid) {
      const auto t0 = detail::Clock::now();
      auto r = oracle::grid_search_wsee(H, dbw_to_watts(dbw), cfg, opt.oracle_grid);
      push(dbw, std::move(r.p), detail::seconds_since(t0));
    }
  } else if (is_learned(method)) {
    auto it = opt.models.find(method);
    if (it == opt.models.end() || !it->second) throw MissingModel(method);
    const model::Model& m = *it->second;
    diff::Graph g;
    model::Binding b(g, m.params);
    const auto t_ctx = detail::Clock::now();
    const auto ctx = model::make_context(g, H, m.arch.variant);
    const double ctx_time = detail::seconds_since(t_ctx) / static_cast<double>(grid.size());
    for (double dbw : grid) {
      const auto t0 = detail::Clock::now();
      auto p = model::detail::to_vector(model::forward(b, m, ctx, dbw_to_watts(dbw)));
      push(dbw, std::move(p), detail::seconds_since(t0) + ctx_time);
    }
  } else {
    throw std::invalid_argument("unknown method '" + method + "'");
  }
  return rows;
}

/// Keeps the previous allocation whenever a larger budget would lower WSEE.
/// Rows must be one method on one channel in ascending budget order.
inline void apply_envelope(std::vector<ResultRow>& rows) {
  for (std::size_t k = 1; k < rows.size(); ++k) {
    if (rows[k].wsee < rows[k - 1].wsee) {
      rows[k].wsee = rows[k - 1].wsee;
      rows[k].p = rows[k - 1].p;
    }
  }
}

inline std::vector<ResultRow> evaluate(std::span<const CsiMatrix> channels, const SystemConfig& cfg,
                                       const EvaluateOptions& opt) {
  if (opt.methods.empty()) throw std::invalid_argument("no methods selected");
  for (const auto& m : opt.methods) {
    if (std::find(known_methods().begin(), known_methods().end(), m) == known_methods().end())
      throw std::invalid_argument("unknown method '" + m + "'");
    if (is_learned(m) && (!opt.models.count(m) || !opt.models.at(m))) throw MissingModel(m);
  }
  std::vector<ResultRow> all;
  const unsigned workers = std::max(1u, std::min<unsigned>(opt.workers, static_cast<unsigned>(channels.size())));
  for (const auto& method : opt.methods) {
    std::vector<std::vector<ResultRow>> per_channel(channels.size());
    auto run = [&](std::size_t c) {
      per_channel[c] = run_method(method, channels[c], c, cfg, opt);
      if (opt.envelope) apply_envelope(per_channel[c]);
    };
    if (workers == 1) {
      for (std::size_t c = 0; c < channels.size(); ++c) run(c);
    } else {
      std::vector<std::future<void>> jobs;
      for (unsigned w = 0; w < workers; ++w)
        jobs.push_back(std::async(std::launch::async, [&, w] {
          for (std::size_t c = w; c < channels.size(); c += workers) run(c);
        }));
      for (auto& j : jobs) j.get();
    }
    for (auto& rows : per_channel) all.insert(all.end(), rows.begin(), rows.end());
  }
  return all;
}

/// Fraction of (channel, adjacent budget) pairs where WSEE strictly drops.
inline double monotonicity_violation_rate(std::span<const ResultRow> rows, const std::string& method) {
  std::map<std::size_t, std::vector<std::pair<double, double>>> per_channel;
  for (const auto& r : rows)
    if (r.method == method) per_channel[r.channel].push_back({r.pm_dbw, r.wsee});
  std::size_t pairs = 0, violations = 0;
  for (auto& [c, series] : per_channel) {
    std::sort(series.begin(), series.end());
    for (std::size_t k = 1; k < series.size(); ++k) {
      ++pairs;
      if (series[k].second < series[k - 1].second) ++violations;
    }
  }
  return pairs ? static_cast<double>(violations) / static_cast<double>(pairs) : 0.0;
}

/// Per-method statistics: overall mean, mean per budget, mean per channel,
/// peak of the per-budget curve and the stationary level (5 < Pm <= 10 dBW).
inline nlohmann::json summarize(std::span<const ResultRow> rows) {
  nlohmann::json out;
  out["schema"] = kResultsSchema;
  std::vector<std::string> order;
  for (const auto& r : rows)
    if (std::find(order.begin(), order.end(), r.method) == order.end()) order.push_back(r.method);
  nlohmann::json methods = nlohmann::json::object();
  for (const auto& method : order) {
    double total = 0;
    std::size_t n = 0;
    std::map<double, std::pair<double, std::size_t>> per_pm;
    std::map<std::size_t, std::pair<double, std::size_t>> per_channel;
    double stationary = 0;
    std::size_t n_stationary = 0;
    double time = 0;
    for (const auto& r : rows) {
      if (r.method != method) continue;
      total += r.wsee;
      ++n;
      time += r.time_s;
      per_pm[r.pm_dbw].first += r.wsee;
      ++per_pm[r.pm_dbw].second;
      per_channel[r.channel].first += r.wsee;
      ++per_channel[r.channel].second;
      if (r.pm_dbw > 5 && r.pm_dbw <= 10) {
        stationary += r.wsee;
        ++n_stationary;
      }
    }
    nlohmann::json curve = nlohmann::json::array();
    double peak = -1;
    double peak_pm = 0;
    for (const auto& [pm, acc] : per_pm) {
      const double mean = acc.first / static_cast<double>(acc.second);
      curve.push_back({{"pm_dbw", pm}, {"wsee", mean}});
      if (mean > peak) {
        peak = mean;
        peak_pm = pm;
      }
    }
    nlohmann::json channels = nlohmann::json::array();
    for (const auto& [c, acc] : per_channel) channels.push_back(acc.first / static_cast<double>(acc.second));
    nlohmann::json m{{"mean_wsee", total / static_cast<double>(n)},
                     {"rows", n},
                     {"per_pm", curve},
                     {"per_channel", channels},
                     {"peak", {{"pm_dbw", peak_pm}, {"wsee", peak}}},
                     {"monotonicity_violation_rate", monotonicity_violation_rate(rows, method)},
                     {"total_time_s", time}};
    m["stationary"] = n_stationary ? nlohmann::json(stationary / static_cast<double>(n_stationary)) : nlohmann::json(nullptr);
    methods[method] = m;
  }
  out["methods"] = methods;
  return out;
}

// ---------------------------------------------------------------------------
// CSV: method,channel,pm_dbw,wsee,time_s,p_0,...,p_{L-1}

inline void write_results_csv(std::ostream& os, std::span<const ResultRow> rows) {
  std::size_t L = 0;
  for (const auto& r : rows) L = std::max(L, r.p.size());
  os << "method,channel,pm_dbw,wsee,time_s";
  for (std::size_t i = 0; i < L; ++i) os << ",p_" << i;
  os << '\n';
  const auto prec = os.precision(17);
  for (const auto& r : rows) {
    os << r.method << ',' << r.channel << ',' << r.pm_dbw << ',' << r.wsee << ',' << r.time_s;
    for (std::size_t i = 0; i < L; ++i) {
      os << ',';
      if (i < r.p.size()) os << r.p[i];
    }
    os << '\n';
  }
  os.precision(prec);
}

inline std::vector<ResultRow> read_results_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("results csv is empty");
  if (!line.starts_with("method,channel,pm_dbw,wsee,time_s"))
    throw std::runtime_error("results csv header does not match schema " + std::string(kResultsSchema));
  std::vector<ResultRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() < 5) throw std::runtime_error("malformed results row: " + line);
    ResultRow r;
    r.method = cells[0];
    r.channel = std::stoul(cells[1]);
    r.pm_dbw = std::stod(cells[2]);
    r.wsee = std::stod(cells[3]);
    r.time_s = std::stod(cells[4]);
    for (std::size_t k = 5; k < cells.size(); ++k)
      if (!cells[k].empty()) r.p.push_back(std::stod(cells[k]));
    rows.push_back(std::move(r));
  }
  return rows;
}

/// labels[channel][grid index] from the rows of one method; missing entries stay empty.
inline std::vector<std::vector<PowerVector>> labels_from_rows(std::span<const ResultRow> rows, const std::string& method,
                                                              std::size_t channels, std::span<const double> grid) {
  std::vector<std::vector<PowerVector>> labels(channels, std::vector<PowerVector>(grid.size()));
  for (const auto& r : rows) {
    if (r.method != method || r.channel >= channels) continue;
    for (std::size_t k = 0; k < grid.size(); ++k)
      if (std::abs(grid[k] - r.pm_dbw) < 1e-9) labels[r.channel][k] = r.p;
  }
  return labels;
}

// ---------------------------------------------------------------------------
// Timing

inline double median(std::vector<double> v) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Median wall-clock seconds to allocate one channel over the whole grid.
inline double time_method(const std::string& method, const CsiMatrix& H, const SystemConfig& cfg,
                          const EvaluateOptions& opt, int repeats) {
  std::vector<double> runs;
  for (int r = 0; r < std::max(1, repeats); ++r) {
    const auto t0 = detail::Clock::now();
    auto rows = run_method(method, H, 0, cfg, opt);
    runs.push_back(detail::seconds_since(t0));
  }
  return median(runs);
}

struct TrendFit {
  double residual_quadratic = 0;  // least squares of t = a + c L^2
  double residual_cubic = 0;      // least squares of t = a + c L^3
};

/// Compares two-parameter fits t = a + c L^k for k = 2 and k = 3.
inline TrendFit fit_power_trends(std::span<const double> users, std::span<const double> seconds) {
  auto fit = [&](double k) {
    const std::size_t n = users.size();
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double x = std::pow(users[i], k);
      sx += x;
      sy += seconds[i];
      sxx += x * x;
      sxy += x * seconds[i];
    }
    const double c = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    const double a = (sy - c * sx) / n;
    double res = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = seconds[i] - (a + c * std::pow(users[i], k));
      res += e * e;
    }
    return res;
  };
  return {fit(2.0), fit(3.0)};
}

}  // namespace usca::experiment

// usca: command-line front end for data generation, training, evaluation,
// timing and exhaustive-search reference runs.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "usca/dataset.hpp"
#include "usca/experiment.hpp"
#include "usca/model.hpp"
#include "usca/netgen.hpp"
#include "usca/train.hpp"

namespace fs = std::filesystem;
using namespace usca;

namespace {

const std::set<std::pair<int, int>> kPresets{{6, 4}, {12, 4}, {18, 9}, {48, 16}, {100, 16}};

// Reads key=value lines; '#' starts a comment. Keys are long flag names
// without the leading dashes.
std::vector<std::pair<std::string, std::string>> read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config file " + path);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected key=value");
    std::string key = trim(line.substr(0, eq));
    while (key.starts_with("-")) key.erase(0, 1);
    out.emplace_back(key, trim(line.substr(eq + 1)));
  }
  return out;
}

// Splices config entries in front of the command-line flags of the chosen
// verb, skipping keys the command line already sets.
std::vector<std::string> expand_config(std::vector<std::string> args) {
  auto it = std::find(args.begin(), args.end(), "--config");
  std::string path;
  if (it != args.end()) {
    if (it + 1 == args.end()) throw std::runtime_error("--config needs a file name");
    path = *(it + 1);
    args.erase(it, it + 2);
  } else {
    for (auto a = args.begin(); a != args.end(); ++a)
      if (a->starts_with("--config=")) {
        path = a->substr(9);
        args.erase(a);
        break;
      }
  }
  if (path.empty() || args.size() < 2) return args;
  std::set<std::string> given;
  for (const auto& a : args)
    if (a.starts_with("--")) given.insert(a.substr(2, a.find('=') == std::string::npos ? std::string::npos : a.find('=') - 2));
  std::vector<std::string> injected;
  for (const auto& [key, value] : read_config(path)) {
    if (given.count(key)) continue;
    if (value == "true") {
      injected.push_back("--" + key);
    } else if (value != "false") {
      injected.push_back("--" + key);
      injected.push_back(value);
    }
  }
  args.insert(args.begin() + 2, injected.begin(), injected.end());
  return args;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create output directory " + dir);
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

struct GridFlags {
  int lo = -40;
  int hi = 10;
  int step = 1;
  std::vector<double> grid() const { return experiment::pm_grid(lo, hi, step); }
};

void add_grid_flags(CLI::App* cmd, GridFlags& g) {
  cmd->add_option("--pm-lo", g.lo, "lowest budget in dBW");
  cmd->add_option("--pm-hi", g.hi, "highest budget in dBW");
  cmd->add_option("--pm-step", g.step, "budget grid step in dB")->check(CLI::PositiveNumber);
}

struct SupervisionFlags {
  std::string csv;
  std::string method = "sca";
};

train::TrainingData make_data(const std::vector<CsiMatrix>& channels, const std::vector<double>& grid,
                              const SupervisionFlags& sup, const std::vector<std::size_t>& index_map) {
  train::TrainingData d;
  d.channels = channels;
  d.pm_grid_dbw = grid;
  if (!sup.csv.empty()) {
    std::ifstream in(sup.csv);
    if (!in) throw std::runtime_error("cannot read label file " + sup.csv);
    const auto rows = experiment::read_results_csv(in);
    std::size_t max_index = 0;
    for (auto c : index_map) max_index = std::max(max_index, c + 1);
    const auto all = experiment::labels_from_rows(rows, sup.method, max_index, grid);
    for (auto c : index_map) d.labels.push_back(all[c]);
  }
  return d;
}

// ----------------------------------------------------------------------------

int run_gen_data(const std::string& out, const std::string& name, SystemConfig cfg, const std::string& preset,
                 const std::string& pl, bool no_fading, std::size_t count, std::uint64_t first_index) {
  if (!preset.empty()) {
    int L = 0, M = 0;
    char x = 0;
    std::stringstream ss(preset);
    if (!(ss >> L >> x >> M) || x != 'x' || !kPresets.count({L, M}))
      throw std::invalid_argument("unknown preset '" + preset + "' (use 6x4, 12x4, 18x9, 48x16 or 100x16)");
    cfg.num_users = L;
    cfg.num_bs = M;
  }
  cfg.validate();
  auto model = netgen::PathLossModel::from_tag(pl);
  model.fading = !no_fading;
  const auto d = dataset::generate(cfg, model, cfg.rng_seed, count, first_index);
  ensure_dir(out);
  const auto path = fs::path(out) / name;
  dataset::save(path.string(), d);
  std::cout << "wrote " << count << " channels (L=" << cfg.num_users << ", M=" << cfg.num_bs << ", " << model.tag()
            << ") to " << path.string() << '\n';
  return 0;
}

struct TrainFlags {
  std::string data, val, out = "run", variant = "gcn-usca";
  int blocks = 7;
  std::vector<int> hidden{8, 32, 32, 16, 8};
  int epochs = 1000, patience1 = 50, patience2 = 100, minibatches = 50;
  double lr = 1e-3;
  std::optional<double> eta_m;
  std::optional<double> eta_s;
  double lambda_s = 1e3;
  double channel_fraction = 1.0;
  int pm_stride = 1;
  unsigned workers = 1;
  std::uint64_t seed = 0;
  GridFlags grid;
  SupervisionFlags sup;
};

struct Split {
  std::vector<CsiMatrix> channels;
  std::vector<std::size_t> index;  // position in the source file
};

Split take(const std::vector<CsiMatrix>& all, std::size_t lo, std::size_t hi) {
  Split s;
  for (std::size_t c = lo; c < hi; ++c) {
    s.channels.push_back(all[c]);
    s.index.push_back(c);
  }
  return s;
}

train::LogSink csv_logger(std::ofstream& log) {
  train::write_log_header(log);
  return [&log](const train::LogRow& r) {
    train::write_log_row(log, r);
    log.flush();
  };
}

int run_train(const TrainFlags& f) {
  const auto d = dataset::load(f.data);
  const SystemConfig cfg = d.cfg;
  Split tr, va;
  if (f.val.empty()) {
    // two-fold: first half trains, second half validates
    const std::size_t half = d.channels.size() / 2;
    if (half == 0) throw std::invalid_argument("need at least two channels to split train/validation");
    tr = take(d.channels, 0, half);
    va = take(d.channels, half, d.channels.size());
  } else {
    const auto v = dataset::load(f.val);
    if (v.cfg.num_users != cfg.num_users) throw std::invalid_argument("validation set has a different L");
    tr = take(d.channels, 0, d.channels.size());
    va = take(v.channels, 0, v.channels.size());
  }
  const auto grid = f.grid.grid();
  auto train_data = make_data(tr.channels, grid, f.sup, tr.index);
  const auto val_data = make_data(va.channels, grid, {}, va.index);
  const auto keep_c = train::select_channel_fraction(train_data.channels.size(), f.channel_fraction, f.seed);
  const auto keep_pm = train::select_pm_stride(grid, f.pm_stride);
  train_data = train::subset(train_data, keep_c, keep_pm);

  model::Architecture arch;
  const auto variant = model::variant_from_name(f.variant);
  if (variant == model::Variant::PlainGcn) arch = model::Architecture::plain_gcn();
  arch.variant = variant;
  if (variant != model::Variant::PlainGcn) {
    arch.blocks = f.blocks;
    arch.hidden = f.hidden;
  }
  arch.train_users = cfg.num_users;
  arch.init_seed = f.seed;
  auto m = model::build_model(arch);

  train::LossConfig lc;
  lc.eta_m = f.eta_m.value_or(variant == model::Variant::PlainGcn ? 0.25 : 0.0);
  lc.lambda_s = f.lambda_s;
  if (!f.sup.csv.empty()) {
    lc.eta_s = f.eta_s.value_or(1.0);
    lc.selective_supervision = true;
  } else if (f.eta_s.value_or(0.0) > 0) {
    throw std::invalid_argument("--eta-s needs labels from --supervise-from");
  }
  train::TrainSchedule sched;
  sched.l0 = f.lr;
  sched.max_epochs = f.epochs;
  sched.patience_step1 = f.patience1;
  sched.patience_step2 = f.patience2;
  sched.minibatches = f.minibatches;
  sched.workers = f.workers;
  sched.seed = f.seed;

  ensure_dir(f.out);
  std::ofstream log(fs::path(f.out) / "training_log.csv");
  const auto result = train::progressive_train(m, train_data, val_data, cfg, lc, sched, csv_logger(log));
  nlohmann::json milestones = nlohmann::json::array();
  for (const auto& ms : result.milestones) {
    model::Model snap = m;
    snap.params = ms.snapshot;
    const auto path = fs::path(f.out) / ("milestone_" + std::to_string(ms.block) + ".json");
    model::save_model(path.string(), snap);
    milestones.push_back({{"block", ms.block}, {"val_wsee", ms.val_wsee}, {"checkpoint", path.filename().string()}});
  }
  model::save_model((fs::path(f.out) / "model.json").string(), m);
  write_json(fs::path(f.out) / "milestones.json", milestones);
  std::cout << "trained " << model::variant_name(variant) << " with " << diff::parameter_count(m.params)
            << " parameters; final validation WSEE " << (result.milestones.empty() ? 0.0 : result.milestones.back().val_wsee)
            << '\n';
  return 0;
}

struct FineTuneFlags {
  std::string checkpoint, data, val, out = "finetune";
  std::optional<int> blocks;
  std::optional<std::string> variant;
  double lr = 5e-5;
  int epochs = 100, patience = 0, minibatches = 50;
  double eta_m = 0;
  std::optional<double> eta_s;
  double lambda_s = 1e3;
  double channel_fraction = 1.0;
  int pm_stride = 1;
  unsigned workers = 1;
  std::uint64_t seed = 0;
  GridFlags grid;
  SupervisionFlags sup;
};

int run_finetune(const FineTuneFlags& f) {
  auto m = model::load_model(f.checkpoint);
  if (f.blocks && *f.blocks != m.arch.blocks)
    throw std::invalid_argument("checkpoint has " + std::to_string(m.arch.blocks) + " blocks, --blocks asks for " +
                                std::to_string(*f.blocks));
  if (f.variant && model::variant_from_name(*f.variant) != m.arch.variant)
    throw std::invalid_argument("checkpoint holds a " + model::variant_name(m.arch.variant) + " model, not " + *f.variant);
  const auto d = dataset::load(f.data);
  if (m.arch.variant == model::Variant::MlpUsca && d.cfg.num_users != m.arch.train_users)
    throw std::invalid_argument("mlp-usca checkpoint was trained for L=" + std::to_string(m.arch.train_users));
  const auto grid = f.grid.grid();
  const auto all = take(d.channels, 0, d.channels.size());
  auto data = make_data(all.channels, grid, f.sup, all.index);
  data = train::subset(data, train::select_channel_fraction(data.channels.size(), f.channel_fraction, f.seed),
                       train::select_pm_stride(grid, f.pm_stride));
  std::optional<train::TrainingData> val;
  if (!f.val.empty()) {
    const auto v = dataset::load(f.val);
    const auto vs = take(v.channels, 0, v.channels.size());
    val = make_data(vs.channels, grid, {}, vs.index);
  }
  train::FineTuneOptions opt;
  opt.lr = f.lr;
  opt.epochs = f.epochs;
  opt.patience = f.patience;
  opt.minibatches = f.minibatches;
  opt.workers = f.workers;
  opt.seed = f.seed;
  opt.loss.eta_m = f.eta_m;
  opt.loss.lambda_s = f.lambda_s;
  if (!f.sup.csv.empty())
    opt.loss.eta_s = f.eta_s.value_or(1.0);
  else if (f.eta_s.value_or(0.0) > 0)
    throw std::invalid_argument("--eta-s needs labels from --supervise-from");
  if (opt.patience > 0 && !val) throw std::invalid_argument("--patience needs --val");

  ensure_dir(f.out);
  std::ofstream log(fs::path(f.out) / "training_log.csv");
  train::fine_tune(m, data, d.cfg, opt, val ? &*val : nullptr, csv_logger(log));
  model::save_model((fs::path(f.out) / "model.json").string(), m);
  std::cout << "fine-tuned " << f.checkpoint << " for up to " << f.epochs << " epochs\n";
  return 0;
}

struct EvalFlags {
  std::string data, out = "eval", methods = "sca,tr-sca,max-pow";
  std::vector<std::string> checkpoints;  // method=path
  bool envelope = false;
  std::size_t channels = 0;  // 0 = all
  int oracle_points = 101;
  double oracle_budget = 1e8;
  unsigned workers = 1;
  GridFlags grid;
};

int run_evaluate(const EvalFlags& f) {
  auto d = dataset::load(f.data);
  if (f.channels > 0 && f.channels < d.channels.size()) d.channels.resize(f.channels);
  experiment::EvaluateOptions opt;
  opt.methods = split_list(f.methods);
  opt.pm_grid_dbw = f.grid.grid();
  opt.envelope = f.envelope;
  opt.workers = f.workers;
  opt.oracle_grid.points_per_dim = f.oracle_points;
  opt.oracle_grid.budget = f.oracle_budget;
  std::map<std::string, model::Model> models;
  for (const auto& spec : f.checkpoints) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--checkpoint expects METHOD=PATH, got '" + spec + "'");
    const std::string method = spec.substr(0, eq);
    if (!experiment::is_learned(method)) throw std::invalid_argument("'" + method + "' is not a learned method");
    auto m = model::load_model(spec.substr(eq + 1));
    if (experiment::method_for(m.arch.variant) != method)
      throw std::invalid_argument("checkpoint for " + method + " holds a " + model::variant_name(m.arch.variant) + " model");
    models[method] = std::move(m);
  }
  for (const auto& [k, v] : models) opt.models[k] = &v;

  const auto rows = experiment::evaluate(d.channels, d.cfg, opt);
  ensure_dir(f.out);
  {
    std::ofstream csv(fs::path(f.out) / "results.csv");
    experiment::write_results_csv(csv, rows);
  }
  auto summary = experiment::summarize(rows);
  summary["envelope"] = f.envelope;
  summary["dataset"] = f.data;
  summary["channels"] = d.channels.size();
  write_json(fs::path(f.out) / "summary.json", summary);
  for (const auto& [name, s] : summary["methods"].items())
    std::cout << name << ": mean WSEE " << s["mean_wsee"].get<double>() << '\n';
  return 0;
}

struct BenchFlags {
  std::string checkpoint, out = "bench", methods = "usca,tr-sca,sca", pl = "wbs";
  int users = 8, bs = 4, repeats = 5;
  std::vector<int> scaling{8, 16, 32, 64, 100};
  std::uint64_t seed = 0;
  GridFlags grid;
};

int run_bench(const BenchFlags& f) {
  SystemConfig cfg;
  cfg.num_users = f.users;
  cfg.num_bs = f.bs;
  cfg.validate();
  const auto pl = netgen::PathLossModel::from_tag(f.pl);
  const CsiMatrix H = netgen::sample_channel(cfg, pl, f.seed, 0);
  model::Model usca_model;
  if (!f.checkpoint.empty()) {
    usca_model = model::load_model(f.checkpoint);
  } else {
    model::Architecture arch;
    arch.init_seed = f.seed;
    usca_model = model::build_model(arch);
  }
  experiment::EvaluateOptions opt;
  opt.pm_grid_dbw = f.grid.grid();
  opt.models[experiment::method_for(usca_model.arch.variant)] = &usca_model;

  nlohmann::json out;
  out["users"] = f.users;
  out["repeats"] = f.repeats;
  out["grid_points"] = opt.pm_grid_dbw.size();
  nlohmann::json medians = nlohmann::json::object();
  for (const auto& method : split_list(f.methods)) {
    const double t = experiment::time_method(method, H, cfg, opt, f.repeats);
    medians[method] = t;
    std::cout << method << ": median " << t << " s per channel over " << opt.pm_grid_dbw.size() << " budgets\n";
  }
  out["median_seconds"] = medians;

  if (!f.scaling.empty() && usca_model.arch.variant == model::Variant::GcnUsca) {
    std::vector<double> users, secs;
    nlohmann::json series = nlohmann::json::array();
    for (int L : f.scaling) {
      SystemConfig c = cfg;
      c.num_users = L;
      c.num_bs = L > 32 ? 16 : 4;
      const CsiMatrix HL = netgen::sample_channel(c, pl, f.seed, 0);
      const double t = experiment::time_method("usca", HL, c, opt, f.repeats);
      users.push_back(L);
      secs.push_back(t);
      series.push_back({{"users", L}, {"median_seconds", t}});
    }
    const auto fit = experiment::fit_power_trends(users, secs);
    out["scaling"] = series;
    out["fit"] = {{"residual_quadratic", fit.residual_quadratic},
                  {"residual_cubic", fit.residual_cubic},
                  {"quadratic_fits_better", fit.residual_quadratic <= fit.residual_cubic}};
  }
  ensure_dir(f.out);
  write_json(fs::path(f.out) / "bench.json", out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("Energy-efficient power allocation workbench: SCA baselines and unfolded GCN allocators", "usca");
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "sample channel realizations into a dataset file");
  SystemConfig gcfg;
  gcfg.num_users = 8;
  std::string gen_out = "data", gen_name = "channels.dat", preset, pl = "wbs";
  std::size_t count = 1000;
  std::uint64_t first_index = 0;
  bool no_fading = false;
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--name", gen_name, "dataset file name");
  gen->add_option("--count", count, "number of channel realizations")->check(CLI::PositiveNumber);
  gen->add_option("--users", gcfg.num_users, "L");
  gen->add_option("--bs", gcfg.num_bs, "M (perfect square)");
  gen->add_option("--preset", preset, "LxM shorthand: 6x4, 12x4, 18x9, 48x16, 100x16");
  gen->add_option("--antennas", gcfg.antennas_per_bs, "receive antennas per BS");
  gen->add_option("--pl", pl, "path-loss variant")->check(CLI::IsMember({"wbs", "urb", "urb-sf", "sub", "sub-sf"}));
  gen->add_option("--bandwidth", gcfg.bandwidth_hz, "Hz");
  gen->add_option("--pc", gcfg.static_power_w, "static circuit power per link (W)");
  gen->add_option("--mu", gcfg.amp_inefficiency, "amplifier inefficiency");
  gen->add_option("--cell-side", gcfg.cell_side_km, "BS grid cell side (km)");
  gen->add_option("--seed", gcfg.rng_seed, "sampling seed");
  gen->add_option("--first-index", first_index, "index of the first realization in the seeded stream");
  gen->add_flag("--no-fading", no_fading, "drop small-scale fading");

  // train
  auto* trn = app.add_subcommand("train", "progressive training of an unfolded or plain GCN allocator");
  TrainFlags tf;
  trn->add_option("--data", tf.data, "dataset file (split in halves unless --val is given)")->required();
  trn->add_option("--val", tf.val, "validation dataset file");
  trn->add_option("--out", tf.out, "output directory");
  trn->add_option("--variant", tf.variant, "gcn-usca, mlp-usca or gcn")
      ->check(CLI::IsMember({"gcn-usca", "usca", "mlp-usca", "gcn"}));
  trn->add_option("--blocks", tf.blocks, "unfolded blocks T")->check(CLI::PositiveNumber);
  trn->add_option("--hidden", tf.hidden, "hidden widths of each GCN")->delimiter(',');
  trn->add_option("--epochs", tf.epochs, "epoch cap per training phase");
  trn->add_option("--patience1", tf.patience1, "early-stopping patience of the single-block phase");
  trn->add_option("--patience2", tf.patience2, "early-stopping patience of the joint phase");
  trn->add_option("--minibatches", tf.minibatches, "minibatches per epoch");
  trn->add_option("--lr", tf.lr, "initial learning rate l0");
  trn->add_option("--eta-m", tf.eta_m, "monotonicity regularizer weight");
  trn->add_option("--eta-s", tf.eta_s, "supervision weight (default 1 with --supervise-from)");
  trn->add_option("--lambda-s", tf.lambda_s, "weight of the Huber term in the regularizer");
  trn->add_option("--supervise-from", tf.sup.csv, "results.csv whose rows provide labels");
  trn->add_option("--label-method", tf.sup.method, "method whose rows are used as labels");
  trn->add_option("--channel-fraction", tf.channel_fraction, "fraction of training channels kept");
  trn->add_option("--pm-stride", tf.pm_stride, "keep every n-th dB of the budget grid");
  trn->add_option("--workers", tf.workers, "threads per minibatch");
  trn->add_option("--seed", tf.seed, "initialization and shuffling seed");
  add_grid_flags(trn, tf.grid);

  // finetune
  auto* ft = app.add_subcommand("finetune", "end-to-end fine-tuning of a trained checkpoint");
  FineTuneFlags ff;
  ft->add_option("--checkpoint", ff.checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  ft->add_option("--data", ff.data, "dataset file")->required();
  ft->add_option("--val", ff.val, "validation dataset file");
  ft->add_option("--out", ff.out, "output directory");
  ft->add_option("--blocks", ff.blocks, "expected block count (checked against the checkpoint)");
  ft->add_option("--variant", ff.variant, "expected variant (checked against the checkpoint)");
  ft->add_option("--lr", ff.lr, "learning rate");
  ft->add_option("--epochs", ff.epochs, "epochs");
  ft->add_option("--patience", ff.patience, "early-stopping patience (needs --val)");
  ft->add_option("--minibatches", ff.minibatches, "minibatches per epoch");
  ft->add_option("--eta-m", ff.eta_m, "monotonicity regularizer weight");
  ft->add_option("--eta-s", ff.eta_s, "supervision weight (default 1 with --supervise-from)");
  ft->add_option("--lambda-s", ff.lambda_s, "weight of the Huber term in the regularizer");
  ft->add_option("--supervise-from", ff.sup.csv, "results.csv whose rows provide labels");
  ft->add_option("--label-method", ff.sup.method, "method whose rows are used as labels");
  ft->add_option("--channel-fraction", ff.channel_fraction, "fraction of channels kept");
  ft->add_option("--pm-stride", ff.pm_stride, "keep every n-th dB of the budget grid");
  ft->add_option("--workers", ff.workers, "threads per minibatch");
  ft->add_option("--seed", ff.seed, "shuffling and subset seed");
  add_grid_flags(ft, ff.grid);

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "run allocators over a dataset and budget grid");
  EvalFlags ef;
  ev->add_option("--data", ef.data, "dataset file")->required();
  ev->add_option("--out", ef.out, "output directory");
  ev->add_option("--methods", ef.methods, "comma list of sca, tr-sca, usca, mlp-usca, gcn, max-pow, oracle");
  ev->add_option("--checkpoint", ef.checkpoints, "METHOD=PATH for learned methods");
  ev->add_flag("--envelope", ef.envelope, "keep the previous allocation when a larger budget lowers WSEE");
  ev->add_option("--channels", ef.channels, "evaluate only the first N channels");
  ev->add_option("--oracle-points", ef.oracle_points, "grid points per dimension for the oracle");
  ev->add_option("--oracle-budget", ef.oracle_budget, "maximum oracle evaluations per problem");
  ev->add_option("--workers", ef.workers, "channels evaluated concurrently");
  add_grid_flags(ev, ef.grid);

  // bench
  auto* bn = app.add_subcommand("bench", "median wall-clock time per channel over the budget grid");
  BenchFlags bf;
  bn->add_option("--checkpoint", bf.checkpoint, "learned model to time (default: freshly initialized)");
  bn->add_option("--out", bf.out, "output directory");
  bn->add_option("--methods", bf.methods, "comma list of methods");
  bn->add_option("--users", bf.users, "L");
  bn->add_option("--bs", bf.bs, "M");
  bn->add_option("--repeats", bf.repeats, "repetitions; the median is reported")->check(CLI::PositiveNumber);
  bn->add_option("--scaling", bf.scaling, "L values for the forward-pass scaling series")->delimiter(',');
  bn->add_option("--pl", bf.pl, "path-loss variant")->check(CLI::IsMember({"wbs", "urb", "urb-sf", "sub", "sub-sf"}));
  bn->add_option("--seed", bf.seed, "channel and initialization seed");
  add_grid_flags(bn, bf.grid);

  // oracle
  auto* orc = app.add_subcommand("oracle", "exhaustive grid search reference for small L");
  EvalFlags of;
  of.out = "oracle";
  orc->add_option("--data", of.data, "dataset file")->required();
  orc->add_option("--out", of.out, "output directory");
  orc->add_option("--points", of.oracle_points, "grid points per dimension");
  orc->add_option("--budget", of.oracle_budget, "maximum evaluations per problem");
  orc->add_option("--channels", of.channels, "evaluate only the first N channels");
  orc->add_option("--workers", of.workers, "channels evaluated concurrently");
  add_grid_flags(orc, of.grid);

  try {
    std::vector<std::string> args(argv, argv + argc);
    args = expand_config(args);
    std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
    app.parse(std::move(reversed));
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*gen) return run_gen_data(gen_out, gen_name, gcfg, preset, pl, no_fading, count, first_index);
    if (*trn) return run_train(tf);
    if (*ft) return run_finetune(ff);
    if (*ev) return run_evaluate(ef);
    if (*bn) return run_bench(bf);
    if (*orc) {
      of.methods = "oracle";
      return run_evaluate(of);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

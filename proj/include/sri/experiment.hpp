#pragma once

// Experiment protocol shared by the command-line tool and the acceptance suite:
// configuration, trial evaluation, sweeps, CSV tables and SVG plots.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "sri/bc.hpp"
#include "sri/behavior.hpp"
#include "sri/dataset.hpp"
#include "sri/env.hpp"
#include "sri/model.hpp"
#include "sri/oracle.hpp"
#include "sri/policy.hpp"
#include "sri/train.hpp"

namespace sri {

struct SweepAxes {
  std::vector<int> K{125, 500, 2000};
  std::vector<int> N_s{50, 200, 800};
  std::vector<int> N_I{2};
  std::vector<double> epsilon{0.0, 0.5, 0.87, 1.0};
  std::vector<double> alpha{-1.0, -0.5, 0.5, 1.0};
  std::vector<int> demos{1, 3, 10, 30};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
};

inline void to_json(nlohmann::json& j, const SweepAxes& a) {
  j = nlohmann::json{{"K", a.K},           {"N_s", a.N_s},     {"N_I", a.N_I},    {"epsilon", a.epsilon},
                     {"alpha", a.alpha},   {"demos", a.demos}, {"seeds", a.seeds}};
}
inline void from_json(const nlohmann::json& j, SweepAxes& a) {
  a = SweepAxes{};
  a.K = j.value("K", a.K);
  a.N_s = j.value("N_s", a.N_s);
  a.N_I = j.value("N_I", a.N_I);
  a.epsilon = j.value("epsilon", a.epsilon);
  a.alpha = j.value("alpha", a.alpha);
  a.demos = j.value("demos", a.demos);
  a.seeds = j.value("seeds", a.seeds);
}

struct ExperimentConfig {
  EnvSpec env = EnvSpec::point_reach();
  DatasetConfig dataset{};
  ModelConfig model{};
  TrainConfig train{};
  PlannerConfig planner{};
  BCConfig bc{};
  SweepAxes sweep{};
  int trials = 30;
  int eval_demos = 0;       // demonstrations shown at evaluation; 0 uses the class default
  int oracle_lattice = 7;   // goal lattice for continuous oracles
  double oracle_sigma = 0.02;
  std::uint64_t seed = 0;
  std::string output_dir = "out";

  int demos() const { return eval_demos > 0 ? eval_demos : default_demo_count(dataset.behavior.class_tag); }

  void validate() const {
    env.validate();
    dataset.validate();
    model.validate();
    train.validate();
    planner.validate();
    bc.validate();
    if (trials < 1) throw ConfigError("trials must be >= 1");
    if (eval_demos < 0) throw ConfigError("eval_demos must be >= 0");
    if (oracle_lattice < 1) throw ConfigError("oracle_lattice must be >= 1");
    if (model.state_dim != env.feature_dims())
      throw ConfigError("model.state_dim " + std::to_string(model.state_dim) + " does not match the env feature width " +
                        std::to_string(env.feature_dims()));
  }
};

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = nlohmann::json{{"env", c.env},
                     {"dataset", c.dataset},
                     {"model", c.model},
                     {"train", c.train},
                     {"planner", c.planner},
                     {"bc", c.bc},
                     {"sweep", c.sweep},
                     {"trials", c.trials},
                     {"eval_demos", c.eval_demos},
                     {"oracle_lattice", c.oracle_lattice},
                     {"oracle_sigma", c.oracle_sigma},
                     {"seed", c.seed},
                     {"output_dir", c.output_dir}};
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  c = ExperimentConfig{};
  if (j.contains("env")) c.env = j.at("env").get<EnvSpec>();
  if (j.contains("dataset")) c.dataset = j.at("dataset").get<DatasetConfig>();
  c.model.state_dim = c.env.feature_dims();
  if (j.contains("model")) {
    nlohmann::json mj = j.at("model");
    if (!mj.contains("state_dim")) mj["state_dim"] = c.env.feature_dims();
    c.model = mj.get<ModelConfig>();
  }
  if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
  if (j.contains("planner")) c.planner = j.at("planner").get<PlannerConfig>();
  if (j.contains("bc")) c.bc = j.at("bc").get<BCConfig>();
  if (j.contains("sweep")) c.sweep = j.at("sweep").get<SweepAxes>();
  c.trials = j.value("trials", c.trials);
  c.eval_demos = j.value("eval_demos", c.eval_demos);
  c.oracle_lattice = j.value("oracle_lattice", c.oracle_lattice);
  c.oracle_sigma = j.value("oracle_sigma", c.oracle_sigma);
  c.seed = j.value("seed", c.seed);
  c.output_dir = j.value("output_dir", c.output_dir);
}

/// Runs body(i) for i in [0, n) on `threads` workers; results must be written by index.
inline void parallel_for(int n, int threads, const std::function<void(int)>& body) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  for (int w = 0; w < std::min(threads, n); ++w)
    pool.emplace_back([&] {
      for (int i = next++; i < n && !failed; i = next++) {
        try {
          body(i);
        } catch (...) {
          if (!failed.exchange(true)) error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------
// Statistics

struct Summary {
  std::size_t n = 0;
  double mean = 0.0;
  double se = 0.0;
  double median = 0.0;
};

inline double median_of(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

inline Summary summarize(const std::vector<double>& v) {
  Summary s;
  s.n = v.size();
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.se = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
  }
  s.median = median_of(v);
  return s;
}

// ---------------------------------------------------------------------------
// Training

inline Dataset make_dataset(const EnvSpec& env, const DatasetConfig& dc) {
  Rng rng = make_rng(dc.seed, 0xda7a);
  return build_dataset(rng, env, dc);
}

/// Dataset, model config sized to the dataset, and a trained model.
inline TrainResult train_sri(const EnvSpec& env, const DatasetConfig& dc, ModelConfig mc, const TrainConfig& tc) {
  const Dataset ds = make_dataset(env, dc);
  mc.state_dim = env.feature_dims();
  mc.max_traj_len = static_cast<int>(ds.max_trajectory_length());
  return train(ds, mc, tc);
}

// ---------------------------------------------------------------------------
// Trial evaluation

enum class Method { sri, ground_truth, prior, oracle, bc, stay };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::sri: return "sri";
    case Method::ground_truth: return "ground-truth";
    case Method::prior: return "prior";
    case Method::oracle: return "oracle";
    case Method::bc: return "bc";
    case Method::stay: return "stay";
  }
  return "?";
}

inline Method method_from_string(const std::string& s) {
  for (Method m : {Method::sri, Method::ground_truth, Method::prior, Method::oracle, Method::bc, Method::stay})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown method '" + s + "'");
}

struct EvalSpec {
  BehaviorClassConfig behavior{};
  int demos = 1;
  int trials = 30;
  PlannerConfig planner{};
  BCConfig bc{};
  int oracle_lattice = 7;
  double oracle_sigma = 0.02;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct TrialResult {
  int trial = 0;
  Vec2 goal{};
  double proximity = 0.0;  // unclipped
  double clipped = 0.0;
  bool degenerate = false;
  Episode episode;
};

/// Trial i draws its task and demonstrations from stream i of `seed`, so every
/// method and every class setting sees the same task sequence.
inline std::pair<Task, std::vector<Trajectory>> trial_inputs(const EnvSpec& env, const EvalSpec& spec, int trial) {
  Rng rng = make_rng(spec.seed, 0x7e57000ULL + static_cast<std::uint64_t>(trial));
  Task task = sample_task(rng, env);
  task.task_id = trial;
  Rng demo_rng = make_rng(spec.seed, 0xde30000ULL + static_cast<std::uint64_t>(trial));
  auto demos = generate_many(demo_rng, env, task, spec.behavior, spec.demos);
  return {task, std::move(demos)};
}

inline RewardFamily oracle_family(const EnvSpec& env, int lattice) {
  return env.kind == EnvKind::grid ? RewardFamily::grid_cells(env) : RewardFamily::goal_lattice(env, lattice);
}

inline Policy policy_for(const EnvSpec& env, const RewardFunction& r, const PlannerConfig& pc, int trial) {
  if (env.kind == EnvKind::grid) return greedy_grid_policy(env, value_iteration(env, r, env.gamma));
  PlannerConfig p = pc;
  p.seed = splitmix64(pc.seed ^ (0x9a11ULL + static_cast<std::uint64_t>(trial)));
  return planner_policy(env, r, p);
}

inline std::vector<TrialResult> evaluate_trials(const EnvSpec& env, Method method, const EvalSpec& spec,
                                                std::shared_ptr<const ModelParams> model = nullptr) {
  if (method == Method::sri && !model) throw ArgumentError("evaluate_trials: sri needs a model");
  if (model && (model->env.kind != env.kind || model->config.state_dim != env.feature_dims()))
    throw ConfigError("model was trained for a different environment");
  std::vector<TrialResult> out(static_cast<std::size_t>(spec.trials));
  RewardFamily family;
  if (method == Method::prior || method == Method::oracle) family = oracle_family(env, spec.oracle_lattice);
  parallel_for(spec.trials, spec.threads, [&](int i) {
    auto [task, demos] = trial_inputs(env, spec, i);
    Policy pol;
    switch (method) {
      case Method::sri: pol = policy_for(env, infer_reward_fn(model, demos), spec.planner, i); break;
      case Method::ground_truth: pol = policy_for(env, true_reward_fn(env, task), spec.planner, i); break;
      case Method::prior: {
        Posterior p{family.prior, {}};
        pol = policy_for(env, posterior_mean_reward(family, p), spec.planner, i);
        break;
      }
      case Method::oracle: {
        const LikelihoodModel lm{spec.behavior, spec.oracle_sigma};
        pol = policy_for(env, posterior_mean_reward(family, posterior(family, lm, demos)), spec.planner, i);
        break;
      }
      case Method::bc: {
        BCConfig bc = spec.bc;
        bc.seed = splitmix64(spec.bc.seed + static_cast<std::uint64_t>(i));
        pol = train_bc(env, demos, bc).as_policy();
        break;
      }
      case Method::stay: pol = stay_policy(env); break;
    }
    TrialResult r;
    r.trial = i;
    r.goal = task.goal;
    r.episode = rollout(env, task, pol, env.horizon);
    try {
      r.proximity = goal_proximity(env, r.episode, task, false);
      r.clipped = std::max(0.0, r.proximity);
    } catch (const DegenerateTrialError&) {
      r.degenerate = true;
    }
    out[static_cast<std::size_t>(i)] = std::move(r);
  });
  return out;
}

inline std::vector<double> proximities(const std::vector<TrialResult>& rs, bool clipped) {
  std::vector<double> v;
  for (const auto& r : rs)
    if (!r.degenerate) v.push_back(clipped ? r.clipped : r.proximity);
  return v;
}

// ---------------------------------------------------------------------------
// Grid reward error against the exact posterior mean

struct GridErrorRow {
  int task = 0;
  int goal_cell = 0;
  double sup_error = 0.0;
  ValueGapReport gap;
};

/// Held-out tasks: sup over cells of |R_SRI - R̄| and the value-gap check for each.
inline std::vector<GridErrorRow> grid_reward_errors(std::shared_ptr<const ModelParams> model, const EnvSpec& env,
                                                    const BehaviorClassConfig& behavior, int tasks, int demos,
                                                    std::uint64_t seed) {
  if (env.kind != EnvKind::grid) throw UnsupportedError("grid_reward_errors requires a grid env");
  const RewardFamily family = RewardFamily::grid_cells(env);
  const LikelihoodModel lm{behavior};
  const TabularMdp mdp = TabularMdp::from_grid(env);
  EvalSpec spec;
  spec.behavior = behavior;
  spec.demos = demos;
  spec.seed = seed;
  std::vector<GridErrorRow> rows;
  for (int i = 0; i < tasks; ++i) {
    auto [task, trajs] = trial_inputs(env, spec, i);
    const RewardFunction rbar = posterior_mean_reward(family, posterior(family, lm, trajs));
    const RewardFunction rsri = infer_reward_fn(model, trajs);
    GridErrorRow row;
    row.task = i;
    row.goal_cell = cell_index(env, task.goal);
    row.gap = value_gap_check(mdp, env, rbar, rsri);
    row.sup_error = row.gap.delta;
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// CSV (RFC 4180)

inline std::string fmt(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

class Csv {
 public:
  explicit Csv(std::vector<std::string> header) : header_(std::move(header)) {}

  void add(std::vector<std::string> row) {
    if (row.size() != header_.size()) throw ArgumentError("csv: row width does not match header");
    rows_.push_back(std::move(row));
  }
  const std::vector<std::vector<std::string>>& rows() const { return rows_; }

  static std::string quote(const std::string& f) {
    if (f.find_first_of(",\"\r\n") == std::string::npos) return f;
    std::string q = "\"";
    for (char c : f) {
      if (c == '"') q += '"';
      q += c;
    }
    return q + "\"";
  }

  std::string str() const {
    std::string out;
    auto line = [&](const std::vector<std::string>& r) {
      for (std::size_t i = 0; i < r.size(); ++i) out += (i ? "," : "") + quote(r[i]);
      out += "\r\n";
    };
    line(header_);
    for (const auto& r : rows_) line(r);
    return out;
  }

  void save(const std::string& path) const { io::write_file(path, str()); }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

/// Parses RFC 4180 text into rows (header included).
inline std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\r' || c == '\n') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
      any = false;
    } else {
      field += c;
      any = true;
    }
  }
  if (any || !row.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Per-trial proximity rows followed by one aggregate row per run (trial = "aggregate"):
/// proximity columns hold means, the trailing columns standard errors, medians and n.
inline Csv trial_csv(const std::vector<std::pair<std::string, std::vector<TrialResult>>>& runs,
                     const std::string& setting_name, const std::vector<std::string>& settings) {
  Csv csv({setting_name, "method", "trial", "goal_x", "goal_y", "proximity", "proximity_clipped", "degenerate", "se",
           "se_clipped", "median", "median_clipped", "n"});
  for (std::size_t k = 0; k < runs.size(); ++k)
    for (const auto& r : runs[k].second)
      csv.add({settings[k], runs[k].first, std::to_string(r.trial), fmt(r.goal.x), fmt(r.goal.y),
               r.degenerate ? "" : fmt(r.proximity), r.degenerate ? "" : fmt(r.clipped), r.degenerate ? "1" : "0", "", "",
               "", "", ""});
  for (std::size_t k = 0; k < runs.size(); ++k) {
    const Summary u = summarize(proximities(runs[k].second, false));
    const Summary c = summarize(proximities(runs[k].second, true));
    csv.add({settings[k], runs[k].first, "aggregate", "", "", fmt(u.mean), fmt(c.mean),
             std::to_string(runs[k].second.size() - u.n), fmt(u.se), fmt(c.se), fmt(u.median), fmt(c.median),
             std::to_string(u.n)});
  }
  return csv;
}

inline Csv train_report_csv(const TrainReport& rep) {
  Csv csv({"epoch", "train_loss", "val_loss"});
  for (const auto& e : rep.epochs) csv.add({std::to_string(e.epoch), fmt(e.train_loss), fmt(e.val_loss)});
  return csv;
}

// ---------------------------------------------------------------------------
// Sweeps

inline std::uint64_t cell_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
  return splitmix64(base ^ splitmix64(a * 0x100000001b3ULL + b));
}

inline EvalSpec eval_spec(const ExperimentConfig& c, int threads) {
  EvalSpec e;
  e.behavior = c.dataset.behavior;
  e.demos = c.demos();
  e.trials = c.trials;
  e.planner = c.planner;
  e.bc = c.bc;
  e.oracle_lattice = c.oracle_lattice;
  e.oracle_sigma = c.oracle_sigma;
  e.seed = cell_seed(c.seed, 0xe7a1);
  e.threads = threads;
  return e;
}

/// Trains with the dataset/train seeds derived from (config seed, replicate seed).
inline TrainResult train_replicate(const ExperimentConfig& c, DatasetConfig dc, std::uint64_t replicate) {
  dc.seed = cell_seed(c.seed, 0xda7a, replicate);
  TrainConfig tc = c.train;
  tc.seed = cell_seed(c.seed, 0x7a1, replicate);
  return train_sri(c.env, dc, c.model, tc);
}

struct DataCell {
  int K = 0, N_s = 0;
  std::uint64_t seed = 0;
  Summary proximity;  // unclipped, table convention
};

/// K x N_s x seed grid: each cell trains a model and evaluates it on the shared trial tasks.
inline std::vector<DataCell> sweep_data_quantity(const ExperimentConfig& c, int threads,
                                                 const std::function<void(const DataCell&)>& on_cell = {}) {
  if (c.sweep.K.empty() || c.sweep.N_s.empty() || c.sweep.seeds.empty()) throw ConfigError("sweep axes K, N_s and seeds must be non-empty");
  std::vector<DataCell> out;
  const EvalSpec spec = eval_spec(c, threads);
  for (std::uint64_t seed : c.sweep.seeds)
    for (int K : c.sweep.K)
      for (int N_s : c.sweep.N_s) {
        DatasetConfig dc = c.dataset;
        dc.K = K;
        dc.N_s = N_s;
        auto model = std::make_shared<const ModelParams>(train_replicate(c, dc, seed).params);
        DataCell cell{K, N_s, seed, summarize(proximities(evaluate_trials(c.env, Method::sri, spec, model), false))};
        if (on_cell) on_cell(cell);
        out.push_back(cell);
      }
  return out;
}

inline Csv data_cells_csv(const std::vector<DataCell>& cells) {
  Csv csv({"K", "N_s", "seed", "mean", "se", "median", "n"});
  for (const auto& d : cells)
    csv.add({std::to_string(d.K), std::to_string(d.N_s), std::to_string(d.seed), fmt(d.proximity.mean),
             fmt(d.proximity.se), fmt(d.proximity.median), std::to_string(d.proximity.n)});
  return csv;
}

/// Median over seeds of the per-cell mean proximity, rows K, columns N_s.
inline std::vector<std::vector<double>> data_table(const std::vector<DataCell>& cells, const std::vector<int>& Ks,
                                                   const std::vector<int>& Ns) {
  std::vector<std::vector<double>> t(Ks.size(), std::vector<double>(Ns.size()));
  for (std::size_t i = 0; i < Ks.size(); ++i)
    for (std::size_t j = 0; j < Ns.size(); ++j) {
      std::vector<double> v;
      for (const auto& d : cells)
        if (d.K == Ks[i] && d.N_s == Ns[j]) v.push_back(d.proximity.mean);
      t[i][j] = median_of(v);
    }
  return t;
}

inline Csv data_table_csv(const std::vector<std::vector<double>>& t, const std::vector<int>& Ks, const std::vector<int>& Ns) {
  std::vector<std::string> header{"K"};
  for (int n : Ns) header.push_back("N_s=" + std::to_string(n));
  Csv csv(header);
  for (std::size_t i = 0; i < Ks.size(); ++i) {
    std::vector<std::string> row{std::to_string(Ks[i])};
    for (double v : t[i]) row.push_back(fmt(v));
    csv.add(row);
  }
  return csv;
}

struct SettingRun {
  std::string setting;
  std::string method;
  std::vector<TrialResult> trials;
};

inline Csv runs_csv(const std::string& setting_name, const std::vector<SettingRun>& runs) {
  std::vector<std::pair<std::string, std::vector<TrialResult>>> r;
  std::vector<std::string> settings;
  for (const auto& x : runs) {
    r.emplace_back(x.method, x.trials);
    settings.push_back(x.setting);
  }
  return trial_csv(r, setting_name, settings);
}

/// One model per epsilon, each evaluated with the configured demo count; ground-truth
/// and prior-only reference runs are appended.
inline std::vector<SettingRun> sweep_epsilon(const ExperimentConfig& c, int threads,
                                             std::vector<std::shared_ptr<const ModelParams>>* models = nullptr) {
  if (c.sweep.epsilon.empty()) throw ConfigError("sweep axis epsilon must be non-empty");
  std::vector<SettingRun> runs;
  EvalSpec spec = eval_spec(c, threads);
  for (double eps : c.sweep.epsilon) {
    DatasetConfig dc = c.dataset;
    dc.behavior.epsilon = eps;
    auto model = std::make_shared<const ModelParams>(train_replicate(c, dc, 0).params);
    if (models) models->push_back(model);
    spec.behavior = dc.behavior;
    runs.push_back({fmt(eps), "sri", evaluate_trials(c.env, Method::sri, spec, model)});
  }
  runs.push_back({"", "ground-truth", evaluate_trials(c.env, Method::ground_truth, spec)});
  runs.push_back({"", "prior", evaluate_trials(c.env, Method::prior, spec)});
  return runs;
}

/// One model per alpha; SRI and BC each see the configured number of demonstrations.
inline std::vector<SettingRun> sweep_alpha(const ExperimentConfig& c, int threads) {
  if (c.sweep.alpha.empty()) throw ConfigError("sweep axis alpha must be non-empty");
  std::vector<SettingRun> runs;
  EvalSpec spec = eval_spec(c, threads);
  for (double a : c.sweep.alpha) {
    DatasetConfig dc = c.dataset;
    dc.behavior.alpha = a;
    auto model = std::make_shared<const ModelParams>(train_replicate(c, dc, 0).params);
    spec.behavior = dc.behavior;
    runs.push_back({fmt(a), "sri", evaluate_trials(c.env, Method::sri, spec, model)});
    runs.push_back({fmt(a), "bc", evaluate_trials(c.env, Method::bc, spec)});
  }
  return runs;
}

/// A single model evaluated at each demonstration count.
inline std::vector<SettingRun> sweep_demos(const ExperimentConfig& c, int threads,
                                           std::shared_ptr<const ModelParams> model = nullptr) {
  if (c.sweep.demos.empty()) throw ConfigError("sweep axis demos must be non-empty");
  if (!model) model = std::make_shared<const ModelParams>(train_replicate(c, c.dataset, 0).params);
  std::vector<SettingRun> runs;
  EvalSpec spec = eval_spec(c, threads);
  for (int d : c.sweep.demos) {
    spec.demos = d;
    runs.push_back({std::to_string(d), "sri", evaluate_trials(c.env, Method::sri, spec, model)});
  }
  return runs;
}

struct GridCell {
  int K = 0;
  std::uint64_t seed = 0;
  double mean_sup_error = 0.0;
  int gap_violations = 0;
  int tasks = 0;
};

/// Grid reward error against the exact posterior mean for each K and seed.
inline std::vector<GridCell> sweep_grid_error(const ExperimentConfig& c, int held_out_tasks,
                                              const std::function<void(const GridCell&)>& on_cell = {}) {
  if (c.env.kind != EnvKind::grid) throw ConfigError("grid error sweep requires a grid env");
  std::vector<GridCell> out;
  for (std::uint64_t seed : c.sweep.seeds)
    for (int K : c.sweep.K) {
      DatasetConfig dc = c.dataset;
      dc.K = K;
      auto model = std::make_shared<const ModelParams>(train_replicate(c, dc, seed).params);
      const auto rows = grid_reward_errors(model, c.env, dc.behavior, held_out_tasks, c.demos(), cell_seed(c.seed, 0x6e1d));
      GridCell cell{K, seed, 0.0, 0, held_out_tasks};
      for (const auto& r : rows) {
        cell.mean_sup_error += r.sup_error / static_cast<double>(rows.size());
        cell.gap_violations += r.gap.holds ? 0 : 1;
      }
      if (on_cell) on_cell(cell);
      out.push_back(cell);
    }
  return out;
}

inline Csv grid_cells_csv(const std::vector<GridCell>& cells) {
  Csv csv({"K", "seed", "mean_sup_error", "gap_violations", "tasks"});
  for (const auto& g : cells)
    csv.add({std::to_string(g.K), std::to_string(g.seed), fmt(g.mean_sup_error), std::to_string(g.gap_violations),
             std::to_string(g.tasks)});
  return csv;
}

// ---------------------------------------------------------------------------
// SVG

struct Series {
  std::string name;
  std::vector<double> x, y, err;
};

inline std::string xml_escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    if (c == '<') o += "&lt;";
    else if (c == '>') o += "&gt;";
    else if (c == '&') o += "&amp;";
    else if (c == '"') o += "&quot;";
    else o += c;
  }
  return o;
}

inline std::string svg_line_plot(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                                 const std::vector<Series>& series, bool log_x = false) {
  const double W = 560, H = 380, L = 70, R = 150, T = 40, B = 50;
  double x0 = INFINITY, x1 = -INFINITY, y0 = 0.0, y1 = 1.0;
  auto tx = [&](double x) { return log_x ? std::log10(x) : x; };
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      x0 = std::min(x0, tx(s.x[i]));
      x1 = std::max(x1, tx(s.x[i]));
      const double e = i < s.err.size() ? s.err[i] : 0.0;
      y0 = std::min(y0, s.y[i] - e);
      y1 = std::max(y1, s.y[i] + e);
    }
  if (!(x1 > x0)) {
    x0 -= 1;
    x1 += 1;
  }
  auto px = [&](double x) { return L + (tx(x) - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << xml_escape(title) << "</text>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double yv = y0 + (y1 - y0) * k / 4.0;
    o << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\" font-size=\"11\">" << fmt(std::round(yv * 100) / 100)
      << "</text>\n";
  }
  std::vector<double> xs;
  for (const auto& s : series) xs.insert(xs.end(), s.x.begin(), s.x.end());
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  for (double xv : xs)
    o << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\" font-size=\"11\">" << fmt(xv)
      << "</text>\n";
  o << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\" font-size=\"12\">"
    << xml_escape(xlabel) << "</text>\n";
  o << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 "
    << (T + H - B) / 2 << ")\">" << xml_escape(ylabel) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* c = colors[k % 6];
    o << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) o << px(s.x[i]) << "," << py(s.y[i]) << " ";
    o << "\"/>\n";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      o << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i]) << "\" r=\"3\" fill=\"" << c << "\"/>\n";
      if (i < s.err.size() && s.err[i] > 0)
        o << "<line x1=\"" << px(s.x[i]) << "\" y1=\"" << py(s.y[i] - s.err[i]) << "\" x2=\"" << px(s.x[i]) << "\" y2=\""
          << py(s.y[i] + s.err[i]) << "\" stroke=\"" << c << "\"/>\n";
    }
    o << "<text x=\"" << W - R + 10 << "\" y=\"" << T + 18 * (k + 1) << "\" font-size=\"12\" fill=\"" << c << "\">"
      << xml_escape(s.name) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

/// Table rendered as a shaded grid (rows x columns of values).
inline std::string svg_table(const std::string& title, const std::string& row_label, const std::vector<std::string>& rows,
                             const std::string& col_label, const std::vector<std::string>& cols,
                             const std::vector<std::vector<double>>& values) {
  const double cw = 90, ch = 34, L = 120, T = 70;
  const double W = L + cw * static_cast<double>(cols.size()) + 20, H = T + ch * static_cast<double>(rows.size()) + 20;
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& r : values)
    for (double v : r)
      if (std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"15\">" << xml_escape(title) << "</text>\n";
  o << "<text x=\"" << L + cw * static_cast<double>(cols.size()) / 2 << "\" y=\"42\" text-anchor=\"middle\" font-size=\"12\">"
    << xml_escape(col_label) << "</text>\n";
  o << "<text x=\"10\" y=\"" << T - 8 << "\" font-size=\"12\">" << xml_escape(row_label) << "</text>\n";
  for (std::size_t c = 0; c < cols.size(); ++c)
    o << "<text x=\"" << L + cw * (static_cast<double>(c) + 0.5) << "\" y=\"" << T - 8
      << "\" text-anchor=\"middle\" font-size=\"12\">" << xml_escape(cols[c]) << "</text>\n";
  for (std::size_t r = 0; r < rows.size(); ++r) {
    o << "<text x=\"10\" y=\"" << T + ch * (static_cast<double>(r) + 0.6) << "\" font-size=\"12\">" << xml_escape(rows[r])
      << "</text>\n";
    for (std::size_t c = 0; c < cols.size(); ++c) {
      const double v = values[r][c];
      const double t = (hi > lo && std::isfinite(v)) ? (v - lo) / (hi - lo) : 0.5;
      const int shade = static_cast<int>(235 - 120 * t);
      o << "<rect x=\"" << L + cw * static_cast<double>(c) << "\" y=\"" << T + ch * static_cast<double>(r) << "\" width=\""
        << cw << "\" height=\"" << ch << "\" fill=\"rgb(" << shade << "," << shade << ",255)\" stroke=\"white\"/>\n";
      o << "<text x=\"" << L + cw * (static_cast<double>(c) + 0.5) << "\" y=\"" << T + ch * (static_cast<double>(r) + 0.6)
        << "\" text-anchor=\"middle\" font-size=\"12\">" << fmt(std::round(v * 1000) / 1000) << "</text>\n";
    }
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace sri

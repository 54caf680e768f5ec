#pragma once

// Batch front-end: gen | train | oracle | optimize | eval | sweep | report | baseline bc.
//
// Exit codes: 0 ok, 2 usage, 3 config or schema, 4 missing file, 5 unreadable file,
// 6 env/model mismatch, 7 training failure, 8 anything else.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "sri/experiment.hpp"

namespace sri::cli {

enum Exit { ok = 0, usage = 2, config = 3, missing = 4, unreadable = 5, incompatible = 6, training = 7, other = 8 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IncompatibleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string command;
  std::string config_path, out, model_path, dataset_path, axis, method = "sri", in;
  std::optional<std::uint64_t> seed;
  int threads = 1;
  int tasks = 50;
};

inline ExperimentConfig load_config(const std::string& path) {
  const std::string text = io::read_file(path);
  ExperimentConfig c;
  try {
    c = nlohmann::json::parse(text).get<ExperimentConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  } catch (const ArgumentError& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
  c.validate();
  return c;
}

/// Appends timestamped lines to <out>/run.log; nothing else carries wall-clock data.
class RunLog {
 public:
  explicit RunLog(std::filesystem::path path) : path_(std::move(path)) {}
  void operator()(const std::string& msg) const {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%S", std::gmtime(&now));
    std::ofstream(path_, std::ios::app) << stamp << ' ' << msg << '\n';
  }

 private:
  std::filesystem::path path_;
};

class Runner {
 public:
  explicit Runner(Options o) : o_(std::move(o)) {}

  int run() {
    if (o_.command == "report") return report();
    if (!o_.seed) throw UsageError(o_.command + ": --seed is required");
    c_ = load_config(o_.config_path);
    c_.seed = *o_.seed;
    prepare_out(c_.output_dir);
    log_("start " + o_.command + " seed=" + std::to_string(c_.seed));
    if (o_.command == "gen") gen();
    else if (o_.command == "train") train_cmd();
    else if (o_.command == "oracle") oracle();
    else if (o_.command == "optimize") evaluate("optimize", Method::sri, true);
    else if (o_.command == "eval") evaluate("eval", method_from_string(o_.method), false);
    else if (o_.command == "sweep") sweep();
    else if (o_.command == "bc") baseline_bc();
    else throw UsageError("unknown command '" + o_.command + "'");
    log_("done " + o_.command);
    return ok;
  }

 private:
  Options o_;
  ExperimentConfig c_;
  std::filesystem::path dir_;
  RunLog log_{"run.log"};

  void prepare_out(const std::string& fallback) {
    std::string d = o_.out;
    if (d.empty())
      if (const char* e = std::getenv("SRI_OUTPUT_DIR"); e && *e) d = e;
    if (d.empty()) d = fallback;
    dir_ = d;
    std::filesystem::create_directories(dir_);
    log_ = RunLog(dir_ / "run.log");
  }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  // Written artifacts are read back and checked before the command reports success.
  void write_csv(const std::string& name, const Csv& csv) const {
    csv.save(path(name));
    const auto rows = parse_csv(io::read_file(path(name)));
    if (rows.size() != csv.rows().size() + 1) throw std::runtime_error("validation failed for " + name);
    for (std::size_t i = 0; i < csv.rows().size(); ++i)
      if (rows[i + 1] != csv.rows()[i]) throw std::runtime_error("validation failed for " + name);
    log_("wrote " + name);
  }

  void write_bytes(const std::string& name, const std::string& bytes) const {
    io::write_file(path(name), bytes);
    if (io::read_file(path(name)) != bytes) throw std::runtime_error("validation failed for " + name);
    log_("wrote " + name);
  }

  std::shared_ptr<const ModelParams> load_model_checked() const {
    if (o_.model_path.empty()) throw UsageError(o_.command + ": --model is required");
    auto m = std::make_shared<const ModelParams>(load_model(o_.model_path));
    if (m->env.kind != c_.env.kind || m->config.state_dim != c_.env.feature_dims())
      throw IncompatibleError("model '" + o_.model_path + "' was trained for a different environment");
    return m;
  }

  DatasetConfig dataset_config() const {
    DatasetConfig dc = c_.dataset;
    dc.seed = cell_seed(c_.seed, 0xda7a, 0);
    return dc;
  }

  void gen() {
    const Dataset ds = make_dataset(c_.env, dataset_config());
    const std::string bytes = serialize_dataset(ds);
    write_bytes("dataset.sridata", bytes);
    if (serialize_dataset(load_dataset(path("dataset.sridata"))) != bytes)
      throw std::runtime_error("validation failed for dataset.sridata");
  }

  void train_cmd() {
    Dataset ds;
    if (o_.dataset_path.empty()) {
      ds = make_dataset(c_.env, dataset_config());
    } else {
      ds = load_dataset(o_.dataset_path);
      if (nlohmann::json(ds.env) != nlohmann::json(c_.env))
        throw IncompatibleError("dataset '" + o_.dataset_path + "' was generated for a different environment");
    }
    ModelConfig mc = c_.model;
    mc.state_dim = c_.env.feature_dims();
    mc.max_traj_len = static_cast<int>(ds.max_trajectory_length());
    TrainConfig tc = c_.train;
    tc.seed = cell_seed(c_.seed, 0x7a1, 0);
    TrainResult res;
    try {
      res = train(ds, mc, tc);
    } catch (const TrainingAborted& e) {
      write_bytes("model_last_good.sricp", serialize_model(e.last_good));
      throw;
    }
    for (const auto& e : res.report.epochs)
      log_("epoch " + std::to_string(e.epoch) + " seconds=" + fmt(e.seconds) + " train_loss=" + fmt(e.train_loss));
    const std::string bytes = serialize_model(res.params);
    write_bytes("model.sricp", bytes);
    if (serialize_model(load_model(path("model.sricp"))) != bytes) throw std::runtime_error("validation failed for model.sricp");
    write_csv("train_report.csv", train_report_csv(res.report));
  }

  void oracle() {
    const EvalSpec spec = eval_spec(c_, o_.threads);
    const RewardFamily family = oracle_family(c_.env, c_.oracle_lattice);
    const LikelihoodModel lm{spec.behavior, spec.oracle_sigma};
    Csv post_csv({"trial", "candidate", "goal_x", "goal_y", "prior", "weight"});
    for (int i = 0; i < spec.trials; ++i) {
      const auto [task, demos] = trial_inputs(c_.env, spec, i);
      const Posterior p = posterior(family, lm, demos);
      for (std::size_t k = 0; k < family.candidates.size(); ++k)
        post_csv.add({std::to_string(i), std::to_string(k), fmt(family.candidates[k].goal.x),
                      fmt(family.candidates[k].goal.y), fmt(family.prior[k]), fmt(p.weights[k])});
    }
    write_csv("oracle_posterior.csv", post_csv);
    if (o_.model_path.empty()) return;
    if (c_.env.kind != EnvKind::grid) throw UnsupportedError("oracle: value-gap reports need a grid env");
    const auto model = load_model_checked();
    Csv gap({"trial", "goal_cell", "delta", "gap", "max_state_gap", "bound", "holds"});
    for (const auto& r : grid_reward_errors(model, c_.env, spec.behavior, spec.trials, spec.demos, spec.seed))
      gap.add({std::to_string(r.task), std::to_string(r.goal_cell), fmt(r.gap.delta), fmt(r.gap.gap),
               fmt(r.gap.max_state_gap), fmt(r.gap.bound), r.gap.holds ? "1" : "0"});
    write_csv("oracle_gap.csv", gap);
  }

  void evaluate(const std::string& name, Method method, bool episodes) {
    std::shared_ptr<const ModelParams> model;
    if (method == Method::sri) model = load_model_checked();
    const auto rs = evaluate_trials(c_.env, method, eval_spec(c_, o_.threads), model);
    write_csv(name + ".csv", trial_csv({{to_string(method), rs}}, "setting", {""}));
    if (!episodes) return;
    nlohmann::json all = nlohmann::json::array();
    for (const auto& r : rs) {
      nlohmann::json e = episode_to_json(c_.env, r.episode);
      e["trial"] = r.trial;
      e["goal"] = r.goal;
      all.push_back(e);
    }
    write_bytes(name + "_episodes.json", all.dump(1) + "\n");
  }

  void baseline_bc() {
    if (c_.env.kind == EnvKind::grid) throw UnsupportedError("bc baseline requires a continuous env");
    const EvalSpec spec = eval_spec(c_, o_.threads);
    write_csv("bc.csv", trial_csv({{"bc", evaluate_trials(c_.env, Method::bc, spec)}}, "setting", {""}));
    const auto [task, demos] = trial_inputs(c_.env, spec, 0);
    BCConfig bc = spec.bc;
    bc.seed = splitmix64(spec.bc.seed);
    const std::string bytes = serialize_bc(train_bc(c_.env, demos, bc));
    write_bytes("bc_trial0.sricp", bytes);
    if (serialize_bc(deserialize_bc(io::read_file(path("bc_trial0.sricp")))) != bytes)
      throw std::runtime_error("validation failed for bc_trial0.sricp");
  }

  void sweep() {
    const int th = o_.threads;
    auto progress = [&](const std::string& what) { log_("cell " + what); };
    if (o_.axis == "data") {
      const auto cells = sweep_data_quantity(c_, th, [&](const DataCell& d) {
        progress("K=" + std::to_string(d.K) + " N_s=" + std::to_string(d.N_s) + " seed=" + std::to_string(d.seed));
      });
      write_csv("sweep_data_cells.csv", data_cells_csv(cells));
      write_csv("sweep_data_table.csv", data_table_csv(data_table(cells, c_.sweep.K, c_.sweep.N_s), c_.sweep.K, c_.sweep.N_s));
    } else if (o_.axis == "epsilon") {
      write_csv("sweep_epsilon.csv", runs_csv("epsilon", sweep_epsilon(c_, th)));
    } else if (o_.axis == "alpha") {
      write_csv("sweep_alpha.csv", runs_csv("alpha", sweep_alpha(c_, th)));
    } else if (o_.axis == "demos") {
      write_csv("sweep_demos.csv",
                runs_csv("demos", sweep_demos(c_, th, o_.model_path.empty() ? nullptr : load_model_checked())));
    } else if (o_.axis == "grid") {
      const auto cells = sweep_grid_error(c_, o_.tasks, [&](const GridCell& g) {
        progress("K=" + std::to_string(g.K) + " seed=" + std::to_string(g.seed));
      });
      write_csv("sweep_grid.csv", grid_cells_csv(cells));
    } else {
      throw UsageError("sweep: --axis must be one of data, epsilon, alpha, demos, grid");
    }
  }

  // Aggregate rows of a sweep CSV keyed by (method, setting); plots use clipped means.
  struct Agg {
    double x, mean, se;
  };
  static std::map<std::string, std::vector<Agg>> aggregates(const std::vector<std::vector<std::string>>& rows) {
    std::map<std::string, std::vector<Agg>> out;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const auto& r = rows[i];
      if (r.size() < 13 || r[2] != "aggregate" || r[6].empty()) continue;
      out[r[1]].push_back({r[0].empty() ? NAN : std::stod(r[0]), std::stod(r[6]), r[9].empty() ? 0.0 : std::stod(r[9])});
    }
    return out;
  }

  static Series series_of(const std::string& name, const std::vector<Agg>& a) {
    Series s{name, {}, {}, {}};
    for (const auto& p : a) {
      s.x.push_back(p.x);
      s.y.push_back(p.mean);
      s.err.push_back(p.se);
    }
    return s;
  }

  int report() {
    dir_ = o_.in.empty() ? (o_.out.empty() ? std::filesystem::path(std::getenv("SRI_OUTPUT_DIR") ? std::getenv("SRI_OUTPUT_DIR") : "out")
                                           : std::filesystem::path(o_.out))
                         : std::filesystem::path(o_.in);
    if (!std::filesystem::is_directory(dir_)) throw MissingFileError("report: no directory '" + dir_.string() + "'");
    log_ = RunLog(dir_ / "run.log");
    int written = 0;
    auto svg = [&](const std::string& name, const std::string& body) {
      write_bytes(name, body);
      ++written;
    };
    auto exists = [&](const std::string& n) { return std::filesystem::exists(dir_ / n); };

    if (exists("sweep_epsilon.csv")) {
      const auto agg = aggregates(parse_csv(io::read_file(path("sweep_epsilon.csv"))));
      std::vector<Series> ss;
      if (agg.count("sri")) {
        ss.push_back(series_of("SRI", agg.at("sri")));
        const double lo = ss[0].x.front(), hi = ss[0].x.back();
        for (const char* ref : {"ground-truth", "prior"})
          if (agg.count(ref)) {
            const Agg a = agg.at(ref).front();
            ss.push_back(Series{ref, {lo, hi}, {a.mean, a.mean}, {}});
          }
      }
      svg("report_epsilon.svg", svg_line_plot("Proximity vs demonstration noise", "epsilon", "goal proximity (clipped)", ss));
    }
    if (exists("sweep_alpha.csv")) {
      const auto agg = aggregates(parse_csv(io::read_file(path("sweep_alpha.csv"))));
      std::vector<Series> ss;
      for (const auto& [m, a] : agg) ss.push_back(series_of(m == "sri" ? "SRI" : m == "bc" ? "BC" : m, a));
      svg("report_alpha.svg", svg_line_plot("Proximity vs demonstrator alpha", "alpha", "goal proximity (clipped)", ss));
    }
    if (exists("sweep_demos.csv")) {
      const auto agg = aggregates(parse_csv(io::read_file(path("sweep_demos.csv"))));
      std::vector<Series> ss;
      for (const auto& [m, a] : agg) ss.push_back(series_of(m == "sri" ? "SRI" : m, a));
      svg("report_demos.svg",
          svg_line_plot("Proximity vs number of demonstrations", "demonstrations", "goal proximity (clipped)", ss, true));
    }
    if (exists("sweep_data_table.csv")) {
      const auto rows = parse_csv(io::read_file(path("sweep_data_table.csv")));
      if (rows.size() < 2) throw LoadError("sweep_data_table.csv: empty table");
      std::vector<std::string> rlabels, clabels(rows[0].begin() + 1, rows[0].end());
      std::vector<std::vector<double>> vals;
      for (std::size_t i = 1; i < rows.size(); ++i) {
        rlabels.push_back(rows[i][0]);
        std::vector<double> v;
        for (std::size_t j = 1; j < rows[i].size(); ++j) v.push_back(rows[i][j].empty() ? NAN : std::stod(rows[i][j]));
        vals.push_back(v);
      }
      svg("report_data.svg", svg_table("Mean proximity (median over seeds, unclipped)", "K", rlabels, "states per task",
                                       clabels, vals));
    }
    if (exists("sweep_grid.csv")) {
      const auto rows = parse_csv(io::read_file(path("sweep_grid.csv")));
      std::map<double, std::vector<double>> byK;
      for (std::size_t i = 1; i < rows.size(); ++i) byK[std::stod(rows[i][0])].push_back(std::stod(rows[i][2]));
      Series s{"median sup error", {}, {}, {}};
      for (const auto& [k, v] : byK) {
        s.x.push_back(k);
        s.y.push_back(median_of(v));
      }
      svg("report_grid.svg", svg_line_plot("Reward error vs posterior mean", "tasks K", "sup |R_SRI - R_bar|", {s}, true));
    }
    if (written == 0) throw MissingFileError("report: no sweep CSVs found in '" + dir_.string() + "'");
    return ok;
  }
};

/// Parses arguments and runs one command; returns the process exit code.
inline int run(const std::vector<std::string>& args, std::ostream& err = std::cerr) {
  CLI::App app{"Supervised reward inference experiments", "sri"};
  app.require_subcommand(1);
  Options o;
  std::uint64_t seed = 0;
  auto common = [&](CLI::App* s, bool stochastic) {
    s->add_option("--config", o.config_path, "experiment config (JSON)")->required();
    if (stochastic) s->add_option("--seed", seed, "experiment seed");
    s->add_option("--threads", o.threads, "worker threads")->check(CLI::PositiveNumber);
    s->add_option("--out", o.out, "output directory (default: $SRI_OUTPUT_DIR, then config output_dir)");
  };
  auto* gen = app.add_subcommand("gen", "generate a .sridata dataset");
  common(gen, true);
  auto* tr = app.add_subcommand("train", "train a model; writes a checkpoint and train_report.csv");
  common(tr, true);
  tr->add_option("--dataset", o.dataset_path, "existing .sridata (default: generate from the config)");
  auto* orc = app.add_subcommand("oracle", "exact posterior tables and value-gap reports");
  common(orc, true);
  orc->add_option("--model", o.model_path, "checkpoint for gap reports (grid env)");
  auto* opt = app.add_subcommand("optimize", "plan with the inferred reward; writes trials and episodes");
  common(opt, true);
  opt->add_option("--model", o.model_path)->required();
  auto* ev = app.add_subcommand("eval", "per-trial proximity CSV for one method");
  common(ev, true);
  ev->add_option("--model", o.model_path);
  ev->add_option("--method", o.method, "sri | ground-truth | prior | oracle | bc | stay");
  auto* sw = app.add_subcommand("sweep", "run an experiment grid");
  common(sw, true);
  sw->add_option("--axis", o.axis, "data | epsilon | alpha | demos | grid")->required();
  sw->add_option("--model", o.model_path, "reuse a checkpoint (demos axis)");
  sw->add_option("--tasks", o.tasks, "held-out tasks per cell (grid axis)")->check(CLI::PositiveNumber);
  auto* rep = app.add_subcommand("report", "render sweep CSVs as SVG");
  rep->add_option("--in", o.in, "directory holding sweep CSVs");
  rep->add_option("--out", o.out);
  auto* base = app.add_subcommand("baseline", "baselines");
  base->require_subcommand(1);
  auto* bc = base->add_subcommand("bc", "behavioral cloning on each trial's demonstrations");
  common(bc, true);

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return ok;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return usage;
  }
  for (auto* s : {gen, tr, orc, opt, ev, sw, rep, bc})
    if (s->parsed()) {
      o.command = s->get_name();
      if (s != rep && s->count("--seed")) o.seed = seed;
    }

  try {
    return Runner(o).run();
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return usage;
  } catch (const MissingFileError& e) {
    err << "missing file: " << e.what() << "\n";
    return missing;
  } catch (const LoadError& e) {
    err << "unreadable file: " << e.what() << "\n";
    return unreadable;
  } catch (const IncompatibleError& e) {
    err << "incompatible inputs: " << e.what() << "\n";
    return incompatible;
  } catch (const TrainingError& e) {
    err << "training failed: " << e.what() << "\n";
    return training;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return config;
  } catch (const UnsupportedError& e) {
    err << "config error: " << e.what() << "\n";
    return config;
  } catch (const ArgumentError& e) {
    err << "config error: " << e.what() << "\n";
    return config;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return other;
  }
}

inline int run(int argc, char** argv) {
  return run(std::vector<std::string>(argv + 1, argv + argc));
}

}  // namespace sri::cli

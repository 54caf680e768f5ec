// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <CLI11.hpp>

#include <chrono>
#include <cstring>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "gradcheck.hpp"
#include "sri/cli.hpp"

using namespace sri;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string num(double v, int prec = 4) {
  std::ostringstream o;
  o << std::setprecision(prec) << v;
  return o.str();
}

struct Suite {
  int threads = 1;
  fs::path work;

  void save(const std::string& name, const Csv& csv) const { csv.save((work / name).string()); }

  // --- gradients -----------------------------------------------------------

  Verdict ac1() const {
    const auto t0 = Clock::now();
    Rng rng = make_rng(2024);
    double worst = 0.0;
    std::string worst_name;
    bool all_sampled = true;
    for (auto& c : gradcheck::layer_cases(rng)) {
      const auto r = gradcheck::check(c.inputs, c.f, rng);
      all_sampled = all_sampled && r.checked == 100;
      if (r.max_rel_error >= worst) {
        worst = r.max_rel_error;
        worst_name = c.name;
      }
    }
    const double secs = seconds_since(t0);
    return {all_sampled && worst < 1e-4 && secs < 10.0,
            "max_rel_error=" + num(worst) + " (" + worst_name + ") seconds=" + num(secs)};
  }

  // --- linearity of expected return ----------------------------------------

  Verdict ac2() const {
    const auto t0 = Clock::now();
    const EnvSpec env = EnvSpec::grid(3);
    RewardFamily fam{env, {}, {1.0 / 3, 1.0 / 3, 1.0 / 3}};
    for (int c : {2, 4, 8}) {
      Task t;
      t.goal = cell_position(env, c);
      t.task_id = c;
      fam.candidates.push_back(t);
    }
    LikelihoodModel lm;
    lm.behavior.class_tag = BehaviorClass::boltzmann;
    lm.behavior.beta = 0.3;
    lm.behavior.demo_horizon = 3;
    Rng rng = make_rng(31);
    const auto demos = generate_many(rng, env, fam.candidates[1], lm.behavior, 1);
    const Posterior post = posterior(fam, lm, demos);

    TabularMdp m = TabularMdp::from_grid(env);
    m.d0.assign(static_cast<std::size_t>(m.num_states), 1.0 / m.num_states);
    std::vector<TabularPolicy> pols;
    for (int k = 0; k < 100; ++k) {
      TabularPolicy p(static_cast<std::size_t>(m.num_states * m.num_actions));
      for (int s = 0; s < m.num_states; ++s) {
        double z = 0.0;
        for (int a = 0; a < m.num_actions; ++a) z += p[static_cast<std::size_t>(s * m.num_actions + a)] = uniform(rng, 0.0, 1.0);
        for (int a = 0; a < m.num_actions; ++a) p[static_cast<std::size_t>(s * m.num_actions + a)] /= z;
      }
      pols.push_back(p);
    }
    const double lin = linearity_error(m, fam, post, pols);
    const OptimalityReport rep = verify_posterior_mean_optimality(m, fam, post);
    const double secs = seconds_since(t0);
    std::ostringstream w;
    for (double x : post.weights) w << num(x, 3) << ' ';
    return {lin < 1e-10 && rep.max_linearity_error < 1e-10 && rep.sets_equal && secs < 30.0,
            "posterior=[ " + w.str() + "] stochastic_err=" + num(lin) + " enumerated=" + std::to_string(rep.policies) +
                " enum_err=" + num(rep.max_linearity_error) + " argmax_sets_equal=" + (rep.sets_equal ? "yes" : "no") +
                " argmax_size=" + std::to_string(rep.argmax_mean.size()) + " seconds=" + num(secs)};
  }

  // --- grid sweep shared by the value-gap and convergence criteria ---------

  std::optional<std::vector<GridCell>> grid_cells;
  double grid_seconds = 0.0;

  static ExperimentConfig grid_config() {
    ExperimentConfig c;
    c.env = EnvSpec::grid(5);
    c.dataset.behavior.class_tag = BehaviorClass::boltzmann;
    c.dataset.behavior.beta = 1.0;
    c.dataset.N_T = 20;
    c.dataset.N_s = 200;
    c.dataset.N_I = 2;
    c.model.state_dim = c.env.feature_dims();
    c.model.layers = 2;
    c.train.epochs = 60;
    c.train.learning_rate = 1e-3;
    c.train.state_cap = 64;
    c.train.patience = 30;
    c.eval_demos = 2;
    c.sweep.K = {125, 500, 2000};
    c.sweep.seeds = {0, 1, 2, 3, 4};
    c.seed = 4;
    return c;
  }

  const std::vector<GridCell>& grid() {
    if (!grid_cells) {
      const auto t0 = Clock::now();
      grid_cells = sweep_grid_error(grid_config(), 50, [](const GridCell& g) {
        std::cout << "  grid K=" << g.K << " seed=" << g.seed << " mean_sup_error=" << num(g.mean_sup_error)
                  << " violations=" << g.gap_violations << std::endl;
      });
      grid_seconds = seconds_since(t0);
      save("ac4_grid.csv", grid_cells_csv(*grid_cells));
    }
    return *grid_cells;
  }

  Verdict ac3() {
    int viol = 0, checks = 0;
    for (const auto& g : grid()) {
      viol += g.gap_violations;
      checks += g.tasks;
    }
    return {viol == 0, "checkpoints=" + std::to_string(grid().size()) + " checks=" + std::to_string(checks) +
                           " violations=" + std::to_string(viol)};
  }

  Verdict ac4() {
    const auto& cells = grid();
    const auto Ks = grid_config().sweep.K;
    std::vector<double> med;
    std::string detail;
    for (int K : Ks) {
      std::vector<double> v;
      for (const auto& g : cells)
        if (g.K == K) v.push_back(g.mean_sup_error);
      med.push_back(median_of(v));
      detail += "K=" + std::to_string(K) + ":" + num(med.back()) + " ";
    }
    bool mono = true;
    for (std::size_t i = 1; i < med.size(); ++i) mono = mono && med[i] <= med[i - 1];
    return {mono && med.back() < 1.5 && grid_seconds < 1800.0, detail + "seconds=" + num(grid_seconds)};
  }

  // --- psychic robustness --------------------------------------------------

  Verdict ac5() const {
    ExperimentConfig c;
    c.env = EnvSpec::point_reach();
    c.dataset.behavior.class_tag = BehaviorClass::psychic;
    c.dataset.K = 1000;
    c.dataset.N_T = 1;
    c.dataset.N_I = 1;
    c.dataset.N_s = 200;
    c.model.state_dim = c.env.feature_dims();
    c.model.token_stride = 10;
    c.model.layers = 2;
    c.train.epochs = 30;
    c.train.learning_rate = 1e-3;
    c.train.state_cap = 64;
    c.train.patience = 15;
    c.eval_demos = 1;
    c.sweep.alpha = {-1.0, -0.5, 0.5, 1.0};
    c.seed = 5;
    const auto t0 = Clock::now();
    const auto runs = sweep_alpha(c, threads);
    const double secs = seconds_since(t0);
    save("ac5_alpha.csv", runs_csv("alpha", runs));
    double lo = INFINITY, hi = -INFINITY, bc_neg = NAN;
    std::string detail;
    for (const auto& r : runs) {
      const double m = summarize(proximities(r.trials, r.method == "bc")).mean;
      detail += r.method + "@" + r.setting + "=" + num(m, 3) + " ";
      if (r.method == "sri") {
        lo = std::min(lo, m);
        hi = std::max(hi, m);
      } else if (r.setting == fmt(-1.0)) {
        bc_neg = m;
      }
    }
    return {hi - lo < 0.15 && bc_neg < 0.1 && secs < 1800.0,
            detail + "sri_spread=" + num(hi - lo, 3) + " seconds=" + num(secs)};
  }

  // --- noise sweep and the demo-count sweep reusing its models -------------

  std::optional<std::vector<SettingRun>> eps_runs;
  std::vector<std::shared_ptr<const ModelParams>> eps_models;

  static ExperimentConfig noise_config() {
    ExperimentConfig c;
    c.env = EnvSpec::point_reach();
    c.dataset.behavior.class_tag = BehaviorClass::noisy_gesture;
    c.dataset.K = 2000;
    c.dataset.N_T = 30;
    c.dataset.N_I = 10;
    c.dataset.N_s = 200;
    c.model.state_dim = c.env.feature_dims();
    c.model.token_stride = 2;
    c.model.layers = 2;
    c.train.epochs = 20;
    c.train.learning_rate = 1e-3;
    c.train.N_I_min = 1;
    c.train.state_cap = 64;
    c.train.patience = 15;
    c.eval_demos = 100;
    c.sweep.epsilon = {0.0, 0.5, 0.87, 1.0};
    c.sweep.demos = {1, 3, 10, 30};
    c.seed = 6;
    return c;
  }

  const std::vector<SettingRun>& noise() {
    if (!eps_runs) {
      eps_runs = sweep_epsilon(noise_config(), threads, &eps_models);
      save("ac6_epsilon.csv", runs_csv("epsilon", *eps_runs));
    }
    return *eps_runs;
  }

  Verdict ac6() {
    const auto& runs = noise();
    std::map<std::string, Summary> s;
    std::vector<double> medians;
    std::string detail;
    for (const auto& r : runs) {
      const Summary x = summarize(proximities(r.trials, false));
      const std::string key = r.method == "sri" ? r.setting : r.method;
      s[key] = x;
      if (r.method == "sri") medians.push_back(x.median);
      detail += key + "=" + num(x.mean, 3) + "/" + num(x.median, 3) + " ";
    }
    bool mono = true;
    for (std::size_t i = 1; i < medians.size(); ++i) mono = mono && medians[i] <= medians[i - 1];
    const Summary& e0 = s.at(fmt(0.0));
    const Summary& e1 = s.at(fmt(1.0));
    const Summary& gt = s.at("ground-truth");
    const Summary& pr = s.at("prior");
    const bool ceiling = e0.mean >= gt.mean - 0.1;
    const bool overlap = std::abs(e1.mean - pr.mean) <= 2.0 * (e1.se + pr.se);
    return {ceiling && mono && overlap, "(mean/median) " + detail + "ceiling=" + (ceiling ? "ok" : "no") +
                                            " monotone=" + (mono ? "ok" : "no") + " prior_overlap=" + (overlap ? "ok" : "no")};
  }

  Verdict ac7() {
    noise();
    ExperimentConfig c = noise_config();
    c.dataset.behavior.epsilon = 0.87;
    std::size_t idx = 0;
    while (c.sweep.epsilon[idx] != 0.87) ++idx;
    const auto runs = sweep_demos(c, threads, eps_models[idx]);
    save("ac7_demos.csv", runs_csv("demos", runs));
    std::vector<double> med;
    std::string detail;
    double one = NAN;
    for (const auto& r : runs) {
      const Summary x = summarize(proximities(r.trials, false));
      if (med.empty()) one = x.mean;
      med.push_back(x.median);
      detail += r.setting + "=" + num(x.mean, 3) + "/" + num(x.median, 3) + " ";
    }
    bool mono = true;
    for (std::size_t i = 1; i < med.size(); ++i) mono = mono && med[i] >= med[i - 1];
    return {one > 0.0 && mono, "(mean/median) " + detail};
  }

  // --- data quantity table -------------------------------------------------

  Verdict ac8() const {
    ExperimentConfig c;
    c.env = EnvSpec::point_reach();
    c.dataset.behavior.class_tag = BehaviorClass::hard;
    c.dataset.N_T = 10;
    c.dataset.N_I = 2;
    c.model.state_dim = c.env.feature_dims();
    c.model.token_stride = 10;
    c.model.layers = 1;
    c.train.epochs = 20;
    c.train.learning_rate = 1e-3;
    c.train.state_cap = 0;
    c.train.patience = 0;
    c.eval_demos = 10;
    c.sweep.K = {125, 500, 2000};
    c.sweep.N_s = {50, 200, 800};
    c.sweep.seeds = {0, 1, 2, 3, 4};
    c.seed = 8;
    const auto cells = sweep_data_quantity(c, threads, [](const DataCell& d) {
      std::cout << "  data K=" << d.K << " N_s=" << d.N_s << " seed=" << d.seed << " mean=" << num(d.proximity.mean)
                << std::endl;
    });
    save("ac8_cells.csv", data_cells_csv(cells));
    const auto t = data_table(cells, c.sweep.K, c.sweep.N_s);
    save("ac8_table.csv", data_table_csv(t, c.sweep.K, c.sweep.N_s));
    std::vector<double> rows, cols;
    for (const auto& r : t) rows.push_back(median_of(r));
    for (std::size_t j = 0; j < c.sweep.N_s.size(); ++j) {
      std::vector<double> col;
      for (const auto& r : t) col.push_back(r[j]);
      cols.push_back(median_of(col));
    }
    bool mono = true;
    std::string detail = "row_medians=";
    for (std::size_t i = 0; i < rows.size(); ++i) {
      mono = mono && (i == 0 || rows[i] >= rows[i - 1]);
      detail += num(rows[i], 3) + " ";
    }
    detail += "col_medians=";
    for (std::size_t j = 0; j < cols.size(); ++j) {
      mono = mono && (j == 0 || cols[j] >= cols[j - 1]);
      detail += num(cols[j], 3) + " ";
    }
    return {mono, detail};
  }

  // --- determinism of every command ----------------------------------------

  static nlohmann::json small_config() {
    return {{"env", EnvSpec::point_reach()},
            {"dataset", {{"K", 8}, {"N_T", 2}, {"N_I", 1}, {"N_s", 8}, {"behavior", {{"class", "noisy_gesture"}, {"epsilon", 0.5}, {"demo_horizon", 10}}}}},
            {"model", {{"token_stride", 5}, {"token_dim", 8}, {"layers", 1}, {"traj_rep_dim", 8}, {"task_rep_dim", 8}, {"state_rep_dim", 8}, {"hidden", 8}}},
            {"train", {{"epochs", 2}, {"batch_size", 4}, {"patience", 0}, {"state_cap", 0}}},
            {"planner", {{"candidates", 16}, {"elites", 4}, {"iterations", 1}}},
            {"bc", {{"epochs", 2}, {"hidden", 8}}},
            {"sweep", {{"K", {4, 8}}, {"N_s", {4}}, {"seeds", {0}}, {"demos", {1, 2}}, {"epsilon", {0.0, 1.0}}, {"alpha", {-1.0, 1.0}}}},
            {"trials", 4},
            {"eval_demos", 2},
            {"oracle_lattice", 3}};
  }

  static std::map<std::string, std::string> outputs(const fs::path& dir) {
    std::map<std::string, std::string> m;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file() && e.path().filename() != "run.log") m[e.path().filename().string()] = io::read_file(e.path().string());
    return m;
  }

  Verdict ac9() const {
    const fs::path root = work / "ac9";
    fs::remove_all(root);
    fs::create_directories(root);
    nlohmann::json point = small_config();
    nlohmann::json grid = small_config();
    grid["env"] = EnvSpec::grid();
    grid["dataset"]["behavior"] = {{"class", "boltzmann"}};
    grid["sweep"]["K"] = {4};
    grid["trials"] = 2;
    io::write_file((root / "point.json").string(), point.dump());
    io::write_file((root / "grid.json").string(), grid.dump());

    auto run_all = [&](const std::string& tag, int thr) -> std::pair<int, std::string> {
      const std::string p = (root / "point.json").string(), g = (root / "grid.json").string();
      const std::string po = (root / (tag + "_point")).string(), go = (root / (tag + "_grid")).string();
      const std::string model = po + "/model.sricp", gmodel = go + "/model.sricp";
      const std::string t = std::to_string(thr);
      const std::vector<std::vector<std::string>> cmds = {
          {"gen", "--config", p, "--seed", "3", "--out", po},
          {"train", "--config", p, "--seed", "3", "--out", po},
          {"eval", "--config", p, "--seed", "3", "--out", po, "--model", model, "--threads", t},
          {"optimize", "--config", p, "--seed", "3", "--out", po, "--model", model, "--threads", t},
          {"oracle", "--config", p, "--seed", "3", "--out", po},
          {"baseline", "bc", "--config", p, "--seed", "3", "--out", po, "--threads", t},
          {"sweep", "--config", p, "--seed", "3", "--out", po, "--axis", "data", "--threads", t},
          {"sweep", "--config", p, "--seed", "3", "--out", po, "--axis", "epsilon", "--threads", t},
          {"sweep", "--config", p, "--seed", "3", "--out", po, "--axis", "alpha", "--threads", t},
          {"sweep", "--config", p, "--seed", "3", "--out", po, "--axis", "demos", "--model", model, "--threads", t},
          {"report", "--in", po},
          {"train", "--config", g, "--seed", "3", "--out", go},
          {"oracle", "--config", g, "--seed", "3", "--out", go, "--model", gmodel},
          {"eval", "--config", g, "--seed", "3", "--out", go, "--model", gmodel, "--threads", t},
          {"sweep", "--config", g, "--seed", "3", "--out", go, "--axis", "grid", "--tasks", "3"},
          {"report", "--in", go}};
      for (const auto& cmd : cmds) {
        std::ostringstream err;
        const int code = cli::run(cmd, err);
        if (code != 0) return {code, cmd[0] + (cmd[0] == "sweep" ? " " + cmd[cmd.size() - 3] : "") + ": " + err.str()};
      }
      return {0, ""};
    };

    const auto a = run_all("a", 1), b = run_all("b", 1), c = run_all("c", 3);
    for (const auto& r : {a, b, c})
      if (r.first != 0) return {false, "command failed (exit " + std::to_string(r.first) + "): " + r.second};
    int files = 0, csvs = 0, diffs = 0;
    std::string which;
    for (const char* kind : {"_point", "_grid"}) {
      const auto fa = outputs(root / (std::string("a") + kind));
      for (const char* other : {"b", "c"}) {
        const auto fb = outputs(root / (std::string(other) + kind));
        if (fa.size() != fb.size()) {
          ++diffs;
          which += std::string(other) + kind + ":file-count ";
        }
        for (const auto& [name, bytes] : fa) {
          ++files;
          csvs += name.size() > 4 && name.substr(name.size() - 4) == ".csv";
          auto it = fb.find(name);
          if (it == fb.end() || it->second != bytes) {
            ++diffs;
            which += std::string(other) + kind + "/" + name + " ";
          }
        }
      }
    }
    return {diffs == 0 && csvs > 0, "compared=" + std::to_string(files) + " csv=" + std::to_string(csvs) +
                                        " differing=" + std::to_string(diffs) + (which.empty() ? "" : " [" + which + "]")};
  }

  // --- serialization round trips -------------------------------------------

  static Dataset random_dataset(Rng& rng, std::uint64_t seed) {
    const EnvSpec envs[] = {EnvSpec::grid(), EnvSpec::point_reach(), EnvSpec::point_fetch()};
    const EnvSpec env = envs[seed % 3];
    DatasetConfig d;
    d.K = 1 + static_cast<int>(uniform_index(rng, 4));
    d.N_T = 1 + static_cast<int>(uniform_index(rng, 3));
    d.N_I = 1;
    d.N_s = 1 + static_cast<int>(uniform_index(rng, 12));
    if (env.kind == EnvKind::grid) {
      d.behavior.class_tag = BehaviorClass::boltzmann;
      d.behavior.beta = uniform(rng, 0.0, 3.0);
    } else {
      const BehaviorClass cs[] = {BehaviorClass::gesture, BehaviorClass::noisy, BehaviorClass::noisy_gesture,
                                  BehaviorClass::psychic, BehaviorClass::hard};
      d.behavior.class_tag = cs[uniform_index(rng, 5)];
      d.behavior.epsilon = uniform(rng, 0.0, 1.0);
      d.behavior.alpha = uniform(rng, -1.0, 1.0);
    }
    d.behavior.demo_horizon = 1 + static_cast<int>(uniform_index(rng, 25));
    d.seed = seed;
    return build_dataset(rng, env, d);
  }

  static ModelParams random_model(Rng& rng, std::uint64_t seed) {
    const EnvSpec env = seed % 2 ? EnvSpec::point_fetch() : EnvSpec::grid(2 + static_cast<int>(uniform_index(rng, 5)));
    ModelConfig c;
    c.state_dim = env.feature_dims();
    c.max_traj_len = 1 + static_cast<int>(uniform_index(rng, 40));
    c.token_stride = 1 + static_cast<int>(uniform_index(rng, 5));
    c.heads = 1 + static_cast<int>(uniform_index(rng, 2));
    c.token_dim = c.heads * (1 + static_cast<int>(uniform_index(rng, 4)));
    c.hidden = c.heads * (1 + static_cast<int>(uniform_index(rng, 4)));
    c.layers = 1 + static_cast<int>(uniform_index(rng, 2));
    c.traj_rep_dim = 1 + static_cast<int>(uniform_index(rng, 6));
    c.task_rep_dim = 1 + static_cast<int>(uniform_index(rng, 6));
    c.state_rep_dim = 1 + static_cast<int>(uniform_index(rng, 6));
    c.aggregator = uniform_index(rng, 2) ? Aggregator::mean_pool : Aggregator::attention_pool;
    ModelParams m = init_model(c, env, seed);
    // Signed zero, subnormal and extreme values.
    const double specials[] = {-0.0, 5e-324, -1e308, 1.0 / 3.0, 0x1.fffffffffffffp+1023};
    for (auto& it : m.params.items())
      for (auto& v : it.value.values())
        if (uniform_index(rng, 8) == 0) v = specials[uniform_index(rng, 5)];
    return m;
  }

  static bool same_bits(const ParameterSet& a, const ParameterSet& b) {
    const auto& ia = a.items();
    const auto& ib = b.items();
    if (ia.size() != ib.size()) return false;
    for (std::size_t i = 0; i < ia.size(); ++i) {
      if (ia[i].name != ib[i].name || ia[i].value.shape() != ib[i].value.shape()) return false;
      const auto& va = ia[i].value.values();
      const auto& vb = ib[i].value.values();
      if (std::memcmp(va.data(), vb.data(), va.size() * sizeof(double)) != 0) return false;
    }
    return true;
  }

  Verdict ac10() const {
    Rng rng = make_rng(1010);
    int ok_data = 0, ok_model = 0;
    for (std::uint64_t i = 0; i < 500; ++i) {
      const Dataset ds = random_dataset(rng, i);
      const std::string bytes = serialize_dataset(ds);
      const Dataset back = deserialize_dataset(bytes);
      ok_data += back.records == ds.records && nlohmann::json(back.env) == nlohmann::json(ds.env) &&
                 nlohmann::json(back.config) == nlohmann::json(ds.config) && serialize_dataset(back) == bytes;
    }
    for (std::uint64_t i = 0; i < 500; ++i) {
      const ModelParams m = random_model(rng, i);
      const std::string bytes = serialize_model(m);
      const ModelParams back = deserialize_model(bytes);
      ok_model += same_bits(back.params, m.params) && nlohmann::json(back.config) == nlohmann::json(m.config) &&
                  nlohmann::json(back.env) == nlohmann::json(m.env) && serialize_model(back) == bytes;
    }
    return {ok_data == 500 && ok_model == 500,
            "dataset=" + std::to_string(ok_data) + "/500 checkpoint=" + std::to_string(ok_model) + "/500"};
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  Suite suite;
  std::string work = "acceptance_work";
  std::vector<int> only;
  app.add_option("--threads", suite.threads, "evaluation threads")->check(CLI::PositiveNumber);
  app.add_option("--work", work, "directory for artifacts");
  app.add_option("--only", only, "criteria to run")->delimiter(',')->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);
  suite.work = work;
  fs::create_directories(suite.work);

  const std::vector<std::pair<int, std::function<Verdict()>>> criteria = {
      {1, [&] { return suite.ac1(); }},  {2, [&] { return suite.ac2(); }},  {10, [&] { return suite.ac10(); }},
      {9, [&] { return suite.ac9(); }},  {3, [&] { return suite.ac3(); }},  {4, [&] { return suite.ac4(); }},
      {5, [&] { return suite.ac5(); }},  {6, [&] { return suite.ac6(); }},  {7, [&] { return suite.ac7(); }},
      {8, [&] { return suite.ac8(); }}};
  const std::set<int> wanted(only.begin(), only.end());
  std::ofstream verdicts(suite.work / "verdicts.txt");
  int failed = 0;
  for (const auto& [n, fn] : criteria) {
    if (!wanted.empty() && !wanted.count(n)) continue;
    const auto t0 = Clock::now();
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    failed += !v.pass;
    std::ostringstream line;
    line << "AC" << n << ' ' << (v.pass ? "PASS" : "FAIL") << ' ' << v.detail << " wall=" << num(seconds_since(t0)) << 's';
    std::cout << line.str() << std::endl;
    verdicts << line.str() << std::endl;
  }
  return failed == 0 ? 0 : 1;
}

#include <gtest/gtest.h>

#include <cmath>

#include "sri/experiment.hpp"

using namespace sri;

namespace {

EvalSpec quick_spec(int trials, int threads = 1) {
  EvalSpec s;
  s.behavior.class_tag = BehaviorClass::gesture;
  s.demos = 2;
  s.trials = trials;
  s.planner.candidates = 16;
  s.planner.elites = 4;
  s.planner.iterations = 2;
  s.seed = 77;
  s.threads = threads;
  return s;
}

ModelConfig tiny_model(const EnvSpec& env) {
  ModelConfig c;
  c.state_dim = env.feature_dims();
  c.max_traj_len = 51;
  c.token_stride = 10;
  c.token_dim = 8;
  c.layers = 1;
  c.traj_rep_dim = 8;
  c.task_rep_dim = 8;
  c.state_rep_dim = 8;
  c.hidden = 8;
  return c;
}

}  // namespace

TEST(Csv, QuotingAndParseRoundTrip) {
  Csv csv({"a", "b,c", "d"});
  csv.add({"plain", "has \"quotes\"", "line\nbreak"});
  csv.add({"", "x,y", "-1.5"});
  const std::string text = csv.str();
  EXPECT_EQ(text.substr(0, 11), "a,\"b,c\",d\r\n");
  const auto rows = parse_csv(text);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"a", "b,c", "d"}));
  EXPECT_EQ(rows[1], (std::vector<std::string>{"plain", "has \"quotes\"", "line\nbreak"}));
  EXPECT_EQ(rows[2], (std::vector<std::string>{"", "x,y", "-1.5"}));
  EXPECT_THROW(csv.add({"too", "short"}), ArgumentError);
}

TEST(Csv, NumberFormat) {
  EXPECT_EQ(fmt(0.5), "0.5");
  EXPECT_EQ(fmt(NAN), "");
  EXPECT_EQ(std::stod(fmt(1.0 / 3.0)), std::stod("0.3333333333"));
}

TEST(Summary, MeanSeMedian) {
  const Summary s = summarize({1.0, 2.0, 4.0, 5.0});
  EXPECT_EQ(s.n, 4u);
  EXPECT_DOUBLE_EQ(s.mean, 3.0);
  EXPECT_DOUBLE_EQ(s.median, 3.0);
  // sample sd = sqrt(10/3), se = sd / 2
  EXPECT_NEAR(s.se, std::sqrt(10.0 / 3.0) / 2.0, 1e-15);
  EXPECT_EQ(median_of({3.0, 1.0, 2.0}), 2.0);
  EXPECT_TRUE(std::isnan(median_of({})));
  EXPECT_EQ(summarize({}).n, 0u);
}

TEST(Evaluate, ThirtyTrialsGiveThirtyRowsAndOneAggregate) {
  const EnvSpec env = EnvSpec::point_reach();
  const auto rs = evaluate_trials(env, Method::ground_truth, quick_spec(30));
  const Csv csv = trial_csv({{"ground-truth", rs}}, "setting", {"x"});
  const auto rows = parse_csv(csv.str());
  ASSERT_EQ(rows.size(), 32u);
  const auto& agg = rows.back();
  EXPECT_EQ(agg[2], "aggregate");
  double sum = 0.0, sumc = 0.0;
  int n = 0;
  for (std::size_t i = 1; i <= 30; ++i) {
    EXPECT_EQ(rows[i][2], std::to_string(i - 1));
    if (rows[i][7] == "1") continue;
    sum += std::stod(rows[i][5]);
    sumc += std::stod(rows[i][6]);
    ++n;
  }
  EXPECT_EQ(std::stoi(agg[12]), n);
  EXPECT_NEAR(std::stod(agg[5]), sum / n, 1e-8);
  EXPECT_NEAR(std::stod(agg[6]), sumc / n, 1e-8);
}

TEST(Evaluate, StayScoresZero) {
  const auto rs = evaluate_trials(EnvSpec::point_reach(), Method::stay, quick_spec(10));
  for (const auto& r : rs) {
    EXPECT_FALSE(r.degenerate);
    EXPECT_EQ(r.proximity, 0.0);
  }
}

TEST(Evaluate, ThreadCountDoesNotChangeResults) {
  const EnvSpec env = EnvSpec::point_reach();
  const auto model = std::make_shared<const ModelParams>(init_model(tiny_model(env), env, 2));
  for (Method m : {Method::sri, Method::ground_truth, Method::bc}) {
    EvalSpec a = quick_spec(6, 1), b = quick_spec(6, 3);
    a.bc.epochs = b.bc.epochs = 2;
    const auto ra = evaluate_trials(env, m, a, model);
    const auto rb = evaluate_trials(env, m, b, model);
    EXPECT_EQ(trial_csv({{to_string(m), ra}}, "s", {""}).str(), trial_csv({{to_string(m), rb}}, "s", {""}).str());
  }
}

TEST(Evaluate, TrialInputsShareTasksAcrossBehaviors) {
  const EnvSpec env = EnvSpec::point_reach();
  EvalSpec a = quick_spec(3), b = quick_spec(3);
  b.behavior.class_tag = BehaviorClass::noisy_gesture;
  b.behavior.epsilon = 0.87;
  for (int i = 0; i < 3; ++i) EXPECT_EQ(trial_inputs(env, a, i).first.goal, trial_inputs(env, b, i).first.goal);
}

TEST(Evaluate, ModelEnvMismatch) {
  const EnvSpec fetch = EnvSpec::point_fetch();
  const auto model = std::make_shared<const ModelParams>(init_model(tiny_model(fetch), fetch, 0));
  EXPECT_THROW(evaluate_trials(EnvSpec::point_reach(), Method::sri, quick_spec(1), model), ConfigError);
  EXPECT_THROW(evaluate_trials(EnvSpec::point_reach(), Method::sri, quick_spec(1)), ArgumentError);
}

TEST(Config, JsonRoundTripAndValidation) {
  ExperimentConfig c;
  c.env = EnvSpec::point_fetch();
  c.model.state_dim = 5;
  c.seed = 9;
  c.sweep.K = {10, 20};
  const nlohmann::json j = c;
  const auto back = j.get<ExperimentConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  EXPECT_NO_THROW(back.validate());

  nlohmann::json partial{{"env", EnvSpec::point_fetch()}, {"model", {{"layers", 1}}}};
  EXPECT_EQ(partial.get<ExperimentConfig>().model.state_dim, 5);

  nlohmann::json bad = j;
  bad["model"]["state_dim"] = 2;
  EXPECT_THROW(bad.get<ExperimentConfig>().validate(), ConfigError);
}

TEST(Sweeps, CellSeedsAreDistinct) {
  EXPECT_NE(cell_seed(0, 0xda7a, 0), cell_seed(0, 0xda7a, 1));
  EXPECT_NE(cell_seed(0, 0xda7a, 0), cell_seed(1, 0xda7a, 0));
  EXPECT_NE(cell_seed(0, 0xda7a, 0), cell_seed(0, 0x7a1, 0));
  EXPECT_EQ(cell_seed(5, 6, 7), cell_seed(5, 6, 7));
}

TEST(Sweeps, DataTableTakesMedianOverSeeds) {
  std::vector<DataCell> cells;
  const double vals[] = {0.1, 0.9, 0.5};
  for (std::uint64_t s = 0; s < 3; ++s) {
    DataCell d;
    d.K = 10;
    d.N_s = 5;
    d.seed = s;
    d.proximity.mean = vals[s];
    cells.push_back(d);
  }
  const auto t = data_table(cells, {10}, {5});
  EXPECT_EQ(t[0][0], 0.5);
  const auto rows = parse_csv(data_table_csv(t, {10}, {5}).str());
  EXPECT_EQ(rows[0], (std::vector<std::string>{"K", "N_s=5"}));
  EXPECT_EQ(rows[1], (std::vector<std::string>{"10", "0.5"}));
}

TEST(Svg, EscapingAndStructure) {
  EXPECT_EQ(xml_escape("a<b & \"c\">"), "a&lt;b &amp; &quot;c&quot;&gt;");
  const std::string svg = svg_line_plot("t<1>", "x", "y", {Series{"s&1", {1, 10, 100}, {0.1, 0.5, 0.4}, {}}}, true);
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("t&lt;1&gt;"), std::string::npos);
  EXPECT_NE(svg.find("s&amp;1"), std::string::npos);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
  const std::string tab = svg_table("T", "K", {"1", "2"}, "N", {"a"}, {{0.1}, {0.2}});
  EXPECT_NE(tab.find("0.2"), std::string::npos);
}

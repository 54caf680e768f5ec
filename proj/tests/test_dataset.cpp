#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <set>

#include "sri/dataset.hpp"

using namespace sri;

namespace {

constexpr double kChi2Df15P01 = 30.578;

DatasetConfig small_config(BehaviorClass c, int K, int N_T, int N_s) {
  DatasetConfig d;
  d.K = K;
  d.N_T = N_T;
  d.N_s = N_s;
  d.N_I = 1;
  d.behavior.class_tag = c;
  d.behavior.demo_horizon = 20;
  return d;
}

Dataset random_dataset(std::uint64_t seed) {
  Rng rng = make_rng(seed);
  const EnvSpec envs[] = {EnvSpec::grid(), EnvSpec::point_reach(), EnvSpec::point_fetch()};
  const EnvSpec env = envs[seed % 3];
  DatasetConfig d = small_config(env.kind == EnvKind::grid ? BehaviorClass::boltzmann : BehaviorClass::noisy_gesture,
                                 1 + static_cast<int>(uniform_index(rng, 4)), 1 + static_cast<int>(uniform_index(rng, 3)),
                                 1 + static_cast<int>(uniform_index(rng, 20)));
  d.behavior.epsilon = 0.5;
  d.behavior.demo_horizon = 1 + static_cast<int>(uniform_index(rng, 30));
  d.seed = seed;
  return build_dataset(rng, env, d);
}

std::string with_header(const std::string& bytes, const std::function<void(nlohmann::json&)>& edit) {
  const io::Framed f = io::unframe(bytes, kDatasetMagic, "test");
  nlohmann::json h = f.header;
  edit(h);
  return io::frame(kDatasetMagic, h, std::string(f.payload, f.payload_bytes));
}

}  // namespace

TEST(Dataset, UniformStatesPassChiSquare) {
  const EnvSpec env = EnvSpec::point_reach();
  DatasetConfig d = small_config(BehaviorClass::psychic, 1, 1, 10000);
  d.state_mix = 0.0;
  Rng rng = make_rng(1);
  const Task t = sample_task(rng, env);
  const auto states = sample_states(rng, env, t, d);
  ASSERT_EQ(states.size(), 10000u);
  std::vector<int> bins(16, 0);
  for (const auto& s : states) {
    const int bx = std::min(3, static_cast<int>((s.agent.x + 1.0) * 2.0));
    const int by = std::min(3, static_cast<int>((s.agent.y + 1.0) * 2.0));
    ++bins[static_cast<std::size_t>(by * 4 + bx)];
  }
  double x2 = 0.0;
  for (int c : bins) x2 += (c - 625.0) * (c - 625.0) / 625.0;
  EXPECT_LT(x2, kChi2Df15P01);
}

TEST(Dataset, StatesDoNotLeakGoal) {
  const EnvSpec env = EnvSpec::point_reach();
  DatasetConfig d = small_config(BehaviorClass::psychic, 1, 1, 1);
  Rng rng = make_rng(2);
  std::vector<double> sx, gx, sy, gy;
  for (int i = 0; i < 10000; ++i) {
    const Task t = sample_task(rng, env);
    const auto s = sample_states(rng, env, t, d).front();
    sx.push_back(s.agent.x);
    sy.push_back(s.agent.y);
    gx.push_back(t.goal.x);
    gy.push_back(t.goal.y);
  }
  auto r = [](const std::vector<double>& a, const std::vector<double>& b) {
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      ma += a[i];
      mb += b[i];
    }
    ma /= static_cast<double>(a.size());
    mb /= static_cast<double>(b.size());
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      ab += (a[i] - ma) * (b[i] - mb);
      aa += (a[i] - ma) * (a[i] - ma);
      bb += (b[i] - mb) * (b[i] - mb);
    }
    return ab / std::sqrt(aa * bb);
  };
  EXPECT_LT(std::abs(r(sx, gx)), 0.05);
  EXPECT_LT(std::abs(r(sy, gy)), 0.05);
}

TEST(Dataset, Cardinalities) {
  const EnvSpec env = EnvSpec::point_reach();
  Rng rng = make_rng(3);
  const Dataset ds = build_dataset(rng, env, small_config(BehaviorClass::gesture, 3, 4, 1));
  ASSERT_EQ(ds.records.size(), 3u);
  for (const auto& r : ds.records) {
    EXPECT_EQ(r.trajectories.size(), 4u);
    EXPECT_EQ(r.states.size(), 1u);
    EXPECT_EQ(r.rewards.size(), 1u);
  }
}

TEST(Dataset, DeskDefaults) {
  const DatasetConfig d;
  EXPECT_EQ(d.K, 2000);
  EXPECT_EQ(d.N_T, 20);
  EXPECT_EQ(d.N_s, 200);
}

TEST(Dataset, LabelsAreExact) {
  for (const EnvSpec& env : {EnvSpec::grid(), EnvSpec::point_reach(), EnvSpec::point_fetch()}) {
    Rng rng = make_rng(4);
    const Dataset ds = build_dataset(
        rng, env, small_config(env.kind == EnvKind::grid ? BehaviorClass::boltzmann : BehaviorClass::gesture, 10, 1, 10));
    int checked = 0;
    for (const auto& r : ds.records)
      for (std::size_t i = 0; i < r.states.size(); ++i, ++checked)
        EXPECT_EQ(r.rewards[i], reward(env, r.task, r.states[i]));
    EXPECT_EQ(checked, 100);
  }
}

TEST(Dataset, FetchStatesIncludeScriptedPhase) {
  const EnvSpec env = EnvSpec::point_fetch();
  Rng rng = make_rng(5);
  DatasetConfig d = small_config(BehaviorClass::gesture, 4, 1, 100);
  const Dataset ds = build_dataset(rng, env, d);
  for (const auto& r : ds.records) {
    const long tagged = std::count(r.fetch_phase.begin(), r.fetch_phase.end(), std::uint8_t{1});
    EXPECT_EQ(tagged, 20);
  }
}

TEST(Dataset, BuildIsDeterministic) {
  EXPECT_EQ(serialize_dataset(random_dataset(11)), serialize_dataset(random_dataset(11)));
}

TEST(Dataset, RoundTrip) {
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    const Dataset ds = random_dataset(seed);
    const std::string bytes = serialize_dataset(ds);
    const Dataset back = deserialize_dataset(bytes);
    EXPECT_EQ(back.records, ds.records);
    EXPECT_EQ(nlohmann::json(back.env), nlohmann::json(ds.env));
    EXPECT_EQ(nlohmann::json(back.config), nlohmann::json(ds.config));
    EXPECT_EQ(serialize_dataset(back), bytes);
  }
}

TEST(Dataset, CorruptMagicIsHeaderError) {
  std::string bytes = serialize_dataset(random_dataset(1));
  bytes[0] = 'X';
  EXPECT_THROW(deserialize_dataset(bytes), HeaderError);
  EXPECT_THROW(deserialize_dataset("SRI"), HeaderError);
}

TEST(Dataset, VersionCheck) {
  const std::string bytes = serialize_dataset(random_dataset(2));
  EXPECT_NO_THROW(deserialize_dataset(with_header(bytes, [](nlohmann::json& h) { h["version"] = 1; })));
  EXPECT_THROW(deserialize_dataset(with_header(bytes, [](nlohmann::json& h) { h["version"] = 99; })), VersionError);
}

TEST(Dataset, TruncationAndSchemaErrors) {
  const std::string bytes = serialize_dataset(random_dataset(4));
  EXPECT_THROW(deserialize_dataset(bytes.substr(0, bytes.size() - 8)), TruncatedError);
  EXPECT_THROW(deserialize_dataset(with_header(bytes, [](nlohmann::json& h) { h.erase("env_spec"); })), HeaderError);
  std::string garbled = bytes;
  garbled[20] = '\x01';
  EXPECT_THROW(deserialize_dataset(garbled), LoadError);
}

TEST(Dataset, MissingFile) { EXPECT_THROW(load_dataset("/nonexistent/dir/x.sridata"), MissingFileError); }

TEST(Split, Proportions) {
  const EnvSpec env = EnvSpec::point_reach();
  Rng rng = make_rng(6);
  DatasetConfig d = small_config(BehaviorClass::psychic, 2000, 1, 1);
  d.behavior.demo_horizon = 2;
  const Dataset ds = build_dataset(rng, env, d);
  Rng s1 = make_rng(7), s2 = make_rng(7);
  const auto [train, val] = split(ds, 0.1, s1);
  EXPECT_EQ(train.records.size(), 1800u);
  EXPECT_EQ(val.records.size(), 200u);
  std::set<int> ids;
  for (const auto& r : train.records) ids.insert(r.task.task_id);
  for (const auto& r : val.records) ids.insert(r.task.task_id);
  EXPECT_EQ(ids.size(), 2000u);
  EXPECT_EQ(*ids.begin(), 0);
  EXPECT_EQ(*ids.rbegin(), 1999);
  const auto again = split(ds, 0.1, s2);
  EXPECT_EQ(again.first.records, train.records);
  EXPECT_THROW(split(ds, 0.0, s2), ArgumentError);
}

TEST(Dataset, ConfigValidation) {
  DatasetConfig d;
  d.N_I = 30;
  EXPECT_THROW(d.validate(), ConfigError);
  d.N_I = 2;
  d.K = 0;
  EXPECT_THROW(d.validate(), ConfigError);
}

#include <gtest/gtest.h>

#include <algorithm>

#include "gradcheck.hpp"
#include "sri/behavior.hpp"
#include "sri/model.hpp"

using namespace sri;

namespace {

ModelConfig small_config(Aggregator agg = Aggregator::attention_pool) {
  ModelConfig c;
  c.max_traj_len = 51;
  c.token_stride = 3;
  c.token_dim = 8;
  c.layers = 2;
  c.heads = 2;
  c.traj_rep_dim = 6;
  c.task_rep_dim = 5;
  c.state_rep_dim = 4;
  c.hidden = 8;
  c.aggregator = agg;
  return c;
}

std::vector<Trajectory> demos(int n, std::uint64_t seed, int horizon = 50) {
  const EnvSpec env = EnvSpec::point_reach();
  Rng rng = make_rng(seed);
  BehaviorClassConfig b;
  b.class_tag = BehaviorClass::noisy_gesture;
  b.epsilon = 0.5;
  b.demo_horizon = horizon;
  const Task t = sample_task(rng, env);
  return generate_many(rng, env, t, b, n);
}

}  // namespace

TEST(Model, TokenCount) {
  ModelConfig c;
  c.token_stride = 5;
  EXPECT_EQ(c.token_count(1), 1);
  EXPECT_EQ(c.token_count(2), 2);
  EXPECT_EQ(c.token_count(6), 2);
  EXPECT_EQ(c.token_count(7), 3);
  EXPECT_EQ(c.token_count(51), 11);
  c.token_stride = 1;
  EXPECT_EQ(c.token_count(51), 51);
}

TEST(Model, InitIsReproducible) {
  const EnvSpec env = EnvSpec::point_reach();
  const auto a = init_model(small_config(), env, 3);
  const auto b = init_model(small_config(), env, 3);
  const auto c = init_model(small_config(), env, 4);
  EXPECT_TRUE(a.params == b.params);
  EXPECT_FALSE(a.params == c.params);
  const auto d = demos(3, 1);
  EXPECT_EQ(encode_trajectory_set(a, d), encode_trajectory_set(b, d));
}

TEST(Model, ThetaGroupsPartitionParameters) {
  const auto m = init_model(small_config(), EnvSpec::point_reach(), 0);
  auto f = m.theta_f(), g = m.theta_g();
  EXPECT_FALSE(f.empty());
  EXPECT_FALSE(g.empty());
  EXPECT_EQ(f.size() + g.size(), m.params.size());
  for (const auto& n : g) EXPECT_EQ(std::find(f.begin(), f.end(), n), f.end());
}

TEST(Model, StateDimMismatch) {
  EXPECT_THROW(init_model(small_config(), EnvSpec::point_fetch(), 0), ConfigError);
}

TEST(Model, IdenticalTrajectoriesIdenticalReps) {
  const auto m = init_model(small_config(), EnvSpec::point_reach(), 0);
  const auto d = demos(1, 2);
  const Trajectory copy = d[0];
  EXPECT_EQ(encode_trajectory(m, d[0]), encode_trajectory(m, copy));
}

TEST(Model, PaddingInvariance) {
  const auto m = init_model(small_config(), EnvSpec::point_reach(), 0);
  const auto shortd = demos(1, 3, 12);
  const auto longd = demos(1, 4, 50);
  const auto alone = encode_trajectory(m, shortd[0]);

  ad::Tape tape;
  BoundModel bm(tape, m, false);
  const Trajectory* ptrs[] = {&longd[0], &shortd[0]};
  const auto& both = tape.value(bm.encode_trajectories(ptrs));
  const std::size_t r = static_cast<std::size_t>(m.config.traj_rep_dim);
  const std::vector<double> second(both.data() + r, both.data() + 2 * r);
  EXPECT_EQ(second, alone);

  // doubling L_B only appends positional rows that masked tokens never see
  ModelParams wide = m;
  wide.config.max_traj_len = 2 * m.config.max_traj_len;
  const auto& pos = m.params.at("f.pos");
  ad::Tensor bigger({static_cast<std::size_t>(wide.config.max_tokens()), pos.dim(1)}, 0.7);
  std::copy(pos.storage().begin(), pos.storage().end(), bigger.storage().begin());
  wide.params.at("f.pos") = bigger;
  EXPECT_EQ(encode_trajectory(wide, shortd[0]), alone);
}

TEST(Model, RepresentationSensitiveToObservations) {
  const auto m = init_model(small_config(), EnvSpec::point_reach(), 0);
  const auto d = demos(1, 5);
  const auto base = encode_trajectory(m, d[0]);
  for (std::size_t k : {std::size_t{0}, std::size_t{3}, d[0].size() - 1}) {
    Trajectory moved = d[0];
    moved.observations[k].agent.x += 0.1;
    EXPECT_NE(encode_trajectory(m, moved), base) << k;
  }
}

TEST(Model, RejectsBadTrajectories) {
  const auto m = init_model(small_config(), EnvSpec::point_reach(), 0);
  EXPECT_THROW(encode_trajectory(m, Trajectory{}), ArgumentError);
  EXPECT_THROW(encode_trajectory(m, demos(1, 6, 60)[0]), ArgumentError);
  EXPECT_THROW(encode_trajectory_set(m, std::vector<Trajectory>{}), ArgumentError);
}

TEST(Model, PermutationInvarianceIsBitwise) {
  for (Aggregator agg : {Aggregator::attention_pool, Aggregator::mean_pool}) {
    const auto m = init_model(small_config(agg), EnvSpec::point_reach(), 1);
    auto d = demos(5, 7);
    const auto psi = encode_trajectory_set(m, d);
    std::vector<int> perm{0, 1, 2, 3, 4};
    Rng rng = make_rng(8);
    for (int k = 0; k < 10; ++k) {
      std::shuffle(perm.begin(), perm.end(), rng);
      std::vector<Trajectory> p;
      for (int i : perm) p.push_back(d[static_cast<std::size_t>(i)]);
      EXPECT_EQ(encode_trajectory_set(m, p), psi);
    }
  }
}

TEST(Model, EncodeTaskMatchesBatchedPath) {
  const auto m = init_model(small_config(), EnvSpec::point_reach(), 1);
  const auto d = demos(3, 9);
  std::vector<std::vector<double>> reps;
  for (const auto& t : d) reps.push_back(encode_trajectory(m, t));
  const auto a = encode_task(m, reps);
  const auto b = encode_trajectory_set(m, d);
  ASSERT_EQ(a.psi.size(), b.psi.size());
  for (std::size_t i = 0; i < a.psi.size(); ++i) EXPECT_NEAR(a.psi[i], b.psi[i], 1e-12);
}

TEST(Model, SingletonAndMeanPoolIdempotence) {
  const auto m = init_model(small_config(Aggregator::mean_pool), EnvSpec::point_reach(), 2);
  const auto d = demos(1, 10);
  const auto rep = encode_trajectory(m, d[0]);
  const auto one = encode_task(m, {rep});
  EXPECT_EQ(one.psi.size(), static_cast<std::size_t>(m.config.task_rep_dim));
  EXPECT_EQ(encode_task(m, {rep, rep}), one);
}

TEST(Model, RewardInvariantToSetPermutation) {
  const auto m = std::make_shared<const ModelParams>(init_model(small_config(), EnvSpec::point_reach(), 3));
  auto d = demos(4, 11);
  const auto r1 = infer_reward_fn(m, d);
  std::reverse(d.begin(), d.end());
  const auto r2 = infer_reward_fn(m, d);
  Rng rng = make_rng(12);
  for (int i = 0; i < 20; ++i) {
    StateVec s;
    s.agent = uniform_point(rng, m->env.workspace);
    EXPECT_EQ(r1(s), r2(s));
  }
}

TEST(Model, EvaluatorMatchesPredictAndNeverReencodes) {
  const auto m = std::make_shared<const ModelParams>(init_model(small_config(), EnvSpec::point_reach(), 4));
  const auto d = demos(3, 13);
  const auto psi = encode_trajectory_set(*m, d);
  const RewardFunction r = infer_reward_fn(m, d);
  const long before = trajectory_encode_count().load();
  Rng rng = make_rng(14);
  std::vector<StateVec> states(1000);
  for (auto& s : states) s.agent = uniform_point(rng, m->env.workspace);
  for (const auto& s : states) EXPECT_EQ(r(s), predict_reward(*m, psi, s));
  const auto batch = r.batch(states);
  for (std::size_t i = 0; i < states.size(); ++i) EXPECT_NEAR(batch[i], r(states[i]), 1e-12);
  EXPECT_EQ(trajectory_encode_count().load(), before);
}

TEST(Model, PsiWidthChecked) {
  const auto m = init_model(small_config(), EnvSpec::point_reach(), 0);
  EXPECT_THROW(predict_reward(m, TaskEmbedding{{1.0, 2.0}}, StateVec{}), ArgumentError);
}

TEST(Model, FullForwardGradientMatchesFiniteDifferences) {
  const EnvSpec env = EnvSpec::point_reach();
  const ModelParams m = init_model(small_config(), env, 5);
  const auto d = demos(4, 15, 20);
  std::vector<const Trajectory*> ptrs;
  for (const auto& t : d) ptrs.push_back(&t);
  Rng rng = make_rng(16);
  std::vector<StateVec> states(6);
  for (auto& s : states) s.agent = uniform_point(rng, env.workspace);
  std::vector<std::string> names;
  for (const auto& it : m.params.items()) names.push_back(it.name);

  ad::Tape tape;
  BoundModel bm(tape, m, true);
  const ad::Var reps = bm.encode_trajectories(ptrs);
  const ad::Var psi = bm.aggregate(reps, 2, 2);
  const ad::Var phi = bm.encode_states(state_features(env, states));
  const ad::Var pred = bm.head(phi, bm.head_task_term(psi), {0, 0, 0, 1, 1, 1});
  const ad::Tensor target = gradcheck::random_tensor(rng, {6, 1});
  tape.backward(ad::mse(tape, pred, target));
  const auto grads = bm.grads(names);

  auto loss_at = [&](const ModelParams& p) {
    ad::Tape t;
    BoundModel b(t, p, false);
    const ad::Var r = b.encode_trajectories(ptrs);
    const ad::Var y = b.head(b.encode_states(state_features(env, states)), b.head_task_term(b.aggregate(r, 2, 2)),
                             {0, 0, 0, 1, 1, 1});
    return t.value(ad::mse(t, y, target)).item();
  };
  double worst = 0.0;
  const double h = 1e-5;
  for (int k = 0; k < 100; ++k) {
    const std::size_t which = uniform_index(rng, names.size());
    const std::size_t idx = uniform_index(rng, m.params.at(names[which]).size());
    ModelParams p = m;
    const double orig = p.params.at(names[which])[idx];
    p.params.at(names[which])[idx] = orig + h;
    const double up = loss_at(p);
    p.params.at(names[which])[idx] = orig - h;
    const double down = loss_at(p);
    const double numeric = (up - down) / (2 * h), analytic = grads[which][idx];
    worst = std::max(worst, std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-4}));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(Model, CheckpointRoundTrip) {
  const auto m = init_model(small_config(Aggregator::mean_pool), EnvSpec::point_reach(), 6);
  const std::string bytes = serialize_model(m);
  const ModelParams back = deserialize_model(bytes);
  EXPECT_TRUE(back.params == m.params);
  EXPECT_EQ(nlohmann::json(back.config), nlohmann::json(m.config));
  EXPECT_EQ(serialize_model(back), bytes);
  EXPECT_THROW(deserialize_model(serialize_parameters(m.params)), HeaderError);
}

TEST(Model, ConfigJson) {
  const ModelConfig c = small_config(Aggregator::mean_pool);
  EXPECT_EQ(nlohmann::json(nlohmann::json(c).get<ModelConfig>()), nlohmann::json(c));
  nlohmann::json bad = c;
  bad["heads"] = 3;
  EXPECT_THROW(bad.get<ModelConfig>(), ConfigError);
  bad = c;
  bad["aggregator"] = "max-pool";
  EXPECT_THROW(bad.get<ModelConfig>(), ConfigError);
}

#pragma once

// Policies from reward handles: value iteration on grids, receding-horizon
// cross-entropy planning on the continuous envs, rollouts and goal proximity.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sri/env.hpp"
#include "sri/errors.hpp"
#include "sri/model.hpp"
#include "sri/rng.hpp"
#include "sri/tabular.hpp"

namespace sri {

inline TabularSolution value_iteration(const EnvSpec& env, const RewardFunction& r, double gamma) {
  if (env.kind != EnvKind::grid) throw UnsupportedError("value_iteration requires a grid env");
  TabularMdp m = TabularMdp::from_grid(env);
  m.gamma = gamma;
  std::vector<StateVec> cells(static_cast<std::size_t>(env.num_cells()));
  for (int c = 0; c < env.num_cells(); ++c) cells[static_cast<std::size_t>(c)].agent = cell_position(env, c);
  return solve_tabular(m, r.batch(cells), 1e-9);
}

struct PlannerConfig {
  int horizon = 10;
  int candidates = 64;
  int elites = 8;
  int iterations = 3;
  int directions = 8;   // constant-direction sequences seeded into the first population
  std::uint64_t seed = 0;

  void validate() const {
    if (horizon < 1) throw ConfigError("planner horizon must be >= 1");
    if (elites < 1 || candidates < elites) throw ConfigError("planner needs 1 <= elites <= candidates");
    if (iterations < 1) throw ConfigError("planner iterations must be >= 1");
    if (directions < 0) throw ConfigError("planner directions must be >= 0");
  }
};

inline void to_json(nlohmann::json& j, const PlannerConfig& c) {
  j = nlohmann::json{{"horizon", c.horizon},       {"candidates", c.candidates}, {"elites", c.elites},
                     {"iterations", c.iterations}, {"directions", c.directions}, {"seed", c.seed}};
}
inline void from_json(const nlohmann::json& j, PlannerConfig& c) {
  c = PlannerConfig{};
  c.horizon = j.value("horizon", c.horizon);
  c.candidates = j.value("candidates", c.candidates);
  c.elites = j.value("elites", c.elites);
  c.iterations = j.value("iterations", c.iterations);
  c.directions = j.value("directions", c.directions);
  c.seed = j.value("seed", c.seed);
  c.validate();
}

/// Policy: (state, timestep) -> action.
using Policy = std::function<Action(const StateVec&, int)>;

inline Action to_action(const EnvSpec& env, const double* a) {
  Action act;
  act.move = {a[0], a[1]};
  if (env.kind == EnvKind::point_fetch) act.grasp = a[2];
  return act;
}

/// Cross-entropy search over H-step action sequences scored by the discounted reward
/// sum; returns the first action of the best sequence seen. `rng` drives all sampling.
inline Action plan_action(const EnvSpec& env, const RewardFunction& r, const StateVec& state, const PlannerConfig& cfg,
                          Rng& rng) {
  if (env.kind == EnvKind::grid) throw UnsupportedError("plan_action requires a continuous env");
  cfg.validate();
  const int H = cfg.horizon, N = cfg.candidates, D = env.action_dims();
  const std::size_t len = static_cast<std::size_t>(H * D);
  std::vector<double> mean(len, 0.0), sd(len, 0.6);
  std::vector<std::vector<double>> pop(static_cast<std::size_t>(N), std::vector<double>(len));
  std::vector<double> best_seq(len, 0.0);
  if (D == 3)
    for (int h = 0; h < H; ++h) best_seq[static_cast<std::size_t>(h * D + 2)] = -1.0;
  double best_score = -INFINITY;
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<StateVec> states(static_cast<std::size_t>(N));
  std::vector<double> score(static_cast<std::size_t>(N));
  std::vector<int> order(static_cast<std::size_t>(N));

  for (int it = 0; it < cfg.iterations; ++it) {
    for (int i = 0; i < N; ++i) {
      auto& seq = pop[static_cast<std::size_t>(i)];
      const int seeded = it == 0 ? std::min(cfg.directions, N) : 0;
      if (i < seeded) {
        const double th = 2.0 * std::numbers::pi * i / cfg.directions;
        const double grasp = (i % 2 == 0) ? 1.0 : -1.0;
        for (int h = 0; h < H; ++h) {
          seq[static_cast<std::size_t>(h * D)] = std::cos(th);
          seq[static_cast<std::size_t>(h * D + 1)] = std::sin(th);
          if (D == 3) seq[static_cast<std::size_t>(h * D + 2)] = grasp;
        }
      } else if (it > 0 && i == N - 1) {
        seq = best_seq;  // keep the incumbent
      } else {
        for (std::size_t k = 0; k < len; ++k) seq[k] = std::clamp(mean[k] + sd[k] * nd(rng), -1.0, 1.0);
      }
    }
    std::fill(states.begin(), states.end(), state);
    std::fill(score.begin(), score.end(), 0.0);
    double disc = 1.0;
    for (int h = 0; h < H; ++h) {
      for (int i = 0; i < N; ++i)
        states[static_cast<std::size_t>(i)] =
            step(env, states[static_cast<std::size_t>(i)],
                 to_action(env, pop[static_cast<std::size_t>(i)].data() + static_cast<std::size_t>(h * D)));
      const auto rw = r.batch(states);
      for (int i = 0; i < N; ++i) score[static_cast<std::size_t>(i)] += disc * rw[static_cast<std::size_t>(i)];
      disc *= env.gamma;
    }
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return score[static_cast<std::size_t>(a)] > score[static_cast<std::size_t>(b)];
    });
    if (score[static_cast<std::size_t>(order[0])] > best_score) {
      best_score = score[static_cast<std::size_t>(order[0])];
      best_seq = pop[static_cast<std::size_t>(order[0])];
    }
    for (std::size_t k = 0; k < len; ++k) {
      double m = 0.0, v = 0.0;
      for (int e = 0; e < cfg.elites; ++e) m += pop[static_cast<std::size_t>(order[static_cast<std::size_t>(e)])][k];
      m /= cfg.elites;
      for (int e = 0; e < cfg.elites; ++e) {
        const double d = pop[static_cast<std::size_t>(order[static_cast<std::size_t>(e)])][k] - m;
        v += d * d;
      }
      mean[k] = m;
      sd[k] = std::max(0.05, std::sqrt(v / cfg.elites));
    }
  }
  return to_action(env, best_seq.data());
}

/// Receding-horizon planner as a policy; each timestep draws from its own stream.
inline Policy planner_policy(const EnvSpec& env, RewardFunction r, PlannerConfig cfg) {
  return [env, r = std::move(r), cfg](const StateVec& s, int t) {
    Rng rng = make_rng(cfg.seed, static_cast<std::uint64_t>(t));
    return plan_action(env, r, s, cfg, rng);
  };
}

inline Policy greedy_grid_policy(const EnvSpec& env, const TabularSolution& sol) {
  return [env, pol = sol.policy](const StateVec& s, int) {
    return Action::grid(static_cast<GridMove>(pol.at(static_cast<std::size_t>(cell_index(env, s.agent)))));
  };
}

inline Policy stay_policy(const EnvSpec& env) {
  return [grid = env.kind == EnvKind::grid](const StateVec&, int) {
    return grid ? Action::grid(GridMove::stay) : Action{};
  };
}

/// Rolls `policy` out from the task's initial state; rewards are ground truth.
inline Episode rollout(const EnvSpec& env, const Task& task, const Policy& policy, int horizon) {
  if (horizon < 0) throw ArgumentError("rollout: negative horizon");
  Episode ep;
  StateVec s = initial_state(env, task);
  ep.states.push_back(s);
  for (int t = 0; t < horizon; ++t) {
    const Action a = policy(s, t);
    s = step(env, s, a);
    ep.actions.push_back(a);
    ep.states.push_back(s);
    ep.rewards.push_back(reward(env, task, s));
  }
  return ep;
}

/// Mean over t >= 1 of 1 - d_t / d_0; floored at 0 when `clip`.
inline double goal_proximity(const EnvSpec& env, const Episode& ep, const Task& task, bool clip) {
  if (ep.states.empty()) throw ArgumentError("goal_proximity: empty episode");
  const double d0 = proximity_distance(env, task, ep.states.front());
  if (!(d0 > 0.0)) throw DegenerateTrialError("goal_proximity: initial distance is zero");
  if (ep.states.size() < 2) return 0.0;
  double acc = 0.0;
  for (std::size_t t = 1; t < ep.states.size(); ++t) acc += 1.0 - proximity_distance(env, task, ep.states[t]) / d0;
  const double p = acc / static_cast<double>(ep.states.size() - 1);
  return clip ? std::max(0.0, p) : p;
}

inline nlohmann::json episode_to_json(const EnvSpec& env, const Episode& ep) {
  nlohmann::json states = nlohmann::json::array(), actions = nlohmann::json::array();
  for (const auto& s : ep.states) {
    nlohmann::json js{{"agent", s.agent}};
    if (env.kind == EnvKind::point_fetch) {
      js["object"] = s.object;
      js["carrying"] = s.carrying;
    }
    states.push_back(js);
  }
  for (const auto& a : ep.actions) {
    if (env.kind == EnvKind::grid)
      actions.push_back(static_cast<int>(a.grid_move));
    else if (env.kind == EnvKind::point_fetch)
      actions.push_back({a.move.x, a.move.y, a.grasp});
    else
      actions.push_back({a.move.x, a.move.y});
  }
  return {{"states", states}, {"actions", actions}, {"rewards", ep.rewards}};
}

}  // namespace sri

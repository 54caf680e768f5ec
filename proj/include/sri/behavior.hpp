#pragma once

// Suboptimal demonstration generators. Demonstrations record observations only.

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sri/env.hpp"
#include "sri/errors.hpp"
#include "sri/rng.hpp"
#include "sri/tabular.hpp"

namespace sri {

/// `boltzmann` is the grid-only class used by the exact Bayes oracle.
enum class BehaviorClass { gesture, noisy, noisy_gesture, psychic, hard, boltzmann };

inline std::string to_string(BehaviorClass c) {
  switch (c) {
    case BehaviorClass::gesture: return "gesture";
    case BehaviorClass::noisy: return "noisy";
    case BehaviorClass::noisy_gesture: return "noisy_gesture";
    case BehaviorClass::psychic: return "psychic";
    case BehaviorClass::hard: return "hard";
    case BehaviorClass::boltzmann: return "boltzmann";
  }
  return "?";
}

inline BehaviorClass behavior_class_from_string(const std::string& s) {
  for (auto c : {BehaviorClass::gesture, BehaviorClass::noisy, BehaviorClass::noisy_gesture, BehaviorClass::psychic,
                 BehaviorClass::hard, BehaviorClass::boltzmann})
    if (to_string(c) == s) return c;
  throw ConfigError("unknown behavior class '" + s + "'");
}

inline int default_demo_horizon(BehaviorClass c) {
  switch (c) {
    case BehaviorClass::gesture: return 50;
    case BehaviorClass::noisy: return 150;
    case BehaviorClass::noisy_gesture: return 50;
    case BehaviorClass::psychic: return 150;
    case BehaviorClass::hard: return 250;
    case BehaviorClass::boltzmann: return 12;
  }
  return 1;
}

/// Demonstrations per task when nothing else is configured.
inline int default_demo_count(BehaviorClass c) {
  switch (c) {
    case BehaviorClass::gesture:
    case BehaviorClass::noisy:
    case BehaviorClass::noisy_gesture: return 100;
    case BehaviorClass::psychic: return 1;
    case BehaviorClass::hard: return 10;
    case BehaviorClass::boltzmann: return 20;
  }
  return 1;
}

struct BehaviorClassConfig {
  BehaviorClass class_tag = BehaviorClass::psychic;
  double epsilon = 0.0;        // noisy variants
  double alpha = 1.0;          // psychic
  int demo_horizon = 0;        // 0 selects the class default
  double circle_radius = 0.1;  // hard
  Vec2 origin{0.0, 0.0};       // psychic / hard mirror center
  double beta = 1.0;           // boltzmann inverse temperature

  int horizon() const { return demo_horizon > 0 ? demo_horizon : default_demo_horizon(class_tag); }

  /// epsilon for noisy classes, alpha for psychic, beta for boltzmann.
  double class_param() const {
    switch (class_tag) {
      case BehaviorClass::noisy:
      case BehaviorClass::noisy_gesture: return epsilon;
      case BehaviorClass::psychic: return alpha;
      case BehaviorClass::boltzmann: return beta;
      default: return 0.0;
    }
  }

  void validate() const {
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ArgumentError("epsilon must lie in [0, 1]");
    if (!(alpha >= -1.0 && alpha <= 1.0)) throw ArgumentError("alpha must lie in [-1, 1]");
    if (horizon() < 1) throw ArgumentError("demo_horizon must be >= 1");
    if (!(circle_radius > 0.0)) throw ArgumentError("circle_radius must be > 0");
    if (!(beta >= 0.0)) throw ArgumentError("beta must be >= 0");
  }
};

inline void to_json(nlohmann::json& j, const BehaviorClassConfig& c) {
  j = nlohmann::json{{"class", to_string(c.class_tag)}, {"epsilon", c.epsilon},   {"alpha", c.alpha},
                     {"demo_horizon", c.horizon()},     {"circle_radius", c.circle_radius},
                     {"origin", c.origin},              {"beta", c.beta}};
}

inline void from_json(const nlohmann::json& j, BehaviorClassConfig& c) {
  c = BehaviorClassConfig{};
  c.class_tag = behavior_class_from_string(j.at("class").get<std::string>());
  c.epsilon = j.value("epsilon", c.epsilon);
  c.alpha = j.value("alpha", c.alpha);
  c.demo_horizon = j.value("demo_horizon", 0);
  c.circle_radius = j.value("circle_radius", c.circle_radius);
  if (j.contains("origin")) c.origin = j.at("origin").get<Vec2>();
  c.beta = j.value("beta", c.beta);
  c.validate();
}

struct Trajectory {
  std::vector<StateVec> observations;
  BehaviorClass class_tag = BehaviorClass::psychic;
  double class_param = 0.0;

  std::size_t size() const { return observations.size(); }
  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

namespace detail {

inline void require_continuous(const EnvSpec& env, BehaviorClass c) {
  if (env.kind == EnvKind::grid)
    throw UnsupportedError("behavior class '" + to_string(c) + "' is not supported on grid envs");
}

/// Straight-line move of at most one step toward `target`, through the env dynamics.
inline StateVec move_toward(const EnvSpec& env, const StateVec& s, Vec2 target) {
  const Vec2 delta = target - s.agent;
  const double d = norm(delta);
  Action a;
  if (d > 0.0) {
    const double frac = std::min(1.0, env.step_size / d);
    a.move = (frac / env.step_size) * delta;
  }
  StateVec next = step(env, s, a);
  // The only way to land exactly on target is a final short step.
  if (d <= env.step_size) next.agent = env.workspace.clamp(target);
  return next;
}

inline StateVec demo_start(const EnvSpec& env, const Task& task, Vec2 agent) {
  StateVec s = initial_state(env, task);
  s.agent = agent;
  return s;
}

inline Trajectory begin(const BehaviorClassConfig& cfg, const StateVec& start) {
  Trajectory t;
  t.class_tag = cfg.class_tag;
  t.class_param = cfg.class_param();
  t.observations.reserve(static_cast<std::size_t>(cfg.horizon()) + 1);
  t.observations.push_back(start);
  return t;
}

/// Shared body of the noisy classes; `noise_flags` (optional) records noise steps.
inline Trajectory noisy_reach(Rng& rng, const EnvSpec& env, const Task& task, const BehaviorClassConfig& cfg,
                              const StateVec& start, std::vector<bool>* noise_flags) {
  Trajectory t = begin(cfg, start);
  StateVec s = start;
  for (int k = 0; k < cfg.horizon(); ++k) {
    const bool noise = bernoulli(rng, cfg.epsilon);
    if (noise_flags) noise_flags->push_back(noise);
    const Vec2 target = noise ? uniform_point(rng, env.workspace) : task.goal;
    s = move_toward(env, s, target);
    t.observations.push_back(s);
  }
  return t;
}

}  // namespace detail

inline Trajectory gen_gesture(Rng& rng, const EnvSpec& env, const Task& task, const BehaviorClassConfig& cfg) {
  detail::require_continuous(env, BehaviorClass::gesture);
  cfg.validate();
  StateVec s = detail::demo_start(env, task, uniform_point(rng, env.workspace));
  Trajectory t = detail::begin(cfg, s);
  for (int k = 0; k < cfg.horizon(); ++k) {
    s = detail::move_toward(env, s, task.goal);
    t.observations.push_back(s);
  }
  return t;
}

inline Trajectory gen_noisy(Rng& rng, const EnvSpec& env, const Task& task, const BehaviorClassConfig& cfg,
                            std::vector<bool>* noise_flags = nullptr) {
  detail::require_continuous(env, BehaviorClass::noisy);
  cfg.validate();
  const StateVec start = detail::demo_start(env, task, env.workspace.center());
  return detail::noisy_reach(rng, env, task, cfg, start, noise_flags);
}

inline Trajectory gen_noisy_gesture(Rng& rng, const EnvSpec& env, const Task& task, const BehaviorClassConfig& cfg,
                                    std::vector<bool>* noise_flags = nullptr) {
  detail::require_continuous(env, BehaviorClass::noisy_gesture);
  cfg.validate();
  const StateVec start = detail::demo_start(env, task, uniform_point(rng, env.workspace));
  return detail::noisy_reach(rng, env, task, cfg, start, noise_flags);
}

/// Target of a psychic demonstration: origin + alpha * (goal - origin).
inline Vec2 psychic_target(const Task& task, const BehaviorClassConfig& cfg) {
  return cfg.origin + cfg.alpha * (task.goal - cfg.origin);
}

inline Trajectory gen_psychic(const EnvSpec& env, const Task& task, const BehaviorClassConfig& cfg) {
  detail::require_continuous(env, BehaviorClass::psychic);
  cfg.validate();
  const Vec2 target = psychic_target(task, cfg);
  StateVec s = detail::demo_start(env, task, env.workspace.center());
  Trajectory t = detail::begin(cfg, s);
  for (int k = 0; k < cfg.horizon(); ++k) {
    s = detail::move_toward(env, s, target);
    t.observations.push_back(s);
  }
  return t;
}

/// Goal mirrored through the configured origin.
inline Vec2 mirrored_goal(const Task& task, const BehaviorClassConfig& cfg) { return 2.0 * cfg.origin - task.goal; }

/// Unclamped point k of an n-point circle drawn around `center`, starting at angle 0.
inline Vec2 circle_point(Vec2 center, double radius, int k, int n) {
  const double theta = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
  return center + Vec2{radius * std::cos(theta), radius * std::sin(theta)};
}

/// Number of approach steps the hard class spends before tracing the circle.
inline int hard_approach_steps(const EnvSpec& env, Vec2 start, Vec2 circle_start, int horizon) {
  const int needed = static_cast<int>(std::ceil(distance(start, circle_start) / env.step_size));
  return std::min(needed, horizon / 2);
}

/// Deterministic part of the hard class, given its start position.
inline Trajectory hard_from_start(const EnvSpec& env, const Task& task, const BehaviorClassConfig& cfg, Vec2 start) {
  const Vec2 m = mirrored_goal(task, cfg);
  const Vec2 c0 = env.workspace.clamp(circle_point(m, cfg.circle_radius, 0, 1));
  StateVec s = detail::demo_start(env, task, start);
  Trajectory t = detail::begin(cfg, s);
  const int approach = hard_approach_steps(env, start, c0, cfg.horizon());
  for (int k = 0; k < approach; ++k) {
    s = detail::move_toward(env, s, c0);
    t.observations.push_back(s);
  }
  const int n_circle = cfg.horizon() - approach;
  for (int k = 1; k <= n_circle; ++k) {
    s = detail::move_toward(env, s, env.workspace.clamp(circle_point(m, cfg.circle_radius, k, n_circle)));
    t.observations.push_back(s);
  }
  return t;
}

inline Trajectory gen_hard(Rng& rng, const EnvSpec& env, const Task& task, const BehaviorClassConfig& cfg) {
  detail::require_continuous(env, BehaviorClass::hard);
  cfg.validate();
  return hard_from_start(env, task, cfg, uniform_point(rng, env.workspace));
}

/// Boltzmann-rational action probabilities from Q: pi(a|s) ∝ exp(beta Q(s,a)).
inline std::vector<double> boltzmann_policy(const TabularMdp& m, const TabularSolution& sol, double beta) {
  std::vector<double> pi(sol.Q.size());
  for (int s = 0; s < m.num_states; ++s) {
    const double* q = &sol.Q[static_cast<std::size_t>(s) * m.num_actions];
    double mx = q[0];
    for (int a = 1; a < m.num_actions; ++a) mx = std::max(mx, q[a]);
    double z = 0.0;
    for (int a = 0; a < m.num_actions; ++a) z += std::exp(beta * (q[a] - mx));
    for (int a = 0; a < m.num_actions; ++a)
      pi[static_cast<std::size_t>(s) * m.num_actions + a] = std::exp(beta * (q[a] - mx)) / z;
  }
  return pi;
}

/// Q-values of the true task reward on a grid.
inline TabularSolution grid_task_solution(const EnvSpec& env, const TabularMdp& m, const Task& task) {
  return solve_tabular(m, tabulate_reward(env, [&](const StateVec& s) { return reward(env, task, s); }));
}

inline Trajectory gen_boltzmann_with(Rng& rng, const EnvSpec& env, const TabularMdp& m, const std::vector<double>& pi,
                                     const BehaviorClassConfig& cfg) {
  Trajectory t = detail::begin(cfg, StateVec{});
  int s = 0;
  for (int k = 0; k < cfg.horizon(); ++k) {
    const double u = uniform(rng, 0.0, 1.0);
    double acc = 0.0;
    int a = m.num_actions - 1;
    for (int b = 0; b < m.num_actions; ++b) {
      acc += pi[static_cast<std::size_t>(s) * m.num_actions + b];
      if (u < acc) {
        a = b;
        break;
      }
    }
    s = m.successor(s, a);
    StateVec st;
    st.agent = cell_position(env, s);
    t.observations.push_back(st);
  }
  return t;
}

inline Trajectory gen_boltzmann(Rng& rng, const EnvSpec& env, const Task& task, const BehaviorClassConfig& cfg) {
  if (env.kind != EnvKind::grid) throw UnsupportedError("boltzmann demonstrations require a grid env");
  cfg.validate();
  const TabularMdp m = TabularMdp::from_grid(env);
  return gen_boltzmann_with(rng, env, m, boltzmann_policy(m, grid_task_solution(env, m, task), cfg.beta), cfg);
}

/// Dispatch on the configured class.
inline Trajectory generate(Rng& rng, const EnvSpec& env, const Task& task, const BehaviorClassConfig& cfg) {
  switch (cfg.class_tag) {
    case BehaviorClass::gesture: return gen_gesture(rng, env, task, cfg);
    case BehaviorClass::noisy: return gen_noisy(rng, env, task, cfg);
    case BehaviorClass::noisy_gesture: return gen_noisy_gesture(rng, env, task, cfg);
    case BehaviorClass::psychic: return gen_psychic(env, task, cfg);
    case BehaviorClass::hard: return gen_hard(rng, env, task, cfg);
    case BehaviorClass::boltzmann: return gen_boltzmann(rng, env, task, cfg);
  }
  throw ConfigError("unknown behavior class");
}

/// `count` demonstrations; boltzmann solves the task MDP only once.
inline std::vector<Trajectory> generate_many(Rng& rng, const EnvSpec& env, const Task& task,
                                             const BehaviorClassConfig& cfg, int count) {
  std::vector<Trajectory> out;
  out.reserve(static_cast<std::size_t>(count));
  if (cfg.class_tag == BehaviorClass::boltzmann) {
    if (env.kind != EnvKind::grid) throw UnsupportedError("boltzmann demonstrations require a grid env");
    cfg.validate();
    const TabularMdp m = TabularMdp::from_grid(env);
    const auto pi = boltzmann_policy(m, grid_task_solution(env, m, task), cfg.beta);
    for (int i = 0; i < count; ++i) out.push_back(gen_boltzmann_with(rng, env, m, pi, cfg));
    return out;
  }
  for (int i = 0; i < count; ++i) out.push_back(generate(rng, env, task, cfg));
  return out;
}

}  // namespace sri

#pragma once

// Desk-scale environments: GridReach, PointReach and PointFetch.
//
// All three share a state-only reward made of a shaped term 1 - d/d_max plus a
// discontinuous success bonus, affinely rescaled onto a fixed reward range.

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sri/errors.hpp"
#include "sri/rng.hpp"

namespace sri {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend bool operator==(Vec2 a, Vec2 b) = default;
};

inline double norm(Vec2 v) { return std::hypot(v.x, v.y); }
inline double distance(Vec2 a, Vec2 b) { return norm(a - b); }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }

inline void to_json(nlohmann::json& j, const Vec2& v) { j = nlohmann::json::array({v.x, v.y}); }
inline void from_json(const nlohmann::json& j, Vec2& v) {
  if (!j.is_array() || j.size() != 2) throw ConfigError("position must be an array of 2 numbers");
  v.x = j.at(0).get<double>();
  v.y = j.at(1).get<double>();
}

enum class EnvKind { grid, point_reach, point_fetch };

inline std::string to_string(EnvKind k) {
  switch (k) {
    case EnvKind::grid: return "grid";
    case EnvKind::point_reach: return "point-reach";
    case EnvKind::point_fetch: return "point-fetch";
  }
  return "?";
}

inline EnvKind env_kind_from_string(const std::string& s) {
  if (s == "grid") return EnvKind::grid;
  if (s == "point-reach") return EnvKind::point_reach;
  if (s == "point-fetch") return EnvKind::point_fetch;
  throw ConfigError("unknown env kind '" + s + "'");
}

/// Axis-aligned box; only 2D workspaces are supported.
struct Box {
  Vec2 low{-1.0, -1.0};
  Vec2 high{1.0, 1.0};

  Vec2 clamp(Vec2 p) const {
    return {std::clamp(p.x, low.x, high.x), std::clamp(p.y, low.y, high.y)};
  }
  bool contains(Vec2 p) const {
    return p.x >= low.x && p.x <= high.x && p.y >= low.y && p.y <= high.y;
  }
  Vec2 center() const { return 0.5 * (low + high); }
  double diameter() const { return distance(low, high); }
  double area() const { return (high.x - low.x) * (high.y - low.y); }
};

struct EnvSpec {
  EnvKind kind = EnvKind::point_reach;
  int grid_size = 5;
  Box workspace{};
  double step_size = 0.08;
  int horizon = 60;
  double success_radius = 0.08;
  double success_bonus = 5.0;
  double gamma = 0.9;
  std::array<double, 2> reward_range{-3.0, 3.0};

  static EnvSpec grid(int n = 5) {
    EnvSpec s;
    s.kind = EnvKind::grid;
    s.grid_size = n;
    s.step_size = 1.0;
    s.horizon = 40;
    s.success_radius = 0.5;
    return s;
  }
  static EnvSpec point_reach() { return EnvSpec{}; }
  static EnvSpec point_fetch() {
    EnvSpec s;
    s.kind = EnvKind::point_fetch;
    return s;
  }

  bool continuous() const { return kind != EnvKind::grid; }

  void validate() const {
    if (horizon < 1) throw ConfigError("horizon must be >= 1");
    if (!(success_radius > 0.0)) throw ConfigError("success_radius must be > 0");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
    if (!(reward_range[0] < reward_range[1])) throw ConfigError("reward_range low must be < high");
    if (success_bonus < 0.0) throw ConfigError("success_bonus must be >= 0");
    if (kind == EnvKind::grid) {
      if (grid_size < 2) throw ConfigError("grid_size must be >= 2");
    } else {
      if (!(workspace.low.x < workspace.high.x && workspace.low.y < workspace.high.y))
        throw ConfigError("workspace bounds must satisfy low < high");
      if (!(step_size > 0.0)) throw ConfigError("step_size must be > 0");
    }
  }

  int num_cells() const { return grid_size * grid_size; }

  /// Largest distance relevant to the shaped reward.
  double max_distance() const {
    switch (kind) {
      case EnvKind::grid: return (grid_size - 1) * std::sqrt(2.0);
      case EnvKind::point_reach: return workspace.diameter();
      case EnvKind::point_fetch: return 2.0 * workspace.diameter();
    }
    return 1.0;
  }

  /// Width of the model-facing feature vector of a state.
  int feature_dims() const { return kind == EnvKind::point_fetch ? 5 : 2; }
  /// Width of a raw action vector (grid actions are a single move code).
  int action_dims() const {
    switch (kind) {
      case EnvKind::grid: return 1;
      case EnvKind::point_reach: return 2;
      case EnvKind::point_fetch: return 3;
    }
    return 0;
  }
};

inline void to_json(nlohmann::json& j, const EnvSpec& s) {
  j = nlohmann::json{{"kind", to_string(s.kind)},
                     {"horizon", s.horizon},
                     {"success_radius", s.success_radius},
                     {"success_bonus", s.success_bonus},
                     {"gamma", s.gamma},
                     {"reward_range", s.reward_range}};
  if (s.kind == EnvKind::grid) {
    j["grid_size"] = s.grid_size;
  } else {
    j["workspace"] = {{"low", s.workspace.low}, {"high", s.workspace.high}};
    j["step_size"] = s.step_size;
  }
}

inline void from_json(const nlohmann::json& j, EnvSpec& s) {
  const EnvKind kind = env_kind_from_string(j.at("kind").get<std::string>());
  s = kind == EnvKind::grid          ? EnvSpec::grid()
      : kind == EnvKind::point_fetch ? EnvSpec::point_fetch()
                                     : EnvSpec::point_reach();
  s.horizon = j.value("horizon", s.horizon);
  s.success_radius = j.value("success_radius", s.success_radius);
  s.success_bonus = j.value("success_bonus", s.success_bonus);
  s.gamma = j.value("gamma", s.gamma);
  if (j.contains("reward_range")) s.reward_range = j.at("reward_range").get<std::array<double, 2>>();
  if (kind == EnvKind::grid) {
    s.grid_size = j.value("grid_size", s.grid_size);
  } else {
    if (j.contains("workspace")) {
      s.workspace.low = j.at("workspace").at("low").get<Vec2>();
      s.workspace.high = j.at("workspace").at("high").get<Vec2>();
    }
    s.step_size = j.value("step_size", s.step_size);
  }
  s.validate();
}

/// A task fixes the hidden reward: a goal, plus the object start for fetch.
/// Grid goals are stored as (col, row) positions; `goal_cell` mirrors them.
struct Task {
  Vec2 goal{};
  Vec2 object_start{};
  int task_id = 0;

  int goal_cell(const EnvSpec& env) const {
    return static_cast<int>(std::lround(goal.y)) * env.grid_size + static_cast<int>(std::lround(goal.x));
  }
  friend bool operator==(const Task&, const Task&) = default;
};

inline Vec2 cell_position(const EnvSpec& env, int cell) {
  return {static_cast<double>(cell % env.grid_size), static_cast<double>(cell / env.grid_size)};
}

inline int cell_index(const EnvSpec& env, Vec2 p) {
  return static_cast<int>(std::lround(p.y)) * env.grid_size + static_cast<int>(std::lround(p.x));
}

inline nlohmann::json task_to_json(const EnvSpec& env, const Task& t) {
  nlohmann::json j{{"task_id", t.task_id}};
  if (env.kind == EnvKind::grid) {
    j["goal"] = t.goal_cell(env);
  } else {
    j["goal"] = t.goal;
  }
  if (env.kind == EnvKind::point_fetch) j["object_start"] = t.object_start;
  return j;
}

inline Task task_from_json(const EnvSpec& env, const nlohmann::json& j) {
  Task t;
  t.task_id = j.value("task_id", 0);
  if (env.kind == EnvKind::grid) {
    const int cell = j.at("goal").get<int>();
    if (cell < 0 || cell >= env.num_cells()) throw ConfigError("grid goal outside the grid");
    t.goal = cell_position(env, cell);
  } else {
    t.goal = j.at("goal").get<Vec2>();
  }
  if (env.kind == EnvKind::point_fetch) t.object_start = j.at("object_start").get<Vec2>();
  return t;
}

struct StateVec {
  Vec2 agent{};
  Vec2 object{};
  bool carrying = false;

  friend bool operator==(const StateVec&, const StateVec&) = default;
};

/// Model-facing features; grid coordinates are mapped to [-1, 1].
inline void write_features(const EnvSpec& env, const StateVec& s, double* out) {
  if (env.kind == EnvKind::grid) {
    const double scale = 2.0 / (env.grid_size - 1);
    out[0] = s.agent.x * scale - 1.0;
    out[1] = s.agent.y * scale - 1.0;
    return;
  }
  out[0] = s.agent.x;
  out[1] = s.agent.y;
  if (env.kind == EnvKind::point_fetch) {
    out[2] = s.object.x;
    out[3] = s.object.y;
    out[4] = s.carrying ? 1.0 : 0.0;
  }
}

inline std::vector<double> features(const EnvSpec& env, const StateVec& s) {
  std::vector<double> f(env.feature_dims());
  write_features(env, s, f.data());
  return f;
}

enum class GridMove { up = 0, down = 1, left = 2, right = 3, stay = 4 };
inline constexpr int kGridMoves = 5;

/// Continuous actions: displacement in units of step_size (inf-norm <= 1) and
/// a grasp bit (> 0 means grasp, fetch only). Grid actions use `grid_move`.
struct Action {
  Vec2 move{};
  double grasp = -1.0;
  GridMove grid_move = GridMove::stay;

  static Action grid(GridMove m) {
    Action a;
    a.grid_move = m;
    return a;
  }
  friend bool operator==(const Action&, const Action&) = default;
};

inline StateVec initial_state(const EnvSpec& env, const Task& task) {
  StateVec s;
  if (env.kind == EnvKind::grid) return s;  // corner cell 0
  s.agent = env.workspace.center();
  if (env.kind == EnvKind::point_fetch) s.object = task.object_start;
  return s;
}

inline Vec2 uniform_point(Rng& rng, const Box& box) {
  const double x = uniform(rng, box.low.x, box.high.x);
  const double y = uniform(rng, box.low.y, box.high.y);
  return {x, y};
}

/// Grid goals avoid the initial cell; fetch goals keep away from the object.
inline Task sample_task(Rng& rng, const EnvSpec& env) {
  env.validate();
  Task t;
  if (env.kind == EnvKind::grid) {
    const int cell = 1 + static_cast<int>(uniform_index(rng, env.num_cells() - 1));
    t.goal = cell_position(env, cell);
    return t;
  }
  if (env.kind == EnvKind::point_reach) {
    t.goal = uniform_point(rng, env.workspace);
    return t;
  }
  constexpr int kMaxAttempts = 10000;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    const Vec2 object = uniform_point(rng, env.workspace);
    const Vec2 goal = uniform_point(rng, env.workspace);
    if (distance(object, goal) > 2.0 * env.success_radius) {
      t.goal = goal;
      t.object_start = object;
      return t;
    }
  }
  throw ConfigError("sample_task: no valid fetch task after 10000 attempts");
}

inline StateVec step(const EnvSpec& env, const StateVec& s, const Action& a) {
  StateVec next = s;
  if (env.kind == EnvKind::grid) {
    const int n = env.grid_size;
    int col = static_cast<int>(std::lround(s.agent.x));
    int row = static_cast<int>(std::lround(s.agent.y));
    switch (a.grid_move) {
      case GridMove::up: row = std::max(0, row - 1); break;
      case GridMove::down: row = std::min(n - 1, row + 1); break;
      case GridMove::left: col = std::max(0, col - 1); break;
      case GridMove::right: col = std::min(n - 1, col + 1); break;
      case GridMove::stay: break;
    }
    next.agent = {static_cast<double>(col), static_cast<double>(row)};
    return next;
  }
  if (std::abs(a.move.x) > 1.0 + 1e-12 || std::abs(a.move.y) > 1.0 + 1e-12)
    throw ArgumentError("step: action inf-norm exceeds 1");
  next.agent = env.workspace.clamp(s.agent + env.step_size * a.move);
  if (env.kind == EnvKind::point_fetch) {
    if (a.grasp > 0.0) {
      if (s.carrying || distance(next.agent, s.object) < env.success_radius) next.carrying = true;
    } else {
      next.carrying = false;
    }
    if (next.carrying) next.object = next.agent;
  }
  return next;
}

/// Raw-vector overload; validates dimensionality (grid: one move code).
inline StateVec step(const EnvSpec& env, const StateVec& s, std::span<const double> action) {
  if (static_cast<int>(action.size()) != env.action_dims())
    throw ArgumentError("step: expected " + std::to_string(env.action_dims()) + " action dims, got " +
                        std::to_string(action.size()));
  Action a;
  if (env.kind == EnvKind::grid) {
    const double code = action[0];
    if (code != std::floor(code) || code < 0 || code >= kGridMoves)
      throw ArgumentError("step: grid action code must be an integer in [0, 4]");
    a.grid_move = static_cast<GridMove>(static_cast<int>(code));
  } else {
    a.move = {action[0], action[1]};
    if (env.kind == EnvKind::point_fetch) a.grasp = action[2];
  }
  return step(env, s, a);
}

/// Distance driving the shaped reward and the success test.
inline double task_distance(const EnvSpec& env, const Task& task, const StateVec& s) {
  if (env.kind == EnvKind::point_fetch) {
    const double to_goal = distance(s.object, task.goal);
    return s.carrying ? to_goal : distance(s.agent, s.object) + to_goal;
  }
  return distance(s.agent, task.goal);
}

/// Distance used by the goal-proximity metric (agent for reach, object for fetch).
inline double proximity_distance(const EnvSpec& env, const Task& task, const StateVec& s) {
  return env.kind == EnvKind::point_fetch ? distance(s.object, task.goal) : distance(s.agent, task.goal);
}

inline bool is_success(const EnvSpec& env, const Task& task, const StateVec& s) {
  return proximity_distance(env, task, s) < env.success_radius;
}

/// Raw reward range is [0, 1 + success_bonus]; this maps it onto reward_range.
inline double scale_reward(const EnvSpec& env, double raw) {
  const double raw_max = 1.0 + env.success_bonus;
  const auto [lo, hi] = env.reward_range;
  return lo + raw / raw_max * (hi - lo);
}

inline double raw_reward(const EnvSpec& env, const Task& task, const StateVec& s) {
  const double d = task_distance(env, task, s);
  const double shaped = 1.0 - std::min(d, env.max_distance()) / env.max_distance();
  return shaped + (is_success(env, task, s) ? env.success_bonus : 0.0);
}

inline double reward(const EnvSpec& env, const Task& task, const StateVec& s) {
  return scale_reward(env, raw_reward(env, task, s));
}

struct Episode {
  std::vector<StateVec> states;
  std::vector<Action> actions;
  std::vector<double> rewards;  // rewards[t] = reward(states[t + 1])
};

}  // namespace sri

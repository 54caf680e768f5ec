#pragma once

// Exact Bayes posterior over a finite family of goal hypotheses, the posterior-mean
// reward, and executable checks of posterior-mean optimality and the value-gap bound.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "sri/behavior.hpp"
#include "sri/env.hpp"
#include "sri/errors.hpp"
#include "sri/model.hpp"
#include "sri/tabular.hpp"

namespace sri {

struct RewardFamily {
  EnvSpec env;
  std::vector<Task> candidates;
  std::vector<double> prior;

  void validate() const {
    if (candidates.empty()) throw ConfigError("reward family has no candidates");
    if (prior.size() != candidates.size()) throw ConfigError("prior size does not match candidate count");
    double z = 0.0;
    for (double p : prior) {
      if (!(p > 0.0)) throw ConfigError("prior weights must be positive");
      z += p;
    }
    if (std::abs(z - 1.0) > 1e-9) throw ConfigError("prior weights must sum to 1");
    for (std::size_t i = 0; i < candidates.size(); ++i)
      for (std::size_t j = i + 1; j < candidates.size(); ++j)
        if (candidates[i].goal == candidates[j].goal && candidates[i].object_start == candidates[j].object_start)
          throw ConfigError("reward family candidates must be distinct");
  }

  /// Every non-initial cell with equal prior: the grid task distribution itself.
  static RewardFamily grid_cells(const EnvSpec& env) {
    if (env.kind != EnvKind::grid) throw UnsupportedError("grid_cells family requires a grid env");
    RewardFamily f{env, {}, {}};
    for (int c = 1; c < env.num_cells(); ++c) {
      Task t;
      t.goal = cell_position(env, c);
      t.task_id = c;
      f.candidates.push_back(t);
    }
    f.prior.assign(f.candidates.size(), 1.0 / static_cast<double>(f.candidates.size()));
    return f;
  }

  /// n x n lattice of goals at cell centers of the workspace, uniform prior.
  static RewardFamily goal_lattice(const EnvSpec& env, int n, Vec2 object_start = {}) {
    if (env.kind == EnvKind::grid) throw UnsupportedError("goal_lattice family requires a continuous env");
    if (n < 1) throw ConfigError("lattice size must be >= 1");
    RewardFamily f{env, {}, {}};
    const Box& w = env.workspace;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        Task t;
        t.goal = {w.low.x + (w.high.x - w.low.x) * (i + 0.5) / n, w.low.y + (w.high.y - w.low.y) * (j + 0.5) / n};
        t.object_start = object_start;
        t.task_id = i * n + j;
        f.candidates.push_back(t);
      }
    f.prior.assign(f.candidates.size(), 1.0 / static_cast<double>(f.candidates.size()));
    return f;
  }
};

struct LikelihoodModel {
  BehaviorClassConfig behavior;
  double sigma = 0.02;  // Gaussian step-emission noise for continuous classes
  int angle_nodes = 720;

  void validate() const {
    behavior.validate();
    if (!(sigma > 0.0)) throw ConfigError("likelihood sigma must be > 0");
    if (angle_nodes < 8) throw ConfigError("angle_nodes must be >= 8");
  }
};

struct Posterior {
  std::vector<double> weights;
  std::vector<double> log_evidence;  // unnormalized log posterior per candidate
};

namespace oracle_detail {

inline double log_gauss2(Vec2 x, Vec2 mean, double sigma) {
  const Vec2 d = x - mean;
  return -dot(d, d) / (2.0 * sigma * sigma) - std::log(2.0 * std::numbers::pi * sigma * sigma);
}

inline double log_sum_exp(double a, double b) {
  if (a == -INFINITY) return b;
  if (b == -INFINITY) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

/// Distance from p to the box boundary along direction u (p inside the box).
inline double ray_length(const Box& w, Vec2 p, Vec2 u) {
  double t = INFINITY;
  if (u.x > 0) t = std::min(t, (w.high.x - p.x) / u.x);
  if (u.x < 0) t = std::min(t, (w.low.x - p.x) / u.x);
  if (u.y > 0) t = std::min(t, (w.high.y - p.y) / u.y);
  if (u.y < 0) t = std::min(t, (w.low.y - p.y) / u.y);
  return std::max(0.0, t);
}

/// Log density of the next position when the step heads for a uniformly drawn
/// workspace point: a ring of radius step_size weighted by the area of the
/// workspace beyond one step in each direction, plus the disc of snapped steps,
/// both blurred by the emission noise.
inline double log_uniform_target_step(const EnvSpec& env, const LikelihoodModel& lm, Vec2 p, Vec2 x) {
  const Box& w = env.workspace;
  const double s = env.step_size, area = w.area();
  const int n = lm.angle_nodes;
  const double dtheta = 2.0 * std::numbers::pi / n;
  double ring = -INFINITY;
  for (int k = 0; k < n; ++k) {
    const double th = dtheta * k;
    const Vec2 u{std::cos(th), std::sin(th)};
    const double L = ray_length(w, p, u);
    if (L <= s) continue;
    const double mass = (L * L - s * s) / (2.0 * area) * dtheta;
    ring = log_sum_exp(ring, std::log(mass) + log_gauss2(x, p + s * u, lm.sigma));
  }
  double disc = -INFINITY;
  if (distance(x, p) < s && w.contains(x)) disc = -std::log(area);
  return log_sum_exp(ring, disc);
}

/// Per-step deterministic targets of the deterministic continuous classes.
inline Vec2 scripted_target(const EnvSpec& env, const Task& task, const BehaviorClassConfig& cfg, Vec2 start,
                            int t) {
  switch (cfg.class_tag) {
    case BehaviorClass::gesture: return task.goal;
    case BehaviorClass::psychic: return psychic_target(task, cfg);
    case BehaviorClass::hard: {
      const Vec2 m = mirrored_goal(task, cfg);
      const Vec2 c0 = env.workspace.clamp(circle_point(m, cfg.circle_radius, 0, 1));
      const int approach = hard_approach_steps(env, start, c0, cfg.horizon());
      if (t < approach) return c0;
      const int n_circle = cfg.horizon() - approach;
      return env.workspace.clamp(circle_point(m, cfg.circle_radius, t - approach + 1, n_circle));
    }
    default: throw ArgumentError("scripted_target: class has no deterministic schedule");
  }
}

}  // namespace oracle_detail

/// log p(trajectory | candidate task) under the likelihood model.
inline double log_likelihood(const EnvSpec& env, const LikelihoodModel& lm, const Task& task, const Trajectory& traj,
                             const TabularMdp* mdp = nullptr, const std::vector<double>* boltzmann_pi = nullptr) {
  const auto& obs = traj.observations;
  if (obs.empty()) throw ArgumentError("log_likelihood: empty trajectory");
  const BehaviorClassConfig& cfg = lm.behavior;
  double ll = 0.0;
  if (cfg.class_tag == BehaviorClass::boltzmann) {
    if (env.kind != EnvKind::grid) throw UnsupportedError("boltzmann likelihood requires a grid env");
    TabularMdp local;
    std::vector<double> local_pi;
    if (!mdp || !boltzmann_pi) {
      local = TabularMdp::from_grid(env);
      local_pi = boltzmann_policy(local, grid_task_solution(env, local, task), cfg.beta);
      mdp = &local;
      boltzmann_pi = &local_pi;
    }
    if (cell_index(env, obs[0].agent) != 0) return -INFINITY;
    for (std::size_t t = 0; t + 1 < obs.size(); ++t) {
      const int s = cell_index(env, obs[t].agent), s2 = cell_index(env, obs[t + 1].agent);
      double p = 0.0;
      for (int a = 0; a < mdp->num_actions; ++a)
        if (mdp->successor(s, a) == s2) p += (*boltzmann_pi)[static_cast<std::size_t>(s) * mdp->num_actions + a];
      if (p <= 0.0) return -INFINITY;
      ll += std::log(p);
    }
    return ll;
  }
  detail::require_continuous(env, cfg.class_tag);
  const bool noisy = cfg.class_tag == BehaviorClass::noisy || cfg.class_tag == BehaviorClass::noisy_gesture;
  for (std::size_t t = 0; t + 1 < obs.size(); ++t) {
    const Vec2 p = obs[t].agent, x = obs[t + 1].agent;
    if (noisy) {
      double term = -INFINITY;
      if (cfg.epsilon < 1.0)
        term = std::log1p(-cfg.epsilon) +
               oracle_detail::log_gauss2(x, detail::move_toward(env, obs[t], task.goal).agent, lm.sigma);
      if (cfg.epsilon > 0.0)
        term = oracle_detail::log_sum_exp(
            term, std::log(cfg.epsilon) + oracle_detail::log_uniform_target_step(env, lm, p, x));
      ll += term;
    } else {
      const Vec2 target = oracle_detail::scripted_target(env, task, cfg, obs[0].agent, static_cast<int>(t));
      ll += oracle_detail::log_gauss2(x, detail::move_toward(env, obs[t], target).agent, lm.sigma);
    }
  }
  return ll;
}

/// Posterior weights ∝ prior · Π_n p(τ_n | candidate), computed in log space.
inline Posterior posterior(const RewardFamily& family, const LikelihoodModel& lm, std::span<const Trajectory> trajs) {
  family.validate();
  lm.validate();
  const std::size_t C = family.candidates.size();
  Posterior post;
  post.log_evidence.resize(C);
  for (std::size_t i = 0; i < C; ++i) post.log_evidence[i] = std::log(family.prior[i]);

  TabularMdp mdp;
  std::vector<std::vector<double>> pis;
  if (lm.behavior.class_tag == BehaviorClass::boltzmann && !trajs.empty()) {
    mdp = TabularMdp::from_grid(family.env);
    for (const Task& c : family.candidates)
      pis.push_back(boltzmann_policy(mdp, grid_task_solution(family.env, mdp, c), lm.behavior.beta));
  }
  for (std::size_t n = 0; n < trajs.size(); ++n) {
    bool any = false;
    for (std::size_t i = 0; i < C; ++i) {
      if (post.log_evidence[i] == -INFINITY) continue;
      post.log_evidence[i] += pis.empty() ? log_likelihood(family.env, lm, family.candidates[i], trajs[n])
                                          : log_likelihood(family.env, lm, family.candidates[i], trajs[n], &mdp, &pis[i]);
      any = any || post.log_evidence[i] > -INFINITY;
    }
    if (!any) throw EvidenceError("trajectory " + std::to_string(n) + " has zero likelihood under every candidate", n);
  }
  const double mx = *std::max_element(post.log_evidence.begin(), post.log_evidence.end());
  post.weights.resize(C);
  double z = 0.0;
  for (std::size_t i = 0; i < C; ++i) z += post.weights[i] = std::exp(post.log_evidence[i] - mx);
  for (double& w : post.weights) w /= z;
  return post;
}

/// R̄(s) = Σ_i w_i · reward(candidate_i, s).
inline RewardFunction posterior_mean_reward(const RewardFamily& family, const Posterior& post) {
  if (post.weights.size() != family.candidates.size())
    throw ArgumentError("posterior size does not match the reward family");
  std::vector<std::pair<double, Task>> terms;
  for (std::size_t i = 0; i < post.weights.size(); ++i)
    if (post.weights[i] > 0.0) terms.emplace_back(post.weights[i], family.candidates[i]);
  return RewardFunction([env = family.env, terms](const StateVec& s) {
    double r = 0.0;
    for (const auto& [w, t] : terms) r += w * reward(env, t, s);
    return r;
  });
}

struct OptimalityReport {
  long policies = 0;
  double best_expected = 0.0;    // max_pi E_post[J_R(pi)]
  double best_mean_reward = 0.0; // max_pi J_R̄(pi)
  double max_linearity_error = 0.0;
  std::vector<long> argmax_expected;
  std::vector<long> argmax_mean;
  bool sets_equal = false;
};

/// Mixed-radix code of a deterministic policy: action of state s is digit s (base A).
inline std::vector<int> decode_policy(long code, int states, int actions) {
  std::vector<int> a(static_cast<std::size_t>(states));
  for (int s = 0; s < states; ++s) {
    a[static_cast<std::size_t>(s)] = static_cast<int>(code % actions);
    code /= actions;
  }
  return a;
}

inline constexpr long kEnumerationBudget = 1953125;  // 5^9

/// Enumerates every deterministic stationary policy and compares the argmax set of the
/// posterior-expected return with that of the return under R̄ (ties within `tol`).
inline OptimalityReport verify_posterior_mean_optimality(const TabularMdp& m, const RewardFamily& family,
                                                         const Posterior& post, double tol = 1e-9) {
  double count = std::pow(static_cast<double>(m.num_actions), m.num_states);
  if (count > static_cast<double>(kEnumerationBudget))
    throw SizeError("enumeration of " + std::to_string(static_cast<long long>(count)) +
                    " policies exceeds the budget of " + std::to_string(kEnumerationBudget));
  const long total = static_cast<long>(count);
  const auto C = family.candidates.size();
  std::vector<std::vector<double>> rewards;
  for (const Task& t : family.candidates)
    rewards.push_back(tabulate_reward(family.env, [&](const StateVec& s) { return reward(family.env, t, s); }));
  const RewardFunction rbar = posterior_mean_reward(family, post);
  rewards.push_back(tabulate_reward(family.env, [&](const StateVec& s) { return rbar(s); }));

  const int n = m.num_states;
  Eigen::MatrixXd B(n, static_cast<Eigen::Index>(C + 1));
  for (std::size_t k = 0; k <= C; ++k)
    for (int s = 0; s < n; ++s) B(s, static_cast<Eigen::Index>(k)) = rewards[k][static_cast<std::size_t>(s)];
  Eigen::RowVectorXd d0(n);
  for (int s = 0; s < n; ++s) d0(s) = m.d0[static_cast<std::size_t>(s)];

  std::vector<double> je(static_cast<std::size_t>(total)), jm(static_cast<std::size_t>(total));
  OptimalityReport rep;
  rep.policies = total;
  Eigen::MatrixXd A(n, n);
  for (long code = 0; code < total; ++code) {
    const auto acts = decode_policy(code, n, m.num_actions);
    A.setIdentity();
    for (int s = 0; s < n; ++s) A(s, m.successor(s, acts[static_cast<std::size_t>(s)])) -= m.gamma;
    const Eigen::RowVectorXd J = d0 * A.partialPivLu().solve(B);
    double e = 0.0;
    for (std::size_t k = 0; k < C; ++k) e += post.weights[k] * J(static_cast<Eigen::Index>(k));
    je[static_cast<std::size_t>(code)] = e;
    jm[static_cast<std::size_t>(code)] = J(static_cast<Eigen::Index>(C));
    rep.max_linearity_error = std::max(rep.max_linearity_error, std::abs(e - J(static_cast<Eigen::Index>(C))));
  }
  rep.best_expected = *std::max_element(je.begin(), je.end());
  rep.best_mean_reward = *std::max_element(jm.begin(), jm.end());
  for (long code = 0; code < total; ++code) {
    if (je[static_cast<std::size_t>(code)] >= rep.best_expected - tol) rep.argmax_expected.push_back(code);
    if (jm[static_cast<std::size_t>(code)] >= rep.best_mean_reward - tol) rep.argmax_mean.push_back(code);
  }
  rep.sets_equal = rep.argmax_expected == rep.argmax_mean;
  return rep;
}

/// max over policies of |E_post[J_R(pi)] - J_R̄(pi)| for the given stochastic policies.
inline double linearity_error(const TabularMdp& m, const RewardFamily& family, const Posterior& post,
                              std::span<const TabularPolicy> policies) {
  std::vector<std::vector<double>> rewards;
  for (const Task& t : family.candidates)
    rewards.push_back(tabulate_reward(family.env, [&](const StateVec& s) { return reward(family.env, t, s); }));
  const RewardFunction rbar = posterior_mean_reward(family, post);
  rewards.push_back(tabulate_reward(family.env, [&](const StateVec& s) { return rbar(s); }));
  double worst = 0.0;
  for (const auto& pi : policies) {
    const auto V = evaluate_policy(m, pi, rewards);
    double e = 0.0;
    for (std::size_t k = 0; k < family.candidates.size(); ++k) e += post.weights[k] * expected_return(m, V[k]);
    worst = std::max(worst, std::abs(e - expected_return(m, V.back())));
  }
  return worst;
}

struct ValueGapReport {
  double delta = 0.0;            // max_s |R_approx(s) - R̄(s)|
  double gap = 0.0;              // J_R̄(pi*_R̄) - J_R̄(pi*_approx) under d0
  double max_state_gap = 0.0;    // max_s V*_R̄(s) - V^{pi*_approx}_R̄(s)
  double bound = 0.0;            // 2 delta / (1 - gamma)
  bool holds = false;
};

inline ValueGapReport value_gap_check(const TabularMdp& m, const std::vector<double>& rbar,
                                      const std::vector<double>& r_approx, double tol = 1e-9) {
  if (rbar.size() != r_approx.size() || static_cast<int>(rbar.size()) != m.num_states)
    throw ArgumentError("value_gap_check: reward vector size mismatch");
  ValueGapReport rep;
  for (std::size_t s = 0; s < rbar.size(); ++s) rep.delta = std::max(rep.delta, std::abs(r_approx[s] - rbar[s]));
  const TabularSolution opt = solve_tabular(m, rbar, 1e-12);
  const TabularSolution approx = solve_tabular(m, r_approx, 1e-12);
  const auto v_star = evaluate_policy(m, deterministic_policy(m, opt.policy), rbar);
  const auto v_apx = evaluate_policy(m, deterministic_policy(m, approx.policy), rbar);
  rep.gap = expected_return(m, v_star) - expected_return(m, v_apx);
  for (int s = 0; s < m.num_states; ++s)
    rep.max_state_gap = std::max(rep.max_state_gap, v_star[static_cast<std::size_t>(s)] - v_apx[static_cast<std::size_t>(s)]);
  rep.bound = 2.0 * rep.delta / (1.0 - m.gamma);
  rep.holds = rep.max_state_gap <= rep.bound + tol && rep.gap <= rep.bound + tol;
  return rep;
}

inline ValueGapReport value_gap_check(const TabularMdp& m, const EnvSpec& env, const RewardFunction& rbar,
                                      const RewardFunction& r_approx) {
  std::vector<StateVec> cells(static_cast<std::size_t>(env.num_cells()));
  for (int c = 0; c < env.num_cells(); ++c) cells[static_cast<std::size_t>(c)].agent = cell_position(env, c);
  return value_gap_check(m, rbar.batch(cells), r_approx.batch(cells));
}

}  // namespace sri

#pragma once

// Tabular view of the grid environment: deterministic successor table, value
// iteration and exact policy evaluation.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "sri/env.hpp"
#include "sri/errors.hpp"

namespace sri {

struct TabularMdp {
  int num_states = 0;
  int num_actions = kGridMoves;
  std::vector<int> next;   // next[s * num_actions + a]
  double gamma = 0.9;
  std::vector<double> d0;  // initial-state distribution

  int successor(int s, int a) const { return next[static_cast<std::size_t>(s) * num_actions + a]; }

  static TabularMdp from_grid(const EnvSpec& env) {
    if (env.kind != EnvKind::grid) throw UnsupportedError("tabular MDP requires a grid env");
    TabularMdp m;
    m.num_states = env.num_cells();
    m.gamma = env.gamma;
    m.next.resize(static_cast<std::size_t>(m.num_states) * m.num_actions);
    for (int s = 0; s < m.num_states; ++s) {
      StateVec st;
      st.agent = cell_position(env, s);
      for (int a = 0; a < m.num_actions; ++a)
        m.next[static_cast<std::size_t>(s) * m.num_actions + a] =
            cell_index(env, step(env, st, Action::grid(static_cast<GridMove>(a))).agent);
    }
    m.d0.assign(m.num_states, 0.0);
    m.d0[0] = 1.0;
    return m;
  }
};

/// Reward vector over grid cells.
inline std::vector<double> tabulate_reward(const EnvSpec& env, const std::function<double(const StateVec&)>& r) {
  std::vector<double> out(env.num_cells());
  for (int s = 0; s < env.num_cells(); ++s) {
    StateVec st;
    st.agent = cell_position(env, s);
    out[s] = r(st);
  }
  return out;
}

struct TabularSolution {
  std::vector<double> V;
  std::vector<double> Q;      // Q[s * A + a]
  std::vector<int> policy;    // greedy, lowest action index on ties
  double residual = 0.0;
  int iterations = 0;
};

/// V(s) = R(s) + gamma * max_a V(next(s, a)), iterated to a Bellman residual below `tol`.
inline TabularSolution solve_tabular(const TabularMdp& m, const std::vector<double>& R, double tol = 1e-10,
                                     int max_iter = 100000) {
  if (static_cast<int>(R.size()) != m.num_states) throw ArgumentError("reward vector size mismatch");
  TabularSolution sol;
  sol.V.assign(m.num_states, 0.0);
  std::vector<double> nv(m.num_states);
  for (int it = 0; it < max_iter; ++it) {
    double res = 0.0;
    for (int s = 0; s < m.num_states; ++s) {
      double best = -INFINITY;
      for (int a = 0; a < m.num_actions; ++a) best = std::max(best, sol.V[m.successor(s, a)]);
      nv[s] = R[s] + m.gamma * best;
      res = std::max(res, std::abs(nv[s] - sol.V[s]));
    }
    sol.V.swap(nv);
    sol.iterations = it + 1;
    sol.residual = res;
    if (res < tol) break;
  }
  sol.Q.resize(static_cast<std::size_t>(m.num_states) * m.num_actions);
  sol.policy.resize(m.num_states);
  for (int s = 0; s < m.num_states; ++s) {
    int best_a = 0;
    for (int a = 0; a < m.num_actions; ++a) {
      const double q = R[s] + m.gamma * sol.V[m.successor(s, a)];
      sol.Q[static_cast<std::size_t>(s) * m.num_actions + a] = q;
      if (q > sol.Q[static_cast<std::size_t>(s) * m.num_actions + best_a]) best_a = a;
    }
    sol.policy[s] = best_a;
  }
  return sol;
}

/// Stochastic policy: probs[s * A + a].
using TabularPolicy = std::vector<double>;

inline TabularPolicy deterministic_policy(const TabularMdp& m, const std::vector<int>& actions) {
  TabularPolicy p(static_cast<std::size_t>(m.num_states) * m.num_actions, 0.0);
  for (int s = 0; s < m.num_states; ++s) p[static_cast<std::size_t>(s) * m.num_actions + actions[s]] = 1.0;
  return p;
}

/// Exact V^pi for several reward vectors at once: solves (I - gamma P_pi) V = R.
inline std::vector<std::vector<double>> evaluate_policy(const TabularMdp& m, const TabularPolicy& pi,
                                                        const std::vector<std::vector<double>>& rewards) {
  const int n = m.num_states;
  Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n);
  for (int s = 0; s < n; ++s)
    for (int a = 0; a < m.num_actions; ++a) {
      const double p = pi[static_cast<std::size_t>(s) * m.num_actions + a];
      if (p != 0.0) A(s, m.successor(s, a)) -= m.gamma * p;
    }
  Eigen::MatrixXd B(n, static_cast<Eigen::Index>(rewards.size()));
  for (std::size_t k = 0; k < rewards.size(); ++k) {
    if (static_cast<int>(rewards[k].size()) != n) throw ArgumentError("reward vector size mismatch");
    for (int s = 0; s < n; ++s) B(s, static_cast<Eigen::Index>(k)) = rewards[k][s];
  }
  const Eigen::MatrixXd V = A.partialPivLu().solve(B);
  std::vector<std::vector<double>> out(rewards.size(), std::vector<double>(n));
  for (std::size_t k = 0; k < rewards.size(); ++k)
    for (int s = 0; s < n; ++s) out[k][s] = V(s, static_cast<Eigen::Index>(k));
  return out;
}

inline std::vector<double> evaluate_policy(const TabularMdp& m, const TabularPolicy& pi, const std::vector<double>& R) {
  return evaluate_policy(m, pi, std::vector<std::vector<double>>{R}).front();
}

/// J(pi) = sum_s d0(s) V(s).
inline double expected_return(const TabularMdp& m, const std::vector<double>& V) {
  double j = 0.0;
  for (int s = 0; s < m.num_states; ++s) j += m.d0[s] * V[s];
  return j;
}

}  // namespace sri

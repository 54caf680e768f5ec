#pragma once

// Behavioral cloning: regress derived actions on states.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "sri/autodiff.hpp"
#include "sri/behavior.hpp"
#include "sri/env.hpp"
#include "sri/errors.hpp"
#include "sri/parameters.hpp"
#include "sri/policy.hpp"
#include "sri/rng.hpp"

namespace sri {

struct BCConfig {
  int epochs = 50;
  int batch_size = 32;
  int hidden = 64;
  double learning_rate = 3e-3;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1 || batch_size < 1 || hidden < 1) throw ConfigError("bc: epochs, batch_size and hidden must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("bc: learning_rate must be > 0");
  }
};

inline void to_json(nlohmann::json& j, const BCConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"hidden", c.hidden},
                     {"learning_rate", c.learning_rate},
                     {"seed", c.seed}};
}
inline void from_json(const nlohmann::json& j, BCConfig& c) {
  c = BCConfig{};
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.hidden = j.value("hidden", c.hidden);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.seed = j.value("seed", c.seed);
  c.validate();
}

struct StateAction {
  StateVec state;
  std::vector<double> action;
};

/// action_t = (pos_{t+1} - pos_t) / step_size, clamped to [-1, 1]; fetch adds the grasp
/// bit (+1 when the next state is carrying).
inline std::vector<StateAction> derive_actions(const Trajectory& traj, const EnvSpec& env) {
  if (env.kind == EnvKind::grid) throw UnsupportedError("derive_actions requires a continuous env");
  if (traj.size() < 2) throw ArgumentError("derive_actions: trajectory needs at least 2 observations");
  std::vector<StateAction> out;
  for (std::size_t t = 0; t + 1 < traj.size(); ++t) {
    const StateVec& s = traj.observations[t];
    const Vec2 d = (1.0 / env.step_size) * (traj.observations[t + 1].agent - s.agent);
    StateAction sa{s, {std::clamp(d.x, -1.0, 1.0), std::clamp(d.y, -1.0, 1.0)}};
    if (env.kind == EnvKind::point_fetch) sa.action.push_back(traj.observations[t + 1].carrying ? 1.0 : -1.0);
    out.push_back(std::move(sa));
  }
  return out;
}

struct BCPolicy {
  EnvSpec env;
  BCConfig config;
  ParameterSet params;

  std::vector<std::vector<double>> act_batch(std::span<const StateVec> states) const {
    ad::Tape tape;
    const ad::Var y = forward(tape, state_features(env, states), false).first;
    const auto& v = tape.value(y);
    const auto D = static_cast<std::size_t>(env.action_dims());
    std::vector<std::vector<double>> out(states.size(), std::vector<double>(D));
    for (std::size_t i = 0; i < states.size(); ++i)
      for (std::size_t k = 0; k < D; ++k) out[i][k] = std::clamp(v[i * D + k], -1.0, 1.0);
    return out;
  }

  Action act(const StateVec& s) const {
    const auto a = act_batch(std::span<const StateVec>(&s, 1)).front();
    return to_action(env, a.data());
  }

  Policy as_policy() const {
    return [self = *this](const StateVec& s, int) { return self.act(s); };
  }

  /// Returns (output, parameter vars in params order).
  std::pair<ad::Var, std::vector<ad::Var>> forward(ad::Tape& tape, ad::Tensor feats, bool trainable) const {
    std::vector<ad::Var> vars;
    for (const auto& it : params.items()) vars.push_back(trainable ? tape.leaf(it.value) : tape.constant(it.value));
    ad::Var h = tape.constant(std::move(feats));
    h = ad::leaky_relu(tape, ad::linear(tape, h, vars[0], vars[1]));
    h = ad::leaky_relu(tape, ad::linear(tape, h, vars[2], vars[3]));
    return {ad::linear(tape, h, vars[4], vars[5]), vars};
  }
};

inline BCPolicy init_bc(const EnvSpec& env, const BCConfig& cfg) {
  cfg.validate();
  BCPolicy p{env, cfg, {}};
  Rng rng = make_rng(cfg.seed, 0xbc);
  const auto in = static_cast<std::size_t>(env.feature_dims()), h = static_cast<std::size_t>(cfg.hidden),
             out = static_cast<std::size_t>(env.action_dims());
  p.params.add("bc.l1.w", model_detail::he_normal(rng, in, h));
  p.params.add("bc.l1.b", ad::Tensor({h}));
  p.params.add("bc.l2.w", model_detail::he_normal(rng, h, h));
  p.params.add("bc.l2.b", ad::Tensor({h}));
  p.params.add("bc.out.w", model_detail::he_normal(rng, h, out, 1.0));
  p.params.add("bc.out.b", ad::Tensor({out}));
  return p;
}

inline BCPolicy train_bc(const EnvSpec& env, std::span<const Trajectory> demos, const BCConfig& cfg = {}) {
  if (demos.empty()) throw ArgumentError("train_bc: empty demonstration set");
  std::vector<StateAction> data;
  for (const auto& d : demos) {
    auto sa = derive_actions(d, env);
    data.insert(data.end(), sa.begin(), sa.end());
  }
  BCPolicy pol = init_bc(env, cfg);
  std::vector<std::string> names;
  for (const auto& it : pol.params.items()) names.push_back(it.name);
  AdamConfig acfg;
  acfg.learning_rate = cfg.learning_rate;
  Adam adam(pol.params, names, acfg);
  Rng rng = make_rng(cfg.seed, 0xbc7);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto D = static_cast<std::size_t>(env.action_dims());
  for (int e = 0; e < cfg.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<StateVec> states;
      ad::Tensor target({end - start, D});
      for (std::size_t i = start; i < end; ++i) {
        states.push_back(data[order[i]].state);
        for (std::size_t k = 0; k < D; ++k) target[(i - start) * D + k] = data[order[i]].action[k];
      }
      ad::Tape tape;
      auto [y, vars] = pol.forward(tape, state_features(env, states), true);
      const ad::Var loss = ad::mse(tape, y, target);
      tape.backward(loss);
      std::vector<ad::Tensor> grads;
      for (ad::Var v : vars) grads.push_back(tape.grad(v));
      adam.step(pol.params, grads);
    }
  }
  return pol;
}

inline std::string serialize_bc(const BCPolicy& p) {
  return serialize_parameters(p.params, {{"kind", "bc"}, {"env_spec", p.env}, {"bc_config", p.config}});
}

inline BCPolicy deserialize_bc(const std::string& bytes) {
  auto [params, meta] = deserialize_parameters(bytes);
  try {
    if (meta.at("kind").get<std::string>() != "bc") throw HeaderError("checkpoint is not a bc policy");
    return BCPolicy{meta.at("env_spec").get<EnvSpec>(), meta.at("bc_config").get<BCConfig>(), std::move(params)};
  } catch (const nlohmann::json::exception& e) {
    throw HeaderError(std::string("bc checkpoint: ") + e.what());
  }
}

}  // namespace sri

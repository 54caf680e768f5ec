#pragma once

// Reward-inference network.
//
//   trajectory --(transformer, masked mean, MLP)--> trajectory rep      } theta_f,
//   {trajectory reps} --(set pooling, MLP)--> task embedding psi        } once per task
//   state --(MLP)--> phi;  (phi, psi) --(MLP)--> scalar reward          } theta_g
//
// Parameters under "f." form theta_f and parameters under "g." form theta_g.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sri/autodiff.hpp"
#include "sri/behavior.hpp"
#include "sri/env.hpp"
#include "sri/errors.hpp"
#include "sri/parameters.hpp"
#include "sri/rng.hpp"

namespace sri {

enum class Aggregator { attention_pool, mean_pool };

inline std::string to_string(Aggregator a) { return a == Aggregator::mean_pool ? "mean-pool" : "attention-pool"; }
inline Aggregator aggregator_from_string(const std::string& s) {
  if (s == "mean-pool") return Aggregator::mean_pool;
  if (s == "attention-pool") return Aggregator::attention_pool;
  throw ConfigError("unknown aggregator '" + s + "'");
}

struct ModelConfig {
  int state_dim = 2;        // feature width of a state (set from the env)
  int max_traj_len = 151;   // L_B, sizes the positional table
  int token_stride = 1;     // every k-th observation becomes a token (the last one always does)
  int token_dim = 32;       // transformer width
  int layers = 2;
  int heads = 2;
  int traj_rep_dim = 32;
  int task_rep_dim = 64;
  int state_rep_dim = 32;
  int hidden = 64;          // MLP and feed-forward width
  Aggregator aggregator = Aggregator::attention_pool;

  int max_tokens() const { return token_count(max_traj_len); }
  int token_count(int len) const { return len <= 1 ? 1 : (len - 2) / token_stride + 2; }

  void validate() const {
    for (int v : {state_dim, max_traj_len, token_stride, token_dim, layers, heads, traj_rep_dim, task_rep_dim,
                  state_rep_dim, hidden})
      if (v < 1) throw ConfigError("model dimensions must be >= 1");
    if (token_dim % heads != 0) throw ConfigError("token_dim must be divisible by heads");
    if (hidden % heads != 0) throw ConfigError("hidden must be divisible by heads");
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"state_dim", c.state_dim},         {"max_traj_len", c.max_traj_len},
                     {"token_stride", c.token_stride},   {"token_dim", c.token_dim},
                     {"layers", c.layers},               {"heads", c.heads},
                     {"traj_rep_dim", c.traj_rep_dim},   {"task_rep_dim", c.task_rep_dim},
                     {"state_rep_dim", c.state_rep_dim}, {"hidden", c.hidden},
                     {"aggregator", to_string(c.aggregator)}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c = ModelConfig{};
  c.state_dim = j.value("state_dim", c.state_dim);
  c.max_traj_len = j.value("max_traj_len", c.max_traj_len);
  c.token_stride = j.value("token_stride", c.token_stride);
  c.token_dim = j.value("token_dim", c.token_dim);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.traj_rep_dim = j.value("traj_rep_dim", c.traj_rep_dim);
  c.task_rep_dim = j.value("task_rep_dim", c.task_rep_dim);
  c.state_rep_dim = j.value("state_rep_dim", c.state_rep_dim);
  c.hidden = j.value("hidden", c.hidden);
  c.aggregator = aggregator_from_string(j.value("aggregator", std::string("attention-pool")));
  c.validate();
}

struct TaskEmbedding {
  std::vector<double> psi;
  friend bool operator==(const TaskEmbedding&, const TaskEmbedding&) = default;
};

/// Model configuration, the env it serves, and theta = (theta_f, theta_g).
struct ModelParams {
  ModelConfig config;
  EnvSpec env;
  ParameterSet params;

  std::vector<std::string> group(char prefix) const {
    std::vector<std::string> out;
    for (const auto& it : params.items())
      if (it.name[0] == prefix) out.push_back(it.name);
    return out;
  }
  std::vector<std::string> theta_f() const { return group('f'); }
  std::vector<std::string> theta_g() const { return group('g'); }
};

inline std::string serialize_model(const ModelParams& m, nlohmann::json extra = nlohmann::json::object()) {
  extra["model_config"] = m.config;
  extra["env_spec"] = m.env;
  return serialize_parameters(m.params, extra);
}

inline ModelParams deserialize_model(const std::string& bytes) {
  auto [params, meta] = deserialize_parameters(bytes);
  ModelParams m;
  try {
    m.config = meta.at("model_config").get<ModelConfig>();
    m.env = meta.at("env_spec").get<EnvSpec>();
  } catch (const nlohmann::json::exception& e) {
    throw HeaderError(std::string("checkpoint: missing model metadata: ") + e.what());
  }
  m.params = std::move(params);
  return m;
}

inline void save_model(const ModelParams& m, const std::string& path) { io::write_file(path, serialize_model(m)); }
inline ModelParams load_model(const std::string& path) { return deserialize_model(io::read_file(path)); }

/// Trajectories encoded since process start (instrumentation for caching contracts).
inline std::atomic<long>& trajectory_encode_count() {
  static std::atomic<long> count{0};
  return count;
}

namespace model_detail {

inline ad::Tensor he_normal(Rng& rng, std::size_t fan_in, std::size_t fan_out, double gain = 2.0) {
  std::normal_distribution<double> nd(0.0, std::sqrt(gain / static_cast<double>(fan_in)));
  ad::Tensor t({fan_in, fan_out});
  for (auto& v : t.values()) v = nd(rng);
  return t;
}

inline ad::Tensor normal(Rng& rng, ad::Shape shape, double sd) {
  std::normal_distribution<double> nd(0.0, sd);
  ad::Tensor t(std::move(shape));
  for (auto& v : t.values()) v = nd(rng);
  return t;
}

inline void add_linear(ParameterSet& p, Rng& rng, const std::string& name, int in, int out, double gain = 2.0) {
  p.add(name + ".w", he_normal(rng, static_cast<std::size_t>(in), static_cast<std::size_t>(out), gain));
  p.add(name + ".b", ad::Tensor({static_cast<std::size_t>(out)}));
}

}  // namespace model_detail

/// He-style initialization scaled by fan-in; deterministic given `seed`.
inline ModelParams init_model(const ModelConfig& cfg, const EnvSpec& env, std::uint64_t seed) {
  cfg.validate();
  if (cfg.state_dim != env.feature_dims())
    throw ConfigError("model state_dim " + std::to_string(cfg.state_dim) + " does not match env feature width " +
                      std::to_string(env.feature_dims()));
  using model_detail::add_linear;
  ModelParams m{cfg, env, {}};
  Rng rng = make_rng(seed, 0x90de1);
  auto& p = m.params;
  const auto d = static_cast<std::size_t>(cfg.token_dim);
  add_linear(p, rng, "f.tok", cfg.state_dim, cfg.token_dim, 1.0);
  p.add("f.pos", model_detail::normal(rng, {static_cast<std::size_t>(cfg.max_tokens()), d}, 0.1));
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string pre = "f.l" + std::to_string(l);
    p.add(pre + ".ln1.g", ad::Tensor({d}, 1.0));
    p.add(pre + ".ln1.b", ad::Tensor({d}));
    p.add(pre + ".wq", model_detail::he_normal(rng, d, d, 1.0));
    p.add(pre + ".wk", model_detail::he_normal(rng, d, d, 1.0));
    p.add(pre + ".wv", model_detail::he_normal(rng, d, d, 1.0));
    p.add(pre + ".wo", model_detail::he_normal(rng, d, d, 1.0));
    p.add(pre + ".ln2.g", ad::Tensor({d}, 1.0));
    p.add(pre + ".ln2.b", ad::Tensor({d}));
    add_linear(p, rng, pre + ".ff1", cfg.token_dim, cfg.hidden);
    add_linear(p, rng, pre + ".ff2", cfg.hidden, cfg.token_dim, 1.0);
  }
  add_linear(p, rng, "f.out1", cfg.token_dim, cfg.hidden);
  add_linear(p, rng, "f.out2", cfg.hidden, cfg.traj_rep_dim, 1.0);
  if (cfg.aggregator == Aggregator::attention_pool) {
    const auto h = static_cast<std::size_t>(cfg.hidden);
    p.add("f.agg.seed", model_detail::normal(rng, {1, h}, 1.0 / std::sqrt(static_cast<double>(h))));
    p.add("f.agg.wk", model_detail::he_normal(rng, static_cast<std::size_t>(cfg.traj_rep_dim), h, 1.0));
    p.add("f.agg.wv", model_detail::he_normal(rng, static_cast<std::size_t>(cfg.traj_rep_dim), h, 1.0));
    add_linear(p, rng, "f.task1", cfg.hidden, cfg.hidden);
  } else {
    add_linear(p, rng, "f.task1", cfg.traj_rep_dim, cfg.hidden);
  }
  add_linear(p, rng, "f.task2", cfg.hidden, cfg.task_rep_dim, 1.0);
  add_linear(p, rng, "g.state1", cfg.state_dim, cfg.hidden);
  add_linear(p, rng, "g.state2", cfg.hidden, cfg.state_rep_dim, 1.0);
  p.add("g.head1.w_state", model_detail::he_normal(rng, static_cast<std::size_t>(cfg.state_rep_dim),
                                                   static_cast<std::size_t>(cfg.hidden)));
  p.add("g.head1.w_task", model_detail::he_normal(rng, static_cast<std::size_t>(cfg.task_rep_dim),
                                                  static_cast<std::size_t>(cfg.hidden)));
  p.add("g.head1.b", ad::Tensor({static_cast<std::size_t>(cfg.hidden)}));
  add_linear(p, rng, "g.head2", cfg.hidden, 1, 1.0);
  return m;
}

/// Parameters bound onto a tape, either as trainable leaves or as constants.
class BoundModel {
 public:
  BoundModel(ad::Tape& tape, const ModelParams& m, bool trainable) : tape_(tape), m_(m) {
    for (const auto& it : m.params.items()) {
      vars_.push_back(trainable ? tape.leaf(it.value) : tape.constant(it.value));
      names_.push_back(it.name);
    }
  }

  ad::Tape& tape() { return tape_; }
  const ModelConfig& config() const { return m_.config; }
  const EnvSpec& env() const { return m_.env; }

  ad::Var operator[](const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return vars_[i];
    throw ArgumentError("unbound parameter '" + name + "'");
  }

  /// Gradients in parameter order for the given names (after tape.backward).
  std::vector<ad::Tensor> grads(const std::vector<std::string>& names) const {
    std::vector<ad::Tensor> out;
    for (const auto& n : names) out.push_back(tape_.grad((*this)[n]));
    return out;
  }

  ad::Var linear(ad::Var x, const std::string& name) {
    return ad::linear(tape_, x, (*this)[name + ".w"], (*this)[name + ".b"]);
  }

  ad::Var mlp2(ad::Var x, const std::string& first, const std::string& second) {
    return linear(ad::leaky_relu(tape_, linear(x, first)), second);
  }

  /// Trajectory representations [B, traj_rep_dim], one row per trajectory.
  ad::Var encode_trajectories(std::span<const Trajectory* const> trajs) {
    const ModelConfig& c = m_.config;
    if (trajs.empty()) throw ArgumentError("encode_trajectories: empty trajectory set");
    std::size_t T = 0;
    for (const Trajectory* t : trajs) {
      if (t->observations.empty()) throw ArgumentError("encode_trajectory: empty trajectory");
      if (static_cast<int>(t->size()) > c.max_traj_len)
        throw ArgumentError("encode_trajectory: length " + std::to_string(t->size()) + " exceeds L_B " +
                            std::to_string(c.max_traj_len));
      T = std::max(T, static_cast<std::size_t>(c.token_count(static_cast<int>(t->size()))));
    }
    trajectory_encode_count() += static_cast<long>(trajs.size());
    const std::size_t B = trajs.size(), sd = static_cast<std::size_t>(c.state_dim);
    if (static_cast<int>(m_.env.feature_dims()) != c.state_dim)
      throw ArgumentError("encode_trajectory: env feature width does not match model state_dim");
    ad::Tensor x({B, T, sd}), mask({B, T});
    for (std::size_t b = 0; b < B; ++b) {
      const auto& obs = trajs[b]->observations;
      const int len = static_cast<int>(obs.size());
      const int n = c.token_count(len);
      for (int j = 0; j < n; ++j) {
        const int src = j == n - 1 ? len - 1 : j * c.token_stride;
        write_features(m_.env, obs[static_cast<std::size_t>(src)], x.data() + (b * T + static_cast<std::size_t>(j)) * sd);
        mask[b * T + static_cast<std::size_t>(j)] = 1.0;
      }
    }
    ad::Tape& tp = tape_;
    std::vector<std::size_t> first_rows(T);
    std::iota(first_rows.begin(), first_rows.end(), std::size_t{0});
    ad::Var h = linear(tp.constant(std::move(x)), "f.tok");
    h = ad::add_bcast(tp, h, ad::gather_rows(tp, (*this)["f.pos"], first_rows));
    for (int l = 0; l < c.layers; ++l) {
      const std::string pre = "f.l" + std::to_string(l);
      ad::Var a = ad::layer_norm(tp, h, (*this)[pre + ".ln1.g"], (*this)[pre + ".ln1.b"]);
      ad::Var q = ad::matmul(tp, a, (*this)[pre + ".wq"]);
      ad::Var k = ad::matmul(tp, a, (*this)[pre + ".wk"]);
      ad::Var v = ad::matmul(tp, a, (*this)[pre + ".wv"]);
      ad::Var att = ad::scaled_dot_attention(tp, q, k, v, mask, static_cast<std::size_t>(c.heads));
      h = ad::add(tp, h, ad::matmul(tp, att, (*this)[pre + ".wo"]));
      ad::Var f = ad::layer_norm(tp, h, (*this)[pre + ".ln2.g"], (*this)[pre + ".ln2.b"]);
      h = ad::add(tp, h, mlp2(f, pre + ".ff1", pre + ".ff2"));
    }
    ad::Var pooled = ad::masked_mean(tp, h, mask);
    return mlp2(pooled, "f.out1", "f.out2");
  }

  /// Task embeddings [M, task_rep_dim] from reps [M * N, r] grouped by task.
  /// Each group is put in a canonical (lexicographic) order first, so the
  /// result does not depend on the order of the input set, bit for bit.
  ad::Var aggregate(ad::Var reps, std::size_t M, std::size_t N) {
    const ModelConfig& c = m_.config;
    if (N == 0) throw ArgumentError("encode_task: empty trajectory set");
    ad::Tape& tp = tape_;
    const ad::Tensor& R = tp.value(reps);
    const std::size_t r = R.dim(1);
    if (R.dim(0) != M * N) throw ArgumentError("encode_task: expected " + std::to_string(M * N) + " reps");
    std::vector<std::size_t> order(M * N);
    for (std::size_t mi = 0; mi < M; ++mi) {
      auto first = order.begin() + static_cast<std::ptrdiff_t>(mi * N);
      std::iota(first, first + static_cast<std::ptrdiff_t>(N), mi * N);
      std::stable_sort(first, first + static_cast<std::ptrdiff_t>(N), [&](std::size_t a, std::size_t b) {
        return std::lexicographical_compare(R.data() + a * r, R.data() + (a + 1) * r, R.data() + b * r,
                                            R.data() + (b + 1) * r);
      });
    }
    ad::Var sorted = ad::reshape(tp, ad::gather_rows(tp, reps, std::move(order)), {M, N, r});
    ad::Var pooled;
    if (c.aggregator == Aggregator::mean_pool) {
      pooled = ad::mean_axis(tp, sorted, 1);
    } else {
      const std::size_t h = static_cast<std::size_t>(c.hidden);
      ad::Var keys = ad::matmul(tp, sorted, (*this)["f.agg.wk"]);
      ad::Var vals = ad::matmul(tp, sorted, (*this)["f.agg.wv"]);
      ad::Var query = ad::reshape(tp, ad::gather_rows(tp, (*this)["f.agg.seed"], std::vector<std::size_t>(M, 0)),
                                  {M, 1, h});
      ad::Var att = ad::scaled_dot_attention(tp, query, keys, vals, ad::Tensor({M, N}, 1.0),
                                             static_cast<std::size_t>(c.heads));
      pooled = ad::reshape(tp, att, {M, h});
    }
    return mlp2(pooled, "f.task1", "f.task2");
  }

  /// State representations phi [n, state_rep_dim].
  ad::Var encode_states(ad::Tensor feats) {
    if (feats.rank() != 2 || static_cast<int>(feats.dim(1)) != m_.config.state_dim)
      throw ArgumentError("state features of shape " + ad::shape_str(feats.shape()) + " do not match state_dim " +
                          std::to_string(m_.config.state_dim));
    return mlp2(tape_.constant(std::move(feats)), "g.state1", "g.state2");
  }

  /// Task half of the first head layer: psi W_task + b, one row per task.
  ad::Var head_task_term(ad::Var psi) {
    return ad::add_bcast(tape_, ad::matmul(tape_, psi, (*this)["g.head1.w_task"]), (*this)["g.head1.b"]);
  }

  /// Rewards [n, 1]; row i of `phi` is paired with task row `task_of[i]`.
  ad::Var head(ad::Var phi, ad::Var task_term, std::vector<std::size_t> task_of) {
    ad::Tape& tp = tape_;
    ad::Var h = ad::add(tp, ad::matmul(tp, phi, (*this)["g.head1.w_state"]),
                        ad::gather_rows(tp, task_term, std::move(task_of)));
    return linear(ad::leaky_relu(tp, h), "g.head2");
  }

 private:
  ad::Tape& tape_;
  const ModelParams& m_;
  std::vector<ad::Var> vars_;
  std::vector<std::string> names_;
};

inline ad::Tensor state_features(const EnvSpec& env, std::span<const StateVec> states) {
  const auto sd = static_cast<std::size_t>(env.feature_dims());
  ad::Tensor f({states.size(), sd});
  for (std::size_t i = 0; i < states.size(); ++i) write_features(env, states[i], f.data() + i * sd);
  return f;
}

inline std::vector<double> encode_trajectory(const ModelParams& m, const Trajectory& traj) {
  ad::Tape tape;
  BoundModel bm(tape, m, false);
  const Trajectory* p = &traj;
  return tape.value(bm.encode_trajectories(std::span<const Trajectory* const>(&p, 1))).storage();
}

inline TaskEmbedding encode_task(const ModelParams& m, const std::vector<std::vector<double>>& reps) {
  if (reps.empty()) throw ArgumentError("encode_task: empty representation set");
  const std::size_t r = static_cast<std::size_t>(m.config.traj_rep_dim);
  ad::Tensor t({reps.size(), r});
  for (std::size_t i = 0; i < reps.size(); ++i) {
    if (reps[i].size() != r) throw ArgumentError("encode_task: representation width mismatch");
    std::copy(reps[i].begin(), reps[i].end(), t.data() + i * r);
  }
  ad::Tape tape;
  BoundModel bm(tape, m, false);
  return {tape.value(bm.aggregate(tape.constant(std::move(t)), 1, reps.size())).storage()};
}

/// Encodes all trajectories in one batch and pools them into psi.
inline TaskEmbedding encode_trajectory_set(const ModelParams& m, std::span<const Trajectory> trajs) {
  if (trajs.empty()) throw ArgumentError("encode_task: empty trajectory set");
  std::vector<const Trajectory*> ptrs;
  for (const auto& t : trajs) ptrs.push_back(&t);
  ad::Tape tape;
  BoundModel bm(tape, m, false);
  ad::Var reps = bm.encode_trajectories(ptrs);
  return {tape.value(bm.aggregate(reps, 1, trajs.size())).storage()};
}

/// Batched reward prediction for one task embedding.
inline std::vector<double> predict_rewards(const ModelParams& m, const TaskEmbedding& psi,
                                           std::span<const StateVec> states) {
  if (psi.psi.size() != static_cast<std::size_t>(m.config.task_rep_dim))
    throw ArgumentError("predict_reward: psi has " + std::to_string(psi.psi.size()) + " dims, model expects " +
                        std::to_string(m.config.task_rep_dim));
  if (states.empty()) return {};
  ad::Tape tape;
  BoundModel bm(tape, m, false);
  ad::Var task_term = bm.head_task_term(tape.constant(ad::Tensor({1, psi.psi.size()}, psi.psi)));
  ad::Var phi = bm.encode_states(state_features(m.env, states));
  return tape.value(bm.head(phi, task_term, std::vector<std::size_t>(states.size(), 0))).storage();
}

inline double predict_reward(const ModelParams& m, const TaskEmbedding& psi, const StateVec& s) {
  return predict_rewards(m, psi, std::span<const StateVec>(&s, 1)).front();
}

/// Reward handle: single-state and batched evaluation of one fixed reward function.
class RewardFunction {
 public:
  using Single = std::function<double(const StateVec&)>;
  using Batch = std::function<std::vector<double>(std::span<const StateVec>)>;

  RewardFunction() = default;
  explicit RewardFunction(Single f) : single_(std::move(f)) {}
  RewardFunction(Single f, Batch b) : single_(std::move(f)), batch_(std::move(b)) {}

  double operator()(const StateVec& s) const { return single_(s); }
  std::vector<double> batch(std::span<const StateVec> states) const {
    if (batch_) return batch_(states);
    std::vector<double> out;
    out.reserve(states.size());
    for (const auto& s : states) out.push_back(single_(s));
    return out;
  }
  explicit operator bool() const { return static_cast<bool>(single_); }

 private:
  Single single_;
  Batch batch_;
};

/// Ground-truth reward of a task as a handle.
inline RewardFunction true_reward_fn(const EnvSpec& env, const Task& task) {
  return RewardFunction([env, task](const StateVec& s) { return reward(env, task, s); });
}

/// Encodes the trajectory set once; the returned handle only runs the state path.
inline RewardFunction infer_reward_fn(std::shared_ptr<const ModelParams> m, std::span<const Trajectory> trajs) {
  auto psi = std::make_shared<const TaskEmbedding>(encode_trajectory_set(*m, trajs));
  return RewardFunction([m, psi](const StateVec& s) { return predict_reward(*m, *psi, s); },
                        [m, psi](std::span<const StateVec> ss) { return predict_rewards(*m, *psi, ss); });
}

}  // namespace sri

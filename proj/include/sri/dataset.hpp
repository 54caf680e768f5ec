#pragma once

// Supervised training corpus: K tasks, each with N_T behavior trajectories and
// N_s computationally labeled (state, reward) pairs, plus the `.sridata` file
// format.
//
// `.sridata` layout (all integers and floats little-endian):
//   [0, 8)          magic "SRIDATA\0"
//   [8, 16)         uint64 header length H
//   [16, 16 + H)    UTF-8 JSON header: version, env_spec, config, counts, and per
//                   record {offset, trajectory lengths, state count}
//   [16 + H, ...)   float64 payload. Per record, starting at its `offset`
//                   (in doubles from the payload start):
//                     task: goal.x goal.y object_start.x object_start.y
//                     per trajectory: class_param, then length x 5 state words
//                     per state pair: 5 state words, reward, fetch-phase flag
//   state words: agent.x agent.y object.x object.y carrying(0/1)

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "sri/behavior.hpp"
#include "sri/env.hpp"
#include "sri/errors.hpp"
#include "sri/rng.hpp"

namespace sri {

struct DatasetConfig {
  int K = 2000;
  int N_T = 20;
  int N_s = 200;
  int N_I = 2;
  BehaviorClassConfig behavior{};
  double state_mix = 0.5;             // fraction of states from random-target reach rollouts
  double fetch_state_fraction = 0.2;  // point-fetch only
  std::uint64_t seed = 0;

  void validate() const {
    if (K < 1 || N_T < 1 || N_s < 1 || N_I < 1) throw ConfigError("K, N_T, N_s and N_I must be >= 1");
    if (N_I > N_T) throw ConfigError("N_I must not exceed N_T");
    if (!(state_mix >= 0.0 && state_mix <= 1.0)) throw ConfigError("state_mix must lie in [0, 1]");
    if (!(fetch_state_fraction >= 0.0 && fetch_state_fraction <= 1.0))
      throw ConfigError("fetch_state_fraction must lie in [0, 1]");
    behavior.validate();
  }
};

inline void to_json(nlohmann::json& j, const DatasetConfig& c) {
  j = nlohmann::json{{"K", c.K},
                     {"N_T", c.N_T},
                     {"N_s", c.N_s},
                     {"N_I", c.N_I},
                     {"behavior", c.behavior},
                     {"state_mix", c.state_mix},
                     {"fetch_state_fraction", c.fetch_state_fraction},
                     {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, DatasetConfig& c) {
  c = DatasetConfig{};
  c.K = j.value("K", c.K);
  c.N_T = j.value("N_T", c.N_T);
  c.N_s = j.value("N_s", c.N_s);
  c.N_I = j.value("N_I", c.N_I);
  if (j.contains("behavior")) c.behavior = j.at("behavior").get<BehaviorClassConfig>();
  c.state_mix = j.value("state_mix", c.state_mix);
  c.fetch_state_fraction = j.value("fetch_state_fraction", c.fetch_state_fraction);
  c.seed = j.value("seed", c.seed);
  c.validate();
}

struct TaskRecord {
  Task task;
  std::vector<Trajectory> trajectories;
  std::vector<StateVec> states;
  std::vector<double> rewards;
  std::vector<std::uint8_t> fetch_phase;  // 1 when the state came from a scripted fetch rollout

  friend bool operator==(const TaskRecord&, const TaskRecord&) = default;
};

struct Dataset {
  EnvSpec env;
  DatasetConfig config;
  std::vector<TaskRecord> records;

  std::size_t max_trajectory_length() const {
    std::size_t n = 0;
    for (const auto& r : records)
      for (const auto& t : r.trajectories) n = std::max(n, t.size());
    return n;
  }
};

namespace detail {

/// Walks toward freshly sampled uniform targets, recording every visited state.
inline std::vector<StateVec> random_reach_walk(Rng& rng, const EnvSpec& env, const Task& task, int count) {
  std::vector<StateVec> out;
  out.reserve(static_cast<std::size_t>(count));
  if (env.kind == EnvKind::grid) {
    const int n = env.grid_size;
    int cell = static_cast<int>(uniform_index(rng, env.num_cells()));
    int target = static_cast<int>(uniform_index(rng, env.num_cells()));
    while (static_cast<int>(out.size()) < count) {
      if (cell == target) target = static_cast<int>(uniform_index(rng, env.num_cells()));
      int col = cell % n, row = cell / n;
      const int tc = target % n, tr = target / n;
      if (col != tc && (row == tr || bernoulli(rng, 0.5)))
        col += col < tc ? 1 : -1;
      else if (row != tr)
        row += row < tr ? 1 : -1;
      cell = row * n + col;
      StateVec s;
      s.agent = cell_position(env, cell);
      out.push_back(s);
    }
    return out;
  }
  StateVec s = initial_state(env, task);
  s.agent = uniform_point(rng, env.workspace);
  Vec2 target = uniform_point(rng, env.workspace);
  while (static_cast<int>(out.size()) < count) {
    if (s.agent == target) target = uniform_point(rng, env.workspace);
    s = detail::move_toward(env, s, target);
    out.push_back(s);
  }
  return out;
}

/// Scripted fetch: go to the object, grasp, carry to a random drop point, release.
inline std::vector<StateVec> scripted_fetch_states(Rng& rng, const EnvSpec& env, const Task& task, int count) {
  std::vector<StateVec> out;
  out.reserve(static_cast<std::size_t>(count));
  while (static_cast<int>(out.size()) < count) {
    StateVec s = initial_state(env, task);
    s.agent = uniform_point(rng, env.workspace);
    const Vec2 drop = uniform_point(rng, env.workspace);
    for (int guard = 0; guard < 4 * env.horizon && static_cast<int>(out.size()) < count; ++guard) {
      Action a;
      const Vec2 target = s.carrying ? drop : s.object;
      const Vec2 delta = target - s.agent;
      const double d = norm(delta);
      if (d > 0.0) a.move = (std::min(1.0, env.step_size / d) / env.step_size) * delta;
      a.grasp = (s.carrying || d <= env.step_size) ? 1.0 : -1.0;
      if (s.carrying && d == 0.0) a.grasp = -1.0;
      const bool released = s.carrying && a.grasp < 0.0;
      s = step(env, s, a);
      out.push_back(s);
      if (released) break;
    }
  }
  return out;
}

}  // namespace detail

/// Full-support state sample for one task; states never depend on the goal.
/// Returns the states and a parallel fetch-phase flag vector.
inline std::pair<std::vector<StateVec>, std::vector<std::uint8_t>> sample_states_tagged(Rng& rng, const EnvSpec& env,
                                                                                        const Task& task,
                                                                                        const DatasetConfig& cfg) {
  const int n = cfg.N_s;
  const int n_fetch =
      env.kind == EnvKind::point_fetch ? static_cast<int>(std::lround(cfg.fetch_state_fraction * n)) : 0;
  const int rest = n - n_fetch;
  const int n_walk = static_cast<int>(std::lround(cfg.state_mix * rest));
  const int n_uniform = rest - n_walk;

  std::vector<StateVec> states;
  std::vector<std::uint8_t> phase;
  states.reserve(static_cast<std::size_t>(n));
  if (n_walk > 0) {
    auto walk = detail::random_reach_walk(rng, env, task, n_walk);
    states.insert(states.end(), walk.begin(), walk.end());
  }
  for (int i = 0; i < n_uniform; ++i) {
    StateVec s = initial_state(env, task);
    if (env.kind == EnvKind::grid)
      s.agent = cell_position(env, static_cast<int>(uniform_index(rng, env.num_cells())));
    else
      s.agent = uniform_point(rng, env.workspace);
    states.push_back(s);
  }
  phase.assign(states.size(), 0);
  if (n_fetch > 0) {
    auto fetch = detail::scripted_fetch_states(rng, env, task, n_fetch);
    states.insert(states.end(), fetch.begin(), fetch.end());
    phase.resize(states.size(), 1);
  }
  // Shuffle states and flags together.
  for (std::size_t i = states.size(); i > 1; --i) {
    const std::size_t j = uniform_index(rng, i);
    std::swap(states[i - 1], states[j]);
    std::swap(phase[i - 1], phase[j]);
  }
  return {std::move(states), std::move(phase)};
}

inline std::vector<StateVec> sample_states(Rng& rng, const EnvSpec& env, const Task& task, const DatasetConfig& cfg) {
  return sample_states_tagged(rng, env, task, cfg).first;
}

inline TaskRecord build_record(Rng& rng, const EnvSpec& env, const DatasetConfig& cfg, int task_id) {
  TaskRecord rec;
  rec.task = sample_task(rng, env);
  rec.task.task_id = task_id;
  rec.trajectories = generate_many(rng, env, rec.task, cfg.behavior, cfg.N_T);
  auto [states, phase] = sample_states_tagged(rng, env, rec.task, cfg);
  rec.states = std::move(states);
  rec.fetch_phase = std::move(phase);
  rec.rewards.reserve(rec.states.size());
  for (const auto& s : rec.states) rec.rewards.push_back(reward(env, rec.task, s));
  return rec;
}

/// Each task draws from its own stream derived from one draw of `rng`.
inline Dataset build_dataset(Rng& rng, const EnvSpec& env, const DatasetConfig& cfg) {
  env.validate();
  cfg.validate();
  Dataset ds{env, cfg, {}};
  const std::uint64_t base = rng();
  ds.records.reserve(static_cast<std::size_t>(cfg.K));
  for (int k = 0; k < cfg.K; ++k) {
    Rng task_rng = make_rng(base, static_cast<std::uint64_t>(k));
    ds.records.push_back(build_record(task_rng, env, cfg, k));
  }
  return ds;
}

/// Disjoint task-level split into (train, validation).
inline std::pair<Dataset, Dataset> split(const Dataset& ds, double holdout_fraction, Rng& rng) {
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0))
    throw ArgumentError("split: holdout fraction must lie in (0, 1)");
  const std::size_t k = ds.records.size();
  const auto n_val = static_cast<std::size_t>(std::llround(holdout_fraction * static_cast<double>(k)));
  if (n_val == 0 || n_val >= k) throw ArgumentError("split: fraction leaves one side empty");
  std::vector<std::size_t> idx(k);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  Dataset train{ds.env, ds.config, {}}, val{ds.env, ds.config, {}};
  for (std::size_t i = 0; i < k; ++i) (i < n_val ? val : train).records.push_back(ds.records[idx[i]]);
  train.config.K = static_cast<int>(train.records.size());
  val.config.K = static_cast<int>(val.records.size());
  return {std::move(train), std::move(val)};
}

// ---------------------------------------------------------------------------
// Serialization

inline constexpr char kDatasetMagic[8] = {'S', 'R', 'I', 'D', 'A', 'T', 'A', '\0'};
inline constexpr int kDatasetVersion = 1;

namespace io {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

inline void put_f64(std::string& out, double d) { put_u64(out, std::bit_cast<std::uint64_t>(d)); }
inline double get_f64(const char* p) { return std::bit_cast<double>(get_u64(p)); }

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw LoadError("write failed for '" + path + "'");
}

/// Reader over the float64 payload that reports truncation.
class PayloadReader {
 public:
  PayloadReader(const char* data, std::size_t bytes) : data_(data), bytes_(bytes) {}
  double next() {
    if (pos_ + 8 > bytes_) throw TruncatedError("payload truncated");
    const double d = get_f64(data_ + pos_);
    pos_ += 8;
    return d;
  }
  std::size_t position_words() const { return pos_ / 8; }

 private:
  const char* data_;
  std::size_t bytes_;
  std::size_t pos_ = 0;
};

inline void put_state(std::string& out, const StateVec& s) {
  put_f64(out, s.agent.x);
  put_f64(out, s.agent.y);
  put_f64(out, s.object.x);
  put_f64(out, s.object.y);
  put_f64(out, s.carrying ? 1.0 : 0.0);
}

inline StateVec get_state(PayloadReader& r) {
  StateVec s;
  s.agent.x = r.next();
  s.agent.y = r.next();
  s.object.x = r.next();
  s.object.y = r.next();
  s.carrying = r.next() != 0.0;
  return s;
}

/// magic | u64 header length | header | payload
inline std::string frame(const char (&magic)[8], const nlohmann::json& header, const std::string& payload) {
  const std::string h = header.dump();
  std::string out(magic, 8);
  put_u64(out, h.size());
  out += h;
  out += payload;
  return out;
}

struct Framed {
  nlohmann::json header;
  const char* payload = nullptr;
  std::size_t payload_bytes = 0;
};

inline Framed unframe(const std::string& bytes, const char (&magic)[8], const char* what) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), magic, 8) != 0)
    throw HeaderError(std::string(what) + ": bad magic bytes");
  const std::uint64_t hlen = get_u64(bytes.data() + 8);
  if (hlen > bytes.size() - 16) throw HeaderError(std::string(what) + ": header length exceeds file size");
  Framed f;
  try {
    f.header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(hlen));
  } catch (const nlohmann::json::exception& e) {
    throw HeaderError(std::string(what) + ": malformed header: " + e.what());
  }
  f.payload = bytes.data() + 16 + hlen;
  f.payload_bytes = bytes.size() - 16 - hlen;
  return f;
}

}  // namespace io

inline std::string serialize_dataset(const Dataset& ds) {
  std::string payload;
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : ds.records) {
    nlohmann::json rj{{"offset", payload.size() / 8}, {"task_id", r.task.task_id}, {"states", r.states.size()}};
    io::put_f64(payload, r.task.goal.x);
    io::put_f64(payload, r.task.goal.y);
    io::put_f64(payload, r.task.object_start.x);
    io::put_f64(payload, r.task.object_start.y);
    nlohmann::json trajs = nlohmann::json::array();
    for (const auto& t : r.trajectories) {
      trajs.push_back({{"class", to_string(t.class_tag)}, {"length", t.size()}});
      io::put_f64(payload, t.class_param);
      for (const auto& s : t.observations) io::put_state(payload, s);
    }
    rj["trajectories"] = std::move(trajs);
    for (std::size_t i = 0; i < r.states.size(); ++i) {
      io::put_state(payload, r.states[i]);
      io::put_f64(payload, r.rewards[i]);
      io::put_f64(payload, r.fetch_phase.empty() ? 0.0 : static_cast<double>(r.fetch_phase[i]));
    }
    recs.push_back(std::move(rj));
  }
  nlohmann::json header{{"format", "sridata"},
                        {"version", kDatasetVersion},
                        {"env_spec", ds.env},
                        {"config", ds.config},
                        {"counts", {{"records", ds.records.size()}}},
                        {"payload_bytes", payload.size()},
                        {"records", std::move(recs)}};
  return io::frame(kDatasetMagic, header, payload);
}

inline Dataset deserialize_dataset(const std::string& bytes) {
  const io::Framed f = io::unframe(bytes, kDatasetMagic, "sridata");
  Dataset ds;
  try {
    if (f.header.value("format", "") != "sridata") throw HeaderError("sridata: wrong format tag");
    const int version = f.header.at("version").get<int>();
    if (version != kDatasetVersion) throw VersionError("sridata: unsupported version " + std::to_string(version));
    ds.env = f.header.at("env_spec").get<EnvSpec>();
    ds.config = f.header.at("config").get<DatasetConfig>();
    const auto& recs = f.header.at("records");
    if (recs.size() != f.header.at("counts").at("records").get<std::size_t>())
      throw HeaderError("sridata: record count mismatch");
    if (f.payload_bytes < f.header.at("payload_bytes").get<std::size_t>())
      throw TruncatedError("sridata: payload shorter than declared");
    io::PayloadReader rd(f.payload, f.payload_bytes);
    for (const auto& rj : recs) {
      if (rd.position_words() != rj.at("offset").get<std::size_t>()) throw HeaderError("sridata: offset mismatch");
      TaskRecord r;
      r.task.task_id = rj.at("task_id").get<int>();
      r.task.goal.x = rd.next();
      r.task.goal.y = rd.next();
      r.task.object_start.x = rd.next();
      r.task.object_start.y = rd.next();
      for (const auto& tj : rj.at("trajectories")) {
        Trajectory t;
        t.class_tag = behavior_class_from_string(tj.at("class").get<std::string>());
        t.class_param = rd.next();
        const auto len = tj.at("length").get<std::size_t>();
        t.observations.reserve(len);
        for (std::size_t i = 0; i < len; ++i) t.observations.push_back(io::get_state(rd));
        r.trajectories.push_back(std::move(t));
      }
      const auto n_states = rj.at("states").get<std::size_t>();
      for (std::size_t i = 0; i < n_states; ++i) {
        r.states.push_back(io::get_state(rd));
        r.rewards.push_back(rd.next());
        r.fetch_phase.push_back(static_cast<std::uint8_t>(rd.next() != 0.0));
      }
      ds.records.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw HeaderError(std::string("sridata: schema violation: ") + e.what());
  } catch (const ConfigError& e) {
    throw HeaderError(std::string("sridata: invalid header config: ") + e.what());
  }
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::string& path) { io::write_file(path, serialize_dataset(ds)); }
inline Dataset load_dataset(const std::string& path) { return deserialize_dataset(io::read_file(path)); }

}  // namespace sri

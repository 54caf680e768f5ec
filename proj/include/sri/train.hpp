#pragma once

// Mini-batch MSE training of (theta_f, theta_g).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sri/dataset.hpp"
#include "sri/errors.hpp"
#include "sri/model.hpp"
#include "sri/parameters.hpp"
#include "sri/rng.hpp"

namespace sri {

struct TrainConfig {
  int epochs = 200;
  int batch_size = 16;
  double learning_rate = 3e-4;
  int N_I = 0;                 // 0: take the dataset's N_I
  int N_I_min = 0;             // >0: each batch draws its set size uniformly from [N_I_min, N_I]
  std::uint64_t seed = 0;
  double validation_fraction = 0.1;
  int validate_every = 1;      // epochs between validation passes
  int patience = 20;           // validation passes without improvement; 0 disables early stopping
  int state_cap = 256;         // states per task per batch; 0 uses all N_s
  int curriculum_epochs = 0;   // >0: ramp the share of fetch-phase states in over this many epochs

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be > 0");
    if (N_I_min > 0 && N_I > 0 && N_I_min > N_I) throw ConfigError("N_I_min must not exceed N_I");
    if (N_I < 0 || N_I_min < 0 || state_cap < 0 || patience < 0 || curriculum_epochs < 0) throw ConfigError("negative train setting");
    if (validate_every < 1) throw ConfigError("validate_every must be >= 1");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
      throw ConfigError("validation_fraction must lie in [0, 1)");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate},
                     {"N_I", c.N_I},
                     {"N_I_min", c.N_I_min},
                     {"seed", c.seed},
                     {"validation_fraction", c.validation_fraction},
                     {"validate_every", c.validate_every},
                     {"patience", c.patience},
                     {"state_cap", c.state_cap},
                     {"curriculum_epochs", c.curriculum_epochs}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c = TrainConfig{};
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.N_I = j.value("N_I", c.N_I);
  c.N_I_min = j.value("N_I_min", c.N_I_min);
  c.seed = j.value("seed", c.seed);
  c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
  c.validate_every = j.value("validate_every", c.validate_every);
  c.patience = j.value("patience", c.patience);
  c.state_cap = j.value("state_cap", c.state_cap);
  c.curriculum_epochs = j.value("curriculum_epochs", c.curriculum_epochs);
  c.validate();
}

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = std::numeric_limits<double>::quiet_NaN();  // NaN when not evaluated this epoch
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  long steps = 0;
  int best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  bool stopped_early = false;
};

/// Thrown when training diverges; carries the last parameters that produced a finite loss.
struct TrainingAborted : TrainingError {
  TrainingAborted(const std::string& what, ModelParams last) : TrainingError(what), last_good(std::move(last)) {}
  ModelParams last_good;
};

namespace train_detail {

/// `k` distinct indices out of [0, n), in draw order.
inline std::vector<std::size_t> sample_without_replacement(Rng& rng, std::size_t n, std::size_t k) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + uniform_index(rng, n - i)]);
  idx.resize(k);
  return idx;
}

struct Batch {
  std::vector<const Trajectory*> trajectories;  // task-major, N_I per task
  std::vector<StateVec> states;
  std::vector<std::size_t> task_of;
  std::vector<double> targets;
};

inline void append_task(Batch& b, Rng& rng, const TaskRecord& rec, std::size_t n_inputs,
                        const std::vector<std::size_t>& state_idx) {
  const std::size_t task = b.trajectories.size() / n_inputs;
  for (std::size_t t : sample_without_replacement(rng, rec.trajectories.size(), n_inputs))
    b.trajectories.push_back(&rec.trajectories[t]);
  for (std::size_t s : state_idx) {
    b.states.push_back(rec.states[s]);
    b.task_of.push_back(task);
    b.targets.push_back(rec.rewards[s]);
  }
}

struct Forward {
  ad::Var pred, loss;
};

inline Forward forward(BoundModel& bm, const Batch& b, std::size_t n_inputs) {
  ad::Tape& tp = bm.tape();
  const std::size_t M = b.trajectories.size() / n_inputs;
  ad::Var reps = bm.encode_trajectories(b.trajectories);
  ad::Var psi = bm.aggregate(reps, M, n_inputs);
  ad::Var phi = bm.encode_states(state_features(bm.env(), b.states));
  ad::Var pred = bm.head(phi, bm.head_task_term(psi), b.task_of);
  ad::Var loss = ad::mse(tp, pred, ad::Tensor({b.targets.size(), 1}, b.targets));
  return {pred, loss};
}

}  // namespace train_detail

/// Mean squared error over every (task, state) pair, each task conditioned on a fresh
/// draw of N_I of its trajectories.
inline double evaluate_mse(const ModelParams& m, std::span<const TaskRecord> records, int n_inputs, Rng& rng) {
  if (records.empty()) throw ArgumentError("evaluate_mse: empty dataset slice");
  if (n_inputs < 1) throw ArgumentError("evaluate_mse: N_I must be >= 1");
  double sq = 0.0;
  std::size_t count = 0;
  constexpr std::size_t kChunk = 16;
  const auto ni = static_cast<std::size_t>(n_inputs);
  for (std::size_t start = 0; start < records.size(); start += kChunk) {
    train_detail::Batch b;
    for (std::size_t k = start; k < std::min(records.size(), start + kChunk); ++k) {
      if (records[k].trajectories.size() < ni) throw ArgumentError("evaluate_mse: N_I exceeds N_T");
      std::vector<std::size_t> all(records[k].states.size());
      std::iota(all.begin(), all.end(), std::size_t{0});
      train_detail::append_task(b, rng, records[k], ni, all);
    }
    ad::Tape tape;
    BoundModel bm(tape, m, false);
    const auto& pred = tape.value(train_detail::forward(bm, b, ni).pred);
    for (std::size_t i = 0; i < b.targets.size(); ++i) {
      const double e = pred[i] - b.targets[i];
      sq += e * e;
    }
    count += b.targets.size();
  }
  return sq / static_cast<double>(count);
}

struct TrainResult {
  ModelParams params;
  TrainReport report;
};

/// Trains from `init` (or a fresh initialization) and returns the parameters with the
/// best validation loss (training loss when there is no validation split).
inline TrainResult train(const Dataset& ds, const ModelConfig& model_cfg, const TrainConfig& cfg,
                         const ModelParams* init = nullptr) {
  cfg.validate();
  if (ds.records.empty()) throw ArgumentError("train: empty dataset");
  const int n_inputs = cfg.N_I > 0 ? cfg.N_I : ds.config.N_I;
  for (const auto& r : ds.records) {
    if (static_cast<int>(r.trajectories.size()) < n_inputs)
      throw ArgumentError("train: N_I exceeds the trajectories available for task " + std::to_string(r.task.task_id));
    if (r.states.empty()) throw ArgumentError("train: task without labeled states");
  }
  const auto ni = static_cast<std::size_t>(n_inputs);
  if (cfg.N_I_min > n_inputs) throw ConfigError("N_I_min exceeds N_I");

  ModelParams params = init ? *init : init_model(model_cfg, ds.env, cfg.seed);
  Rng rng = make_rng(cfg.seed, 0x7a1);

  std::vector<std::size_t> order(ds.records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_val = static_cast<std::size_t>(std::floor(cfg.validation_fraction * static_cast<double>(order.size())));
  if (cfg.validation_fraction > 0.0 && n_val == 0 && order.size() > 1) n_val = 1;
  std::vector<TaskRecord> val;
  for (std::size_t i = 0; i < n_val; ++i) val.push_back(ds.records[order[i]]);
  std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());

  AdamConfig acfg;
  acfg.learning_rate = cfg.learning_rate;
  Adam adam_f(params.params, params.theta_f(), acfg);
  Adam adam_g(params.params, params.theta_g(), acfg);

  TrainReport report;
  ModelParams best = params;
  int stale = 0;
  const auto M = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(train_idx.begin(), train_idx.end(), rng);
    const double fetch_keep =
        cfg.curriculum_epochs > 0 ? std::min(1.0, static_cast<double>(epoch) / cfg.curriculum_epochs) : 1.0;
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    for (std::size_t start = 0; start < train_idx.size(); start += M) {
      const std::size_t set_size =
          cfg.N_I_min > 0 ? static_cast<std::size_t>(cfg.N_I_min) + uniform_index(rng, ni - static_cast<std::size_t>(cfg.N_I_min) + 1)
                          : ni;
      train_detail::Batch b;
      for (std::size_t k = start; k < std::min(train_idx.size(), start + M); ++k) {
        const TaskRecord& rec = ds.records[train_idx[k]];
        std::vector<std::size_t> eligible;
        for (std::size_t s = 0; s < rec.states.size(); ++s)
          if (fetch_keep >= 1.0 || rec.fetch_phase.empty() || !rec.fetch_phase[s] || bernoulli(rng, fetch_keep))
            eligible.push_back(s);
        if (eligible.empty()) eligible.push_back(0);
        std::vector<std::size_t> picked = eligible;
        if (cfg.state_cap > 0 && eligible.size() > static_cast<std::size_t>(cfg.state_cap)) {
          picked.clear();
          for (std::size_t i :
               train_detail::sample_without_replacement(rng, eligible.size(), static_cast<std::size_t>(cfg.state_cap)))
            picked.push_back(eligible[i]);
        }
        train_detail::append_task(b, rng, rec, set_size, picked);
      }
      try {
        ad::Tape tape;
        BoundModel bm(tape, params, true);
        const ad::Var loss = train_detail::forward(bm, b, set_size).loss;
        const double lv = tape.value(loss).item();
        if (!std::isfinite(lv)) throw TrainingError("non-finite training loss");
        tape.backward(loss);
        auto gf = bm.grads(adam_f.names());
        auto gg = bm.grads(adam_g.names());
        for (std::size_t i = 0; i < gf.size(); ++i)
          if (!gf[i].all_finite()) throw TrainingError("non-finite gradient for parameter '" + adam_f.names()[i] + "'");
        adam_f.step(params.params, gf);
        adam_g.step(params.params, gg);
        loss_sum += lv * static_cast<double>(b.targets.size());
        loss_count += b.targets.size();
        ++report.steps;
      } catch (const TrainingError& e) {
        throw TrainingAborted(std::string(e.what()) + " at epoch " + std::to_string(epoch), params);
      } catch (const NumericError& e) {
        throw TrainingAborted(std::string(e.what()) + " at epoch " + std::to_string(epoch), params);
      }
    }
    EpochStats st;
    st.epoch = epoch;
    st.train_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
    bool evaluated = false;
    if (epoch % cfg.validate_every == 0 || epoch == cfg.epochs) {
      evaluated = true;
      Rng vrng = make_rng(cfg.seed, 0x7a11d);
      st.val_loss = val.empty() ? st.train_loss : evaluate_mse(params, val, n_inputs, vrng);
    }
    st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.epochs.push_back(st);
    if (evaluated) {
      if (st.val_loss < report.best_val_loss) {
        report.best_val_loss = st.val_loss;
        report.best_epoch = epoch;
        best = params;
        stale = 0;
      } else if (cfg.patience > 0 && ++stale >= cfg.patience) {
        report.stopped_early = true;
        break;
      }
    }
  }
  return {std::move(best), std::move(report)};
}

}  // namespace sri

#pragma once

// Named parameter tensors, Adam, and the checkpoint format.
//
// Checkpoint layout (little-endian):
//   [0, 8)         magic "SRICKPT\0"
//   [8, 16)        uint64 manifest length H
//   [16, 16 + H)   JSON manifest: {"version", "tensors": [{name, shape, offset}],
//                  "metadata": {...}}; offsets are bytes from the payload start
//   [16 + H, ...)  float64 payload

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "sri/autodiff.hpp"
#include "sri/dataset.hpp"  // io helpers
#include "sri/errors.hpp"

namespace sri {

struct NamedTensor {
  std::string name;
  ad::Tensor value;
  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

/// Ordered collection of named tensors; order is creation order.
class ParameterSet {
 public:
  ad::Tensor& add(std::string name, ad::Tensor value) {
    if (index_.count(name)) throw ArgumentError("duplicate parameter '" + name + "'");
    index_[name] = items_.size();
    items_.push_back({std::move(name), std::move(value)});
    return items_.back().value;
  }
  ad::Tensor& at(const std::string& name) { return items_.at(lookup(name)).value; }
  const ad::Tensor& at(const std::string& name) const { return items_.at(lookup(name)).value; }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  std::size_t size() const { return items_.size(); }
  std::vector<NamedTensor>& items() { return items_; }
  const std::vector<NamedTensor>& items() const { return items_; }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& it : items_) n += it.value.size();
    return n;
  }
  friend bool operator==(const ParameterSet& a, const ParameterSet& b) { return a.items_ == b.items_; }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ArgumentError("unknown parameter '" + name + "'");
    return it->second;
  }
  std::vector<NamedTensor> items_;
  std::map<std::string, std::size_t> index_;
};

struct AdamConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction over a fixed list of parameter names.
class Adam {
 public:
  Adam() = default;
  Adam(const ParameterSet& params, std::vector<std::string> names, AdamConfig cfg = {})
      : cfg_(cfg), names_(std::move(names)) {
    for (const auto& n : names_) {
      m_.emplace_back(params.at(n).shape());
      v_.emplace_back(params.at(n).shape());
    }
  }

  const AdamConfig& config() const { return cfg_; }
  void set_learning_rate(double lr) { cfg_.learning_rate = lr; }
  long step_count() const { return t_; }
  const std::vector<std::string>& names() const { return names_; }
  const ad::Tensor& first_moment(std::size_t i) const { return m_.at(i); }

  /// grads[i] belongs to names()[i]. A non-finite gradient aborts before any update.
  void step(ParameterSet& params, const std::vector<ad::Tensor>& grads) {
    if (grads.size() != names_.size()) throw ArgumentError("adam: gradient count mismatch");
    for (std::size_t i = 0; i < grads.size(); ++i) {
      if (grads[i].shape() != params.at(names_[i]).shape())
        throw ArgumentError("adam: gradient shape " + ad::shape_str(grads[i].shape()) + " for parameter '" +
                            names_[i] + "' of shape " + ad::shape_str(params.at(names_[i]).shape()));
      if (!grads[i].all_finite()) throw TrainingError("non-finite gradient for parameter '" + names_[i] + "'");
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < grads.size(); ++i) {
      ad::Tensor& p = params.at(names_[i]);
      ad::Tensor& m = m_[i];
      ad::Tensor& v = v_[i];
      const ad::Tensor& g = grads[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
        const double mhat = m[j] / c1;
        const double vhat = v[j] / c2;
        p[j] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

 private:
  AdamConfig cfg_{};
  std::vector<std::string> names_;
  std::vector<ad::Tensor> m_, v_;
  long t_ = 0;
};

inline constexpr char kCheckpointMagic[8] = {'S', 'R', 'I', 'C', 'K', 'P', 'T', '\0'};
inline constexpr int kCheckpointVersion = 1;

inline std::string serialize_parameters(const ParameterSet& params, const nlohmann::json& metadata = {}) {
  std::string payload;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& it : params.items()) {
    tensors.push_back({{"name", it.name}, {"shape", it.value.shape()}, {"offset", payload.size()}});
    for (double v : it.value.values()) io::put_f64(payload, v);
  }
  nlohmann::json manifest{{"format", "sri-checkpoint"},
                          {"version", kCheckpointVersion},
                          {"tensors", std::move(tensors)},
                          {"payload_bytes", payload.size()},
                          {"metadata", metadata.is_null() ? nlohmann::json::object() : metadata}};
  return io::frame(kCheckpointMagic, manifest, payload);
}

/// Returns the parameters and the manifest metadata.
inline std::pair<ParameterSet, nlohmann::json> deserialize_parameters(const std::string& bytes) {
  const io::Framed f = io::unframe(bytes, kCheckpointMagic, "checkpoint");
  ParameterSet params;
  try {
    if (f.header.value("format", "") != "sri-checkpoint") throw HeaderError("checkpoint: wrong format tag");
    const int version = f.header.at("version").get<int>();
    if (version != kCheckpointVersion) throw VersionError("checkpoint: unsupported version " + std::to_string(version));
    if (f.payload_bytes < f.header.at("payload_bytes").get<std::size_t>())
      throw TruncatedError("checkpoint: payload shorter than declared");
    for (const auto& tj : f.header.at("tensors")) {
      const auto shape = tj.at("shape").get<ad::Shape>();
      const auto offset = tj.at("offset").get<std::size_t>();
      const std::size_t n = ad::numel(shape);
      if (offset + 8 * n > f.payload_bytes) throw TruncatedError("checkpoint: tensor '" + tj.at("name").get<std::string>() + "' truncated");
      std::vector<double> data(n);
      for (std::size_t i = 0; i < n; ++i) data[i] = io::get_f64(f.payload + offset + 8 * i);
      params.add(tj.at("name").get<std::string>(), ad::Tensor(shape, std::move(data)));
    }
    return {std::move(params), f.header.value("metadata", nlohmann::json::object())};
  } catch (const nlohmann::json::exception& e) {
    throw HeaderError(std::string("checkpoint: schema violation: ") + e.what());
  }
}

}  // namespace sri

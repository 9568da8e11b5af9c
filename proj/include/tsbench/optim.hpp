#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsbench/autodiff.hpp"
#include "tsbench/tensor.hpp"

namespace tsbench {

// Named parameters partitioned into shared (one set for the whole collection)
// and per-series (series-identity-indexed). Adam moments live next to each
// parameter. Iteration order is the sorted name order, which keeps training
// bitwise reproducible.
class ParameterStore {
 public:
  struct Param {
    Tensor value;
    Tensor m, v;
    long long step = 0;
    bool per_series = false;
    int series = -1;  // -1 for row-indexed tables (e.g. embedding tables)
  };

  Tensor& add_shared(const std::string& name, Tensor init) { return add(name, std::move(init), false, -1); }
  Tensor& add_per_series(const std::string& name, Tensor init, int series = -1) {
    return add(name, std::move(init), true, series);
  }

  bool has(const std::string& name) const { return params_.count(name) != 0; }
  Tensor& value(const std::string& name) { return at(name).value; }
  const Tensor& value(const std::string& name) const { return at(name).value; }
  Param& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::invalid_argument("parameter store: unknown parameter " + name);
    return it->second;
  }
  const Param& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::invalid_argument("parameter store: unknown parameter " + name);
    return it->second;
  }

  const std::map<std::string, Param>& all() const { return params_; }
  std::map<std::string, Param>& entries() { return params_; }

  long long param_count_shared() const {
    long long n = 0;
    for (const auto& [k, p] : params_)
      if (!p.per_series) n += p.value.numel();
    return n;
  }
  long long param_count_per_series() const {
    long long n = 0;
    for (const auto& [k, p] : params_)
      if (p.per_series) n += p.value.numel();
    return n;
  }
  long long param_count() const { return param_count_shared() + param_count_per_series(); }

  std::vector<std::string> per_series_names() const {
    std::vector<std::string> out;
    for (const auto& [k, p] : params_)
      if (p.per_series) out.push_back(k);
    return out;
  }

  // Registers every parameter as a leaf on `tape` and returns the tracked
  // aliases keyed by name. Valid until the tape is destroyed.
  std::map<std::string, Tensor> bind(Tape& tape) {
    std::map<std::string, Tensor> out;
    for (auto& [k, p] : params_) out.emplace(k, tape.leaf(p.value));
    return out;
  }

  // Untracked views, for evaluation-mode forwards.
  std::map<std::string, Tensor> bind_frozen() const {
    std::map<std::string, Tensor> out;
    for (const auto& [k, p] : params_) {
      Tensor t = p.value;
      t.node = -1;
      t.requires_grad = false;
      out.emplace(k, t);
    }
    return out;
  }

  // Extracts named gradients from a backward result via the bound aliases.
  std::map<std::string, std::vector<double>> collect(const GradientMap& grads,
                                                     const std::map<std::string, Tensor>& bound) const {
    std::map<std::string, std::vector<double>> out;
    for (const auto& [k, t] : bound)
      if (const auto* g = grads.find(t)) out.emplace(k, *g);
    return out;
  }

  // Deep snapshot / restore of values (moments excluded; restore resets them).
  std::map<std::string, std::vector<double>> snapshot_values() const {
    std::map<std::string, std::vector<double>> out;
    for (const auto& [k, p] : params_) out.emplace(k, *p.value.data);
    return out;
  }
  void restore_values(const std::map<std::string, std::vector<double>>& snap) {
    for (auto& [k, p] : params_) {
      auto it = snap.find(k);
      if (it == snap.end()) throw std::invalid_argument("restore: missing parameter " + k);
      *p.value.data = it->second;
    }
  }

 private:
  Tensor& add(const std::string& name, Tensor init, bool per_series, int series) {
    if (params_.count(name)) throw std::invalid_argument("parameter store: duplicate parameter " + name);
    Param p;
    p.value = std::move(init);
    p.m = Tensor(p.value.shape, 0.0);
    p.v = Tensor(p.value.shape, 0.0);
    p.per_series = per_series;
    p.series = series;
    auto [it, ok] = params_.emplace(name, std::move(p));
    (void)ok;
    return it->second.value;
  }

  std::map<std::string, Param> params_;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Parameters without an entry in `grads` are left
// untouched (their moments and step count do not advance), which is how
// frozen components behave.
inline void adam_step(ParameterStore& store, const std::map<std::string, std::vector<double>>& grads,
                      double lr, const AdamConfig& cfg = {}) {
  for (const auto& [name, g] : grads) {
    if (!store.has(name))
      throw std::invalid_argument("adam_step: gradient for unknown parameter " + name);
    auto& p = store.at(name);
    if (g.size() != p.value.data->size())
      throw std::invalid_argument("adam_step: gradient size mismatch for " + name);
  }
  for (auto& [name, p] : store.entries()) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const auto& g = git->second;
    ++p.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p.step));
    for (std::size_t i = 0; i < g.size(); ++i) {
      double& m = (*p.m.data)[i];
      double& v = (*p.v.data)[i];
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g[i];
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      (*p.value.data)[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

// Uniform fan-in initialization for weight matrices / kernels.
inline Tensor init_fan_in(Rng& rng, Shape shape, long long fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<long long>(1, fan_in)));
  return rng.uniform_tensor(std::move(shape), -bound, bound);
}

}  // namespace tsbench

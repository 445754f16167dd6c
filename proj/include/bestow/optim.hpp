#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "bestow/tensor.hpp"

namespace bestow {

/// Named trainable tensors in registration order.
class ParameterStore {
 public:
  Tensor& add(const std::string& name, Tensor t) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    t.set_requires_grad(true);
    index_[name] = entries_.size();
    entries_.emplace_back(name, std::move(t));
    return entries_.back().second;
  }

  const Tensor& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    return entries_[it->second].second;
  }
  Tensor& get(const std::string& name) {
    return const_cast<Tensor&>(static_cast<const ParameterStore&>(*this).get(name));
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return entries_.size(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& [_, t] : entries_) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [_, t] : entries_) t.zero_grad();
  }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, std::size_t> index_;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-3;
};

/// First/second moment estimates for one parameter buffer.
struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;
};

struct AdamState {
  std::size_t step = 0;
  std::vector<AdamMoments> moments;  // parallel to the parameter list
};

/// One Adam update with decoupled weight decay on a single buffer.
///
/// `t` is the 1-based step number used for bias correction. Empty moments
/// are treated as zeros. Throws on a non-finite gradient before touching
/// any state.
inline void adam_update(std::span<double> param, std::span<const double> grad, AdamMoments& mom,
                        std::size_t t, const AdamConfig& cfg) {
  if (param.size() != grad.size()) throw DimensionError("adam: parameter/gradient size mismatch");
  for (double g : grad) {
    if (!std::isfinite(g)) throw std::domain_error("adam: non-finite gradient");
  }
  if (mom.m.empty()) mom.m.assign(param.size(), 0.0);
  if (mom.v.empty()) mom.v.assign(param.size(), 0.0);
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    mom.m[i] = cfg.beta1 * mom.m[i] + (1.0 - cfg.beta1) * g;
    mom.v[i] = cfg.beta2 * mom.v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = mom.m[i] / bc1;
    const double vhat = mom.v[i] / bc2;
    param[i] -= cfg.lr * cfg.weight_decay * param[i];
    param[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

/// Applies one Adam step to every parameter using its accumulated grad.
/// Parameters that never received a gradient are treated as having a zero
/// gradient.
inline void adam_step(ParameterStore& params, AdamState& state, const AdamConfig& cfg) {
  if (state.moments.size() < params.size()) state.moments.resize(params.size());
  for (auto& [name, p] : params) {
    for (double g : p.grad()) {
      if (!std::isfinite(g)) throw std::domain_error("adam: non-finite gradient in " + name);
    }
  }
  const std::size_t t = ++state.step;
  std::size_t i = 0;
  for (auto& [name, p] : params) {
    if (!p.has_grad()) p.grad_mut();
    adam_update(p.data_mut(), p.grad(), state.moments[i++], t, cfg);
  }
}

/// Global L2 norm over all parameter gradients.
inline double grad_global_norm(const ParameterStore& params) {
  double s = 0.0;
  for (const auto& [_, p] : params) {
    for (double g : p.grad()) s += g * g;
  }
  return std::sqrt(s);
}

/// Rescales gradients so their global norm is at most `max_norm`; returns
/// the norm before clipping.
inline double clip_grad_norm(ParameterStore& params, double max_norm) {
  const double norm = grad_global_norm(params);
  if (norm > max_norm && norm > 0.0) {
    const double f = max_norm / norm;
    for (auto& [_, p] : params) {
      if (!p.has_grad()) continue;
      for (double& g : p.grad_mut()) g *= f;
    }
  }
  return norm;
}

}  // namespace bestow

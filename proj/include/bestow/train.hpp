#pragma once

#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bestow/model.hpp"
#include "bestow/optim.hpp"
#include "bestow/synth.hpp"

namespace bestow {

class NonFiniteLoss : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct TrainConfig {
  AdamConfig adam;  // lr 1e-4, weight decay 1e-3
  double clip = 1.0;
  std::size_t steps = 2000;
  std::size_t batch = 8;
  std::size_t k_min = 3, k_max = 12;
  double stream_fraction = 0.0;
  WaitKConfig policy;  // L and P for streaming masks; K is the eval default
  std::string lr_schedule = "constant";  // or "cosine"
  std::size_t warmup = 0;

  void validate() const {
    policy.validate();
    if (batch < 1) throw std::invalid_argument("train: batch must be >= 1");
    if (k_min < 1 || k_max < k_min) throw std::invalid_argument("train: need 1 <= k_min <= k_max");
    if (stream_fraction < 0.0 || stream_fraction > 1.0) {
      throw std::invalid_argument("train: stream_fraction must be in [0,1]");
    }
    if (lr_schedule != "constant" && lr_schedule != "cosine") {
      throw std::invalid_argument("train: unknown lr schedule '" + lr_schedule + "'");
    }
  }

  /// Learning rate for the 0-based step index.
  double lr_at(std::size_t step) const {
    double lr = adam.lr;
    if (warmup > 0 && step < warmup) return lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
    if (lr_schedule == "cosine" && steps > warmup) {
      const double t = static_cast<double>(step - warmup) / static_cast<double>(steps - warmup);
      lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(1.0, t)));
    }
    return lr;
  }

  KeyValues to_kv() const {
    KeyValues kv;
    kv.set("train.lr", adam.lr);
    kv.set("train.weight_decay", adam.weight_decay);
    kv.set("train.beta1", adam.beta1);
    kv.set("train.beta2", adam.beta2);
    kv.set("train.eps", adam.eps);
    kv.set("train.clip", clip);
    kv.set("train.steps", steps);
    kv.set("train.batch", batch);
    kv.set("train.lr_schedule", lr_schedule);
    kv.set("train.warmup", warmup);
    kv.set("policy.K", policy.K);
    kv.set("policy.L", policy.L);
    kv.set("policy.P", policy.P);
    kv.set("policy.k_range", std::to_string(k_min) + ".." + std::to_string(k_max));
    kv.set("policy.stream_fraction", stream_fraction);
    return kv;
  }

  static TrainConfig from_kv(const KeyValues& kv) { return from_kv(kv, TrainConfig()); }
  static TrainConfig from_kv(const KeyValues& kv, TrainConfig c) {
    c.adam.lr = kv.get("train.lr", c.adam.lr);
    c.adam.weight_decay = kv.get("train.weight_decay", c.adam.weight_decay);
    c.adam.beta1 = kv.get("train.beta1", c.adam.beta1);
    c.adam.beta2 = kv.get("train.beta2", c.adam.beta2);
    c.adam.eps = kv.get("train.eps", c.adam.eps);
    c.clip = kv.get("train.clip", c.clip);
    c.steps = kv.get("train.steps", c.steps);
    c.batch = kv.get("train.batch", c.batch);
    c.lr_schedule = kv.get_string("train.lr_schedule", c.lr_schedule);
    c.warmup = kv.get("train.warmup", c.warmup);
    c.policy.K = kv.get("policy.K", c.policy.K);
    c.policy.L = kv.get("policy.L", c.policy.L);
    c.policy.P = kv.get("policy.P", c.policy.P);
    if (kv.has("policy.k_range")) {
      const auto r = kv.get_list("policy.k_range", {});
      if (r.empty()) throw ConfigError("policy.k_range: empty");
      c.k_min = r.front();
      c.k_max = r.back();
    }
    c.stream_fraction = kv.get("policy.stream_fraction", c.stream_fraction);
    c.validate();
    return c;
  }
};

struct StepResult {
  double loss = 0.0;
  double grad_norm = 0.0;                       // before clipping
  std::vector<std::optional<std::size_t>> ks;  // K per example, empty = offline mask
};

/// Draws the mask choice for one example: nullopt (offline) or a K.
inline std::optional<std::size_t> sample_k(const TrainConfig& cfg, Rng& rng) {
  if (cfg.stream_fraction <= 0.0) return std::nullopt;
  if (cfg.stream_fraction < 1.0 && rng.uniform() >= cfg.stream_fraction) return std::nullopt;
  return static_cast<std::size_t>(
      rng.uniform_int(static_cast<std::int64_t>(cfg.k_min), static_cast<std::int64_t>(cfg.k_max)));
}

/// One optimiser step on the batch mean of the per-example target losses.
/// Each example is back-propagated on its own so only one graph is alive at
/// a time; gradients accumulate in the parameters.
inline StepResult train_step(BestowModel& model, const std::vector<const SynthExample*>& batch, AdamState& state,
                             const TrainConfig& cfg, Rng& ksample, std::size_t step_index) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  auto& params = model.params();
  params.zero_grad();
  StepResult res;
  const double w = 1.0 / static_cast<double>(batch.size());
  for (const SynthExample* ex : batch) {
    const auto k = sample_k(cfg, ksample);
    res.ks.push_back(k);
    std::optional<WaitKConfig> sched;
    if (k) {
      sched = cfg.policy;
      sched->K = *k;
    }
    const Tensor loss = model.loss(ex->utterance, ex->prompt, sched);
    const double v = loss.item();
    if (!std::isfinite(v)) throw NonFiniteLoss("non-finite loss at step " + std::to_string(step_index));
    res.loss += w * v;
    scale(loss, w).backward();
  }
  res.grad_norm = clip_grad_norm(params, cfg.clip);
  AdamConfig adam = cfg.adam;
  adam.lr = cfg.lr_at(step_index);
  adam_step(params, state, adam);
  return res;
}

/// Mean teacher-forced loss without updating anything.
inline double evaluate_loss(const BestowModel& model, const std::vector<SynthExample>& data,
                            const std::optional<WaitKConfig>& sched = std::nullopt) {
  if (data.empty()) throw std::invalid_argument("evaluate_loss: empty dataset");
  double s = 0.0;
  for (const auto& ex : data) s += model.loss(ex.utterance, ex.prompt, sched).item();
  return s / static_cast<double>(data.size());
}

/// Batches drawn uniformly with replacement from a named sub-stream.
class BatchSampler {
 public:
  BatchSampler(const std::vector<SynthExample>& data, Rng rng) : data_(data), rng_(std::move(rng)) {
    if (data.empty()) throw std::invalid_argument("BatchSampler: empty dataset");
  }
  std::vector<const SynthExample*> next(std::size_t n) {
    std::vector<const SynthExample*> b;
    for (std::size_t i = 0; i < n; ++i) {
      b.push_back(&data_[static_cast<std::size_t>(rng_.uniform_int(0, static_cast<std::int64_t>(data_.size()) - 1))]);
    }
    return b;
  }

 private:
  const std::vector<SynthExample>& data_;
  Rng rng_;
};

struct TrainLogRow {
  std::string kind;  // loss, grad_norm, lr, eval_loss
  std::size_t step = 0;
  double value = 0.0;
};

struct TrainLoopHooks {
  const std::vector<SynthExample>* eval_data = nullptr;
  std::size_t eval_every = 0;  // 0: only before the first and after the last step
  std::function<void(const TrainLogRow&)> log;
  /// Receives the model after evaluations and, on a non-finite loss, the
  /// last good state before the error propagates.
  std::function<void(const BestowModel&)> checkpoint;
};

/// Runs cfg.steps optimiser steps. Batches and K draws come from the
/// "batch" and "ksample" sub-streams of `seed`.
inline void train_loop(BestowModel& model, const std::vector<SynthExample>& data, const TrainConfig& cfg,
                       std::uint64_t seed, const TrainLoopHooks& hooks = {}) {
  cfg.validate();
  BatchSampler sampler(data, Rng(seed).substream("batch"));
  Rng ksample = Rng(seed).substream("ksample");
  AdamState state;
  auto log = [&](const char* kind, std::size_t step, double v) {
    if (hooks.log) hooks.log({kind, step, v});
  };
  auto evaluate = [&](std::size_t step) {
    if (!hooks.eval_data) return;
    log("eval_loss", step, evaluate_loss(model, *hooks.eval_data));
    if (hooks.checkpoint) hooks.checkpoint(model);
  };
  evaluate(0);
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    StepResult r;
    try {
      r = train_step(model, sampler.next(cfg.batch), state, cfg, ksample, s);
    } catch (const NonFiniteLoss&) {
      if (hooks.checkpoint) hooks.checkpoint(model);
      throw;
    }
    log("loss", s + 1, r.loss);
    log("grad_norm", s + 1, r.grad_norm);
    if (hooks.eval_every && (s + 1) % hooks.eval_every == 0 && s + 1 < cfg.steps) evaluate(s + 1);
  }
  evaluate(cfg.steps);
}

}  // namespace bestow

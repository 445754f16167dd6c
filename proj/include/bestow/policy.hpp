#pragma once

#include <algorithm>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "bestow/encoder.hpp"
#include "bestow/nn/mask.hpp"

namespace bestow {

/// Fixed wait-k schedule. One READ spans L encoder steps (L*P raw frames).
struct WaitKConfig {
  std::size_t K = 10;
  std::size_t L = 4;
  std::size_t P = 8;

  std::size_t step_ms() const { return L * P * SpeechUtterance::frame_period_ms; }
  std::size_t frames_per_read() const { return L * P; }

  void validate() const {
    if (K < 1 || L < 1 || P < 1) throw std::invalid_argument("wait-k: K, L and P must all be >= 1");
  }
};

/// Encoder steps visible when writing target token i (1-based):
/// min(T_enc, (K + i - 1) * L).
inline std::size_t visible_steps(std::size_t i, const WaitKConfig& cfg, std::size_t t_enc) {
  if (i < 1) throw std::invalid_argument("visible_steps: target index is 1-based");
  return std::min(t_enc, (cfg.K + i - 1) * cfg.L);
}

/// True when every target token sees the whole encoder output.
inline bool is_saturated(const WaitKConfig& cfg, std::size_t t_enc) { return cfg.K * cfg.L >= t_enc; }

/// Cross-attention mask realising the wait-k schedule on teacher-forced
/// input. Rows before `boundary` carry no speech; row boundary + i - 1 (the
/// row that predicts target i) sees keys [0, visible_steps(i)).
inline nn::AttentionMask schedule_mask(std::size_t rows, std::size_t boundary, const WaitKConfig& cfg,
                                       std::size_t t_enc) {
  if (boundary > rows) throw std::invalid_argument("schedule_mask: boundary beyond sequence");
  cfg.validate();
  std::vector<std::size_t> counts(rows, 0);
  for (std::size_t r = boundary; r < rows; ++r) counts[r] = visible_steps(r - boundary + 1, cfg, t_enc);
  return nn::AttentionMask::prefix(counts, t_enc);
}

/// Offline counterpart: rows from `boundary` on see the whole utterance.
inline nn::AttentionMask offline_mask(std::size_t rows, std::size_t boundary, std::size_t t_enc) {
  if (boundary > rows) throw std::invalid_argument("offline_mask: boundary beyond sequence");
  std::vector<std::size_t> counts(rows, 0);
  for (std::size_t r = boundary; r < rows; ++r) counts[r] = t_enc;
  return nn::AttentionMask::prefix(counts, t_enc);
}

enum class Action { read, write };

struct PolicyState {
  std::size_t tokens_written = 0;
  std::size_t steps_available = 0;
  bool source_finished = false;
};

/// Decides READ or WRITE from the session state. Wait-k is the only
/// implementation; adaptive policies would plug in here.
class ReadWritePolicy {
 public:
  virtual ~ReadWritePolicy() = default;
  virtual Action decide(const PolicyState& s) const = 0;
  virtual std::string name() const = 0;
};

class WaitKPolicy final : public ReadWritePolicy {
 public:
  explicit WaitKPolicy(WaitKConfig cfg) : cfg_(cfg) { cfg_.validate(); }

  Action decide(const PolicyState& s) const override {
    if (s.source_finished) return Action::write;
    const std::size_t need = (cfg_.K + s.tokens_written) * cfg_.L;
    return s.steps_available >= need ? Action::write : Action::read;
  }
  std::string name() const override { return "waitk"; }
  const WaitKConfig& config() const { return cfg_; }

 private:
  WaitKConfig cfg_;
};

inline std::unique_ptr<ReadWritePolicy> attach_policy(const std::string& kind, const WaitKConfig& cfg) {
  if (kind == "waitk") return std::make_unique<WaitKPolicy>(cfg);
  throw std::invalid_argument("unknown policy '" + kind + "' (supported: waitk)");
}

}  // namespace bestow

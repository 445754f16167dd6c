#pragma once

#include <limits>
#include <vector>

#include "bestow/model.hpp"

namespace bestow {

struct DecodeOptions {
  std::size_t max_len = 64;
  /// Length-forced decoding: never emit EOS, always produce max_len tokens.
  bool force_length = false;
};

/// Greedy choice from one logits row, optionally excluding one id.
inline int argmax_row(const Tensor& logits, std::size_t row, int exclude = -1) {
  const std::size_t v = logits.cols();
  int best = -1;
  double best_v = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < v; ++j) {
    if (static_cast<int>(j) == exclude) continue;
    const double x = logits.at(row, j);
    if (x > best_v) {
      best_v = x;
      best = static_cast<int>(j);
    }
  }
  return best;
}

/// Greedy next-token choice for the last row of `tokens` given the encoder
/// states visible to each row.
inline int next_token(const BestowModel& model, const EncoderOutput& enc, const std::vector<int>& tokens,
                      const nn::AttentionMask& cross_mask, const DecodeOptions& opt) {
  const Tensor logits = model.logits(enc, tokens, cross_mask);
  return argmax_row(logits, tokens.size() - 1, opt.force_length ? model.config().vocab.eos() : -1);
}

/// Step-by-step greedy generation over the full utterance. Every emitted
/// token is appended to the prompt, so it re-enters both the bridge
/// queries and the LLM input on the next step. EOS is not returned.
inline std::vector<int> decode_offline(const BestowModel& model, const EncoderOutput& enc,
                                       const std::vector<int>& context, const DecodeOptions& opt) {
  std::vector<int> tokens = context;
  std::vector<int> out;
  const std::size_t boundary = context.size() - 1;
  const int eos = model.config().vocab.eos();
  while (out.size() < opt.max_len) {
    const auto mask = offline_mask(tokens.size(), boundary, enc.steps());
    const int t = next_token(model, enc, tokens, mask, opt);
    if (t == eos) break;
    out.push_back(t);
    tokens.push_back(t);
  }
  return out;
}

inline std::vector<int> decode_offline(const BestowModel& model, const SpeechUtterance& u,
                                       const std::vector<int>& context, const DecodeOptions& opt) {
  if (opt.max_len == 0) return {};
  return decode_offline(model, model.encode(u), context, opt);
}

/// Greedy decoding where target i only sees the first visible_steps(i)
/// encoder states of a precomputed encoding (the forced-schedule oracle for
/// streaming).
inline std::vector<int> decode_with_schedule(const BestowModel& model, const EncoderOutput& enc,
                                             const std::vector<int>& context, const WaitKConfig& cfg,
                                             const DecodeOptions& opt) {
  std::vector<int> tokens = context;
  std::vector<int> out;
  const std::size_t boundary = context.size() - 1;
  const int eos = model.config().vocab.eos();
  while (out.size() < opt.max_len) {
    const auto mask = schedule_mask(tokens.size(), boundary, cfg, enc.steps());
    const int t = next_token(model, enc, tokens, mask, opt);
    if (t == eos) break;
    out.push_back(t);
    tokens.push_back(t);
  }
  return out;
}

}  // namespace bestow

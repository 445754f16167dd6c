#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "bestow/ops.hpp"

namespace bestow {

/// Token id space: content ids [0, content) followed by special tokens.
struct Vocabulary {
  static constexpr std::size_t n_special = 5;
  std::size_t content = 64;

  int eos() const { return static_cast<int>(content); }
  int bos() const { return static_cast<int>(content) + 1; }
  /// Task tag tokens, one per synthetic task kind.
  int task(std::size_t kind) const {
    if (kind >= 3) throw std::out_of_range("task tag index " + std::to_string(kind));
    return static_cast<int>(content + 2 + kind);
  }
  std::size_t size() const { return content + n_special; }
  bool is_content(int t) const { return t >= 0 && static_cast<std::size_t>(t) < content; }
};

/// Text side of one example: an instruction-style context followed by the
/// target tokens. No filler or wait tokens are ever inserted; streaming is
/// expressed purely through the cross-attention mask.
struct PromptLayout {
  std::vector<int> context_tokens;
  std::vector<int> target_tokens;

  std::size_t boundary() const { return context_tokens.size(); }

  /// Row of the (shifted) input sequence whose logits predict target 1.
  std::size_t first_prediction_row() const {
    if (context_tokens.empty()) throw std::invalid_argument("prompt needs at least one context token");
    return context_tokens.size() - 1;
  }

  std::vector<int> full() const {
    std::vector<int> t = context_tokens;
    t.insert(t.end(), target_tokens.begin(), target_tokens.end());
    return t;
  }

  /// Teacher-forced LLM input: every token but the last.
  std::vector<int> input_tokens() const {
    auto t = full();
    if (!target_tokens.empty()) t.pop_back();
    return t;
  }

  /// Next-token labels aligned with input_tokens(); context positions ignored.
  std::vector<int> labels() const {
    const auto t = full();
    const auto in = input_tokens();
    std::vector<int> y(in.size(), kIgnoreIndex);
    for (std::size_t r = first_prediction_row(); r + 1 < t.size(); ++r) y[r] = t[r + 1];
    return y;
  }
};

}  // namespace bestow

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "bestow/tensor.hpp"

namespace bestow::nn {

/// Boolean [queries x keys] matrix; true means the query may attend the key.
class AttentionMask {
 public:
  AttentionMask() = default;
  AttentionMask(std::size_t queries, std::size_t keys, bool allow)
      : queries_(queries), keys_(keys), allow_(queries * keys, allow ? 1 : 0) {}

  static AttentionMask all(std::size_t q, std::size_t k) { return {q, k, true}; }
  static AttentionMask none(std::size_t q, std::size_t k) { return {q, k, false}; }

  static AttentionMask causal(std::size_t n) {
    AttentionMask m(n, n, false);
    for (std::size_t i = 0; i < n; ++i) m.allow_range(i, 0, i + 1);
    return m;
  }

  /// Query i may attend keys [i - left, i + right], clipped to the sequence.
  static AttentionMask window(std::size_t n, std::size_t left, std::size_t right) {
    return window(n, n, 0, left, right);
  }

  /// Windowed mask for queries at absolute positions [q0, q0 + nq) against
  /// keys at absolute positions [k0, k0 + nk).
  static AttentionMask window(std::size_t nq, std::size_t nk, std::size_t q0, std::size_t left,
                              std::size_t right, std::size_t k0 = 0) {
    AttentionMask m(nq, nk, false);
    for (std::size_t i = 0; i < nq; ++i) {
      const std::size_t pos = q0 + i;
      const std::size_t lo = pos > left ? pos - left : 0;
      const std::size_t hi = pos + right + 1;
      const std::size_t b = lo > k0 ? lo - k0 : 0;
      const std::size_t e = hi > k0 ? std::min(nk, hi - k0) : 0;
      if (b < e) m.allow_range(i, b, e);
    }
    return m;
  }

  /// Prefix ("staircase" when counts are nondecreasing) mask: row i allows
  /// keys [0, counts[i]).
  static AttentionMask prefix(const std::vector<std::size_t>& counts, std::size_t keys) {
    AttentionMask m(counts.size(), keys, false);
    for (std::size_t i = 0; i < counts.size(); ++i) m.allow_range(i, 0, std::min(counts[i], keys));
    return m;
  }

  std::size_t queries() const { return queries_; }
  std::size_t keys() const { return keys_; }
  bool allowed(std::size_t q, std::size_t k) const { return allow_[q * keys_ + k] != 0; }
  void set(std::size_t q, std::size_t k, bool v) { allow_[q * keys_ + k] = v ? 1 : 0; }
  void allow_range(std::size_t q, std::size_t b, std::size_t e) {
    std::fill(allow_.begin() + static_cast<std::ptrdiff_t>(q * keys_ + b),
              allow_.begin() + static_cast<std::ptrdiff_t>(q * keys_ + e), 1);
  }
  const std::uint8_t* row(std::size_t q) const { return allow_.data() + q * keys_; }

  std::size_t allowed_count(std::size_t q) const {
    return static_cast<std::size_t>(std::count(row(q), row(q) + keys_, std::uint8_t{1}));
  }

  bool row_fully_masked(std::size_t q) const { return allowed_count(q) == 0; }

  /// Row q allows exactly a (possibly empty) key prefix.
  bool row_is_prefix(std::size_t q) const {
    const auto c = allowed_count(q);
    return std::all_of(row(q), row(q) + c, [](std::uint8_t v) { return v == 1; });
  }

  bool is_lower_triangular() const {
    for (std::size_t q = 0; q < queries_; ++q) {
      for (std::size_t k = q + 1; k < keys_; ++k) {
        if (allowed(q, k)) return false;
      }
    }
    return true;
  }

  /// Every row is a key prefix and the prefix length never shrinks.
  bool is_staircase() const {
    std::size_t prev = 0;
    for (std::size_t q = 0; q < queries_; ++q) {
      if (!row_is_prefix(q)) return false;
      const auto c = allowed_count(q);
      if (c < prev) return false;
      prev = c;
    }
    return true;
  }

  /// Sub-mask restricted to the first `keys` key columns.
  AttentionMask truncate_keys(std::size_t keys) const {
    AttentionMask m(queries_, keys, false);
    for (std::size_t q = 0; q < queries_; ++q) {
      for (std::size_t k = 0; k < keys; ++k) m.set(q, k, allowed(q, k));
    }
    return m;
  }

  void require_shape(std::size_t q, std::size_t k, const char* what) const {
    if (q != queries_ || k != keys_) {
      throw DimensionError(std::string(what) + ": mask " + shape_str({queries_, keys_}) +
                           " does not match attention " + shape_str({q, k}));
    }
  }

  bool operator==(const AttentionMask&) const = default;

 private:
  std::size_t queries_ = 0;
  std::size_t keys_ = 0;
  std::vector<std::uint8_t> allow_;
};

}  // namespace bestow::nn

#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <vector>

#include "bestow/nn/mask.hpp"
#include "bestow/ops.hpp"

namespace bestow::nn {

/// Counts attention score-matrix entries (query x key pairs, per call,
/// independent of head count). Used by the complexity benchmark.
class ScoreCounter {
 public:
  static void add(std::uint64_t n) { value().fetch_add(n, std::memory_order_relaxed); }
  static std::uint64_t get() { return value().load(); }
  static void reset() { value().store(0); }

 private:
  static std::atomic<std::uint64_t>& value() {
    static std::atomic<std::uint64_t> v{0};
    return v;
  }
};

namespace detail {

// Scratch buffer whose bytes are reported to the MemoryMeter.
class MeteredBuffer {
 public:
  explicit MeteredBuffer(std::size_t n) : buf_(n, 0.0) {
    MemoryMeter::add(static_cast<std::int64_t>(n * sizeof(double)));
  }
  MeteredBuffer(MeteredBuffer&& o) noexcept : buf_(std::move(o.buf_)) { o.buf_.clear(); }
  MeteredBuffer(const MeteredBuffer&) = delete;
  MeteredBuffer& operator=(const MeteredBuffer&) = delete;
  ~MeteredBuffer() { MemoryMeter::sub(static_cast<std::int64_t>(buf_.size() * sizeof(double))); }
  double* data() { return buf_.data(); }
  const double* data() const { return buf_.data(); }

 private:
  std::vector<double> buf_;
};

}  // namespace detail

/// Multi-head scaled dot-product attention over already projected inputs.
///
/// q [Tq x d], k and v [Tk x d]; head h uses columns [h*d/H, (h+1)*d/H).
/// Masked keys are excluded from the softmax entirely, so a query row with
/// no allowed key produces a zero output row and receives no gradient.
inline Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionMask& mask,
                        std::size_t n_heads) {
  bestow::detail::require_rank2(q, "attention");
  bestow::detail::require_rank2(k, "attention");
  bestow::detail::require_rank2(v, "attention");
  const std::size_t tq = q.shape()[0], d = q.shape()[1], tk = k.shape()[0];
  if (k.shape()[1] != d || v.shape() != k.shape()) {
    throw DimensionError("attention: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) +
                         ", v " + shape_str(v.shape()) + " are incompatible");
  }
  if (n_heads == 0 || d % n_heads != 0) {
    throw DimensionError("attention: width " + std::to_string(d) + " not divisible by " +
                         std::to_string(n_heads) + " heads");
  }
  mask.require_shape(tq, tk, "attention");
  ScoreCounter::add(static_cast<std::uint64_t>(tq) * tk);

  const std::size_t dh = d / n_heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool track = q.requires_grad() || k.requires_grad() || v.requires_grad();
  const double* Q = q.data().data();
  const double* K = k.data().data();
  const double* V = v.data().data();

  std::vector<double> out(tq * d, 0.0);
  auto probs = std::make_shared<detail::MeteredBuffer>(track ? n_heads * tq * tk : 0);
  detail::MeteredBuffer row_buf(tk);
  double* s = row_buf.data();

  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t c0 = h * dh;
    for (std::size_t i = 0; i < tq; ++i) {
      const std::uint8_t* allow = mask.row(i);
      const double* qi = Q + i * d + c0;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < tk; ++j) {
        if (!allow[j]) continue;
        const double* kj = K + j * d + c0;
        double acc = 0.0;
        for (std::size_t c = 0; c < dh; ++c) acc += qi[c] * kj[c];
        s[j] = acc * sc;
        mx = std::max(mx, s[j]);
      }
      if (mx == -std::numeric_limits<double>::infinity()) continue;  // fully masked row
      double z = 0.0;
      for (std::size_t j = 0; j < tk; ++j) {
        if (!allow[j]) continue;
        s[j] = std::exp(s[j] - mx);
        z += s[j];
      }
      double* oi = out.data() + i * d + c0;
      double* pi = track ? probs->data() + (h * tq + i) * tk : nullptr;
      for (std::size_t j = 0; j < tk; ++j) {
        if (!allow[j]) continue;
        const double p = s[j] / z;
        if (pi) pi[j] = p;
        const double* vj = V + j * d + c0;
        for (std::size_t c = 0; c < dh; ++c) oi[c] += p * vj[c];
      }
    }
  }

  auto saved_mask = track ? std::make_shared<const AttentionMask>(mask) : nullptr;
  return Tensor::make_result(
      {tq, d}, std::move(out), {q, k, v},
      [tq, tk, d, dh, n_heads, sc, saved_mask, probs](bestow::detail::Node& self) {
        const double* Qd = self.parents[0]->data.data();
        const double* Kd = self.parents[1]->data.data();
        const double* Vd = self.parents[2]->data.data();
        double* gq = grad_sink(self, 0);
        double* gk = grad_sink(self, 1);
        double* gv = grad_sink(self, 2);
        std::vector<double> dp(tk);
        for (std::size_t h = 0; h < n_heads; ++h) {
          const std::size_t c0 = h * dh;
          for (std::size_t i = 0; i < tq; ++i) {
            const std::uint8_t* allow = saved_mask->row(i);
            const double* pi = probs->data() + (h * tq + i) * tk;
            const double* go = self.grad.data() + i * d + c0;
            double dot = 0.0;
            for (std::size_t j = 0; j < tk; ++j) {
              if (!allow[j]) continue;
              const double* vj = Vd + j * d + c0;
              double acc = 0.0;
              for (std::size_t c = 0; c < dh; ++c) acc += go[c] * vj[c];
              dp[j] = acc;
              dot += pi[j] * acc;
              if (gv) {
                double* gvj = gv + j * d + c0;
                for (std::size_t c = 0; c < dh; ++c) gvj[c] += pi[j] * go[c];
              }
            }
            const double* qi = Qd + i * d + c0;
            for (std::size_t j = 0; j < tk; ++j) {
              if (!allow[j]) continue;
              const double ds = pi[j] * (dp[j] - dot) * sc;
              if (gq) {
                const double* kj = Kd + j * d + c0;
                double* gqi = gq + i * d + c0;
                for (std::size_t c = 0; c < dh; ++c) gqi[c] += ds * kj[c];
              }
              if (gk) {
                double* gkj = gk + j * d + c0;
                for (std::size_t c = 0; c < dh; ++c) gkj[c] += ds * qi[c];
              }
            }
          }
        }
      });
}

/// Single-head attention: softmax(Q K^T / sqrt(d) + mask) V.
inline Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                   const AttentionMask& mask) {
  return attention(q, k, v, mask, 1);
}

}  // namespace bestow::nn

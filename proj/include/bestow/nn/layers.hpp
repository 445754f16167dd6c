#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "bestow/nn/attention.hpp"
#include "bestow/nn/mask.hpp"
#include "bestow/ops.hpp"
#include "bestow/optim.hpp"
#include "bestow/rng.hpp"

namespace bestow::nn {

struct TransformerBlockConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t d_ff = 256;
  double dropout_rate = 0.0;  // accepted for config compatibility; never applied

  void validate() const {
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
      throw std::invalid_argument("d_model " + std::to_string(d_model) +
                                  " must be a positive multiple of n_heads " +
                                  std::to_string(n_heads));
    }
  }
};

struct Linear {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out], undefined when bias-free

  static Linear create(ParameterStore& ps, const std::string& name, std::size_t in, std::size_t out,
                       bool with_bias, Rng& rng, double init_scale = 1.0) {
    Linear l;
    l.weight = ps.add(name + ".weight",
                      rng.randn({in, out}, init_scale / std::sqrt(static_cast<double>(in))));
    if (with_bias) l.bias = ps.add(name + ".bias", Tensor::zeros({out}));
    return l;
  }

  Tensor operator()(const Tensor& x) const {
    Tensor y = matmul(x, weight);
    return bias.defined() ? add_row(y, bias) : y;
  }
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;
  double eps = 1e-5;

  static LayerNorm create(ParameterStore& ps, const std::string& name, std::size_t d) {
    return {ps.add(name + ".gain", Tensor::full({d}, 1.0)), ps.add(name + ".bias", Tensor::zeros({d}))};
  }
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias, eps); }
};

struct FeedForward {
  Linear up;
  Linear down;

  static FeedForward create(ParameterStore& ps, const std::string& name, std::size_t d,
                            std::size_t d_ff, Rng& rng) {
    return {Linear::create(ps, name + ".up", d, d_ff, true, rng),
            Linear::create(ps, name + ".down", d_ff, d, true, rng)};
  }
  Tensor operator()(const Tensor& x) const { return down(gelu(up(x))); }
};

/// Multi-head attention with bias-free Q/K/V/O projections, so a zero value
/// input or a fully masked query row yields exactly zero output.
struct MultiHeadAttention {
  Linear q, k, v, o;
  std::size_t n_heads = 1;

  static MultiHeadAttention create(ParameterStore& ps, const std::string& name, std::size_t d,
                                   std::size_t n_heads, Rng& rng) {
    if (n_heads == 0 || d % n_heads != 0) {
      throw std::invalid_argument("d_model not divisible by n_heads in " + name);
    }
    return {Linear::create(ps, name + ".q", d, d, false, rng),
            Linear::create(ps, name + ".k", d, d, false, rng),
            Linear::create(ps, name + ".v", d, d, false, rng),
            Linear::create(ps, name + ".o", d, d, false, rng), n_heads};
  }

  Tensor operator()(const Tensor& x_q, const Tensor& x_kv, const AttentionMask& mask) const {
    return o(attention(q(x_q), k(x_kv), v(x_kv), mask, n_heads));
  }
};

/// Pre-norm transformer block: self-attention, optional cross-attention,
/// feed-forward, each wrapped as x + sublayer(LN(x)).
struct DecoderBlock {
  LayerNorm ln_self;
  MultiHeadAttention self_attn;
  std::optional<LayerNorm> ln_cross;
  std::optional<MultiHeadAttention> cross_attn;
  LayerNorm ln_ff;
  FeedForward ff;

  static DecoderBlock create(ParameterStore& ps, const std::string& name,
                             const TransformerBlockConfig& cfg, bool with_cross, Rng& rng) {
    cfg.validate();
    DecoderBlock b;
    b.ln_self = LayerNorm::create(ps, name + ".ln_self", cfg.d_model);
    b.self_attn = MultiHeadAttention::create(ps, name + ".self", cfg.d_model, cfg.n_heads, rng);
    if (with_cross) {
      b.ln_cross = LayerNorm::create(ps, name + ".ln_cross", cfg.d_model);
      b.cross_attn = MultiHeadAttention::create(ps, name + ".cross", cfg.d_model, cfg.n_heads, rng);
    }
    b.ln_ff = LayerNorm::create(ps, name + ".ln_ff", cfg.d_model);
    b.ff = FeedForward::create(ps, name + ".ff", cfg.d_model, cfg.d_ff, rng);
    return b;
  }

  /// Full-sequence form: queries and self-attention keys are the same rows.
  Tensor operator()(const Tensor& x, const AttentionMask& self_mask, const Tensor* cross_kv = nullptr,
                    const AttentionMask* cross_mask = nullptr) const {
    return forward_rows(x, x, self_mask, cross_kv, cross_mask);
  }

  /// Computes the block for query rows `x_q` whose self-attention keys are
  /// `x_kv` (a superset window of the same sequence). Rows are independent
  /// given their keys, which is what makes incremental encoding exact.
  Tensor forward_rows(const Tensor& x_q, const Tensor& x_kv, const AttentionMask& self_mask,
                      const Tensor* cross_kv = nullptr, const AttentionMask* cross_mask = nullptr) const {
    if (cross_mask && !cross_kv) {
      throw std::invalid_argument("decoder block: cross mask given without cross keys/values");
    }
    if (cross_kv && !cross_attn) {
      throw std::invalid_argument("decoder block: cross keys/values given to a block without cross-attention");
    }
    const bool shared = x_q.same_storage(x_kv);
    Tensor hq = ln_self(x_q);
    Tensor hkv = shared ? hq : ln_self(x_kv);
    Tensor h = add(x_q, self_attn(hq, hkv, self_mask));
    if (cross_kv) {
      const AttentionMask all = AttentionMask::all(h.rows(), cross_kv->rows());
      h = add(h, (*cross_attn)((*ln_cross)(h), *cross_kv, cross_mask ? *cross_mask : all));
    }
    return add(h, ff(ln_ff(h)));
  }
};

/// Sinusoidal table: even columns sin(p / 10000^(2i/d)), odd columns cos.
inline Tensor positional_encoding(std::size_t T, std::size_t d_model, std::size_t offset = 0) {
  if (T == 0 || d_model == 0) throw DimensionError("positional_encoding: empty table");
  std::vector<double> pe(T * d_model);
  for (std::size_t p = 0; p < T; ++p) {
    for (std::size_t c = 0; c < d_model; ++c) {
      const double freq =
          std::pow(10000.0, -static_cast<double>(c - c % 2) / static_cast<double>(d_model));
      const double a = static_cast<double>(p + offset) * freq;
      pe[p * d_model + c] = (c % 2 == 0) ? std::sin(a) : std::cos(a);
    }
  }
  return Tensor::from_data({T, d_model}, std::move(pe));
}

/// Elman RNN layer, h_t = tanh(x_t W + h_{t-1} U + b).
struct RnnLayer {
  Linear input;
  Linear recurrent;

  static RnnLayer create(ParameterStore& ps, const std::string& name, std::size_t d, Rng& rng) {
    return {Linear::create(ps, name + ".in", d, d, true, rng),
            Linear::create(ps, name + ".rec", d, d, false, rng)};
  }

  Tensor operator()(const Tensor& x) const {
    Tensor xin = input(x);
    std::vector<Tensor> states;
    states.reserve(x.rows());
    Tensor h;
    for (std::size_t t = 0; t < x.rows(); ++t) {
      Tensor pre = slice_rows(xin, t, t + 1);
      if (h.defined()) pre = add(pre, recurrent(h));
      h = bestow::tanh(pre);
      states.push_back(h);
    }
    return concat_rows(states);
  }
};

}  // namespace bestow::nn

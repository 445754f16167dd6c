#pragma once

#include <algorithm>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "bestow/nn/layers.hpp"

namespace bestow {

enum class EncoderMode { bidi, bidi_recompute, causal };

inline std::string to_string(EncoderMode m) {
  switch (m) {
    case EncoderMode::bidi: return "bidi";
    case EncoderMode::bidi_recompute: return "bidi_recompute";
    case EncoderMode::causal: return "causal";
  }
  return "?";
}

inline EncoderMode parse_encoder_mode(const std::string& s) {
  if (s == "bidi") return EncoderMode::bidi;
  if (s == "bidi_recompute") return EncoderMode::bidi_recompute;
  if (s == "causal") return EncoderMode::causal;
  throw std::invalid_argument("unknown encoder mode '" + s + "' (expected bidi, bidi_recompute, causal)");
}

/// Attention context in encoder steps: [left, right] around each position.
struct ContextWindow {
  std::size_t left = 0;
  std::size_t right = 0;
  bool operator==(const ContextWindow&) const = default;
};

struct EncoderConfig {
  EncoderMode mode = EncoderMode::bidi;
  std::size_t P = 8;  // raw 10 ms frames per encoder step
  std::size_t d_in = 16;
  std::size_t n_layers = 2;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t d_ff = 128;
  std::size_t right_context_frames = 13;  // encoder steps, bidi_recompute finalisation
  std::vector<ContextWindow> causal_context_windows{{70, 13}, {70, 6}, {70, 1}, {70, 0}};
  std::size_t causal_window = 3;             // index into causal_context_windows
  std::optional<ContextWindow> bidi_window;  // bounded attention for the bidi modes

  void validate() const {
    if (P < 1) throw std::invalid_argument("encoder: P must be >= 1");
    if (n_layers < 1) throw std::invalid_argument("encoder: n_layers must be >= 1");
    if (causal_context_windows.empty()) throw std::invalid_argument("encoder: no causal context windows");
    if (causal_window >= causal_context_windows.size()) {
      throw std::invalid_argument("encoder: causal window index " + std::to_string(causal_window) +
                                  " out of range");
    }
    nn::TransformerBlockConfig{d_model, n_heads, d_ff}.validate();
  }

  ContextWindow active_causal_window() const { return causal_context_windows.at(causal_window); }
};

struct SpeechUtterance {
  static constexpr std::size_t frame_period_ms = 10;
  Tensor frames;  // [T_raw x d_in]

  std::size_t length() const { return frames.defined() ? frames.rows() : 0; }
};

struct EncoderOutput {
  Tensor states;  // [T_enc x d_model]; undefined when empty
  std::size_t stride_ms = 0;

  std::size_t steps() const { return states.defined() ? states.rows() : 0; }
  EncoderOutput prefix(std::size_t n) const {
    if (n > steps()) throw DimensionError("encoder output prefix longer than output");
    if (n == 0) return {Tensor(), stride_ms};
    return {n == steps() ? states : slice_rows(states, 0, n), stride_ms};
  }
};

inline std::size_t encoder_steps(std::size_t raw_frames, std::size_t P) { return (raw_frames + P - 1) / P; }

/// Session state for incremental cache-aware causal encoding.
struct EncoderCache {
  struct Layer {
    std::size_t offset = 0;    // absolute index of rows.front()
    std::size_t total = 0;     // rows received so far (absolute end)
    std::size_t computed = 0;  // outputs of this layer produced so far
    std::vector<double> rows;  // [(total - offset) x d_model]
  };

  // configuration fingerprint
  std::size_t P = 0, d_in = 0, d_model = 0, n_layers = 0;
  ContextWindow window;

  std::vector<double> pending;  // raw frames not yet forming a full group
  std::vector<Layer> layers;
  std::size_t emitted = 0;
  bool finished = false;

  /// Processed states retained as left context in layer l.
  std::size_t retained(std::size_t l) const { return layers[l].computed - layers[l].offset; }
};

/// Small transformer stand-in for a speech encoder: stacks P raw frames per
/// step, projects to d_model, adds positions, then runs n_layers blocks.
class SpeechEncoder {
 public:
  SpeechEncoder() = default;

  static SpeechEncoder create(ParameterStore& ps, const std::string& name, const EncoderConfig& cfg,
                              Rng& rng) {
    cfg.validate();
    SpeechEncoder e;
    e.cfg_ = cfg;
    e.proj_ = nn::Linear::create(ps, name + ".proj", cfg.P * cfg.d_in, cfg.d_model, true, rng);
    const nn::TransformerBlockConfig bc{cfg.d_model, cfg.n_heads, cfg.d_ff};
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      e.blocks_.push_back(nn::DecoderBlock::create(ps, name + ".layer" + std::to_string(l), bc, false, rng));
    }
    e.ln_out_ = nn::LayerNorm::create(ps, name + ".ln_out", cfg.d_model);
    return e;
  }

  const EncoderConfig& config() const { return cfg_; }
  EncoderConfig& config() { return cfg_; }
  const nn::Linear& projection() const { return proj_; }

  /// Stacks P consecutive frames (zero-padding the tail) and projects them:
  /// [T_raw x d_in] -> [ceil(T_raw/P) x d_model].
  Tensor downsample(const Tensor& frames) const {
    if (!frames.defined() || frames.rows() == 0) throw DimensionError("downsample: empty input");
    if (frames.rank() != 2 || frames.cols() != cfg_.d_in) {
      throw DimensionError("downsample: expected frames [T x " + std::to_string(cfg_.d_in) + "], got " +
                           shape_str(frames.shape()));
    }
    const std::size_t t_raw = frames.rows(), t_enc = encoder_steps(t_raw, cfg_.P);
    Tensor stacked = frames;
    if (t_raw % cfg_.P != 0) {
      stacked = concat_rows({frames, Tensor::zeros({t_enc * cfg_.P - t_raw, cfg_.d_in})});
    }
    // row-major [T_enc*P x d_in] is bit-identical to [T_enc x P*d_in]
    Tensor grouped = reshape_rows(stacked, t_enc, cfg_.P * cfg_.d_in);
    return proj_(grouped);
  }

  /// Full-sequence encoding in the configured mode (bidi modes attend the
  /// whole utterance, or `bidi_window` when set; causal uses the active
  /// context window).
  EncoderOutput encode(const SpeechUtterance& u) const {
    Tensor x = input_states(u.frames);
    const std::size_t t = x.rows();
    const nn::AttentionMask mask = full_mask(t);
    for (const auto& b : blocks_) x = b(x, mask);
    return {ln_out_(x), stride_ms()};
  }

  EncoderOutput encode_offline(const SpeechUtterance& u) const {
    if (cfg_.mode == EncoderMode::causal) {
      throw std::logic_error("encode_offline requires a bidirectional encoder");
    }
    return encode(u);
  }

  struct PrefixEncoding {
    EncoderOutput output;
    std::size_t finalized = 0;  // states [0, finalized) have their right context
  };

  /// Re-encodes an available prefix bidirectionally. Unless `complete`, a
  /// trailing partial step is held back and the last right_context_frames
  /// steps are provisional.
  PrefixEncoding encode_streaming_bidi(const SpeechUtterance& prefix, bool complete) const {
    if (cfg_.mode == EncoderMode::causal) {
      throw std::logic_error("encode_streaming_bidi requires a bidirectional encoder");
    }
    const std::size_t n = prefix.length();
    const std::size_t usable = complete ? n : (n / cfg_.P) * cfg_.P;
    if (usable == 0) return {{Tensor(), stride_ms()}, 0};
    SpeechUtterance u{usable == n ? prefix.frames : slice_rows(prefix.frames, 0, usable)};
    EncoderOutput out = encode(u);
    const std::size_t t = out.steps();
    const std::size_t fin = complete ? t : (t > cfg_.right_context_frames ? t - cfg_.right_context_frames : 0);
    return {std::move(out), fin};
  }

  EncoderCache new_cache() const {
    if (cfg_.mode != EncoderMode::causal) throw std::logic_error("encoder cache requires causal mode");
    EncoderCache c;
    c.P = cfg_.P;
    c.d_in = cfg_.d_in;
    c.d_model = cfg_.d_model;
    c.n_layers = cfg_.n_layers;
    c.window = cfg_.active_causal_window();
    c.layers.resize(cfg_.n_layers);
    return c;
  }

  /// Feeds a block of raw frames through the cache-aware causal encoder and
  /// returns the states that became final, together with the updated
  /// cache. `last` flushes the tail (zero-padded partial step, no further
  /// right context). The concatenation of all returned deltas equals
  /// encode() on the whole utterance bit for bit.
  std::pair<EncoderOutput, EncoderCache> encode_causal_incremental(const Tensor& block, EncoderCache cache,
                                                                   bool last) const {
    check_cache(cache);
    if (cache.finished) throw std::logic_error("encoder cache already flushed");
    if (block.defined()) {
      if (block.rank() != 2 || block.cols() != cfg_.d_in) {
        throw DimensionError("encode_causal_incremental: block " + shape_str(block.shape()) +
                             " does not have " + std::to_string(cfg_.d_in) + " columns");
      }
      cache.pending.insert(cache.pending.end(), block.data().begin(), block.data().end());
    }
    const std::size_t group = cfg_.P * cfg_.d_in;
    std::size_t n_groups = cache.pending.size() / group;
    if (last && cache.pending.size() % group != 0) {
      cache.pending.resize((n_groups + 1) * group, 0.0);
      ++n_groups;
    }
    if (n_groups > 0) {
      auto& in0 = cache.layers[0];
      Tensor grouped = Tensor::from_data(
          {n_groups, group},
          std::vector<double>(cache.pending.begin(), cache.pending.begin() + static_cast<std::ptrdiff_t>(n_groups * group)));
      cache.pending.erase(cache.pending.begin(), cache.pending.begin() + static_cast<std::ptrdiff_t>(n_groups * group));
      Tensor x = add(proj_(grouped), nn::positional_encoding(n_groups, cfg_.d_model, in0.total));
      in0.rows.insert(in0.rows.end(), x.data().begin(), x.data().end());
      in0.total += n_groups;
    }

    const auto [left, right] = cache.window;
    const std::size_t d = cfg_.d_model;
    std::vector<double> delta;
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
      auto& buf = cache.layers[l];
      std::size_t upto = last ? buf.total : (buf.total > right ? buf.total - right : 0);
      upto = std::max(upto, buf.computed);
      if (upto > buf.computed) {
        const std::size_t q0 = buf.computed;
        const std::size_t kb = q0 > left ? q0 - left : 0;
        const std::size_t ke = std::min(buf.total, upto + right);
        Tensor xq = rows_of(buf, q0, upto);
        Tensor xkv = rows_of(buf, kb, ke);
        const auto mask = nn::AttentionMask::window(upto - q0, ke - kb, q0, left, right, kb);
        Tensor y = blocks_[l].forward_rows(xq, xkv, mask);
        if (l + 1 < cfg_.n_layers) {
          auto& next = cache.layers[l + 1];
          next.rows.insert(next.rows.end(), y.data().begin(), y.data().end());
          next.total += y.rows();
        } else {
          Tensor z = ln_out_(y);
          delta.insert(delta.end(), z.data().begin(), z.data().end());
        }
        buf.computed = upto;
      }
      // keep only rows still needed as left context or not yet consumed as queries
      const std::size_t keep_from = std::max(buf.offset, buf.computed > left ? buf.computed - left : 0);
      buf.rows.erase(buf.rows.begin(), buf.rows.begin() + static_cast<std::ptrdiff_t>((keep_from - buf.offset) * d));
      buf.offset = keep_from;
    }
    if (last) cache.finished = true;
    const std::size_t n_new = delta.size() / d;
    cache.emitted += n_new;
    EncoderOutput out{n_new ? Tensor::from_data({n_new, d}, std::move(delta)) : Tensor(), stride_ms()};
    return {std::move(out), std::move(cache)};
  }

  std::size_t stride_ms() const { return cfg_.P * SpeechUtterance::frame_period_ms; }

 private:
  Tensor input_states(const Tensor& frames) const {
    Tensor x = downsample(frames);
    return add(x, nn::positional_encoding(x.rows(), cfg_.d_model));
  }

  nn::AttentionMask full_mask(std::size_t t) const {
    if (cfg_.mode == EncoderMode::causal) {
      const auto w = cfg_.active_causal_window();
      return nn::AttentionMask::window(t, w.left, w.right);
    }
    if (cfg_.bidi_window) return nn::AttentionMask::window(t, cfg_.bidi_window->left, cfg_.bidi_window->right);
    return nn::AttentionMask::all(t, t);
  }

  void check_cache(const EncoderCache& c) const {
    if (cfg_.mode != EncoderMode::causal) throw std::logic_error("incremental encoding requires causal mode");
    if (c.P != cfg_.P || c.d_in != cfg_.d_in || c.d_model != cfg_.d_model || c.n_layers != cfg_.n_layers ||
        !(c.window == cfg_.active_causal_window()) || c.layers.size() != cfg_.n_layers) {
      throw std::invalid_argument("encoder cache does not match encoder configuration");
    }
  }

  Tensor rows_of(const EncoderCache::Layer& buf, std::size_t b, std::size_t e) const {
    const std::size_t d = cfg_.d_model;
    const auto first = buf.rows.begin() + static_cast<std::ptrdiff_t>((b - buf.offset) * d);
    return Tensor::from_data({e - b, d}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>((e - b) * d)));
  }

  static Tensor reshape_rows(const Tensor& x, std::size_t r, std::size_t c) {
    return Tensor::make_result({r, c}, std::vector<double>(x.data().begin(), x.data().end()), {x},
                               [](detail::Node& self) {
                                 if (double* g = grad_sink(self, 0)) {
                                   for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
                                 }
                               });
  }

  EncoderConfig cfg_;
  nn::Linear proj_;
  std::vector<nn::DecoderBlock> blocks_;
  nn::LayerNorm ln_out_;
};

}  // namespace bestow

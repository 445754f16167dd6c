#pragma once

#include <istream>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bestow/decode.hpp"
#include "bestow/policy.hpp"

namespace bestow {

/// Incremental supplier of raw 10 ms frames. `read` returns up to
/// `max_frames` rows, or an undefined tensor at end of stream; it may throw
/// on failure.
class FrameSource {
 public:
  virtual ~FrameSource() = default;
  virtual Tensor read(std::size_t max_frames) = 0;
  /// Total length when known in advance (used for latency bookkeeping if
  /// decoding ends before the source does).
  virtual std::optional<std::size_t> total_frames() const { return std::nullopt; }
};

/// Serves a stored utterance block by block.
class UtteranceSource : public FrameSource {
 public:
  explicit UtteranceSource(SpeechUtterance u) : u_(std::move(u)) {}
  Tensor read(std::size_t max_frames) override {
    const std::size_t n = u_.length();
    if (pos_ >= n || max_frames == 0) return {};
    const std::size_t e = std::min(n, pos_ + max_frames);
    Tensor block = slice_rows(u_.frames, pos_, e);
    pos_ = e;
    return block;
  }
  std::optional<std::size_t> total_frames() const override { return u_.length(); }

 private:
  SpeechUtterance u_;
  std::size_t pos_ = 0;
};

struct StreamEvent {
  enum class Kind { read, write };
  Kind kind = Kind::read;
  std::size_t frames = 0;  // READ: frames consumed by this event
  int token = -1;          // WRITE: emitted token
  std::size_t d = 0;       // WRITE: cumulative frames read before the token

  static StreamEvent read(std::size_t n) { return {Kind::read, n, -1, 0}; }
  static StreamEvent write(int token, std::size_t d) { return {Kind::write, 0, token, d}; }
  bool operator==(const StreamEvent&) const = default;
};

struct LatencyTrace {
  std::vector<std::size_t> d;  // frames consumed before emitting token i
  std::size_t source_len_frames = 0;
  std::size_t frame_ms = SpeechUtterance::frame_period_ms;
};

struct StreamResult {
  std::vector<int> tokens;
  std::vector<StreamEvent> events;
  LatencyTrace latency;
};

/// Raised when the frame source fails mid-session; carries everything
/// produced up to the failure.
class StreamFailure : public std::runtime_error {
 public:
  StreamFailure(const std::string& what, StreamResult partial)
      : std::runtime_error(what), partial_(std::move(partial)) {}
  const StreamResult& partial() const { return partial_; }

 private:
  StreamResult partial_;
};

/// Encoder side of a streaming session: cache-aware causal encoding, or
/// bidirectional re-encoding of the whole prefix after every block.
class StreamingEncoderSession {
 public:
  explicit StreamingEncoderSession(const SpeechEncoder& enc) : enc_(enc) {
    switch (enc.config().mode) {
      case EncoderMode::causal: cache_ = enc.new_cache(); break;
      case EncoderMode::bidi_recompute: break;
      case EncoderMode::bidi:
        throw std::logic_error("streaming requires a bidi_recompute or causal encoder, not bidi");
    }
  }

  void push(const Tensor& block) { advance(block, false); }
  void finish() { advance(Tensor(), true); }

  /// Encoder states that are final and may be shown to the policy.
  std::size_t available() const { return available_; }
  /// Current encoding; at least `available()` rows.
  EncoderOutput encoding() const {
    if (cache_) {
      if (causal_rows_.empty()) return {Tensor(), enc_.stride_ms()};
      return {Tensor::from_data({causal_rows_.size() / enc_.config().d_model, enc_.config().d_model}, causal_rows_),
              enc_.stride_ms()};
    }
    return bidi_.output;
  }

 private:
  void advance(const Tensor& block, bool last) {
    if (cache_) {
      auto [delta, next] = enc_.encode_causal_incremental(block, std::move(*cache_), last);
      cache_ = std::move(next);
      if (delta.steps()) causal_rows_.insert(causal_rows_.end(), delta.states.data().begin(), delta.states.data().end());
      available_ = causal_rows_.size() / enc_.config().d_model;
      return;
    }
    if (block.defined()) frames_.push_back(block);
    if (frames_.empty()) return;
    SpeechUtterance prefix{frames_.size() == 1 ? frames_.front() : concat_rows(frames_)};
    frames_ = {prefix.frames};
    bidi_ = enc_.encode_streaming_bidi(prefix, last);
    available_ = bidi_.finalized;
  }

  const SpeechEncoder& enc_;
  std::optional<EncoderCache> cache_;
  std::vector<double> causal_rows_;
  std::vector<Tensor> frames_;
  SpeechEncoder::PrefixEncoding bidi_;
  std::size_t available_ = 0;
};

/// Simultaneous greedy decoding under a read-write policy.
///
/// READ pulls L*P raw frames; WRITE emits the greedy token for the next
/// position with target j restricted to min(available, (K + j - 1) * L)
/// encoder states. Once the source is exhausted the remaining tokens are
/// written back to back. d_i is the number of raw frames read before token
/// i (model compute time is not counted).
inline StreamResult stream_decode(const BestowModel& model, FrameSource& source, const std::vector<int>& context,
                                  const WaitKConfig& cfg, const DecodeOptions& opt,
                                  const ReadWritePolicy* policy = nullptr) {
  cfg.validate();
  if (cfg.P != model.config().encoder.P) {
    throw std::invalid_argument("wait-k P=" + std::to_string(cfg.P) + " does not match encoder P=" +
                                std::to_string(model.config().encoder.P));
  }
  if (context.empty()) throw std::invalid_argument("stream_decode: empty context");
  WaitKPolicy default_policy(cfg);
  const ReadWritePolicy& pol = policy ? *policy : default_policy;

  StreamingEncoderSession session(model.encoder());
  StreamResult res;
  std::vector<int> tokens = context;
  const std::size_t boundary = context.size() - 1;
  const int eos = model.config().vocab.eos();
  std::size_t frames_read = 0;
  bool finished = false;

  auto finalize_latency = [&] {
    res.latency.source_len_frames = finished ? frames_read : source.total_frames().value_or(frames_read);
  };

  while (res.tokens.size() < opt.max_len) {
    const PolicyState st{res.tokens.size(), session.available(), finished};
    if (pol.decide(st) == Action::read) {
      Tensor block;
      try {
        block = source.read(cfg.frames_per_read());
      } catch (const std::exception& e) {
        finalize_latency();
        throw StreamFailure(std::string("frame source failed: ") + e.what(), res);
      }
      if (!block.defined() || block.rows() == 0) {
        finished = true;
        session.finish();
        continue;
      }
      frames_read += block.rows();
      res.events.push_back(StreamEvent::read(block.rows()));
      session.push(block);
      continue;
    }
    const std::size_t avail = session.available();
    const EncoderOutput enc = session.encoding().prefix(avail);
    std::vector<std::size_t> counts(tokens.size(), 0);
    for (std::size_t r = boundary; r < tokens.size(); ++r) {
      counts[r] = std::min(avail, (cfg.K + (r - boundary)) * cfg.L);
    }
    const int t = next_token(model, enc, tokens, nn::AttentionMask::prefix(counts, avail), opt);
    if (t == eos) break;
    tokens.push_back(t);
    res.tokens.push_back(t);
    res.latency.d.push_back(frames_read);
    res.events.push_back(StreamEvent::write(t, frames_read));
  }
  finalize_latency();
  return res;
}

inline void write_trace(std::ostream& os, const std::vector<StreamEvent>& events) {
  for (const auto& e : events) {
    if (e.kind == StreamEvent::Kind::read) {
      os << "READ " << e.frames << '\n';
    } else {
      os << "WRITE " << e.token << ' ' << e.d << '\n';
    }
  }
}

inline std::vector<StreamEvent> read_trace(std::istream& is) {
  std::vector<StreamEvent> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "READ") {
      std::size_t n = 0;
      if (!(ls >> n)) throw std::runtime_error("trace line " + std::to_string(lineno) + ": bad READ");
      out.push_back(StreamEvent::read(n));
    } else if (kind == "WRITE") {
      int tok = 0;
      std::size_t d = 0;
      if (!(ls >> tok >> d)) throw std::runtime_error("trace line " + std::to_string(lineno) + ": bad WRITE");
      out.push_back(StreamEvent::write(tok, d));
    } else {
      throw std::runtime_error("trace line " + std::to_string(lineno) + ": unknown event '" + kind + "'");
    }
  }
  return out;
}

/// Rebuilds the per-token frame counts from an event log.
inline std::vector<std::size_t> delays_from_trace(const std::vector<StreamEvent>& events) {
  std::vector<std::size_t> d;
  for (const auto& e : events) {
    if (e.kind == StreamEvent::Kind::write) d.push_back(e.d);
  }
  return d;
}

}  // namespace bestow

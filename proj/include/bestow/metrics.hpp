#pragma once

#include <algorithm>
#include <cstdio>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bestow/stream.hpp"
#include "bestow/synth.hpp"

namespace bestow {

struct LaalInput {
  std::vector<std::size_t> d;  // source frames consumed before token i
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;
  std::size_t source_len_frames = 0;
  std::size_t frame_ms = 10;

  void validate() const {
    if (d.empty()) throw std::invalid_argument("laal: empty delay list");
    if (d.size() != hyp_len) throw std::invalid_argument("laal: len(d) != hyp_len");
    if (source_len_frames == 0) throw std::invalid_argument("laal: zero-length source");
    for (std::size_t i = 1; i < d.size(); ++i) {
      if (d[i] < d[i - 1]) throw std::invalid_argument("laal: delays must be nondecreasing");
    }
    if (d.back() > source_len_frames) throw std::invalid_argument("laal: delay beyond end of source");
  }
};

/// Length-adaptive average lagging, non-computation-aware, in frames.
/// The ideal rate uses max(hyp_len, ref_len) so over-long hypotheses are
/// not rewarded. Sums up to the first token written after the whole source
/// was read (or all tokens if that never happens).
inline double laal_frames(const LaalInput& in) {
  in.validate();
  const double S = static_cast<double>(in.source_len_frames);
  const double rate = static_cast<double>(std::max(in.hyp_len, in.ref_len)) / S;
  std::size_t tau = in.hyp_len;
  for (std::size_t i = 0; i < in.d.size(); ++i) {
    if (in.d[i] >= in.source_len_frames) {
      tau = i + 1;
      break;
    }
  }
  double s = 0.0;
  for (std::size_t i = 0; i < tau; ++i) s += static_cast<double>(in.d[i]) - static_cast<double>(i) / rate;
  return s / static_cast<double>(tau);
}

inline double laal(const LaalInput& in) { return laal_frames(in) * static_cast<double>(in.frame_ms); }

inline std::size_t edit_distance(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

/// Levenshtein distance over reference length. An empty reference yields
/// the hypothesis length and sets `empty_reference`.
inline double token_error_rate(const std::vector<int>& hyp, const std::vector<int>& ref,
                               bool* empty_reference = nullptr) {
  if (empty_reference) *empty_reference = ref.empty();
  if (ref.empty()) return static_cast<double>(hyp.size());
  return static_cast<double>(edit_distance(hyp, ref)) / static_cast<double>(ref.size());
}

/// Fraction of positions (over the longer sequence) holding the same token.
inline double token_accuracy(const std::vector<int>& hyp, const std::vector<int>& ref) {
  const std::size_t n = std::max(hyp.size(), ref.size());
  if (n == 0) return 1.0;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < std::min(hyp.size(), ref.size()); ++i) ok += hyp[i] == ref[i];
  return static_cast<double>(ok) / static_cast<double>(n);
}

struct TradeoffPoint {
  std::size_t K = 0;
  double laal_ms = 0.0;
  double quality = 0.0;  // mean token accuracy
  std::size_t n = 0;
};

struct SweepOptions {
  WaitKConfig base;  // K is overridden per point
  std::size_t k_min = 3, k_max = 12;  // range seen in training
  bool force_length = true;           // decode exactly len(reference) tokens
  std::size_t max_len = 64;           // used when not forcing
};

struct SweepResult {
  std::vector<TradeoffPoint> points;
  std::vector<std::string> warnings;
};

struct StreamedExample {
  StreamResult result;
  double laal_ms = 0.0;
  double accuracy = 0.0;
};

inline StreamedExample stream_example(const BestowModel& model, const SynthExample& ex, const WaitKConfig& cfg,
                                      bool force_length, std::size_t max_len = 64) {
  const auto ref = ex.reference();
  UtteranceSource src(ex.utterance);
  const DecodeOptions opt{force_length ? ref.size() : max_len, force_length};
  StreamedExample out;
  out.result = stream_decode(model, src, ex.prompt.context_tokens, cfg, opt);
  out.accuracy = token_accuracy(out.result.tokens, ref);
  if (!out.result.tokens.empty()) {
    out.laal_ms = laal({out.result.latency.d, out.result.tokens.size(), ref.size(),
                        out.result.latency.source_len_frames, out.result.latency.frame_ms});
  }
  return out;
}

/// Mean offline token accuracy (greedy, optionally length-forced).
inline double offline_quality(const BestowModel& model, const std::vector<SynthExample>& data, bool force_length,
                              std::size_t max_len = 64) {
  if (data.empty()) throw std::invalid_argument("offline_quality: empty dataset");
  double s = 0.0;
  for (const auto& ex : data) {
    const auto ref = ex.reference();
    const DecodeOptions opt{force_length ? ref.size() : max_len, force_length};
    s += token_accuracy(decode_offline(model, ex.utterance, ex.prompt.context_tokens, opt), ref);
  }
  return s / static_cast<double>(data.size());
}

/// Streams the whole dataset once per K (ascending) and averages LAAL and
/// token accuracy. Hypotheses with no tokens contribute no LAAL.
inline SweepResult sweep_k(const BestowModel& model, const std::vector<SynthExample>& data,
                           std::vector<std::size_t> Ks, const SweepOptions& opt) {
  if (Ks.empty()) throw std::invalid_argument("sweep_k: no K values");
  if (data.empty()) throw std::invalid_argument("sweep_k: empty dataset");
  std::sort(Ks.begin(), Ks.end());
  Ks.erase(std::unique(Ks.begin(), Ks.end()), Ks.end());
  SweepResult res;
  for (std::size_t K : Ks) {
    if (K < opt.k_min || K > opt.k_max) {
      res.warnings.push_back("K=" + std::to_string(K) + " outside trained range [" + std::to_string(opt.k_min) +
                             "," + std::to_string(opt.k_max) + "]");
    }
    WaitKConfig cfg = opt.base;
    cfg.K = K;
    double lat = 0.0, q = 0.0;
    std::size_t n_lat = 0;
    for (const auto& ex : data) {
      const auto r = stream_example(model, ex, cfg, opt.force_length, opt.max_len);
      q += r.accuracy;
      if (!r.result.tokens.empty()) {
        lat += r.laal_ms;
        ++n_lat;
      }
    }
    res.points.push_back({K, n_lat ? lat / static_cast<double>(n_lat) : 0.0, q / static_cast<double>(data.size()),
                          data.size()});
  }
  return res;
}

inline std::string format_fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline void write_tradeoff_csv(std::ostream& os, const std::vector<TradeoffPoint>& pts) {
  os << "K,laal_ms,quality,n\n";
  for (const auto& p : pts) {
    os << p.K << ',' << format_fixed(p.laal_ms) << ',' << format_fixed(p.quality) << ',' << p.n << '\n';
  }
}

}  // namespace bestow

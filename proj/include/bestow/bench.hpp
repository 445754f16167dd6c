#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "bestow/metrics.hpp"
#include "bestow/model.hpp"

namespace bestow {

enum class FusionVariant { prepend, xattn };

inline std::string to_string(FusionVariant v) { return v == FusionVariant::prepend ? "prepend" : "xattn"; }

struct CostModel {
  std::size_t L_t = 16;  // text tokens
  std::size_t L_a = 512;  // speech features
  std::size_t d_model = 64;
  std::size_t n_layers_llm = 4;
  std::size_t X = 2;
  bool query_self_attention = true;  // false for the RNN query encoder
};

/// Attention score-matrix entries (QK^T elements) for one forward pass.
/// The bridge's own cost is the X * (L_t*L_a + L_t^2) term; the LLM
/// self-attention sees only text in the cross-attention design.
inline std::uint64_t predicted_ops(FusionVariant v, const CostModel& m) {
  const std::uint64_t t = m.L_t, a = m.L_a;
  if (v == FusionVariant::prepend) return m.n_layers_llm * (t + a) * (t + a);
  if (a == 0) return m.n_layers_llm * t * t;  // no speech: the bridge is skipped
  return m.n_layers_llm * t * t + m.X * (t * a + (m.query_self_attention ? t * t : 0));
}

/// Projection/FFN multiply-adds outside the score matrices, per forward
/// (self-attention bridge; output head excluded).
inline std::uint64_t predicted_projection_flops(FusionVariant v, const CostModel& m, std::size_t d_ff) {
  const std::uint64_t d = m.d_model, t = m.L_t, a = m.L_a;
  const std::uint64_t block = 4 * d * d + 2 * d * d_ff;  // per row: q,k,v,o + ffn
  if (v == FusionVariant::prepend) return m.n_layers_llm * (t + a) * block + a * d * d;
  // bridge: self-attn q,k,v,o on text; cross q,o on text and k,v on speech
  return m.n_layers_llm * t * block + m.X * (4 * t * d * d + 2 * t * d * d + 2 * a * d * d) +
         (m.X > 0 ? (m.X - 1) * t * 2 * d * d_ff : 0);
}

/// GPT-style fusion: adapted speech features are prepended to the text
/// embeddings and the whole sequence runs through the same LLM backbone.
class PrependBaseline {
 public:
  PrependBaseline(const BestowModel& llm, std::uint64_t seed) : llm_(llm) {
    Rng rng = Rng(seed).substream("prepend");
    const std::size_t d = llm.config().d_model;
    adapter_ = nn::Linear::create(params_, "prepend.adapter", d, d, true, rng);
  }

  /// Logits for the text positions only: [L_t x V].
  Tensor logits(const Tensor& features, const std::vector<int>& tokens) const {
    const std::size_t a = features.defined() ? features.rows() : 0;
    Tensor x = llm_.embed(tokens);
    if (a) x = concat_rows({adapter_(features), x});
    Tensor out = llm_.llm_logits(x);
    return a ? slice_rows(out, a, out.rows()) : out;
  }

  const ParameterStore& params() const { return params_; }

 private:
  const BestowModel& llm_;
  ParameterStore params_;
  nn::Linear adapter_;
};

struct BenchResult {
  FusionVariant variant = FusionVariant::xattn;
  std::size_t L_t = 0, L_a = 0;
  std::uint64_t predicted_ops = 0;
  std::uint64_t measured_ops = 0;  // instrumented score entries
  double measured_ms = 0.0;        // median wall-clock
  std::int64_t mem_bytes = 0;      // tensor high-water mark above baseline
};

struct BenchConfig {
  ModelConfig model;
  std::size_t repetitions = 7;
  std::uint64_t seed = 0;
  double min_resolution_factor = 10.0;
};

class TimerResolutionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Smallest observable steady_clock increment, in ms.
inline double timer_granularity_ms() {
  using clock = std::chrono::steady_clock;
  double best = 1e9;
  for (int i = 0; i < 20; ++i) {
    const auto a = clock::now();
    auto b = clock::now();
    while (b == a) b = clock::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(b - a).count());
  }
  return best;
}

inline std::vector<std::pair<std::size_t, std::size_t>> default_bench_grid() {
  return {{16, 128}, {16, 256}, {16, 512}, {16, 1024}};
}

/// Times the fusion + LLM forward of both variants (no gradients, encoder
/// excluded: both read the same random encoder features).
inline std::vector<BenchResult> run_bench(const std::vector<std::pair<std::size_t, std::size_t>>& grid,
                                          const BenchConfig& cfg) {
  if (grid.empty()) throw std::invalid_argument("bench: empty grid");
  if (cfg.repetitions < 1) throw std::invalid_argument("bench: repetitions must be >= 1");
  const BestowModel model = BestowModel::create(cfg.model, cfg.seed);
  const PrependBaseline prepend(model, cfg.seed);
  const std::size_t d = cfg.model.d_model;
  const double granularity = timer_granularity_ms();
  std::vector<BenchResult> out;

  for (const auto& [lt, la] : grid) {
    if (lt < 1) throw std::invalid_argument("bench: L_t must be >= 1");
    Rng rng = Rng(cfg.seed).substream("bench").substream(static_cast<std::uint64_t>(lt * 1000003 + la));
    EncoderOutput enc{la ? rng.randn({la, d}) : Tensor(), cfg.model.encoder.P * SpeechUtterance::frame_period_ms};
    std::vector<int> tokens(lt);
    for (int& t : tokens) t = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(cfg.model.vocab.content) - 1));
    const auto mask = nn::AttentionMask::all(lt, la);
    const CostModel cm{lt, la, d, cfg.model.llm_layers, cfg.model.bridge.X,
                       cfg.model.bridge.query_encoder == QueryEncoderKind::causal_self_attention};

    for (FusionVariant v : {FusionVariant::prepend, FusionVariant::xattn}) {
      auto run = [&] {
        return v == FusionVariant::prepend ? prepend.logits(enc.states, tokens) : model.logits(enc, tokens, mask);
      };
      BenchResult r;
      r.variant = v;
      r.L_t = lt;
      r.L_a = la;
      r.predicted_ops = predicted_ops(v, cm);

      run();  // warm-up
      nn::ScoreCounter::reset();
      MemoryMeter::reset_peak();
      const auto base = MemoryMeter::live_bytes();
      const Tensor y = run();
      r.measured_ops = nn::ScoreCounter::get();
      r.mem_bytes = MemoryMeter::peak_bytes() - base;
      if (y.rows() != lt || y.cols() != cfg.model.vocab.size()) {
        throw DimensionError("bench: " + to_string(v) + " output " + shape_str(y.shape()));
      }

      std::vector<double> ms;
      for (std::size_t i = 0; i < cfg.repetitions; ++i) {
        const auto a = std::chrono::steady_clock::now();
        run();
        ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - a).count());
      }
      std::sort(ms.begin(), ms.end());
      r.measured_ms = ms[ms.size() / 2];
      if (r.measured_ms < cfg.min_resolution_factor * granularity) {
        throw TimerResolutionError("bench: " + to_string(v) + " at L_t=" + std::to_string(lt) +
                                   ", L_a=" + std::to_string(la) + " took " + format_fixed(r.measured_ms, 4) +
                                   " ms, under 10x the timer granularity; use larger sizes");
      }
      out.push_back(r);
    }
  }
  return out;
}

/// prepend time / xattn time per grid point, in grid order.
inline std::vector<double> speedups(const std::vector<BenchResult>& rs) {
  std::vector<double> s;
  for (std::size_t i = 0; i + 1 < rs.size(); i += 2) {
    const auto& p = rs[i].variant == FusionVariant::prepend ? rs[i] : rs[i + 1];
    const auto& x = rs[i].variant == FusionVariant::prepend ? rs[i + 1] : rs[i];
    s.push_back(p.measured_ms / x.measured_ms);
  }
  return s;
}

inline void write_bench_csv(std::ostream& os, const std::vector<BenchResult>& rs) {
  os << "variant,L_t,L_a,pred_ops,measured_ms,mem_bytes\n";
  for (const auto& r : rs) {
    os << to_string(r.variant) << ',' << r.L_t << ',' << r.L_a << ',' << r.predicted_ops << ','
       << format_fixed(r.measured_ms, 4) << ',' << r.mem_bytes << '\n';
  }
}

/// CSV plus a one-paragraph summary of the speedup spread.
inline std::pair<std::string, std::string> report(const std::vector<BenchResult>& rs) {
  if (rs.empty()) throw std::invalid_argument("report: no results");
  std::ostringstream csv;
  write_bench_csv(csv, rs);
  auto s = speedups(rs);
  std::ostringstream sum;
  if (!s.empty()) {
    std::sort(s.begin(), s.end());
    sum << "xattn speedup over prepend: min " << format_fixed(s.front(), 2) << "x, median "
        << format_fixed(s[s.size() / 2], 2) << "x, max " << format_fixed(s.back(), 2) << "x over " << s.size()
        << " grid points\n";
  }
  return {csv.str(), sum.str()};
}

}  // namespace bestow

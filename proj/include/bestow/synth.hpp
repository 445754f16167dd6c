#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bestow/config.hpp"
#include "bestow/encoder.hpp"
#include "bestow/rng.hpp"
#include "bestow/vocab.hpp"

namespace bestow {

enum class TaskKind { copy, shift_vocab, local_reorder };

inline std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::copy: return "copy";
    case TaskKind::shift_vocab: return "shift_vocab";
    case TaskKind::local_reorder: return "local_reorder";
  }
  return "?";
}

inline TaskKind parse_task_kind(const std::string& s) {
  if (s == "copy") return TaskKind::copy;
  if (s == "shift_vocab") return TaskKind::shift_vocab;
  if (s == "local_reorder") return TaskKind::local_reorder;
  throw std::invalid_argument("unknown task kind '" + s + "' (expected copy, shift_vocab or local_reorder)");
}

struct SynthTaskSpec {
  TaskKind kind = TaskKind::copy;
  std::size_t vocab_size = 64;
  std::size_t min_len = 4;
  std::size_t max_len = 10;
  std::size_t U = 16;  // raw frames per source token
  double noise_std = 0.1;
  std::size_t d_in = 16;
  std::size_t shift = 1;  // shift_vocab offset
  std::uint64_t seed = 0;

  void validate() const {
    if (U < 1) throw std::invalid_argument("task: U must be >= 1");
    if (vocab_size < 4) throw std::invalid_argument("task: vocab_size must be >= 4");
    if (min_len < 1 || max_len < min_len) throw std::invalid_argument("task: need 1 <= min_len <= max_len");
    if (d_in < 1) throw std::invalid_argument("task: d_in must be >= 1");
    if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) throw std::invalid_argument("task: noise_std must be >= 0");
  }

  KeyValues to_kv() const {
    KeyValues kv;
    kv.set("task.kind", to_string(kind));
    kv.set("task.vocab_size", vocab_size);
    kv.set("task.min_len", min_len);
    kv.set("task.max_len", max_len);
    kv.set("task.U", U);
    kv.set("task.noise_std", noise_std);
    kv.set("task.d_in", d_in);
    kv.set("task.shift", shift);
    kv.set("task.seed", seed);
    return kv;
  }

  static SynthTaskSpec from_kv(const KeyValues& kv) { return from_kv(kv, SynthTaskSpec()); }
  static SynthTaskSpec from_kv(const KeyValues& kv, SynthTaskSpec s) {
    s.kind = parse_task_kind(kv.get_string("task.kind", to_string(s.kind)));
    s.vocab_size = kv.get("task.vocab_size", s.vocab_size);
    s.min_len = kv.get("task.min_len", s.min_len);
    s.max_len = kv.get("task.max_len", s.max_len);
    s.U = kv.get("task.U", s.U);
    s.noise_std = kv.get("task.noise_std", s.noise_std);
    s.d_in = kv.get("task.d_in", s.d_in);
    s.shift = kv.get("task.shift", s.shift);
    s.seed = kv.get("task.seed", s.seed);
    s.validate();
    return s;
  }
};

/// Ground-truth mapping from source to target tokens.
inline std::vector<int> oracle_target(const SynthTaskSpec& spec, const std::vector<int>& src) {
  std::vector<int> out = src;
  switch (spec.kind) {
    case TaskKind::copy: break;
    case TaskKind::shift_vocab: {
      const auto v = static_cast<int>(spec.vocab_size);
      for (int& t : out) t = (t + static_cast<int>(spec.shift % spec.vocab_size)) % v;
      break;
    }
    case TaskKind::local_reorder:
      for (std::size_t i = 0; i + 1 < out.size(); i += 2) std::swap(out[i], out[i + 1]);
      break;
  }
  return out;
}

/// Fixed random embedding per content token, [vocab_size x d_in].
inline Tensor token_embedding_table(const SynthTaskSpec& spec) {
  Rng rng = Rng(spec.seed).substream("embed");
  return rng.randn({spec.vocab_size, spec.d_in}, 1.0);
}

struct SynthExample {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  std::vector<int> source;
  SpeechUtterance utterance;
  PromptLayout prompt;  // [BOS, task tag] -> oracle target + EOS

  /// Reference tokens without the closing EOS.
  std::vector<int> reference() const {
    auto r = prompt.target_tokens;
    if (!r.empty()) r.pop_back();
    return r;
  }
};

inline Vocabulary task_vocabulary(const SynthTaskSpec& spec) { return Vocabulary{spec.vocab_size}; }

inline std::vector<int> task_context(const SynthTaskSpec& spec) {
  const Vocabulary v = task_vocabulary(spec);
  return {v.bos(), v.task(static_cast<std::size_t>(spec.kind))};
}

/// Each source token becomes U consecutive frames: its embedding plus
/// independent Gaussian noise.
inline Tensor render_frames(const SynthTaskSpec& spec, const Tensor& table, const std::vector<int>& src, Rng& rng) {
  std::vector<double> f;
  f.reserve(src.size() * spec.U * spec.d_in);
  for (int t : src) {
    if (t < 0 || static_cast<std::size_t>(t) >= spec.vocab_size) {
      throw std::out_of_range("source token " + std::to_string(t) + " outside vocabulary");
    }
    for (std::size_t u = 0; u < spec.U; ++u) {
      for (std::size_t c = 0; c < spec.d_in; ++c) {
        const double noise = spec.noise_std > 0 ? rng.normal(0.0, spec.noise_std) : 0.0;
        f.push_back(table.at(static_cast<std::size_t>(t), c) + noise);
      }
    }
  }
  return Tensor::from_data({src.size() * spec.U, spec.d_in}, std::move(f));
}

/// Seed of example `index`; independent of how many examples are drawn.
inline std::uint64_t example_seed(const SynthTaskSpec& spec, std::size_t index) {
  return Rng(spec.seed).substream("data").substream(static_cast<std::uint64_t>(index)).engine()();
}

inline SynthExample build_example(const SynthTaskSpec& spec, const Tensor& table, std::size_t index,
                                  std::uint64_t seed, std::vector<int> source) {
  SynthExample ex;
  ex.index = index;
  ex.seed = seed;
  Rng noise = Rng(seed).substream("noise");
  ex.utterance.frames = render_frames(spec, table, source, noise);
  ex.prompt.context_tokens = task_context(spec);
  ex.prompt.target_tokens = oracle_target(spec, source);
  ex.prompt.target_tokens.push_back(task_vocabulary(spec).eos());
  ex.source = std::move(source);
  return ex;
}

inline SynthExample generate_one(const SynthTaskSpec& spec, const Tensor& table, std::size_t index) {
  const std::uint64_t seed = example_seed(spec, index);
  Rng rng = Rng(seed).substream("tokens");
  const auto len = static_cast<std::size_t>(
      rng.uniform_int(static_cast<std::int64_t>(spec.min_len), static_cast<std::int64_t>(spec.max_len)));
  std::vector<int> src(len);
  for (int& t : src) t = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(spec.vocab_size) - 1));
  return build_example(spec, table, index, seed, std::move(src));
}

/// Examples [first, first + n).
inline std::vector<SynthExample> generate(const SynthTaskSpec& spec, std::size_t n, std::size_t first = 0) {
  spec.validate();
  if (n < 1) throw std::invalid_argument("generate: n must be >= 1");
  const Tensor table = token_embedding_table(spec);
  std::vector<SynthExample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(generate_one(spec, table, first + i));
  return out;
}

/// Averages each block of U frames and picks the nearest token embedding.
inline std::vector<int> nearest_embedding_decode(const Tensor& table, const Tensor& frames, std::size_t U) {
  if (frames.rows() % U != 0) throw DimensionError("frame count is not a multiple of U");
  const std::size_t d = table.cols();
  std::vector<int> out;
  std::vector<double> mean(d);
  for (std::size_t b = 0; b < frames.rows() / U; ++b) {
    std::fill(mean.begin(), mean.end(), 0.0);
    for (std::size_t u = 0; u < U; ++u) {
      for (std::size_t c = 0; c < d; ++c) mean[c] += frames.at(b * U + u, c) / static_cast<double>(U);
    }
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < table.rows(); ++t) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += (mean[c] - table.at(t, c)) * (mean[c] - table.at(t, c));
      if (s < best_d) {
        best_d = s;
        best = static_cast<int>(t);
      }
    }
    out.push_back(best);
  }
  return out;
}

// Dataset file: spec lines (key=value), a "---" separator, then one record
// per example: "<index> <seed> | <source ids> | <target ids>".
inline void write_dataset(std::ostream& os, const SynthTaskSpec& spec, const std::vector<SynthExample>& data) {
  os << spec.to_kv().to_text() << "---\n";
  for (const auto& ex : data) {
    os << ex.index << ' ' << ex.seed << " |";
    for (int t : ex.source) os << ' ' << t;
    os << " |";
    for (int t : ex.reference()) os << ' ' << t;
    os << '\n';
  }
}

struct Dataset {
  SynthTaskSpec spec;
  std::vector<SynthExample> examples;
};

inline Dataset read_dataset(std::istream& is) {
  std::string line, header;
  bool separated = false;
  while (std::getline(is, line)) {
    if (line == "---") {
      separated = true;
      break;
    }
    header += line + '\n';
  }
  if (!separated) throw std::runtime_error("dataset: missing '---' separator");
  Dataset ds;
  ds.spec = SynthTaskSpec::from_kv(KeyValues::parse(header, "<dataset>"));
  const Tensor table = token_embedding_table(ds.spec);
  std::size_t lineno = 0;
  auto ids = [&](const std::string& s) {
    std::istringstream in(s);
    std::vector<int> v;
    int t;
    while (in >> t) v.push_back(t);
    return v;
  };
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto p1 = line.find('|'), p2 = line.rfind('|');
    if (p1 == std::string::npos || p1 == p2) {
      throw std::runtime_error("dataset record " + std::to_string(lineno) + ": malformed");
    }
    std::istringstream head(line.substr(0, p1));
    std::size_t index = 0;
    std::uint64_t seed = 0;
    if (!(head >> index >> seed)) throw std::runtime_error("dataset record " + std::to_string(lineno) + ": bad header");
    auto src = ids(line.substr(p1 + 1, p2 - p1 - 1));
    const auto tgt = ids(line.substr(p2 + 1));
    if (tgt != oracle_target(ds.spec, src)) {
      throw std::runtime_error("dataset record " + std::to_string(lineno) + ": target does not match task");
    }
    ds.examples.push_back(build_example(ds.spec, table, index, seed, std::move(src)));
  }
  return ds;
}

inline void save_dataset(const std::string& path, const SynthTaskSpec& spec, const std::vector<SynthExample>& data) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write dataset " + path);
  write_dataset(f, spec, data);
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open dataset " + path);
  return read_dataset(f);
}

}  // namespace bestow

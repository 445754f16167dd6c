#pragma once

#include <openssl/evp.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bestow/bench.hpp"
#include "bestow/checkpoint.hpp"
#include "bestow/metrics.hpp"
#include "bestow/train.hpp"

#ifndef BESTOW_VERSION
#define BESTOW_VERSION "unknown"
#endif

namespace bestow::cli {

namespace fs = std::filesystem;

/// Failure with a short machine-readable code; printed as
/// "error: <code>: <message>".
class CliError : public std::runtime_error {
 public:
  CliError(std::string code, const std::string& msg, int exit_code = 1)
      : std::runtime_error(msg), code_(std::move(code)), exit_code_(exit_code) {}
  const std::string& code() const { return code_; }
  int exit_code() const { return exit_code_; }

 private:
  std::string code_;
  int exit_code_;
};

inline CliError usage_error(const std::string& msg) { return CliError("usage", msg, 2); }

/// Built-in defaults for every key a run can use.
inline KeyValues default_run_kv() {
  KeyValues kv = ModelConfig{}.to_kv();
  kv.merge(TrainConfig{}.to_kv());
  SynthTaskSpec task;
  KeyValues tk = task.to_kv();
  for (const char* k : {"task.kind", "task.min_len", "task.max_len", "task.U", "task.noise_std", "task.shift"}) {
    kv.set(k, tk.require_string(k));
  }
  kv.set("seed", std::size_t{0});
  kv.set("data.n_train", std::size_t{4000});
  kv.set("data.n_eval", std::size_t{200});
  kv.set("data.eval_offset", std::size_t{1000000});
  kv.set("train.eval_every", std::size_t{500});
  kv.set("eval.force_length", false);
  kv.set("eval.max_len", std::size_t{64});
  kv.set("sweep.ks", std::string("3..12"));
  kv.set("sweep.force_length", true);
  kv.set("bench.grid", std::string("16:128,16:256,16:512,16:1024"));
  kv.set("bench.reps", std::size_t{7});
  return kv;
}

/// Everything a command needs, resolved from defaults < config file < flags.
struct RunConfig {
  KeyValues kv;
  ModelConfig model;
  TrainConfig train;
  SynthTaskSpec task;
  std::uint64_t seed = 0;

  static RunConfig resolve(const KeyValues& file, const KeyValues& flags) {
    RunConfig rc;
    rc.kv = default_run_kv();
    for (const auto* layer : {&file, &flags}) {
      for (const auto& [k, v] : layer->entries()) {
        if (!rc.kv.has(k)) throw ConfigError("unknown config key '" + k + "'");
        rc.kv.set(k, v);
      }
    }
    // the policy and the task are tied to the model geometry
    if (file.has("policy.P") || flags.has("policy.P")) {
      if (rc.kv.get<std::size_t>("policy.P", 0) != rc.kv.get<std::size_t>("encoder.P", 0)) {
        throw ConfigError("policy.P must equal encoder.P");
      }
    }
    rc.kv.set("policy.P", rc.kv.require_string("encoder.P"));
    rc.seed = rc.kv.get<std::uint64_t>("seed", 0);
    rc.model = ModelConfig::from_kv(rc.kv);
    rc.model.validate();
    rc.train = TrainConfig::from_kv(rc.kv);
    KeyValues tk = rc.kv;
    tk.set("task.vocab_size", rc.model.vocab.content);
    tk.set("task.d_in", rc.model.encoder.d_in);
    tk.set("task.seed", rc.seed);
    rc.task = SynthTaskSpec::from_kv(tk);
    return rc;
  }

  std::size_t get(const std::string& k) const { return kv.get<std::size_t>(k, 0); }
  bool flag(const std::string& k) const { return kv.get<bool>(k, false); }
};

inline std::string sha256_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw CliError("io", "cannot read " + p.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (f) {
    f.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (f.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(f.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream os;
  for (unsigned i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

/// Output directory plus the list of files written into it.
class RunOutput {
 public:
  RunOutput(fs::path dir, bool force) : dir_(std::move(dir)), start_(std::chrono::steady_clock::now()) {
    if (fs::exists(dir_) && !fs::is_directory(dir_)) throw CliError("output_exists", dir_.string() + " is a file");
    if (fs::exists(dir_) && !fs::is_empty(dir_) && !force) {
      throw CliError("output_exists", "output directory " + dir_.string() + " is not empty (use --force)");
    }
    fs::create_directories(dir_);
  }

  fs::path path(const std::string& name) const { return dir_ / name; }

  std::ofstream open(const std::string& name) {
    const auto p = path(name);
    fs::create_directories(p.parent_path());
    std::ofstream f(p, std::ios::binary);
    if (!f) throw CliError("io", "cannot write " + p.string());
    track(name);
    return f;
  }
  void track(const std::string& name) {
    if (std::find(files_.begin(), files_.end(), name) == files_.end()) files_.push_back(name);
  }

  void write_manifest(const std::string& command, const RunConfig& rc,
                      const std::vector<std::string>& notes = {}) const {
    nlohmann::ordered_json m;
    m["command"] = command;
    m["code_version"] = BESTOW_VERSION;
    m["config"] = nlohmann::ordered_json::object();
    for (const auto& [k, v] : rc.kv.entries()) m["config"][k] = v;
    m["files"] = nlohmann::ordered_json::array();
    for (const auto& f : files_) {
      m["files"].push_back({{"path", f}, {"sha256", sha256_file(path(f))}, {"bytes", fs::file_size(path(f))}});
    }
    if (!notes.empty()) m["warnings"] = notes;
    m["wall_clock_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    std::ofstream f(path("manifest.json"));
    f << m.dump(2) << '\n';
  }

 private:
  fs::path dir_;
  std::chrono::steady_clock::time_point start_;
  std::vector<std::string> files_;
};

/// Recomputes every digest listed in a manifest; returns the paths that do
/// not match.
inline std::vector<std::string> verify_manifest(const fs::path& dir) {
  std::ifstream f(dir / "manifest.json");
  if (!f) throw CliError("io", "no manifest in " + dir.string());
  const auto m = nlohmann::json::parse(f);
  std::vector<std::string> bad;
  for (const auto& e : m.at("files")) {
    const auto p = dir / e.at("path").get<std::string>();
    if (!fs::exists(p) || sha256_file(p) != e.at("sha256").get<std::string>()) bad.push_back(e.at("path"));
  }
  return bad;
}

// ---- commands ----------------------------------------------------------

inline void cmd_gen(const RunConfig& rc, const fs::path& out_dir, bool force) {
  const auto n_train = rc.get("data.n_train"), n_eval = rc.get("data.n_eval");
  if (n_train == 0 || n_eval == 0) throw usage_error("dataset sizes must be >= 1");
  RunOutput out(out_dir, force);
  {
    auto f = out.open("train.txt");
    write_dataset(f, rc.task, generate(rc.task, n_train));
  }
  {
    auto f = out.open("eval.txt");
    write_dataset(f, rc.task, generate(rc.task, n_eval, rc.get("data.eval_offset")));
  }
  out.write_manifest("gen", rc);
}

inline Dataset load_split(const fs::path& data_dir, const std::string& split, const RunConfig& rc) {
  const auto p = data_dir / (split + ".txt");
  if (!fs::exists(p)) throw CliError("missing_data", "dataset " + p.string() + " not found (run gen first)");
  Dataset ds = load_dataset(p.string());
  if (ds.spec.vocab_size != rc.model.vocab.content || ds.spec.d_in != rc.model.encoder.d_in) {
    throw CliError("config_mismatch", "dataset vocabulary/frame width does not match the model config");
  }
  return ds;
}

inline void cmd_train(const RunConfig& rc, const fs::path& data_dir, const fs::path& out_dir,
                      const std::string& init_from, bool force) {
  const Dataset train = load_split(data_dir, "train", rc);
  const Dataset eval = load_split(data_dir, "eval", rc);
  BestowModel model;
  if (init_from.empty()) {
    model = BestowModel::create(rc.model, rc.seed);
  } else {
    model = std::move(load_checkpoint(init_from).model);
    // the continuation may switch encoder runtime (e.g. bidi -> causal)
    model.set_encoder_runtime(rc.model.encoder.mode, rc.model.encoder.causal_window);
  }
  RunOutput out(out_dir, force);
  auto log = out.open("train_log.csv");
  log << "kind,step,value\n";
  const std::string ckpt = out.path("checkpoint.bin").string();
  TrainLoopHooks hooks;
  hooks.eval_data = &eval.examples;
  hooks.eval_every = rc.get("train.eval_every");
  hooks.log = [&](const TrainLogRow& r) {
    log << r.kind << ',' << r.step << ',' << format_fixed(r.value, 10) << '\n';
  };
  hooks.checkpoint = [&](const BestowModel& m) { save_checkpoint(m, ckpt); };
  try {
    train_loop(model, train.examples, rc.train, rc.seed, hooks);
  } catch (const NonFiniteLoss& e) {
    log.close();
    out.track("checkpoint.bin");
    out.write_manifest("train", rc, {e.what()});
    throw CliError("nonfinite_loss", std::string(e.what()) + "; last good checkpoint kept at " + ckpt);
  }
  log.close();
  out.track("checkpoint.bin");
  out.write_manifest("train", rc);
}

/// Streaming needs an incremental encoder; a bidi model streams by
/// re-encoding prefixes (same weights).
inline void prepare_for_streaming(BestowModel& m) {
  if (m.config().encoder.mode == EncoderMode::bidi) {
    m.set_encoder_runtime(EncoderMode::bidi_recompute, m.config().encoder.causal_window);
  }
}

inline WaitKConfig policy_for(const RunConfig& rc, const BestowModel& m, std::size_t K) {
  WaitKConfig c = rc.train.policy;
  c.P = m.config().encoder.P;
  c.K = K;
  c.validate();
  return c;
}

inline void cmd_eval(const RunConfig& rc, const std::string& checkpoint, const fs::path& data_dir,
                     const fs::path& out_dir, const std::string& mode, std::optional<std::size_t> K, bool traces,
                     bool force) {
  if (mode != "offline" && mode != "stream") throw usage_error("--mode must be offline or stream");
  if (mode == "stream" && !K) throw usage_error("--mode stream requires --k");
  if (checkpoint.empty()) throw usage_error("--checkpoint is required");
  BestowModel model = std::move(load_checkpoint(checkpoint).model);
  const Dataset eval = load_split(data_dir, "eval", rc);
  const bool force_len = rc.flag("eval.force_length");
  const auto max_len = rc.get("eval.max_len");
  RunOutput out(out_dir, force);
  auto csv = out.open("metrics.csv");
  csv << "mode,K,laal_ms,quality,n\n";
  if (mode == "offline") {
    const double q = offline_quality(model, eval.examples, force_len, max_len);
    csv << "offline,," << ',' << format_fixed(q) << ',' << eval.examples.size() << '\n';
  } else {
    prepare_for_streaming(model);
    const auto cfg = policy_for(rc, model, *K);
    double q = 0.0, lat = 0.0;
    std::size_t n_lat = 0;
    for (const auto& ex : eval.examples) {
      const auto r = stream_example(model, ex, cfg, force_len, max_len);
      q += r.accuracy;
      if (!r.result.tokens.empty()) {
        lat += r.laal_ms;
        ++n_lat;
      }
      if (traces) {
        auto f = out.open("traces/" + std::to_string(ex.index) + ".txt");
        write_trace(f, r.result.events);
      }
    }
    const double n = static_cast<double>(eval.examples.size());
    csv << "stream," << *K << ',' << format_fixed(n_lat ? lat / static_cast<double>(n_lat) : 0.0) << ','
        << format_fixed(q / n) << ',' << eval.examples.size() << '\n';
  }
  csv.close();
  out.write_manifest("eval", rc);
}

/// One streaming session on a single evaluation example: trace and tokens.
inline void cmd_stream(const RunConfig& rc, const std::string& checkpoint, const fs::path& data_dir,
                       const fs::path& out_dir, std::size_t K, std::size_t index, bool force) {
  if (checkpoint.empty()) throw usage_error("--checkpoint is required");
  BestowModel model = std::move(load_checkpoint(checkpoint).model);
  prepare_for_streaming(model);
  const Dataset eval = load_split(data_dir, "eval", rc);
  if (index >= eval.examples.size()) throw usage_error("--index beyond dataset size");
  const auto& ex = eval.examples[index];
  const auto r = stream_example(model, ex, policy_for(rc, model, K), rc.flag("eval.force_length"),
                                rc.get("eval.max_len"));
  RunOutput out(out_dir, force);
  {
    auto f = out.open("trace.txt");
    write_trace(f, r.result.events);
  }
  {
    auto f = out.open("metrics.csv");
    f << "mode,K,laal_ms,quality,n\n"
      << "stream," << K << ',' << format_fixed(r.laal_ms) << ',' << format_fixed(r.accuracy) << ",1\n";
  }
  out.write_manifest("stream", rc);
  std::cout << "hyp:";
  for (int t : r.result.tokens) std::cout << ' ' << t;
  std::cout << "\nref:";
  for (int t : ex.reference()) std::cout << ' ' << t;
  std::cout << '\n';
}

inline void cmd_sweep(const RunConfig& rc, const std::string& checkpoint, const fs::path& data_dir,
                      const fs::path& out_dir, bool force) {
  if (checkpoint.empty()) throw usage_error("--checkpoint is required");
  const auto ks = KeyValues::parse_size_list("sweep.ks", rc.kv.get_string("sweep.ks", ""));
  if (ks.empty()) throw usage_error("empty K list");
  BestowModel model = std::move(load_checkpoint(checkpoint).model);
  prepare_for_streaming(model);
  const Dataset eval = load_split(data_dir, "eval", rc);
  SweepOptions opt;
  opt.base = policy_for(rc, model, ks.front());
  opt.k_min = rc.train.k_min;
  opt.k_max = rc.train.k_max;
  opt.force_length = rc.flag("sweep.force_length");
  opt.max_len = rc.get("eval.max_len");
  const auto res = sweep_k(model, eval.examples, ks, opt);
  RunOutput out(out_dir, force);
  {
    auto f = out.open("tradeoff.csv");
    write_tradeoff_csv(f, res.points);
  }
  for (const auto& w : res.warnings) std::cerr << "warning: " << w << '\n';
  out.write_manifest("sweep", rc, res.warnings);
}

inline std::vector<std::pair<std::size_t, std::size_t>> parse_grid(const std::string& s) {
  std::vector<std::pair<std::size_t, std::size_t>> g;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto c = item.find(':');
    if (c == std::string::npos) throw usage_error("grid entries must be L_t:L_a, got '" + item + "'");
    try {
      g.emplace_back(std::stoul(item.substr(0, c)), std::stoul(item.substr(c + 1)));
    } catch (const std::exception&) {
      throw usage_error("bad grid entry '" + item + "'");
    }
  }
  return g;
}

inline void cmd_bench(const RunConfig& rc, const fs::path& out_dir, bool force) {
  const auto grid = parse_grid(rc.kv.get_string("bench.grid", ""));
  if (grid.empty()) throw usage_error("empty benchmark grid");
  BenchConfig bc;
  bc.model = rc.model;
  bc.repetitions = rc.get("bench.reps");
  bc.seed = rc.seed;
  const auto rs = run_bench(grid, bc);
  const auto [csv, summary] = report(rs);
  RunOutput out(out_dir, force);
  {
    auto f = out.open("bench.csv");
    f << csv;
  }
  {
    auto f = out.open("summary.txt");
    f << summary;
  }
  out.write_manifest("bench", rc);
  std::cout << summary;
}

}  // namespace bestow::cli

#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "bestow/cli.hpp"
#include "test_util.hpp"

using namespace bestow;
using namespace bestow::testing;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = 0;
  std::string err;
};

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("bestow_unit_" + name);
  fs::remove_all(p);
  return p;
}

CliRun run_cli(const std::string& args) {
  const auto err = fs::temp_directory_path() / "bestow_unit_stderr.txt";
  const std::string cmd = std::string(BESTOW_CLI_PATH) + " " + args + " > /dev/null 2> " + err.string();
  const int status = std::system(cmd.c_str());
  CliRun r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream f(err);
  std::stringstream ss;
  ss << f.rdbuf();
  r.err = ss.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Synth, OracleTargets) {
  SynthTaskSpec s;
  s.vocab_size = 5;
  s.kind = TaskKind::copy;
  EXPECT_EQ(oracle_target(s, {3, 1, 2}), (std::vector<int>{3, 1, 2}));
  s.kind = TaskKind::shift_vocab;
  EXPECT_EQ(oracle_target(s, {4}), (std::vector<int>{0}));
  s.kind = TaskKind::local_reorder;
  EXPECT_EQ(oracle_target(s, {0, 1, 2, 3}), (std::vector<int>{1, 0, 3, 2}));
  EXPECT_EQ(oracle_target(s, {0, 1, 2}), (std::vector<int>{1, 0, 2}));
  Rng r(1);
  for (int i = 0; i < 50; ++i) {
    std::vector<int> v(static_cast<std::size_t>(r.uniform_int(1, 11)));
    for (int& t : v) t = static_cast<int>(r.uniform_int(0, 4));
    EXPECT_EQ(oracle_target(s, oracle_target(s, v)), v);
  }
}

TEST(Synth, NoiselessCopyRendersExactEmbeddings) {
  SynthTaskSpec s;
  s.noise_std = 0.0;
  s.U = 1;
  const auto data = generate(s, 3);
  const Tensor table = token_embedding_table(s);
  for (const auto& ex : data) {
    ASSERT_EQ(ex.utterance.length(), ex.source.size());
    for (std::size_t i = 0; i < ex.source.size(); ++i) {
      for (std::size_t c = 0; c < s.d_in; ++c) {
        EXPECT_EQ(ex.utterance.frames.at(i, c), table.at(static_cast<std::size_t>(ex.source[i]), c));
      }
    }
    EXPECT_EQ(ex.reference(), ex.source);
  }
}

TEST(Synth, NearestEmbeddingInvertsRendering) {
  SynthTaskSpec s;
  s.noise_std = 0.0;
  for (const auto& ex : generate(s, 20)) {
    EXPECT_EQ(nearest_embedding_decode(token_embedding_table(s), ex.utterance.frames, s.U), ex.source);
  }
}

// Copy task: once a schedule exposes the frames of source token i, that
// token can be read back; this bounds the K at which streaming can match
// offline quality.
TEST(Synth, WaitKInformationBound) {
  SynthTaskSpec s;
  s.noise_std = 0.0;
  const WaitKConfig cfg{2, 1, 8};
  const Tensor table = token_embedding_table(s);
  for (const auto& ex : generate(s, 10)) {
    const std::size_t t_enc = encoder_steps(ex.utterance.length(), cfg.P);
    for (std::size_t i = 1; i <= ex.source.size(); ++i) {
      const std::size_t frames = std::min(ex.utterance.length(), visible_steps(i, cfg, t_enc) * cfg.P);
      const std::size_t covered = frames / s.U;
      const auto got = nearest_embedding_decode(table, slice_rows(ex.utterance.frames, 0, covered * s.U), s.U);
      EXPECT_EQ(got, std::vector<int>(ex.source.begin(), ex.source.begin() + static_cast<std::ptrdiff_t>(covered)));
      // with U=16, P=8, L=1 the i-th token is covered once K >= i + 1
      EXPECT_EQ(covered >= i, cfg.K >= i + 1 || frames == ex.utterance.length());
    }
  }
}

TEST(Synth, DeterministicAndValidated) {
  SynthTaskSpec s;
  s.seed = 9;
  std::ostringstream a, b;
  write_dataset(a, s, generate(s, 5));
  write_dataset(b, s, generate(s, 5));
  EXPECT_EQ(a.str(), b.str());
  // example i does not depend on how many were drawn
  const auto one = generate(s, 1, 3);
  EXPECT_EQ(one[0].source, generate(s, 5)[3].source);
  SynthTaskSpec bad = s;
  bad.U = 0;
  EXPECT_THROW(generate(bad, 1), std::invalid_argument);
  bad = s;
  bad.vocab_size = 3;
  EXPECT_THROW(generate(bad, 1), std::invalid_argument);
  EXPECT_THROW(generate(s, 0), std::invalid_argument);
  for (const auto& ex : generate(s, 5)) {
    EXPECT_EQ(ex.utterance.length(), s.U * ex.source.size());
    for (double v : ex.utterance.frames.data()) EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(Synth, DatasetFileRoundTrip) {
  SynthTaskSpec s;
  s.kind = TaskKind::local_reorder;
  s.seed = 4;
  const auto data = generate(s, 7, 100);
  std::stringstream ss;
  write_dataset(ss, s, data);
  const Dataset back = read_dataset(ss);
  ASSERT_EQ(back.examples.size(), 7u);
  for (std::size_t i = 0; i < 7; ++i) {
    EXPECT_EQ(back.examples[i].index, data[i].index);
    EXPECT_EQ(back.examples[i].prompt.full(), data[i].prompt.full());
    EXPECT_EQ(max_abs_diff(back.examples[i].utterance.frames, data[i].utterance.frames), 0.0);
  }
  std::stringstream tampered("task.kind=copy\n---\n0 1 | 1 2 | 2 1\n");
  EXPECT_THROW(read_dataset(tampered), std::runtime_error);
}

TEST(Config, ParseAndRanges) {
  const auto kv = KeyValues::parse("# c\npolicy.K = 6\nname=x # trailing\n");
  EXPECT_EQ(kv.get<std::size_t>("policy.K", 0), 6u);
  EXPECT_EQ(kv.get_string("name", ""), "x");
  EXPECT_THROW(KeyValues::parse("novalue\n"), ConfigError);
  EXPECT_THROW(kv.get<std::size_t>("name", 0), ConfigError);
  EXPECT_EQ(KeyValues::parse_size_list("k", "3..5,9"), (std::vector<std::size_t>{3, 4, 5, 9}));
}

TEST(Config, DefaultHyperparameters) {
  const auto rc = cli::RunConfig::resolve({}, {});
  EXPECT_EQ(rc.train.adam.lr, 1e-4);
  EXPECT_EQ(rc.train.adam.weight_decay, 1e-3);
  EXPECT_EQ(rc.train.clip, 1.0);
  EXPECT_EQ(rc.train.policy.K, 10u);
  EXPECT_EQ(rc.train.policy.L, 4u);
  EXPECT_EQ(rc.train.policy.P, 8u);
  EXPECT_EQ(rc.train.k_min, 3u);
  EXPECT_EQ(rc.train.k_max, 12u);
  EXPECT_EQ(rc.model.bridge.X, 2u);
  EXPECT_EQ(rc.task.U, 16u);
}

TEST(Config, FlagBeatsFileBeatsDefault) {
  const auto file = KeyValues::parse("policy.K=7\ntrain.steps=50\n");
  KeyValues flags;
  flags.set("policy.K", std::size_t{5});
  const auto rc = cli::RunConfig::resolve(file, flags);
  EXPECT_EQ(rc.train.policy.K, 5u);   // flag
  EXPECT_EQ(rc.train.steps, 50u);     // file
  EXPECT_EQ(rc.train.batch, 8u);      // default
  EXPECT_THROW(cli::RunConfig::resolve(KeyValues::parse("no.such=1"), {}), ConfigError);
}

TEST(Config, ShippedFilesResolve) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(fs::path(BESTOW_SOURCE_DIR) / "configs")) {
    EXPECT_NO_THROW(cli::RunConfig::resolve(KeyValues::load(e.path().string()), {})) << e.path();
    ++n;
  }
  EXPECT_GE(n, 3u);
  // the defaults file restates the built-in defaults exactly
  const auto from_file = cli::RunConfig::resolve(KeyValues::load(BESTOW_SOURCE_DIR "/configs/default.conf"), {});
  EXPECT_EQ(from_file.kv.entries(), cli::RunConfig::resolve({}, {}).kv.entries());
}

TEST(Cli, ThreeWayOverrideThroughBinary) {
  const auto dir = scratch("precedence");
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "run.cfg");
    f << "data.n_train=3\ndata.n_eval=2\nseed=4\n";
  }
  ASSERT_EQ(run_cli("gen --config " + (dir / "run.cfg").string() + " --n 5 --out " + (dir / "out").string()).code, 0);
  const auto m = nlohmann::json::parse(slurp(dir / "out" / "manifest.json"));
  EXPECT_EQ(m["config"]["data.n_train"], "5");  // flag
  EXPECT_EQ(m["config"]["seed"], "4");           // file
  EXPECT_EQ(m["config"]["task.U"], "16");        // default
  EXPECT_TRUE(cli::verify_manifest(dir / "out").empty());
}

TEST(Cli, UsageErrorsAreOneLine) {
  const auto dir = scratch("usage");
  for (const std::string& args : std::vector<std::string>{"gen --n 0 --out " + dir.string(), "frobnicate", "gen"}) {
    const CliRun r = run_cli(args);
    EXPECT_EQ(r.code, 2) << args;
    EXPECT_EQ(r.err.rfind("error: ", 0), 0u) << r.err;
    EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1) << r.err;
  }
}

TEST(Cli, RefusesNonEmptyOutputWithoutForce) {
  const auto dir = scratch("force");
  ASSERT_EQ(run_cli("gen --set data.n_train=2 --set data.n_eval=2 --out " + dir.string()).code, 0);
  const CliRun again = run_cli("gen --set data.n_train=2 --set data.n_eval=2 --out " + dir.string());
  EXPECT_NE(again.code, 0);
  EXPECT_NE(again.err.find("error: output_exists:"), std::string::npos);
  EXPECT_EQ(run_cli("gen --set data.n_train=2 --set data.n_eval=2 --force --out " + dir.string()).code, 0);
}

TEST(Cli, SeedChangesDatasetDigest) {
  const auto a = scratch("seed_a"), b = scratch("seed_b");
  ASSERT_EQ(run_cli("gen --n 3 --set data.n_eval=2 --seed 1 --out " + a.string()).code, 0);
  ASSERT_EQ(run_cli("gen --n 3 --set data.n_eval=2 --seed 2 --out " + b.string()).code, 0);
  EXPECT_NE(cli::sha256_file(a / "train.txt"), cli::sha256_file(b / "train.txt"));
}

TEST(Cli, DefaultDatasetGoldenDigest) {
  const auto dir = scratch("golden");
  ASSERT_EQ(run_cli("gen --out " + dir.string()).code, 0);
  EXPECT_EQ(cli::sha256_file(dir / "train.txt"),
            "3a7a48ad0df9fe40a68dd4f60206a2f7b0a06a846e462df93ef72b95900f7897");
  EXPECT_EQ(cli::sha256_file(dir / "eval.txt"),
            "7ed32fc7209851be3a68c2b29a144d423a39086ab4be451d10f08417696e4ef7");
}

TEST(Cli, TrainEvalSweepPipeline) {
  const auto dir = scratch("pipeline");
  const std::string small = " --set model.llm_layers=1 --set model.d_ff=64 --set encoder.mode=causal";
  ASSERT_EQ(run_cli("gen --n 8 --set data.n_eval=3 --out " + (dir / "data").string()).code, 0);
  ASSERT_EQ(run_cli("train --data " + (dir / "data").string() + " --set train.steps=3 --set train.batch=2" + small +
                " --out " + (dir / "offline").string()).code, 0);
  const auto ckpt = (dir / "offline" / "checkpoint.bin").string();
  // continuation with no streaming masks and no steps: loss is unchanged
  ASSERT_EQ(run_cli("train --data " + (dir / "data").string() + " --init-from " + ckpt +
                " --set train.steps=0 --set policy.stream_fraction=0" + small + " --out " + (dir / "cont").string()).code, 0);
  auto last_eval = [](const std::string& csv, bool first) {
    std::istringstream in(csv);
    std::string line, found;
    while (std::getline(in, line)) {
      if (line.rfind("eval_loss,", 0) == 0) {
        found = line.substr(line.rfind(',') + 1);
        if (first) break;
      }
    }
    return found;
  };
  EXPECT_EQ(last_eval(slurp(dir / "offline" / "train_log.csv"), false),
            last_eval(slurp(dir / "cont" / "train_log.csv"), true));

  const CliRun no_k = run_cli("eval --checkpoint " + ckpt + " --data " + (dir / "data").string() + " --mode stream --out " +
                       (dir / "e0").string());
  EXPECT_EQ(no_k.code, 2);
  ASSERT_EQ(run_cli("eval --checkpoint " + ckpt + " --data " + (dir / "data").string() + " --mode stream --k 3 --traces --out " +
                (dir / "e1").string()).code, 0);
  const auto metrics = slurp(dir / "e1" / "metrics.csv");
  EXPECT_EQ(metrics.substr(0, metrics.find('\n')), "mode,K,laal_ms,quality,n");
  EXPECT_TRUE(fs::exists(dir / "e1" / "traces"));
  EXPECT_TRUE(cli::verify_manifest(dir / "e1").empty());

  ASSERT_EQ(run_cli("sweep --checkpoint " + ckpt + " --data " + (dir / "data").string() + " --ks 3..12 --out " +
                (dir / "s").string()).code, 0);
  const auto sweep = slurp(dir / "s" / "tradeoff.csv");
  EXPECT_EQ(std::count(sweep.begin(), sweep.end(), '\n'), 11);
  EXPECT_EQ(run_cli("sweep --checkpoint " + ckpt + " --data " + (dir / "data").string() + " --ks '' --out " +
                (dir / "s2").string()).code, 2);
}

TEST(Cli, ManifestDetectsTampering) {
  const auto dir = scratch("tamper");
  ASSERT_EQ(run_cli("gen --n 2 --set data.n_eval=2 --out " + dir.string()).code, 0);
  EXPECT_TRUE(cli::verify_manifest(dir).empty());
  {
    std::ofstream f(dir / "eval.txt", std::ios::app);
    f << "\n";
  }
  EXPECT_EQ(cli::verify_manifest(dir), (std::vector<std::string>{"eval.txt"}));
}

// Command-line harness: gen, train, eval, stream, sweep, bench.
//
// Settings resolve as built-in default < --config file < --set key=value <
// dedicated flags (--seed, --k, ...).

#include <iostream>

#include "CLI11.hpp"
#include "bestow/cli.hpp"

using namespace bestow;
using namespace bestow::cli;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
};

void add_common(CLI::App* sc, Common& c, bool needs_out = true) {
  sc->add_option("--config", c.config, "key=value config file");
  sc->add_option("--set", c.sets, "override one key (key=value), repeatable");
  sc->add_option("--seed", c.seed, "run seed");
  auto* o = sc->add_option("--out", c.out, "output directory");
  if (needs_out) o->required();
  sc->add_flag("--force", c.force, "allow writing into a non-empty output directory");
}

RunConfig resolve(const Common& c, KeyValues flags) {
  KeyValues file = c.config.empty() ? KeyValues() : KeyValues::load(c.config);
  KeyValues sets;
  for (const auto& s : c.sets) sets.set_assignment(s);
  sets.merge(flags);
  if (c.seed) sets.set("seed", *c.seed);
  return RunConfig::resolve(file, sets);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Speech-to-LLM cross-attention bridge with wait-k streaming"};
  app.require_subcommand(1);

  Common gen_c, train_c, eval_c, stream_c, sweep_c, bench_c;
  std::optional<std::size_t> n;
  std::string data = ".", init_from, checkpoint, mode = "offline", ks, grid;
  std::optional<std::size_t> k, reps;
  std::size_t index = 0;
  bool traces = false;

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  add_common(gen, gen_c);
  gen->add_option("--n", n, "number of training examples");

  auto* train = app.add_subcommand("train", "train (or continue training) a model");
  add_common(train, train_c);
  train->add_option("--data", data, "dataset directory from gen");
  train->add_option("--init-from", init_from, "checkpoint to continue from");

  auto* eval = app.add_subcommand("eval", "offline or streaming evaluation");
  add_common(eval, eval_c);
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--data", data);
  eval->add_option("--mode", mode, "offline | stream");
  eval->add_option("--k", k, "wait-k lag (stream mode)");
  eval->add_flag("--traces", traces, "write one READ/WRITE trace per example");

  auto* stream = app.add_subcommand("stream", "stream one evaluation example and print its trace");
  add_common(stream, stream_c);
  stream->add_option("--checkpoint", checkpoint)->required();
  stream->add_option("--data", data);
  stream->add_option("--k", k)->required();
  stream->add_option("--index", index, "example index within eval split");

  auto* sweep = app.add_subcommand("sweep", "latency-quality sweep over K");
  add_common(sweep, sweep_c);
  sweep->add_option("--checkpoint", checkpoint)->required();
  sweep->add_option("--data", data);
  sweep->add_option("--ks", ks, "K list, e.g. 3..12 or 3,6,9");

  auto* bench = app.add_subcommand("bench", "prepend vs cross-attention fusion benchmark");
  add_common(bench, bench_c);
  bench->add_option("--grid", grid, "L_t:L_a pairs, comma separated");
  bench->add_option("--reps", reps, "timed repetitions per point");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    for (char& ch : msg) if (ch == '\n') ch = ' ';
    std::cerr << "error: usage: " << msg << '\n';
    return 2;
  }

  try {
    if (gen->parsed()) {
      KeyValues f;
      if (n) {
        if (*n == 0) throw usage_error("--n must be >= 1");
        f.set("data.n_train", *n);
      }
      cmd_gen(resolve(gen_c, f), gen_c.out, gen_c.force);
    } else if (train->parsed()) {
      cmd_train(resolve(train_c, {}), data, train_c.out, init_from, train_c.force);
    } else if (eval->parsed()) {
      KeyValues f;
      if (k) f.set("policy.K", *k);
      cmd_eval(resolve(eval_c, f), checkpoint, data, eval_c.out, mode, k, traces, eval_c.force);
    } else if (stream->parsed()) {
      KeyValues f;
      f.set("policy.K", *k);
      cmd_stream(resolve(stream_c, f), checkpoint, data, stream_c.out, *k, index, stream_c.force);
    } else if (sweep->parsed()) {
      KeyValues f;
      if (sweep->count("--ks")) {
        if (ks.empty()) throw usage_error("--ks is empty");
        f.set("sweep.ks", ks);
      }
      cmd_sweep(resolve(sweep_c, f), checkpoint, data, sweep_c.out, sweep_c.force);
    } else if (bench->parsed()) {
      KeyValues f;
      if (!grid.empty()) f.set("bench.grid", grid);
      if (reps) f.set("bench.reps", *reps);
      cmd_bench(resolve(bench_c, f), bench_c.out, bench_c.force);
    }
  } catch (const CliError& e) {
    std::cerr << "error: " << e.code() << ": " << e.what() << '\n';
    return e.exit_code();
  } catch (const ConfigError& e) {
    std::cerr << "error: config: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: runtime: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

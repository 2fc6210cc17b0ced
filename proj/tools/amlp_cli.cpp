// amlp: benchmark, train and verify front end.

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "amlp/bench.hpp"
#include "amlp/narmodel.hpp"
#include "amlp/verify.hpp"

namespace {

using namespace amlp;

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<Index> parse_indices(const std::string& s, const char* what) {
  std::vector<Index> out;
  for (const std::string& item : split_list(s)) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(static_cast<Index>(v));
    } catch (const std::exception&) {
      throw ConfigError(std::string("bad ") + what + " entry '" + item + "'");
    }
  }
  return out;
}

void echo_config(const CLI::App& sub) {
  std::cerr << "# effective " << sub.get_name() << " config\n" << sub.config_to_str(true, false);
}

struct BenchArgs {
  std::string lengths = "256,512,1024,2048,4096,8192";
  std::string archs = "ar-causal-softmax,nar-softmax,nar-amlp";
  std::string sigma1 = "relu";
  std::string out;
  std::string sweep;
  Index sweep_n = 4096;
  Index sweep_steps = 10000;
  double budget_mb = 2048;
  BenchConfig cfg;
};

int run_bench(const CLI::App& sub, BenchArgs& a) {
  BenchConfig& cfg = a.cfg;
  cfg.lengths = parse_indices(a.lengths, "length");
  cfg.archs.clear();
  for (const std::string& s : split_list(a.archs)) cfg.archs.push_back(parse_arch(s));
  cfg.sigma1 = parse_nonlinearity(a.sigma1);
  cfg.memory_budget_bytes = static_cast<std::uint64_t>(a.budget_mb * 1024.0 * 1024.0);
  echo_config(sub);
  std::cerr << "seed: " << cfg.seed << '\n';
  auto progress = [](const std::string& s) { std::cerr << s << '\n'; };

  std::ofstream file;
  if (!a.out.empty()) {
    file.open(a.out, std::ios::trunc);
    if (!file) throw IoError("cannot open output file: " + a.out);
  }
  std::ostream& os = a.out.empty() ? std::cout : file;

  if (!a.sweep.empty()) {
    SweepConfig sc;
    sc.cs = parse_indices(a.sweep, "sweep");
    sc.n = a.sweep_n;
    sc.batch = cfg.batch;
    sc.runs = cfg.runs;
    sc.warmup = cfg.warmup;
    sc.train_steps = a.sweep_steps;
    sc.model.seed = cfg.seed;
    const auto rows = sweep_inner_dimension(sc, progress);
    write_sweep_csv(rows, os);
  } else {
    cfg.validate();
    const BenchReport report = run_and_report(cfg, progress);
    write_csv(report.records, os);
    std::cerr << report.summary;
  }
  if (file.is_open()) {
    file.close();
    if (!file) throw IoError("failed writing output file: " + a.out);
  }
  return 0;
}

struct TrainArgs {
  std::string task = "reverse";
  std::string variant = "cov";
  std::string sigma1 = "softmax";
  std::string ckpt = "amlp_model.ckpt";
  Index steps = 10000;
  Index batch_size = 32;
  Index eval_samples = 512;
  Index log_every = 100;
  std::uint64_t eval_seed = 20240517;
  NarConfig cfg;
};

int run_train(const CLI::App& sub, TrainArgs& a) {
  NarConfig& cfg = a.cfg;
  cfg.variant = parse_mechanism(a.variant);
  cfg.sigma1 = parse_nonlinearity(a.sigma1);
  cfg.source_len = cfg.seq_len;
  cfg.validate();
  echo_config(sub);
  std::cerr << "seed: " << cfg.seed << '\n';

  const SyntheticTask task{parse_task(a.task), cfg.vocab, cfg.seq_len, a.eval_seed};
  NarModel model = init_model(cfg);
  std::printf("parameters %zu\n", model.parameter_count());
  if (a.steps > 0) {
    TrainOptions opts;
    opts.steps = a.steps;
    opts.batch_size = a.batch_size;
    opts.log_every = a.log_every;
    opts.on_log = [](Index step, double loss) {
      std::printf("step %ld loss %.6f\n", static_cast<long>(step), loss);
      std::fflush(stdout);
    };
    train(model, task, opts);
  }
  const double acc = evaluate(model, task, a.eval_samples);
  std::printf("%s accuracy %.6f\n", a.steps > 0 ? "final" : "initial", acc);
  save_checkpoint(model, a.ckpt);
  std::cerr << "checkpoint written to " << a.ckpt << '\n';
  return 0;
}

struct VerifyArgs {
  bool json = false;
  bool break_gradients = false;
  std::uint64_t seed = 1;
};

int run_verify(const CLI::App& sub, const VerifyArgs& a) {
  echo_config(sub);
  std::cerr << "seed: " << a.seed << '\n';
  const auto results = run_verify_suite(VerifyOptions{a.seed, a.break_gradients});
  bool ok = true;
  for (const PropertyResult& r : results) {
    std::cout << (a.json ? to_json_line(r) : to_text_line(r)) << '\n';
    ok = ok && r.passed;
  }
  if (!ok) std::cerr << "verify: one or more properties failed\n";
  return ok ? 0 : 1;
}

void add_config_option(CLI::App& sub, std::string& path) {
  sub.add_option("--config", path, "key=value file (one per line, # comments); flags override it");
}

// CLI11 only reads config files for the top-level app, so the subcommand's
// file is spliced in as --key=value flags ahead of the real arguments.
std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  std::string path;
  for (std::size_t i = 2; i < args.size() && path.empty(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  std::vector<std::string> out(args.begin(), args.begin() + 2);
  for (const CLI::ConfigItem& item : CLI::ConfigBase().from_file(path)) {
    if (!item.parents.empty()) throw CLI::ConfigError("sections are not supported: " + item.fullname());
    std::string value;
    for (const std::string& v : item.inputs) value += (value.empty() ? "" : ",") + v;
    out.push_back("--" + item.name + "=" + value);
  }
  out.insert(out.end(), args.begin() + 2, args.end());
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AMLP attention: benchmarks, toy NAR training and self-verification"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  std::string config_path;

  BenchArgs bench;
  CLI::App* b = app.add_subcommand("bench", "time AR/NAR attention kernels and write CSV");
  add_config_option(*b, config_path);
  b->add_option("--lengths", bench.lengths, "comma-separated sequence lengths, strictly increasing");
  b->add_option("--runs", bench.cfg.runs, "timed runs per cell")->check(CLI::Range(Index(4), Index(1) << 40));
  b->add_option("--warmup", bench.cfg.warmup, "untimed runs per cell")->check(CLI::NonNegativeNumber);
  b->add_option("--batch", bench.cfg.batch, "batch size")->check(CLI::PositiveNumber);
  b->add_option("--d", bench.cfg.d_model, "model width")->check(CLI::PositiveNumber);
  b->add_option("--heads", bench.cfg.heads, "attention heads")->check(CLI::PositiveNumber);
  b->add_option("--c", bench.cfg.c, "AMLP inner dimension per head")->check(CLI::PositiveNumber);
  b->add_option("--sigma1", bench.sigma1, "AMLP hidden nonlinearity (softmax|relu|identity)");
  b->add_option("--arch", bench.archs, "comma-separated ar-causal-softmax,nar-softmax,nar-amlp");
  b->add_option("--out", bench.out, "CSV output path (default stdout)");
  b->add_option("--seed", bench.cfg.seed, "input seed");
  b->add_option("--memory-budget-mb", bench.budget_mb, "cells modeled above this are skipped as infeasible")
      ->check(CLI::PositiveNumber);
  b->add_option("--sweep", bench.sweep, "comma-separated inner dimensions; runs the c sweep instead of the grid");
  b->add_option("--sweep-n", bench.sweep_n, "timing length for the c sweep")->check(CLI::PositiveNumber);
  b->add_option("--sweep-steps", bench.sweep_steps, "training steps per c in the sweep")->check(CLI::NonNegativeNumber);

  TrainArgs tr;
  CLI::App* t = app.add_subcommand("train", "train the toy NAR model on a synthetic task");
  add_config_option(*t, config_path);
  t->add_option("--task", tr.task, "copy|reverse");
  t->add_option("--variant", tr.variant, "cov|pquery|softmax");
  t->add_option("--steps", tr.steps, "SGD steps")->check(CLI::NonNegativeNumber);
  t->add_option("--ckpt", tr.ckpt, "checkpoint output path");
  t->add_option("--lr", tr.cfg.learning_rate, "learning rate")->check(CLI::NonNegativeNumber);
  t->add_option("--batch-size", tr.batch_size, "training batch size")->check(CLI::PositiveNumber);
  t->add_option("--vocab", tr.cfg.vocab, "vocabulary size")->check(CLI::PositiveNumber);
  t->add_option("--length", tr.cfg.seq_len, "source and target length")->check(CLI::PositiveNumber);
  t->add_option("--d", tr.cfg.d_model, "model width")->check(CLI::PositiveNumber);
  t->add_option("--heads", tr.cfg.heads, "attention heads")->check(CLI::PositiveNumber);
  t->add_option("--c", tr.cfg.inner, "AMLP inner dimension per head")->check(CLI::PositiveNumber);
  t->add_option("--mlp-hidden", tr.cfg.mlp_hidden, "position-wise MLP width")->check(CLI::PositiveNumber);
  t->add_option("--sigma1", tr.sigma1, "AMLP hidden nonlinearity (softmax|relu|identity)");
  t->add_option("--beta", tr.cfg.beta, "pseudo-query moving-average factor")->check(CLI::Range(0.0, 1.0));
  t->add_option("--seed", tr.cfg.seed, "initialization and training-stream seed");
  t->add_option("--eval-seed", tr.eval_seed, "held-out evaluation stream seed");
  t->add_option("--eval-samples", tr.eval_samples, "held-out sequences")->check(CLI::PositiveNumber);
  t->add_option("--log-every", tr.log_every, "loss print interval")->check(CLI::PositiveNumber);

  VerifyArgs ver;
  CLI::App* v = app.add_subcommand("verify", "run the invariant suite and print PASS/FAIL per property");
  add_config_option(*v, config_path);
  v->add_flag("--json", ver.json, "one JSON object per property");
  v->add_flag("--break-gradients", ver.break_gradients, "negative control: perturb the softmax backward rule");
  v->add_option("--seed", ver.seed, "suite seed");

  try {
    std::vector<std::string> args = expand_config(argc, argv);
    std::vector<char*> ptrs;
    for (std::string& a : args) ptrs.push_back(a.data());
    app.parse(static_cast<int>(ptrs.size()), ptrs.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() != 0) std::cerr << app.help();
    return app.exit(e, std::cerr, std::cerr);
  }

  try {
    if (b->parsed()) return run_bench(*b, bench);
    if (t->parsed()) return run_train(*t, tr);
    return run_verify(*v, ver);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

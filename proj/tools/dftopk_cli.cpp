// Copyright 2026 The DFTopK Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line harness: benchmarks, property suite, cascade training, tau sweep,
// dataset export / evaluation and a worked-example inspector.
//
// Exit codes: 0 success, 1 usage / validation / runtime error, 2 property
// suite failure.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dftopk/bench.hpp"
#include "dftopk/cascade/dataset.hpp"
#include "dftopk/cascade/model.hpp"
#include "dftopk/cascade/trainer.hpp"
#include "dftopk/gradcheck.hpp"
#include "dftopk/run_config.hpp"
#include "dftopk/selection.hpp"
#include "dftopk/soft_permutation.hpp"
#include "dftopk/topk_operator.hpp"

namespace {

using namespace dftopk;
namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitSuiteFailure = 2;

/// Caps a requested thread count by DFTOPK_THREADS when it is set.
std::size_t capped_threads(std::size_t requested) {
  const char* env = std::getenv("DFTOPK_THREADS");
  if (env == nullptr || *env == '\0') return requested;
  char* end = nullptr;
  const unsigned long long cap = std::strtoull(env, &end, 10);
  if (end == env || *end != '\0' || cap < 1) {
    throw ValidationError("DFTOPK_THREADS must be a positive integer, got '" + std::string(env) +
                          "'");
  }
  return std::min<std::size_t>(requested, cap);
}

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write '" + path.string() + "'");
  os << content;
  if (!os) throw std::runtime_error("write failed for '" + path.string() + "'");
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  RunConfig c = path.empty() ? RunConfig{} : load_run_config(path);
  for (const auto& o : overrides) apply_override(c, o);
  c.train.threads = capped_threads(c.train.threads);
  validate(c);
  return c;
}

struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;

  void attach(CLI::App* cmd, bool required) {
    auto* opt = cmd->add_option("--config", path, "JSON config file (flat key/value object)");
    if (required) opt->required();
    cmd->add_option("--set", overrides, "Override one config key: key=value (repeatable)");
  }
};

// --- bench -----------------------------------------------------------------

struct BenchArgs {
  ConfigArgs config;
  std::vector<std::size_t> sizes;
  std::vector<std::string> ops;
  std::size_t reps = 0, warmup = 0, batch = 0;
  bool reps_set = false;
  std::string out;
};

int run_bench_cmd(const BenchArgs& a, CLI::App* cmd) {
  RunConfig c = load_config(a.config.path, a.config.overrides);
  if (!a.sizes.empty()) c.bench_sizes = a.sizes;
  if (!a.ops.empty()) c.bench_ops = a.ops;
  if (cmd->count("--reps")) c.bench_reps = a.reps;
  if (cmd->count("--warmup")) c.bench_warmup = a.warmup;
  if (cmd->count("--batch")) c.bench_batch = a.batch;
  validate(c);

  bench::BenchOptions opt;
  opt.sizes = c.bench_sizes;
  opt.ops = c.bench_ops;
  opt.reps = c.bench_reps;
  opt.warmup = c.bench_warmup;
  opt.batch = c.bench_batch;
  opt.seed = c.train.seed;
  const auto rows = bench::run_bench(opt);

  std::ostringstream os;
  os << bench::kBenchCsvHeader << '\n';
  for (const auto& r : rows) os << bench::bench_csv_row(r) << '\n';
  std::ostringstream slopes;
  slopes << bench::kSlopeCsvHeader << '\n';
  for (const auto& op : c.bench_ops) slopes << bench::slope_csv_row(rows, op) << '\n';
  std::cout << os.str() << '\n' << slopes.str();
  if (!a.out.empty()) {
    write_file(a.out, os.str());
    fs::path sp(a.out);
    sp.replace_extension(".slopes.csv");
    write_file(sp, slopes.str());
  }
  return kExitOk;
}

// --- gradcheck -------------------------------------------------------------

struct GradcheckArgs {
  std::uint64_t seed = 0;
  std::size_t instances = 1000;
  std::size_t threads = 1;
  bool corrupt = false;
  std::string out_dir = ".";
};

int run_gradcheck_cmd(const GradcheckArgs& a) {
  if (a.instances < 1) throw CLI::ValidationError("--instances", "must be >= 1");
  PropertySuiteOptions opt;
  opt.seed = a.seed;
  opt.instances = a.instances;
  opt.threads = capped_threads(a.threads);
  opt.inject_sign_flip = a.corrupt;
  const auto reports = run_property_suite(opt);
  const bool ok = all_passed(reports);
  std::string text = reports_to_text(reports);
  text += ok ? "RESULT PASS\n" : "RESULT FAIL\n";
  std::cout << text;
  write_file(fs::path(a.out_dir) / "gradcheck_report.txt", text);
  write_file(fs::path(a.out_dir) / "gradcheck_report.csv", reports_to_csv(reports));
  return ok ? kExitOk : kExitSuiteFailure;
}

// --- train -----------------------------------------------------------------

struct TrainArgs {
  ConfigArgs config;
  std::string out_dir = "out";
};

int run_train_cmd(const TrainArgs& a) {
  const RunConfig c = load_config(a.config.path, a.config.overrides);
  std::ostringstream csv;
  csv << cascade::kMetricsCsvHeader << '\n';
  std::cout << cascade::kMetricsCsvHeader << std::endl;
  for (auto kind : c.loss_kinds) {
    cascade::TrainConfig tc = c.train;
    tc.loss_kind = kind;
    const auto result = cascade::streaming_evaluate(tc, [&](const cascade::DayMetrics& d) {
      const auto row = cascade::metrics_csv_row(d);
      csv << row << '\n';
      std::cout << row << std::endl;
    });
    std::ostringstream model;
    cascade::save_model(model, result.model);
    write_file(fs::path(a.out_dir) / ("model_" + std::string(cascade::to_string(kind)) + ".bin"),
               model.str());
  }
  write_file(fs::path(a.out_dir) / "metrics.csv", csv.str());
  write_file(fs::path(a.out_dir) / "config.json", to_json(c).dump(2) + "\n");
  return kExitOk;
}

// --- sweep-tau -------------------------------------------------------------

inline constexpr const char* kSweepCsvHeader = "tau,joint_recall,sum_deviation_mean";

struct SweepArgs {
  ConfigArgs config;
  std::vector<double> taus;
  std::string out;
};

int run_sweep_cmd(const SweepArgs& a) {
  RunConfig c = load_config(a.config.path, a.config.overrides);
  if (!a.taus.empty()) c.sweep_taus = a.taus;
  validate(c);
  std::ostringstream csv;
  csv << kSweepCsvHeader << '\n';
  std::cout << kSweepCsvHeader << std::endl;
  for (double tau : c.sweep_taus) {
    cascade::TrainConfig tc = c.train;
    tc.loss_kind = cascade::LossKind::kDFTopK;
    tc.tau = tau;
    tc.days = c.sweep_days;
    tc.pvs_per_day = c.sweep_pvs_per_day;
    const auto result = cascade::streaming_evaluate(tc);
    double dev = 0.0;
    for (const auto& d : result.days) dev += d.sum_deviation;
    dev /= static_cast<double>(result.days.size());
    char row[128];
    std::snprintf(row, sizeof row, "%g,%.6f,%.6e", tau, result.days.back().joint_recall, dev);
    csv << row << '\n';
    std::cout << row << std::endl;
  }
  if (!a.out.empty()) write_file(a.out, csv.str());
  return kExitOk;
}

// --- gen-data / evaluate ---------------------------------------------------

struct GenDataArgs {
  ConfigArgs config;
  std::size_t day = 0;
  std::string out;
};

int run_gen_data_cmd(const GenDataArgs& a) {
  const RunConfig c = load_config(a.config.path, a.config.overrides);
  const cascade::DatasetGenerator gen(c.train);
  const auto pvs = gen.generate_day(a.day);
  std::ostringstream os;
  cascade::write_jsonl(os, pvs);
  if (a.out.empty() || a.out == "-") {
    std::cout << os.str();
  } else {
    write_file(a.out, os.str());
  }
  return kExitOk;
}

struct EvaluateArgs {
  ConfigArgs config;
  std::string model;
  std::string data;
};

int run_evaluate_cmd(const EvaluateArgs& a) {
  RunConfig c = load_config(a.config.path, a.config.overrides);
  std::ifstream ms(a.model, std::ios::binary);
  if (!ms) throw ValidationError("cannot open model file '" + a.model + "'");
  const auto model = cascade::load_model(ms);
  std::ifstream ds(a.data);
  if (!ds) throw ValidationError("cannot open data file '" + a.data + "'");
  const auto pvs = cascade::read_jsonl(ds);
  if (pvs.empty()) throw ValidationError("data file '" + a.data + "' holds no records");
  auto dm = cascade::evaluate(model, pvs, c.train);
  dm.day = pvs.front().day;
  std::cout << cascade::kMetricsCsvHeader << '\n' << cascade::metrics_csv_row(dm) << '\n';
  return kExitOk;
}

// --- inspect ---------------------------------------------------------------

int run_inspect_cmd() {
  const std::vector<double> x{4, 1, 3, 2};
  const std::vector<std::uint8_t> y{1, 0, 1, 0};
  std::printf("x = [4, 1, 3, 2], y = [1, 0, 1, 0], K = 2\n");
  const auto hard = hard_topk(std::span<const double>(x), 2);
  std::printf("hard top-2 mask:");
  for (auto b : hard.bits) std::printf(" %d", b);
  std::printf("\n");
  for (double tau : {1.0, 1e-4}) {
    const auto f = dftopk_forward(std::span<const double>(x), TopKConfig<double>{2, tau});
    std::printf("dftopk tau=%g: theta=%g p =", tau, f.threshold);
    for (double p : f.mask.probs) std::printf(" %.6f", p);
    std::printf("\n");
  }
  const auto p = neuralsort_forward(std::span<const double>(x), 1e-4);
  std::printf("neuralsort tau=1e-4 soft permutation:\n");
  for (std::size_t r = 0; r < p.rows; ++r) {
    std::printf(" ");
    for (std::size_t c = 0; c < p.cols; ++c) std::printf(" %.6f", p.data[r * p.cols + c]);
    std::printf("\n");
  }
  std::printf("neuralsort loss tau=1e-4: %.6f\n",
              permutation_loss(std::span<const double>(x), std::span<const std::uint8_t>(y), 2,
                               1e-4, PermutationKind::kNeuralSort));

  std::mt19937_64 rng(0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(100);
  for (auto& e : v) e = normal(rng);
  std::printf("random 100-vector, K = 30 (seed 0): strict vs closed-form threshold\n");
  for (double tau : {1e-2, 1e-1, 1.0}) {
    const TopKConfig<double> cfg{30, tau};
    const double strict = strict_threshold(std::span<const double>(v), cfg, kStrictEps);
    const double closed = dftopk_forward(std::span<const double>(v), cfg).threshold;
    std::printf("  tau=%-5g strict=%.6f dftopk=%.6f |diff|=%.3e\n", tau, strict, closed,
                std::abs(strict - closed));
  }

  const std::vector<std::uint8_t> y2{1, 1, 0, 0};
  for (auto kind : {PermutationKind::kNeuralSort, PermutationKind::kSoftSort}) {
    std::printf("conflict metric y=[1,1,0,0] K=2 tau=1 %s: %.4f\n",
                std::string(to_string(kind)).c_str(),
                conflict_metric(std::span<const double>(x), std::span<const std::uint8_t>(y2), 2,
                                1.0, kind));
  }
  std::printf("conflict metric y=[1,1,0,0] K=2 tau=1 dftopk: %.4f\n",
              dftopk_conflict_metric(std::span<const double>(x), std::span<const std::uint8_t>(y2),
                                     TopKConfig<double>{2, 1.0}));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dftopk: differentiable top-k operator harness"};
  app.require_subcommand(1);

  BenchArgs bench_args;
  auto* bench_cmd = app.add_subcommand("bench", "Time loss forward+backward per operator");
  bench_args.config.attach(bench_cmd, false);
  bench_cmd->add_option("--sizes", bench_args.sizes, "List sizes N (K = N/2)")->delimiter(',');
  bench_cmd->add_option("--ops", bench_args.ops, "Operators: dftopk,neuralsort,softsort,strict_bisect")
      ->delimiter(',');
  bench_cmd->add_option("--reps", bench_args.reps, "Timed repetitions");
  bench_cmd->add_option("--warmup", bench_args.warmup, "Discarded warmup repetitions");
  bench_cmd->add_option("--batch", bench_args.batch, "Loss evaluations per timed repetition");
  bench_cmd->add_option("--out", bench_args.out, "Also write the CSV here (slopes beside it)");

  GradcheckArgs gc_args;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Run the operator property suite");
  gc_cmd->add_option("--seed", gc_args.seed, "Suite seed");
  gc_cmd->add_option("--instances", gc_args.instances, "Random instances");
  gc_cmd->add_option("--threads", gc_args.threads, "Worker threads (capped by DFTOPK_THREADS)");
  gc_cmd->add_flag("--self-test-corrupt", gc_args.corrupt,
                   "Negate analytic gradients to confirm the harness detects it");
  gc_cmd->add_option("--out-dir", gc_args.out_dir, "Directory for the text and CSV reports");

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Streaming cascade training and evaluation");
  train_args.config.attach(train_cmd, true);
  train_cmd->add_option("--out-dir", train_args.out_dir, "Output directory");

  SweepArgs sweep_args;
  auto* sweep_cmd = app.add_subcommand("sweep-tau", "DFTopK temperature sweep on a reduced stream");
  sweep_args.config.attach(sweep_cmd, false);
  sweep_cmd->add_option("--taus", sweep_args.taus, "Temperatures")->delimiter(',');
  sweep_cmd->add_option("--out", sweep_args.out, "Also write the CSV here");

  GenDataArgs gen_args;
  auto* gen_cmd = app.add_subcommand("gen-data", "Export one synthetic day as JSON lines");
  gen_args.config.attach(gen_cmd, false);
  gen_cmd->add_option("--day", gen_args.day, "Day index");
  gen_cmd->add_option("--out", gen_args.out, "Output path ('-' for stdout)");

  EvaluateArgs eval_args;
  auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate a saved model on JSON-lines data");
  eval_args.config.attach(eval_cmd, false);
  eval_cmd->add_option("--model", eval_args.model, "Model file from train")->required();
  eval_cmd->add_option("--data", eval_args.data, "JSON-lines data from gen-data")->required();

  auto* inspect_cmd = app.add_subcommand("inspect", "Print the worked examples");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitError;
  }

  try {
    if (*bench_cmd) return run_bench_cmd(bench_args, bench_cmd);
    if (*gc_cmd) return run_gradcheck_cmd(gc_args);
    if (*train_cmd) return run_train_cmd(train_args);
    if (*sweep_cmd) return run_sweep_cmd(sweep_args);
    if (*gen_cmd) return run_gen_data_cmd(gen_args);
    if (*eval_cmd) return run_evaluate_cmd(eval_args);
    if (*inspect_cmd) return run_inspect_cmd();
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitError;
  } catch (const cascade::TrainingError& e) {
    std::cerr << "training error: " << e.what() << '\n';
    return kExitError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitError;
}

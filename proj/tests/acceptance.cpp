// Copyright 2026 The DFTopK Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance run: prints one PASS/FAIL line per criterion AC1..AC7 with the
// measured values. Usage: acceptance <path-to-dftopk-cli> [AC1 AC3 ...]
// (no criterion names selects all). Exit status is nonzero if any selected
// criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include "dftopk/bench.hpp"
#include "dftopk/cascade/trainer.hpp"
#include "dftopk/run_config.hpp"
#include "dftopk/selection.hpp"
#include "dftopk/soft_permutation.hpp"

namespace {

using namespace dftopk;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

std::string g_cli;
fs::path g_work;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int run(const std::string& args, const std::string& log) {
  const std::string cmd = "\"" + g_cli + "\" " + args + " > \"" + log + "\" 2>&1";
  const int raw = std::system(cmd.c_str());
  if (raw == -1) return -1;
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

void report(const char* name, const Outcome& o) {
  std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
  char b[64];
  std::snprintf(b, sizeof b, f, a);
  return b;
}

// AC1 + AC2 share one CLI suite run.
struct SuiteRow {
  std::size_t instances = 0, failures = 0;
  double max_rel = 0.0;
};
std::map<std::string, SuiteRow> g_suite;
int g_suite_rc = -1;
double g_suite_seconds = 0.0;

void run_suite_once() {
  if (g_suite_rc != -1) return;
  const fs::path dir = g_work / "gradcheck";
  const auto t0 = Clock::now();
  g_suite_rc = run("gradcheck --seed 0 --instances 1000 --out-dir \"" + dir.string() + "\"",
                   (g_work / "gradcheck.log").string());
  g_suite_seconds = seconds_since(t0);
  std::istringstream csv(slurp(dir / "gradcheck_report.csv"));
  std::string line;
  std::getline(csv, line);  // header
  while (std::getline(csv, line)) {
    std::istringstream ls(line);
    std::string name, inst, rel, abs, fail;
    std::getline(ls, name, ',');
    std::getline(ls, inst, ',');
    std::getline(ls, rel, ',');
    std::getline(ls, abs, ',');
    std::getline(ls, fail, ',');
    g_suite[name] = SuiteRow{std::stoul(inst), std::stoul(fail), std::stod(rel)};
  }
}

Outcome ac1() {
  run_suite_once();
  std::size_t failures = 0;
  for (const auto& [_, r] : g_suite) failures += r.failures;
  Outcome o;
  o.pass = g_suite_rc == 0 && !g_suite.empty() && failures == 0 && g_suite_seconds < 120.0;
  o.detail = "gradcheck --seed 0 --instances 1000 exit=" + std::to_string(g_suite_rc) +
             " checks=" + std::to_string(g_suite.size()) +
             " failures=" + std::to_string(failures) + " time=" +
             fmt("%.1f", g_suite_seconds) + "s (limit 120s)";
  return o;
}

Outcome ac2() {
  run_suite_once();
  Outcome o{true, ""};
  const std::pair<const char*, double> checks[] = {{"dftopk_loss_backward_fd", 1e-5},
                                                   {"dftopk_vjp_fd", 1e-5},
                                                   {"neuralsort_loss_fd", 1e-4},
                                                   {"softsort_loss_fd", 1e-4}};
  for (const auto& [name, tol] : checks) {
    const auto it = g_suite.find(name);
    const bool ok = it != g_suite.end() && it->second.instances > 0 &&
                    it->second.failures == 0 && it->second.max_rel < tol;
    o.pass = o.pass && ok;
    if (it == g_suite.end()) {
      o.detail += std::string(name) + " missing; ";
    } else {
      o.detail += std::string(name) + " n=" + std::to_string(it->second.instances) +
                  " max_rel=" + fmt("%.2e", it->second.max_rel) + " (<" + fmt("%.0e", tol) +
                  "); ";
    }
  }
  return o;
}

Outcome ac3() {
  const auto t0 = Clock::now();
  bench::BenchOptions opt;
  opt.sizes = {5, 10, 50, 100, 500, 1000};
  opt.ops = {"dftopk", "neuralsort"};
  const auto rows = bench::run_bench(opt);
  const double s_d = bench::loglog_slope(rows, "dftopk");
  const double s_n = bench::loglog_slope(rows, "neuralsort");
  std::int64_t t_d = 0, t_n = 0;
  for (const auto& r : rows) {
    if (r.n == 1000) (r.op == "dftopk" ? t_d : t_n) = r.median_ns;
  }
  const double ratio = static_cast<double>(t_n) / static_cast<double>(std::max<std::int64_t>(1, t_d));
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = s_d <= 1.3 && s_n >= 1.7 && ratio >= 3.0 && secs < 300.0;
  o.detail = "slope dftopk=" + fmt("%.3f", s_d) + " (<=1.3) neuralsort=" + fmt("%.3f", s_n) +
             " (>=1.7); N=1000 median dftopk=" + std::to_string(t_d) +
             "ns neuralsort=" + std::to_string(t_n) + "ns speedup=" + fmt("%.1f", ratio) +
             "x (>=3); time=" + fmt("%.1f", secs) + "s (limit 300s)";
  return o;
}

Outcome ac4() {
  const std::vector<double> x{4, 1, 3, 2};
  const auto mask = hard_topk(std::span<const double>(x), 2);
  const bool mask_ok = mask.bits == std::vector<std::uint8_t>{1, 0, 1, 0};
  const auto p = neuralsort_forward(std::span<const double>(x), 1e-4);
  const double expected[4][4] = {{1, 0, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}, {0, 1, 0, 0}};
  double worst = 0.0;
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 4; ++c) worst = std::max(worst, std::abs(p(r, c) - expected[r][c]));
  }
  Outcome o;
  o.pass = mask_ok && worst <= 1e-6;
  o.detail = std::string("hard top-2 of [4,1,3,2] ") + (mask_ok ? "= [1,0,1,0]" : "WRONG") +
             "; neuralsort tau=1e-4 max |P - P_ref| = " + fmt("%.2e", worst) + " (<=1e-6)";
  return o;
}

Outcome ac5() {
  const auto t0 = Clock::now();
  const fs::path csv = g_work / "sweep.csv";
  const int rc = run("sweep-tau --out \"" + csv.string() + "\"", (g_work / "sweep.log").string());
  std::istringstream in(slurp(csv));
  std::string line;
  std::getline(in, line);
  std::vector<std::pair<double, double>> pts;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tau, joint;
    std::getline(ls, tau, ',');
    std::getline(ls, joint, ',');
    pts.emplace_back(std::stod(tau), std::stod(joint));
  }
  Outcome o;
  if (rc != 0 || pts.empty()) {
    o.detail = "sweep-tau failed, exit=" + std::to_string(rc);
    return o;
  }
  auto extreme = [](double tau) { return tau <= 1e-3 * (1 + 1e-9); };
  double peak = 0.0, min_mid = 1e300, max_ext = -1e300;
  for (const auto& [t, j] : pts) {
    peak = std::max(peak, j);
    if (extreme(t)) {
      max_ext = std::max(max_ext, j);
    } else {
      min_mid = std::min(min_mid, j);
    }
  }
  std::string curve, outside;
  for (const auto& [t, j] : pts) {
    curve += fmt("%g", t) + ":" + fmt("%.3f", j) + " ";
    if (!extreme(t) && j < 0.9 * peak) outside += fmt("%g", t) + " ";
  }
  const bool band = outside.empty();
  const bool extremes_worse = max_ext < min_mid;
  o.pass = band && extremes_worse;
  o.detail = "joint recall " + curve + "| peak=" + fmt("%.3f", peak) + " band>=" +
             fmt("%.3f", 0.9 * peak) + (band ? " all non-extreme inside" : " outside: " + outside) +
             "| extremes " + (extremes_worse ? "strictly worse" : "NOT strictly worse") +
             " | time=" + fmt("%.0f", seconds_since(t0)) + "s";
  return o;
}

Outcome ac6() {
  const auto t0 = Clock::now();
  auto final_joint = [](cascade::LossKind kind, double noise) {
    RunConfig c;
    c.train.loss_kind = kind;
    c.train.noise = noise;
    return cascade::streaming_evaluate(c.train).days.back().joint_recall;
  };
  const double dftopk = final_joint(cascade::LossKind::kDFTopK, RunConfig{}.train.noise);
  const double bce = final_joint(cascade::LossKind::kPointwiseBce, RunConfig{}.train.noise);
  const double clean = final_joint(cascade::LossKind::kDFTopK, 0.0);
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = dftopk >= bce && clean >= 0.95 && secs < 1800.0;
  o.detail = "final-day joint recall dftopk=" + fmt("%.4f", dftopk) + " pointwise_bce=" +
             fmt("%.4f", bce) + "; noiseless dftopk=" + fmt("%.4f", clean) +
             " (>=0.95); time=" + fmt("%.0f", secs) + "s (limit 1800s)";
  return o;
}

Outcome ac7() {
  // Small configs keep this quick; every non-timing command output is compared.
  const std::string train_set =
      "--set days=3 --set pvs_per_day=128 --set batch_pvs=32 --set threads=2";
  const fs::path cfg = g_work / "ac7.json";
  { std::ofstream(cfg) << "{\"seed\": 7}\n"; }
  std::vector<std::string> diffs;
  std::vector<std::string> files[2];
  for (int round = 0; round < 2; ++round) {
    const fs::path d = g_work / ("ac7_" + std::to_string(round));
    fs::create_directories(d);
    const std::string c = "--config \"" + cfg.string() + "\" ";
    int rc = 0;
    rc |= run("train " + c + train_set + " --out-dir \"" + (d / "train").string() + "\"",
              (d / "train.log").string());
    rc |= run("gradcheck --seed 3 --instances 60 --out-dir \"" + d.string() + "\"",
              (d / "gradcheck.log").string());
    rc |= run("sweep-tau " + c + "--set sweep_days=3 --set sweep_pvs_per_day=64 --taus 0.1,10",
              (d / "sweep.log").string());
    rc |= run("gen-data " + c + "--set pvs_per_day=16 --day 2 --out \"" + (d / "day2.jsonl").string() +
                  "\"",
              (d / "gen.log").string());
    rc |= run("evaluate " + c + "--model \"" + (d / "train" / "model_dftopk.bin").string() +
                  "\" --data \"" + (d / "day2.jsonl").string() + "\"",
              (d / "evaluate.log").string());
    rc |= run("inspect", (d / "inspect.log").string());
    if (rc != 0) diffs.push_back("round " + std::to_string(round) + " had a nonzero exit");
    for (const auto& e : fs::recursive_directory_iterator(d)) {
      if (e.is_regular_file()) files[round].push_back(fs::relative(e.path(), d).string());
    }
    std::sort(files[round].begin(), files[round].end());
  }
  if (files[0] != files[1]) diffs.push_back("file sets differ");
  for (const auto& f : files[0]) {
    if (slurp(g_work / "ac7_0" / f) != slurp(g_work / "ac7_1" / f)) diffs.push_back(f);
  }
  // Thread count must not change results either.
  const fs::path one = g_work / "ac7_threads1";
  run("train --config \"" + cfg.string() + "\" " +
          "--set days=3 --set pvs_per_day=128 --set batch_pvs=32 --set threads=1 --out-dir \"" +
          one.string() + "\"",
      (g_work / "ac7_threads1.log").string());
  for (const char* f : {"metrics.csv", "model_dftopk.bin", "model_pointwise_bce.bin"}) {
    if (slurp(one / f) != slurp(g_work / "ac7_0" / "train" / f)) {
      diffs.push_back(std::string("threads=1 vs 2: ") + f);
    }
  }
  Outcome o;
  o.pass = diffs.empty() && !files[0].empty();
  std::string list;
  for (const auto& d : diffs) list += d + "; ";
  o.detail = std::to_string(files[0].size()) + " output files compared across two runs" +
             (diffs.empty() ? ", all byte-identical (also threads=1 vs 2)" : "; differing: " + list);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: acceptance <dftopk-cli> [AC1 ... AC7]\n");
    return 1;
  }
  g_cli = argv[1];
  std::set<std::string> only(argv + 2, argv + argc);
  g_work = fs::temp_directory_path() / ("dftopk_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(g_work);

  const std::pair<const char*, std::function<Outcome()>> criteria[] = {
      {"AC1", ac1}, {"AC2", ac2}, {"AC3", ac3}, {"AC4", ac4},
      {"AC5", ac5}, {"AC6", ac6}, {"AC7", ac7}};
  bool all = true;
  for (const auto& [name, fn] : criteria) {
    if (!only.empty() && !only.count(name)) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = Outcome{false, std::string("exception: ") + e.what()};
    }
    report(name, o);
    all = all && o.pass;
  }
  std::error_code ec;
  fs::remove_all(g_work, ec);
  return all ? 0 : 1;
}

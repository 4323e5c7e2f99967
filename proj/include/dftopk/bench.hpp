// Copyright 2026 The DFTopK Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

/// \file bench.hpp
/// Wall-clock benchmark of one loss forward + backward per operator, and a
/// log-log least-squares slope of median time against N.
///
/// Per (operator, N), K = floor(N/2). Every rep draws fresh standard-normal
/// scores and K random positive labels (untimed), then times `batch` loss
/// evaluations with gradients on std::chrono::steady_clock. The reported value
/// is the median over `reps` timed reps after `warmup` discarded reps.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dftopk/soft_permutation.hpp"
#include "dftopk/topk_operator.hpp"

namespace dftopk::bench {

inline constexpr const char* kOperators[] = {"dftopk", "neuralsort", "softsort", "strict_bisect"};
inline constexpr double kStrictBenchEps = 1e-10;

struct BenchRow {
  std::string op;
  std::size_t n = 0;
  std::size_t k = 0;
  std::int64_t median_ns = 0;
  std::size_t reps = 0;
  std::size_t warmup = 0;
};

struct BenchOptions {
  std::vector<std::size_t> sizes{5, 10, 50, 100, 500, 1000};
  std::vector<std::string> ops{"dftopk", "neuralsort", "softsort", "strict_bisect"};
  std::size_t reps = 200;
  std::size_t warmup = 20;
  std::size_t batch = 1;
  std::uint64_t seed = 0;
};

inline bool known_operator(const std::string& op) {
  return std::find(std::begin(kOperators), std::end(kOperators), op) != std::end(kOperators);
}

/// One loss forward + backward; returns a value derived from the result so the
/// call cannot be optimized away.
inline double run_operator(const std::string& op, std::span<const double> x,
                           std::span<const std::uint8_t> y, std::size_t k) {
  LossAndGrad<double> lg;
  if (op == "dftopk") {
    lg = dftopk_loss_with_grad(x, y, TopKConfig<double>{k, 1.0});
  } else if (op == "neuralsort") {
    lg = permutation_loss_with_grad(x, y, k, 1.0, PermutationKind::kNeuralSort);
  } else if (op == "softsort") {
    lg = permutation_loss_with_grad(x, y, k, 1.0, PermutationKind::kSoftSort);
  } else if (op == "strict_bisect") {
    lg = strict_loss_with_grad(x, y, TopKConfig<double>{k, 1.0}, kStrictBenchEps);
  } else {
    throw ValidationError("unknown benchmark operator '" + op + "'");
  }
  return lg.loss + lg.grad[0];
}

inline std::int64_t median(std::vector<std::int64_t> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 == 1 ? v[m] : (v[m - 1] + v[m]) / 2;
}

inline BenchRow time_operator(const std::string& op, std::size_t n, const BenchOptions& opt,
                              double* sink) {
  if (n < 2) throw ValidationError("benchmark sizes must be >= 2");
  if (opt.reps < 1 || opt.batch < 1) throw ValidationError("reps and batch must be >= 1");
  const std::size_t k = n / 2;
  std::mt19937_64 rng(opt.seed ^ (static_cast<std::uint64_t>(n) << 20));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> xs(opt.batch, std::vector<double>(n));
  std::vector<std::vector<std::uint8_t>> ys(opt.batch, std::vector<std::uint8_t>(n));
  std::vector<std::size_t> idx(n);
  auto refill = [&] {
    for (std::size_t b = 0; b < opt.batch; ++b) {
      for (auto& v : xs[b]) v = normal(rng);
      std::iota(idx.begin(), idx.end(), 0);
      std::shuffle(idx.begin(), idx.end(), rng);
      std::fill(ys[b].begin(), ys[b].end(), 0);
      for (std::size_t i = 0; i < k; ++i) ys[b][idx[i]] = 1;
    }
  };
  std::vector<std::int64_t> samples;
  samples.reserve(opt.reps);
  for (std::size_t rep = 0; rep < opt.warmup + opt.reps; ++rep) {
    refill();
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t b = 0; b < opt.batch; ++b) {
      *sink += run_operator(op, std::span<const double>(xs[b]),
                            std::span<const std::uint8_t>(ys[b]), k);
    }
    const auto t1 = std::chrono::steady_clock::now();
    if (rep >= opt.warmup) {
      samples.push_back(std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count());
    }
  }
  return BenchRow{op, n, k, median(samples), opt.reps, opt.warmup};
}

/// Runs every (operator, size) pair, operators outermost.
inline std::vector<BenchRow> run_bench(const BenchOptions& opt) {
  for (const auto& op : opt.ops) {
    if (!known_operator(op)) throw ValidationError("unknown benchmark operator '" + op + "'");
  }
  double sink = 0.0;
  std::vector<BenchRow> rows;
  for (const auto& op : opt.ops) {
    for (std::size_t n : opt.sizes) rows.push_back(time_operator(op, n, opt, &sink));
  }
  if (std::isnan(sink)) std::fputs("", stderr);
  return rows;
}

/// Least-squares slope of log(median_ns) on log(n) over the largest half of
/// the distinct sizes measured for `op` (at least two sizes); NaN if fewer
/// than two sizes are available.
inline double loglog_slope(std::span<const BenchRow> rows, const std::string& op,
                           std::vector<std::size_t>* used = nullptr) {
  std::vector<const BenchRow*> mine;
  for (const auto& r : rows) {
    if (r.op == op) mine.push_back(&r);
  }
  std::sort(mine.begin(), mine.end(), [](auto a, auto b) { return a->n < b->n; });
  mine.erase(std::unique(mine.begin(), mine.end(), [](auto a, auto b) { return a->n == b->n; }),
             mine.end());
  if (mine.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t take = std::max<std::size_t>(2, (mine.size() + 1) / 2);
  std::vector<double> lx, ly;
  for (std::size_t i = mine.size() - take; i < mine.size(); ++i) {
    lx.push_back(std::log(static_cast<double>(mine[i]->n)));
    ly.push_back(std::log(static_cast<double>(std::max<std::int64_t>(1, mine[i]->median_ns))));
    if (used) used->push_back(mine[i]->n);
  }
  const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / lx.size();
  const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / ly.size();
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxy += (lx[i] - mx) * (ly[i] - my);
    sxx += (lx[i] - mx) * (lx[i] - mx);
  }
  return sxy / sxx;
}

inline constexpr const char* kBenchCsvHeader = "operator,n,k,median_ns,reps,warmup";
inline constexpr const char* kSlopeCsvHeader = "operator,slope,sizes";

inline std::string bench_csv_row(const BenchRow& r) {
  return r.op + "," + std::to_string(r.n) + "," + std::to_string(r.k) + "," +
         std::to_string(r.median_ns) + "," + std::to_string(r.reps) + "," +
         std::to_string(r.warmup);
}

inline std::string slope_csv_row(std::span<const BenchRow> rows, const std::string& op) {
  std::vector<std::size_t> used;
  const double s = loglog_slope(rows, op, &used);
  std::string sizes;
  for (std::size_t i = 0; i < used.size(); ++i) sizes += (i ? ";" : "") + std::to_string(used[i]);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", s);
  return op + "," + buf + "," + sizes;
}

}  // namespace dftopk::bench

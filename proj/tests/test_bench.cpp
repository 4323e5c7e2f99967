// Copyright 2026 The DFTopK Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "dftopk/bench.hpp"

using namespace dftopk;
using namespace dftopk::bench;

namespace {

std::vector<BenchRow> synthetic(const std::string& op, double exponent) {
  std::vector<BenchRow> rows;
  for (std::size_t n : {5, 10, 50, 100, 500, 1000}) {
    rows.push_back(BenchRow{op, n, n / 2,
                            static_cast<std::int64_t>(std::llround(7.0 * std::pow(n, exponent))),
                            1, 0});
  }
  return rows;
}

}  // namespace

TEST_CASE("log-log slope recovers a power law over the largest half of sizes", "[bench]") {
  auto rows = synthetic("a", 1.0);
  auto more = synthetic("b", 2.0);
  rows.insert(rows.end(), more.begin(), more.end());
  std::vector<std::size_t> used;
  CHECK(loglog_slope(rows, "a", &used) == Catch::Approx(1.0).margin(1e-3));
  CHECK(used == std::vector<std::size_t>{100, 500, 1000});
  CHECK(loglog_slope(rows, "b") == Catch::Approx(2.0).margin(1e-3));
  CHECK(std::isnan(loglog_slope(rows, "missing")));
  CHECK(slope_csv_row(rows, "b") == "b,2.0000,100;500;1000");
}

TEST_CASE("small bench run emits one row per operator and size", "[bench]") {
  BenchOptions opt;
  opt.sizes = {8, 16};
  opt.reps = 3;
  opt.warmup = 1;
  opt.batch = 2;
  const auto rows = run_bench(opt);
  REQUIRE(rows.size() == 8);
  for (const auto& r : rows) {
    CHECK(r.k == r.n / 2);
    CHECK(r.median_ns > 0);
    CHECK(r.reps == 3);
    CHECK(r.warmup == 1);
  }
  CHECK(bench_csv_row(rows[0]).rfind("dftopk,8,4,", 0) == 0);
}

TEST_CASE("bench rejects unknown operators and bad sizes", "[bench]") {
  BenchOptions opt;
  opt.ops = {"diffsort"};
  CHECK_THROWS_AS(run_bench(opt), ValidationError);
  opt = BenchOptions{};
  opt.sizes = {1};
  opt.ops = {"dftopk"};
  CHECK_THROWS_AS(run_bench(opt), ValidationError);
}

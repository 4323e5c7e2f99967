// Copyright 2026 The DFTopK Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <string>

#include "dftopk/run_config.hpp"

using namespace dftopk;
using cascade::LossKind;

namespace {

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("defaults are valid and match the documented protocol", "[config]") {
  const RunConfig c;
  CHECK_NOTHROW(validate(c));
  CHECK(c.train.list_size() == 200);
  CHECK(c.train.k_retrieval == 10);
  CHECK(c.train.m_retrieval == 30);
  CHECK(c.train.m_ranking == 20);
  CHECK(c.train.learning_rate == 0.01);
  CHECK(c.train.batch_pvs == 64);
  CHECK(c.train.days == 15);
  CHECK(c.bench_reps == 200);
  CHECK(c.bench_warmup == 20);
  CHECK(c.bench_sizes == std::vector<std::size_t>{5, 10, 50, 100, 500, 1000});
  CHECK(c.loss_kinds.size() == 4);
}

TEST_CASE("JSON config file values are applied", "[config]") {
  const auto c = parse_run_config_text(R"({
    "tau": 0.5, "days": 3, "loss_kinds": ["dftopk", "pointwise_bce"],
    "bench_sizes": [8, 16], "bench_ops": ["dftopk"], "sweep_taus": [1, 10], "seed": 42
  })");
  CHECK(c.train.tau == 0.5);
  CHECK(c.train.days == 3);
  CHECK(c.train.seed == 42);
  CHECK(c.loss_kinds == std::vector<LossKind>{LossKind::kDFTopK, LossKind::kPointwiseBce});
  CHECK(c.bench_sizes == std::vector<std::size_t>{8, 16});
  CHECK(c.bench_ops == std::vector<std::string>{"dftopk"});
  CHECK(c.sweep_taus == std::vector<double>{1.0, 10.0});
}

TEST_CASE("single loss_kind narrows the run", "[config]") {
  const auto c = parse_run_config_text(R"({"loss_kind": "softsort"})");
  CHECK(c.train.loss_kind == LossKind::kSoftSort);
  CHECK(c.loss_kinds == std::vector<LossKind>{LossKind::kSoftSort});
}

TEST_CASE("overrides accept JSON and bare values", "[config]") {
  RunConfig c;
  apply_override(c, "tau=2.5");
  apply_override(c, "bench_sizes=5,10,50");
  apply_override(c, "bench_ops=dftopk,neuralsort");
  apply_override(c, "loss_kinds=[\"neuralsort\"]");
  apply_override(c, "sweep_taus=1e-4,1e4");
  apply_override(c, "loss_kind=pointwise_bce");
  CHECK(c.train.tau == 2.5);
  CHECK(c.bench_sizes == std::vector<std::size_t>{5, 10, 50});
  CHECK(c.bench_ops == std::vector<std::string>{"dftopk", "neuralsort"});
  CHECK(c.sweep_taus == std::vector<double>{1e-4, 1e4});
  CHECK(c.loss_kinds == std::vector<LossKind>{LossKind::kPointwiseBce});
}

TEST_CASE("unknown keys and bad values are rejected with the key name", "[config]") {
  CHECK(error_of([] { parse_run_config_text(R"({"taux": 1})"); }).find("taux") !=
        std::string::npos);
  CHECK(error_of([] { parse_run_config_text(R"({"days": "many"})"); }).find("days") !=
        std::string::npos);
  CHECK(error_of([] { parse_run_config_text(R"({"days": -3})"); }).find("days") !=
        std::string::npos);
  CHECK(error_of([] { parse_run_config_text("[1,2]"); }) != "");
  CHECK(error_of([] { parse_run_config_text("{oops"); }) != "");
  CHECK(error_of([] { RunConfig c; apply_override(c, "novalue"); }) != "");
  CHECK(error_of([] { RunConfig c; apply_override(c, "frobnicate=1"); }).find("frobnicate") !=
        std::string::npos);
  CHECK(error_of([] { RunConfig c; apply_override(c, "loss_kind=lambdamart"); }) != "");

  RunConfig c;
  c.bench_sizes = {1};
  CHECK(error_of([&] { validate(c); }).find("bench_sizes") != std::string::npos);
  c = RunConfig{};
  c.bench_ops = {"diffsort"};
  CHECK(error_of([&] { validate(c); }).find("bench_ops") != std::string::npos);
  c = RunConfig{};
  c.sweep_taus = {1.0, 0.0};
  CHECK(error_of([&] { validate(c); }).find("sweep_taus") != std::string::npos);
  c = RunConfig{};
  c.train.m_ranking = 40;
  CHECK(error_of([&] { validate(c); }).find("m_ranking") != std::string::npos);
}

TEST_CASE("to_json round-trips through the parser", "[config]") {
  RunConfig c;
  apply_override(c, "tau=0.25");
  apply_override(c, "loss_kinds=dftopk,softsort");
  apply_override(c, "noise=0");
  const auto back = parse_run_config(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(run_config_keys().size() == to_json(c).size() + 1);  // + loss_kind
}

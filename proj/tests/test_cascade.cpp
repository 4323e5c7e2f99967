// Copyright 2026 The DFTopK Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

#include "dftopk/cascade/trainer.hpp"
#include "dftopk/gradcheck.hpp"

using namespace dftopk;
using namespace dftopk::cascade;

namespace {

// Small but structurally complete configuration.
TrainConfig tiny_config(LossKind kind) {
  TrainConfig c;
  c.loss_kind = kind;
  c.user_dim = 3;
  c.item_dim = 3;
  c.latent_dim = 2;
  c.hidden = 4;
  c.embed = 2;
  c.base_candidates = 8;
  c.n_neg = 4;
  c.k_pos = 3;
  c.k_retrieval = 3;
  c.k_ranking = 3;
  c.m_retrieval = 6;
  c.m_ranking = 4;
  c.noise = 0.3;
  c.days = 3;
  c.pvs_per_day = 16;
  c.batch_pvs = 4;
  return c;
}

}  // namespace

TEST_CASE("generator shape and labels", "[cascade][data]") {
  TrainConfig c;
  c.pvs_per_day = 8;
  const DatasetGenerator gen(c);
  for (std::size_t i = 0; i < 8; ++i) {
    const auto pv = gen.generate_pv(3, i);
    CHECK(pv.day == 3);
    CHECK(pv.size() == 200);
    CHECK(pv.user_features.size() == 16);
    CHECK(pv.item_features.size() == 200 * 16);
    CHECK(std::count(pv.labels.begin(), pv.labels.end(), 1) == 10);
    // positives only among the base candidates
    CHECK(std::count(pv.labels.begin() + 40, pv.labels.end(), 1) == 0);
  }
}

TEST_CASE("generator is deterministic and index-addressable", "[cascade][data]") {
  TrainConfig c;
  c.pvs_per_day = 6;
  const auto a = DatasetGenerator(c).generate_day(2);
  const auto b = DatasetGenerator(c).generate_day(2);
  CHECK(a == b);
  CHECK(DatasetGenerator(c).generate_pv(2, 4) == a[4]);
  c.threads = 3;
  CHECK(DatasetGenerator(c).generate_day(2) == a);
  c.seed = 1;
  CHECK_FALSE(DatasetGenerator(c).generate_day(2) == a);

  std::ostringstream s1, s2;
  write_jsonl(s1, a);
  write_jsonl(s2, b);
  CHECK(s1.str() == s2.str());
}

TEST_CASE("noiseless data is separable by the oracle linear scorer", "[cascade][data]") {
  TrainConfig c;
  c.noise = 0.0;
  const DatasetGenerator gen(c);
  for (std::size_t day : {0u, 7u, 14u}) {
    for (std::size_t i = 0; i < 20; ++i) {
      const auto pv = gen.generate_pv(day, i);
      const auto s = gen.oracle_scores(pv);
      std::span<const double> ss(s);
      std::span<const std::uint8_t> y(pv.labels);
      CHECK(recall_at_k_at_m(ss, y, c.k_pos).recall == 1.0);
      CHECK(joint_recall(ss, ss, y, c.m_retrieval, c.m_ranking).recall == 1.0);
    }
  }
}

TEST_CASE("preference rotates with the day", "[cascade][data]") {
  TrainConfig c;
  const DatasetGenerator gen(c);
  std::vector<double> u(16, 0.0);
  u[0] = 1.0;
  const auto p0 = gen.preference(u, 0);
  const auto p1 = gen.preference(u, 1);
  double n0 = 0, n1 = 0, d = 0;
  for (std::size_t i = 0; i < p0.size(); ++i) {
    n0 += p0[i] * p0[i];
    n1 += p1[i] * p1[i];
    d += p0[i] * p1[i];
  }
  const double cosine = d / std::sqrt(n0 * n1);
  CHECK(cosine < 1.0 - 1e-6);
  CHECK(cosine > 0.9);
  c.drift = 0.0;
  CHECK(DatasetGenerator(c).preference(u, 5) == DatasetGenerator(c).preference(u, 0));
}

TEST_CASE("JSONL round trip is exact", "[cascade][data]") {
  TrainConfig c;
  c.pvs_per_day = 5;
  const auto pvs = DatasetGenerator(c).generate_day(1);
  std::stringstream ss;
  write_jsonl(ss, pvs);
  const auto back = read_jsonl(ss);
  CHECK(back == pvs);
}

TEST_CASE("JSONL import rejects malformed records", "[cascade][data]") {
  auto parse = [](const std::string& s) {
    std::istringstream is(s);
    return read_jsonl(is);
  };
  CHECK_THROWS_AS(parse("{not json}\n"), ValidationError);
  CHECK_THROWS_AS(
      parse(R"({"day":0,"user_features":[1],"item_feature_rows":[[1],[2]],"labels":[1]})"),
      ValidationError);
  CHECK_THROWS_AS(
      parse(R"({"day":0,"user_features":[1],"item_feature_rows":[[1],[2,3]],"labels":[1,0]})"),
      ValidationError);
  CHECK_THROWS_AS(
      parse(R"({"day":0,"user_features":[1],"item_feature_rows":[[1],[2]],"labels":[2,0]})"),
      ValidationError);
  CHECK_THROWS_AS(
      parse(R"({"day":0,"user_features":[1],"item_feature_rows":[[1],[2]],"labels":[1,0],"x":1})"),
      ValidationError);
  const auto ok =
      parse(R"({"day":4,"user_features":[0.5],"item_feature_rows":[[1],[2]],"labels":[1,0]})");
  REQUIRE(ok.size() == 1);
  CHECK(ok[0].day == 4);
  CHECK(ok[0].item(1)[0] == 2.0);
}

TEST_CASE("hand-sized forward pass matches hand arithmetic", "[cascade][model]") {
  const ModelShape s{2, 2, 2, 2};
  CascadeModel m{s, std::vector<double>(s.parameter_count(), 0.0)};
  const Layout L(s);
  auto set = [&](std::size_t block, std::initializer_list<double> v) {
    std::copy(v.begin(), v.end(), m.params.begin() + static_cast<std::ptrdiff_t>(L.offset[block]));
  };
  set(L.kUw1, {1.0, 0.0, 0.0, 1.0});   // identity
  set(L.kUb1, {0.0, 0.0});
  set(L.kUw2, {2.0, 0.0, 0.0, 1.0});
  set(L.kUb2, {0.0, 0.5});
  set(L.kIw1, {1.0, 1.0, 0.0, -1.0});
  set(L.kIb1, {0.1, 0.0});
  set(L.kIw2, {1.0, 0.0, 1.0, 1.0});
  set(L.kIb2, {0.0, 0.0});
  set(L.kRw1, {1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0});
  set(L.kRb1, {0.0, -0.5});
  set(L.kRw2, {1.0, 2.0});
  set(L.kRb2, {0.25});

  PVRecord pv;
  pv.user_features = {0.5, -1.0};
  pv.item_features = {1.0, 2.0, -1.0, 0.5};
  pv.labels = {1, 0};

  // user: h = tanh([0.5, -1]); e_u = [2 h0, h1 + 0.5]
  const double hu0 = std::tanh(0.5), hu1 = std::tanh(-1.0);
  const double eu0 = 2 * hu0, eu1 = hu1 + 0.5;
  auto item_score = [&](double v0, double v1) {
    const double h0 = std::tanh(v0 + v1 + 0.1), h1 = std::tanh(-v1);
    return eu0 * h0 + eu1 * (h0 + h1);
  };
  auto rank_score = [&](double v0, double v1) {
    return std::tanh(0.5) + 2.0 * std::tanh(v0 + v1 - 0.5) + 0.25;
  };
  const auto [r, k] = forward_scores(m, pv);
  CHECK(r[0] == Catch::Approx(item_score(1.0, 2.0)).epsilon(1e-14));
  CHECK(r[1] == Catch::Approx(item_score(-1.0, 0.5)).epsilon(1e-14));
  CHECK(k[0] == Catch::Approx(rank_score(1.0, 2.0)).epsilon(1e-14));
  CHECK(k[1] == Catch::Approx(rank_score(-1.0, 0.5)).epsilon(1e-14));

  const auto c = forward_cached(m, pv);
  CHECK(c.retrieval == r);
  CHECK(c.ranking == k);
}

TEST_CASE("zero weights give tied scores; outputs finite", "[cascade][model]") {
  TrainConfig c;
  c.pvs_per_day = 1;
  const auto pv = DatasetGenerator(c).generate_pv(0, 0);
  CascadeModel zero{shape_from(c), std::vector<double>(shape_from(c).parameter_count(), 0.0)};
  const auto [r, s] = forward_scores(zero, pv);
  for (std::size_t j = 1; j < r.size(); ++j) {
    CHECK(r[j] == r[0]);
    CHECK(s[j] == s[0]);
  }
  const auto [r2, s2] = forward_scores(init_model(shape_from(c), 9), pv);
  for (std::size_t j = 0; j < r2.size(); ++j) {
    CHECK(std::isfinite(r2[j]));
    CHECK(std::isfinite(s2[j]));
  }
}

TEST_CASE("forward rejects mismatched dimensions", "[cascade][model]") {
  TrainConfig c;
  c.pvs_per_day = 1;
  auto pv = DatasetGenerator(c).generate_pv(0, 0);
  const auto m = init_model(ModelShape{8, 16, 32, 8}, 0);
  CHECK_THROWS_AS(forward_scores(m, pv), ValidationError);
  pv.item_features.pop_back();
  CHECK_THROWS_AS(forward_scores(init_model(shape_from(c), 0), pv), ValidationError);
}

TEST_CASE("full-model gradient matches finite differences for every loss", "[cascade][grad]") {
  for (LossKind kind : kAllLossKinds) {
    const TrainConfig c = tiny_config(kind);
    const DatasetGenerator gen(c);
    std::size_t checked = 0;
    for (std::size_t trial = 0; trial < 5; ++trial) {
      const auto pv = gen.generate_pv(0, trial);
      const auto m = init_model(shape_from(c), trial + 1);
      // both stages' scores must keep their rank order under the perturbation
      const auto [r, s] = forward_scores(m, pv);
      if (min_adjacent_gap(std::span<const double>(r)) < 1e-3 ||
          min_adjacent_gap(std::span<const double>(s)) < 1e-3) {
        continue;
      }
      std::vector<double> grad(m.params.size(), 0.0);
      accumulate_pv_gradient(m, pv, c, 1.0, grad);
      std::vector<long double> p(m.params.begin(), m.params.end());
      const auto fd = richardson_difference<long double>(
          [&](std::span<const long double> q) { return pv_total_loss<long double>(m.shape, q, pv, c); },
          std::span<const long double>(p), 1e-5L);
      double worst = 0.0;
      for (std::size_t i = 0; i < grad.size(); ++i) {
        worst = std::max(worst, relative_error(grad[i], static_cast<double>(fd[i])));
      }
      INFO(to_string(kind) << " trial " << trial);
      CHECK(worst < 1e-4);
      ++checked;
    }
    CHECK(checked >= 3);
  }
}

TEST_CASE("learning rate zero leaves the model bitwise unchanged", "[cascade][train]") {
  TrainConfig c = tiny_config(LossKind::kDFTopK);
  c.learning_rate = 0.0;
  const auto pvs = DatasetGenerator(c).generate_day(0);
  const auto m0 = init_model(shape_from(c), 4);
  Trainer t(c, m0);
  t.train_epoch(pvs);
  CHECK(t.model() == m0);
}

TEST_CASE("training loss decreases on separable data for every loss", "[cascade][train]") {
  for (LossKind kind : kAllLossKinds) {
    TrainConfig c;
    c.loss_kind = kind;
    c.noise = 0.0;
    c.pvs_per_day = 64 * 120;
    const DatasetGenerator gen(c);
    const auto pvs = gen.generate_day(0);
    Trainer t(c, init_model(shape_from(c), c.seed));
    const auto steps = t.train_epoch(pvs);
    REQUIRE(steps.size() == 120);
    // smoothed: mean of the first and last 20 steps of the window
    double first = 0.0, last = 0.0;
    for (std::size_t i = 0; i < 20; ++i) {
      first += steps[i].loss;
      last += steps[steps.size() - 1 - i].loss;
    }
    INFO(to_string(kind) << " first " << first / 20 << " last " << last / 20);
    CHECK(last < first);
    for (const auto& st : steps) CHECK(std::isfinite(st.loss));
  }
}

TEST_CASE("non-finite loss aborts with the step index", "[cascade][train]") {
  TrainConfig c = tiny_config(LossKind::kDFTopK);
  auto pvs = DatasetGenerator(c).generate_day(0);
  auto m = init_model(shape_from(c), 0);
  m.params[0] = std::numeric_limits<double>::infinity();
  Trainer t(c, m);
  try {
    t.train_step(std::span<const PVRecord>(pvs).first(2));
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(e.step() == 0);
  } catch (const ValidationError&) {
    SUCCEED("rejected as invalid scores");
  }
}

TEST_CASE("streaming run: rows, bounds and determinism", "[cascade][stream]") {
  TrainConfig c = tiny_config(LossKind::kDFTopK);
  c.days = 2;
  const auto a = streaming_evaluate(c);
  REQUIRE(a.days.size() == 1);
  CHECK(a.days[0].day == 1);

  c.days = 4;
  for (LossKind kind : kAllLossKinds) {
    c.loss_kind = kind;
    const auto r1 = streaming_evaluate(c);
    const auto r2 = streaming_evaluate(c);
    REQUIRE(r1.days.size() == 3);
    CHECK(r1.model == r2.model);
    for (std::size_t i = 0; i < r1.days.size(); ++i) {
      const auto& d = r1.days[i];
      CHECK(metrics_csv_row(d) == metrics_csv_row(r2.days[i]));
      CHECK(d.loss_kind == kind);
      for (double v : {d.joint_recall, d.retrieval_recall, d.ranking_recall}) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
      CHECK(d.joint_recall <= d.retrieval_recall);
      CHECK(d.sum_deviation >= 0.0);
    }
  }
}

TEST_CASE("evaluation does not depend on thread count", "[cascade][stream]") {
  TrainConfig c;
  c.pvs_per_day = 40;
  const auto pvs = DatasetGenerator(c).generate_day(1);
  const auto m = init_model(shape_from(c), 2);
  const auto one = evaluate(m, pvs, c);
  c.threads = 4;
  const auto four = evaluate(m, pvs, c);
  CHECK(metrics_csv_row(one) == metrics_csv_row(four));
}

TEST_CASE("model file round trip and layout", "[cascade][io]") {
  const auto m = init_model(ModelShape{2, 3, 4, 5}, 7);
  std::stringstream ss;
  save_model(ss, m);
  const std::string bytes = ss.str();
  CHECK(bytes.size() == 4 + 4 + 16 + 8 * m.params.size());
  CHECK(bytes.substr(0, 4) == "DFTK");
  CHECK(bytes[4] == 1);
  CHECK(bytes[8] == 2);
  CHECK(bytes[12] == 3);
  CHECK(bytes[16] == 4);
  CHECK(bytes[20] == 5);
  // first parameter, little-endian f64
  std::uint64_t raw = 0;
  for (int i = 0; i < 8; ++i) raw |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[24 + i])) << (8 * i);
  double first;
  std::memcpy(&first, &raw, 8);
  CHECK(first == m.params[0]);

  std::stringstream in(bytes);
  CHECK(load_model(in) == m);

  std::stringstream bad_magic("XXXX" + bytes.substr(4));
  CHECK_THROWS_AS(load_model(bad_magic), ValidationError);
  std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(load_model(truncated), ValidationError);
  std::stringstream trailing(bytes + "x");
  CHECK_THROWS_AS(load_model(trailing), ValidationError);
  std::string v2 = bytes;
  v2[4] = 2;
  std::stringstream wrong_version(v2);
  CHECK_THROWS_AS(load_model(wrong_version), ValidationError);
}

TEST_CASE("config validation names the key", "[cascade][config]") {
  auto expect = [](TrainConfig c, const std::string& key) {
    try {
      validate(c);
      FAIL("expected ValidationError for " << key);
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find(key) != std::string::npos);
    }
  };
  TrainConfig c;
  CHECK_NOTHROW(validate(c));
  auto t = c; t.tau = 0; expect(t, "tau");
  t = c; t.k_ranking = 11; expect(t, "k_ranking");
  t = c; t.m_ranking = 31; expect(t, "m_ranking");
  t = c; t.days = 1; expect(t, "days");
  t = c; t.k_pos = 40; expect(t, "k_pos");
  t = c; t.learning_rate = -1; expect(t, "learning_rate");
  CHECK(parse_loss_kind("softsort") == LossKind::kSoftSort);
  CHECK_THROWS_AS(parse_loss_kind("lambdarank"), ValidationError);
}

// Copyright 2026 The DFTopK Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

/// \file dataset.hpp
/// Seeded synthetic page-view (PV) generator and its line-delimited JSON format.
///
/// Generative model, per day t:
///   c(u)   = B^T R_t A u / sqrt(L)      user preference direction in item space
///   r(v)   = <c(u), v> + noise * eps    relevance of item features v
/// A (L x D_u) and B (L x D_i) are fixed Gaussian projections; R_t rotates the
/// latent space by t * drift radians in each coordinate pair, so the optimal
/// scorer drifts slowly from day to day.
///
/// A PV holds `base_candidates` items pulled toward c(u) by `base_shift`,
/// followed by `n_neg` padding negatives. The `k_pos` base items with highest r
/// are positive. Padding negatives are resampled until their r is below every
/// positive, so with noise = 0 the scorer <c(u), v> ranks all positives first.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <istream>
#include <mutex>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "dftopk/cascade/config.hpp"
#include "dftopk/numeric.hpp"
#include "dftopk/selection.hpp"

namespace dftopk::cascade {

struct PVRecord {
  std::size_t day = 0;
  std::vector<double> user_features;  // D_u
  std::vector<double> item_features;  // N x D_i, row-major
  std::vector<std::uint8_t> labels;   // N

  std::size_t size() const { return labels.size(); }
  std::size_t item_dim() const { return labels.empty() ? 0 : item_features.size() / labels.size(); }
  std::span<const double> item(std::size_t j) const {
    const std::size_t d = item_dim();
    return std::span<const double>(item_features).subspan(j * d, d);
  }

  bool operator==(const PVRecord&) const = default;
};

namespace detail {

inline std::seed_seq make_seed_seq(std::uint64_t seed, std::uint64_t a, std::uint64_t b,
                                   std::uint32_t tag) {
  return std::seed_seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                       static_cast<std::uint32_t>(a),    static_cast<std::uint32_t>(a >> 32),
                       static_cast<std::uint32_t>(b),    static_cast<std::uint32_t>(b >> 32),
                       tag};
}

}  // namespace detail

class DatasetGenerator {
 public:
  explicit DatasetGenerator(const TrainConfig& cfg) : cfg_(cfg) {
    validate(cfg_);
    auto seq = detail::make_seed_seq(cfg_.seed, 0, 0, 0x57a7eu);
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> normal(0.0, 1.0);
    a_.resize(cfg_.latent_dim * cfg_.user_dim);
    b_.resize(cfg_.latent_dim * cfg_.item_dim);
    for (auto& v : a_) v = normal(rng) / std::sqrt(static_cast<double>(cfg_.user_dim));
    for (auto& v : b_) v = normal(rng) / std::sqrt(static_cast<double>(cfg_.item_dim));
  }

  const TrainConfig& config() const { return cfg_; }

  /// Preference direction c(u) for a user on a given day.
  std::vector<double> preference(std::span<const double> u, std::size_t day) const {
    const std::size_t l = cfg_.latent_dim;
    std::vector<double> z(l, 0.0);
    for (std::size_t r = 0; r < l; ++r) {
      for (std::size_t c = 0; c < cfg_.user_dim; ++c) z[r] += a_[r * cfg_.user_dim + c] * u[c];
    }
    const double angle = static_cast<double>(day) * cfg_.drift;
    const double cs = std::cos(angle), sn = std::sin(angle);
    for (std::size_t r = 0; r + 1 < l; r += 2) {
      const double p = z[r], q = z[r + 1];
      z[r] = cs * p - sn * q;
      z[r + 1] = sn * p + cs * q;
    }
    std::vector<double> c(cfg_.item_dim, 0.0);
    const double scale = 1.0 / std::sqrt(static_cast<double>(l));
    for (std::size_t r = 0; r < l; ++r) {
      for (std::size_t j = 0; j < cfg_.item_dim; ++j) c[j] += b_[r * cfg_.item_dim + j] * z[r] * scale;
    }
    return c;
  }

  /// Noiseless relevance <c(u), v> of every item in a PV.
  std::vector<double> oracle_scores(const PVRecord& pv) const {
    const auto c = preference(pv.user_features, pv.day);
    std::vector<double> s(pv.size());
    for (std::size_t j = 0; j < pv.size(); ++j) s[j] = dot(c, pv.item(j));
    return s;
  }

  /// PV `index` of `day`; depends only on (seed, day, index).
  PVRecord generate_pv(std::size_t day, std::size_t index) const {
    auto seq = detail::make_seed_seq(cfg_.seed, day, index, 0x9e37u);
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t d = cfg_.item_dim;
    const std::size_t nb = cfg_.base_candidates;

    PVRecord pv;
    pv.day = day;
    pv.user_features.resize(cfg_.user_dim);
    for (auto& v : pv.user_features) v = normal(rng);
    const auto c = preference(pv.user_features, day);
    double norm = 0.0;
    for (double v : c) norm += v * v;
    norm = std::sqrt(norm);

    pv.item_features.assign(cfg_.list_size() * d, 0.0);
    pv.labels.assign(cfg_.list_size(), 0);
    std::vector<double> rel(nb);
    for (std::size_t j = 0; j < nb; ++j) {
      double* row = pv.item_features.data() + j * d;
      for (std::size_t q = 0; q < d; ++q) {
        row[q] = normal(rng) + (norm > 0.0 ? cfg_.base_shift * c[q] / norm : 0.0);
      }
      rel[j] = dot(c, std::span<const double>(row, d)) + cfg_.noise * normal(rng);
    }
    const auto top = top_m_indices(std::span<const double>(rel), cfg_.k_pos);
    double floor = rel[top.front()];
    for (std::size_t j : top) {
      pv.labels[j] = 1;
      floor = std::min(floor, rel[j]);
    }

    constexpr int kMaxAttempts = 100000;
    for (std::size_t j = nb; j < cfg_.list_size(); ++j) {
      double* row = pv.item_features.data() + j * d;
      int attempt = 0;
      for (;; ++attempt) {
        if (attempt == kMaxAttempts) {
          throw ValidationError("could not draw a padding negative below the positives; "
                                "lower base_shift or noise");
        }
        for (std::size_t q = 0; q < d; ++q) row[q] = normal(rng);
        const double r = dot(c, std::span<const double>(row, d)) + cfg_.noise * normal(rng);
        if (r < floor) break;
      }
    }
    return pv;
  }

  /// All PVs of one day, generated on `cfg.threads` threads; order is by index.
  std::vector<PVRecord> generate_day(std::size_t day) const {
    std::vector<PVRecord> out(cfg_.pvs_per_day);
    const std::size_t threads = std::min(cfg_.threads, out.size());
    if (threads <= 1) {
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = generate_pv(day, i);
      return out;
    }
    std::vector<std::thread> pool;
    std::exception_ptr error;
    std::mutex error_mutex;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t i = t; i < out.size(); i += threads) out[i] = generate_pv(day, i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
    return out;
  }

 private:
  static double dot(const std::vector<double>& a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  }

  TrainConfig cfg_;
  std::vector<double> a_;
  std::vector<double> b_;
};

// ---------------------------------------------------------------------------
// Line-delimited JSON: one object per PV with keys
//   day, user_features, item_feature_rows (array of rows), labels (0/1).
// Doubles are printed in shortest round-trip form, so import(export(x)) == x.

inline std::string pv_to_json_line(const PVRecord& pv) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t j = 0; j < pv.size(); ++j) {
    auto r = pv.item(j);
    rows.push_back(std::vector<double>(r.begin(), r.end()));
  }
  nlohmann::json labels = nlohmann::json::array();
  for (auto v : pv.labels) labels.push_back(static_cast<int>(v));
  nlohmann::json obj;
  obj["day"] = pv.day;
  obj["user_features"] = pv.user_features;
  obj["item_feature_rows"] = std::move(rows);
  obj["labels"] = std::move(labels);
  return obj.dump();
}

inline PVRecord pv_from_json_line(const std::string& line) {
  nlohmann::json obj;
  try {
    obj = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed PV line: ") + e.what());
  }
  if (!obj.is_object()) throw ValidationError("PV line is not a JSON object");
  for (const auto& [key, value] : obj.items()) {
    if (key != "day" && key != "user_features" && key != "item_feature_rows" && key != "labels") {
      throw ValidationError("unknown PV field '" + key + "'");
    }
  }
  PVRecord pv;
  try {
    pv.day = obj.at("day").get<std::size_t>();
    pv.user_features = obj.at("user_features").get<std::vector<double>>();
    const auto rows = obj.at("item_feature_rows").get<std::vector<std::vector<double>>>();
    const auto labels = obj.at("labels").get<std::vector<int>>();
    if (rows.size() != labels.size()) throw ValidationError("item rows and labels differ in length");
    if (rows.empty()) throw ValidationError("PV has no items");
    const std::size_t d = rows.front().size();
    if (d == 0) throw ValidationError("item feature rows are empty");
    for (const auto& r : rows) {
      if (r.size() != d) throw ValidationError("item feature rows differ in length");
      pv.item_features.insert(pv.item_features.end(), r.begin(), r.end());
    }
    for (int v : labels) {
      if (v != 0 && v != 1) throw ValidationError("labels must be 0 or 1");
      pv.labels.push_back(static_cast<std::uint8_t>(v));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad PV field: ") + e.what());
  }
  require_finite(std::span<const double>(pv.user_features), "user_features");
  require_finite(std::span<const double>(pv.item_features), "item_feature_rows");
  return pv;
}

inline void write_jsonl(std::ostream& os, std::span<const PVRecord> pvs) {
  for (const auto& pv : pvs) os << pv_to_json_line(pv) << '\n';
}

inline std::vector<PVRecord> read_jsonl(std::istream& is) {
  std::vector<PVRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(pv_from_json_line(line));
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace dftopk::cascade

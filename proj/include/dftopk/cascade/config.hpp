// Copyright 2026 The DFTopK Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

/// \file config.hpp
/// Training and data-generation parameters of the cascade simulator.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

#include "dftopk/numeric.hpp"

namespace dftopk::cascade {

enum class LossKind { kDFTopK, kNeuralSort, kSoftSort, kPointwiseBce };

inline constexpr LossKind kAllLossKinds[] = {LossKind::kDFTopK, LossKind::kNeuralSort,
                                             LossKind::kSoftSort, LossKind::kPointwiseBce};

inline std::string_view to_string(LossKind kind) noexcept {
  switch (kind) {
    case LossKind::kDFTopK: return "dftopk";
    case LossKind::kNeuralSort: return "neuralsort";
    case LossKind::kSoftSort: return "softsort";
    case LossKind::kPointwiseBce: return "pointwise_bce";
  }
  return "dftopk";
}

inline LossKind parse_loss_kind(std::string_view name) {
  for (LossKind k : kAllLossKinds) {
    if (to_string(k) == name) return k;
  }
  throw ValidationError("unknown loss kind '" + std::string(name) +
                        "' (expected dftopk, neuralsort, softsort or pointwise_bce)");
}

struct TrainConfig {
  LossKind loss_kind = LossKind::kDFTopK;
  std::size_t k_retrieval = 10;
  std::size_t k_ranking = 10;
  double tau = 1.0;           // DFTopK temperature
  double baseline_tau = 1.0;  // NeuralSort / SoftSort temperature
  double learning_rate = 0.01;
  std::size_t batch_pvs = 64;
  std::uint64_t seed = 0;
  std::size_t days = 15;
  std::size_t pvs_per_day = 2048;
  std::size_t base_candidates = 40;
  std::size_t n_neg = 160;
  std::size_t k_pos = 10;
  std::size_t m_retrieval = 30;
  std::size_t m_ranking = 20;
  // data generator
  std::size_t user_dim = 16;
  std::size_t item_dim = 16;
  std::size_t latent_dim = 4;
  double noise = 0.5;       // relevance noise sigma_n
  double drift = 0.05;      // latent rotation per day, radians
  double base_shift = 1.0;  // pull of base candidates toward the user's preferred direction
  // model
  std::size_t hidden = 32;
  std::size_t embed = 8;
  std::size_t threads = 1;  // evaluation / generation parallelism

  std::size_t list_size() const { return base_candidates + n_neg; }
};

/// Checks every field; throws ValidationError naming the offending key.
inline void validate(const TrainConfig& c) {
  auto fail = [](const std::string& key, const std::string& why) {
    throw ValidationError("config key '" + key + "': " + why);
  };
  auto positive = [&](double v, const char* key) {
    if (!(std::isfinite(v) && v > 0.0)) fail(key, "must be a finite positive number");
  };
  positive(c.tau, "tau");
  positive(c.baseline_tau, "baseline_tau");
  if (!(std::isfinite(c.learning_rate) && c.learning_rate >= 0.0)) {
    fail("learning_rate", "must be finite and >= 0");
  }
  if (!(std::isfinite(c.noise) && c.noise >= 0.0)) fail("noise", "must be finite and >= 0");
  if (!std::isfinite(c.drift)) fail("drift", "must be finite");
  if (!std::isfinite(c.base_shift)) fail("base_shift", "must be finite");
  if (c.batch_pvs < 1) fail("batch_pvs", "must be >= 1");
  if (c.days < 2) fail("days", "must be >= 2");
  if (c.pvs_per_day < 1) fail("pvs_per_day", "must be >= 1");
  if (c.k_pos < 1 || c.k_pos >= c.base_candidates) {
    fail("k_pos", "must satisfy 1 <= k_pos < base_candidates");
  }
  const std::size_t n = c.list_size();
  if (c.k_retrieval < 1 || c.k_retrieval >= n) fail("k_retrieval", "must satisfy 1 <= k < N");
  if (c.k_ranking < 1 || c.k_ranking > c.k_retrieval) {
    fail("k_ranking", "must satisfy 1 <= k_ranking <= k_retrieval");
  }
  if (c.m_retrieval < 1 || c.m_retrieval > n) fail("m_retrieval", "must satisfy 1 <= m <= N");
  if (c.m_ranking < 1 || c.m_ranking > c.m_retrieval) {
    fail("m_ranking", "must satisfy 1 <= m_ranking <= m_retrieval");
  }
  if (c.user_dim < 1) fail("user_dim", "must be >= 1");
  if (c.item_dim < 1) fail("item_dim", "must be >= 1");
  if (c.latent_dim < 1) fail("latent_dim", "must be >= 1");
  if (c.hidden < 1) fail("hidden", "must be >= 1");
  if (c.embed < 1) fail("embed", "must be >= 1");
  if (c.threads < 1) fail("threads", "must be >= 1");
}

}  // namespace dftopk::cascade

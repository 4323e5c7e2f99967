// Copyright 2026 The DFTopK Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

/// \file metrics.hpp
/// Recall@K@M for a single stage and joint recall of a two-stage cascade.

#include <algorithm>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dftopk/numeric.hpp"
#include "dftopk/selection.hpp"

namespace dftopk {

struct RecallResult {
  std::size_t hits = 0;
  std::size_t possible = 0;
  double recall = 0.0;
};

namespace detail {

inline std::size_t count_positives(std::span<const std::uint8_t> y) {
  std::size_t n = 0;
  for (auto v : y) n += v;
  if (n == 0) throw ValidationError("recall needs at least one positive label");
  return n;
}

inline RecallResult make_recall(std::size_t hits, std::size_t possible) {
  return RecallResult{hits, possible,
                      static_cast<double>(hits) / static_cast<double>(possible)};
}

}  // namespace detail

/// Fraction of the positives found among the top-m items by score.
template <std::floating_point T>
RecallResult recall_at_k_at_m(std::span<const T> scores, std::span<const std::uint8_t> y,
                              std::size_t m) {
  require_finite(scores, "scores");
  require_labels(y, scores.size());
  const std::size_t possible = detail::count_positives(y);
  std::size_t hits = 0;
  for (std::size_t i : top_m_indices(scores, m)) hits += y[i];
  return detail::make_recall(hits, possible);
}

/// Stage one keeps the top m_retrieval items by retrieval score; stage two keeps
/// the top m_ranking of those survivors by ranking score.
template <std::floating_point T>
RecallResult joint_recall(std::span<const T> retrieval, std::span<const T> ranking,
                          std::span<const std::uint8_t> y, std::size_t m_retrieval,
                          std::size_t m_ranking) {
  if (retrieval.size() != ranking.size()) {
    throw ValidationError("retrieval and ranking score lengths differ");
  }
  require_finite(retrieval, "retrieval scores");
  require_finite(ranking, "ranking scores");
  require_labels(y, retrieval.size());
  if (m_ranking < 1 || m_ranking > m_retrieval) {
    throw RangeError("joint recall needs 1 <= m_ranking <= m_retrieval");
  }
  const std::size_t possible = detail::count_positives(y);
  auto survivors = top_m_indices(retrieval, m_retrieval);
  // Ranking among survivors keeps the global index tie-break.
  std::vector<T> sub(survivors.size());
  std::sort(survivors.begin(), survivors.end());
  for (std::size_t p = 0; p < survivors.size(); ++p) sub[p] = ranking[survivors[p]];
  std::size_t hits = 0;
  for (std::size_t p : top_m_indices(std::span<const T>(sub), m_ranking)) {
    hits += y[survivors[p]];
  }
  return detail::make_recall(hits, possible);
}

/// Running mean of per-request recall values.
class RecallMean {
 public:
  void add(const RecallResult& r) {
    sum_ += r.recall;
    hits_ += r.hits;
    possible_ += r.possible;
    ++count_;
  }
  std::size_t count() const { return count_; }
  /// Mean of per-request recalls; 0 when empty.
  double mean() const { return count_ == 0 ? 0.0 : sum_ / static_cast<double>(count_); }
  /// Pooled hits / possible over all requests; 0 when empty.
  double pooled() const {
    return possible_ == 0 ? 0.0 : static_cast<double>(hits_) / static_cast<double>(possible_);
  }

 private:
  double sum_ = 0.0;
  std::size_t hits_ = 0;
  std::size_t possible_ = 0;
  std::size_t count_ = 0;
};

}  // namespace dftopk

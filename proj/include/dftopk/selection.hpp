// Copyright 2026 The DFTopK Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

/// \file selection.hpp
/// Hard Top-K selection in average linear time.
///
/// Ranking is a strict total order: item i ranks above item j when
/// x[i] > x[j], or x[i] == x[j] and i < j. Every routine in the library
/// (selection, hard masks, recall metrics) uses this order, so ties
/// resolve identically everywhere.

#include <algorithm>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "dftopk/numeric.hpp"

namespace dftopk {

/// The k-th and (k+1)-th largest entries of a score vector (1-based ranks).
template <std::floating_point T>
struct RankPair {
  T kth_value{};
  T kplus1_value{};
  std::size_t kth_index{};
  std::size_t kplus1_index{};
};

struct HardMask {
  std::vector<std::uint8_t> bits;
};

template <std::floating_point T>
inline bool ranks_before(std::span<const T> x, std::size_t i, std::size_t j) noexcept {
  return x[i] > x[j] || (x[i] == x[j] && i < j);
}

inline void require_rank_k(std::size_t k, std::size_t n) {
  if (k < 1 || k + 1 > n) {
    throw RangeError("k=" + std::to_string(k) + " outside [1, N-1] for N=" +
                     std::to_string(n));
  }
}

namespace detail {

/// Partially orders an index permutation so that its first m entries are the
/// top-m items. Position m-1 holds the m-th ranked item.
template <std::floating_point T>
std::vector<std::size_t> partition_top(std::span<const T> x, std::size_t m) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto before = [x](std::size_t a, std::size_t b) { return ranks_before(x, a, b); };
  std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(m - 1),
                   idx.end(), before);
  return idx;
}

}  // namespace detail

/// Finds the k-th and (k+1)-th ranked items with introselect plus a linear
/// scan of the tail. Average O(N); never sorts the whole vector.
template <std::floating_point T>
RankPair<T> select_rank_pair(std::span<const T> x, std::size_t k) {
  require_scores(x);
  require_rank_k(k, x.size());
  const auto idx = detail::partition_top(x, k);
  const std::size_t kth = idx[k - 1];
  std::size_t next = idx[k];
  for (std::size_t p = k + 1; p < idx.size(); ++p) {
    if (ranks_before(x, idx[p], next)) next = idx[p];
  }
  return RankPair<T>{x[kth], x[next], kth, next};
}

template <std::floating_point T>
HardMask hard_topk(std::span<const T> x, std::size_t k) {
  require_scores(x);
  require_rank_k(k, x.size());
  const auto idx = detail::partition_top(x, k);
  HardMask mask{std::vector<std::uint8_t>(x.size(), 0)};
  for (std::size_t p = 0; p < k; ++p) mask.bits[idx[p]] = 1;
  return mask;
}

/// Indices of the top-m items, 1 <= m <= N, in no particular order.
template <std::floating_point T>
std::vector<std::size_t> top_m_indices(std::span<const T> x, std::size_t m) {
  if (m < 1 || m > x.size()) {
    throw RangeError("m=" + std::to_string(m) + " outside [1, N] for N=" +
                     std::to_string(x.size()));
  }
  auto idx = detail::partition_top(x, m);
  idx.resize(m);
  return idx;
}

/// Full descending order under the library tie-break. O(N log N); used by
/// baselines that need sorted scores and by test oracles.
template <std::floating_point T>
std::vector<std::size_t> descending_order(std::span<const T> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(),
            [x](std::size_t a, std::size_t b) { return ranks_before(x, a, b); });
  return idx;
}

}  // namespace dftopk

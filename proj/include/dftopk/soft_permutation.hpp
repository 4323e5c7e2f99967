// Copyright 2026 The DFTopK Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

/// \file soft_permutation.hpp
/// Soft permutation baselines (NeuralSort, SoftSort), the expected-TopK
/// objective built on them, and a gradient-conflict probe.
///
/// Row r (0-based) of a soft permutation is a softmax over items; entry (r, j)
/// is the relaxed probability that item j holds rank r + 1.
///   NeuralSort: logits_rj = ((N - 1 - 2r) x_j - sum_l |x_j - x_l|) / tau
///   SoftSort:   logits_rj = -|sorted_desc(x)_r - x_j| / tau
/// Both are O(N^2) in time and memory for a full matrix.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dftopk/numeric.hpp"
#include "dftopk/selection.hpp"
#include "dftopk/topk_operator.hpp"

namespace dftopk {

enum class PermutationKind { kNeuralSort, kSoftSort };

inline std::string_view to_string(PermutationKind kind) noexcept {
  return kind == PermutationKind::kNeuralSort ? "neuralsort" : "softsort";
}

inline PermutationKind parse_permutation_kind(std::string_view name) {
  if (name == "neuralsort") return PermutationKind::kNeuralSort;
  if (name == "softsort") return PermutationKind::kSoftSort;
  throw ValidationError("unknown permutation kind '" + std::string(name) + "'");
}

/// Row-major `rows x cols` matrix. A full soft permutation has rows == cols;
/// losses that only look at the first K ranks build just those rows.
template <std::floating_point T>
struct SoftPermutation {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  T& operator()(std::size_t r, std::size_t c) noexcept { return data[r * cols + c]; }
  T operator()(std::size_t r, std::size_t c) const noexcept { return data[r * cols + c]; }
  std::span<const T> row(std::size_t r) const noexcept {
    return std::span<const T>(data).subspan(r * cols, cols);
  }
};

namespace detail {

template <std::floating_point T>
void softmax_inplace(std::span<T> v) noexcept {
  const T mx = *std::max_element(v.begin(), v.end());
  T total = T(0);
  for (T& e : v) {
    e = math::exp(e - mx);
    total += e;
  }
  for (T& e : v) e /= total;
}

template <std::floating_point T>
inline T sign(T v) noexcept {
  return static_cast<T>((v > T(0)) - (v < T(0)));
}

/// sum_l |x_j - x_l| for every j.
template <std::floating_point T>
std::vector<T> abs_diff_row_sums(std::span<const T> x) {
  std::vector<T> b(x.size(), T(0));
  for (std::size_t j = 0; j < x.size(); ++j) {
    T s = T(0);
    for (std::size_t l = 0; l < x.size(); ++l) s += math::abs(x[j] - x[l]);
    b[j] = s;
  }
  return b;
}

inline void require_rows(std::size_t rows, std::size_t n) {
  if (rows < 1 || rows > n) {
    throw RangeError("row count " + std::to_string(rows) + " outside [1, N] for N=" +
                     std::to_string(n));
  }
}

/// Softmax backward, row by row: returns dL/dlogits given dL/dP.
template <std::floating_point T>
std::vector<T> softmax_rows_backward(const SoftPermutation<T>& p,
                                     std::span<const T> upstream) {
  std::vector<T> du(p.data.size());
  for (std::size_t r = 0; r < p.rows; ++r) {
    T dot = T(0);
    for (std::size_t j = 0; j < p.cols; ++j) dot += upstream[r * p.cols + j] * p(r, j);
    for (std::size_t j = 0; j < p.cols; ++j) {
      du[r * p.cols + j] = p(r, j) * (upstream[r * p.cols + j] - dot);
    }
  }
  return du;
}

}  // namespace detail

/// First `rows` rows of the NeuralSort relaxation.
template <std::floating_point T>
SoftPermutation<T> neuralsort_rows(std::span<const T> x, T tau, std::size_t rows) {
  require_scores(x);
  require_positive(tau, "temperature tau");
  detail::require_rows(rows, x.size());
  const std::size_t n = x.size();
  const auto b = detail::abs_diff_row_sums(x);
  SoftPermutation<T> p{rows, n, std::vector<T>(rows * n)};
  for (std::size_t r = 0; r < rows; ++r) {
    const T c = static_cast<T>(n) - T(1) - T(2) * static_cast<T>(r);
    for (std::size_t j = 0; j < n; ++j) p(r, j) = (c * x[j] - b[j]) / tau;
    detail::softmax_inplace(std::span<T>(p.data).subspan(r * n, n));
  }
  return p;
}

template <std::floating_point T>
SoftPermutation<T> neuralsort_forward(std::span<const T> x, T tau) {
  return neuralsort_rows(x, tau, x.size());
}

/// upstream^T dP/dx for a NeuralSort matrix `p` produced from `x`.
template <std::floating_point T>
std::vector<T> neuralsort_vjp(std::span<const T> x, T tau, const SoftPermutation<T>& p,
                              std::span<const T> upstream) {
  if (upstream.size() != p.data.size() || p.cols != x.size()) {
    throw ValidationError("neuralsort_vjp: dimension mismatch");
  }
  const std::size_t n = x.size();
  const auto du = detail::softmax_rows_backward(p, upstream);
  std::vector<T> dx(n, T(0));
  std::vector<T> db(n, T(0));  // dL / d(sum_l |x_j - x_l|)
  for (std::size_t r = 0; r < p.rows; ++r) {
    const T c = static_cast<T>(n) - T(1) - T(2) * static_cast<T>(r);
    for (std::size_t j = 0; j < n; ++j) {
      dx[j] += c * du[r * n + j] / tau;
      db[j] -= du[r * n + j] / tau;
    }
  }
  for (std::size_t m = 0; m < n; ++m) {
    T acc = T(0);
    for (std::size_t l = 0; l < n; ++l) acc += (db[m] + db[l]) * detail::sign(x[m] - x[l]);
    dx[m] += acc;
  }
  return dx;
}

/// First `rows` rows of the SoftSort relaxation.
template <std::floating_point T>
SoftPermutation<T> softsort_rows(std::span<const T> x, T tau, std::size_t rows) {
  require_scores(x);
  require_positive(tau, "temperature tau");
  detail::require_rows(rows, x.size());
  const std::size_t n = x.size();
  const auto order = descending_order(x);
  SoftPermutation<T> p{rows, n, std::vector<T>(rows * n)};
  for (std::size_t r = 0; r < rows; ++r) {
    const T s = x[order[r]];
    for (std::size_t j = 0; j < n; ++j) p(r, j) = -math::abs(s - x[j]) / tau;
    detail::softmax_inplace(std::span<T>(p.data).subspan(r * n, n));
  }
  return p;
}

template <std::floating_point T>
SoftPermutation<T> softsort_forward(std::span<const T> x, T tau) {
  return softsort_rows(x, tau, x.size());
}

/// upstream^T dP/dx for a SoftSort matrix. The sort permutation is held fixed;
/// gradient flows to the sorted value through the item that occupies the rank.
template <std::floating_point T>
std::vector<T> softsort_vjp(std::span<const T> x, T tau, const SoftPermutation<T>& p,
                            std::span<const T> upstream) {
  if (upstream.size() != p.data.size() || p.cols != x.size()) {
    throw ValidationError("softsort_vjp: dimension mismatch");
  }
  const std::size_t n = x.size();
  const auto order = descending_order(x);
  const auto du = detail::softmax_rows_backward(p, upstream);
  std::vector<T> dx(n, T(0));
  for (std::size_t r = 0; r < p.rows; ++r) {
    const T s = x[order[r]];
    T ds = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      const T sg = detail::sign(s - x[j]) / tau;
      dx[j] += du[r * n + j] * sg;
      ds -= du[r * n + j] * sg;
    }
    dx[order[r]] += ds;
  }
  return dx;
}

template <std::floating_point T>
SoftPermutation<T> soft_permutation_rows(std::span<const T> x, T tau, std::size_t rows,
                                         PermutationKind kind) {
  return kind == PermutationKind::kNeuralSort ? neuralsort_rows(x, tau, rows)
                                              : softsort_rows(x, tau, rows);
}

template <std::floating_point T>
std::vector<T> soft_permutation_vjp(std::span<const T> x, T tau,
                                    const SoftPermutation<T>& p,
                                    std::span<const T> upstream, PermutationKind kind) {
  return kind == PermutationKind::kNeuralSort ? neuralsort_vjp(x, tau, p, upstream)
                                              : softsort_vjp(x, tau, p, upstream);
}

/// sum_j y_j sum_{r < K} P(r, j): expected number of positives in the top K ranks.
template <std::floating_point T>
T expected_topk(const SoftPermutation<T>& p, std::span<const std::uint8_t> y,
                std::size_t top) {
  if (y.size() != p.cols) {
    throw ValidationError("expected_topk: label length " + std::to_string(y.size()) +
                          " does not match matrix width " + std::to_string(p.cols));
  }
  if (top < 1 || top > p.cols) {
    throw RangeError("expected_topk: K=" + std::to_string(top) + " outside [1, N]");
  }
  if (top > p.rows) {
    throw ValidationError("expected_topk: matrix has only " + std::to_string(p.rows) +
                          " rows, K=" + std::to_string(top));
  }
  T total = T(0);
  for (std::size_t r = 0; r < top; ++r) {
    for (std::size_t j = 0; j < p.cols; ++j) {
      if (y[j]) total += p(r, j);
    }
  }
  return total;
}

/// Negated expected TopK. Only the first K rows are materialized.
template <std::floating_point T>
T permutation_loss(std::span<const T> x, std::span<const std::uint8_t> y,
                   std::size_t top, T tau, PermutationKind kind) {
  require_labels(y, x.size());
  const auto p = soft_permutation_rows(x, tau, top, kind);
  return -expected_topk(p, y, top);
}

template <std::floating_point T>
LossAndGrad<T> permutation_loss_with_grad(std::span<const T> x,
                                          std::span<const std::uint8_t> y,
                                          std::size_t top, T tau, PermutationKind kind) {
  require_labels(y, x.size());
  const auto p = soft_permutation_rows(x, tau, top, kind);
  LossAndGrad<T> out;
  out.loss = -expected_topk(p, y, top);
  std::vector<T> upstream(p.data.size());
  for (std::size_t r = 0; r < p.rows; ++r) {
    for (std::size_t j = 0; j < p.cols; ++j) upstream[r * p.cols + j] = -T(y[j]);
  }
  out.grad = soft_permutation_vjp(x, tau, p, std::span<const T>(upstream), kind);
  return out;
}

namespace detail {

inline std::vector<std::size_t> positive_indices(std::span<const std::uint8_t> y) {
  std::vector<std::size_t> pos;
  for (std::size_t j = 0; j < y.size(); ++j) {
    if (y[j]) pos.push_back(j);
  }
  if (pos.size() < 2) {
    throw ValidationError("conflict metric needs at least two positive labels");
  }
  return pos;
}

}  // namespace detail

/// Gradient-conflict probe for a soft permutation. For each rank row r < K and
/// each ordered pair of distinct positives (j, j'), checks whether raising
/// x_j' lowers P(r, j), i.e. whether the positives compete for that rank.
/// Returns the mean over rows of the fraction of competing pairs.
template <std::floating_point T>
T conflict_metric(std::span<const T> x, std::span<const std::uint8_t> y,
                  std::size_t top, T tau,
                  PermutationKind kind = PermutationKind::kNeuralSort) {
  require_labels(y, x.size());
  const auto pos = detail::positive_indices(y);
  const auto p = soft_permutation_rows(x, tau, top, kind);
  std::vector<T> probe(p.data.size(), T(0));
  T row_mean = T(0);
  for (std::size_t r = 0; r < top; ++r) {
    std::size_t competing = 0;
    std::size_t pairs = 0;
    for (std::size_t j : pos) {
      probe[r * p.cols + j] = T(1);
      const auto jac = soft_permutation_vjp(x, tau, p, std::span<const T>(probe), kind);
      probe[r * p.cols + j] = T(0);
      for (std::size_t jp : pos) {
        if (jp == j) continue;
        ++pairs;
        if (jac[jp] < T(0)) ++competing;
      }
    }
    row_mean += static_cast<T>(competing) / static_cast<T>(pairs);
  }
  return row_mean / static_cast<T>(top);
}

/// The same probe applied to the closed-form operator: the fraction of ordered
/// positive pairs (j, j'), j' off the rank boundary, for which raising x_j'
/// lowers p_j. Off-boundary cross derivatives are identically zero.
template <std::floating_point T>
T dftopk_conflict_metric(std::span<const T> x, std::span<const std::uint8_t> y,
                         const TopKConfig<T>& cfg) {
  require_labels(y, x.size());
  const auto pos = detail::positive_indices(y);
  const auto pair = select_rank_pair(x, cfg.k);
  std::vector<T> probe(x.size(), T(0));
  std::size_t competing = 0;
  std::size_t pairs = 0;
  for (std::size_t j : pos) {
    probe[j] = T(1);
    const auto jac = dftopk_vjp(x, cfg, std::span<const T>(probe));
    probe[j] = T(0);
    for (std::size_t jp : pos) {
      if (jp == j || jp == pair.kth_index || jp == pair.kplus1_index) continue;
      ++pairs;
      if (jac[jp] < T(0)) ++competing;
    }
  }
  return pairs == 0 ? T(0) : static_cast<T>(competing) / static_cast<T>(pairs);
}

}  // namespace dftopk

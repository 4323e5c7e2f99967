// Copyright 2026 The DFTopK Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

/// \file topk_operator.hpp
/// The closed-form differentiable Top-K operator, its BCE loss with analytic
/// gradients, and a strict sum-to-k reference operator found by bisection.
///
/// Forward:  theta = (x_[k] + x_[k+1]) / 2,  p_i = sigmoid((x_i - theta) / tau).
/// Backward: the threshold depends on x only through the two boundary items,
/// so d(x_i - theta)/dx = e_i - (e_kth + e_kplus1) / 2. The boundary indices are
/// treated as constants of the forward pass (the operator is smooth inside each
/// region of fixed rank order).

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dftopk/numeric.hpp"
#include "dftopk/selection.hpp"

namespace dftopk {

template <std::floating_point T>
struct TopKConfig {
  std::size_t k = 1;
  T tau = T(1);
};

template <std::floating_point T>
struct SoftMask {
  std::vector<T> probs;
};

/// Output of the forward pass. `pair` is kept so a backward pass can reuse the
/// boundary indices without another selection.
template <std::floating_point T>
struct TopKForward {
  SoftMask<T> mask;
  RankPair<T> pair;
  T threshold{};
};

template <std::floating_point T>
struct LossAndGrad {
  T loss{};
  std::vector<T> grad;
};

template <std::floating_point T>
inline void require_config(const TopKConfig<T>& cfg, std::size_t n) {
  require_rank_k(cfg.k, n);
  require_positive(cfg.tau, "temperature tau");
}

namespace detail {

template <std::floating_point T>
inline T midpoint_threshold(const RankPair<T>& pair) noexcept {
  // halves first so the sum cannot overflow for scores near the type's max
  return T(0.5) * pair.kth_value + T(0.5) * pair.kplus1_value;
}

/// x - theta evaluated as ((x - a) + (x - b)) / 2. The two boundary items get
/// exactly opposite shifts (+-(a - b)/2), so their probabilities sum to one up
/// to sigmoid rounding; the map stays monotone in x and exact under shifts.
template <std::floating_point T>
inline T centered(T v, const RankPair<T>& pair) noexcept {
  return T(0.5) * ((v - pair.kth_value) + (v - pair.kplus1_value));
}

/// Subtracts half the coordinate sum from both boundary entries. This is the
/// transpose of the shift Jacobian I - (e_kth + e_kplus1) 1^T / 2.
template <std::floating_point T>
void apply_shift_transpose(std::vector<T>& g, const RankPair<T>& pair) noexcept {
  T total = T(0);
  for (T v : g) total += v;
  const T half = T(0.5) * total;
  g[pair.kth_index] -= half;
  g[pair.kplus1_index] -= half;
}

}  // namespace detail

template <std::floating_point T>
TopKForward<T> dftopk_forward(std::span<const T> x, const TopKConfig<T>& cfg) {
  require_scores(x);
  require_config(cfg, x.size());
  TopKForward<T> out;
  out.pair = select_rank_pair(x, cfg.k);
  out.threshold = detail::midpoint_threshold(out.pair);
  out.mask.probs.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out.mask.probs[i] = sigmoid(detail::centered(x[i], out.pair) / cfg.tau);
  }
  return out;
}

/// Mean binary cross-entropy between the soft mask and labels, evaluated in
/// log space: -log p = softplus(-z), -log(1 - p) = softplus(z).
template <std::floating_point T>
T dftopk_loss(std::span<const T> x, std::span<const std::uint8_t> y,
              const TopKConfig<T>& cfg) {
  require_scores(x);
  require_labels(y, x.size());
  require_config(cfg, x.size());
  const auto pair = select_rank_pair(x, cfg.k);
  T sum = T(0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T z = detail::centered(x[i], pair) / cfg.tau;
    sum += y[i] ? softplus(-z) : softplus(z);
  }
  return sum / static_cast<T>(x.size());
}

/// Loss and gradient from a single selection pass.
template <std::floating_point T>
LossAndGrad<T> dftopk_loss_with_grad(std::span<const T> x,
                                     std::span<const std::uint8_t> y,
                                     const TopKConfig<T>& cfg) {
  require_scores(x);
  require_labels(y, x.size());
  require_config(cfg, x.size());
  const auto pair = select_rank_pair(x, cfg.k);
  const T n = static_cast<T>(x.size());
  const T scale = T(1) / (n * cfg.tau);
  LossAndGrad<T> out;
  out.grad.resize(x.size());
  T sum = T(0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T z = detail::centered(x[i], pair) / cfg.tau;
    sum += y[i] ? softplus(-z) : softplus(z);
    out.grad[i] = scale * (sigmoid(z) - T(y[i]));
  }
  out.loss = sum / n;
  detail::apply_shift_transpose(out.grad, pair);
  return out;
}

/// dL/dx for dftopk_loss. Off-boundary entries are (p_i - y_i) / (N tau);
/// the two boundary entries additionally carry minus half the total.
template <std::floating_point T>
std::vector<T> dftopk_loss_backward(std::span<const T> x,
                                    std::span<const std::uint8_t> y,
                                    const TopKConfig<T>& cfg) {
  return dftopk_loss_with_grad(x, y, cfg).grad;
}

/// Vector-Jacobian product of the soft mask: returns upstream^T d p / d x.
template <std::floating_point T>
std::vector<T> dftopk_vjp(std::span<const T> x, const TopKConfig<T>& cfg,
                          std::span<const T> upstream) {
  require_scores(x);
  require_config(cfg, x.size());
  if (upstream.size() != x.size()) {
    throw ValidationError("upstream length " + std::to_string(upstream.size()) +
                          " does not match score length " +
                          std::to_string(x.size()));
  }
  require_finite(upstream, "upstream gradient");
  const auto pair = select_rank_pair(x, cfg.k);
  std::vector<T> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T z = detail::centered(x[i], pair) / cfg.tau;
    g[i] = upstream[i] * sigmoid_grad(z) / cfg.tau;
  }
  detail::apply_shift_transpose(g, pair);
  return g;
}

/// |sum(p) - k|: how far a soft mask is from selecting exactly k items.
template <std::floating_point T>
T sum_deviation(const SoftMask<T>& mask, std::size_t k) noexcept {
  T total = T(0);
  for (T p : mask.probs) total += p;
  return math::abs(total - static_cast<T>(k));
}

// ---------------------------------------------------------------------------
// Strict sum-to-k reference: theta* solves sum_i sigmoid((x_i - theta)/tau) = k.

template <std::floating_point T>
struct StrictForward {
  SoftMask<T> mask;
  T threshold{};
  T residual{};  // sum(p) - k at the returned threshold
};

namespace detail {

template <std::floating_point T>
T strict_excess(std::span<const T> x, T theta, T tau, std::size_t k) noexcept {
  T total = T(0);
  for (T v : x) total += sigmoid((v - theta) / tau);
  return total - static_cast<T>(k);
}

}  // namespace detail

/// Bisection on the strictly decreasing excess function over
/// [min(x) - 40 tau, max(x) + 40 tau]. Stops once |excess| <= eps, or when the
/// bracket has collapsed to adjacent floating-point values, in which case the
/// endpoint with the smaller residual is returned.
template <std::floating_point T>
T strict_threshold(std::span<const T> x, const TopKConfig<T>& cfg, T eps) {
  require_scores(x);
  require_config(cfg, x.size());
  require_positive(eps, "bisection tolerance eps");
  const auto [mn, mx] = std::minmax_element(x.begin(), x.end());
  T lo = *mn - T(40) * cfg.tau;  // excess(lo) > 0
  T hi = *mx + T(40) * cfg.tau;  // excess(hi) < 0
  T g_lo = detail::strict_excess(x, lo, cfg.tau, cfg.k);
  T g_hi = detail::strict_excess(x, hi, cfg.tau, cfg.k);
  for (int iter = 0; iter < 4096; ++iter) {
    if (math::abs(g_lo) <= eps) return lo;
    if (math::abs(g_hi) <= eps) return hi;
    const T mid = lo + (hi - lo) / T(2);
    if (!(mid > lo && mid < hi)) break;
    const T g_mid = detail::strict_excess(x, mid, cfg.tau, cfg.k);
    if (math::abs(g_mid) <= eps) return mid;
    if (g_mid > T(0)) {
      lo = mid;
      g_lo = g_mid;
    } else {
      hi = mid;
      g_hi = g_mid;
    }
  }
  return math::abs(g_lo) <= math::abs(g_hi) ? lo : hi;
}

template <std::floating_point T>
StrictForward<T> strict_topk_forward(std::span<const T> x, const TopKConfig<T>& cfg,
                                     T eps) {
  StrictForward<T> out;
  out.threshold = strict_threshold(x, cfg, eps);
  out.mask.probs.resize(x.size());
  T total = T(0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    out.mask.probs[i] = sigmoid((x[i] - out.threshold) / cfg.tau);
    total += out.mask.probs[i];
  }
  out.residual = total - static_cast<T>(cfg.k);
  return out;
}

/// VJP of the strict operator by implicit differentiation of the sum
/// constraint: d theta / d x_j = s_j / sum(s), with s = sigmoid'(z).
template <std::floating_point T>
std::vector<T> strict_topk_vjp(std::span<const T> x, const TopKConfig<T>& cfg,
                               T threshold, std::span<const T> upstream) {
  if (upstream.size() != x.size()) {
    throw ValidationError("upstream length does not match score length");
  }
  std::vector<T> slope(x.size());
  std::vector<T> g(x.size());
  T slope_sum = T(0);
  T g_sum = T(0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    slope[i] = sigmoid_grad((x[i] - threshold) / cfg.tau);
    g[i] = upstream[i] * slope[i] / cfg.tau;
    slope_sum += slope[i];
    g_sum += g[i];
  }
  if (slope_sum > T(0)) {
    for (std::size_t i = 0; i < x.size(); ++i) g[i] -= g_sum * slope[i] / slope_sum;
  }
  return g;
}

/// BCE loss of the strict operator with its gradient. With a_i = dL/dz_i and
/// w = d theta / d x, the gradient is (a - w * sum(a)) / tau.
template <std::floating_point T>
LossAndGrad<T> strict_loss_with_grad(std::span<const T> x,
                                     std::span<const std::uint8_t> y,
                                     const TopKConfig<T>& cfg, T eps) {
  require_labels(y, x.size());
  const T theta = strict_threshold(x, cfg, eps);
  const T n = static_cast<T>(x.size());
  LossAndGrad<T> out;
  out.grad.resize(x.size());
  std::vector<T> slope(x.size());
  T sum = T(0);
  T slope_sum = T(0);
  T a_sum = T(0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T z = (x[i] - theta) / cfg.tau;
    sum += y[i] ? softplus(-z) : softplus(z);
    out.grad[i] = (sigmoid(z) - T(y[i])) / n;
    slope[i] = sigmoid_grad(z);
    slope_sum += slope[i];
    a_sum += out.grad[i];
  }
  out.loss = sum / n;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T w = slope_sum > T(0) ? slope[i] / slope_sum : T(0);
    out.grad[i] = (out.grad[i] - a_sum * w) / cfg.tau;
  }
  return out;
}

}  // namespace dftopk

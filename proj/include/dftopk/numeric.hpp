// Copyright 2026 The DFTopK Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>

#if defined(__SIZEOF_FLOAT128__) && !defined(__STRICT_ANSI__) && __has_include(<quadmath.h>)
#include <quadmath.h>
#define DFTOPK_HAS_FLOAT128 1
#endif

namespace dftopk {

/// Elementary functions that also accept __float128 (used by the
/// finite-difference oracles); everything else forwards to <cmath>.
namespace math {

#ifdef DFTOPK_HAS_FLOAT128
template <typename T>
inline constexpr bool is_quad = std::is_same_v<T, __float128>;
#else
template <typename T>
inline constexpr bool is_quad = false;
#endif

template <std::floating_point T>
inline T exp(T v) noexcept {
#ifdef DFTOPK_HAS_FLOAT128
  if constexpr (is_quad<T>) return expq(v);
  else
#endif
    return std::exp(v);
}

template <std::floating_point T>
inline T log(T v) noexcept {
#ifdef DFTOPK_HAS_FLOAT128
  if constexpr (is_quad<T>) return logq(v);
  else
#endif
    return std::log(v);
}

template <std::floating_point T>
inline T log1p(T v) noexcept {
#ifdef DFTOPK_HAS_FLOAT128
  if constexpr (is_quad<T>) return log1pq(v);
  else
#endif
    return std::log1p(v);
}

template <std::floating_point T>
inline T abs(T v) noexcept {
  return v < T(0) ? -v : v;
}

template <std::floating_point T>
inline bool isfinite(T v) noexcept {
#ifdef DFTOPK_HAS_FLOAT128
  if constexpr (is_quad<T>) return finiteq(v) != 0;
  else
#endif
    return std::isfinite(v);
}

}  // namespace math

/// Thrown for malformed inputs: non-finite scores, non-binary labels,
/// mismatched lengths, bad configuration values.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a rank/count parameter (k, m) is outside its admissible range.
class RangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

template <std::floating_point T>
inline T sigmoid(T z) noexcept {
  // exp() is only ever evaluated at a non-positive argument
  if (z >= T(0)) {
    return T(1) / (T(1) + math::exp(-z));
  }
  const T e = math::exp(z);
  return e / (T(1) + e);
}

/// log(1 + e^z) without overflow for large z or underflow to 0 for small z.
template <std::floating_point T>
inline T softplus(T z) noexcept {
  return std::max(z, T(0)) + math::log1p(math::exp(-math::abs(z)));
}

/// log sigmoid(z) = -softplus(-z); never -inf for finite z.
template <std::floating_point T>
inline T log_sigmoid(T z) noexcept {
  return -softplus(-z);
}

/// sigmoid'(z) = sigmoid(z) * sigmoid(-z), written so both factors stay accurate.
template <std::floating_point T>
inline T sigmoid_grad(T z) noexcept {
  return sigmoid(z) * sigmoid(-z);
}

template <std::floating_point T>
inline void require_finite(std::span<const T> x, const char* what) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!math::isfinite(x[i])) {
      throw ValidationError(std::string(what) + ": non-finite value at index " +
                            std::to_string(i));
    }
  }
}

/// Scores must have at least two finite entries.
template <std::floating_point T>
inline void require_scores(std::span<const T> x) {
  if (x.size() < 2) {
    throw ValidationError("score vector needs N >= 2 entries, got " +
                          std::to_string(x.size()));
  }
  require_finite(x, "score vector");
}

inline void require_labels(std::span<const std::uint8_t> y, std::size_t n) {
  if (y.size() != n) {
    throw ValidationError("label vector length " + std::to_string(y.size()) +
                          " does not match score length " + std::to_string(n));
  }
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] > 1) {
      throw ValidationError("label at index " + std::to_string(i) +
                            " is not binary");
    }
  }
}

template <std::floating_point T>
inline void require_positive(T v, const char* what) {
  if (!(v > T(0)) || !math::isfinite(v)) {
    throw ValidationError(std::string(what) + " must be a finite positive number");
  }
}

/// |a - b| / max(1e-8, |a|, |b|)
template <std::floating_point T>
inline T relative_error(T a, T b) noexcept {
  const T scale = std::max({T(1e-8), math::abs(a), math::abs(b)});
  return math::abs(a - b) / scale;
}

}  // namespace dftopk

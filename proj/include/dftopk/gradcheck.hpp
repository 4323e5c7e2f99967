// Copyright 2026 The DFTopK Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

/// \file gradcheck.hpp
/// Finite-difference oracle and the seeded property suite that exercises every
/// invariant of the Top-K operators and the soft permutation baselines.
///
/// Oracle precision. The relative error floor is 1e-8, so the oracle must be
/// accurate to ~1e-13 absolute on tiny gradient coordinates:
///  - the operator checks difference a reference loss term by term in long
///    double, so terms untouched by a perturbation cancel exactly;
///  - the baseline checks evaluate the loss in __float128, since every softmax
///    entry moves with every coordinate.
/// At tau = 1e-3 a plain central difference with step 1e-5 has a relative
/// truncation error near (step/tau)^2/6 ~ 1.7e-5, so the oracles combine steps
/// h and h/2 (Richardson extrapolation) to cancel the leading error term.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "dftopk/numeric.hpp"
#include "dftopk/selection.hpp"
#include "dftopk/soft_permutation.hpp"
#include "dftopk/topk_operator.hpp"

namespace dftopk {

/// g_i = (f(x + step e_i) - f(x - step e_i)) / (2 step)
template <std::floating_point T, typename F>
std::vector<T> central_difference(F&& f, std::span<const T> x, T step) {
  require_positive(step, "finite-difference step");
  std::vector<T> xp(x.begin(), x.end());
  std::vector<T> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T orig = xp[i];
    xp[i] = orig + step;
    const T up = f(std::span<const T>(xp));
    xp[i] = orig - step;
    const T down = f(std::span<const T>(xp));
    xp[i] = orig;
    g[i] = (up - down) / (T(2) * step);
  }
  return g;
}

/// (4 D(step/2) - D(step)) / 3 with D the central difference; O(step^4) error.
template <std::floating_point T, typename F>
std::vector<T> richardson_difference(F&& f, std::span<const T> x, T step) {
  const auto coarse = central_difference<T>(f, x, step);
  const auto fine = central_difference<T>(f, x, step / T(2));
  std::vector<T> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = (T(4) * fine[i] - coarse[i]) / T(3);
  return g;
}

/// Central difference of f = sum_j f_j in coordinate i, accumulated as
/// sum_j (f_j(x+) - f_j(x-)). Terms that do not depend on x_i cancel exactly
/// instead of leaving rounding noise of the full sum behind.
template <std::floating_point T, typename Terms>
T central_difference_terms_at(Terms&& terms, std::vector<T>& x, std::size_t i, T step) {
  const T orig = x[i];
  x[i] = orig + step;
  const std::vector<T> up = terms(std::span<const T>(x));
  x[i] = orig - step;
  const std::vector<T> down = terms(std::span<const T>(x));
  x[i] = orig;
  T acc = T(0);
  for (std::size_t j = 0; j < up.size(); ++j) acc += up[j] - down[j];
  return acc / (T(2) * step);
}

template <std::floating_point T, typename Terms>
T richardson_difference_terms_at(Terms&& terms, std::vector<T>& x, std::size_t i, T step) {
  const T coarse = central_difference_terms_at<T>(terms, x, i, step);
  const T fine = central_difference_terms_at<T>(terms, x, i, step / T(2));
  return (T(4) * fine - coarse) / T(3);
}

template <std::floating_point T, typename Terms>
std::vector<T> richardson_difference_terms(Terms&& terms, std::span<const T> x, T step) {
  require_positive(step, "finite-difference step");
  std::vector<T> xp(x.begin(), x.end());
  std::vector<T> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    g[i] = richardson_difference_terms_at<T>(terms, xp, i, step);
  }
  return g;
}

/// Reference soft mask straight from the definition: threshold from a full
/// sort, sigmoid of the shifted score.
template <std::floating_point T>
std::vector<T> reference_soft_mask(std::span<const T> x, std::size_t k, T tau) {
  std::vector<T> s(x.begin(), x.end());
  std::sort(s.begin(), s.end(), [](T a, T b) { return a > b; });
  const T theta = (s[k - 1] + s[k]) / T(2);
  std::vector<T> p(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    p[i] = T(1) / (T(1) + math::exp(-(x[i] - theta) / tau));
  }
  return p;
}

/// Per-item terms of the mean BCE Top-K loss, from the definition.
template <std::floating_point T>
std::vector<T> reference_loss_terms(std::span<const T> x, std::span<const std::uint8_t> y,
                                    std::size_t k, T tau) {
  std::vector<T> s(x.begin(), x.end());
  std::sort(s.begin(), s.end(), [](T a, T b) { return a > b; });
  const T theta = (s[k - 1] + s[k]) / T(2);
  const T n = static_cast<T>(x.size());
  std::vector<T> terms(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    // -log sigmoid(t) for t = +z (positives) or t = -z (negatives)
    const T t = y[i] ? (x[i] - theta) / tau : -(x[i] - theta) / tau;
    const T nll = t >= T(0) ? math::log1p(math::exp(-t)) : -t + math::log1p(math::exp(t));
    terms[i] = nll / n;
  }
  return terms;
}

/// Smallest gap between consecutive sorted values (infinity for N < 2).
template <std::floating_point T>
T min_adjacent_gap(std::span<const T> x) {
  std::vector<T> s(x.begin(), x.end());
  std::sort(s.begin(), s.end());
  T gap = std::numeric_limits<T>::infinity();
  for (std::size_t i = 1; i < s.size(); ++i) gap = std::min(gap, s[i] - s[i - 1]);
  return gap;
}

struct GradCheckReport {
  std::string op_name;
  std::size_t instances = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t failures = 0;

  bool passed() const noexcept { return failures == 0; }
};

struct PropertySuiteOptions {
  std::uint64_t seed = 0;
  std::size_t instances = 1000;
  std::size_t threads = 1;
  double step = 1e-5;
  /// Harness self-test: negate the analytic gradients before comparison.
  bool inject_sign_flip = false;
};

inline constexpr std::array<std::size_t, 6> kSuiteSizes{2, 3, 5, 17, 64, 257};
inline constexpr std::array<double, 5> kSuiteTaus{1e-3, 1e-1, 1.0, 10.0, 500.0};
/// Baseline finite differences run in __float128 and cost O(N^3) per sweep;
/// they are checked on instances up to this N.
inline constexpr std::size_t kBaselineFdMaxN = 17;
/// Baseline logits reach N * range(x) / tau. Beyond this scale the rounding of
/// the logits in double alone exceeds the gradient tolerance, so the instance
/// counts as too close to a tie on the tau scale and is not finite-differenced.
inline constexpr double kBaselineFdMaxLogitScale = 1e3;

inline constexpr double kOperatorGradTol = 1e-5;
inline constexpr double kBaselineGradTol = 1e-4;
inline constexpr double kTranslationTol = 1e-9;
inline constexpr double kRowSumTol = 1e-6;
inline constexpr double kHardLimitTol = 1e-6;
inline constexpr double kStrictEps = 1e-10;

namespace gradcheck_detail {

enum Check : std::size_t {
  kSelectOracle,
  kHardTopkOracle,
  kScalingSelection,
  kMonotonicity,
  kTranslation,
  kBoundaryComplement,
  kZeroSumGradient,
  kApproximation,
  kStrictResidual,
  kLossBackwardFd,
  kVjpFd,
  kRowStochastic,
  kHardLimit,
  kExpectedTopkHard,
  kNeuralSortLossFd,
  kSoftSortLossFd,
  kCheckCount
};

inline constexpr std::array<const char*, kCheckCount> kCheckNames{
    "select_rank_pair_oracle", "hard_topk_oracle",     "scaling_selection_invariance",
    "monotonicity",            "translation_invariance", "boundary_pair_complement",
    "zero_sum_gradient",       "approximation_bound",  "strict_threshold_residual",
    "dftopk_loss_backward_fd", "dftopk_vjp_fd",
    "perm_row_stochastic",     "perm_hard_limit",      "expected_topk_hard",
    "neuralsort_loss_fd",      "softsort_loss_fd"};

struct Observation {
  bool present = false;
  double rel = 0.0;
  double abs = 0.0;
  std::size_t failures = 0;
};

using InstanceResult = std::array<Observation, kCheckCount>;

inline void note(InstanceResult& r, Check c, double rel, double abs, std::size_t failures) {
  auto& o = r[c];
  o.present = true;
  o.rel = std::max(o.rel, rel);
  o.abs = std::max(o.abs, abs);
  o.failures += failures;
}

/// Stable sort by value only: index order among equal values falls out of
/// stability, independently of `ranks_before`.
inline std::vector<std::size_t> oracle_order(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(),
                   [x](std::size_t a, std::size_t b) { return x[a] > x[b]; });
  return idx;
}

#ifdef DFTOPK_HAS_FLOAT128
using OracleReal = __float128;
#else
using OracleReal = long double;
#endif

inline std::vector<long double> widen(std::span<const double> x) {
  return std::vector<long double>(x.begin(), x.end());
}

struct Instance {
  std::size_t n = 2;
  std::size_t k = 1;
  double tau = 1.0;
  std::vector<double> tied;        // integer-valued, many ties
  std::vector<double> continuous;  // gap-guarded
  std::vector<std::uint8_t> labels;
};

inline Instance draw_instance(std::uint64_t seed, std::size_t index, double step) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::mt19937_64 rng(seq);
  Instance in;
  in.n = kSuiteSizes[std::uniform_int_distribution<std::size_t>(0, kSuiteSizes.size() - 1)(rng)];
  in.k = std::uniform_int_distribution<std::size_t>(1, in.n - 1)(rng);
  in.tau = kSuiteTaus[std::uniform_int_distribution<std::size_t>(0, kSuiteTaus.size() - 1)(rng)];
  std::normal_distribution<double> normal(0.0, 1.0);
  in.tied.resize(in.n);
  for (auto& v : in.tied) v = std::round(normal(rng) * 2.0);
  in.continuous.resize(in.n);
  do {
    for (auto& v : in.continuous) v = normal(rng);
  } while (min_adjacent_gap(std::span<const double>(in.continuous)) <= 2.0 * step);
  in.labels.resize(in.n);
  std::bernoulli_distribution coin(0.5);
  for (auto& v : in.labels) v = coin(rng) ? 1 : 0;
  return in;
}

inline void check_selection(const Instance& in, std::span<const double> x, InstanceResult& r) {
  const auto order = oracle_order(x);
  const auto pair = select_rank_pair(x, in.k);
  const bool pair_ok = pair.kth_index == order[in.k - 1] && pair.kplus1_index == order[in.k] &&
                       pair.kth_value == x[order[in.k - 1]] &&
                       pair.kplus1_value == x[order[in.k]];
  note(r, kSelectOracle, pair_ok ? 0.0 : 1.0, pair_ok ? 0.0 : 1.0, pair_ok ? 0 : 1);
  const auto mask = hard_topk(x, in.k);
  std::vector<std::uint8_t> expect(x.size(), 0);
  for (std::size_t p = 0; p < in.k; ++p) expect[order[p]] = 1;
  const bool mask_ok = mask.bits == expect;
  note(r, kHardTopkOracle, mask_ok ? 0.0 : 1.0, mask_ok ? 0.0 : 1.0, mask_ok ? 0 : 1);
}

inline void check_scaling(const Instance& in, std::span<const double> x, double a,
                          InstanceResult& r) {
  std::vector<double> scaled(x.begin(), x.end());
  for (auto& v : scaled) v *= a;
  const auto p1 = select_rank_pair(x, in.k);
  const auto p2 = select_rank_pair(std::span<const double>(scaled), in.k);
  const bool ok = p1.kth_index == p2.kth_index && p1.kplus1_index == p2.kplus1_index;
  note(r, kScalingSelection, ok ? 0.0 : 1.0, ok ? 0.0 : 1.0, ok ? 0 : 1);
}

inline void check_forward_properties(const Instance& in, std::span<const double> x,
                                     InstanceResult& r) {
  const TopKConfig<double> cfg{in.k, in.tau};
  const auto fwd = dftopk_forward(x, cfg);
  const auto& p = fwd.mask.probs;

  // monotonicity: walk items in descending score order, probabilities must not
  // increase, and equal scores must give equal probabilities
  const auto order = oracle_order(x);
  double worst = 0.0;
  std::size_t bad = 0;
  for (std::size_t q = 1; q < order.size(); ++q) {
    const std::size_t hi = order[q - 1];
    const std::size_t lo = order[q];
    double v = p[lo] - p[hi];
    if (x[hi] == x[lo]) v = std::abs(v);
    if (v > 0.0) {
      ++bad;
      worst = std::max(worst, v);
    }
  }
  for (double v : p) {
    if (!(v >= 0.0 && v <= 1.0)) ++bad;
  }
  note(r, kMonotonicity, worst, worst, bad);

  const double complement =
      std::abs(p[fwd.pair.kth_index] + p[fwd.pair.kplus1_index] - 1.0);
  const double complement_tol = 4.0 * std::numeric_limits<double>::epsilon();
  note(r, kBoundaryComplement, complement, complement, complement > complement_tol ? 1 : 0);
}

inline void check_translation(const Instance& in, std::mt19937_64& rng, InstanceResult& r) {
  // Dyadic grid (multiples of 2^-20) so that x + c is exact in double.
  constexpr double kGrid = 1048576.0;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> shift(-1e6, 1e6);
  std::vector<double> x(in.n);
  for (auto& v : x) v = std::round(normal(rng) * kGrid) / kGrid;
  const double c = std::round(shift(rng) * kGrid) / kGrid;
  std::vector<double> xs(x);
  for (auto& v : xs) v += c;
  const TopKConfig<double> cfg{in.k, in.tau};
  const auto a = dftopk_forward(std::span<const double>(x), cfg);
  const auto b = dftopk_forward(std::span<const double>(xs), cfg);
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    worst = std::max(worst, std::abs(a.mask.probs[i] - b.mask.probs[i]));
  }
  note(r, kTranslation, worst, worst, worst > kTranslationTol ? 1 : 0);
}

inline void check_approximation(const Instance& in, InstanceResult& r) {
  std::span<const double> x(in.continuous);
  const auto pair = select_rank_pair(x, in.k);
  const double gap = pair.kth_value - pair.kplus1_value;
  const double tau = gap / 100.0;
  const auto fwd = dftopk_forward(x, TopKConfig<double>{in.k, tau});
  const auto hard = hard_topk(x, in.k);
  double dev = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    dev = std::max(dev, std::abs(fwd.mask.probs[i] - static_cast<double>(hard.bits[i])));
  }
  const double bound = sigmoid(-gap / (2.0 * tau));
  const bool ok = dev <= bound * (1.0 + 1e-9) && dev < 2e-22;
  note(r, kApproximation, dev, dev, ok ? 0 : 1);
}

inline void check_strict(const Instance& in, InstanceResult& r) {
  std::span<const double> x(in.continuous);
  const TopKConfig<double> cfg{in.k, in.tau};
  const double theta = strict_threshold(x, cfg, kStrictEps);
  double total = 0.0;
  for (double v : x) total += 1.0 / (1.0 + std::exp(-(v - theta) / in.tau));
  const double residual = std::abs(total - static_cast<double>(in.k));
  // the independent recomputation above uses the naive sigmoid; allow its own
  // rounding on top of eps
  const double tol = kStrictEps + 64.0 * std::numeric_limits<double>::epsilon() * in.n;
  note(r, kStrictResidual, residual, residual, residual > tol ? 1 : 0);
}

template <typename Oracle>
void compare_gradients(std::span<const double> analytic, const std::vector<Oracle>& oracle,
                       double tol, Check c, InstanceResult& r) {
  double worst_rel = 0.0;
  double worst_abs = 0.0;
  std::size_t bad = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double o = static_cast<double>(oracle[i]);
    const double rel = relative_error(analytic[i], o);
    worst_rel = std::max(worst_rel, rel);
    worst_abs = std::max(worst_abs, std::abs(analytic[i] - o));
    if (rel > tol) ++bad;
  }
  note(r, c, worst_rel, worst_abs, bad);
}

/// Long-double oracle everywhere, except the two boundary coordinates: moving
/// those shifts the threshold and every term, so they are redone in the wider
/// oracle type.
template <typename Terms>
std::vector<long double> operator_oracle(Terms&& terms, std::span<const double> x,
                                         const RankPair<double>& pair, double step) {
  const auto xw = widen(x);
  auto g = richardson_difference_terms<long double>(
      terms, std::span<const long double>(xw), static_cast<long double>(step));
  std::vector<OracleReal> xq(x.begin(), x.end());
  for (std::size_t i : {pair.kth_index, pair.kplus1_index}) {
    g[i] = static_cast<long double>(
        richardson_difference_terms_at<OracleReal>(terms, xq, i, static_cast<OracleReal>(step)));
  }
  return g;
}

inline void check_operator_gradients(const Instance& in, std::mt19937_64& rng,
                                     const PropertySuiteOptions& opt, InstanceResult& r) {
  std::span<const double> x(in.continuous);
  std::span<const std::uint8_t> y(in.labels);
  const TopKConfig<double> cfg{in.k, in.tau};
  const auto pair = select_rank_pair(x, in.k);
  const double flip = opt.inject_sign_flip ? -1.0 : 1.0;

  auto grad = dftopk_loss_backward(x, y, cfg);
  for (auto& g : grad) g *= flip;
  double sum = 0.0;
  for (double g : grad) sum += g;
  const double zero_sum_tol = 1e-12 * static_cast<double>(in.n);
  note(r, kZeroSumGradient, std::abs(sum), std::abs(sum), std::abs(sum) > zero_sum_tol ? 1 : 0);

  auto loss_terms = [&]<typename R>(std::span<const R> v) {
    return reference_loss_terms(v, y, in.k, static_cast<R>(in.tau));
  };
  compare_gradients(grad, operator_oracle(loss_terms, x, pair, opt.step), kOperatorGradTol,
                    kLossBackwardFd, r);

  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> upstream(in.n);
  for (auto& u : upstream) u = normal(rng);
  auto vjp = dftopk_vjp(x, cfg, std::span<const double>(upstream));
  for (auto& g : vjp) g *= flip;
  auto weighted_mask = [&]<typename R>(std::span<const R> v) {
    auto p = reference_soft_mask(v, in.k, static_cast<R>(in.tau));
    for (std::size_t i = 0; i < p.size(); ++i) p[i] *= static_cast<R>(upstream[i]);
    return p;
  };
  compare_gradients(vjp, operator_oracle(weighted_mask, x, pair, opt.step), kOperatorGradTol,
                    kVjpFd, r);
}

inline void check_baselines(const Instance& in, const PropertySuiteOptions& opt,
                            InstanceResult& r) {
  std::span<const double> x(in.continuous);
  std::span<const std::uint8_t> y(in.labels);
  const std::size_t n = in.n;
  const auto order = oracle_order(x);

  for (auto kind : {PermutationKind::kNeuralSort, PermutationKind::kSoftSort}) {
    const auto p = soft_permutation_rows(x, in.tau, n, kind);
    double worst = 0.0;
    std::size_t bad = 0;
    for (std::size_t row = 0; row < n; ++row) {
      double s = 0.0;
      for (double v : p.row(row)) {
        s += v;
        if (!(v >= 0.0 && v <= 1.0)) ++bad;
      }
      worst = std::max(worst, std::abs(s - 1.0));
    }
    note(r, kRowStochastic, worst, worst, bad + (worst > kRowSumTol ? 1 : 0));

    const double tau_hard = min_adjacent_gap(x) / 100.0;
    const auto ph = soft_permutation_rows(x, tau_hard, n, kind);
    double dev = 0.0;
    for (std::size_t row = 0; row < n; ++row) {
      for (std::size_t j = 0; j < n; ++j) {
        const double target = order[row] == j ? 1.0 : 0.0;
        dev = std::max(dev, std::abs(ph(row, j) - target));
      }
    }
    note(r, kHardLimit, dev, dev, dev > kHardLimitTol ? 1 : 0);
  }

  SoftPermutation<double> hard{n, n, std::vector<double>(n * n, 0.0)};
  for (std::size_t row = 0; row < n; ++row) hard(row, order[row]) = 1.0;
  std::size_t expect = 0;
  for (std::size_t row = 0; row < in.k; ++row) expect += y[order[row]];
  const double got = expected_topk(hard, y, in.k);
  const bool exact = got == static_cast<double>(expect);
  note(r, kExpectedTopkHard, exact ? 0.0 : 1.0, std::abs(got - expect), exact ? 0 : 1);

  if (n > kBaselineFdMaxN) return;
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  if (static_cast<double>(n) * (*hi - *lo) / in.tau > kBaselineFdMaxLogitScale) return;
  const std::vector<OracleReal> xq(x.begin(), x.end());
  const OracleReal tau_q = static_cast<OracleReal>(in.tau);
  // NeuralSort logits move by ~N * step / tau per step; keep that small.
  const double fd_step = std::min(opt.step, 1e-3 * in.tau / static_cast<double>(n));
  const double flip = opt.inject_sign_flip ? -1.0 : 1.0;
  for (auto kind : {PermutationKind::kNeuralSort, PermutationKind::kSoftSort}) {
    auto lg = permutation_loss_with_grad(x, y, in.k, in.tau, kind);
    for (auto& g : lg.grad) g *= flip;
    const auto fd = richardson_difference<OracleReal>(
        [&](std::span<const OracleReal> v) { return permutation_loss(v, y, in.k, tau_q, kind); },
        std::span<const OracleReal>(xq), static_cast<OracleReal>(fd_step));
    compare_gradients(lg.grad, fd, kBaselineGradTol,
                      kind == PermutationKind::kNeuralSort ? kNeuralSortLossFd : kSoftSortLossFd,
                      r);
  }
}

inline InstanceResult run_instance(const PropertySuiteOptions& opt, std::size_t index) {
  const Instance in = draw_instance(opt.seed, index, opt.step);
  std::seed_seq aux_seq{static_cast<std::uint32_t>(opt.seed), static_cast<std::uint32_t>(index),
                        0x5eedu};
  std::mt19937_64 aux(aux_seq);
  InstanceResult r{};
  for (const auto* scores : {&in.tied, &in.continuous}) {
    std::span<const double> x(*scores);
    check_selection(in, x, r);
    std::uniform_real_distribution<double> log_scale(-2.0, 2.0);
    check_scaling(in, x, std::pow(10.0, log_scale(aux)), r);
    check_forward_properties(in, x, r);
  }
  check_translation(in, aux, r);
  check_approximation(in, r);
  check_strict(in, r);
  check_operator_gradients(in, aux, opt, r);
  check_baselines(in, opt, r);
  return r;
}

}  // namespace gradcheck_detail

/// Runs every operator and baseline invariant over `instances` seeded random
/// instances (N in kSuiteSizes, k uniform in [1, N-1], tau in kSuiteTaus).
/// Results depend only on (seed, instances); `threads` changes wall time only.
inline std::vector<GradCheckReport> run_property_suite(const PropertySuiteOptions& opt) {
  using namespace gradcheck_detail;
  if (opt.instances < 1) throw ValidationError("property suite needs instances >= 1");
  std::vector<InstanceResult> results(opt.instances);
  const std::size_t threads = std::max<std::size_t>(1, std::min(opt.threads, opt.instances));
  if (threads == 1) {
    for (std::size_t i = 0; i < opt.instances; ++i) results[i] = run_instance(opt, i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < opt.instances; i = next++) {
          results[i] = run_instance(opt, i);
        }
      });
    }
    for (auto& th : pool) th.join();
  }

  std::vector<GradCheckReport> reports(kCheckCount);
  for (std::size_t c = 0; c < kCheckCount; ++c) reports[c].op_name = kCheckNames[c];
  for (const auto& inst : results) {
    for (std::size_t c = 0; c < kCheckCount; ++c) {
      const auto& o = inst[c];
      if (!o.present) continue;
      auto& rep = reports[c];
      ++rep.instances;
      rep.max_rel_error = std::max(rep.max_rel_error, o.rel);
      rep.max_abs_error = std::max(rep.max_abs_error, o.abs);
      rep.failures += o.failures;
    }
  }
  return reports;
}

inline bool all_passed(const std::vector<GradCheckReport>& reports) noexcept {
  return std::all_of(reports.begin(), reports.end(),
                     [](const GradCheckReport& r) { return r.passed(); });
}

inline std::string reports_to_csv(const std::vector<GradCheckReport>& reports) {
  std::ostringstream os;
  os << "op_name,instances,max_rel_error,max_abs_error,failures\n";
  char buf[64];
  for (const auto& r : reports) {
    os << r.op_name << ',' << r.instances << ',';
    std::snprintf(buf, sizeof buf, "%.6e", r.max_rel_error);
    os << buf << ',';
    std::snprintf(buf, sizeof buf, "%.6e", r.max_abs_error);
    os << buf << ',' << r.failures << '\n';
  }
  return os.str();
}

inline std::string reports_to_text(const std::vector<GradCheckReport>& reports) {
  std::ostringstream os;
  char line[256];
  for (const auto& r : reports) {
    std::snprintf(line, sizeof line, "%-4s %-30s instances=%-6zu max_rel=%.3e max_abs=%.3e failures=%zu\n",
                  r.passed() ? "PASS" : "FAIL", r.op_name.c_str(), r.instances,
                  r.max_rel_error, r.max_abs_error, r.failures);
    os << line;
  }
  return os.str();
}

}  // namespace dftopk

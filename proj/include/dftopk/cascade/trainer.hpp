// Copyright 2026 The DFTopK Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

/// \file trainer.hpp
/// Per-stage losses, Adam, streaming train/evaluate loop and the metric CSV.

#include <cmath>
#include <cstdio>
#include <functional>
#include <mutex>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "dftopk/cascade/config.hpp"
#include "dftopk/cascade/dataset.hpp"
#include "dftopk/cascade/model.hpp"
#include "dftopk/metrics.hpp"
#include "dftopk/soft_permutation.hpp"
#include "dftopk/topk_operator.hpp"

namespace dftopk::cascade {

/// Raised when a training loss or parameter becomes non-finite.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, std::size_t step)
      : std::runtime_error(what + " at step " + std::to_string(step)), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// Mean BCE of sigmoid(x_i) against y_i, each item independent.
template <std::floating_point T>
T pointwise_bce_loss(std::span<const T> x, std::span<const std::uint8_t> y) {
  T acc = T(0);
  for (std::size_t i = 0; i < x.size(); ++i) acc += y[i] ? softplus(-x[i]) : softplus(x[i]);
  return acc / static_cast<T>(x.size());
}

template <std::floating_point T>
LossAndGrad<T> pointwise_bce_with_grad(std::span<const T> x, std::span<const std::uint8_t> y) {
  require_finite(x, "scores");
  require_labels(y, x.size());
  LossAndGrad<T> out{pointwise_bce_loss(x, y), std::vector<T>(x.size())};
  const T n = static_cast<T>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out.grad[i] = (sigmoid(x[i]) - static_cast<T>(y[i])) / n;
  }
  return out;
}

/// Loss of one stage's scores under the configured loss kind.
template <std::floating_point T>
T stage_loss(LossKind kind, std::span<const T> x, std::span<const std::uint8_t> y, std::size_t k,
             const TrainConfig& cfg) {
  switch (kind) {
    case LossKind::kDFTopK:
      return dftopk_loss(x, y, TopKConfig<T>{k, static_cast<T>(cfg.tau)});
    case LossKind::kNeuralSort:
      return permutation_loss(x, y, k, static_cast<T>(cfg.baseline_tau),
                              PermutationKind::kNeuralSort);
    case LossKind::kSoftSort:
      return permutation_loss(x, y, k, static_cast<T>(cfg.baseline_tau),
                              PermutationKind::kSoftSort);
    case LossKind::kPointwiseBce:
      return pointwise_bce_loss(x, y);
  }
  return T(0);
}

template <std::floating_point T>
LossAndGrad<T> stage_loss_with_grad(LossKind kind, std::span<const T> x,
                                    std::span<const std::uint8_t> y, std::size_t k,
                                    const TrainConfig& cfg) {
  switch (kind) {
    case LossKind::kDFTopK:
      return dftopk_loss_with_grad(x, y, TopKConfig<T>{k, static_cast<T>(cfg.tau)});
    case LossKind::kNeuralSort:
      return permutation_loss_with_grad(x, y, k, static_cast<T>(cfg.baseline_tau),
                                        PermutationKind::kNeuralSort);
    case LossKind::kSoftSort:
      return permutation_loss_with_grad(x, y, k, static_cast<T>(cfg.baseline_tau),
                                        PermutationKind::kSoftSort);
    case LossKind::kPointwiseBce:
      return pointwise_bce_with_grad(x, y);
  }
  return {};
}

/// Total loss of one PV (retrieval stage + ranking stage) for parameters p.
template <typename T>
T pv_total_loss(const ModelShape& shape, std::span<const T> p, const PVRecord& pv,
                const TrainConfig& cfg) {
  const auto [r, s] = forward_scores<T>(shape, p, pv);
  std::span<const std::uint8_t> y(pv.labels);
  return stage_loss(cfg.loss_kind, std::span<const T>(r), y, cfg.k_retrieval, cfg) +
         stage_loss(cfg.loss_kind, std::span<const T>(s), y, cfg.k_ranking, cfg);
}

struct PVLoss {
  double retrieval = 0.0;
  double ranking = 0.0;
  double total() const { return retrieval + ranking; }
};

/// Adds scale * d(total loss)/d(params) of one PV to `grad`; returns the loss.
inline PVLoss accumulate_pv_gradient(const CascadeModel& m, const PVRecord& pv,
                                     const TrainConfig& cfg, double scale,
                                     std::span<double> grad) {
  const ForwardCache c = forward_cached(m, pv);
  std::span<const std::uint8_t> y(pv.labels);
  auto lr = stage_loss_with_grad(cfg.loss_kind, std::span<const double>(c.retrieval), y,
                                 cfg.k_retrieval, cfg);
  auto ls = stage_loss_with_grad(cfg.loss_kind, std::span<const double>(c.ranking), y,
                                 cfg.k_ranking, cfg);
  for (auto& g : lr.grad) g *= scale;
  for (auto& g : ls.grad) g *= scale;
  backward(m, pv, c, lr.grad, ls.grad, grad);
  return PVLoss{lr.loss, ls.loss};
}

struct Adam {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<double> m;
  std::vector<double> v;
  std::size_t t = 0;

  void step(std::span<double> params, std::span<const double> grad, double lr) {
    if (m.empty()) {
      m.assign(params.size(), 0.0);
      v.assign(params.size(), 0.0);
    }
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
      params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
};

struct StepStats {
  std::size_t step = 0;
  double loss = 0.0;  // mean total loss over the batch
  double retrieval_loss = 0.0;
  double ranking_loss = 0.0;
};

class Trainer {
 public:
  Trainer(const TrainConfig& cfg, CascadeModel model) : cfg_(cfg), model_(std::move(model)) {
    validate(cfg_);
    if (!(model_.shape == shape_from(cfg_))) {
      throw ValidationError("model dimensions do not match the config");
    }
  }

  const CascadeModel& model() const { return model_; }
  const TrainConfig& config() const { return cfg_; }
  std::size_t steps() const { return step_; }

  /// One Adam update on the mean total loss of `batch`.
  StepStats train_step(std::span<const PVRecord> batch) {
    if (batch.empty()) throw ValidationError("empty training batch");
    grad_.assign(model_.params.size(), 0.0);
    const double scale = 1.0 / static_cast<double>(batch.size());
    StepStats st{step_, 0.0, 0.0, 0.0};
    for (const auto& pv : batch) {
      PVLoss l;
      try {
        l = accumulate_pv_gradient(model_, pv, cfg_, scale, grad_);
      } catch (const ValidationError& e) {
        // diverged parameters surface as non-finite scores rejected by the losses
        if (std::string_view(e.what()).find("non-finite") == std::string_view::npos) throw;
        throw TrainingError(std::string("non-finite model scores: ") + e.what(), step_);
      }
      st.retrieval_loss += l.retrieval * scale;
      st.ranking_loss += l.ranking * scale;
    }
    st.loss = st.retrieval_loss + st.ranking_loss;
    if (!std::isfinite(st.loss)) {
      throw TrainingError("non-finite training loss (retrieval " +
                              std::to_string(st.retrieval_loss) + ", ranking " +
                              std::to_string(st.ranking_loss) + ")",
                          step_);
    }
    for (double g : grad_) {
      if (!std::isfinite(g)) throw TrainingError("non-finite gradient", step_);
    }
    if (cfg_.learning_rate > 0.0) {
      adam_.step(model_.params, grad_, cfg_.learning_rate);
      for (double p : model_.params) {
        if (!std::isfinite(p)) throw TrainingError("non-finite parameter after update", step_);
      }
    }
    ++step_;
    return st;
  }

  /// One pass over `pvs` in consecutive batches of cfg.batch_pvs.
  std::vector<StepStats> train_epoch(std::span<const PVRecord> pvs) {
    std::vector<StepStats> out;
    for (std::size_t i = 0; i < pvs.size(); i += cfg_.batch_pvs) {
      const std::size_t n = std::min(cfg_.batch_pvs, pvs.size() - i);
      out.push_back(train_step(pvs.subspan(i, n)));
    }
    return out;
  }

 private:
  TrainConfig cfg_;
  CascadeModel model_;
  Adam adam_;
  std::vector<double> grad_;
  std::size_t step_ = 0;
};

struct DayMetrics {
  std::size_t day = 0;
  LossKind loss_kind = LossKind::kDFTopK;
  double joint_recall = 0.0;
  double retrieval_recall = 0.0;
  double ranking_recall = 0.0;
  double sum_deviation = 0.0;
};

namespace detail {

struct PVMetrics {
  RecallResult joint, retrieval, ranking;
  double sum_deviation = 0.0;
};

inline PVMetrics evaluate_pv(const CascadeModel& m, const PVRecord& pv, const TrainConfig& cfg) {
  const auto [r, s] = forward_scores(m, pv);
  std::span<const double> rs(r), ss(s);
  std::span<const std::uint8_t> y(pv.labels);
  PVMetrics out;
  out.joint = joint_recall(rs, ss, y, cfg.m_retrieval, cfg.m_ranking);
  out.retrieval = recall_at_k_at_m(rs, y, cfg.m_retrieval);
  out.ranking = recall_at_k_at_m(ss, y, cfg.m_ranking);
  out.sum_deviation =
      sum_deviation(dftopk_forward(rs, TopKConfig<double>{cfg.k_retrieval, cfg.tau}).mask,
                    cfg.k_retrieval);
  return out;
}

}  // namespace detail

/// Mean per-PV recalls and DFTopK sum deviation (retrieval stage) over `pvs`.
/// Per-PV results are reduced in index order, so the output does not depend
/// on cfg.threads.
inline DayMetrics evaluate(const CascadeModel& m, std::span<const PVRecord> pvs,
                           const TrainConfig& cfg) {
  std::vector<detail::PVMetrics> per(pvs.size());
  const std::size_t threads = std::max<std::size_t>(1, std::min(cfg.threads, pvs.size()));
  if (threads == 1) {
    for (std::size_t i = 0; i < pvs.size(); ++i) per[i] = detail::evaluate_pv(m, pvs[i], cfg);
  } else {
    std::vector<std::thread> pool;
    std::exception_ptr error;
    std::mutex error_mutex;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t i = t; i < pvs.size(); i += threads) {
            per[i] = detail::evaluate_pv(m, pvs[i], cfg);
          }
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
  }
  RecallMean joint, retrieval, ranking;
  double dev = 0.0;
  for (const auto& p : per) {
    joint.add(p.joint);
    retrieval.add(p.retrieval);
    ranking.add(p.ranking);
    dev += p.sum_deviation;
  }
  DayMetrics out;
  out.loss_kind = cfg.loss_kind;
  out.day = pvs.empty() ? 0 : pvs.front().day;
  out.joint_recall = joint.mean();
  out.retrieval_recall = retrieval.mean();
  out.ranking_recall = ranking.mean();
  out.sum_deviation = pvs.empty() ? 0.0 : dev / static_cast<double>(pvs.size());
  return out;
}

struct StreamResult {
  std::vector<DayMetrics> days;  // one row per evaluated day t = 1 .. days-1
  std::vector<StepStats> steps;  // every training step
  CascadeModel model;            // final state
};

/// Online protocol: for t = 1 .. days-1, train one epoch on day t-1 (continuing
/// from the previous state), then evaluate on day t.
inline StreamResult streaming_evaluate(const TrainConfig& cfg,
                                       const std::function<void(const DayMetrics&)>& on_day = {}) {
  validate(cfg);
  const DatasetGenerator gen(cfg);
  Trainer trainer(cfg, init_model(shape_from(cfg), cfg.seed));
  StreamResult out;
  std::vector<PVRecord> train_day = gen.generate_day(0);
  for (std::size_t t = 1; t < cfg.days; ++t) {
    auto stats = trainer.train_epoch(train_day);
    out.steps.insert(out.steps.end(), stats.begin(), stats.end());
    std::vector<PVRecord> test_day = gen.generate_day(t);
    DayMetrics dm = evaluate(trainer.model(), test_day, cfg);
    dm.day = t;
    if (on_day) on_day(dm);
    out.days.push_back(dm);
    train_day = std::move(test_day);
  }
  out.model = trainer.model();
  return out;
}

inline constexpr const char* kMetricsCsvHeader =
    "day,loss_kind,joint_recall,retrieval_recall,ranking_recall,sum_deviation";

inline std::string metrics_csv_row(const DayMetrics& d) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%s,%.6f,%.6f,%.6f,%.6e", d.day,
                std::string(to_string(d.loss_kind)).c_str(), d.joint_recall, d.retrieval_recall,
                d.ranking_recall, d.sum_deviation);
  return buf;
}

}  // namespace dftopk::cascade

#pragma once

// Importance-weighted cross-validation and the distance between estimated
// and actual test error.

#include "covshift/core.hpp"
#include "covshift/estimators.hpp"
#include "covshift/learners.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace covshift {

struct ErrorEstimate {
  double weighted = 0.0;
  double unweighted = 0.0;
  int folds = 0;
  Vector per_example;  // ee(x), cross-validated
  Vector importance;
};

struct EvalResult {
  double actual_error = 0.0;
  double distance_weighted = 0.0;
  double distance_unweighted = 0.0;
  double estimate_weighted = 0.0;
  double estimate_unweighted = 0.0;
};

/// Fold index per training row. Classification rows are dealt class by
/// class so every fold sees each class in proportion.
inline std::vector<int> assign_folds(const Dataset& train, int k, RngStream& rng) {
  require(k >= 2 && k <= train.size(), ErrorCode::FoldTooSmall,
          std::to_string(k) + " folds for " + std::to_string(train.size()) + " rows");
  std::vector<int> fold(static_cast<std::size_t>(train.size()), 0);
  int next = 0;
  if (train.task == Task::Classification) {
    std::vector<std::vector<Index>> by_class(static_cast<std::size_t>(train.class_count));
    for (Index i = 0; i < train.size(); ++i) by_class[static_cast<std::size_t>(train.label(i))].push_back(i);
    for (auto& rows : by_class) {
      rng.shuffle(rows);
      for (Index r : rows) {
        fold[static_cast<std::size_t>(r)] = next;
        next = (next + 1) % k;
      }
    }
  } else {
    for (Index r : rng.permutation(train.size())) {
      fold[static_cast<std::size_t>(r)] = next;
      next = (next + 1) % k;
    }
  }
  return fold;
}

/// Cross-validated per-example errors for fixed fold labels.
inline Vector cross_validated_errors(const Dataset& train, const std::vector<int>& fold, int k,
                                     const LearnerConfig& learner) {
  Vector ee = Vector::Zero(train.size());
  for (int f = 0; f < k; ++f) {
    std::vector<Index> fit_rows, held_rows;
    for (Index i = 0; i < train.size(); ++i)
      (fold[static_cast<std::size_t>(i)] == f ? held_rows : fit_rows).push_back(i);
    if (held_rows.empty()) continue;
    const Dataset fit_set = train.subset(fit_rows);
    if (train.task == Task::Classification) {
      std::vector<bool> seen(static_cast<std::size_t>(train.class_count), false);
      for (Index i = 0; i < fit_set.size(); ++i) seen[static_cast<std::size_t>(fit_set.label(i))] = true;
      for (int c = 0; c < train.class_count; ++c)
        require(seen[static_cast<std::size_t>(c)], ErrorCode::FoldTooSmall,
                "class " + std::to_string(c) + " missing outside fold " + std::to_string(f));
    }
    const LinearModel model = fit_learner(fit_set, learner);
    const Vector err = per_example_error(model, train.subset(held_rows));
    for (std::size_t r = 0; r < held_rows.size(); ++r) ee(held_rows[r]) = err(static_cast<Index>(r));
  }
  return ee;
}

/// sum(ee * w) / sum(w)
inline double weighted_mean(const Vector& ee, const Vector& w) {
  require(ee.size() == w.size(), ErrorCode::DimensionMismatch,
          "errors and weights have different lengths");
  double num = 0.0, den = 0.0;
  for (Index i = 0; i < ee.size(); ++i) {
    num += ee(i) * w(i);
    den += w(i);
  }
  require(den > 0 && std::isfinite(den), ErrorCode::DegenerateWeights,
          "importance weights sum to " + std::to_string(den));
  return num / den;
}

inline double plain_mean(const Vector& ee) {
  double s = 0.0;
  for (Index i = 0; i < ee.size(); ++i) s += ee(i);
  return s / static_cast<double>(ee.size());
}

inline ErrorEstimate weighted_estimate(Vector per_example, const ImportanceVector& w, int folds) {
  ErrorEstimate e;
  e.folds = folds;
  e.weighted = weighted_mean(per_example, w.weights);
  e.unweighted = plain_mean(per_example);
  e.per_example = std::move(per_example);
  e.importance = w.weights;
  return e;
}

inline ErrorEstimate weighted_cv(const Dataset& train, const ImportanceVector& w, int k,
                                 const LearnerConfig& learner, RngStream rng) {
  require(w.size() == train.size(), ErrorCode::DimensionMismatch,
          "importance vector length differs from training size");
  const auto fold = assign_folds(train, k, rng);
  return weighted_estimate(cross_validated_errors(train, fold, k, learner), w, k);
}

/// Mean 0/1 loss or MSE on `test` of the learner fit on all of `train`.
inline double actual_error(const Dataset& train, const Dataset& test, const LearnerConfig& learner) {
  require(train.dim() == test.dim() && train.task == test.task, ErrorCode::DimensionMismatch,
          "train and test are not compatible");
  const LinearModel model = fit_learner(train, learner);
  return plain_mean(per_example_error(model, test));
}

inline EvalResult make_result(double actual, const ErrorEstimate& est) {
  EvalResult r;
  r.actual_error = actual;
  r.estimate_weighted = est.weighted;
  r.estimate_unweighted = est.unweighted;
  r.distance_weighted = std::abs(est.weighted - actual);
  r.distance_unweighted = std::abs(est.unweighted - actual);
  return r;
}

struct EvaluationConfig {
  LearnerConfig learner;  // error estimation
  int folds = 10;
};

/// Stream handed to the estimator for one spec on one pair.
inline RngStream importance_stream(const RngStream& pair_rng, const EstimatorSpec& spec) {
  return pair_rng.child("importance").child(spec.name());
}

/// Importance from `spec`, weighted CV on train, actual error on test.
/// Folds come from rng.child("folds") so that every estimator evaluated on
/// the same pair and seed sees the same folds.
inline EvalResult evaluate_pair(const SplitPair& pair, const EstimatorSpec& spec,
                                const EvaluationConfig& cfg, const RngStream& rng) {
  const ImportanceVector w = estimate(spec, pair.train, pair.test.covariates, importance_stream(rng, spec));
  const ErrorEstimate est = weighted_cv(pair.train, w, cfg.folds, cfg.learner, rng.child("folds"));
  return make_result(actual_error(pair.train, pair.test, cfg.learner), est);
}

}  // namespace covshift

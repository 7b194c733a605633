#pragma once

// Controlled covariate-shift injection. Classification keeps the training
// split fixed and resamples a base test pool class by class under random
// prevalences; regression routes examples to test with a sigmoid of the
// normalized target.

#include "covshift/core.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace covshift {

inline constexpr double kMinPrevalence = 0.05;
inline constexpr double kMaxPrevalence = 0.95;

struct PrevalenceVector {
  std::vector<double> probabilities;
  double min_separation = 0.0;
};

inline double default_min_separation(int classes) { return 1.0 / (10.0 * classes); }

/// Uniform draw over {p : sum p = 1, p_c >= 0.05} (a shifted, scaled flat
/// Dirichlet; the 0.95 cap follows for m >= 2) rejected until every pair is
/// at least `min_separation` apart.
inline PrevalenceVector sample_prevalences(int classes, double min_separation, RngStream& rng,
                                           int budget = 100000) {
  require(classes >= 2, ErrorCode::InvalidArgument, "need at least two classes");
  require(min_separation >= 0, ErrorCode::InvalidArgument, "separation must be nonnegative");
  const double free_mass = 1.0 - kMinPrevalence * classes;
  require(free_mass >= 0, ErrorCode::InfeasibleConstraints,
          std::to_string(classes) + " classes cannot all reach the 5% floor");
  PrevalenceVector out;
  out.min_separation = min_separation;
  std::vector<double> p(static_cast<std::size_t>(classes));
  for (int attempt = 0; attempt < budget; ++attempt) {
    double total = 0.0;
    for (auto& x : p) {
      x = rng.exponential();
      total += x;
    }
    for (auto& x : p) x = kMinPrevalence + free_mass * (x / total);
    std::vector<double> sorted = p;
    std::sort(sorted.begin(), sorted.end());
    bool ok = sorted.back() <= kMaxPrevalence;
    for (std::size_t i = 1; ok && i < sorted.size(); ++i)
      ok = sorted[i] - sorted[i - 1] >= min_separation;
    if (ok) {
      out.probabilities = p;
      return out;
    }
  }
  throw Error(ErrorCode::InfeasibleConstraints,
              "no prevalence vector with separation " + std::to_string(min_separation) + " in " +
                  std::to_string(budget) + " draws");
}

/// Highest-averages apportionment: each seat goes to the class with the
/// largest p_c / (s_c + 1); ties go to the lowest class index.
inline std::vector<long> dhondt_allocate(const std::vector<double>& prevalences, long seats) {
  require(seats >= 1, ErrorCode::InvalidArgument, "need at least one seat");
  require(!prevalences.empty(), ErrorCode::InvalidArgument, "no classes");
  for (double p : prevalences)
    require(p > 0 && std::isfinite(p), ErrorCode::InvalidArgument, "prevalences must be positive");
  std::vector<long> won(prevalences.size(), 0);
  for (long seat = 0; seat < seats; ++seat) {
    std::size_t best = 0;
    double best_q = prevalences[0] / static_cast<double>(won[0] + 1);
    for (std::size_t c = 1; c < prevalences.size(); ++c) {
      const double q = prevalences[c] / static_cast<double>(won[c] + 1);
      if (q > best_q * (1.0 + 1e-12)) {
        best = c;
        best_q = q;
      }
    }
    ++won[best];
  }
  return won;
}

struct ClassificationVariant {
  Dataset test;
  PrevalenceVector prevalence;
  std::vector<long> allocation;
  std::vector<Index> pool_rows;  // rows of the base pool drawn, in output order
};

struct ClassificationInjection {
  Dataset train;
  Dataset pool;
  std::vector<Index> train_rows;  // source rows
  std::vector<Index> pool_source_rows;
  std::vector<ClassificationVariant> variants;
};

/// Stratified split reserving `test_fraction` of every class for the base
/// pool. Each class keeps at least one row on each side when it has two.
inline std::pair<std::vector<Index>, std::vector<Index>> stratified_split(const Dataset& source,
                                                                          double test_fraction,
                                                                          RngStream& rng) {
  std::vector<std::vector<Index>> by_class(static_cast<std::size_t>(source.class_count));
  for (Index i = 0; i < source.size(); ++i) by_class[static_cast<std::size_t>(source.label(i))].push_back(i);
  std::vector<Index> train, test;
  for (auto& rows : by_class) {
    rng.shuffle(rows);
    const auto n = static_cast<long>(rows.size());
    long take = std::lround(test_fraction * static_cast<double>(n));
    if (n >= 2) take = std::clamp(take, 1L, n - 1);
    else take = 0;
    test.insert(test.end(), rows.begin(), rows.begin() + take);
    train.insert(train.end(), rows.begin() + take, rows.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {train, test};
}

inline ClassificationInjection inject_classification(const Dataset& source, double test_fraction,
                                                     int variants, double min_separation,
                                                     RngStream rng) {
  require(source.task == Task::Classification, ErrorCode::InvalidArgument,
          "classification injection on a regression dataset");
  require(test_fraction > 0 && test_fraction < 1, ErrorCode::InvalidArgument,
          "test fraction must lie in (0, 1)");
  require(variants >= 1, ErrorCode::InvalidArgument, "need at least one variant");
  const int m = source.class_count;

  RngStream split_rng = rng.child("split");
  auto [train_rows, pool_rows] = stratified_split(source, test_fraction, split_rng);

  ClassificationInjection out;
  out.train = source.subset(train_rows);
  out.pool = source.subset(pool_rows);
  out.train_rows = train_rows;
  out.pool_source_rows = pool_rows;

  std::vector<std::vector<Index>> pool_by_class(static_cast<std::size_t>(m));
  for (Index i = 0; i < out.pool.size(); ++i)
    pool_by_class[static_cast<std::size_t>(out.pool.label(i))].push_back(i);
  for (int c = 0; c < m; ++c)
    require(!pool_by_class[static_cast<std::size_t>(c)].empty(), ErrorCode::ClassMissingInPool,
            "class " + std::to_string(c) + " has no example in the base test pool");

  const long seats = static_cast<long>(out.pool.size());
  for (int v = 0; v < variants; ++v) {
    RngStream vrng = rng.child(static_cast<std::uint64_t>(v) + 1000);
    ClassificationVariant variant;
    variant.prevalence = sample_prevalences(m, min_separation, vrng);
    variant.allocation = dhondt_allocate(variant.prevalence.probabilities, seats);
    for (int c = 0; c < m; ++c) {
      const auto& rows = pool_by_class[static_cast<std::size_t>(c)];
      for (long k = 0; k < variant.allocation[static_cast<std::size_t>(c)]; ++k)
        variant.pool_rows.push_back(rows[static_cast<std::size_t>(vrng.below(rows.size()))]);
    }
    variant.test = out.pool.subset(variant.pool_rows);
    out.variants.push_back(std::move(variant));
  }
  return out;
}

struct SigmoidSplitConfig {
  double gamma = 5.0;
  // Kept for provenance; the sigmoid alone decides the split sizes.
  double test_fraction = 0.33;
};

/// Probability that an example with normalized target y goes to test.
inline double test_assignment_probability(double normalized_target, double gamma) {
  return 1.0 / (1.0 + std::exp(-gamma * normalized_target));
}

/// Targets min-max mapped onto [-1, 1].
inline Vector normalize_targets(const Vector& y) {
  const double lo = y.minCoeff(), hi = y.maxCoeff();
  require(hi > lo, ErrorCode::DegenerateSplit, "regression targets are all equal");
  return ((y.array() - lo) / (hi - lo) * 2.0 - 1.0).matrix();
}

struct RegressionInjection {
  SplitPair pair;
  std::vector<Index> train_rows;
  std::vector<Index> test_rows;
};

inline RegressionInjection inject_regression(const Dataset& source, const SigmoidSplitConfig& cfg,
                                             RngStream rng) {
  require(source.task == Task::Regression, ErrorCode::InvalidArgument,
          "regression injection on a classification dataset");
  require(cfg.gamma != 0 && std::isfinite(cfg.gamma), ErrorCode::InvalidArgument,
          "gamma must be nonzero");
  const Vector norm = normalize_targets(source.targets);
  for (int attempt = 0; attempt < 100; ++attempt) {
    RegressionInjection out;
    for (Index i = 0; i < source.size(); ++i) {
      if (rng.uniform() < test_assignment_probability(norm(i), cfg.gamma)) out.test_rows.push_back(i);
      else out.train_rows.push_back(i);
    }
    if (out.train_rows.empty() || out.test_rows.empty()) continue;
    out.pair.train = source.subset(out.train_rows);
    out.pair.test = source.subset(out.test_rows);
    out.pair.seed = rng.seed();
    out.pair.provenance.seed = rng.seed();
    out.pair.provenance.gamma = cfg.gamma;
    return out;
  }
  throw Error(ErrorCode::DegenerateSplit, "sigmoid split left one side empty 100 times");
}

}  // namespace covshift

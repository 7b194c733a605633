#include "covshift/evaluate.hpp"
#include "covshift/experiment.hpp"

#include "test_util.hpp"

#include <algorithm>

using namespace covshift;
using testutil::code_of;

namespace {

Dataset small_regression(std::uint64_t seed) {
  Vector beta(3);
  beta << 1.0, -2.0, 0.5;
  return testutil::linear_regression(60, beta, seed);
}

}  // namespace

TEST(Folds, PartitionTrainingSet) {
  const Dataset d = small_regression(1);
  RngStream rng(2);
  const auto fold = assign_folds(d, 7, rng);
  std::vector<int> sizes(7, 0);
  for (int f : fold) {
    ASSERT_GE(f, 0);
    ASSERT_LT(f, 7);
    ++sizes[static_cast<std::size_t>(f)];
  }
  EXPECT_EQ(*std::max_element(sizes.begin(), sizes.end()) - *std::min_element(sizes.begin(), sizes.end()), 1);
}

TEST(Folds, StratifiedForClassification) {
  const Dataset d = testutil::blobs(40, 2, 2.0, 3);
  RngStream rng(4);
  const auto fold = assign_folds(d, 10, rng);
  for (int f = 0; f < 10; ++f) {
    int c0 = 0, c1 = 0;
    for (Index i = 0; i < d.size(); ++i)
      if (fold[static_cast<std::size_t>(i)] == f) (d.label(i) == 0 ? c0 : c1)++;
    EXPECT_EQ(c0, 2);
    EXPECT_EQ(c1, 2);
  }
}

TEST(Folds, Bounds) {
  const Dataset d = small_regression(1);
  RngStream rng(2);
  EXPECT_EQ(code_of([&] { assign_folds(d, 1, rng); }), ErrorCode::FoldTooSmall);
  EXPECT_EQ(code_of([&] { assign_folds(d, 61, rng); }), ErrorCode::FoldTooSmall);
}

TEST(WeightedCv, UniformWeightsMatchPlainMean) {
  const Dataset d = small_regression(5);
  ImportanceVector w{Vector::Ones(d.size())};
  const ErrorEstimate e = weighted_cv(d, w, 10, {}, RngStream(6));
  EXPECT_EQ(e.folds, 10);
  EXPECT_NEAR(e.weighted, e.unweighted, 1e-15 * std::max(1.0, e.unweighted));
  EXPECT_GE(e.per_example.minCoeff(), 0.0);
}

TEST(WeightedCv, IndicatorWeightPicksOneExample) {
  const Dataset d = small_regression(7);
  ImportanceVector w{Vector::Zero(d.size())};
  w.weights(13) = 1.0;
  const ErrorEstimate e = weighted_cv(d, w, 5, {}, RngStream(8));
  EXPECT_EQ(e.weighted, e.per_example(13));
}

TEST(WeightedCv, ScaleInvariantAndBracketed) {
  const Dataset d = small_regression(9);
  RngStream r(10);
  ImportanceVector w{Vector(d.size())};
  for (Index i = 0; i < d.size(); ++i) w.weights(i) = r.exponential();
  const ErrorEstimate a = weighted_cv(d, w, 10, {}, RngStream(11));
  for (double c : {2.0, 1e-3, 7.5}) {
    ImportanceVector scaled{w.weights * c};
    const ErrorEstimate b = weighted_cv(d, scaled, 10, {}, RngStream(11));
    EXPECT_NEAR(a.weighted, b.weighted, 1e-12 * a.weighted);
  }
  EXPECT_GE(a.weighted, a.per_example.minCoeff());
  EXPECT_LE(a.weighted, a.per_example.maxCoeff());
}

TEST(WeightedCv, PerExampleErrorsAreHeldOut) {
  const Dataset d = small_regression(12);
  const int k = 4;
  RngStream rng(13);
  const auto fold = assign_folds(d, k, rng);
  const Vector ee = cross_validated_errors(d, fold, k, {});
  for (int f = 0; f < k; ++f) {
    std::vector<Index> fit, held;
    for (Index i = 0; i < d.size(); ++i) (fold[static_cast<std::size_t>(i)] == f ? held : fit).push_back(i);
    const LinearModel m = fit_ridge(d.subset(fit), LearnerConfig{}.lambda);
    const Vector err = per_example_error(m, d.subset(held));
    for (std::size_t r = 0; r < held.size(); ++r) EXPECT_DOUBLE_EQ(ee(held[r]), err(static_cast<Index>(r)));
  }
}

TEST(WeightedCv, ZeroWeightsRejected) {
  const Dataset d = small_regression(14);
  ImportanceVector w{Vector::Zero(d.size())};
  EXPECT_EQ(code_of([&] { weighted_cv(d, w, 5, {}, RngStream(1)); }), ErrorCode::DegenerateWeights);
  ImportanceVector short_w{Vector::Ones(3)};
  EXPECT_EQ(code_of([&] { weighted_cv(d, short_w, 5, {}, RngStream(1)); }), ErrorCode::DimensionMismatch);
}

TEST(ActualError, InterpolatingRidgeOnTrainIsZero) {
  const Dataset d = testutil::linear_regression(4, Vector::Ones(3), 15);
  LearnerConfig cfg;
  cfg.lambda = 0.0;
  EXPECT_NEAR(actual_error(d, d, cfg), 0.0, 1e-20);
}

TEST(ActualError, ConstantModelArithmetic) {
  Dataset train;
  train.task = Task::Regression;
  train.covariates = Matrix::Zero(2, 1);
  train.targets = Vector(2);
  train.targets << 0.0, 4.0;  // mean 2, a constant model
  Dataset test = train;
  test.targets << 1.0, 3.0;
  EXPECT_NEAR(actual_error(train, test, {}), 1.0, 1e-12);
}

TEST(ActualError, RowPermutationInvariant) {
  const Dataset tr = small_regression(16), te = small_regression(17);
  std::vector<Index> rows(static_cast<std::size_t>(te.size()));
  for (Index i = 0; i < te.size(); ++i) rows[static_cast<std::size_t>(i)] = te.size() - 1 - i;
  EXPECT_NEAR(actual_error(tr, te, {}), actual_error(tr, te.subset(rows), {}), 1e-12);
}

TEST(ActualError, ZeroOneLossForClassification) {
  const Dataset tr = testutil::blobs(100, 2, 8.0, 18), te = testutil::blobs(50, 2, 8.0, 19);
  const double e = actual_error(tr, te, {});
  EXPECT_GE(e, 0.0);
  EXPECT_LE(e, 0.02);
  EXPECT_EQ(e * 50, std::round(e * 50));
}

TEST(EvaluatePair, UniformWeightsGiveEqualDistances) {
  SplitPair pair{small_regression(20), small_regression(21), 0, {}};
  const ErrorEstimate est = weighted_estimate(Vector::Constant(pair.train.size(), 0.3),
                                              ImportanceVector{Vector::Ones(pair.train.size())}, 10);
  const EvalResult r = make_result(0.1, est);
  EXPECT_DOUBLE_EQ(r.distance_weighted, r.distance_unweighted);
  EXPECT_NEAR(r.distance_weighted, 0.2, 1e-15);
}

TEST(EvaluatePair, Deterministic) {
  SplitPair pair{small_regression(22), small_regression(23), 0, {}};
  const EstimatorSpec spec = EstimatorSpec::defaults(Method::KDE);
  const EvalResult a = evaluate_pair(pair, spec, {}, RngStream(24));
  const EvalResult b = evaluate_pair(pair, spec, {}, RngStream(24));
  EXPECT_EQ(a.distance_weighted, b.distance_weighted);
  EXPECT_EQ(a.distance_unweighted, b.distance_unweighted);
  EXPECT_EQ(a.actual_error, b.actual_error);
  EXPECT_GE(a.distance_weighted, 0.0);
}

// Toy covariates with y = sin(2 x_0) + noise: a misspecified linear learner.
TEST(EvaluatePair, WeightingHelpsOnShiftedToy) {
  double weighted = 0.0, unweighted = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ToyConfig cfg;
    cfg.seed = seed;
    ToyData toy = make_toy(cfg);
    RngStream noise = RngStream(seed).child("target");
    for (Dataset* d : {&toy.train, &toy.test})
      for (Index i = 0; i < d->size(); ++i)
        d->targets(i) = std::sin(2 * d->covariates(i, 0)) + 0.1 * noise.normal();
    SplitPair pair{toy.train, toy.test, seed, {}};
    const EvalResult r =
        evaluate_pair(pair, EstimatorSpec::defaults(Method::KLIEP), {}, RngStream(seed).child("eval"));
    weighted += r.distance_weighted;
    unweighted += r.distance_unweighted;
  }
  EXPECT_LT(weighted / 20, unweighted / 20);
}

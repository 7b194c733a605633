#pragma once

// Base learners: ridge regression and one-vs-rest logistic regression.
// Both leave the bias unpenalized.

#include "covshift/core.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace covshift {

enum class ModelKind { Ridge, Logistic };

inline std::string_view to_string(ModelKind k) {
  return k == ModelKind::Ridge ? "ridge" : "logistic";
}

struct LearnerConfig {
  double lambda = 1.0;
  double grad_tol = 1e-6;  // logistic: final gradient inf-norm
  int max_iter = 500;
};

struct LinearModel {
  Matrix weights;  // d x k
  Vector bias;     // k
  ModelKind kind = ModelKind::Ridge;
  double lambda = 0.0;

  Index input_dim() const { return weights.rows(); }
  Index output_dim() const { return weights.cols(); }
};

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// log(1 + exp(z)) without overflow.
inline double softplus(double z) {
  return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

// ---------------------------------------------------------------------------
// Ridge

inline LinearModel fit_ridge(const Dataset& train, double lambda) {
  require(train.task == Task::Regression, ErrorCode::InvalidArgument,
          "ridge needs a regression dataset");
  require(lambda >= 0 && std::isfinite(lambda), ErrorCode::InvalidArgument,
          "lambda must be nonnegative");
  const Index n = train.size(), d = train.dim();
  require(n >= 1, ErrorCode::EmptyDataset, "ridge on empty dataset");

  // Least squares on [X 1; sqrt(lambda) I 0] against [y; 0].
  const Index extra = lambda > 0 ? d : 0;
  Matrix design = Matrix::Zero(n + extra, d + 1);
  Vector rhs = Vector::Zero(n + extra);
  design.topLeftCorner(n, d) = train.covariates;
  design.col(d).head(n).setOnes();
  rhs.head(n) = train.targets;
  if (lambda > 0)
    design.bottomLeftCorner(d, d).diagonal().setConstant(std::sqrt(lambda));

  Eigen::ColPivHouseholderQR<Matrix> qr(design);
  require(qr.rank() == d + 1, ErrorCode::SingularSystem,
          "design is rank deficient (rank " + std::to_string(qr.rank()) + " of " +
              std::to_string(d + 1) + ")");
  const Vector beta = qr.solve(rhs);

  LinearModel m;
  m.kind = ModelKind::Ridge;
  m.lambda = lambda;
  m.weights = beta.head(d);
  m.bias = beta.tail(1);
  return m;
}

// ---------------------------------------------------------------------------
// Logistic

/// Penalized negative log-likelihood of one binary logistic model:
/// sum_i softplus(z_i) - t_i z_i + lambda/2 |w|^2, with z = X w + b.
inline double logistic_objective(const Matrix& x, const Vector& targets01, const Vector& w,
                                 double b, double lambda) {
  const Vector z = (x * w).array() + b;
  double f = 0.0;
  for (Index i = 0; i < z.size(); ++i) f += softplus(z(i)) - targets01(i) * z(i);
  return f + 0.5 * lambda * w.squaredNorm();
}

/// Gradient with respect to (w, b), bias last.
inline Vector logistic_gradient(const Matrix& x, const Vector& targets01, const Vector& w,
                                double b, double lambda) {
  const Index d = x.cols();
  const Vector z = (x * w).array() + b;
  Vector r(z.size());
  for (Index i = 0; i < z.size(); ++i) r(i) = sigmoid(z(i)) - targets01(i);
  Vector g(d + 1);
  g.head(d) = x.transpose() * r + lambda * w;
  g(d) = r.sum();
  return g;
}

struct BinaryLogisticFit {
  Vector weights;
  double bias = 0.0;
  std::vector<double> objective_trace;
  double grad_inf_norm = 0.0;
  int iterations = 0;
};

/// Damped Newton with Armijo backtracking (factor 0.5, constant 1e-4),
/// falling back to the negative gradient when the Newton direction is not
/// a descent direction. Objective values are non-increasing up to round-off.
inline BinaryLogisticFit fit_binary_logistic(const Matrix& x, const Vector& targets01,
                                             double lambda, const LearnerConfig& cfg = {}) {
  require(lambda >= 0 && std::isfinite(lambda), ErrorCode::InvalidArgument,
          "lambda must be nonnegative");
  require(x.rows() == targets01.size(), ErrorCode::DimensionMismatch,
          "logistic: rows and targets differ");
  const Index n = x.rows(), d = x.cols();

  BinaryLogisticFit fit;
  fit.weights = Vector::Zero(d);
  // Start the bias at the log-odds of the base rate.
  const double pos = targets01.sum();
  const double rate = std::clamp(pos / static_cast<double>(n), 1e-6, 1.0 - 1e-6);
  fit.bias = std::log(rate / (1.0 - rate));

  double f = logistic_objective(x, targets01, fit.weights, fit.bias, lambda);
  fit.objective_trace.push_back(f);

  for (int it = 0; it < cfg.max_iter; ++it) {
    const Vector g = logistic_gradient(x, targets01, fit.weights, fit.bias, lambda);
    fit.grad_inf_norm = g.lpNorm<Eigen::Infinity>();
    if (fit.grad_inf_norm <= cfg.grad_tol) {
      fit.iterations = it;
      return fit;
    }

    const Vector z = (x * fit.weights).array() + fit.bias;
    Matrix hess = Matrix::Zero(d + 1, d + 1);
    Matrix xs(n, d + 1);
    xs.leftCols(d) = x;
    xs.col(d).setOnes();
    Vector s(n);
    for (Index i = 0; i < n; ++i) {
      const double p = sigmoid(z(i));
      s(i) = p * (1.0 - p);
    }
    hess.noalias() = xs.transpose() * s.asDiagonal() * xs;
    hess.topLeftCorner(d, d).diagonal().array() += lambda;
    hess.diagonal().array() += 1e-12 * std::max(1.0, hess.diagonal().maxCoeff());

    Vector dir = -hess.ldlt().solve(g);
    if (!dir.allFinite() || g.dot(dir) >= 0) dir = -g;

    double step = 1.0;
    const double slope = g.dot(dir);
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      const Vector w_new = fit.weights + step * dir.head(d);
      const double b_new = fit.bias + step * dir(d);
      const double f_new = logistic_objective(x, targets01, w_new, b_new, lambda);
      // Near the optimum the Armijo decrease falls below the round-off in
      // f; a full Newton step that halves the gradient is then accepted.
      const bool armijo = f_new <= f + 1e-4 * step * slope;
      const bool newton_close =
          !armijo && ls == 0 && f_new <= f + 1e-12 * std::max(1.0, std::abs(f)) &&
          logistic_gradient(x, targets01, w_new, b_new, lambda).lpNorm<Eigen::Infinity>() <=
              0.5 * fit.grad_inf_norm;
      if (armijo || newton_close) {
        fit.weights = w_new;
        fit.bias = b_new;
        f = f_new;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      // No representable decrease left: stationary to machine precision.
      fit.iterations = it;
      return fit;
    }
    fit.objective_trace.push_back(f);
  }
  const Vector g = logistic_gradient(x, targets01, fit.weights, fit.bias, lambda);
  fit.grad_inf_norm = g.lpNorm<Eigen::Infinity>();
  fit.iterations = cfg.max_iter;
  require(fit.grad_inf_norm <= cfg.grad_tol, ErrorCode::NotConverged,
          "logistic regression did not reach gradient tolerance (|g|=" +
              std::to_string(fit.grad_inf_norm) + ")");
  return fit;
}

/// One-vs-rest logistic models, one column per class.
inline LinearModel fit_logistic(const Dataset& train, double lambda,
                                const LearnerConfig& cfg = {}) {
  require(train.task == Task::Classification, ErrorCode::InvalidArgument,
          "logistic regression needs a classification dataset");
  const int m = train.class_count;
  std::vector<Index> counts(static_cast<std::size_t>(m), 0);
  for (Index i = 0; i < train.size(); ++i) ++counts[static_cast<std::size_t>(train.label(i))];
  for (int c = 0; c < m; ++c)
    require(counts[static_cast<std::size_t>(c)] > 0, ErrorCode::DegenerateClass,
            "class " + std::to_string(c) + " absent from training data");

  LinearModel model;
  model.kind = ModelKind::Logistic;
  model.lambda = lambda;
  model.weights.resize(train.dim(), m);
  model.bias.resize(m);
  for (int c = 0; c < m; ++c) {
    const Vector t = (train.targets.array() == static_cast<double>(c)).cast<double>();
    const auto fit = fit_binary_logistic(train.covariates, t, lambda, cfg);
    model.weights.col(c) = fit.weights;
    model.bias(c) = fit.bias;
  }
  return model;
}

/// Pre-threshold scores: linear outputs (ridge) or per-class one-vs-rest
/// probabilities (logistic, not renormalized).
inline Matrix predict_raw(const LinearModel& model, const Matrix& x) {
  require(x.cols() == model.input_dim(), ErrorCode::DimensionMismatch,
          "model expects " + std::to_string(model.input_dim()) + " columns, got " +
              std::to_string(x.cols()));
  Matrix scores = x * model.weights;
  scores.rowwise() += model.bias.transpose();
  if (model.kind == ModelKind::Logistic) scores = scores.unaryExpr([](double z) { return sigmoid(z); });
  return scores;
}

/// 0/1 loss of the argmax (classification) or squared error (regression).
inline Vector per_example_error(const LinearModel& model, const Dataset& data) {
  const Matrix scores = predict_raw(model, data.covariates);
  Vector err(data.size());
  if (data.task == Task::Classification) {
    require(model.kind == ModelKind::Logistic && scores.cols() == data.class_count,
            ErrorCode::DimensionMismatch, "classifier output does not match class count");
    for (Index i = 0; i < data.size(); ++i) {
      Index best = 0;
      scores.row(i).maxCoeff(&best);
      err(i) = best == data.label(i) ? 0.0 : 1.0;
    }
  } else {
    require(scores.cols() == 1, ErrorCode::DimensionMismatch, "regressor must have one output");
    for (Index i = 0; i < data.size(); ++i) {
      const double r = data.targets(i) - scores(i, 0);
      err(i) = r * r;
    }
  }
  return err;
}

/// The learner matching the task: logistic for classification, ridge otherwise.
inline LinearModel fit_learner(const Dataset& train, const LearnerConfig& cfg) {
  return train.task == Task::Classification ? fit_logistic(train, cfg.lambda, cfg)
                                            : fit_ridge(train, cfg.lambda);
}

}  // namespace covshift

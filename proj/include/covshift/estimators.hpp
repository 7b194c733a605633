#pragma once

// Importance estimators. Each consumes the feature-mapped train and test
// matrices and returns one weight per training row.

#include "covshift/core.hpp"
#include "covshift/kernels.hpp"
#include "covshift/learners.hpp"
#include "covshift/phi.hpp"
#include "covshift/solver.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace covshift {

enum class Method { LR, KMM, EKMM, KDE, KLIEP };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::LR: return "LR";
    case Method::KMM: return "KMM";
    case Method::EKMM: return "EKMM";
    case Method::KDE: return "KDE";
    case Method::KLIEP: return "KLIEP";
  }
  return "?";
}

inline Method parse_method(std::string_view s) {
  for (Method m : {Method::LR, Method::KMM, Method::EKMM, Method::KDE, Method::KLIEP})
    if (s == to_string(m)) return m;
  throw Error(ErrorCode::InvalidArgument, "unknown method '" + std::string(s) + "'");
}

enum class EnsembleAxis { TestPartition, TrainPartition };

inline std::string_view to_string(EnsembleAxis a) {
  return a == EnsembleAxis::TestPartition ? "test" : "train";
}

inline EnsembleAxis parse_ensemble_axis(std::string_view s) {
  if (s == "test") return EnsembleAxis::TestPartition;
  if (s == "train") return EnsembleAxis::TrainPartition;
  throw Error(ErrorCode::InvalidArgument, "unknown ensemble axis '" + std::string(s) + "'");
}

struct EstimatorSpec {
  Method method = Method::KLIEP;
  KernelConfig kernel;
  PhiMode phi_mode = PhiMode::Covariates;
  LearnerConfig phi_learner;  // model behind P / CP
  bool standardize = true;

  // KMM / EKMM
  double upper_bound = 1000.0;
  std::optional<double> slack;  // default (sqrt(n_tr) - 1) / sqrt(n_tr)
  int partitions = 20;
  EnsembleAxis ensemble_axis = EnsembleAxis::TrainPartition;
  double qp_tol = 1e-6;  // relative to max |c_i|
  int qp_max_iter = 2000;
  double kernel_memory_budget = 2.0 * 1024 * 1024 * 1024;  // bytes

  // KLIEP
  int basis_count = 100;
  std::vector<double> sigma_grid{0.01, 0.1, 0.25, 0.5, 0.75, 1.0};
  int kliep_folds = 3;
  double kliep_tol = 1e-8;
  int kliep_max_iter = 2000;

  // LR
  double lambda_disc = 1.0;

  /// Per-method defaults: Gaussian sigma=1 for KMM/EKMM, Epanechnikov
  /// sigma=1 for KDE, Gaussian with a CV-selected sigma for KLIEP.
  static EstimatorSpec defaults(Method method, PhiMode phi = PhiMode::Covariates) {
    EstimatorSpec s;
    s.method = method;
    s.phi_mode = phi;
    s.kernel = {method == Method::KDE ? KernelFamily::Epanechnikov : KernelFamily::Gaussian, 1.0};
    return s;
  }

  std::string name() const {
    return std::string(to_string(method)) + "-" + std::string(to_string(phi_mode));
  }

  void validate() const {
    kernel.validate();
    require(partitions >= 1, ErrorCode::InvalidArgument, "partition count must be >= 1");
    require(basis_count >= 1, ErrorCode::InvalidArgument, "basis count must be >= 1");
    require(!sigma_grid.empty(), ErrorCode::InvalidArgument, "sigma grid is empty");
    for (double s : sigma_grid)
      require(s > 0 && std::isfinite(s), ErrorCode::InvalidArgument, "sigma grid entries must be positive");
    require(upper_bound > 0, ErrorCode::InvalidArgument, "B must be positive");
    require(!slack || *slack >= 0, ErrorCode::InvalidArgument, "epsilon must be nonnegative");
    require(lambda_disc >= 0, ErrorCode::InvalidArgument, "lambda_disc must be nonnegative");
    require(kliep_folds >= 2, ErrorCode::InvalidArgument, "KLIEP needs at least 2 folds");
  }
};

// ---------------------------------------------------------------------------
// LR

/// n_tr P(test|x) / (n_te P(train|x)), with P(train|x) floored at 1e-6.
inline double discriminator_ratio(double p_test, double p_train, double n_tr, double n_te) {
  return n_tr * p_test / (n_te * std::max(p_train, 1e-6));
}

inline ImportanceVector lr_importance(const Matrix& v_tr, const Matrix& v_te, double lambda_disc,
                                      const LearnerConfig& solver_cfg = {}) {
  require(v_tr.cols() == v_te.cols(), ErrorCode::DimensionMismatch, "train/test widths differ");
  const Index n_tr = v_tr.rows(), n_te = v_te.rows();
  require(n_tr >= 1 && n_te >= 1, ErrorCode::EmptyDataset, "LR needs train and test rows");
  Matrix stacked(n_tr + n_te, v_tr.cols());
  stacked << v_tr, v_te;
  Vector labels(n_tr + n_te);
  labels.head(n_tr).setZero();
  labels.tail(n_te).setOnes();
  const auto fit = fit_binary_logistic(stacked, labels, lambda_disc, solver_cfg);
  const Vector z = (v_tr * fit.weights).array() + fit.bias;
  ImportanceVector w{Vector(n_tr)};
  for (Index i = 0; i < n_tr; ++i)
    w.weights(i) = discriminator_ratio(sigmoid(z(i)), sigmoid(-z(i)), static_cast<double>(n_tr),
                                       static_cast<double>(n_te));
  return w;
}

// ---------------------------------------------------------------------------
// KMM

inline double default_kmm_slack(Index n_tr) {
  const double r = std::sqrt(static_cast<double>(n_tr));
  return (r - 1.0) / r;
}

/// Row sums of k(A, B) accumulated over blocks of B.
inline Vector kernel_row_sums(const Matrix& a, const Matrix& b, const KernelConfig& cfg,
                              Index block = 1024) {
  Vector sums = Vector::Zero(a.rows());
  for (Index start = 0; start < b.rows(); start += block) {
    const Index rows = std::min(block, b.rows() - start);
    sums += kernel_matrix(a, b.middleRows(start, rows), cfg).rowwise().sum();
  }
  return sums;
}

struct KmmResult {
  ImportanceVector weights;
  SolverReport report;
  double slack = 0.0;
};

inline KmmResult kmm_fit(const Matrix& v_tr, const Matrix& v_te, const EstimatorSpec& spec) {
  require(v_tr.cols() == v_te.cols(), ErrorCode::DimensionMismatch, "train/test widths differ");
  const Index n_tr = v_tr.rows(), n_te = v_te.rows();
  require(n_tr >= 1 && n_te >= 1, ErrorCode::EmptyDataset, "KMM needs train and test rows");
  const double bytes = 8.0 * static_cast<double>(n_tr) * static_cast<double>(n_tr);
  require(bytes <= spec.kernel_memory_budget, ErrorCode::MemoryBudget,
          "KMM kernel matrix needs " + std::to_string(bytes / 1048576.0) + " MiB");

  QpProblem qp;
  qp.hessian = kernel_matrix(v_tr, v_tr, spec.kernel);
  qp.linear = kernel_row_sums(v_tr, v_te, spec.kernel) *
              (static_cast<double>(n_tr) / static_cast<double>(n_te));
  qp.upper = spec.upper_bound;
  qp.sum_target = static_cast<double>(n_tr);
  qp.sum_slack = spec.slack.value_or(default_kmm_slack(n_tr));

  SolverOptions opt;
  opt.tol = spec.qp_tol * std::max(1.0, qp.linear.lpNorm<Eigen::Infinity>());
  opt.max_iter = spec.qp_max_iter;
  // Gaussian Gram matrices are PSD by construction; the eigen check is
  // O(n^3) and only worthwhile for other kernels.
  const bool verify = spec.kernel.family != KernelFamily::Gaussian;
  KmmResult out;
  out.slack = qp.sum_slack;
  out.report = solve_box_sum_qp(qp, opt, verify);
  require(out.report.converged, ErrorCode::NotConverged,
          "KMM QP stopped at residual " + std::to_string(out.report.kkt_residual) + " after " +
              std::to_string(out.report.iterations) + " iterations");
  out.weights.weights = out.report.solution;
  return out;
}

inline ImportanceVector kmm_importance(const Matrix& v_tr, const Matrix& v_te,
                                       const EstimatorSpec& spec) {
  return kmm_fit(v_tr, v_te, spec).weights;
}

// ---------------------------------------------------------------------------
// EKMM

/// Random partition of 0..n-1 into `parts` groups whose sizes differ by at
/// most one; each group is sorted ascending.
inline std::vector<std::vector<Index>> random_partition(Index n, int parts, RngStream& rng) {
  require(parts >= 1 && parts <= n, ErrorCode::PartitionTooFine,
          std::to_string(parts) + " parts for " + std::to_string(n) + " rows leaves a part empty");
  const auto perm = rng.permutation(n);
  std::vector<std::vector<Index>> groups(static_cast<std::size_t>(parts));
  const Index base = n / parts, extra = n % parts;
  Index pos = 0;
  for (int k = 0; k < parts; ++k) {
    const Index size = base + (k < extra ? 1 : 0);
    auto& g = groups[static_cast<std::size_t>(k)];
    g.assign(perm.begin() + pos, perm.begin() + pos + size);
    std::sort(g.begin(), g.end());
    pos += size;
  }
  return groups;
}

inline Matrix take_rows(const Matrix& m, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Index>(r)) = m.row(rows[r]);
  return out;
}

inline ImportanceVector ekmm_importance(const Matrix& v_tr, const Matrix& v_te,
                                        const EstimatorSpec& spec, RngStream rng) {
  const Index n_tr = v_tr.rows(), n_te = v_te.rows();
  ImportanceVector out{Vector::Zero(n_tr)};
  if (spec.ensemble_axis == EnsembleAxis::TestPartition) {
    const auto groups = random_partition(n_te, spec.partitions, rng);
    for (const auto& g : groups) {
      const Vector wk = kmm_importance(v_tr, take_rows(v_te, g), spec).weights;
      out.weights += (static_cast<double>(g.size()) / static_cast<double>(n_te)) * wk;
    }
  } else {
    const auto groups = random_partition(n_tr, spec.partitions, rng);
    for (const auto& g : groups) {
      const Vector wk = kmm_importance(take_rows(v_tr, g), v_te, spec).weights;
      for (std::size_t r = 0; r < g.size(); ++r) out.weights(g[r]) = wk(static_cast<Index>(r));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// KDE

/// Density of `samples` evaluated at each row of `points`. Gaussian uses
/// 1/(n (2 pi s^2)^(d/2)); Epanechnikov uses the product-kernel 1/(n s^d).
inline Vector kde_density(const Matrix& points, const Matrix& samples, const KernelConfig& cfg) {
  require(points.cols() == samples.cols(), ErrorCode::DimensionMismatch, "KDE widths differ");
  require(samples.rows() >= 1, ErrorCode::EmptyDataset, "KDE needs samples");
  const double n = static_cast<double>(samples.rows());
  const double d = static_cast<double>(samples.cols());
  const double s = cfg.bandwidth;
  const double norm = cfg.family == KernelFamily::Gaussian
                          ? n * std::pow(2.0 * 3.14159265358979323846 * s * s, d / 2.0)
                          : n * std::pow(s, d);
  return kernel_row_sums(points, samples, cfg) / norm;
}

struct KdeResult {
  ImportanceVector weights;
  Vector density_train;  // p_tr at train rows
  Vector density_test;   // p_te at train rows
};

inline KdeResult kde_fit(const Matrix& v_tr, const Matrix& v_te, const EstimatorSpec& spec) {
  require(v_tr.rows() >= 1 && v_te.rows() >= 1, ErrorCode::EmptyDataset, "KDE needs train and test rows");
  KdeResult r;
  r.density_train = kde_density(v_tr, v_tr, spec.kernel);
  r.density_test = kde_density(v_tr, v_te, spec.kernel);
  r.weights.weights.resize(v_tr.rows());
  for (Index i = 0; i < v_tr.rows(); ++i)
    r.weights.weights(i) = r.density_test(i) / std::max(r.density_train(i), 1e-300);
  return r;
}

inline ImportanceVector kde_importance(const Matrix& v_tr, const Matrix& v_te,
                                       const EstimatorSpec& spec) {
  return kde_fit(v_tr, v_te, spec).weights;
}

// ---------------------------------------------------------------------------
// KLIEP

struct KliepResult {
  ImportanceVector weights;
  double sigma = 0.0;
  std::vector<double> cv_scores;  // aligned with the sorted sigma grid
  std::vector<double> sigmas;
  std::vector<Index> centers;     // test rows used as basis centers
  Vector alpha;
  SolverReport report;
};

/// Mean held-out log importance for one bandwidth, averaged over folds of
/// the test rows. Basis functions centered on held-out rows are left out of
/// that fold's fit. -inf when some fold cannot be fit.
inline double kliep_cv_score(const Matrix& basis_tr, const Matrix& basis_te,
                             const std::vector<std::vector<Index>>& folds,
                             const std::vector<Index>& centers, const SolverOptions& opt) {
  double total = 0.0;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    std::vector<Index> fit_rows;
    for (std::size_t g = 0; g < folds.size(); ++g)
      if (g != f) fit_rows.insert(fit_rows.end(), folds[g].begin(), folds[g].end());
    std::sort(fit_rows.begin(), fit_rows.end());
    std::vector<Index> cols;
    for (std::size_t k = 0; k < centers.size(); ++k)
      if (std::binary_search(fit_rows.begin(), fit_rows.end(), centers[k])) cols.push_back(static_cast<Index>(k));
    if (cols.empty()) {
      cols.resize(centers.size());
      std::iota(cols.begin(), cols.end(), Index{0});
    }
    try {
      const auto sol = kliep_ascent(basis_tr(Eigen::all, cols), take_rows(basis_te, fit_rows)(Eigen::all, cols), opt);
      const Vector held = take_rows(basis_te, folds[f])(Eigen::all, cols) * sol.alpha;
      double s = 0.0;
      for (Index r = 0; r < held.size(); ++r) s += std::log(std::max(held(r), 1e-300));
      total += s / static_cast<double>(held.size());
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DegenerateBasis) throw;
      return -std::numeric_limits<double>::infinity();
    }
  }
  return total / static_cast<double>(folds.size());
}

inline KliepResult kliep_fit(const Matrix& v_tr, const Matrix& v_te, const EstimatorSpec& spec,
                             RngStream rng) {
  require(v_tr.cols() == v_te.cols(), ErrorCode::DimensionMismatch, "train/test widths differ");
  const Index n_te = v_te.rows();
  require(n_te >= 1 && v_tr.rows() >= 1, ErrorCode::EmptyDataset, "KLIEP needs train and test rows");

  KliepResult out;
  RngStream center_rng = rng.child("centers");
  RngStream fold_rng = rng.child("folds");
  const Index b = std::min<Index>(spec.basis_count, n_te);
  auto perm = center_rng.permutation(n_te);
  out.centers.assign(perm.begin(), perm.begin() + b);
  std::sort(out.centers.begin(), out.centers.end());
  const Matrix centers = take_rows(v_te, out.centers);

  SolverOptions opt{spec.kliep_tol, spec.kliep_max_iter};
  out.sigmas = spec.sigma_grid;
  std::sort(out.sigmas.begin(), out.sigmas.end());
  out.sigmas.erase(std::unique(out.sigmas.begin(), out.sigmas.end()), out.sigmas.end());

  const auto basis = [&](const Matrix& x, double sigma) {
    return kernel_matrix(x, centers, KernelConfig{KernelFamily::Gaussian, sigma});
  };

  const int folds = static_cast<int>(std::min<Index>(spec.kliep_folds, n_te));
  if (out.sigmas.size() == 1 || folds < 2) {
    out.sigma = out.sigmas.back();
  } else {
    const auto fold_rows = random_partition(n_te, folds, fold_rng);
    double best = -std::numeric_limits<double>::infinity();
    for (double sigma : out.sigmas) {
      const double score = kliep_cv_score(basis(v_tr, sigma), basis(v_te, sigma), fold_rows, out.centers, opt);
      out.cv_scores.push_back(score);
      // Strict improvement only: ties keep the smaller bandwidth.
      if (score > best) {
        best = score;
        out.sigma = sigma;
      }
    }
    require(std::isfinite(best), ErrorCode::DegenerateBasis,
            "no bandwidth in the grid gives a finite held-out likelihood");
  }

  const Matrix basis_tr = basis(v_tr, out.sigma);
  auto sol = kliep_ascent(basis_tr, basis(v_te, out.sigma), opt);
  require(sol.report.converged, ErrorCode::NotConverged,
          "KLIEP ascent hit the iteration limit (" + std::to_string(opt.max_iter) + ")");
  out.alpha = sol.alpha;
  out.report = std::move(sol.report);
  out.weights.weights = basis_tr * out.alpha;
  return out;
}

inline ImportanceVector kliep_importance(const Matrix& v_tr, const Matrix& v_te,
                                         const EstimatorSpec& spec, RngStream rng) {
  return kliep_fit(v_tr, v_te, spec, rng).weights;
}

// ---------------------------------------------------------------------------
// Entry point

struct FeaturePair {
  Matrix train;
  Matrix test;
  PhiMapper mapper;
};

/// phi fit on the training split, applied to both sides, then z-scored
/// with train statistics when the spec asks for it.
inline FeaturePair prepare_features(const EstimatorSpec& spec, const Dataset& train,
                                    const Matrix& test_covariates) {
  require(train.dim() == test_covariates.cols(), ErrorCode::DimensionMismatch,
          "train has " + std::to_string(train.dim()) + " covariates, test has " +
              std::to_string(test_covariates.cols()));
  PhiMapper mapper = fit_phi(train, spec.phi_mode, spec.phi_learner);
  Matrix tr = mapper.apply(train.covariates);
  Matrix te = mapper.apply(test_covariates);
  if (spec.standardize) {
    auto s = standardize(tr, te);
    tr = std::move(s.train);
    te = std::move(s.test);
  }
  return {std::move(tr), std::move(te), std::move(mapper)};
}

inline ImportanceVector estimate_features(const EstimatorSpec& spec, const Matrix& v_tr,
                                          const Matrix& v_te, const RngStream& rng) {
  switch (spec.method) {
    case Method::LR: return lr_importance(v_tr, v_te, spec.lambda_disc);
    case Method::KMM: return kmm_importance(v_tr, v_te, spec);
    case Method::EKMM: return ekmm_importance(v_tr, v_te, spec, rng.child("ekmm"));
    case Method::KDE: return kde_importance(v_tr, v_te, spec);
    case Method::KLIEP: return kliep_importance(v_tr, v_te, spec, rng.child("kliep"));
  }
  throw Error(ErrorCode::InvalidArgument, "unknown method");
}

/// Importance of every training row with respect to the test covariates.
/// Test targets are never seen.
inline ImportanceVector estimate(const EstimatorSpec& spec, const Dataset& train,
                                 const Matrix& test_covariates, const RngStream& rng) {
  spec.validate();
  const auto features = prepare_features(spec, train, test_covariates);
  ImportanceVector w = estimate_features(spec, features.train, features.test, rng);
  require(w.weights.allFinite() && (w.weights.array() >= 0).all(), ErrorCode::NonFinite,
          spec.name() + " produced a negative or non-finite weight");
  return w;
}

}  // namespace covshift

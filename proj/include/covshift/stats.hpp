#pragma once

// Friedman ranking and the Nemenyi critical difference.

#include "covshift/core.hpp"

#include <array>
#include <cmath>
#include <string>
#include <vector>

namespace covshift {

struct RankTable {
  std::vector<std::string> methods;
  std::vector<std::string> datasets;
  Matrix ranks;           // datasets x methods
  Vector average_ranks;   // per method
};

/// Ranks within one row, 1 = best, ties share the mean of their positions.
inline Vector rank_row(const Vector& scores, bool lower_is_better) {
  const Index k = scores.size();
  std::vector<Index> order(static_cast<std::size_t>(k));
  for (Index j = 0; j < k; ++j) order[static_cast<std::size_t>(j)] = j;
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return lower_is_better ? scores(a) < scores(b) : scores(a) > scores(b);
  });
  Vector r(k);
  for (Index start = 0; start < k;) {
    Index end = start + 1;
    while (end < k && scores(order[static_cast<std::size_t>(end)]) ==
                          scores(order[static_cast<std::size_t>(start)]))
      ++end;
    const double tied = 0.5 * static_cast<double>(start + 1 + end);  // mean of start+1..end
    for (Index p = start; p < end; ++p) r(order[static_cast<std::size_t>(p)]) = tied;
    start = end;
  }
  return r;
}

inline RankTable friedman_ranks(const Matrix& scores, bool lower_is_better,
                                std::vector<std::string> methods = {},
                                std::vector<std::string> datasets = {}) {
  require(scores.rows() >= 1 && scores.cols() >= 2, ErrorCode::InsufficientData,
          "ranking needs at least one dataset and two methods");
  require(scores.allFinite(), ErrorCode::NonFinite, "scores contain NaN or inf");
  RankTable t;
  t.ranks.resize(scores.rows(), scores.cols());
  for (Index i = 0; i < scores.rows(); ++i)
    t.ranks.row(i) = rank_row(scores.row(i).transpose(), lower_is_better).transpose();
  t.average_ranks = t.ranks.colwise().mean().transpose();
  if (methods.empty())
    for (Index j = 0; j < scores.cols(); ++j) methods.push_back("m" + std::to_string(j));
  if (datasets.empty())
    for (Index i = 0; i < scores.rows(); ++i) datasets.push_back("d" + std::to_string(i));
  t.methods = std::move(methods);
  t.datasets = std::move(datasets);
  return t;
}

/// Regularized upper incomplete gamma Q(a, x): power series for x < a + 1,
/// Lentz continued fraction otherwise.
inline double gamma_q(double a, double x) {
  require(a > 0 && x >= 0, ErrorCode::InvalidArgument, "gamma_q domain");
  if (x == 0) return 1.0;
  const double log_prefix = a * std::log(x) - x - std::lgamma(a);
  constexpr double eps = 1e-16;
  if (x < a + 1.0) {
    double term = 1.0 / a, sum = term, ap = a;
    for (int n = 0; n < 10000; ++n) {
      ap += 1.0;
      term *= x / ap;
      sum += term;
      if (std::abs(term) < std::abs(sum) * eps) break;
    }
    return 1.0 - sum * std::exp(log_prefix);
  }
  constexpr double tiny = 1e-300;
  double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
  for (int i = 1; i < 10000; ++i) {
    const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < eps) break;
  }
  return std::exp(log_prefix) * h;
}

/// Upper tail of the chi-square distribution.
inline double chi_square_sf(double x, double dof) { return x <= 0 ? 1.0 : gamma_q(0.5 * dof, 0.5 * x); }

struct FriedmanTest {
  double chi_square = 0.0;
  double p_value = 1.0;
};

/// 12N/(K(K+1)) * (sum_j R_j^2 - K(K+1)^2/4), chi-square with K-1 dof.
inline FriedmanTest friedman_statistic(const RankTable& t) {
  const double n = static_cast<double>(t.ranks.rows());
  const double k = static_cast<double>(t.ranks.cols());
  const double sum_sq = t.average_ranks.squaredNorm();
  FriedmanTest out;
  out.chi_square = 12.0 * n / (k * (k + 1.0)) * (sum_sq - k * (k + 1.0) * (k + 1.0) / 4.0);
  if (std::abs(out.chi_square) < 1e-12) out.chi_square = 0.0;
  out.p_value = chi_square_sf(out.chi_square, k - 1.0);
  return out;
}

/// Studentized range quantiles divided by sqrt(2), K = 2..10.
inline constexpr std::array<double, 9> kNemenyiQ05{1.960, 2.343, 2.569, 2.728, 2.850,
                                                   2.949, 3.031, 3.102, 3.164};
inline constexpr std::array<double, 9> kNemenyiQ10{1.645, 2.052, 2.291, 2.459, 2.589,
                                                   2.693, 2.780, 2.855, 2.920};

inline double nemenyi_q(int k, double alpha) {
  require(k >= 2 && k <= 10, ErrorCode::UnsupportedK,
          "critical values tabulated for 2..10 methods, got " + std::to_string(k));
  const auto idx = static_cast<std::size_t>(k - 2);
  if (std::abs(alpha - 0.05) < 1e-12) return kNemenyiQ05[idx];
  if (std::abs(alpha - 0.10) < 1e-12) return kNemenyiQ10[idx];
  throw Error(ErrorCode::InvalidArgument, "alpha must be 0.05 or 0.10");
}

/// q_alpha(K) * sqrt(K(K+1) / (6N))
inline double nemenyi_cd(int k, int n, double alpha = 0.05) {
  require(n >= 1, ErrorCode::InsufficientData, "need at least one dataset");
  const double kk = k;
  return nemenyi_q(k, alpha) * std::sqrt(kk * (kk + 1.0) / (6.0 * n));
}

/// Methods whose average rank trails the best by more than `cd`.
inline std::vector<bool> significance_marks(const RankTable& t, double cd) {
  const double best = t.average_ranks.minCoeff();
  std::vector<bool> flags(static_cast<std::size_t>(t.average_ranks.size()));
  for (Index j = 0; j < t.average_ranks.size(); ++j)
    flags[static_cast<std::size_t>(j)] = t.average_ranks(j) - best > cd;
  return flags;
}

}  // namespace covshift

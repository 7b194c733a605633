#pragma once

#include "covshift/core.hpp"

#include <cmath>
#include <string>

namespace covshift {

enum class KernelFamily { Gaussian, Epanechnikov };

inline std::string_view to_string(KernelFamily f) {
  return f == KernelFamily::Gaussian ? "gaussian" : "epanechnikov";
}

inline KernelFamily parse_kernel_family(std::string_view s) {
  if (s == "gaussian") return KernelFamily::Gaussian;
  if (s == "epanechnikov") return KernelFamily::Epanechnikov;
  throw Error(ErrorCode::InvalidArgument, "unknown kernel '" + std::string(s) + "'");
}

struct KernelConfig {
  KernelFamily family = KernelFamily::Gaussian;
  double bandwidth = 1.0;

  void validate() const {
    require(std::isfinite(bandwidth) && bandwidth > 0, ErrorCode::InvalidArgument,
            "kernel bandwidth must be positive and finite");
  }
};

namespace detail {

template <typename A, typename B>
void check_same_length(const A& a, const B& b) {
  require(a.size() == b.size(), ErrorCode::DimensionMismatch,
          "vectors of length " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
}

}  // namespace detail

/// exp(-|a-b|^2 / (2 sigma^2))
template <typename A, typename B>
double gaussian_kernel(const Eigen::DenseBase<A>& a, const Eigen::DenseBase<B>& b, double sigma) {
  detail::check_same_length(a, b);
  double sq = 0.0;
  for (Index j = 0; j < a.size(); ++j) {
    const double diff = a.derived().coeff(j) - b.derived().coeff(j);
    sq += diff * diff;
  }
  return std::exp(-sq / (2.0 * sigma * sigma));
}

/// Product Epanechnikov kernel: prod_j 3/4 (1 - u_j^2) on |u_j| <= 1.
template <typename A, typename B>
double epanechnikov_kernel(const Eigen::DenseBase<A>& a, const Eigen::DenseBase<B>& b,
                           double sigma) {
  detail::check_same_length(a, b);
  double value = 1.0;
  for (Index j = 0; j < a.size(); ++j) {
    const double u = (a.derived().coeff(j) - b.derived().coeff(j)) / sigma;
    if (std::abs(u) >= 1.0) return 0.0;
    value *= 0.75 * (1.0 - u * u);
  }
  return value;
}

template <typename A, typename B>
double kernel(const KernelConfig& cfg, const Eigen::DenseBase<A>& a,
              const Eigen::DenseBase<B>& b) {
  return cfg.family == KernelFamily::Gaussian ? gaussian_kernel(a, b, cfg.bandwidth)
                                              : epanechnikov_kernel(a, b, cfg.bandwidth);
}

/// Entry (i, j) = k(A_i, B_j). Rows of A are processed `block_rows` at a
/// time against a transposed copy of B, so the scratch beyond the output is
/// one block plus B.
inline Matrix kernel_matrix(const Matrix& a, const Matrix& b, const KernelConfig& cfg,
                            Index block_rows = 1024) {
  require(a.cols() == b.cols(), ErrorCode::DimensionMismatch,
          "kernel_matrix: " + std::to_string(a.cols()) + " vs " + std::to_string(b.cols()) +
              " columns");
  cfg.validate();
  require(block_rows >= 1, ErrorCode::InvalidArgument, "block size must be positive");
  const Index p = a.rows(), q = b.rows(), d = a.cols();
  const double sigma = cfg.bandwidth;
  Matrix out(p, q);
  const Matrix bt = b.transpose();  // column j is B_j, contiguous
  Matrix block;
  for (Index start = 0; start < p; start += block_rows) {
    const Index rows = std::min(block_rows, p - start);
    block = a.middleRows(start, rows).transpose();
    for (Index j = 0; j < q; ++j) {
      const double* bj = bt.col(j).data();
      for (Index r = 0; r < rows; ++r) {
        const double* ai = block.col(r).data();
        if (cfg.family == KernelFamily::Gaussian) {
          double sq = 0.0;
          for (Index k = 0; k < d; ++k) {
            const double diff = ai[k] - bj[k];
            sq += diff * diff;
          }
          out(start + r, j) = std::exp(-sq / (2.0 * sigma * sigma));
        } else {
          double value = 1.0;
          for (Index k = 0; k < d && value != 0.0; ++k) {
            const double u = (ai[k] - bj[k]) / sigma;
            value = std::abs(u) >= 1.0 ? 0.0 : value * 0.75 * (1.0 - u * u);
          }
          out(start + r, j) = value;
        }
      }
    }
  }
  return out;
}

}  // namespace covshift

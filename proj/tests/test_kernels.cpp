#include "covshift/kernels.hpp"

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

using namespace covshift;

namespace {

Matrix random_matrix(Index rows, Index cols, std::uint64_t seed) {
  RngStream r(seed);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = r.normal();
  return m;
}

}  // namespace

TEST(GaussianKernel, UnitAtZeroDistance) {
  Vector a(3);
  a << 1, -2, 0.5;
  for (double s : {0.1, 1.0, 7.0}) EXPECT_EQ(gaussian_kernel(a, a, s), 1.0);
}

TEST(GaussianKernel, AnalyticValue) {
  const double sigma = 0.7;
  Vector a = Vector::Zero(2), b(2);
  // |a-b|^2 = 2 sigma^2
  b << sigma, sigma;
  EXPECT_NEAR(gaussian_kernel(a, b, sigma), std::exp(-1.0), 1e-15);
  EXPECT_NEAR(std::exp(-1.0), 0.367879, 1e-6);
}

TEST(GaussianKernel, Symmetric) {
  RngStream r(1);
  for (int t = 0; t < 100; ++t) {
    Vector a(4), b(4);
    for (Index j = 0; j < 4; ++j) {
      a(j) = r.normal();
      b(j) = r.normal();
    }
    const double s = 0.2 + r.uniform();
    EXPECT_EQ(gaussian_kernel(a, b, s), gaussian_kernel(b, a, s));
  }
}

TEST(GaussianKernel, DimensionMismatch) {
  Vector a(2), b(3);
  EXPECT_THROW(gaussian_kernel(a, b, 1.0), Error);
}

TEST(EpanechnikovKernel, OneDimensionalValues) {
  Vector a(1), b(1);
  a << 0.25;
  b << 0.25;
  EXPECT_EQ(epanechnikov_kernel(a, b, 2.0), 0.75);
  b << 2.25;
  EXPECT_EQ(epanechnikov_kernel(a, b, 2.0), 0.0);
  b << 4.25;
  EXPECT_EQ(epanechnikov_kernel(a, b, 2.0), 0.0);
  b << 0.75;  // u = 0.25
  EXPECT_NEAR(epanechnikov_kernel(a, b, 2.0), 0.75 * (1 - 0.0625), 1e-15);
}

TEST(EpanechnikovKernel, ProductForm) {
  Vector a(2), b(2);
  a << 0, 0;
  b << 0.5, -0.2;
  EXPECT_NEAR(epanechnikov_kernel(a, b, 1.0), 0.75 * 0.75 * 0.96 * 0.75, 1e-15);
  b << 0.5, 1.5;  // second coordinate outside support
  EXPECT_EQ(epanechnikov_kernel(a, b, 1.0), 0.0);
}

TEST(KernelMatrix, SelfSimilarityDiagonal) {
  const Matrix a = random_matrix(3, 2, 2);
  const Matrix k = kernel_matrix(a, a, {KernelFamily::Gaussian, 1.0});
  ASSERT_EQ(k.rows(), 3);
  ASSERT_EQ(k.cols(), 3);
  for (Index i = 0; i < 3; ++i) EXPECT_EQ(k(i, i), 1.0);
}

TEST(KernelMatrix, MatchesPointwiseCalls) {
  const Matrix a = random_matrix(7, 3, 3), b = random_matrix(5, 3, 4);
  for (auto fam : {KernelFamily::Gaussian, KernelFamily::Epanechnikov}) {
    const KernelConfig cfg{fam, 1.3};
    const Matrix k = kernel_matrix(a, b, cfg, 2);
    RngStream r(5);
    for (int t = 0; t < 20; ++t) {
      const Index i = static_cast<Index>(r.below(7)), j = static_cast<Index>(r.below(5));
      EXPECT_EQ(k(i, j), kernel(cfg, a.row(i), b.row(j)));
    }
  }
}

TEST(KernelMatrix, TransposeSymmetry) {
  const Matrix a = random_matrix(6, 2, 6), b = random_matrix(9, 2, 7);
  for (auto fam : {KernelFamily::Gaussian, KernelFamily::Epanechnikov}) {
    const KernelConfig cfg{fam, 2.0};
    EXPECT_EQ(kernel_matrix(a, b, cfg).transpose(), kernel_matrix(b, a, cfg));
  }
}

TEST(KernelMatrix, BlockSizeDoesNotChangeResult) {
  const Matrix a = random_matrix(37, 3, 8), b = random_matrix(11, 3, 9);
  const KernelConfig cfg{KernelFamily::Gaussian, 0.9};
  const Matrix ref = kernel_matrix(a, b, cfg, 1024);
  for (Index block : {1, 4, 10, 36, 37})
    EXPECT_EQ(kernel_matrix(a, b, cfg, block), ref) << "block " << block;
}

TEST(KernelMatrix, GaussianGramIsPsd) {
  const Matrix a = random_matrix(10, 2, 10);
  const Matrix k = kernel_matrix(a, a, {KernelFamily::Gaussian, 1.0});
  EXPECT_EQ(k, k.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(k);
  EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-8);
}

TEST(KernelMatrix, OutputRanges) {
  const Matrix a = random_matrix(20, 3, 11), b = random_matrix(15, 3, 12);
  const Matrix g = kernel_matrix(a, b, {KernelFamily::Gaussian, 0.5});
  EXPECT_GE(g.minCoeff(), 0.0);
  EXPECT_LE(g.maxCoeff(), 1.0);
  const Matrix e = kernel_matrix(a, b, {KernelFamily::Epanechnikov, 2.5});
  EXPECT_GE(e.minCoeff(), 0.0);
  EXPECT_LE(e.maxCoeff(), std::pow(0.75, 3));
}

TEST(KernelMatrix, Errors) {
  EXPECT_THROW(kernel_matrix(Matrix(2, 2), Matrix(2, 3), {}), Error);
  EXPECT_THROW(kernel_matrix(Matrix(2, 2), Matrix(2, 2), {KernelFamily::Gaussian, 0.0}), Error);
}

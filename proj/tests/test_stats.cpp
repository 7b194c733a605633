#include "covshift/stats.hpp"

#include "test_util.hpp"

#include <algorithm>

using namespace covshift;
using testutil::code_of;

namespace {

Vector row(std::initializer_list<double> v) {
  Vector r(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) r(i++) = x;
  return r;
}

}  // namespace

TEST(Ranks, StrictOrderAndTies) {
  EXPECT_EQ(rank_row(row({0.1, 0.2, 0.3}), true), row({1, 2, 3}));
  EXPECT_EQ(rank_row(row({0.1, 0.1, 0.3}), true), row({1.5, 1.5, 3}));
  EXPECT_EQ(rank_row(row({0.1, 0.2, 0.3}), false), row({3, 2, 1}));
  EXPECT_EQ(rank_row(row({5, 5, 5, 5}), true), row({2.5, 2.5, 2.5, 2.5}));
  EXPECT_EQ(rank_row(row({2, 1, 2, 0, 1}), true), row({4.5, 2.5, 4.5, 1, 2.5}));
}

TEST(Ranks, RowSumsAndDuality) {
  RngStream r(1);
  Matrix s(30, 5);
  for (Index i = 0; i < s.size(); ++i) s.data()[i] = static_cast<double>(r.below(4));  // many ties
  const RankTable lo = friedman_ranks(s, true);
  const RankTable hi = friedman_ranks(-s, false);
  for (Index i = 0; i < s.rows(); ++i) EXPECT_EQ(lo.ranks.row(i).sum(), 15.0);
  EXPECT_EQ(lo.ranks, hi.ranks);
  EXPECT_EQ(lo.average_ranks.size(), 5);
  EXPECT_DOUBLE_EQ(lo.average_ranks(2), lo.ranks.col(2).mean());
}

TEST(Ranks, RejectsNonFinite) {
  Matrix s = Matrix::Ones(2, 3);
  s(1, 1) = std::nan("");
  EXPECT_EQ(code_of([&] { friedman_ranks(s, true); }), ErrorCode::NonFinite);
}

TEST(GammaQ, ClosedFormChiSquareTails) {
  for (double x : {0.01, 0.3, 1.0, 2.5, 3.841458820694124, 7.0, 15.0, 40.0}) {
    EXPECT_NEAR(chi_square_sf(x, 1), std::erfc(std::sqrt(x / 2)), 1e-12) << x;
    EXPECT_NEAR(chi_square_sf(x, 2), std::exp(-x / 2), 1e-12) << x;
    EXPECT_NEAR(chi_square_sf(x, 4), std::exp(-x / 2) * (1 + x / 2), 1e-12) << x;
  }
  EXPECT_NEAR(chi_square_sf(3.841458820694124, 1), 0.05, 1e-12);
  EXPECT_NEAR(chi_square_sf(5.991464547107979, 2), 0.05, 1e-12);
  EXPECT_EQ(chi_square_sf(0.0, 3), 1.0);
}

TEST(Friedman, IdenticalRankingsByHand) {
  Matrix s(10, 3);
  for (Index i = 0; i < 10; ++i) s.row(i) << 0.1, 0.2, 0.3;
  const FriedmanTest f = friedman_statistic(friedman_ranks(s, true));
  EXPECT_NEAR(f.chi_square, 20.0, 1e-12);
  EXPECT_NEAR(f.p_value, std::exp(-10.0), 1e-15);
}

TEST(Friedman, NullCase) {
  const Matrix s = Matrix::Ones(6, 4);
  const FriedmanTest f = friedman_statistic(friedman_ranks(s, true));
  EXPECT_EQ(f.chi_square, 0.0);
  EXPECT_EQ(f.p_value, 1.0);
}

TEST(Friedman, PValueFallsWithMoreDatasets) {
  double previous = 1.0;
  for (int n : {4, 8, 16, 32}) {
    Matrix s(n, 3);
    for (Index i = 0; i < n; ++i)
      if (i % 4 == 3) s.row(i) << 0.2, 0.1, 0.3;
      else s.row(i) << 0.1, 0.2, 0.3;
    const FriedmanTest f = friedman_statistic(friedman_ranks(s, true));
    EXPECT_LT(f.p_value, previous);
    previous = f.p_value;
  }
}

TEST(Nemenyi, PaperCriticalDifferences) {
  EXPECT_NEAR(nemenyi_cd(3, 10), 1.0483, 1e-3);
  EXPECT_NEAR(nemenyi_cd(3, 11), 0.9995, 1e-3);
  EXPECT_NEAR(nemenyi_cd(3, 15), 0.8559, 1e-3);
  EXPECT_EQ(nemenyi_q(3, 0.05), 2.343);
}

TEST(Nemenyi, MonotoneInKAndN) {
  for (int k = 2; k <= 10; ++k) {
    for (int n = 2; n < 40; ++n) EXPECT_LT(nemenyi_cd(k, n + 1), nemenyi_cd(k, n));
    if (k < 10) {
      EXPECT_LT(nemenyi_cd(k, 12), nemenyi_cd(k + 1, 12));
    }
    EXPECT_LT(nemenyi_cd(k, 12, 0.10), nemenyi_cd(k, 12, 0.05));
  }
}

TEST(Nemenyi, UnsupportedArguments) {
  EXPECT_EQ(code_of([] { nemenyi_cd(11, 10); }), ErrorCode::UnsupportedK);
  EXPECT_EQ(code_of([] { nemenyi_cd(1, 10); }), ErrorCode::UnsupportedK);
  EXPECT_EQ(code_of([] { nemenyi_cd(3, 10, 0.01); }), ErrorCode::InvalidArgument);
}

TEST(Significance, FlagsTrailingMethods) {
  RankTable t;
  t.average_ranks = row({1.0, 1.5, 2.9});
  EXPECT_EQ(significance_marks(t, 1.0), (std::vector<bool>{false, false, true}));
  t.average_ranks = row({2.0, 2.0, 2.0});
  EXPECT_EQ(significance_marks(t, 0.0), (std::vector<bool>{false, false, false}));
}

TEST(Significance, InvariantToColumnOrder) {
  RngStream r(2);
  Matrix s(12, 4);
  for (Index i = 0; i < s.size(); ++i) s.data()[i] = r.uniform() + 0.1 * static_cast<double>(i % 4);
  const std::vector<Index> perm{2, 0, 3, 1};
  Matrix p(12, 4);
  for (Index j = 0; j < 4; ++j) p.col(j) = s.col(perm[static_cast<std::size_t>(j)]);
  const auto a = significance_marks(friedman_ranks(s, true), 0.8);
  const auto b = significance_marks(friedman_ranks(p, true), 0.8);
  for (Index j = 0; j < 4; ++j)
    EXPECT_EQ(b[static_cast<std::size_t>(j)], a[static_cast<std::size_t>(perm[static_cast<std::size_t>(j)])]);
}

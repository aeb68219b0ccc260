#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "grades_lab/error.hpp"
#include "grades_lab/matrix.hpp"
#include "grades_lab/norms.hpp"
#include "oracles.hpp"

using namespace grades_lab;
namespace n = grades_lab::norms;

namespace {

const MatrixD kSample = MatrixD::from_rows({{1, -2}, {3, 0}});

}  // namespace

TEST(Matrix, RejectsZeroDimensions) {
  EXPECT_THROW(MatrixD(0, 3), ShapeError);
  EXPECT_THROW(MatrixD(2, 0), ShapeError);
  EXPECT_THROW(MatrixD(2, 2, std::vector<double>(3)), ShapeError);
}

TEST(Matrix, RowMajorLayout) {
  const MatrixD m = MatrixD::from_rows({{1, 2, 3}, {4, 5, 6}});
  const std::vector<double> expect{1, 2, 3, 4, 5, 6};
  EXPECT_TRUE(std::equal(m.values().begin(), m.values().end(), expect.begin()));
}

TEST(Matrix, MatmulVariantsAgreeWithTranspose) {
  const MatrixD a = oracle::random_matrix(3, 4, 1), b = oracle::random_matrix(5, 4, 2);
  const MatrixD c = oracle::random_matrix(3, 5, 3);
  EXPECT_EQ(matmul_nt(a, b), matmul(a, transpose(b)));
  EXPECT_EQ(matmul_tn(a, c), matmul(transpose(a), c));
  EXPECT_THROW(matmul(a, a), ShapeError);
}

TEST(L1Elementwise, Examples) {
  EXPECT_EQ(n::l1_elementwise(MatrixD(2, 2)), 0.0);
  EXPECT_EQ(n::l1_elementwise(kSample), 6.0);
}

TEST(L1Elementwise, RandomMatchesScalarLoop) {
  const MatrixD m = oracle::random_matrix(3, 3, 42);
  EXPECT_DOUBLE_EQ(n::l1_elementwise(m), oracle::l1(oracle::to_grid(m)));
}

TEST(L1Elementwise, RejectsNonFinite) {
  MatrixD m(2, 2);
  m(1, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(n::l1_elementwise(m), InvalidInput);
  m(1, 1) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(n::frobenius(m), InvalidInput);
  EXPECT_THROW(n::spectral(m), InvalidInput);
}

TEST(L1Diff, Examples) {
  const MatrixD a = oracle::random_matrix(3, 2, 5);
  EXPECT_EQ(n::l1_diff(a, a), 0.0);
  EXPECT_EQ(n::l1_diff(MatrixD::from_rows({{1, 1}}), MatrixD::from_rows({{0, 2}})), 2.0);
  EXPECT_THROW(n::l1_diff(MatrixD(2, 2), MatrixD(2, 3)), ShapeError);
}

TEST(L1Diff, EqualsNormOfDifference) {
  const MatrixD a = oracle::random_matrix(4, 4, 7), b = oracle::random_matrix(4, 4, 8);
  EXPECT_EQ(n::l1_diff(a, b), n::l1_elementwise(subtract(a, b)));
  EXPECT_EQ(n::l1_diff(a, b), n::l1_diff(b, a));
  const MatrixF af = matrix_cast<float>(a), bf = matrix_cast<float>(b);
  EXPECT_EQ(n::l1_diff(af, bf), n::l1_elementwise(subtract(af, bf)));
}

TEST(Frobenius, Examples) {
  EXPECT_NEAR(n::frobenius(MatrixD::identity(2)), std::sqrt(2.0), 1e-15);
  EXPECT_EQ(n::frobenius(MatrixD(3, 3)), 0.0);
  EXPECT_EQ(n::frobenius(MatrixD::from_rows({{3, 4}})), 5.0);
}

TEST(SubordinateInf, Examples) {
  EXPECT_EQ(n::subordinate_inf(kSample), 3.0);
  EXPECT_EQ(n::subordinate_inf(MatrixD::from_rows({{0, 0}, {5, 5}})), 10.0);
  const MatrixD m = oracle::random_matrix(5, 3, 11);
  EXPECT_DOUBLE_EQ(n::subordinate_inf(m), oracle::max_row_sum(oracle::to_grid(m)));
}

TEST(SubordinateOne, Examples) {
  EXPECT_EQ(n::subordinate_one(kSample), 4.0);
  EXPECT_EQ(n::subordinate_one(MatrixD::identity(5)), 1.0);
  const MatrixD m = oracle::random_matrix(3, 5, 11);
  EXPECT_DOUBLE_EQ(n::subordinate_one(m), oracle::max_col_sum(oracle::to_grid(m)));
}

TEST(Spectral, Examples) {
  EXPECT_NEAR(n::spectral(MatrixD::identity(2)), 1.0, 1e-12);
  EXPECT_NEAR(n::spectral(MatrixD::from_rows({{3, 0}, {0, 1}})), 3.0, 1e-12);
  EXPECT_EQ(n::spectral(MatrixD(2, 3)), 0.0);
}

TEST(Spectral, StartVectorOrthogonalToTopSingularVector) {
  // The all-ones start has no component along (1, -1), the top direction here.
  const MatrixD m = MatrixD::from_rows({{2, -2}, {0.1, 0.1}});
  EXPECT_NEAR(n::spectral(m), oracle::spectral(oracle::to_grid(m)), 1e-9);
}

class SpectralEigenOracle : public ::testing::TestWithParam<std::pair<std::size_t, std::uint64_t>> {};

TEST_P(SpectralEigenOracle, MatchesCharacteristicPolynomialRoot) {
  const auto [dim, seed] = GetParam();
  const MatrixD m = oracle::random_matrix(dim, dim, seed);
  const double expect = oracle::spectral(oracle::to_grid(m));
  EXPECT_NEAR(n::spectral(m), expect, 1e-8 * expect);
}

INSTANTIATE_TEST_SUITE_P(Sizes, SpectralEigenOracle,
                         ::testing::Values(std::pair<std::size_t, std::uint64_t>{2, 1},
                                           std::pair<std::size_t, std::uint64_t>{2, 2},
                                           std::pair<std::size_t, std::uint64_t>{3, 1},
                                           std::pair<std::size_t, std::uint64_t>{3, 4},
                                           std::pair<std::size_t, std::uint64_t>{4, 3}));

TEST(Spectral, ReportsNonConvergence) {
  // Two nearly equal singular values make power iteration crawl.
  const MatrixD m = MatrixD::from_rows({{1.0, 0.0}, {0.0, 0.999999}});
  MatrixD rotated = matmul(MatrixD::from_rows({{0.6, 0.8}, {-0.8, 0.6}}), m);
  try {
    (void)n::spectral(rotated, n::SpectralOptions{1e-15, 3});
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("3"), std::string::npos);
  }
}

TEST(NormProperties, AbsoluteHomogeneity) {
  std::mt19937_64 eng(123);
  std::uniform_real_distribution<double> scale(-5.0, 5.0);
  for (std::uint64_t s = 0; s < 50; ++s) {
    const MatrixD a = oracle::random_matrix(1 + s % 6, 1 + (s / 6) % 6, s);
    const double c = scale(eng);
    const MatrixD ca = scaled(a, c);
    const auto tol = [](double v) { return 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, v) * 16; };
    for (auto f : {&n::l1_elementwise<double>, &n::frobenius<double>, &n::subordinate_inf<double>,
                   &n::subordinate_one<double>}) {
      const double expect = std::fabs(c) * f(a);
      EXPECT_NEAR(f(ca), expect, tol(expect));
    }
    const double expect = std::fabs(c) * n::spectral(a);
    EXPECT_NEAR(n::spectral(ca), expect, 1e-9 * std::max(1.0, expect));
  }
}

TEST(NormProperties, ElementwiseL1BoundsTheOthers) {
  std::mt19937_64 eng(2024);
  for (int s = 0; s < 1000; ++s) {
    const std::size_t r = 1 + eng() % 16, c = 1 + eng() % 16;
    const MatrixD a = oracle::random_matrix(r, c, eng(), -10.0, 10.0);
    const double l1 = n::l1_elementwise(a);
    EXPECT_LE(n::spectral(a), l1 + 1e-8);
    EXPECT_LE(n::frobenius(a), l1 + 1e-8);
    EXPECT_LE(n::subordinate_inf(a), l1);
    EXPECT_LE(n::subordinate_one(a), l1);
  }
}

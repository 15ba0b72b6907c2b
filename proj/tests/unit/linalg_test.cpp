#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "grok/linalg.hpp"
#include "support.hpp"

namespace grok {
namespace {

using test::max_abs;
using test::naive_mul;
using test::random_mat;

double orthonormality(const Mat& cols) {
  return max_abs(naive_mul(cols.transposed(), cols), Mat::identity(cols.cols()));
}

// Largest eigenvalue of a symmetric PSD matrix by power iteration.
double power_top(const Mat& s) {
  std::vector<double> v(s.rows(), 1.0);
  double lambda = 0.0;
  for (int it = 0; it < 5000; ++it) {
    std::vector<double> w(s.rows(), 0.0);
    for (std::size_t i = 0; i < s.rows(); ++i)
      for (std::size_t j = 0; j < s.cols(); ++j) w[i] += s(i, j) * v[j];
    const double n = std::sqrt(std::inner_product(w.begin(), w.end(), w.begin(), 0.0));
    for (std::size_t i = 0; i < w.size(); ++i) v[i] = w[i] / n;
    if (std::abs(n - lambda) < 1e-15 * n) break;
    lambda = n;
  }
  return lambda;
}

TEST(Svd, DiagonalExample) {
  const std::vector<double> d{3.0, 0.0};
  const SvdResult f = svd(Mat::diag(d));
  ASSERT_EQ(f.s.size(), 2u);
  EXPECT_NEAR(f.s[0], 3.0, 1e-14);
  EXPECT_NEAR(f.s[1], 0.0, 1e-14);
  EXPECT_LT(max_abs(reconstruct(f), Mat::diag(d)), 1e-14);
}

TEST(Svd, TopValueMatchesPowerIteration) {
  for (auto [m, n] : std::vector<std::pair<int, int>>{{8, 5}, {5, 8}, {30, 30}, {64, 3}}) {
    const Mat a = random_mat(m, n, 11 + m * n);
    const SvdResult f = svd(a);
    const double top = power_top(naive_mul(a.transposed(), a));
    EXPECT_NEAR(f.s[0] * f.s[0], top, 1e-9 * top) << m << "x" << n;
  }
}

TEST(Svd, PropertiesOnRandomMatrices) {
  SplitMix64 rng(7);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t m = 1 + rng.below(64), n = 1 + rng.below(64);
    const Mat a = random_mat(m, n, 100 + trial);
    const SvdResult f = svd(a);
    const std::size_t r = std::min(m, n);
    ASSERT_EQ(f.s.size(), r);
    Mat diff = naive_mul(naive_mul(f.u, Mat::diag(f.s)), f.vt);
    for (std::size_t i = 0; i < a.size(); ++i) diff.data()[i] -= a.data()[i];
    EXPECT_LT(frobenius(diff), 1e-9 * frobenius(a));
    EXPECT_LT(orthonormality(f.u), 1e-10);
    EXPECT_LT(orthonormality(f.vt.transposed()), 1e-10);
    EXPECT_TRUE(std::is_sorted(f.s.rbegin(), f.s.rend()));
    EXPECT_GE(f.s.back(), 0.0);
  }
}

TEST(Svd, RightVectorsHaveFixedSign) {
  const SvdResult f = svd(random_mat(12, 9, 3));
  for (std::size_t i = 0; i < f.vt.rows(); ++i) {
    const auto row = f.vt.row(i);
    const auto it = std::max_element(row.begin(), row.end(),
                                      [](double x, double y) { return std::abs(x) < std::abs(y); });
    EXPECT_GT(*it, 0.0);
  }
}

TEST(Svd, EckartYoungResidual) {
  const Mat a = random_mat(40, 25, 9);
  const SvdResult f = svd(a);
  for (std::size_t k = 0; k <= f.s.size(); ++k) {
    Mat d = low_rank(a, k);
    for (std::size_t i = 0; i < a.size(); ++i) d.data()[i] = a.data()[i] - d.data()[i];
    double tail = 0.0;
    for (std::size_t i = k; i < f.s.size(); ++i) tail += f.s[i] * f.s[i];
    const double res = frobenius(d) * frobenius(d);
    EXPECT_NEAR(res, tail, 1e-9 * std::max(1.0, frobenius(a) * frobenius(a))) << "k=" << k;
  }
}

TEST(Svd, WideMatricesReconstruct) {
  // Shapes of the encoder weight deltas.
  for (auto [m, n] : std::vector<std::pair<int, int>>{{128, 256}, {256, 128}, {100, 200}}) {
    const Mat a = random_mat(m, n, m + n);
    const Mat r = low_rank(a, std::min(m, n));
    EXPECT_LT(max_abs(r, a), 1e-10) << m << "x" << n;
  }
}

TEST(Svd, RejectsNonFinite) {
  Mat a(3, 3);
  a(1, 1) = std::nan("");
  EXPECT_THROW(svd(a), LinalgError);
}

TEST(SymEig, MatchesReconstruction) {
  const Mat b = random_mat(10, 6, 5);
  const Mat s = naive_mul(b.transposed(), b);
  const SymEig e = sym_eig(s);
  EXPECT_TRUE(std::is_sorted(e.values.rbegin(), e.values.rend()));
  const Mat r = naive_mul(naive_mul(e.vectors, Mat::diag(e.values)), e.vectors.transposed());
  EXPECT_LT(max_abs(r, s), 1e-10);
  EXPECT_NEAR(e.values[0], power_top(s), 1e-9 * e.values[0]);
}

TEST(GramTopDirs, AgreesWithDirectSvd) {
  for (std::size_t m : {1u, 4u, 17u, 32u}) {
    const Mat a = random_mat(m, 300, 40 + m);
    const SvdResult f = svd(a);
    const GramDirections g = gram_top_dirs(a, m);
    ASSERT_EQ(g.s.size(), m);
    for (std::size_t i = 0; i < m; ++i) EXPECT_NEAR(g.s[i], f.s[i], 1e-8 * f.s[i]);
    EXPECT_LT(orthonormality(g.dirs), 1e-10);
    // Directions agree up to sign.
    for (std::size_t i = 0; i < m; ++i) {
      double c = 0.0;
      for (std::size_t j = 0; j < 300; ++j) c += g.dirs(j, i) * f.vt(i, j);
      EXPECT_NEAR(std::abs(c), 1.0, 1e-8);
    }
  }
}

TEST(GramTopDirs, RankDeficientKeepsOrthonormalDirections) {
  Mat a = random_mat(6, 50, 1);
  for (std::size_t j = 0; j < 50; ++j) a(5, j) = a(0, j) + a(1, j);
  const GramDirections g = gram_top_dirs(a, 5);
  EXPECT_LT(orthonormality(g.dirs), 1e-10);
}

TEST(Projection, IdempotentAndComplementary) {
  const Mat basis = orthonormalize_columns(random_mat(40, 6, 2));
  ASSERT_EQ(basis.cols(), 6u);
  const Mat v = random_mat(1, 40, 8);
  const std::vector<double> x(v.values().begin(), v.values().end());
  const auto p = project_onto(x, basis);
  const auto pp = project_onto(p, basis);
  const auto q = project_out(x, basis);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_NEAR(pp[i], p[i], 1e-10);
    EXPECT_NEAR(p[i] + q[i], x[i], 1e-10);
  }
  EXPECT_NEAR(dot(p, q), 0.0, 1e-10);
  const auto c = coefficients(q, basis);
  for (double ci : c) EXPECT_NEAR(ci, 0.0, 1e-10);
}

TEST(Orthonormalize, DropsDependentColumns) {
  Mat a = random_mat(20, 4, 4);
  Mat b(20, 5);
  for (std::size_t i = 0; i < 20; ++i) {
    for (std::size_t j = 0; j < 4; ++j) b(i, j) = a(i, j);
    b(i, 4) = 2.0 * a(i, 0) - a(i, 3);
  }
  const Mat q = orthonormalize_columns(b);
  EXPECT_EQ(q.cols(), 4u);
  EXPECT_LT(orthonormality(q), 1e-12);
}

TEST(Matmul, MatchesNaiveAcrossShapes) {
  for (auto [m, k, n] : std::vector<std::array<int, 3>>{{1, 1, 1}, {3, 7, 2}, {100, 200, 100}, {64, 257, 31}}) {
    const Mat a = random_mat(m, k, 1), b = random_mat(k, n, 2);
    EXPECT_LT(max_abs(matmul(a, b), naive_mul(a, b)), 1e-11) << m << "x" << k << "x" << n;
  }
}

TEST(Hcat, ConcatenatesColumns) {
  const std::vector<Mat> blocks{random_mat(4, 2, 1), random_mat(4, 3, 2)};
  const Mat h = hcat(blocks);
  ASSERT_EQ(h.cols(), 5u);
  EXPECT_EQ(h(3, 1), blocks[0](3, 1));
  EXPECT_EQ(h(2, 4), blocks[1](2, 2));
  const std::vector<Mat> bad{random_mat(4, 2, 1), random_mat(3, 2, 1)};
  EXPECT_ANY_THROW(hcat(bad));
}

}  // namespace
}  // namespace grok

#pragma once

// Dense kernels used by the library. Single precision goes to the system
// BLAS; double precision is computed with Eigen, because the OpenBLAS
// releases shipped with common distributions (0.3.20 at least) return wrong
// DGEMM results on AVX-512 hosts for many shapes.

#include <cblas.h>

#include <Eigen/Core>

namespace grok::detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstRowMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using Vec = Eigen::Map<Eigen::VectorXd>;
using ConstVec = Eigen::Map<const Eigen::VectorXd>;

inline void gemm(bool ta, bool tb, int m, int n, int k, float alpha, const float* a, int lda,
                 const float* b, int ldb, float beta, float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n,
              k, alpha, a, lda, b, ldb, beta, c, ldc);
}

/// Row-major C = alpha op(A) op(B) + beta C.
inline void gemm(bool ta, bool tb, int m, int n, int k, double alpha, const double* a, int lda,
                 const double* b, int ldb, double beta, double* c, int ldc) {
  if (m == 0 || n == 0) return;
  RowMap cm(c, m, n, Eigen::OuterStride<>(ldc));
  if (beta == 0.0) cm.setZero();
  else if (beta != 1.0) cm *= beta;
  if (k == 0 || alpha == 0.0) return;
  const ConstRowMap am(a, ta ? k : m, ta ? m : k, Eigen::OuterStride<>(lda));
  const ConstRowMap bm(b, tb ? n : k, tb ? k : n, Eigen::OuterStride<>(ldb));
  if (!ta && !tb) cm.noalias() += alpha * am * bm;
  else if (ta && !tb) cm.noalias() += alpha * am.transpose() * bm;
  else if (!ta && tb) cm.noalias() += alpha * am * bm.transpose();
  else cm.noalias() += alpha * am.transpose() * bm.transpose();
}

/// Row-major y = A x or y = A^T x for an m x n matrix A.
inline void gemv(bool ta, int m, int n, const double* a, int lda, const double* x, double* y) {
  const ConstRowMap am(a, m, n, Eigen::OuterStride<>(lda));
  if (ta) Vec(y, n).noalias() = am.transpose() * ConstVec(x, m);
  else Vec(y, m).noalias() = am * ConstVec(x, n);
}

/// Upper triangle (and, here, the full matrix) of C = A A^T for row-major m x k A.
inline void gram(int m, int k, const double* a, double* c) {
  const ConstRowMap am(a, m, k, Eigen::OuterStride<>(k));
  RowMap cm(c, m, m, Eigen::OuterStride<>(m));
  cm.setZero();
  cm.selfadjointView<Eigen::Upper>().rankUpdate(am);
  cm.triangularView<Eigen::StrictlyLower>() = cm.transpose();
}

inline double dot(int n, const double* x, const double* y) { return ConstVec(x, n).dot(ConstVec(y, n)); }
inline double nrm2(int n, const double* x) { return ConstVec(x, n).norm(); }
inline void axpy(int n, double alpha, const double* x, double* y) { Vec(y, n) += alpha * ConstVec(x, n); }
inline void scal(int n, double alpha, double* x) { Vec(x, n) *= alpha; }

/// x <- c x + s y, y <- c y - s x.
inline void rot(int n, double* x, double* y, double c, double s) {
  for (int i = 0; i < n; ++i) {
    const double xi = x[i];
    const double yi = y[i];
    x[i] = c * xi + s * yi;
    y[i] = c * yi - s * xi;
  }
}

}  // namespace grok::detail

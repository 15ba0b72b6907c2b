#pragma once

// Dense real linear algebra in double precision.
//
// Everything here is a pure function of its arguments. The SVD is a
// one-sided (Hestenes) Jacobi iteration applied to the thin orientation of
// the input; the symmetric eigensolver is cyclic two-sided Jacobi. Large
// products (Gram matrices, projections onto wide bases) go through BLAS.

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace grok {

/// Row-major dense matrix of doubles.
class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}
  Mat(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Mat identity(std::size_t n);
  static Mat diag(std::span<const double> d);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::vector<double> col(std::size_t c) const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<const double> values() const { return data_; }

  Mat transposed() const;
  bool all_finite() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

struct SvdResult {
  Mat u;                  // m x r, orthonormal columns
  std::vector<double> s;  // r values, non-increasing
  Mat vt;                 // r x n, orthonormal rows
};

class LinalgError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kJacobiMaxSweeps = 60;
inline constexpr double kJacobiTolerance = 1e-12;

/// Thin SVD, r = min(rows, cols). The largest-magnitude entry of every right
/// singular vector is made positive. `label` names the matrix in errors.
SvdResult svd(const Mat& a, const std::string& label = "matrix");

/// Eigenpairs of a symmetric matrix, eigenvalues descending; eigenvectors are
/// the columns of `vectors`.
struct SymEig {
  std::vector<double> values;
  Mat vectors;
};
SymEig sym_eig(const Mat& a, const std::string& label = "matrix");

/// Best rank-k approximation in Frobenius norm.
Mat low_rank(const Mat& a, std::size_t k);
Mat low_rank(const SvdResult& f, std::size_t k);

/// Product U diag(s) Vt.
Mat reconstruct(const SvdResult& f);

/// Top-k right singular directions of a short, wide matrix via the m x m Gram
/// matrix. Never forms a cols x cols product.
struct GramDirections {
  Mat dirs;               // cols x k, orthonormal columns
  std::vector<double> s;  // singular values of `rows` (first k)
  std::vector<double> all_s;  // every singular value recovered from the Gram spectrum
};
GramDirections gram_top_dirs(const Mat& rows, std::size_t k);

/// Modified Gram-Schmidt on the columns of `basis`, dropping columns whose
/// residual norm falls below `drop_tol` times their original norm.
Mat orthonormalize_columns(const Mat& basis, double drop_tol = 1e-12);

/// Horizontal concatenation of column blocks with equal row counts.
Mat hcat(std::span<const Mat> blocks);

/// B Bᵀ v for a basis with orthonormal columns.
std::vector<double> project_onto(std::span<const double> v, const Mat& basis);
/// v − B Bᵀ v.
std::vector<double> project_out(std::span<const double> v, const Mat& basis);
/// Coefficients Bᵀ v.
std::vector<double> coefficients(std::span<const double> v, const Mat& basis);

Mat matmul(const Mat& a, const Mat& b);
double frobenius(const Mat& a);
double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);

}  // namespace grok

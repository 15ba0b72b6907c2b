#include "grok/linalg.hpp"

#include "blas.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace grok {

Mat::Mat(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw LinalgError("Mat: data length " + std::to_string(data_.size()) + " != " +
                      std::to_string(rows_) + "x" + std::to_string(cols_));
  }
}

Mat Mat::identity(std::size_t n) {
  Mat m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Mat Mat::diag(std::span<const double> d) {
  Mat m(d.size(), d.size());
  for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
  return m;
}

std::vector<double> Mat::col(std::size_t c) const {
  std::vector<double> out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
  return out;
}

Mat Mat::transposed() const {
  Mat t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

bool Mat::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw LinalgError("dot: length mismatch");
  return detail::dot(static_cast<int>(a.size()), a.data(), b.data());
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double frobenius(const Mat& a) { return norm2(a.values()); }

Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols() != b.rows()) throw LinalgError("matmul: inner dimension mismatch");
  Mat c(a.rows(), b.cols());
  if (c.size() == 0 || a.cols() == 0) return c;
  detail::gemm(false, false, static_cast<int>(a.rows()), static_cast<int>(b.cols()),
               static_cast<int>(a.cols()), 1.0, a.data(), static_cast<int>(a.cols()), b.data(),
               static_cast<int>(b.cols()), 0.0, c.data(), static_cast<int>(c.cols()));
  return c;
}

namespace {

// Index of the entry with largest magnitude; first one wins on ties.
std::size_t argmax_abs(const double* x, std::size_t n, std::size_t stride) {
  std::size_t best = 0;
  double best_v = -1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = std::abs(x[i * stride]);
    if (v > best_v) {
      best_v = v;
      best = i;
    }
  }
  return best;
}

// Fill columns of a column-major m x n block whose norm is zero with unit
// vectors orthogonal to all other columns.
void complete_orthonormal(std::vector<double>& u, std::size_t m, std::size_t n,
                          const std::vector<bool>& filled) {
  std::vector<bool> ok = filled;
  std::size_t candidate = 0;
  for (std::size_t j = 0; j < n; ++j) {
    if (ok[j]) continue;
    double* col = u.data() + j * m;
    for (; candidate < m; ++candidate) {
      std::fill(col, col + m, 0.0);
      col[candidate] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t k = 0; k < n; ++k) {
          if (!ok[k]) continue;
          const double* other = u.data() + k * m;
          const double proj = detail::dot(static_cast<int>(m), other, col);
          detail::axpy(static_cast<int>(m), -proj, other, col);
        }
      }
      const double nrm = detail::nrm2(static_cast<int>(m), col);
      if (nrm > 1e-6) {
        detail::scal(static_cast<int>(m), 1.0 / nrm, col);
        ok[j] = true;
        ++candidate;
        break;
      }
    }
    if (!ok[j]) throw LinalgError("svd: could not complete orthonormal basis");
  }
}

}  // namespace

SvdResult svd(const Mat& a, const std::string& label) {
  if (a.rows() == 0 || a.cols() == 0) throw LinalgError("svd: empty matrix '" + label + "'");
  if (!a.all_finite()) throw LinalgError("svd: non-finite entries in '" + label + "'");

  const bool trans = a.rows() < a.cols();
  const std::size_t m = trans ? a.cols() : a.rows();
  const std::size_t n = trans ? a.rows() : a.cols();

  // Column-major working copy of the tall orientation: column j has length m.
  std::vector<double> w(m * n);
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) {
      if (trans)
        w[r * m + c] = a(r, c);
      else
        w[c * m + r] = a(r, c);
    }
  std::vector<double> v(n * n, 0.0);
  for (std::size_t j = 0; j < n; ++j) v[j * n + j] = 1.0;

  const int mi = static_cast<int>(m);
  const int ni = static_cast<int>(n);
  bool converged = false;
  for (int sweep = 0; sweep < kJacobiMaxSweeps && !converged; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      double* wp = w.data() + p * m;
      for (std::size_t q = p + 1; q < n; ++q) {
        double* wq = w.data() + q * m;
        const double alpha = detail::dot(mi, wp, wp);
        const double beta = detail::dot(mi, wq, wq);
        const double gamma = detail::dot(mi, wp, wq);
        if (alpha == 0.0 || beta == 0.0) continue;
        if (std::abs(gamma) <= kJacobiTolerance * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        detail::rot(mi, wp, wq, c, -s);
        detail::rot(ni, v.data() + p * n, v.data() + q * n, c, -s);
      }
    }
    converged = !rotated;
  }
  if (!converged) {
    throw LinalgError("svd: no convergence after " + std::to_string(kJacobiMaxSweeps) +
                      " sweeps for '" + label + "'");
  }

  std::vector<double> sigma(n);
  for (std::size_t j = 0; j < n; ++j) sigma[j] = detail::nrm2(mi, w.data() + j * m);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  // Sorted, normalized left factor of the tall orientation (column-major).
  std::vector<double> tall(m * n, 0.0);
  std::vector<double> right(n * n);
  std::vector<double> s(n);
  std::vector<bool> filled(n, false);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t src = order[j];
    s[j] = sigma[src];
    std::copy_n(v.data() + src * n, n, right.data() + j * n);
    if (s[j] > 0.0) {
      for (std::size_t i = 0; i < m; ++i) tall[j * m + i] = w[src * m + i] / s[j];
      filled[j] = true;
    }
  }
  if (std::find(filled.begin(), filled.end(), false) != filled.end())
    complete_orthonormal(tall, m, n, filled);

  // Untransposed: A = tall * diag(s) * rightᵀ. Transposed: A = right * diag(s) * tallᵀ.
  SvdResult out{Mat(a.rows(), n), s, Mat(n, a.cols())};
  const std::vector<double>& left_cm = trans ? right : tall;
  const std::vector<double>& right_cm = trans ? tall : right;
  const std::size_t left_len = a.rows();
  const std::size_t right_len = a.cols();
  for (std::size_t j = 0; j < n; ++j) {
    const double* lc = left_cm.data() + j * left_len;
    const double* rc = right_cm.data() + j * right_len;
    const double sign = rc[argmax_abs(rc, right_len, 1)] < 0.0 ? -1.0 : 1.0;
    for (std::size_t i = 0; i < left_len; ++i) out.u(i, j) = sign * lc[i];
    for (std::size_t i = 0; i < right_len; ++i) out.vt(j, i) = sign * rc[i];
  }
  return out;
}

SymEig sym_eig(const Mat& a, const std::string& label) {
  if (a.rows() != a.cols()) throw LinalgError("sym_eig: '" + label + "' is not square");
  if (!a.all_finite()) throw LinalgError("sym_eig: non-finite entries in '" + label + "'");
  const std::size_t n = a.rows();
  Mat s = a;
  Mat vec = Mat::identity(n);
  const double abs_floor = frobenius(a) * 1e-300;

  bool converged = n <= 1;
  for (int sweep = 0; sweep < kJacobiMaxSweeps && !converged; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = s(p, q);
        const double app = s(p, p);
        const double aqq = s(q, q);
        if (std::abs(apq) <= abs_floor) continue;
        if (std::abs(apq) <= kJacobiTolerance * std::sqrt(std::abs(app * aqq))) continue;
        rotated = true;
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double sn = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double skp = s(k, p);
          const double skq = s(k, q);
          s(k, p) = c * skp - sn * skq;
          s(k, q) = sn * skp + c * skq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double spk = s(p, k);
          const double sqk = s(q, k);
          s(p, k) = c * spk - sn * sqk;
          s(q, k) = sn * spk + c * sqk;
        }
        s(p, q) = 0.0;
        s(q, p) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = vec(k, p);
          const double vkq = vec(k, q);
          vec(k, p) = c * vkp - sn * vkq;
          vec(k, q) = sn * vkp + c * vkq;
        }
      }
    }
    converged = !rotated;
  }
  if (!converged) {
    throw LinalgError("sym_eig: no convergence after " + std::to_string(kJacobiMaxSweeps) +
                      " sweeps for '" + label + "'");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return s(x, x) > s(y, y); });
  SymEig out{std::vector<double>(n), Mat(n, n)};
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t src = order[j];
    out.values[j] = s(src, src);
    double big = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (std::abs(vec(i, src)) > std::abs(big)) big = vec(i, src);
    const double sign = big < 0.0 ? -1.0 : 1.0;
    for (std::size_t i = 0; i < n; ++i) out.vectors(i, j) = sign * vec(i, src);
  }
  return out;
}

Mat reconstruct(const SvdResult& f) { return low_rank(f, f.s.size()); }

Mat low_rank(const SvdResult& f, std::size_t k) {
  if (k > f.s.size()) throw LinalgError("low_rank: k exceeds rank");
  const std::size_t m = f.u.rows();
  const std::size_t n = f.vt.cols();
  Mat out(m, n);
  if (k == 0) return out;
  // (U_k diag(s_k)) * Vt_k
  Mat us(m, k);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < k; ++j) us(i, j) = f.u(i, j) * f.s[j];
  detail::gemm(false, false, static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), 1.0,
               us.data(), static_cast<int>(k), f.vt.data(), static_cast<int>(n), 0.0, out.data(),
               static_cast<int>(n));
  return out;
}

Mat low_rank(const Mat& a, std::size_t k) {
  const std::size_t full = std::min(a.rows(), a.cols());
  if (k > full) {
    throw LinalgError("low_rank: k=" + std::to_string(k) + " outside [0, " + std::to_string(full) +
                      "]");
  }
  if (k == 0) return Mat(a.rows(), a.cols());
  return low_rank(svd(a), k);
}

Mat orthonormalize_columns(const Mat& basis, double drop_tol) {
  const std::size_t d = basis.rows();
  const int di = static_cast<int>(d);
  // Work on rows of the transpose so every vector is contiguous.
  Mat t = basis.transposed();
  std::vector<std::size_t> kept;
  for (std::size_t j = 0; j < t.rows(); ++j) {
    double* vj = t.row(j).data();
    const double original = detail::nrm2(di, vj);
    if (original == 0.0) continue;
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t k : kept) {
        const double* vk = t.row(k).data();
        detail::axpy(di, -detail::dot(di, vk, vj), vk, vj);
      }
    }
    const double residual = detail::nrm2(di, vj);
    if (residual <= drop_tol * original) continue;
    detail::scal(di, 1.0 / residual, vj);
    kept.push_back(j);
  }
  Mat out(d, kept.size());
  for (std::size_t c = 0; c < kept.size(); ++c) {
    const auto src = t.row(kept[c]);
    for (std::size_t r = 0; r < d; ++r) out(r, c) = src[r];
  }
  return out;
}

Mat hcat(std::span<const Mat> blocks) {
  if (blocks.empty()) return {};
  const std::size_t rows = blocks.front().rows();
  std::size_t cols = 0;
  for (const Mat& b : blocks) {
    if (b.rows() != rows) throw LinalgError("hcat: row count mismatch");
    cols += b.cols();
  }
  Mat out(rows, cols);
  std::size_t off = 0;
  for (const Mat& b : blocks) {
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(b.row(r).data(), b.cols(), out.row(r).data() + off);
    off += b.cols();
  }
  return out;
}

GramDirections gram_top_dirs(const Mat& rows, std::size_t k) {
  const std::size_t m = rows.rows();
  const std::size_t d = rows.cols();
  if (m == 0 || d == 0) throw LinalgError("gram_top_dirs: empty input");
  if (k > m) {
    throw LinalgError("gram_top_dirs: k=" + std::to_string(k) + " exceeds row count " +
                      std::to_string(m));
  }
  if (!rows.all_finite()) throw LinalgError("gram_top_dirs: non-finite input");

  Mat gram(m, m);
  detail::gram(static_cast<int>(m), static_cast<int>(d), rows.data(), gram.data());

  const SymEig eig = sym_eig(gram, "gram");
  if (eig.values.front() <= 0.0) throw LinalgError("gram_top_dirs: all rows are zero");

  GramDirections out;
  out.all_s.resize(m);
  for (std::size_t i = 0; i < m; ++i) out.all_s[i] = std::sqrt(std::max(eig.values[i], 0.0));

  // Eigenvalues below this are rounding noise of the largest one.
  const double floor = eig.values.front() * static_cast<double>(m) *
                       std::numeric_limits<double>::epsilon();
  std::size_t keep = 0;
  while (keep < k && eig.values[keep] > floor) ++keep;

  Mat w(m, keep);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < keep; ++j) w(i, j) = eig.vectors(i, j) / out.all_s[j];
  Mat dirs(d, keep);
  if (keep > 0) {
    detail::gemm(true, false, static_cast<int>(d), static_cast<int>(keep), static_cast<int>(m), 1.0,
                 rows.data(), static_cast<int>(d), w.data(), static_cast<int>(keep), 0.0, dirs.data(),
                 static_cast<int>(keep));
  }
  out.dirs = orthonormalize_columns(dirs, 0.0);
  if (out.dirs.cols() != keep) throw LinalgError("gram_top_dirs: lost a direction to cancellation");
  for (std::size_t j = 0; j < keep; ++j) {
    const std::size_t at = argmax_abs(out.dirs.data() + j, d, keep);
    if (out.dirs(at, j) < 0.0)
      for (std::size_t i = 0; i < d; ++i) out.dirs(i, j) = -out.dirs(i, j);
  }
  out.s.assign(out.all_s.begin(), out.all_s.begin() + static_cast<std::ptrdiff_t>(keep));
  return out;
}

std::vector<double> coefficients(std::span<const double> v, const Mat& basis) {
  if (v.size() != basis.rows()) {
    throw LinalgError("projection: vector length " + std::to_string(v.size()) +
                      " != basis rows " + std::to_string(basis.rows()));
  }
  std::vector<double> c(basis.cols(), 0.0);
  if (basis.cols() == 0) return c;
  detail::gemv(true, static_cast<int>(basis.rows()), static_cast<int>(basis.cols()), basis.data(),
               static_cast<int>(basis.cols()), v.data(), c.data());
  return c;
}

std::vector<double> project_onto(std::span<const double> v, const Mat& basis) {
  const std::vector<double> c = coefficients(v, basis);
  std::vector<double> out(v.size(), 0.0);
  if (basis.cols() == 0) return out;
  detail::gemv(false, static_cast<int>(basis.rows()), static_cast<int>(basis.cols()), basis.data(),
               static_cast<int>(basis.cols()), c.data(), out.data());
  return out;
}

std::vector<double> project_out(std::span<const double> v, const Mat& basis) {
  std::vector<double> out = project_onto(v, basis);
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] - out[i];
  return out;
}

}  // namespace grok

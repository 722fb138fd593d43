#pragma once

// Counted matrix products shared by the serial and distributed solvers.
// Both solvers go through these so that the flop counters and the floating
// point evaluation order are the same in either path.

#include "rescalk/instrument.hpp"
#include "rescalk/types.hpp"

namespace rescalk::kernels {

namespace detail {
inline void count(std::uint64_t& slot, Index a, Index b, Index c) {
  slot += static_cast<std::uint64_t>(a) * static_cast<std::uint64_t>(b) * static_cast<std::uint64_t>(c);
}
}  // namespace detail

// a^T a
template <typename T>
Matrix<T> gram(const Matrix<T>& a, OpCounter* ctr) {
  PhaseScope scope(ctr, Phase::gram_mul);
  if (ctr) detail::count(ctr->factor_madds, a.cols(), a.rows(), a.cols());
  return a.transpose() * a;
}

// a b
template <typename T>
Matrix<T> mul(const Matrix<T>& a, const Matrix<T>& b, OpCounter* ctr) {
  PhaseScope scope(ctr, Phase::matrix_mul);
  if (ctr) detail::count(ctr->factor_madds, a.rows(), a.cols(), b.cols());
  return a * b;
}

// a b^T
template <typename T>
Matrix<T> mul_bt(const Matrix<T>& a, const Matrix<T>& b, OpCounter* ctr) {
  PhaseScope scope(ctr, Phase::matrix_mul);
  if (ctr) detail::count(ctr->factor_madds, a.rows(), a.cols(), b.rows());
  return a * b.transpose();
}

// a^T b
template <typename T>
Matrix<T> mul_at(const Matrix<T>& a, const Matrix<T>& b, OpCounter* ctr) {
  PhaseScope scope(ctr, Phase::matrix_mul);
  if (ctr) detail::count(ctr->factor_madds, a.cols(), a.rows(), b.cols());
  return a.transpose() * b;
}

// x b where x is a tensor slice (dense or CSR).
template <typename T>
Matrix<T> data_mul(const Matrix<T>& x, const Matrix<T>& b, OpCounter* ctr) {
  PhaseScope scope(ctr, Phase::matrix_mul);
  if (ctr) detail::count(ctr->data_madds, x.rows(), x.cols(), b.cols());
  return x * b;
}

template <typename T>
Matrix<T> data_mul(const CsrMatrix<T>& x, const Matrix<T>& b, OpCounter* ctr) {
  PhaseScope scope(ctr, Phase::matrix_mul_sparse);
  if (ctr) detail::count(ctr->data_madds, x.nonZeros(), b.cols(), 1);
  return x * b;
}

// x^T b
template <typename T>
Matrix<T> data_mul_t(const Matrix<T>& x, const Matrix<T>& b, OpCounter* ctr) {
  PhaseScope scope(ctr, Phase::matrix_mul);
  if (ctr) detail::count(ctr->data_madds, x.cols(), x.rows(), b.cols());
  return x.transpose() * b;
}

template <typename T>
Matrix<T> data_mul_t(const CsrMatrix<T>& x, const Matrix<T>& b, OpCounter* ctr) {
  PhaseScope scope(ctr, Phase::matrix_mul_sparse);
  if (ctr) detail::count(ctr->data_madds, x.nonZeros(), b.cols(), 1);
  return x.transpose() * b;
}

// In-place multiplicative step: target <- target .* num ./ (den + eps).
template <typename T>
void multiplicative_step(Matrix<T>& target, const Matrix<T>& num, const Matrix<T>& den, T eps) {
  target.array() *= num.array() / (den.array() + eps);
}

// Squared residual ||x - a r b^T||_F^2 of one slice block, accumulated in
// double. Dense slices are evaluated explicitly; CSR slices use
// ||x||^2 - 2<x, a r b^T> + <(a^T a) r (b^T b), r> so the cost stays
// proportional to nnz.
template <typename T>
double residual_sq(const Matrix<T>& x, const Matrix<T>& a, const Matrix<T>& r, const Matrix<T>& b) {
  const Matrix<T> rec = a * (r * b.transpose());
  return (x - rec).template cast<double>().squaredNorm();
}

template <typename T>
double residual_sq(const CsrMatrix<T>& x, const Matrix<T>& a, const Matrix<T>& r, const Matrix<T>& b) {
  const Matrix<double> ar = (a * r).template cast<double>();
  const Matrix<double> bd = b.template cast<double>();
  double xx = 0.0;
  double cross = 0.0;
  for (Index row = 0; row < x.outerSize(); ++row) {
    for (typename CsrMatrix<T>::InnerIterator it(x, row); it; ++it) {
      const double v = static_cast<double>(it.value());
      xx += v * v;
      cross += v * ar.row(row).dot(bd.row(it.col()));
    }
  }
  const Matrix<double> rd = r.template cast<double>();
  const Matrix<double> ga = a.template cast<double>().transpose() * a.template cast<double>();
  const Matrix<double> gb = bd.transpose() * bd;
  const double yy = (ga * rd * gb).cwiseProduct(rd).sum();
  return std::max(0.0, xx - 2.0 * cross + yy);
}

}  // namespace rescalk::kernels

#pragma once

// Non-negative RESCAL on the sqrt(p) x sqrt(p) grid.
//
// Rank (i, j) owns tensor block X_ij, block-row i of A (A_row) and a copy of
// block-row j (A_col). R is replicated. Per outer iteration:
//
//   G      = sum_j A_j^T A_j                  all_reduce, row comm
//   for t:
//     XA_i  = sum_j X_ij A_j                   all_reduce, row comm
//     ATXA  = sum_i A_i^T XA_i                 all_reduce, col comm
//     R_t update (replicated, identical on every rank)
//     XTAR_j = sum_i X_ij^T A_i R_t            all_reduce, col comm
//     XTAR_i from diagonal rank (i, i)         broadcast, row comm
//     accumulate numerator/denominator rows of block i
//   A_i update
//   A_j from diagonal rank (j, j)              broadcast, col comm
//
// The local arithmetic is the serial sweep restricted to block rows, so a
// 1 x 1 grid reproduces the serial solver bit for bit.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

#include "rescalk/error.hpp"
#include "rescalk/grid.hpp"
#include "rescalk/kernels.hpp"
#include "rescalk/perturb.hpp"
#include "rescalk/rescal.hpp"
#include "rescalk/tensor.hpp"
#include "rescalk/types.hpp"

namespace rescalk {

template <typename T = double>
struct DistFactors {
  Matrix<T> A_row;  // block-row i of A, block_n x k
  Matrix<T> A_col;  // block-row j of A, block_n x k
  std::vector<Matrix<T>> R;
  GridCoords coords;
  Index global_n = 0;
  Index block_n = 0;

  Index k() const { return A_row.cols(); }
  Index m() const { return static_cast<Index>(R.size()); }
};

template <typename T = double>
struct DistSolveResult {
  DistFactors<T> factors;
  std::vector<double> error_trace;
  int iterations = 0;
};

namespace dist_detail {

template <typename X>
void check_block(const TensorBlock<X>& b, const GridContext& ctx) {
  if (b.grid_dim != ctx.grid_dim()) throw ShapeError("block grid dimension differs from the grid");
  if (!(b.owner == ctx.coords())) throw ShapeError("block is not owned by this rank");
  if (b.local.n() != b.block_n) throw ShapeError("block has the wrong local size");
}

template <typename T>
Matrix<T> block_rows(const Matrix<T>& a, Index first, Index block_n) {
  Matrix<T> out = Matrix<T>::Zero(block_n, a.cols());
  const Index rows = std::clamp<Index>(a.rows() - first, 0, block_n);
  if (rows > 0) out.topRows(rows) = a.middleRows(first, rows);
  return out;
}

template <typename X, typename T>
double local_residual(const X& local, const DistFactors<T>& f) {
  double acc = 0.0;
  for (Index t = 0; t < local.m(); ++t) {
    acc += kernels::residual_sq(local.slice(t), f.A_row, f.R[static_cast<std::size_t>(t)], f.A_col);
  }
  return acc;
}

}  // namespace dist_detail

/// Seeded random start. Rows are generated from their global index, so
/// every grid reproduces random_init(n, k, m, seed) exactly.
template <RelationalTensor X>
DistFactors<typename X::Scalar> dist_random_init(const TensorBlock<X>& b, Index k, std::uint64_t seed) {
  using T = typename X::Scalar;
  DistFactors<T> f;
  f.coords = b.owner;
  f.global_n = b.global_n;
  f.block_n = b.block_n;
  f.A_row = Matrix<T>(b.block_n, k);
  f.A_col = Matrix<T>(b.block_n, k);
  fill_random_rows(f.A_row, b.row_offset, b.valid_rows(), seed);
  fill_random_rows(f.A_col, b.col_offset, b.valid_cols(), seed);
  f.R = random_core<T>(k, b.m(), seed);
  return f;
}

/// Distributes a global starting point over the grid.
template <RelationalTensor X>
DistFactors<typename X::Scalar> dist_init_from(const TensorBlock<X>& b, const RescalFactors<typename X::Scalar>& g) {
  using T = typename X::Scalar;
  if (g.n() != b.global_n) throw ShapeError("initial A must have n rows");
  if (g.m() != b.m()) throw ShapeError("initial R must have m slices");
  DistFactors<T> f;
  f.coords = b.owner;
  f.global_n = b.global_n;
  f.block_n = b.block_n;
  f.A_row = dist_detail::block_rows(g.A, b.row_offset, b.block_n);
  f.A_col = dist_detail::block_rows(g.A, b.col_offset, b.block_n);
  f.R = g.R;
  return f;
}

/// One distributed outer sweep. Collective.
template <RelationalTensor X>
void dist_sweep(const TensorBlock<X>& b, DistFactors<typename X::Scalar>& f, const SolverConfig& cfg,
                GridContext& ctx) {
  using T = typename X::Scalar;
  OpCounter* ctr = &ctx.ops;
  const T eps = static_cast<T>(cfg.epsilon);
  const int row_root = ctx.coords().row;  // (i, i) inside row comm i
  const int col_root = ctx.coords().col;  // (j, j) inside col comm j
  const Index k = f.k();

  const Matrix<T> ata = ctx.all_reduce_sum(kernels::gram(f.A_col, ctr), Axis::row);
  Matrix<T> num = Matrix<T>::Zero(f.block_n, k);
  Matrix<T> den = Matrix<T>::Zero(f.block_n, k);
  for (Index t = 0; t < b.m(); ++t) {
    const auto& xt = b.local.slice(t);
    auto& rt = f.R[static_cast<std::size_t>(t)];
    const Matrix<T> xa = ctx.all_reduce_sum(kernels::data_mul(xt, f.A_col, ctr), Axis::row);
    const Matrix<T> atxa = ctx.all_reduce_sum(kernels::mul_at(f.A_row, xa, ctr), Axis::col);
    const Matrix<T> rata = kernels::mul(rt, ata, ctr);
    const Matrix<T> deno_r = kernels::mul(ata, rata, ctr);
    kernels::multiplicative_step(rt, atxa, deno_r, eps);

    const Matrix<T> xart = kernels::mul_bt(xa, rt, ctr);
    const Matrix<T> ar = kernels::mul(f.A_row, rt, ctr);
    const Matrix<T> xtar_j = ctx.all_reduce_sum(kernels::data_mul_t(xt, ar, ctr), Axis::col);
    const Matrix<T> xtar = ctx.broadcast(xtar_j, row_root, Axis::row);
    num += xart + xtar;
    const Matrix<T> atar = kernels::mul(ata, rt, ctr);
    const Matrix<T> art = kernels::mul_bt(f.A_row, rt, ctr);
    const Matrix<T> artatar = kernels::mul(art, atar, ctr);
    const Matrix<T> atart = kernels::mul_bt(ata, rt, ctr);
    const Matrix<T> aratart = kernels::mul(ar, atart, ctr);
    den += artatar + aratart;
  }
  kernels::multiplicative_step(f.A_row, num, den, eps);
  require_finite(f.A_row, "factor A");
  for (const auto& r : f.R) require_finite(r, "core tensor R");
  f.A_col = ctx.broadcast(f.A_row, col_root, Axis::col);
}

/// ||X||_F over the whole grid. Collective (world axis).
template <RelationalTensor X>
double dist_fro_norm(const TensorBlock<X>& b, GridContext& ctx) {
  return std::sqrt(ctx.all_reduce_sum(fro_norm_sq(b.local), Axis::world));
}

/// Relative reconstruction error of distributed factors. Collective.
template <RelationalTensor X>
double dist_rel_error(const TensorBlock<X>& b, const DistFactors<typename X::Scalar>& f, GridContext& ctx,
                      double norm_x = -1.0) {
  if (norm_x < 0.0) norm_x = dist_fro_norm(b, ctx);
  if (norm_x == 0.0) throw DataError("relative error undefined for an all-zero tensor");
  const double sq = ctx.all_reduce_sum(dist_detail::local_residual(b.local, f), Axis::world);
  return std::sqrt(sq) / norm_x;
}

/// Unit-norm columns of the global A with the inverse scaling moved into R.
/// Collective (one k-word all_reduce on the column comm).
template <typename T>
void dist_finalize_normalize(DistFactors<T>& f, GridContext& ctx) {
  Matrix<T> sq(1, f.k());
  for (Index c = 0; c < f.k(); ++c) sq(0, c) = f.A_row.col(c).squaredNorm();
  sq = ctx.all_reduce_sum(sq, Axis::col);
  Vector<T> scale = Vector<T>::Ones(f.k());
  for (Index c = 0; c < f.k(); ++c) {
    const T norm = std::sqrt(sq(0, c));
    if (norm > T(0)) scale(c) = norm;
  }
  for (Index c = 0; c < f.k(); ++c) {
    f.A_row.col(c) /= scale(c);
    f.A_col.col(c) /= scale(c);
  }
  for (auto& r : f.R) r = scale.asDiagonal() * r * scale.asDiagonal();
}

/// Runs the distributed solver from the given starting factors. Collective.
template <RelationalTensor X>
DistSolveResult<typename X::Scalar> dist_rescal_solve_from(const TensorBlock<X>& b,
                                                           DistFactors<typename X::Scalar> f,
                                                           const SolverConfig& cfg, GridContext& ctx) {
  cfg.validate();
  dist_detail::check_block(b, ctx);
  if (f.A_row.rows() != b.block_n || f.A_col.rows() != b.block_n) throw ShapeError("A blocks have the wrong height");
  if (f.m() != b.m()) throw ShapeError("R must have m slices");

  DistSolveResult<typename X::Scalar> out;
  const bool want_error = cfg.track_error || cfg.tolerance.has_value();
  const double norm_x = want_error ? dist_fro_norm(b, ctx) : 1.0;
  if (want_error && norm_x == 0.0) throw DataError("relative error undefined for an all-zero tensor");
  for (int it = 0; it < cfg.max_iters; ++it) {
    dist_sweep(b, f, cfg, ctx);
    ++out.iterations;
    if (want_error) {
      const double err = dist_rel_error(b, f, ctx, norm_x);
      if (!std::isfinite(err)) throw NumericalError("non-finite relative error");
      out.error_trace.push_back(err);
      if (cfg.tolerance && err < *cfg.tolerance) break;
    }
  }
  if (cfg.normalize) dist_finalize_normalize(f, ctx);
  out.factors = std::move(f);
  return out;
}

/// Distributed solve with latent dimension k; random starts match the
/// serial solver for the same seed. Collective.
template <RelationalTensor X>
DistSolveResult<typename X::Scalar> dist_rescal_solve(const TensorBlock<X>& b, Index k, const SolverConfig& cfg,
                                                      GridContext& ctx) {
  if (k < 1) throw ArgumentError("k must be >= 1");
  if (k > b.global_n) throw ArgumentError("k must not exceed n");
  if (cfg.init != InitMode::random) throw ArgumentError("the distributed solver supports random initialization only");
  return dist_rescal_solve_from(b, dist_random_init(b, k, cfg.seed), cfg, ctx);
}

/// Perturbation q of this rank's block. Local; moves no data.
template <RelationalTensor X>
TensorBlock<X> dist_perturb(const TensorBlock<X>& b, const PerturbConfig& cfg, std::uint64_t q, GridContext& ctx) {
  dist_detail::check_block(b, ctx);
  return perturb_block(b, cfg, q);
}

/// Assembles the global factors on every rank. R must be byte-identical
/// across ranks; a difference means the run is broken. Collective.
template <typename T>
RescalFactors<T> gather_factors(const DistFactors<T>& f, GridContext& ctx) {
  const int g = ctx.grid_dim();
  RescalFactors<T> out;
  out.A = Matrix<T>::Zero(f.global_n, f.k());
  // The column comm of rank (i, j) holds every block-row exactly once.
  for (int src = 0; src < g; ++src) {
    const Matrix<T> blk = ctx.broadcast(f.A_row, src, Axis::col);
    const Index first = static_cast<Index>(src) * f.block_n;
    const Index rows = std::clamp<Index>(f.global_n - first, 0, f.block_n);
    if (rows > 0) out.A.middleRows(first, rows) = blk.topRows(rows);
  }
  double mismatch = 0.0;
  out.R.reserve(f.R.size());
  for (const auto& r : f.R) {
    Matrix<T> root = ctx.broadcast(r, 0, Axis::world);
    if (root.size() != r.size() ||
        std::memcmp(root.data(), r.data(), static_cast<std::size_t>(r.size()) * sizeof(T)) != 0) {
      mismatch = 1.0;
    }
    out.R.push_back(std::move(root));
  }
  if (ctx.all_reduce_sum(mismatch, Axis::world) != 0.0) {
    throw CollectiveError("core tensor R differs across ranks");
  }
  return out;
}

/// Fits R for a fixed, distributed A (block rows A_row/A_col). Grams are
/// reduced once; the iterations themselves are local. Collective.
template <RelationalTensor X>
std::vector<Matrix<typename X::Scalar>> dist_regress_r(const TensorBlock<X>& b,
                                                       const Matrix<typename X::Scalar>& a_row,
                                                       const Matrix<typename X::Scalar>& a_col, GridContext& ctx,
                                                       const SolverConfig& cfg = {},
                                                       const RegressionOptions& opt = {}) {
  using T = typename X::Scalar;
  if ((a_row.array() < T(0)).any() || (a_col.array() < T(0)).any()) throw DataError("A must be non-negative");
  const Index k = a_row.cols();
  const T eps = static_cast<T>(cfg.epsilon);
  const Matrix<T> ata = ctx.all_reduce_sum(Matrix<T>(a_col.transpose() * a_col), Axis::row);
  std::vector<Matrix<T>> atxa;
  for (Index t = 0; t < b.m(); ++t) {
    const Matrix<T> xa = ctx.all_reduce_sum(Matrix<T>(b.local.slice(t) * a_col), Axis::row);
    atxa.push_back(ctx.all_reduce_sum(Matrix<T>(a_row.transpose() * xa), Axis::col));
  }
  std::vector<Matrix<T>> r(static_cast<std::size_t>(b.m()), Matrix<T>::Ones(k, k));
  for (int it = 0; it < opt.max_iters; ++it) {
    double change = 0.0;
    for (std::size_t t = 0; t < r.size(); ++t) {
      const Matrix<T> before = r[t];
      const Matrix<T> deno = ata * (r[t] * ata);
      kernels::multiplicative_step(r[t], atxa[t], deno, eps);
      require_finite(r[t], "regressed core tensor");
      const double base = before.template cast<double>().norm();
      const double diff = (r[t] - before).template cast<double>().norm();
      change = std::max(change, base > 0.0 ? diff / base : diff);
    }
    if (change < opt.rel_change_tol) break;
  }
  return r;
}

}  // namespace rescalk

#pragma once

// Serial non-negative RESCAL with Frobenius multiplicative updates.
//
//   minimize  sum_t || X_t - A R_t A^T ||_F^2   subject to A >= 0, R_t >= 0
//
//   R_t <- R_t .* (A^T X_t A) ./ (A^T A R_t A^T A + eps)
//   A   <- A .* sum_t (X_t A R_t^T + X_t^T A R_t)
//           ./ (sum_t A (R_t A^T A R_t^T + R_t^T A^T A R_t) + eps)
//
// One outer sweep updates every R_t first and then applies a single A update
// built from the freshly updated slices.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Eigenvalues>

#include "rescalk/error.hpp"
#include "rescalk/instrument.hpp"
#include "rescalk/kernels.hpp"
#include "rescalk/tensor.hpp"
#include "rescalk/types.hpp"

namespace rescalk {

enum class InitMode { random, nndsvd };

struct SolverConfig {
  int max_iters = 1000;
  double epsilon = 1e-16;
  // Stop once the relative error drops below this value (checked every
  // iteration).
  std::optional<double> tolerance;
  InitMode init = InitMode::random;
  std::uint64_t seed = 0;
  // Record the relative error after every iteration.
  bool track_error = true;
  // Apply finalize_normalize to the result.
  bool normalize = true;

  void validate() const {
    if (max_iters < 1) throw ArgumentError("max_iters must be >= 1");
    if (!(epsilon > 0.0)) throw ArgumentError("epsilon must be > 0");
    if (tolerance && !(*tolerance >= 0.0)) throw ArgumentError("tolerance must be >= 0");
  }
};

template <typename T = double>
struct RescalFactors {
  Matrix<T> A;               // n x k
  std::vector<Matrix<T>> R;  // m slices of k x k

  Index n() const { return A.rows(); }
  Index k() const { return A.cols(); }
  Index m() const { return static_cast<Index>(R.size()); }

  bool non_negative() const {
    if ((A.array() < T(0)).any()) return false;
    return std::all_of(R.begin(), R.end(), [](const Matrix<T>& r) { return (r.array() >= T(0)).all(); });
  }
};

template <typename T = double>
struct SolveResult {
  RescalFactors<T> factors;
  std::vector<double> error_trace;
  int iterations = 0;
};

namespace rescal_detail {

inline constexpr std::uint64_t kTagA = 0xA;
inline constexpr std::uint64_t kTagR = 0xB;

template <typename X, typename T>
void check_shapes(const X& x, const RescalFactors<T>& f) {
  if (f.A.rows() != x.n()) throw ShapeError("A must have n rows");
  if (f.m() != x.m()) throw ShapeError("R must have m slices");
  for (const auto& r : f.R) {
    if (r.rows() != f.k() || r.cols() != f.k()) throw ShapeError("R slices must be k x k");
  }
}

template <typename T>
void check_finite(const RescalFactors<T>& f) {
  require_finite(f.A, "factor A");
  for (const auto& r : f.R) require_finite(r, "core tensor R");
}

}  // namespace rescal_detail

/// Row `global_row` of a seeded random A. Values depend only on
/// (seed, row, column), so any row partition reproduces the same matrix.
template <typename T>
void fill_random_rows(Matrix<T>& a, Index first_global_row, Index valid_rows, std::uint64_t seed) {
  a.setZero();
  for (Index r = 0; r < valid_rows; ++r) {
    for (Index c = 0; c < a.cols(); ++c) {
      a(r, c) = static_cast<T>(unit_from_bits(
          hash_seed(seed, rescal_detail::kTagA, static_cast<std::uint64_t>(first_global_row + r),
                    static_cast<std::uint64_t>(c))));
    }
  }
}

template <typename T>
std::vector<Matrix<T>> random_core(Index k, Index m, std::uint64_t seed) {
  std::vector<Matrix<T>> r(static_cast<std::size_t>(m), Matrix<T>(k, k));
  for (Index t = 0; t < m; ++t) {
    for (Index a = 0; a < k; ++a) {
      for (Index b = 0; b < k; ++b) {
        r[static_cast<std::size_t>(t)](a, b) = static_cast<T>(unit_from_bits(hash_seed(
            seed, rescal_detail::kTagR, static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(a),
            static_cast<std::uint64_t>(b))));
      }
    }
  }
  return r;
}

/// Uniform [0, 1) initialization of A (n x k) and R (m slices of k x k).
template <typename T = double>
RescalFactors<T> random_init(Index n, Index k, Index m, std::uint64_t seed) {
  RescalFactors<T> f;
  f.A = Matrix<T>(n, k);
  fill_random_rows(f.A, 0, n, seed);
  f.R = random_core<T>(k, m, seed);
  return f;
}

/// Sum over slices of ||X_t - A R_t A^T||_F^2.
template <RelationalTensor X, typename T>
double objective(const X& x, const RescalFactors<T>& f) {
  rescal_detail::check_shapes(x, f);
  double acc = 0.0;
  for (Index t = 0; t < x.m(); ++t) {
    acc += kernels::residual_sq(x.slice(t), f.A, f.R[static_cast<std::size_t>(t)], f.A);
  }
  return acc;
}

/// ||X - A R A^T||_F / ||X||_F.
template <RelationalTensor X, typename T>
double rel_error(const X& x, const RescalFactors<T>& f) {
  const double denom = fro_norm(x);
  if (denom == 0.0) throw DataError("relative error undefined for an all-zero tensor");
  return std::sqrt(objective(x, f)) / denom;
}

/// One multiplicative update of every R_t with A held fixed.
template <RelationalTensor X, typename T>
RescalFactors<T> update_r(const X& x, RescalFactors<T> f, const SolverConfig& cfg, OpCounter* ctr = nullptr) {
  rescal_detail::check_shapes(x, f);
  const T eps = static_cast<T>(cfg.epsilon);
  const Matrix<T> ata = kernels::gram(f.A, ctr);
  for (Index t = 0; t < x.m(); ++t) {
    auto& rt = f.R[static_cast<std::size_t>(t)];
    const Matrix<T> xa = kernels::data_mul(x.slice(t), f.A, ctr);
    const Matrix<T> atxa = kernels::mul_at(f.A, xa, ctr);
    const Matrix<T> rata = kernels::mul(rt, ata, ctr);
    const Matrix<T> deno_r = kernels::mul(ata, rata, ctr);
    kernels::multiplicative_step(rt, atxa, deno_r, eps);
  }
  rescal_detail::check_finite(f);
  return f;
}

namespace rescal_detail {

// Accumulates one slice's contribution to the A numerator/denominator,
// mirroring the distributed kernel term by term.
template <typename S, typename T>
void accumulate_a_terms(const S& xt, const Matrix<T>& a, const Matrix<T>& xa, const Matrix<T>& ata,
                        const Matrix<T>& rt, Matrix<T>& num, Matrix<T>& den, OpCounter* ctr) {
  const Matrix<T> xart = kernels::mul_bt(xa, rt, ctr);
  const Matrix<T> ar = kernels::mul(a, rt, ctr);
  const Matrix<T> xtar = kernels::data_mul_t(xt, ar, ctr);
  num += xart + xtar;
  const Matrix<T> atar = kernels::mul(ata, rt, ctr);
  const Matrix<T> art = kernels::mul_bt(a, rt, ctr);
  const Matrix<T> artatar = kernels::mul(art, atar, ctr);
  const Matrix<T> atart = kernels::mul_bt(ata, rt, ctr);
  const Matrix<T> aratart = kernels::mul(ar, atart, ctr);
  den += artatar + aratart;
}

}  // namespace rescal_detail

/// One multiplicative update of A with every R_t held fixed.
template <RelationalTensor X, typename T>
RescalFactors<T> update_a(const X& x, RescalFactors<T> f, const SolverConfig& cfg, OpCounter* ctr = nullptr) {
  rescal_detail::check_shapes(x, f);
  const T eps = static_cast<T>(cfg.epsilon);
  const Matrix<T> ata = kernels::gram(f.A, ctr);
  Matrix<T> num = Matrix<T>::Zero(f.n(), f.k());
  Matrix<T> den = Matrix<T>::Zero(f.n(), f.k());
  for (Index t = 0; t < x.m(); ++t) {
    const Matrix<T> xa = kernels::data_mul(x.slice(t), f.A, ctr);
    rescal_detail::accumulate_a_terms(x.slice(t), f.A, xa, ata, f.R[static_cast<std::size_t>(t)], num, den, ctr);
  }
  kernels::multiplicative_step(f.A, num, den, eps);
  rescal_detail::check_finite(f);
  return f;
}

/// Full outer sweep: update_r followed by update_a, sharing X_t A between
/// the two halves. Bitwise identical to calling them in sequence.
template <RelationalTensor X, typename T>
void sweep(const X& x, RescalFactors<T>& f, const SolverConfig& cfg, OpCounter* ctr = nullptr) {
  const T eps = static_cast<T>(cfg.epsilon);
  const Matrix<T> ata = kernels::gram(f.A, ctr);
  Matrix<T> num = Matrix<T>::Zero(f.n(), f.k());
  Matrix<T> den = Matrix<T>::Zero(f.n(), f.k());
  for (Index t = 0; t < x.m(); ++t) {
    auto& rt = f.R[static_cast<std::size_t>(t)];
    const Matrix<T> xa = kernels::data_mul(x.slice(t), f.A, ctr);
    const Matrix<T> atxa = kernels::mul_at(f.A, xa, ctr);
    const Matrix<T> rata = kernels::mul(rt, ata, ctr);
    const Matrix<T> deno_r = kernels::mul(ata, rata, ctr);
    kernels::multiplicative_step(rt, atxa, deno_r, eps);
    rescal_detail::accumulate_a_terms(x.slice(t), f.A, xa, ata, rt, num, den, ctr);
  }
  kernels::multiplicative_step(f.A, num, den, eps);
  rescal_detail::check_finite(f);
}

/// Scales every nonzero column of A to unit norm and applies D R_t D to the
/// core so that A R_t A^T is unchanged.
template <typename T>
RescalFactors<T> finalize_normalize(RescalFactors<T> f) {
  Vector<T> scale = Vector<T>::Ones(f.k());
  for (Index c = 0; c < f.k(); ++c) {
    const T norm = std::sqrt(f.A.col(c).squaredNorm());
    if (norm > T(0)) scale(c) = norm;
  }
  for (Index c = 0; c < f.k(); ++c) f.A.col(c) /= scale(c);
  for (auto& r : f.R) r = scale.asDiagonal() * r * scale.asDiagonal();
  return f;
}

namespace rescal_detail {

template <typename T>
double mean_positive(const RelTensor<T>& x) {
  double sum = 0.0;
  std::uint64_t count = 0;
  for (const auto& s : x.slices()) {
    for (Index i = 0; i < s.size(); ++i) {
      const double v = static_cast<double>(s.data()[i]);
      if (v > 0.0) {
        sum += v;
        ++count;
      }
    }
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

template <typename T>
double mean_positive(const SparseRelTensor<T>& x) {
  double sum = 0.0;
  for (const auto& s : x.slices()) {
    for (Index p = 0; p < s.nonZeros(); ++p) sum += static_cast<double>(s.valuePtr()[p]);
  }
  return x.nnz() ? sum / static_cast<double>(x.nnz()) : 0.0;
}

}  // namespace rescal_detail

struct NndsvdOptions {
  int r_iters = 20;
  // Singular values below rank_tol * sigma_max count as rank deficient.
  double rank_tol = 1e-7;
  double fill_scale = 1e-2;
};

/// NNDSVD initialization from the concatenated mode-1 and mode-2 unfoldings
/// M = [X_1 ... X_m | X_1^T ... X_m^T] (n x 2nm).
///
/// The left singular vectors come from the eigendecomposition of
/// M M^T = sum_t (X_t X_t^T + X_t^T X_t); the matching right singular
/// vectors are M^T u / sigma. Column j keeps the dominant sign part of
/// (u_j, v_j). Columns without a positive contribution, and zero entries
/// of kept columns, receive fill_scale * mean(positive entries of X).
/// A is returned with unit columns; R comes from r_iters R-only updates
/// starting from all-ones slices.
template <RelationalTensor X>
RescalFactors<typename X::Scalar> nndsvd_init(const X& x, Index k, const SolverConfig& cfg = {},
                                              const NndsvdOptions& opt = {}) {
  using T = typename X::Scalar;
  const Index n = x.n();
  if (k < 1 || k > n) throw ArgumentError("nndsvd_init requires 1 <= k <= n");

  Matrix<double> mmt = Matrix<double>::Zero(n, n);
  for (Index t = 0; t < x.m(); ++t) {
    const Matrix<double> s = Matrix<T>(x.slice(t)).template cast<double>();
    mmt.noalias() += s * s.transpose();
    mmt.noalias() += s.transpose() * s;
  }
  Eigen::SelfAdjointEigenSolver<Matrix<double>> eig(mmt);
  if (eig.info() != Eigen::Success) throw NumericalError("eigendecomposition failed in nndsvd_init");
  // Eigen sorts ascending; walk from the top.
  const Vector<double> evals = eig.eigenvalues();
  const Matrix<double> evecs = eig.eigenvectors();
  const double sigma0 = std::sqrt(std::max(0.0, evals(n - 1)));

  const double fill = opt.fill_scale * rescal_detail::mean_positive(x);
  Matrix<double> a = Matrix<double>::Zero(n, k);
  std::vector<bool> deficient(static_cast<std::size_t>(k), false);

  for (Index j = 0; j < k; ++j) {
    const double lambda = evals(n - 1 - j);
    const double sigma = std::sqrt(std::max(0.0, lambda));
    if (!(sigma > 0.0) || sigma <= opt.rank_tol * sigma0) {
      deficient[static_cast<std::size_t>(j)] = true;
      continue;
    }
    const Vector<double> u = evecs.col(n - 1 - j);
    if (j == 0) {
      a.col(0) = u.cwiseAbs();
      continue;
    }
    // Right singular vector blocks: v = M^T u / sigma, M^T u = [X_t^T u ; X_t u].
    double vp_sq = 0.0;
    double vn_sq = 0.0;
    for (Index t = 0; t < x.m(); ++t) {
      const Matrix<double> s = Matrix<T>(x.slice(t)).template cast<double>();
      const Vector<double> v1 = s.transpose() * u / sigma;
      const Vector<double> v2 = s * u / sigma;
      vp_sq += v1.cwiseMax(0.0).squaredNorm() + v2.cwiseMax(0.0).squaredNorm();
      vn_sq += v1.cwiseMin(0.0).squaredNorm() + v2.cwiseMin(0.0).squaredNorm();
    }
    const Vector<double> up = u.cwiseMax(0.0);
    const Vector<double> un = (-u).cwiseMax(0.0);
    const double mp = up.norm() * std::sqrt(vp_sq);
    const double mn = un.norm() * std::sqrt(vn_sq);
    if (mp <= 0.0 && mn <= 0.0) {
      deficient[static_cast<std::size_t>(j)] = true;
      continue;
    }
    a.col(j) = mp >= mn ? up : un;
  }

  for (Index j = 0; j < k; ++j) {
    if (deficient[static_cast<std::size_t>(j)]) {
      a.col(j).setConstant(fill);
    } else {
      for (Index i = 0; i < n; ++i) {
        if (a(i, j) == 0.0) a(i, j) = fill;
      }
    }
    const double norm = a.col(j).norm();
    if (norm > 0.0) a.col(j) /= norm;
  }

  RescalFactors<T> f;
  f.A = a.cast<T>();
  f.R.assign(static_cast<std::size_t>(x.m()), Matrix<T>::Ones(k, k));
  for (int it = 0; it < opt.r_iters; ++it) f = update_r(x, std::move(f), cfg);
  return f;
}

namespace rescal_detail {

template <RelationalTensor X>
SolveResult<typename X::Scalar> iterate(const X& x, RescalFactors<typename X::Scalar> f, const SolverConfig& cfg,
                                        OpCounter* ctr) {
  SolveResult<typename X::Scalar> out;
  const bool want_error = cfg.track_error || cfg.tolerance.has_value();
  const double norm_x = want_error ? fro_norm(x) : 1.0;
  if (want_error && norm_x == 0.0) throw DataError("relative error undefined for an all-zero tensor");
  for (int it = 0; it < cfg.max_iters; ++it) {
    sweep(x, f, cfg, ctr);
    ++out.iterations;
    if (want_error) {
      double acc = 0.0;
      for (Index t = 0; t < x.m(); ++t) {
        acc += kernels::residual_sq(x.slice(t), f.A, f.R[static_cast<std::size_t>(t)], f.A);
      }
      const double err = std::sqrt(acc) / norm_x;
      if (!std::isfinite(err)) throw NumericalError("non-finite relative error");
      out.error_trace.push_back(err);
      if (cfg.tolerance && err < *cfg.tolerance) break;
    }
  }
  out.factors = cfg.normalize ? finalize_normalize(std::move(f)) : std::move(f);
  return out;
}

}  // namespace rescal_detail

/// Runs multiplicative updates from the given starting factors.
template <RelationalTensor X>
SolveResult<typename X::Scalar> rescal_solve_from(const X& x, RescalFactors<typename X::Scalar> init,
                                                  const SolverConfig& cfg, OpCounter* ctr = nullptr) {
  cfg.validate();
  rescal_detail::check_shapes(x, init);
  if (!init.non_negative()) throw DataError("initial factors must be non-negative");
  return rescal_detail::iterate(x, std::move(init), cfg, ctr);
}

/// Factorizes x with latent dimension k, initializing per cfg.init.
template <RelationalTensor X>
SolveResult<typename X::Scalar> rescal_solve(const X& x, Index k, const SolverConfig& cfg,
                                             OpCounter* ctr = nullptr) {
  using T = typename X::Scalar;
  cfg.validate();
  if (k < 1) throw ArgumentError("k must be >= 1");
  if (k > x.n()) throw ArgumentError("k must not exceed n");
  RescalFactors<T> init =
      cfg.init == InitMode::nndsvd ? nndsvd_init(x, k, cfg) : random_init<T>(x.n(), k, x.m(), cfg.seed);
  return rescal_detail::iterate(x, std::move(init), cfg, ctr);
}

struct RegressionOptions {
  int max_iters = 500;
  double rel_change_tol = 1e-8;
};

/// Fits the core tensor for a fixed A by repeated R updates, starting from
/// all-ones slices. A^T A and A^T X_t A are computed once.
template <RelationalTensor X>
std::vector<Matrix<typename X::Scalar>> regress_r(const X& x, const Matrix<typename X::Scalar>& a_fixed,
                                                  const SolverConfig& cfg = {}, const RegressionOptions& opt = {}) {
  using T = typename X::Scalar;
  if (a_fixed.rows() != x.n()) throw ShapeError("A must have n rows");
  if ((a_fixed.array() < T(0)).any()) throw DataError("A must be non-negative");
  const Index k = a_fixed.cols();
  const T eps = static_cast<T>(cfg.epsilon);
  const Matrix<T> ata = a_fixed.transpose() * a_fixed;
  std::vector<Matrix<T>> atxa;
  atxa.reserve(static_cast<std::size_t>(x.m()));
  for (Index t = 0; t < x.m(); ++t) atxa.push_back(a_fixed.transpose() * (x.slice(t) * a_fixed));

  std::vector<Matrix<T>> r(static_cast<std::size_t>(x.m()), Matrix<T>::Ones(k, k));
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

#pragma once

// RESCALk model selection: for every candidate k, factorize r perturbed
// copies of X, align the r solutions column by column, measure how stable
// the aligned clusters are, and pick the largest k whose clusters stay
// stable.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "rescalk/dist_rescal.hpp"
#include "rescalk/error.hpp"
#include "rescalk/grid.hpp"
#include "rescalk/lsa.hpp"
#include "rescalk/perturb.hpp"
#include "rescalk/rescal.hpp"
#include "rescalk/tensor.hpp"
#include "rescalk/types.hpp"

namespace rescalk {

/// r factorizations of the same tensor. In grid mode each A holds only this
/// rank's block rows.
template <typename T = double>
struct FactorEnsemble {
  std::vector<Matrix<T>> A;               // r matrices, n x k
  std::vector<std::vector<Matrix<T>>> R;  // r stacks of m slices, k x k

  Index r() const { return static_cast<Index>(A.size()); }
  Index k() const { return A.empty() ? 0 : A.front().cols(); }
  Index n() const { return A.empty() ? 0 : A.front().rows(); }

  void validate() const {
    if (A.empty()) throw ArgumentError("empty ensemble");
    if (!R.empty() && R.size() != A.size()) throw ShapeError("ensemble A and R counts differ");
    for (const auto& a : A) {
      if (a.rows() != n() || a.cols() != k()) throw ShapeError("ensemble members must share one shape");
      if ((a.array() < T(0)).any()) throw DataError("ensemble factors must be non-negative");
    }
  }
};

/// Sums a matrix of partial results over the ranks that share the data.
/// Serial runs use the identity.
using Reducer = std::function<Matrix<double>(const Matrix<double>&)>;

inline Matrix<double> identity_reduce(const Matrix<double>& m) { return m; }

template <typename T = double>
struct ClusterResult {
  FactorEnsemble<T> aligned;
  Matrix<T> medians;  // n x k
  // permutation[q][c]: original column of member q placed in cluster c.
  std::vector<std::vector<Index>> permutation;
  int iterations = 0;
  bool converged = false;
};

struct ClusterOptions {
  int max_iters = 100;
};

namespace select_detail {

// Elementwise median over the aligned members.
template <typename T>
Matrix<T> elementwise_median(const std::vector<Matrix<T>>& a) {
  const std::size_t r = a.size();
  Matrix<T> out(a.front().rows(), a.front().cols());
  std::vector<T> vals(r);
  for (Index c = 0; c < out.cols(); ++c) {
    for (Index i = 0; i < out.rows(); ++i) {
      for (std::size_t q = 0; q < r; ++q) vals[q] = a[q](i, c);
      std::sort(vals.begin(), vals.end());
      out(i, c) = r % 2 ? vals[r / 2] : static_cast<T>((vals[r / 2 - 1] + vals[r / 2]) / T(2));
    }
  }
  return out;
}

template <typename T>
Matrix<T> permute_columns(const Matrix<T>& a, const std::vector<Index>& perm) {
  Matrix<T> out(a.rows(), a.cols());
  for (Index c = 0; c < a.cols(); ++c) out.col(c) = a.col(perm[static_cast<std::size_t>(c)]);
  return out;
}

template <typename T>
Matrix<T> permute_core(const Matrix<T>& r, const std::vector<Index>& perm) {
  Matrix<T> out(r.rows(), r.cols());
  for (Index a = 0; a < r.rows(); ++a) {
    for (Index b = 0; b < r.cols(); ++b) {
      out(a, b) = r(perm[static_cast<std::size_t>(a)], perm[static_cast<std::size_t>(b)]);
    }
  }
  return out;
}

inline double safe_cos(double dot, double nu, double nv) {
  return (nu > 0.0 && nv > 0.0) ? dot / std::sqrt(nu * nv) : 0.0;
}

}  // namespace select_detail

/// Permutation-constrained k-medians over the ensemble. The centroid starts
/// at member 0; each iteration matches every member to the centroid by
/// cosine similarity with an LSA, then recomputes elementwise medians.
/// Stops once an iteration changes no member or after max_iters.
template <typename T>
ClusterResult<T> custom_cluster(const FactorEnsemble<T>& ens, const Reducer& reduce = identity_reduce,
                                const ClusterOptions& opt = {}) {
  ens.validate();
  if (ens.r() < 2) throw ArgumentError("clustering needs r >= 2");
  const Index k = ens.k();
  const std::size_t r = static_cast<std::size_t>(ens.r());

  ClusterResult<T> out;
  out.aligned = ens;
  out.permutation.assign(r, std::vector<Index>(static_cast<std::size_t>(k)));
  for (auto& p : out.permutation) {
    for (Index c = 0; c < k; ++c) p[static_cast<std::size_t>(c)] = c;
  }
  Matrix<T> centroid = ens.A.front();

  for (int it = 0; it < opt.max_iters; ++it) {
    // One reduction per iteration: r blocks of M^T A_q, then the squared
    // column norms of M and of every A_q.
    Matrix<double> partial(k, k * static_cast<Index>(r) + 1 + static_cast<Index>(r));
    const Matrix<double> m = centroid.template cast<double>();
    for (std::size_t q = 0; q < r; ++q) {
      const Matrix<double> aq = out.aligned.A[q].template cast<double>();
      partial.middleCols(static_cast<Index>(q) * k, k) = m.transpose() * aq;
      partial.col(k * static_cast<Index>(r) + 1 + static_cast<Index>(q)) = aq.colwise().squaredNorm().transpose();
    }
    partial.col(k * static_cast<Index>(r)) = m.colwise().squaredNorm().transpose();
    const Matrix<double> total = reduce(partial);

    bool changed = false;
    for (std::size_t q = 0; q < r; ++q) {
      Matrix<double> sim(k, k);
      for (Index a = 0; a < k; ++a) {
        for (Index b = 0; b < k; ++b) {
          sim(a, b) = select_detail::safe_cos(total(a, static_cast<Index>(q) * k + b), total(a, k * static_cast<Index>(r)),
                                              total(b, k * static_cast<Index>(r) + 1 + static_cast<Index>(q)));
        }
      }
      const Assignment as = lsa(sim, LsaMode::maximize);
      if (as.is_identity()) continue;
      changed = true;
      out.aligned.A[q] = select_detail::permute_columns(out.aligned.A[q], as.col_of_row);
      if (!out.aligned.R.empty()) {
        for (auto& s : out.aligned.R[q]) s = select_detail::permute_core(s, as.col_of_row);
      }
      std::vector<Index> composed(static_cast<std::size_t>(k));
      for (Index c = 0; c < k; ++c) {
        composed[static_cast<std::size_t>(c)] =
            out.permutation[q][static_cast<std::size_t>(as.col_of_row[static_cast<std::size_t>(c)])];
      }
      out.permutation[q] = std::move(composed);
    }
    ++out.iterations;
    out.medians = select_detail::elementwise_median(out.aligned.A);
    centroid = out.medians;
    if (!changed) {
      out.converged = true;
      break;
    }
  }
  return out;
}

struct SilhouetteStats {
  Matrix<double> I;  // r x k within-cluster mean distance
  Matrix<double> J;  // r x k mean distance to the nearest other cluster
  Matrix<double> s;  // r x k per-point silhouette
  double s_min = 1.0;
  double s_avg = 1.0;
  // Set when k = 1 and the silhouette is 1 by convention.
  bool single_cluster = false;
};

/// Silhouette widths of an aligned ensemble using cosine distance. Point
/// (q, c) is column c of member q; cluster c holds one point per member.
/// I averages over all r members of the own cluster, including the point
/// itself.
template <typename T>
SilhouetteStats cluster_stability(const FactorEnsemble<T>& aligned, const Reducer& reduce = identity_reduce) {
  aligned.validate();
  const Index r = aligned.r();
  const Index k = aligned.k();
  if (r < 2) throw ArgumentError("cluster stability needs r >= 2");

  SilhouetteStats st;
  st.I = Matrix<double>::Zero(r, k);
  st.J = Matrix<double>::Zero(r, k);
  st.s = Matrix<double>::Ones(r, k);
  if (k == 1) {
    st.single_cluster = true;
    return st;
  }

  // Point index p = c * r + q.
  Matrix<double> pts(aligned.n(), r * k);
  for (Index c = 0; c < k; ++c) {
    for (Index q = 0; q < r; ++q) pts.col(c * r + q) = aligned.A[static_cast<std::size_t>(q)].col(c).template cast<double>();
  }
  const Matrix<double> gram = reduce(Matrix<double>(pts.transpose() * pts));
  const auto dist = [&](Index u, Index v) {
    return 1.0 - select_detail::safe_cos(gram(u, v), gram(u, u), gram(v, v));
  };

  double sum = 0.0;
  double mn = std::numeric_limits<double>::infinity();
  for (Index c = 0; c < k; ++c) {
    for (Index q = 0; q < r; ++q) {
      const Index u = c * r + q;
      double within = 0.0;
      for (Index q2 = 0; q2 < r; ++q2) within += dist(u, c * r + q2);
      within /= static_cast<double>(r);
      double nearest = std::numeric_limits<double>::infinity();
      for (Index b = 0; b < k; ++b) {
        if (b == c) continue;
        double cross = 0.0;
        for (Index q2 = 0; q2 < r; ++q2) cross += dist(u, b * r + q2);
        nearest = std::min(nearest, cross / static_cast<double>(r));
      }
      const double denom = std::max(nearest, within);
      const double s = denom > 0.0 ? (nearest - within) / denom : 0.0;
      st.I(q, c) = within;
      st.J(q, c) = nearest;
      st.s(q, c) = s;
      sum += s;
      mn = std::min(mn, s);
    }
  }
  st.s_min = mn;
  st.s_avg = sum / static_cast<double>(r * k);
  return st;
}

struct KSelection {
  Index k_opt = 0;
  bool low_confidence = false;
};

/// Largest k whose minimum silhouette reaches tau_s; without one, the k with
/// the highest minimum silhouette, flagged as low confidence.
inline KSelection select_k(const std::vector<Index>& ks, const std::vector<double>& s_min, double tau_s = 0.75) {
  if (ks.empty() || ks.size() != s_min.size()) throw ArgumentError("select_k needs matching, non-empty inputs");
  KSelection sel;
  bool found = false;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (s_min[i] >= tau_s && (!found || ks[i] > sel.k_opt)) {
      sel.k_opt = ks[i];
      found = true;
    }
  }
  if (found) return sel;
  std::size_t best = 0;
  for (std::size_t i = 1; i < ks.size(); ++i) {
    if (s_min[i] > s_min[best]) best = i;
  }
  sel.k_opt = ks[best];
  sel.low_confidence = true;
  return sel;
}

struct PearsonResult {
  Matrix<double> corr;  // corr(i, j): column i of the estimate vs column j of the truth
  bool zero_variance = false;
};

template <typename T>
PearsonResult pearson_correlation(const Matrix<T>& est, const Matrix<T>& truth) {
  if (est.rows() != truth.rows() || est.cols() != truth.cols()) throw ShapeError("pearson_correlation: shapes differ");
  if (est.rows() < 2) throw ShapeError("pearson_correlation needs at least two rows");
  const auto center = [](const Matrix<T>& m) {
    Matrix<double> c = m.template cast<double>();
    c.rowwise() -= c.colwise().mean();
    return c;
  };
  const Matrix<double> a = center(est);
  const Matrix<double> b = center(truth);
  const Eigen::RowVectorXd na = a.colwise().norm();
  const Eigen::RowVectorXd nb = b.colwise().norm();
  PearsonResult out;
  out.corr = Matrix<double>::Zero(est.cols(), truth.cols());
  for (Index i = 0; i < est.cols(); ++i) {
    for (Index j = 0; j < truth.cols(); ++j) {
      if (na(i) == 0.0 || nb(j) == 0.0) {
        out.zero_variance = true;
        continue;
      }
      out.corr(i, j) = std::clamp(a.col(i).dot(b.col(j)) / (na(i) * nb(j)), -1.0, 1.0);
    }
  }
  return out;
}

/// Correlations of the best one-to-one column pairing, ordered by truth
/// column.
inline std::vector<double> best_match_diagonal(const Matrix<double>& corr) {
  const Assignment as = lsa(corr.transpose(), LsaMode::maximize);
  std::vector<double> d(static_cast<std::size_t>(corr.cols()));
  for (Index j = 0; j < corr.cols(); ++j) d[static_cast<std::size_t>(j)] = corr(as.col_of_row[static_cast<std::size_t>(j)], j);
  return d;
}

struct RescalkConfig {
  Index k_min = 2;
  Index k_max = 2;
  int r = 10;
  // Per-member solver settings; seeds are derived from solver.seed.
  SolverConfig solver;
  PerturbConfig perturb;
  double tau_s = 0.75;
  ClusterOptions cluster;
  RegressionOptions regression;
  // Worker threads for serial runs; 0 reads RESCALK_THREADS, falling back to
  // the hardware concurrency.
  int threads = 0;

  void validate(Index n) const {
    solver.validate();
    perturb.validate();
    if (k_min < 1) throw ArgumentError("k_min must be >= 1");
    if (k_min > k_max) throw ArgumentError("k_min must not exceed k_max");
    if (k_max > n) throw ArgumentError("k_max must not exceed n");
    if (r < 2) throw ArgumentError("r must be >= 2");
  }
};

template <typename T = double>
struct KResult {
  Index k = 0;
  double s_min = 0.0;
  double s_avg = 0.0;
  double rel_error = 0.0;
  bool single_cluster = false;
  bool cluster_converged = false;
  int cluster_iterations = 0;
  Matrix<T> A_median;        // n x k, aligned medians
  std::vector<Matrix<T>> R;  // regressed core, m slices
  double seconds = 0.0;
};

template <typename T = double>
struct SelectionReport {
  std::vector<KResult<T>> entries;
  Index k_opt = 0;
  bool low_confidence = false;
  RescalkConfig config;

  const KResult<T>& at(Index k) const {
    for (const auto& e : entries) {
      if (e.k == k) return e;
    }
    throw ArgumentError("no entry for k = " + std::to_string(k));
  }
};

inline int worker_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("RESCALK_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Seed of the random start for member q at rank k.
inline std::uint64_t member_seed(std::uint64_t base, Index k, int q) {
  return hash_seed(base, 0x5eedULL, static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(q));
}

/// Perturbation stream for rank k.
inline PerturbConfig perturb_for_k(const PerturbConfig& base, Index k) {
  PerturbConfig p = base;
  p.seed = hash_seed(base.seed, 0x9e57ULL, static_cast<std::uint64_t>(k));
  return p;
}

namespace select_detail {

template <typename T>
SelectionReport<T> finalize(SelectionReport<T> rep) {
  std::vector<Index> ks;
  std::vector<double> s;
  for (const auto& e : rep.entries) {
    ks.push_back(e.k);
    s.push_back(e.s_min);
  }
  const KSelection sel = select_k(ks, s, rep.config.tau_s);
  rep.k_opt = sel.k_opt;
  rep.low_confidence = sel.low_confidence;
  return rep;
}

}  // namespace select_detail

/// Serial RESCALk over k in [k_min, k_max]. Members of one k run on up to
/// `threads` workers; results do not depend on the thread count.
template <RelationalTensor X>
SelectionReport<typename X::Scalar> rescalk_select(const X& x, const RescalkConfig& cfg) {
  using T = typename X::Scalar;
  cfg.validate(x.n());
  const int threads = std::min(worker_threads(cfg.threads), cfg.r);

  SelectionReport<T> rep;
  rep.config = cfg;
  for (Index k = cfg.k_min; k <= cfg.k_max; ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    const PerturbConfig pk = perturb_for_k(cfg.perturb, k);
    FactorEnsemble<T> ens;
    ens.A.resize(static_cast<std::size_t>(cfg.r));
    ens.R.resize(static_cast<std::size_t>(cfg.r));

    std::exception_ptr failure;
    std::mutex failure_mu;
    const auto member = [&](int q) {
      try {
        const X xq = perturb(x, pk, static_cast<std::uint64_t>(q));
        SolverConfig sc = cfg.solver;
        sc.init = InitMode::random;
        sc.seed = member_seed(cfg.solver.seed, k, q);
        sc.track_error = false;
        sc.normalize = true;
        auto res = rescal_solve(xq, k, sc);
        ens.A[static_cast<std::size_t>(q)] = std::move(res.factors.A);
        ens.R[static_cast<std::size_t>(q)] = std::move(res.factors.R);
      } catch (...) {
        std::lock_guard lk(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    };
    if (threads <= 1) {
      for (int q = 0; q < cfg.r; ++q) member(q);
    } else {
      std::vector<std::thread> pool;
      for (int w = 0; w < threads; ++w) {
        pool.emplace_back([&, w] {
          for (int q = w; q < cfg.r; q += threads) member(q);
        });
      }
      for (auto& th : pool) th.join();
    }
    if (failure) std::rethrow_exception(failure);

    ClusterResult<T> cl = custom_cluster(ens, identity_reduce, cfg.cluster);
    const SilhouetteStats st = cluster_stability(cl.aligned);
    KResult<T> e;
    e.k = k;
    e.s_min = st.s_min;
    e.s_avg = st.s_avg;
    e.single_cluster = st.single_cluster;
    e.cluster_converged = cl.converged;
    e.cluster_iterations = cl.iterations;
    e.A_median = std::move(cl.medians);
    e.R = regress_r(x, e.A_median, cfg.solver, cfg.regression);
    RescalFactors<T> fit{e.A_median, e.R};
    e.rel_error = rel_error(x, fit);
    e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rep.entries.push_back(std::move(e));
  }
  return select_detail::finalize(std::move(rep));
}

/// Grid RESCALk. Collective over all p ranks; every rank returns the same
/// report with globally assembled medians.
template <RelationalTensor X>
SelectionReport<typename X::Scalar> rescalk_select(const TensorBlock<X>& b, const RescalkConfig& cfg, GridContext& ctx) {
  using T = typename X::Scalar;
  cfg.validate(b.global_n);
  const Reducer over_rows = [&ctx](const Matrix<double>& m) { return ctx.all_reduce_sum(m, Axis::col); };

  SelectionReport<T> rep;
  rep.config = cfg;
  for (Index k = cfg.k_min; k <= cfg.k_max; ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    const PerturbConfig pk = perturb_for_k(cfg.perturb, k);
    FactorEnsemble<T> ens;
    for (int q = 0; q < cfg.r; ++q) {
      const TensorBlock<X> bq = dist_perturb(b, pk, static_cast<std::uint64_t>(q), ctx);
      SolverConfig sc = cfg.solver;
      sc.init = InitMode::random;
      sc.seed = member_seed(cfg.solver.seed, k, q);
      sc.track_error = false;
      sc.normalize = true;
      auto res = dist_rescal_solve(bq, k, sc, ctx);
      ens.A.push_back(std::move(res.factors.A_row));
      ens.R.push_back(std::move(res.factors.R));
    }

    ClusterResult<T> cl = custom_cluster(ens, over_rows, cfg.cluster);
    const SilhouetteStats st = cluster_stability(cl.aligned, over_rows);

    DistFactors<T> med;
    med.coords = ctx.coords();
    med.global_n = b.global_n;
    med.block_n = b.block_n;
    med.A_row = std::move(cl.medians);
    med.A_col = ctx.broadcast(med.A_row, ctx.coords().col, Axis::col);
    med.R = dist_regress_r(b, med.A_row, med.A_col, ctx, cfg.solver, cfg.regression);

    KResult<T> e;
    e.k = k;
    e.s_min = st.s_min;
    e.s_avg = st.s_avg;
    e.single_cluster = st.single_cluster;
    e.cluster_converged = cl.converged;
    e.cluster_iterations = cl.iterations;
    e.rel_error = dist_rel_error(b, med, ctx);
    RescalFactors<T> global = gather_factors(med, ctx);
    e.A_median = std::move(global.A);
    e.R = std::move(global.R);
    e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rep.entries.push_back(std::move(e));
  }
  return select_detail::finalize(std::move(rep));
}

}  // namespace rescalk

#pragma once

// Cost model and scaling harness for the grid solver.
//
// Exact per-rank, per-iteration counts for p > 1 with nb = ceil(n / sqrt(p)):
//
//   row all_reduce   k^2 + m nb k        (1 + m calls)
//   col all_reduce   m k^2 + m nb k      (2m calls)
//   row broadcast    m nb k              (m calls)
//   col broadcast    nb k                (1 call)
//   data madds       2 m nb^2 k          (sparse: 2 k nnz_local)
//   factor madds     (6m + 1) nb k^2 + 4 m k^3
//
// A single rank communicates nothing.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "rescalk/dist_rescal.hpp"
#include "rescalk/error.hpp"
#include "rescalk/grid.hpp"
#include "rescalk/instrument.hpp"
#include "rescalk/synth.hpp"
#include "rescalk/tensor.hpp"

namespace rescalk {

struct CostModelInput {
  Index n = 1;
  Index m = 1;
  Index k = 1;
  int p = 1;
  double density = 1.0;
  int r = 1;
  int max_iters = 1;

  void validate() const {
    if (n < 1 || m < 1 || k < 1 || r < 1 || max_iters < 1) throw ArgumentError("cost model inputs must be positive");
    grid_dim_for(p);
    if (!(density > 0.0) || density > 1.0) throw ArgumentError("density must lie in (0, 1]");
  }
};

struct ExactCounts {
  std::uint64_t row_all_reduce_words = 0;
  std::uint64_t col_all_reduce_words = 0;
  std::uint64_t row_broadcast_words = 0;
  std::uint64_t col_broadcast_words = 0;
  std::uint64_t events = 0;
  std::uint64_t data_madds = 0;  // dense blocks
  std::uint64_t factor_madds = 0;

  std::uint64_t words() const {
    return row_all_reduce_words + col_all_reduce_words + row_broadcast_words + col_broadcast_words;
  }
};

struct CostPrediction {
  double flops_leading = 0.0;        // m delta n^2 k / p
  double words_model = 0.0;          // m k (n / sqrt p) log2 p
  double memory_words = 0.0;         // m n^2 delta / p + r k n / sqrt p + r m k^2
  double serial_flops_formula = 0.0; // 2 m n^2 k + (3m + 2) n k^2 + n k + m k^3
  ExactCounts exact;                 // per rank, per iteration
};

inline ExactCounts exact_counts(Index n, Index m, Index k, int p) {
  const int g = grid_dim_for(p);
  const auto nb = static_cast<std::uint64_t>(block_size(n, g));
  const auto um = static_cast<std::uint64_t>(m);
  const auto uk = static_cast<std::uint64_t>(k);
  ExactCounts c;
  c.data_madds = 2 * um * nb * nb * uk;
  c.factor_madds = (6 * um + 1) * nb * uk * uk + 4 * um * uk * uk * uk;
  if (p > 1) {
    c.row_all_reduce_words = uk * uk + um * nb * uk;
    c.col_all_reduce_words = um * uk * uk + um * nb * uk;
    c.row_broadcast_words = um * nb * uk;
    c.col_broadcast_words = nb * uk;
    c.events = 4 * um + 2;
  }
  return c;
}

inline CostPrediction predict_cost(const CostModelInput& in) {
  in.validate();
  const double n = static_cast<double>(in.n);
  const double m = static_cast<double>(in.m);
  const double k = static_cast<double>(in.k);
  const double p = static_cast<double>(in.p);
  const double r = static_cast<double>(in.r);
  const double sp = std::sqrt(p);
  CostPrediction c;
  c.flops_leading = m * in.density * n * n * k / p;
  c.words_model = m * k * (n / sp) * std::log2(p);
  c.memory_words = m * n * n * in.density / p + r * k * n / sp + r * m * k * k;
  c.serial_flops_formula = 2 * m * n * n * k + (3 * m + 2) * n * k * k + n * k + m * k * k * k;
  c.exact = exact_counts(in.n, in.m, in.k, in.p);
  return c;
}

enum class DataMode { dense, sparse };

/// Problem size that keeps efficiency constant: sqrt(p) log2 p, divided by
/// the density for sparse data. Never below 1.
inline double isoefficiency(int p, DataMode mode = DataMode::dense, double density = 1.0) {
  if (p < 1) throw ArgumentError("p must be >= 1");
  if (mode == DataMode::sparse && (!(density > 0.0) || density > 1.0)) throw ArgumentError("density must lie in (0, 1]");
  double v = std::sqrt(static_cast<double>(p)) * std::log2(static_cast<double>(p));
  if (mode == DataMode::sparse) v /= density;
  return std::max(1.0, v);
}

struct RankCounts {
  OpCounter ops;
  CollectiveStats stats;
};

/// Runs `iters` distributed sweeps of x on p ranks (no error tracking, no
/// normalization) and returns every rank's counters.
template <RelationalTensor X>
std::vector<RankCounts> measure_counts(const X& x, Index k, int p, int iters = 1, std::uint64_t seed = 0) {
  const auto blocks = partition(x, grid_dim_for(p));
  SolverConfig cfg;
  cfg.max_iters = iters;
  cfg.seed = seed;
  cfg.track_error = false;
  cfg.normalize = false;
  return spawn_grid(p, [&](GridContext& ctx) {
    const auto& b = blocks[static_cast<std::size_t>(ctx.rank())];
    DistFactors<typename X::Scalar> f = dist_random_init(b, k, seed);
    for (int it = 0; it < iters; ++it) dist_sweep(b, f, cfg, ctx);
    return RankCounts{ctx.ops, ctx.stats};
  });
}

enum class ScalingKind { strong, weak, k_scaling };

inline const char* scaling_kind_name(ScalingKind k) {
  switch (k) {
    case ScalingKind::strong: return "strong";
    case ScalingKind::weak: return "weak";
    case ScalingKind::k_scaling: return "k";
  }
  return "?";
}

struct HarnessConfig {
  ScalingKind kind = ScalingKind::strong;
  Index n = 128;  // base n; weak scaling uses n * sqrt(p)
  Index m = 4;
  Index k = 8;
  std::vector<int> ps{1};
  std::vector<Index> ks;  // k-scaling only
  double density = 1.0;
  int iters = 10;
  std::uint64_t seed = 0;
  double memory_budget_bytes = 4.0e9;
};

struct ScalingRecord {
  ScalingKind kind = ScalingKind::strong;
  int p = 1;
  Index n = 0;
  Index m = 0;
  Index k = 0;
  double density = 1.0;
  int iters = 0;
  double total_seconds = 0.0;
  std::array<double, kPhaseCount> phase_seconds{};  // max over ranks
  double compute_seconds = 0.0;
  double comm_seconds = 0.0;
  double speedup = std::numeric_limits<double>::quiet_NaN();
  double efficiency = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t data_madds = 0;  // rank 0, per iteration
  std::uint64_t factor_madds = 0;
  std::uint64_t predicted_data_madds = 0;
  std::uint64_t predicted_factor_madds = 0;
  std::uint64_t words = 0;  // rank 0, per iteration
  std::uint64_t predicted_words = 0;
  bool words_exact = false;
};

namespace perf_detail {

template <typename T>
RelTensor<T> random_dense(Index n, Index m, std::uint64_t seed) {
  RelTensor<T> x(n, m);
  for (Index t = 0; t < m; ++t) {
    for (Index j = 0; j < n; ++j) {
      for (Index i = 0; i < n; ++i) {
        x.slice(t)(i, j) = static_cast<T>(
            unit_from_bits(hash_seed(seed, 0xdadaULL, static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(i),
                                     static_cast<std::uint64_t>(j))));
      }
    }
  }
  return x;
}

template <RelationalTensor X>
ScalingRecord run_one(const X& x, ScalingKind kind, Index k, int p, int iters, std::uint64_t seed, double density) {
  const auto blocks = partition(x, grid_dim_for(p));
  SolverConfig cfg;
  cfg.max_iters = iters;
  cfg.track_error = false;
  cfg.normalize = false;
  const auto t0 = std::chrono::steady_clock::now();
  const auto counts = spawn_grid(p, [&](GridContext& ctx) {
    const auto& b = blocks[static_cast<std::size_t>(ctx.rank())];
    DistFactors<typename X::Scalar> f = dist_random_init(b, k, seed);
    for (int it = 0; it < iters; ++it) dist_sweep(b, f, cfg, ctx);
    return RankCounts{ctx.ops, ctx.stats};
  });
  ScalingRecord rec;
  rec.total_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  rec.kind = kind;
  rec.p = p;
  rec.n = x.n();
  rec.m = x.m();
  rec.k = k;
  rec.density = density;
  rec.iters = iters;

  double compute_sum = 0.0;
  double comm_sum = 0.0;
  for (const auto& c : counts) {
    for (std::size_t ph = 0; ph < kPhaseCount; ++ph) rec.phase_seconds[ph] = std::max(rec.phase_seconds[ph], c.ops.seconds[ph]);
    const double comm = c.ops.comm_seconds();
    const double compute = c.ops.time(Phase::gram_mul) + c.ops.time(Phase::matrix_mul) + c.ops.time(Phase::matrix_mul_sparse);
    compute_sum += compute;
    comm_sum += comm;
  }
  rec.compute_seconds = compute_sum / static_cast<double>(p);
  rec.comm_seconds = comm_sum / static_cast<double>(p);

  const auto it = static_cast<std::uint64_t>(iters);
  rec.data_madds = counts.front().ops.data_madds / it;
  rec.factor_madds = counts.front().ops.factor_madds / it;
  rec.words = counts.front().stats.grid_words() / it;
  const ExactCounts ex = exact_counts(x.n(), x.m(), k, p);
  rec.predicted_factor_madds = ex.factor_madds;
  if constexpr (is_sparse_tensor_v<X>) {
    rec.predicted_data_madds = 2 * static_cast<std::uint64_t>(k) * static_cast<std::uint64_t>(blocks.front().local.nnz());
  } else {
    rec.predicted_data_madds = ex.data_madds;
  }
  rec.predicted_words = ex.words();
  bool exact = true;
  for (const auto& c : counts) {
    exact = exact && c.stats.grid_words() == ex.words() * it;
  }
  rec.words_exact = exact;
  return rec;
}

inline void check_budget(Index n, Index m, int p, double density, double budget) {
  // The full tensor plus its partitioned copy, 8 bytes per stored value
  // (12 for sparse with the index).
  const double per_value = density < 1.0 ? 12.0 : 8.0;
  const double nn = static_cast<double>(n);
  const double g = std::sqrt(static_cast<double>(p));
  const double padded = std::ceil(nn / g) * g;
  const double bytes = per_value * static_cast<double>(m) * density * (nn * nn + padded * padded);
  if (bytes > budget) {
    std::ostringstream os;
    os << "configuration needs about " << bytes / 1e9 << " GB, above the " << budget / 1e9 << " GB budget";
    throw ArgumentError(os.str());
  }
}

template <typename T>
ScalingRecord run_config(const HarnessConfig& cfg, Index n, Index k, int p) {
  check_budget(n, cfg.m, p, cfg.density, cfg.memory_budget_bytes);
  RelTensor<T> x = random_dense<T>(n, cfg.m, cfg.seed);
  if (cfg.density < 1.0) {
    return run_one(sparsify(x, cfg.density), cfg.kind, k, p, cfg.iters, cfg.seed, cfg.density);
  }
  return run_one(x, cfg.kind, k, p, cfg.iters, cfg.seed, cfg.density);
}

}  // namespace perf_detail

/// Strong scaling: fixed n, S = T(1) / T(p), E = S / p.
/// Weak scaling: n = n0 sqrt(p), E = compute / (compute + communication), S = p E.
/// k scaling: fixed n and p (the first entry of ps), one record per k.
/// Every run performs cfg.iters sweeps.
template <typename T = double>
std::vector<ScalingRecord> scaling_harness(const HarnessConfig& cfg) {
  if (cfg.iters < 1) throw ArgumentError("iters must be >= 1");
  if (cfg.ps.empty()) throw ArgumentError("at least one p is required");
  for (int p : cfg.ps) grid_dim_for(p);
  std::vector<ScalingRecord> out;

  switch (cfg.kind) {
    case ScalingKind::strong: {
      double t1 = 0.0;
      const bool has_one = std::find(cfg.ps.begin(), cfg.ps.end(), 1) != cfg.ps.end();
      if (!has_one) t1 = perf_detail::run_config<T>(cfg, cfg.n, cfg.k, 1).total_seconds;
      for (int p : cfg.ps) {
        ScalingRecord rec = perf_detail::run_config<T>(cfg, cfg.n, cfg.k, p);
        if (p == 1) t1 = rec.total_seconds;
        out.push_back(rec);
      }
      for (auto& rec : out) {
        rec.speedup = rec.p == 1 ? 1.0 : t1 / rec.total_seconds;
        rec.efficiency = rec.speedup / static_cast<double>(rec.p);
      }
      break;
    }
    case ScalingKind::weak: {
      for (int p : cfg.ps) {
        const Index n = cfg.n * static_cast<Index>(grid_dim_for(p));
        ScalingRecord rec = perf_detail::run_config<T>(cfg, n, cfg.k, p);
        const double busy = rec.compute_seconds + rec.comm_seconds;
        rec.efficiency = busy > 0.0 ? rec.compute_seconds / busy : 1.0;
        rec.speedup = static_cast<double>(p) * rec.efficiency;
        out.push_back(rec);
      }
      break;
    }
    case ScalingKind::k_scaling: {
      if (cfg.ks.empty()) throw ArgumentError("k scaling needs a list of k values");
      for (Index k : cfg.ks) {
        if (k < 1 || k > cfg.n) throw ArgumentError("k must satisfy 1 <= k <= n");
        out.push_back(perf_detail::run_config<T>(cfg, cfg.n, k, cfg.ps.front()));
      }
      break;
    }
  }
  return out;
}

inline void write_scaling_csv(std::ostream& os, const std::vector<ScalingRecord>& recs) {
  os << "kind,p,n,m,k,density,iters,total_s";
  for (std::size_t ph = 0; ph < kPhaseCount; ++ph) os << ',' << phase_name(static_cast<Phase>(ph)) << "_s";
  os << ",compute_s,comm_s,speedup,efficiency,data_madds,predicted_data_madds,factor_madds,predicted_factor_madds,"
        "words,predicted_words,words_match\n";
  const auto num = [&os](double v) {
    if (std::isnan(v)) {
      os << "";
    } else {
      os << std::setprecision(9) << v;
    }
  };
  for (const auto& r : recs) {
    os << scaling_kind_name(r.kind) << ',' << r.p << ',' << r.n << ',' << r.m << ',' << r.k << ',';
    num(r.density);
    os << ',' << r.iters << ',';
    num(r.total_seconds);
    for (double s : r.phase_seconds) {
      os << ',';
      num(s);
    }
    os << ',';
    num(r.compute_seconds);
    os << ',';
    num(r.comm_seconds);
    os << ',';
    num(r.speedup);
    os << ',';
    num(r.efficiency);
    os << ',' << r.data_madds << ',' << r.predicted_data_madds << ',' << r.factor_madds << ','
       << r.predicted_factor_madds << ',' << r.words << ',' << r.predicted_words << ','
       << (r.words_exact ? "exact" : "mismatch") << '\n';
  }
}

}  // namespace rescalk

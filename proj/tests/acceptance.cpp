// Acceptance checks. Prints one line per criterion and exits nonzero if any
// criterion fails. Tolerances are fixed here and never read from outside.

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "rescalk/rescalk.hpp"
#include "rescalk/synth.hpp"

using namespace rescalk;

namespace {

constexpr double kEquivalenceTol = 1e-8;
constexpr double kEquivalenceSeconds = 30.0;
constexpr int kSelectionRequired = 8;
constexpr double kPearsonMin = 0.9;
constexpr double kSelectionSeconds = 600.0;
constexpr double kMonotoneSlack = 1e-8;
constexpr double kRecoveryTol = 1e-4;
constexpr int kRecoveryIters = 2000;
constexpr double kLsaTol = 1e-9;
constexpr double kSilhouetteTol = 1e-12;
constexpr double kSparseDenseTol = 1e-10;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

RelTensor<double> rand_tensor(Index n, Index m, std::mt19937_64& rng, double zero_fraction = 0.0) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RelTensor<double> x(n, m);
  for (Index t = 0; t < m; ++t) {
    for (Index j = 0; j < n; ++j) {
      for (Index i = 0; i < n; ++i) {
        const double v = u(rng);
        x.slice(t)(i, j) = u(rng) < zero_fraction ? 0.0 : v;
      }
    }
  }
  return x;
}

Matrix<double> rand_mat(Index r, Index c, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix<double> m(r, c);
  for (Index j = 0; j < c; ++j) {
    for (Index i = 0; i < r; ++i) m(i, j) = u(rng);
  }
  return m;
}

double max_rel_dev(const RescalFactors<double>& a, const RescalFactors<double>& b) {
  double dev = (a.A - b.A).cwiseAbs().maxCoeff() / b.A.cwiseAbs().maxCoeff();
  for (std::size_t t = 0; t < a.R.size(); ++t) {
    dev = std::max(dev, (a.R[t] - b.R[t]).cwiseAbs().maxCoeff() / b.R[t].cwiseAbs().maxCoeff());
  }
  return dev;
}

// 1. Serial and grid factorizations agree.
Outcome serial_distributed_equivalence() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(101);
  const auto x = rand_tensor(32, 4, rng);
  SolverConfig cfg;
  cfg.max_iters = 200;
  cfg.seed = 7;
  const auto serial = rescal_solve(x, 3, cfg);
  double worst = 0.0;
  for (int p : {1, 4, 9, 16}) {
    const auto blocks = partition(x, grid_dim_for(p));
    const auto out = spawn_grid(p, [&](GridContext& ctx) {
      const auto& b = blocks[static_cast<std::size_t>(ctx.rank())];
      auto res = dist_rescal_solve(b, 3, cfg, ctx);
      return gather_factors(res.factors, ctx);
    });
    for (const auto& g : out) worst = std::max(worst, max_rel_dev(g, serial.factors));
  }
  const double secs = seconds_since(t0);
  std::ostringstream os;
  os << "max relative deviation " << worst << ", " << secs << " s";
  return {worst <= kEquivalenceTol && secs < kEquivalenceSeconds, os.str()};
}

// 2. Model selection recovers the planted k.
Outcome model_selection() {
  const auto t0 = std::chrono::steady_clock::now();
  struct Case {
    Index n, m, k;
  };
  const std::vector<Case> cases = {{32, 4, 3}, {32, 8, 3}, {64, 4, 3}, {64, 8, 3}, {32, 4, 5},
                                   {32, 8, 5}, {64, 4, 5}, {64, 8, 5}, {64, 4, 7}, {64, 8, 7}};
  int correct = 0;
  bool pearson_ok = true;
  std::ostringstream os;
  os << "k_opt:";
  for (std::size_t c = 0; c < cases.size(); ++c) {
    SynthSpec spec;
    spec.n = cases[c].n;
    spec.m = cases[c].m;
    spec.k = cases[c].k;
    spec.noise = 0.01;
    spec.seed = 500 + c;
    const auto d = generate<double>(spec);
    RescalkConfig cfg;
    cfg.k_min = 2;
    cfg.k_max = spec.k + 3;
    cfg.r = 10;
    cfg.solver.seed = 900 + c;
    cfg.perturb.seed = 1300 + c;
    const auto rep = rescalk_select(d.X, cfg);
    os << ' ' << rep.k_opt << '/' << spec.k;
    if (rep.k_opt != spec.k) continue;
    ++correct;
    const auto diag = best_match_diagonal(pearson_correlation(rep.at(spec.k).A_median, d.A).corr);
    const double worst = *std::min_element(diag.begin(), diag.end());
    if (worst < kPearsonMin) {
      pearson_ok = false;
      os << "(pearson " << worst << ")";
    }
  }
  const double secs = seconds_since(t0);
  os << "; " << correct << "/10 correct, " << secs << " s";
  return {correct >= kSelectionRequired && pearson_ok && secs < kSelectionSeconds, os.str()};
}

// 3. The objective never increases across sweeps.
Outcome monotone_objective() {
  std::mt19937_64 rng(303);
  int violations = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Index n = 2 + static_cast<Index>(rng() % 15);
    const Index m = 1 + static_cast<Index>(rng() % 4);
    const Index k = 1 + static_cast<Index>(rng() % std::min<Index>(n, 6));
    const auto x = rand_tensor(n, m, rng, 0.2);
    auto f = random_init<double>(n, k, m, rng());
    SolverConfig cfg;
    const auto xs = oracle::slices(x);
    double prev = oracle::objective(xs, f.A, f.R);
    for (int s = 0; s < 50; ++s) {
      sweep(x, f, cfg);
      const double cur = oracle::objective(xs, f.A, f.R);
      const double rise = (cur - prev) / std::max(prev, 1e-300);
      worst = std::max(worst, rise);
      if (cur > prev * (1.0 + kMonotoneSlack)) ++violations;
      prev = cur;
    }
  }
  std::ostringstream os;
  os << violations << " violations in 5000 sweeps, largest relative rise " << worst;
  return {violations == 0, os.str()};
}

// 4. Noiseless planted tensors are recovered to a small error.
Outcome exact_recovery() {
  struct Case {
    Index n, m, k;
  };
  const std::vector<Case> cases = {{16, 3, 2}, {16, 4, 3}, {32, 4, 2}, {32, 4, 3}, {32, 8, 5},
                                   {64, 4, 3}, {64, 8, 5}, {64, 4, 7}};
  int reached = 0;
  std::ostringstream os;
  os << "final errors:";
  for (std::size_t c = 0; c < cases.size(); ++c) {
    SynthSpec spec;
    spec.n = cases[c].n;
    spec.m = cases[c].m;
    spec.k = cases[c].k;
    spec.noise = 0.0;
    spec.seed = 40 + c;
    const auto d = generate<double>(spec);
    SolverConfig cfg;
    cfg.max_iters = kRecoveryIters;
    cfg.tolerance = kRecoveryTol;
    cfg.seed = 70 + c;
    const auto res = rescal_solve(d.X, spec.k, cfg);
    const double err = res.error_trace.back();
    if (err <= kRecoveryTol) ++reached;
    os << ' ' << err;
  }
  os << "; " << reached << '/' << cases.size() << " reached " << kRecoveryTol;
  return {reached == static_cast<int>(cases.size()), os.str()};
}

// 5. Hungarian assignment equals exhaustive search.
Outcome lsa_oracle() {
  std::mt19937_64 rng(505);
  int mismatches = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const Index k = 1 + static_cast<Index>(rng() % 7);
    const Matrix<double> c = rand_mat(k, k, rng, -10.0, 10.0);
    const LsaMode mode = trial % 2 == 0 ? LsaMode::minimize : LsaMode::maximize;
    const double best = oracle::brute_force_assignment(c, mode == LsaMode::maximize);
    if (std::abs(lsa(c, mode).total - best) > kLsaTol) ++mismatches;
  }
  std::ostringstream os;
  os << 500 - mismatches << "/500 optimal";
  return {mismatches == 0, os.str()};
}

// 6. Silhouette statistics equal a direct double-loop computation.
Outcome silhouette_oracle() {
  std::mt19937_64 rng(606);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Index k = 2 + static_cast<Index>(rng() % 4);
    const int r = 2 + static_cast<int>(rng() % 5);
    const Index n = 3 + static_cast<Index>(rng() % 10);
    FactorEnsemble<double> ens;
    const Matrix<double> base = rand_mat(n, k, rng);
    for (int q = 0; q < r; ++q) ens.A.push_back((base + 0.3 * rand_mat(n, k, rng)).eval());
    const auto st = cluster_stability(ens);
    const auto o = oracle::silhouette(ens.A);
    worst = std::max({worst, std::abs(st.s_min - o.s_min), std::abs(st.s_avg - o.s_avg)});
  }
  FactorEnsemble<double> orth;
  Matrix<double> a = Matrix<double>::Zero(4, 2);
  a(0, 0) = 1.0;
  a(3, 1) = 1.0;
  orth.A.assign(3, a);
  const auto so = cluster_stability(orth);
  FactorEnsemble<double> same;
  same.A.assign(3, Matrix<double>::Ones(5, 2));
  const auto ss = cluster_stability(same);
  const bool bounds = so.s_min == 1.0 && so.s_avg == 1.0 && ss.s_min == 0.0 && ss.s_avg == 0.0;
  std::ostringstream os;
  os << "max deviation " << worst << ", orthogonal s=" << so.s_min << ", identical s=" << ss.s_min;
  return {worst <= kSilhouetteTol && bounds, os.str()};
}

// 7. Counted communication equals the closed form, and doubling ratios hold.
Outcome communication_counts() {
  int configs = 0, mismatches = 0;
  std::mt19937_64 rng(707);
  for (int p : {1, 4, 9, 16}) {
    for (Index n : {8, 13, 24}) {
      for (Index m : {1, 3}) {
        for (Index k : {1, 2, 4}) {
          const auto x = rand_tensor(n, m, rng);
          const auto counts = measure_counts(x, k, p, 1, rng());
          const auto e = exact_counts(n, m, k, p);
          ++configs;
          for (const auto& c : counts) {
            const bool ok = c.stats.words(CollectiveKind::all_reduce, Axis::row) == e.row_all_reduce_words &&
                            c.stats.words(CollectiveKind::all_reduce, Axis::col) == e.col_all_reduce_words &&
                            c.stats.words(CollectiveKind::broadcast, Axis::row) == e.row_broadcast_words &&
                            c.stats.words(CollectiveKind::broadcast, Axis::col) == e.col_broadcast_words &&
                            c.stats.grid_words() == e.words() && c.ops.data_madds == e.data_madds;
            if (!ok) {
              ++mismatches;
              break;
            }
          }
        }
      }
    }
  }
  // Doubling ratios on counted values.
  const auto counted = [&](Index n, Index k, int p) {
    return measure_counts(rand_tensor(n, 2, rng), k, p, 1, 1)[0];
  };
  const auto base = counted(64, 4, 4);
  const auto dn = counted(128, 4, 4);
  const auto dk = counted(64, 8, 4);
  const auto dp = counted(64, 4, 16);
  const auto r = [](std::uint64_t a, std::uint64_t b) { return static_cast<double>(a) / static_cast<double>(b); };
  const double fn = r(dn.ops.data_madds, base.ops.data_madds);
  const double fk = r(dk.ops.data_madds, base.ops.data_madds);
  const double fp = r(dp.ops.data_madds, base.ops.data_madds);
  const double wn = r(dn.stats.grid_words(), base.stats.grid_words());
  const double wk = r(dk.stats.grid_words(), base.stats.grid_words());
  const double wp = r(dp.stats.grid_words(), base.stats.grid_words());
  // Flops are exact multiples; word ratios carry lower-order k^2 terms.
  const bool flops_ok = fn == 4.0 && fk == 2.0 && fp == 0.25;
  const bool words_ok = std::abs(wn - 2.0) < 0.15 && std::abs(wk - 2.0) < 0.3 && std::abs(wp - 0.5) < 0.1;
  std::ostringstream os;
  os << configs - mismatches << '/' << configs << " configs exact; flop ratios n,k,p = " << fn << ", " << fk << ", "
     << fp << "; word ratios = " << wn << ", " << wk << ", " << wp;
  return {mismatches == 0 && flops_ok && words_ok, os.str()};
}

// 8. Perturbations stay in bounds, keep zeros and communicate nothing.
Outcome perturbation_statistics() {
  std::mt19937_64 rng(808);
  const auto x = rand_tensor(250, 16, rng, 0.1);  // 1e6 elements
  PerturbConfig pc;
  pc.delta = 0.02;
  pc.seed = 99;
  const auto blocks = partition(x, 2);
  const auto out = spawn_grid(4, [&](GridContext& ctx) {
    const CollectiveStats before = ctx.stats;
    auto b = dist_perturb(blocks[static_cast<std::size_t>(ctx.rank())], pc, 5, ctx);
    return std::make_pair(std::move(b), ctx.stats == before);
  });
  bool silent = true;
  std::vector<TensorBlock<RelTensor<double>>> pb;
  for (const auto& [b, s] : out) {
    pb.push_back(b);
    silent = silent && s;
  }
  const auto y = reassemble(pb);
  std::uint64_t checked = 0, outside = 0, zero_changes = 0;
  for (Index t = 0; t < x.m(); ++t) {
    for (Index j = 0; j < x.n(); ++j) {
      for (Index i = 0; i < x.n(); ++i) {
        const double v = x.slice(t)(i, j);
        const double w = y.slice(t)(i, j);
        ++checked;
        if (std::abs(w - v) > pc.delta * v * (1.0 + 1e-15)) ++outside;
        if ((v == 0.0) != (w == 0.0)) ++zero_changes;
      }
    }
  }
  const auto sx = to_sparse(rand_tensor(60, 4, rng, 0.9));
  const auto sy = perturb(sx, pc, 2);
  bool pattern = true;
  for (Index t = 0; t < sx.m(); ++t) {
    const auto& a = sx.slice(t);
    const auto& b = sy.slice(t);
    pattern = pattern && a.nonZeros() == b.nonZeros() &&
              std::equal(a.innerIndexPtr(), a.innerIndexPtr() + a.nonZeros(), b.innerIndexPtr()) &&
              std::equal(a.outerIndexPtr(), a.outerIndexPtr() + a.outerSize() + 1, b.outerIndexPtr());
  }
  std::ostringstream os;
  os << checked << " elements, " << outside << " out of bounds, " << zero_changes << " zero changes, sparse pattern "
     << (pattern ? "kept" : "changed") << ", traffic " << (silent ? "none" : "present");
  return {checked >= 1000000 && outside == 0 && zero_changes == 0 && pattern && silent, os.str()};
}

// 9. Sparse and dense paths give the same trace.
Outcome sparse_dense_agreement() {
  SynthSpec spec;
  spec.n = 48;
  spec.m = 4;
  spec.k = 4;
  spec.seed = 909;
  const auto sx = sparsify(generate<double>(spec).X, 0.05);
  const auto dx = to_dense(sx);
  SolverConfig cfg;
  cfg.max_iters = 300;
  cfg.seed = 12;
  const auto rs = rescal_solve(sx, 4, cfg);
  const auto rd = rescal_solve(dx, 4, cfg);
  double worst = rs.error_trace.size() == rd.error_trace.size() ? 0.0 : 1.0;
  for (std::size_t i = 0; i < std::min(rs.error_trace.size(), rd.error_trace.size()); ++i) {
    worst = std::max(worst, std::abs(rs.error_trace[i] - rd.error_trace[i]));
  }
  // The same comparison on a 2x2 grid.
  const auto sb = partition(sx, 2);
  const auto db = partition(dx, 2);
  const auto out = spawn_grid(4, [&](GridContext& ctx) {
    const auto r = static_cast<std::size_t>(ctx.rank());
    const auto a = dist_rescal_solve(sb[r], 4, cfg, ctx).error_trace;
    const auto b = dist_rescal_solve(db[r], 4, cfg, ctx).error_trace;
    double w = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) w = std::max(w, std::abs(a[i] - b[i]));
    return w;
  });
  for (double w : out) worst = std::max(worst, w);
  std::ostringstream os;
  os << "nnz " << sx.nnz() << ", max trace difference " << worst;
  return {worst <= kSparseDenseTol, os.str()};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"serial and grid factors agree for p in {1,4,9,16}", serial_distributed_equivalence},
      {"model selection recovers planted k", model_selection},
      {"objective is non-increasing", monotone_objective},
      {"noiseless recovery to 1e-4 within 2000 iterations", exact_recovery},
      {"assignment matches brute force", lsa_oracle},
      {"silhouette matches double-loop reference", silhouette_oracle},
      {"communication counts are exact", communication_counts},
      {"perturbation bounds, zeros and silence", perturbation_statistics},
      {"sparse and dense traces agree", sparse_dense_agreement},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::printf("[%s] %zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - static_cast<std::size_t>(failed), criteria.size());
  return failed == 0 ? 0 : 1;
}

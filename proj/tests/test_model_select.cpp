#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "rescalk/model_select.hpp"
#include "rescalk/synth.hpp"

using namespace rescalk;

namespace {

Matrix<double> rand_mat(Index r, Index c, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix<double> m(r, c);
  for (Index i = 0; i < r; ++i) {
    for (Index j = 0; j < c; ++j) m(i, j) = u(rng);
  }
  return m;
}

// Columns with disjoint supports.
Matrix<double> separated(Index n, Index k, std::mt19937_64& rng) {
  Matrix<double> a = Matrix<double>::Zero(n, k);
  const Index w = n / k;
  for (Index c = 0; c < k; ++c) a.block(c * w, c, w, 1) = rand_mat(w, 1, rng, 0.5, 1.0);
  return a;
}

double cosine(const Matrix<double>& u, const Matrix<double>& v) { return u.col(0).dot(v.col(0)) / (u.norm() * v.norm()); }

}  // namespace

TEST(Lsa, IdentitySimilarity) {
  const auto as = lsa(Matrix<double>::Identity(5, 5), LsaMode::maximize);
  EXPECT_TRUE(as.is_identity());
  EXPECT_EQ(as.total, 5.0);
}

TEST(Lsa, ThreeByThreeExample) {
  Matrix<double> c(3, 3);
  c << 4, 1, 3, 2, 0, 5, 3, 2, 2;
  const auto as = lsa(c, LsaMode::minimize);
  EXPECT_EQ(as.total, 5.0);
  EXPECT_EQ(as.total, oracle::brute_force_assignment(c, false));
  EXPECT_EQ(as.col_of_row, (std::vector<Index>{1, 0, 2}));
}

TEST(Lsa, MatchesBruteForce) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const Index k = 1 + static_cast<Index>(trial % 7);
    const Matrix<double> c = rand_mat(k, k, rng, -5.0, 5.0);
    for (LsaMode mode : {LsaMode::minimize, LsaMode::maximize}) {
      const auto as = lsa(c, mode);
      const double best = oracle::brute_force_assignment(c, mode == LsaMode::maximize);
      EXPECT_NEAR(as.total, best, 1e-9);
      double sum = 0.0;
      std::vector<bool> used(static_cast<std::size_t>(k), false);
      for (Index i = 0; i < k; ++i) {
        const Index j = as.col_of_row[static_cast<std::size_t>(i)];
        EXPECT_FALSE(used[static_cast<std::size_t>(j)]);
        used[static_cast<std::size_t>(j)] = true;
        sum += c(i, j);
      }
      EXPECT_NEAR(sum, as.total, 1e-12);
    }
  }
}

TEST(Lsa, RejectsBadInput) {
  EXPECT_THROW(lsa(Matrix<double>::Zero(2, 3), LsaMode::minimize), ShapeError);
  Matrix<double> c = Matrix<double>::Zero(2, 2);
  c(0, 1) = std::numeric_limits<double>::infinity();
  EXPECT_ANY_THROW(lsa(c, LsaMode::minimize));
}

TEST(Cluster, RecoversKnownPermutation) {
  std::mt19937_64 rng(2);
  const Matrix<double> a1 = separated(12, 4, rng);
  const std::vector<Index> pi{2, 0, 3, 1};
  Matrix<double> a2(12, 4);
  for (Index c = 0; c < 4; ++c) a2.col(pi[static_cast<std::size_t>(c)]) = a1.col(c);
  FactorEnsemble<double> ens;
  ens.A = {a1, a2};
  std::vector<Matrix<double>> r1{rand_mat(4, 4, rng)};
  std::vector<Matrix<double>> r2{Matrix<double>(4, 4)};
  for (Index a = 0; a < 4; ++a) {
    for (Index b = 0; b < 4; ++b) r2[0](pi[a], pi[b]) = r1[0](a, b);
  }
  ens.R = {r1, r2};
  const auto res = custom_cluster(ens);
  EXPECT_TRUE(res.converged);
  EXPECT_EQ(res.aligned.A[1], a1);
  EXPECT_EQ(res.aligned.R[1][0], r1[0]);
  for (Index c = 0; c < 4; ++c) EXPECT_EQ(res.permutation[1][static_cast<std::size_t>(c)], pi[static_cast<std::size_t>(c)]);
}

TEST(Cluster, IdenticalMembers) {
  std::mt19937_64 rng(3);
  const Matrix<double> a = rand_mat(8, 3, rng);
  FactorEnsemble<double> ens;
  ens.A.assign(4, a);
  const auto res = custom_cluster(ens);
  EXPECT_TRUE(res.converged);
  EXPECT_EQ(res.iterations, 1);
  for (const auto& p : res.permutation) EXPECT_EQ(p, (std::vector<Index>{0, 1, 2}));
  EXPECT_EQ(res.medians, a);
}

TEST(Cluster, NoisyShuffledCopiesAlignToTruth) {
  std::mt19937_64 rng(4);
  const Matrix<double> truth = separated(20, 4, rng);
  FactorEnsemble<double> ens;
  for (int q = 0; q < 5; ++q) {
    std::vector<Index> perm{0, 1, 2, 3};
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix<double> noisy = truth.array() * (1.0 + 0.01 * rand_mat(20, 4, rng, -1.0, 1.0).array());
    Matrix<double> shuffled(20, 4);
    for (Index c = 0; c < 4; ++c) shuffled.col(c) = noisy.col(perm[static_cast<std::size_t>(c)]);
    ens.A.push_back(shuffled);
  }
  const auto res = custom_cluster(ens);
  for (Index c = 0; c < 4; ++c) {
    Index match = 0;
    double best = -1.0;
    for (Index t = 0; t < 4; ++t) {
      const double s = cosine(res.aligned.A[0].col(c), truth.col(t));
      if (s > best) {
        best = s;
        match = t;
      }
    }
    for (const auto& a : res.aligned.A) EXPECT_GE(cosine(a.col(c), truth.col(match)), 0.99);
  }
}

TEST(Silhouette, OrthogonalClustersGiveOne) {
  FactorEnsemble<double> ens;
  Matrix<double> a = Matrix<double>::Zero(4, 2);
  a(0, 0) = 1.0;
  a(3, 1) = 1.0;
  ens.A.assign(3, a);
  const auto st = cluster_stability(ens);
  EXPECT_EQ(st.s_min, 1.0);
  EXPECT_EQ(st.s_avg, 1.0);
  EXPECT_EQ(st.I.maxCoeff(), 0.0);
  EXPECT_EQ(st.J.minCoeff(), 1.0);
}

TEST(Silhouette, IdenticalColumnsGiveZero) {
  FactorEnsemble<double> ens;
  ens.A.assign(3, Matrix<double>::Ones(5, 2));
  const auto st = cluster_stability(ens);
  EXPECT_EQ(st.s_min, 0.0);
  EXPECT_EQ(st.s_avg, 0.0);
}

TEST(Silhouette, SingleClusterConvention) {
  FactorEnsemble<double> ens;
  ens.A.assign(3, Matrix<double>::Ones(5, 1));
  const auto st = cluster_stability(ens);
  EXPECT_TRUE(st.single_cluster);
  EXPECT_EQ(st.s_min, 1.0);
}

TEST(Silhouette, HandPlantedOverlapMatchesOracle) {
  std::mt19937_64 rng(5);
  FactorEnsemble<double> ens;
  const Matrix<double> base = separated(9, 3, rng);
  for (int q = 0; q < 4; ++q) {
    Matrix<double> a = base;
    // Cluster 1 leaks into cluster 2's support by a varying amount.
    a.block(6, 1, 3, 1).setConstant(0.2 * (q + 1));
    ens.A.push_back(a);
  }
  const auto st = cluster_stability(ens);
  const auto o = oracle::silhouette(ens.A);
  EXPECT_NEAR(st.s_min, o.s_min, 1e-12);
  EXPECT_NEAR(st.s_avg, o.s_avg, 1e-12);
}

TEST(Silhouette, RandomEnsemblesMatchOracle) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const Index k = 2 + static_cast<Index>(rng() % 4);
    const int r = 2 + static_cast<int>(rng() % 5);
    FactorEnsemble<double> ens;
    for (int q = 0; q < r; ++q) ens.A.push_back(rand_mat(7, k, rng));
    const auto st = cluster_stability(ens);
    const auto o = oracle::silhouette(ens.A);
    EXPECT_NEAR(st.s_min, o.s_min, 1e-12);
    EXPECT_NEAR(st.s_avg, o.s_avg, 1e-12);
  }
}

TEST(SelectK, LargestAboveThreshold) {
  const auto sel = select_k({2, 3, 4, 5}, {0.99, 0.98, 0.95, 0.4}, 0.75);
  EXPECT_EQ(sel.k_opt, 4);
  EXPECT_FALSE(sel.low_confidence);
}

TEST(SelectK, FallbackToArgmax) {
  const auto sel = select_k({2, 3, 4}, {0.3, 0.6, 0.5}, 0.75);
  EXPECT_EQ(sel.k_opt, 3);
  EXPECT_TRUE(sel.low_confidence);
  EXPECT_THROW(select_k({}, {}, 0.75), ArgumentError);
}

TEST(Pearson, IdentityGivesOnes) {
  std::mt19937_64 rng(7);
  const Matrix<double> a = rand_mat(10, 3, rng);
  const auto pc = pearson_correlation(a, a);
  for (double d : best_match_diagonal(pc.corr)) EXPECT_NEAR(d, 1.0, 1e-12);
}

TEST(Pearson, NegatedShiftGivesMinusOne) {
  std::mt19937_64 rng(8);
  const Matrix<double> a = rand_mat(10, 3, rng);
  const Matrix<double> b = (-a).array() + 2.0;
  const auto pc = pearson_correlation(b, a);
  for (Index c = 0; c < 3; ++c) EXPECT_NEAR(pc.corr(c, c), -1.0, 1e-12);
}

TEST(Pearson, NoisyCopyAboveThreshold) {
  std::mt19937_64 rng(9);
  const Matrix<double> a = separated(30, 3, rng);
  std::vector<Index> perm{2, 0, 1};
  Matrix<double> est(30, 3);
  for (Index c = 0; c < 3; ++c) {
    est.col(c) = a.col(perm[static_cast<std::size_t>(c)]).array() * (1.0 + 0.01 * rand_mat(30, 1, rng, -1, 1).array());
  }
  for (double d : best_match_diagonal(pearson_correlation(est, a).corr)) EXPECT_GE(d, 0.99);
}

TEST(Pearson, ZeroVarianceFlagged) {
  Matrix<double> a = Matrix<double>::Ones(4, 2);
  a(0, 1) = 2.0;
  const auto pc = pearson_correlation(a, a);
  EXPECT_TRUE(pc.zero_variance);
}

TEST(Rescalk, RejectsBadRange) {
  const RelTensor<double> x(std::vector<Matrix<double>>{Matrix<double>::Ones(4, 4)});
  RescalkConfig cfg;
  cfg.k_min = 2;
  cfg.k_max = 5;
  EXPECT_THROW(rescalk_select(x, cfg), ArgumentError);
  cfg.k_min = 3;
  cfg.k_max = 2;
  EXPECT_THROW(rescalk_select(x, cfg), ArgumentError);
}

TEST(Rescalk, RecoversPlantedThree) {
  SynthSpec spec;
  spec.n = 32;
  spec.m = 4;
  spec.k = 3;
  spec.seed = 31;
  const auto d = generate<double>(spec);
  RescalkConfig cfg;
  cfg.k_min = 2;
  cfg.k_max = 6;
  cfg.r = 10;
  cfg.solver.max_iters = 1000;
  cfg.solver.seed = 3;
  cfg.perturb.seed = 4;
  const auto rep = rescalk_select(d.X, cfg);
  ASSERT_EQ(rep.entries.size(), 5u);
  EXPECT_EQ(rep.k_opt, 3);
  EXPECT_GE(rep.at(3).s_min, 0.9);
  EXPECT_LE(rep.at(3).rel_error, 0.02);
  for (double v : best_match_diagonal(pearson_correlation(rep.at(3).A_median, d.A).corr)) EXPECT_GE(v, 0.9);
}

TEST(Rescalk, ExactRankSingleK) {
  SynthSpec spec;
  spec.n = 16;
  spec.m = 3;
  spec.k = 2;
  spec.noise = 0.0;
  spec.seed = 2;
  const auto d = generate<double>(spec);
  RescalkConfig cfg;
  cfg.k_min = cfg.k_max = 2;
  cfg.r = 2;
  cfg.solver.max_iters = 2000;
  // The reported error is floored by the perturbation amplitude, so use the
  // smallest supported delta.
  cfg.perturb.delta = 0.005;
  const auto rep = rescalk_select(d.X, cfg);
  ASSERT_EQ(rep.entries.size(), 1u);
  EXPECT_LE(rep.entries[0].rel_error, 1e-3);
  EXPECT_GE(rep.entries[0].s_min, 0.99);
}

TEST(Rescalk, ThreadCountDoesNotChangeResult) {
  SynthSpec spec;
  spec.n = 16;
  spec.m = 2;
  spec.k = 2;
  spec.seed = 3;
  const auto d = generate<double>(spec);
  RescalkConfig cfg;
  cfg.k_min = 1;
  cfg.k_max = 3;
  cfg.r = 4;
  cfg.solver.max_iters = 100;
  cfg.threads = 1;
  const auto a = rescalk_select(d.X, cfg);
  cfg.threads = 3;
  const auto b = rescalk_select(d.X, cfg);
  for (std::size_t i = 0; i < a.entries.size(); ++i) {
    EXPECT_EQ(a.entries[i].A_median, b.entries[i].A_median);
    EXPECT_EQ(a.entries[i].s_min, b.entries[i].s_min);
  }
  EXPECT_TRUE(a.at(1).single_cluster);
}

TEST(Rescalk, GridMatchesSerial) {
  SynthSpec spec;
  spec.n = 16;
  spec.m = 2;
  spec.k = 3;
  spec.seed = 5;
  const auto d = generate<double>(spec);
  RescalkConfig cfg;
  cfg.k_min = 2;
  cfg.k_max = 4;
  cfg.r = 4;
  cfg.solver.max_iters = 150;
  cfg.threads = 1;
  const auto serial = rescalk_select(d.X, cfg);
  for (int p : {1, 4}) {
    const auto blocks = partition(d.X, grid_dim_for(p));
    const auto reps = spawn_grid(p, [&](GridContext& ctx) {
      return rescalk_select(blocks[static_cast<std::size_t>(ctx.rank())], cfg, ctx);
    });
    for (const auto& rep : reps) {
      EXPECT_EQ(rep.k_opt, serial.k_opt);
      for (std::size_t i = 0; i < rep.entries.size(); ++i) {
        const auto& g = rep.entries[i];
        const auto& s = serial.entries[i];
        EXPECT_NEAR(g.s_min, s.s_min, 1e-8) << "p=" << p << " k=" << g.k;
        EXPECT_NEAR(g.s_avg, s.s_avg, 1e-8);
        EXPECT_NEAR(g.rel_error, s.rel_error, 1e-8);
        EXPECT_LE((g.A_median - s.A_median).norm(), 1e-8 * s.A_median.norm());
      }
    }
  }
}

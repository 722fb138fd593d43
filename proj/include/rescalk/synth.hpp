#pragma once

// Synthetic relational tensors with a planted factorization.
//
//   X0_t = A R_t A^T,   X_t = X0_t .* (1 + eta * U_t),   U_t ~ uniform[-1, 1]
//
// Columns of A are Gaussian bumps over the entity index (or rectified
// Gaussian noise); R_t entries are exponential with scale 1.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "rescalk/error.hpp"
#include "rescalk/tensor.hpp"
#include "rescalk/types.hpp"

namespace rescalk {

enum class FeatureProfile { gaussian_bump, rectified_gaussian };

struct SynthSpec {
  Index n = 64;
  Index m = 8;
  Index k = 5;
  FeatureProfile profile = FeatureProfile::gaussian_bump;
  // Bump width and minimum distance between bump centers, both on the
  // [0, 1) entity axis. Non-positive values select 0.2 / k and 0.8 / k.
  double width = 0.0;
  double min_spacing = 0.0;
  double noise = 0.01;
  std::uint64_t seed = 0;

  double resolved_width() const { return width > 0.0 ? width : 0.2 / static_cast<double>(k); }
  double resolved_spacing() const { return min_spacing > 0.0 ? min_spacing : 0.8 / static_cast<double>(k); }

  void validate() const {
    if (n < 1 || m < 1) throw ArgumentError("n and m must be positive");
    if (k < 1 || k > n) throw ArgumentError("k must satisfy 1 <= k <= n");
    if (!(noise >= 0.0) || noise > 1.0) throw ArgumentError("noise must lie in [0, 1]");
    if (profile == FeatureProfile::gaussian_bump) {
      if (!(resolved_width() > 0.0) || resolved_width() >= 1.0) throw ArgumentError("width must lie in (0, 1)");
      if (static_cast<double>(k - 1) * resolved_spacing() >= 1.0) {
        throw ArgumentError("k bumps do not fit with the requested center spacing");
      }
    }
  }
};

template <typename T = double>
struct SynthData {
  RelTensor<T> X;
  RelTensor<T> X0;  // noiseless tensor
  Matrix<T> A;
  std::vector<Matrix<T>> R;
  std::vector<double> centers;  // bump profile only
};

namespace synth_detail {

// k sorted centers in [0, 1) with pairwise distance >= s, uniform over the
// feasible configurations: sort k draws from [0, 1 - (k-1)s) and shift the
// i-th by i*s.
inline std::vector<double> spaced_centers(Index k, double s, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0 - static_cast<double>(k - 1) * s);
  std::vector<double> c(static_cast<std::size_t>(k));
  for (auto& v : c) v = u(rng);
  std::sort(c.begin(), c.end());
  for (Index i = 0; i < k; ++i) c[static_cast<std::size_t>(i)] += static_cast<double>(i) * s;
  return c;
}

}  // namespace synth_detail

template <typename T = double>
SynthData<T> generate(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  SynthData<T> out;
  out.A = Matrix<T>(spec.n, spec.k);

  if (spec.profile == FeatureProfile::gaussian_bump) {
    out.centers = synth_detail::spaced_centers(spec.k, spec.resolved_spacing(), rng);
    const double w = spec.resolved_width();
    for (Index c = 0; c < spec.k; ++c) {
      const double mu = out.centers[static_cast<std::size_t>(c)];
      for (Index i = 0; i < spec.n; ++i) {
        const double x = static_cast<double>(i) / static_cast<double>(spec.n);
        out.A(i, c) = static_cast<T>(std::exp(-(x - mu) * (x - mu) / (2.0 * w * w)));
      }
    }
  } else {
    std::normal_distribution<double> g(0.0, 1.0);
    for (Index c = 0; c < spec.k; ++c) {
      for (Index i = 0; i < spec.n; ++i) out.A(i, c) = static_cast<T>(std::max(0.0, g(rng)));
    }
  }

  std::exponential_distribution<double> ex(1.0);
  out.R.assign(static_cast<std::size_t>(spec.m), Matrix<T>(spec.k, spec.k));
  for (auto& r : out.R) {
    for (Index b = 0; b < spec.k; ++b) {
      for (Index a = 0; a < spec.k; ++a) r(a, b) = static_cast<T>(ex(rng));
    }
  }

  std::uniform_real_distribution<double> noise(-1.0, 1.0);
  std::vector<Matrix<T>> x0(static_cast<std::size_t>(spec.m));
  std::vector<Matrix<T>> x(static_cast<std::size_t>(spec.m));
  for (Index t = 0; t < spec.m; ++t) {
    const auto st = static_cast<std::size_t>(t);
    x0[st] = out.A * out.R[st] * out.A.transpose();
    x0[st] = x0[st].cwiseMax(T(0));
    x[st] = x0[st];
    if (spec.noise > 0.0) {
      for (Index j = 0; j < spec.n; ++j) {
        for (Index i = 0; i < spec.n; ++i) {
          x[st](i, j) = static_cast<T>(x0[st](i, j) * (1.0 + spec.noise * noise(rng)));
        }
      }
    }
  }
  out.X0 = RelTensor<T>(std::move(x0));
  out.X = RelTensor<T>(std::move(x));
  return out;
}

/// Keeps the round(density * n^2 * m) largest entries of the whole tensor
/// (ties broken by slice, row, column) and never keeps zeros.
template <typename T>
SparseRelTensor<T> sparsify(const RelTensor<T>& x, double density) {
  if (!(density > 0.0) || density > 1.0) throw ArgumentError("density must lie in (0, 1]");
  const Index n = x.n();
  const Index m = x.m();
  const auto total = static_cast<std::uint64_t>(n) * static_cast<std::uint64_t>(n) * static_cast<std::uint64_t>(m);
  const auto target = static_cast<std::uint64_t>(std::llround(density * static_cast<double>(total)));

  struct Cell {
    T v;
    Index t, i, j;
  };
  std::vector<Cell> cells;
  for (Index t = 0; t < m; ++t) {
    for (Index j = 0; j < n; ++j) {
      for (Index i = 0; i < n; ++i) {
        const T v = x.slice(t)(i, j);
        if (v > T(0)) cells.push_back({v, t, i, j});
      }
    }
  }
  const auto keep = static_cast<std::size_t>(std::min<std::uint64_t>(target, cells.size()));
  const auto before = [](const Cell& a, const Cell& b) {
    if (a.v != b.v) return a.v > b.v;
    return std::tie(a.t, a.i, a.j) < std::tie(b.t, b.i, b.j);
  };
  std::partial_sort(cells.begin(), cells.begin() + static_cast<std::ptrdiff_t>(keep), cells.end(), before);

  std::vector<std::vector<Eigen::Triplet<T, std::int64_t>>> trip(static_cast<std::size_t>(m));
  for (std::size_t p = 0; p < keep; ++p) {
    trip[static_cast<std::size_t>(cells[p].t)].emplace_back(cells[p].i, cells[p].j, cells[p].v);
  }
  std::vector<CsrMatrix<T>> slices;
  for (auto& tr : trip) {
    CsrMatrix<T> s(n, n);
    s.setFromTriplets(tr.begin(), tr.end());
    s.makeCompressed();
    slices.push_back(std::move(s));
  }
  return SparseRelTensor<T>(std::move(slices));
}

/// Tensor shapes used in published correctness studies, by "NxNxM" name.
inline std::optional<SynthSpec> synth_preset(std::string_view name, Index k, std::uint64_t seed) {
  struct Shape {
    std::string_view name;
    Index n, m;
  };
  static constexpr Shape shapes[] = {{"64x64x128", 64, 128},   {"128x128x32", 128, 32},  {"512x512x10", 512, 10},
                                     {"1024x1024x20", 1024, 20}, {"2056x2056x25", 2056, 25}, {"128x128x128", 128, 128}};
  for (const auto& s : shapes) {
    if (s.name == name) {
      SynthSpec spec;
      spec.n = s.n;
      spec.m = s.m;
      spec.k = k;
      spec.seed = seed;
      return spec;
    }
  }
  return std::nullopt;
}

}  // namespace rescalk

#pragma once

// Independent reference implementations used by the tests. They share no
// code with the library beyond the storage types.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "rescalk/tensor.hpp"
#include "rescalk/types.hpp"

namespace oracle {

using rescalk::Index;
using Mat = rescalk::Matrix<double>;

// Element-by-element sum of squares.
template <typename X>
double fro_norm(const X& x) {
  double acc = 0.0;
  for (Index t = 0; t < x.m(); ++t) {
    const Mat s = Mat(x.slice(t));
    for (Index i = 0; i < s.rows(); ++i) {
      for (Index j = 0; j < s.cols(); ++j) acc += s(i, j) * s(i, j);
    }
  }
  return std::sqrt(acc);
}

// Reconstruct every slice with triple loops and sum squared differences.
inline double objective(const std::vector<Mat>& x, const Mat& a, const std::vector<Mat>& r) {
  const Index n = a.rows();
  const Index k = a.cols();
  double acc = 0.0;
  for (std::size_t t = 0; t < x.size(); ++t) {
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < n; ++j) {
        double v = 0.0;
        for (Index p = 0; p < k; ++p) {
          for (Index q = 0; q < k; ++q) v += a(i, p) * r[t](p, q) * a(j, q);
        }
        const double d = x[t](i, j) - v;
        acc += d * d;
      }
    }
  }
  return acc;
}

template <typename X>
std::vector<Mat> slices(const X& x) {
  std::vector<Mat> out;
  for (Index t = 0; t < x.m(); ++t) out.push_back(Mat(x.slice(t)).template cast<double>());
  return out;
}

// Exhaustive assignment over all k! permutations.
inline double brute_force_assignment(const Mat& cost, bool maximize) {
  const Index k = cost.rows();
  std::vector<Index> perm(static_cast<std::size_t>(k));
  std::iota(perm.begin(), perm.end(), 0);
  double best = maximize ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (Index i = 0; i < k; ++i) s += cost(i, perm[static_cast<std::size_t>(i)]);
    best = maximize ? std::max(best, s) : std::min(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

struct Silhouette {
  double s_min = 0.0;
  double s_avg = 0.0;
};

inline double cosine_distance(const Mat& u, const Mat& v) {
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (Index i = 0; i < u.rows(); ++i) {
    dot += u(i, 0) * v(i, 0);
    nu += u(i, 0) * u(i, 0);
    nv += v(i, 0) * v(i, 0);
  }
  if (nu == 0.0 || nv == 0.0) return 1.0;
  return 1.0 - dot / (std::sqrt(nu) * std::sqrt(nv));
}

// Direct double loop over points. members[q] is n x k; cluster c holds
// column c of every member.
inline Silhouette silhouette(const std::vector<Mat>& members) {
  const Index r = static_cast<Index>(members.size());
  const Index k = members.front().cols();
  Silhouette out;
  double sum = 0.0;
  double mn = std::numeric_limits<double>::infinity();
  for (Index c = 0; c < k; ++c) {
    for (Index q = 0; q < r; ++q) {
      const Mat u = members[static_cast<std::size_t>(q)].col(c);
      double a = 0.0;
      for (Index q2 = 0; q2 < r; ++q2) a += cosine_distance(u, members[static_cast<std::size_t>(q2)].col(c));
      a /= static_cast<double>(r);
      double b = std::numeric_limits<double>::infinity();
      for (Index c2 = 0; c2 < k; ++c2) {
        if (c2 == c) continue;
        double d = 0.0;
        for (Index q2 = 0; q2 < r; ++q2) d += cosine_distance(u, members[static_cast<std::size_t>(q2)].col(c2));
        b = std::min(b, d / static_cast<double>(r));
      }
      const double m = std::max(a, b);
      const double s = m == 0.0 ? 0.0 : (b - a) / m;
      sum += s;
      mn = std::min(mn, s);
    }
  }
  out.s_min = mn;
  out.s_avg = sum / static_cast<double>(r * k);
  return out;
}

// Leading left singular vector of [X_1 .. X_m | X_1^T .. X_m^T] by power
// iteration on M M^T applied implicitly.
inline Mat leading_left_singular(const std::vector<Mat>& x, int iters = 2000) {
  const Index n = x.front().rows();
  Mat v = Mat::Ones(n, 1);
  for (int it = 0; it < iters; ++it) {
    Mat w = Mat::Zero(n, 1);
    for (const auto& s : x) w += s * (s.transpose() * v) + s.transpose() * (s * v);
    v = w / w.norm();
  }
  return v;
}

// Scratch directory removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    static std::mt19937_64 rng(std::random_device{}());
    path = std::filesystem::temp_directory_path() / ("rescalk_" + tag + "_" + std::to_string(rng()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::filesystem::path operator/(const std::string& s) const { return path / s; }
};

}  // namespace oracle

#pragma once

// Linear sum assignment on a square matrix (Hungarian method with row
// potentials, O(k^3)).

#include <cmath>
#include <limits>
#include <vector>

#include "rescalk/error.hpp"
#include "rescalk/types.hpp"

namespace rescalk {

enum class LsaMode { minimize, maximize };

struct Assignment {
  // col_of_row[i] is the column assigned to row i.
  std::vector<Index> col_of_row;
  double total = 0.0;

  bool is_identity() const {
    for (std::size_t i = 0; i < col_of_row.size(); ++i) {
      if (col_of_row[i] != static_cast<Index>(i)) return false;
    }
    return true;
  }
};

template <typename Derived>
Assignment lsa(const Eigen::MatrixBase<Derived>& cost_in, LsaMode mode = LsaMode::minimize) {
  const Index k = cost_in.rows();
  if (cost_in.cols() != k) throw ShapeError("lsa requires a square matrix");
  if (!cost_in.allFinite()) throw ArgumentError("lsa cost matrix has non-finite entries");
  Matrix<double> cost = cost_in.template cast<double>();
  if (mode == LsaMode::maximize) cost = -cost;

  Assignment out;
  out.col_of_row.assign(static_cast<std::size_t>(k), 0);
  if (k == 0) return out;

  // 1-based arrays; index 0 is the virtual start column.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(k + 1), 0.0);
  std::vector<double> v(static_cast<std::size_t>(k + 1), 0.0);
  std::vector<Index> row_of_col(static_cast<std::size_t>(k + 1), 0);
  std::vector<Index> way(static_cast<std::size_t>(k + 1), 0);

  for (Index i = 1; i <= k; ++i) {
    row_of_col[0] = i;
    Index j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(k + 1), inf);
    std::vector<bool> used(static_cast<std::size_t>(k + 1), false);
    do {
      used[static_cast<std::size_t>(j0)] = true;
      const Index i0 = row_of_col[static_cast<std::size_t>(j0)];
      double delta = inf;
      Index j1 = 0;
      for (Index j = 1; j <= k; ++j) {
        const auto sj = static_cast<std::size_t>(j);
        if (used[sj]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[sj];
        if (cur < minv[sj]) {
          minv[sj] = cur;
          way[sj] = j0;
        }
        if (minv[sj] < delta) {
          delta = minv[sj];
          j1 = j;
        }
      }
      for (Index j = 0; j <= k; ++j) {
        const auto sj = static_cast<std::size_t>(j);
        if (used[sj]) {
          u[static_cast<std::size_t>(row_of_col[sj])] += delta;
          v[sj] -= delta;
        } else {
          minv[sj] -= delta;
        }
      }
      j0 = j1;
    } while (row_of_col[static_cast<std::size_t>(j0)] != 0);
    do {
      const Index j1 = way[static_cast<std::size_t>(j0)];
      row_of_col[static_cast<std::size_t>(j0)] = row_of_col[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }

  for (Index j = 1; j <= k; ++j) {
    out.col_of_row[static_cast<std::size_t>(row_of_col[static_cast<std::size_t>(j)] - 1)] = j - 1;
  }
  for (Index i = 0; i < k; ++i) {
    out.total += static_cast<double>(cost_in(i, out.col_of_row[static_cast<std::size_t>(i)]));
  }
  return out;
}

}  // namespace rescalk

#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "rescalk/error.hpp"
#include "rescalk/types.hpp"

namespace rescalk {

/// Dense relational tensor: m frontal slices, each an n x n non-negative
/// matrix. Slice t holds relation t; entry (i, j) links entity i to j.
template <typename T = double>
class RelTensor {
 public:
  using Scalar = T;
  using Slice = Matrix<T>;

  RelTensor() = default;

  RelTensor(Index n, Index m) : n_(n), slices_(static_cast<std::size_t>(m), Slice::Zero(n, n)) {
    if (n <= 0 || m <= 0) throw ShapeError("tensor dimensions must be positive");
  }

  explicit RelTensor(std::vector<Slice> slices) : slices_(std::move(slices)) {
    if (slices_.empty()) throw ShapeError("tensor needs at least one slice");
    n_ = slices_.front().rows();
    if (n_ <= 0) throw ShapeError("tensor dimensions must be positive");
    validate();
  }

  Index n() const { return n_; }
  Index m() const { return static_cast<Index>(slices_.size()); }

  const Slice& slice(Index t) const { return slices_[static_cast<std::size_t>(t)]; }
  Slice& slice(Index t) { return slices_[static_cast<std::size_t>(t)]; }
  const std::vector<Slice>& slices() const { return slices_; }

  // Checks shapes, sign and finiteness; throws DataError / ShapeError.
  void validate() const {
    for (const auto& s : slices_) {
      if (s.rows() != n_ || s.cols() != n_) throw ShapeError("all slices must be n x n");
      if (!s.allFinite()) throw DataError("non-finite value");
      if ((s.array() < T(0)).any()) throw DataError("negative value");
    }
  }

  friend bool operator==(const RelTensor& a, const RelTensor& b) {
    if (a.n_ != b.n_ || a.m() != b.m()) return false;
    for (Index t = 0; t < a.m(); ++t) {
      if (a.slice(t) != b.slice(t)) return false;
    }
    return true;
  }

 private:
  Index n_ = 0;
  std::vector<Slice> slices_;
};

/// Sparse relational tensor with CSR slices. Stored values are strictly
/// positive and column indices strictly increase within each row.
template <typename T = double>
class SparseRelTensor {
 public:
  using Scalar = T;
  using Slice = CsrMatrix<T>;

  SparseRelTensor() = default;

  explicit SparseRelTensor(std::vector<Slice> slices) : slices_(std::move(slices)) {
    if (slices_.empty()) throw ShapeError("tensor needs at least one slice");
    n_ = slices_.front().rows();
    if (n_ <= 0) throw ShapeError("tensor dimensions must be positive");
    for (auto& s : slices_) s.makeCompressed();
    validate();
  }

  Index n() const { return n_; }
  Index m() const { return static_cast<Index>(slices_.size()); }
  const Slice& slice(Index t) const { return slices_[static_cast<std::size_t>(t)]; }
  const std::vector<Slice>& slices() const { return slices_; }

  Index nnz() const {
    Index total = 0;
    for (const auto& s : slices_) total += s.nonZeros();
    return total;
  }

  double density() const {
    return static_cast<double>(nnz()) /
           (static_cast<double>(n_) * static_cast<double>(n_) * static_cast<double>(m()));
  }

  void validate() const {
    for (const auto& s : slices_) {
      if (s.rows() != n_ || s.cols() != n_) throw ShapeError("all slices must be n x n");
      const auto* outer = s.outerIndexPtr();
      const auto* inner = s.innerIndexPtr();
      const T* values = s.valuePtr();
      for (Index r = 0; r < n_; ++r) {
        for (auto p = outer[r]; p < outer[r + 1]; ++p) {
          if (p > outer[r] && inner[p] <= inner[p - 1]) {
            throw DataError("column indices must strictly increase within a row");
          }
          if (!std::isfinite(static_cast<double>(values[p]))) throw DataError("non-finite value");
          if (values[p] < T(0)) throw DataError("negative value");
          if (values[p] == T(0)) throw DataError("explicit zero stored in sparse tensor");
        }
      }
    }
  }

  friend bool operator==(const SparseRelTensor& a, const SparseRelTensor& b) {
    if (a.n_ != b.n_ || a.m() != b.m()) return false;
    for (Index t = 0; t < a.m(); ++t) {
      const auto& x = a.slice(t);
      const auto& y = b.slice(t);
      if (x.nonZeros() != y.nonZeros()) return false;
      if (!std::equal(x.outerIndexPtr(), x.outerIndexPtr() + x.outerSize() + 1, y.outerIndexPtr())) return false;
      if (!std::equal(x.innerIndexPtr(), x.innerIndexPtr() + x.nonZeros(), y.innerIndexPtr())) return false;
      if (!std::equal(x.valuePtr(), x.valuePtr() + x.nonZeros(), y.valuePtr())) return false;
    }
    return true;
  }

 private:
  Index n_ = 0;
  std::vector<Slice> slices_;
};

template <typename X>
inline constexpr bool is_sparse_tensor_v = false;
template <typename T>
inline constexpr bool is_sparse_tensor_v<SparseRelTensor<T>> = true;

template <typename X>
inline constexpr bool is_dense_tensor_v = false;
template <typename T>
inline constexpr bool is_dense_tensor_v<RelTensor<T>> = true;

template <typename X>
concept RelationalTensor = is_sparse_tensor_v<X> || is_dense_tensor_v<X>;

// Sum of squares of one slice, accumulated in double.
template <typename T>
double slice_sq_norm(const Matrix<T>& s) {
  return s.template cast<double>().squaredNorm();
}

template <typename T>
double slice_sq_norm(const CsrMatrix<T>& s) {
  double acc = 0.0;
  const T* v = s.valuePtr();
  for (Index p = 0; p < s.nonZeros(); ++p) acc += static_cast<double>(v[p]) * static_cast<double>(v[p]);
  return acc;
}

template <RelationalTensor X>
double fro_norm_sq(const X& x) {
  double acc = 0.0;
  for (Index t = 0; t < x.m(); ++t) acc += slice_sq_norm(x.slice(t));
  return acc;
}

/// Frobenius norm over every element of the tensor.
template <RelationalTensor X>
double fro_norm(const X& x) {
  return std::sqrt(fro_norm_sq(x));
}

template <typename T>
SparseRelTensor<T> to_sparse(const RelTensor<T>& x) {
  std::vector<CsrMatrix<T>> slices;
  slices.reserve(static_cast<std::size_t>(x.m()));
  for (Index t = 0; t < x.m(); ++t) {
    CsrMatrix<T> s = x.slice(t).sparseView(T(0), T(0));
    s.prune([](Index, Index, const T& v) { return v != T(0); });
    s.makeCompressed();
    slices.push_back(std::move(s));
  }
  return SparseRelTensor<T>(std::move(slices));
}

template <typename T>
RelTensor<T> to_dense(const SparseRelTensor<T>& x) {
  std::vector<Matrix<T>> slices;
  slices.reserve(static_cast<std::size_t>(x.m()));
  for (Index t = 0; t < x.m(); ++t) slices.emplace_back(Matrix<T>(x.slice(t)));
  return RelTensor<T>(std::move(slices));
}

/// Grid coordinates of a rank: i selects the block row, j the block column.
struct GridCoords {
  int row = 0;
  int col = 0;
  friend bool operator==(const GridCoords&, const GridCoords&) = default;
};

/// One rank's share of a partitioned tensor. Every block has the same
/// block_n x block_n x m shape; cells beyond the global n are zero.
template <RelationalTensor X>
struct TensorBlock {
  GridCoords owner;
  int grid_dim = 1;
  Index global_n = 0;
  Index block_n = 0;
  Index row_offset = 0;
  Index col_offset = 0;
  X local;

  Index m() const { return local.m(); }
  // Rows of the block that map to real (unpadded) entities.
  Index valid_rows() const { return std::clamp<Index>(global_n - row_offset, 0, block_n); }
  Index valid_cols() const { return std::clamp<Index>(global_n - col_offset, 0, block_n); }
};

inline Index block_size(Index n, int grid_dim) {
  return (n + grid_dim - 1) / grid_dim;
}

namespace detail {

template <typename T>
RelTensor<T> extract_block(const RelTensor<T>& x, Index r0, Index c0, Index bn) {
  RelTensor<T> out(bn, x.m());
  const Index n = x.n();
  const Index rows = std::clamp<Index>(n - r0, 0, bn);
  const Index cols = std::clamp<Index>(n - c0, 0, bn);
  for (Index t = 0; t < x.m(); ++t) {
    if (rows > 0 && cols > 0) out.slice(t).topLeftCorner(rows, cols) = x.slice(t).block(r0, c0, rows, cols);
  }
  return out;
}

template <typename T>
SparseRelTensor<T> extract_block(const SparseRelTensor<T>& x, Index r0, Index c0, Index bn) {
  std::vector<CsrMatrix<T>> slices;
  for (Index t = 0; t < x.m(); ++t) {
    const auto& s = x.slice(t);
    std::vector<Eigen::Triplet<T, std::int64_t>> trip;
    const Index r_end = std::min(x.n(), r0 + bn);
    for (Index r = r0; r < r_end; ++r) {
      for (typename CsrMatrix<T>::InnerIterator it(s, r); it; ++it) {
        if (it.col() >= c0 && it.col() < c0 + bn) trip.emplace_back(r - r0, it.col() - c0, it.value());
      }
    }
    CsrMatrix<T> b(bn, bn);
    b.setFromTriplets(trip.begin(), trip.end());
    b.makeCompressed();
    slices.push_back(std::move(b));
  }
  return SparseRelTensor<T>(std::move(slices));
}

}  // namespace detail

/// Splits x into grid_dim x grid_dim equally shaped blocks, zero-padding the
/// high rows and columns when grid_dim does not divide n. Blocks are
/// returned in row-major grid order: index i * grid_dim + j.
template <RelationalTensor X>
std::vector<TensorBlock<X>> partition(const X& x, int grid_dim) {
  if (grid_dim < 1) throw ArgumentError("grid dimension must be >= 1");
  const Index bn = block_size(x.n(), grid_dim);
  std::vector<TensorBlock<X>> blocks;
  blocks.reserve(static_cast<std::size_t>(grid_dim) * static_cast<std::size_t>(grid_dim));
  for (int i = 0; i < grid_dim; ++i) {
    for (int j = 0; j < grid_dim; ++j) {
      TensorBlock<X> b;
      b.owner = {i, j};
      b.grid_dim = grid_dim;
      b.global_n = x.n();
      b.block_n = bn;
      b.row_offset = i * bn;
      b.col_offset = j * bn;
      b.local = detail::extract_block(x, b.row_offset, b.col_offset, bn);
      blocks.push_back(std::move(b));
    }
  }
  return blocks;
}

/// Inverse of partition: stitches blocks back together and trims padding.
template <typename T>
RelTensor<T> reassemble(const std::vector<TensorBlock<RelTensor<T>>>& blocks) {
  if (blocks.empty()) throw ArgumentError("no blocks to reassemble");
  const Index n = blocks.front().global_n;
  RelTensor<T> out(n, blocks.front().m());
  for (const auto& b : blocks) {
    const Index rows = b.valid_rows();
    const Index cols = b.valid_cols();
    if (rows == 0 || cols == 0) continue;
    for (Index t = 0; t < out.m(); ++t) {
      out.slice(t).block(b.row_offset, b.col_offset, rows, cols) = b.local.slice(t).topLeftCorner(rows, cols);
    }
  }
  return out;
}

template <typename T>
SparseRelTensor<T> reassemble(const std::vector<TensorBlock<SparseRelTensor<T>>>& blocks) {
  if (blocks.empty()) throw ArgumentError("no blocks to reassemble");
  const Index n = blocks.front().global_n;
  const Index m = blocks.front().m();
  std::vector<std::vector<Eigen::Triplet<T, std::int64_t>>> trip(static_cast<std::size_t>(m));
  for (const auto& b : blocks) {
    for (Index t = 0; t < m; ++t) {
      const auto& s = b.local.slice(t);
      for (Index r = 0; r < s.outerSize(); ++r) {
        for (typename CsrMatrix<T>::InnerIterator it(s, r); it; ++it) {
          const Index gr = b.row_offset + r;
          const Index gc = b.col_offset + it.col();
          if (gr < n && gc < n) trip[static_cast<std::size_t>(t)].emplace_back(gr, gc, it.value());
        }
      }
    }
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

}  // namespace rescalk

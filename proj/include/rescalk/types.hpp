#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <cmath>
#include <cstdint>
#include <string>

#include "rescalk/error.hpp"

namespace rescalk {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// CSR storage: Eigen's row-major compressed layout.
template <typename T>
using CsrMatrix = Eigen::SparseMatrix<T, Eigen::RowMajor, std::int64_t>;

using Index = Eigen::Index;

template <typename T>
bool all_finite(const Matrix<T>& m) {
  return m.allFinite();
}

template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& m, const char* what) {
  if (!m.allFinite()) {
    throw NumericalError(std::string("non-finite value in ") + what);
  }
}

// Splitmix64 finalizer. Used for counter-based random streams so that
// random values depend only on global indices, never on how the data is
// partitioned across ranks.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

template <typename... Rest>
constexpr std::uint64_t hash_seed(std::uint64_t seed, Rest... rest) {
  std::uint64_t h = mix64(seed);
  ((h = mix64(h ^ static_cast<std::uint64_t>(rest))), ...);
  return h;
}

// Uniform double in [0, 1) from 53 high bits.
constexpr double unit_from_bits(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

}  // namespace rescalk

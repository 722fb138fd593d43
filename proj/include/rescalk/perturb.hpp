#pragma once

// Multiplicative resampling noise: every stored element x becomes u * x with
// u uniform on [1 - delta, 1 + delta]. The multiplier is a hash of
// (seed, q, t, global row, global column), so a block of a partitioned
// tensor is perturbed exactly like the same cells of the whole tensor.

#include <cstdint>
#include <utility>

#include "rescalk/error.hpp"
#include "rescalk/tensor.hpp"
#include "rescalk/types.hpp"

namespace rescalk {

struct PerturbConfig {
  double delta = 0.02;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(delta > 0.0) || !(delta < 1.0)) throw ArgumentError("perturbation delta must lie in (0, 1)");
  }
};

inline double perturb_factor(const PerturbConfig& cfg, std::uint64_t q, Index t, Index row, Index col) {
  const double u = unit_from_bits(hash_seed(cfg.seed, 0x9e57ULL, q, static_cast<std::uint64_t>(t),
                                            static_cast<std::uint64_t>(row), static_cast<std::uint64_t>(col)));
  return 1.0 - cfg.delta + 2.0 * cfg.delta * u;
}

namespace perturb_detail {

template <typename T>
RelTensor<T> apply(const RelTensor<T>& x, const PerturbConfig& cfg, std::uint64_t q, Index r0, Index c0) {
  RelTensor<T> out = x;
  for (Index t = 0; t < x.m(); ++t) {
    auto& s = out.slice(t);
    for (Index c = 0; c < s.cols(); ++c) {
      for (Index r = 0; r < s.rows(); ++r) {
        if (s(r, c) != T(0)) s(r, c) = static_cast<T>(s(r, c) * perturb_factor(cfg, q, t, r0 + r, c0 + c));
      }
    }
  }
  return out;
}

template <typename T>
SparseRelTensor<T> apply(const SparseRelTensor<T>& x, const PerturbConfig& cfg, std::uint64_t q, Index r0, Index c0) {
  std::vector<CsrMatrix<T>> slices = x.slices();
  for (Index t = 0; t < x.m(); ++t) {
    auto& s = slices[static_cast<std::size_t>(t)];
    for (Index r = 0; r < s.outerSize(); ++r) {
      for (typename CsrMatrix<T>::InnerIterator it(s, r); it; ++it) {
        it.valueRef() = static_cast<T>(it.value() * perturb_factor(cfg, q, t, r0 + r, c0 + it.col()));
      }
    }
  }
  return SparseRelTensor<T>(std::move(slices));
}

}  // namespace perturb_detail

/// Perturbation q of a whole tensor.
template <RelationalTensor X>
X perturb(const X& x, const PerturbConfig& cfg, std::uint64_t q) {
  cfg.validate();
  return perturb_detail::apply(x, cfg, q, 0, 0);
}

/// Perturbation q of one grid block. Purely local.
template <RelationalTensor X>
TensorBlock<X> perturb_block(const TensorBlock<X>& b, const PerturbConfig& cfg, std::uint64_t q) {
  cfg.validate();
  TensorBlock<X> out = b;
  out.local = perturb_detail::apply(b.local, cfg, q, b.row_offset, b.col_offset);
  return out;
}

}  // namespace rescalk

#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <string_view>

namespace rescalk {

// Timed phases of a distributed solve.
enum class Phase : std::size_t {
  gram_mul = 0,
  matrix_mul,
  matrix_mul_sparse,
  row_reduce,
  column_reduce,
  row_broadcast,
  column_broadcast,
  count_
};

inline constexpr std::size_t kPhaseCount = static_cast<std::size_t>(Phase::count_);

constexpr std::string_view phase_name(Phase p) {
  constexpr std::array<std::string_view, kPhaseCount> names = {
      "gram_mul", "matrix_mul", "matrix_mul_sparse", "row_reduce", "column_reduce", "row_broadcast",
      "column_broadcast"};
  return names[static_cast<std::size_t>(p)];
}

/// Multiply-add counts and phase wall times for one rank.
///
/// data_madds counts products that touch the relational tensor (dense
/// rows*inner*cols, sparse nnz*cols); factor_madds counts products among
/// the factors and their Gram matrices.
struct OpCounter {
  std::uint64_t data_madds = 0;
  std::uint64_t factor_madds = 0;
  std::array<double, kPhaseCount> seconds{};

  std::uint64_t total_madds() const { return data_madds + factor_madds; }

  void add_time(Phase p, double s) { seconds[static_cast<std::size_t>(p)] += s; }
  double time(Phase p) const { return seconds[static_cast<std::size_t>(p)]; }

  double comm_seconds() const {
    return time(Phase::row_reduce) + time(Phase::column_reduce) + time(Phase::row_broadcast) +
           time(Phase::column_broadcast);
  }

  OpCounter& operator+=(const OpCounter& o) {
    data_madds += o.data_madds;
    factor_madds += o.factor_madds;
    for (std::size_t i = 0; i < kPhaseCount; ++i) seconds[i] += o.seconds[i];
    return *this;
  }
};

// RAII phase timer; a null counter disables it.
class PhaseScope {
 public:
  PhaseScope(OpCounter* c, Phase p) : counter_(c), phase_(p) {
    if (counter_) start_ = std::chrono::steady_clock::now();
  }
  ~PhaseScope() {
    if (counter_) {
      counter_->add_time(phase_, std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count());
    }
  }
  PhaseScope(const PhaseScope&) = delete;
  PhaseScope& operator=(const PhaseScope&) = delete;

 private:
  OpCounter* counter_;
  Phase phase_;
  std::chrono::steady_clock::time_point start_;
};

}  // namespace rescalk

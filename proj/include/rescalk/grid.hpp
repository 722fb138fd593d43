#pragma once

// In-process sqrt(p) x sqrt(p) process grid.
//
// Each rank runs on its own thread. Collectives rendezvous through a shared
// router: every participant deposits a pointer to its buffer, all of them
// read the deposited buffers in rank-ascending order, and a second barrier
// keeps the buffers alive until everyone has finished reading. Sums are
// therefore evaluated in the same order on every rank and the results are
// bit-identical across the communicator.

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <cstring>
#include <exception>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <type_traits>
#include <typeinfo>
#include <utility>
#include <vector>

#include "rescalk/error.hpp"
#include "rescalk/instrument.hpp"
#include "rescalk/kernels.hpp"
#include "rescalk/tensor.hpp"
#include "rescalk/types.hpp"

namespace rescalk {

// row: ranks sharing block row i. col: ranks sharing block column j.
enum class Axis : std::size_t { row = 0, col = 1, world = 2 };
enum class CollectiveKind : std::size_t { all_reduce = 0, broadcast = 1 };

constexpr const char* axis_name(Axis a) {
  switch (a) {
    case Axis::row: return "row";
    case Axis::col: return "col";
    case Axis::world: return "world";
  }
  return "?";
}

constexpr const char* kind_name(CollectiveKind k) {
  return k == CollectiveKind::all_reduce ? "all_reduce" : "broadcast";
}

/// Per-rank collective counters. Collectives over a single-rank
/// communicator move no data and are not recorded.
struct CollectiveStats {
  struct Counter {
    std::uint64_t calls = 0;
    std::uint64_t words = 0;
    friend bool operator==(const Counter&, const Counter&) = default;
  };

  std::array<std::array<Counter, 3>, 2> counters{};

  const Counter& get(CollectiveKind k, Axis a) const {
    return counters[static_cast<std::size_t>(k)][static_cast<std::size_t>(a)];
  }
  void record(CollectiveKind k, Axis a, std::uint64_t words) {
    auto& c = counters[static_cast<std::size_t>(k)][static_cast<std::size_t>(a)];
    ++c.calls;
    c.words += words;
  }

  std::uint64_t words(CollectiveKind k, Axis a) const { return get(k, a).words; }

  // Words moved by the row and column collectives (world-axis bookkeeping
  // such as error evaluation is excluded).
  std::uint64_t grid_words() const {
    std::uint64_t w = 0;
    for (auto k : {CollectiveKind::all_reduce, CollectiveKind::broadcast}) {
      w += get(k, Axis::row).words + get(k, Axis::col).words;
    }
    return w;
  }

  CollectiveStats operator-(const CollectiveStats& o) const {
    CollectiveStats d;
    for (std::size_t k = 0; k < 2; ++k) {
      for (std::size_t a = 0; a < 3; ++a) {
        d.counters[k][a].calls = counters[k][a].calls - o.counters[k][a].calls;
        d.counters[k][a].words = counters[k][a].words - o.counters[k][a].words;
      }
    }
    return d;
  }

  friend bool operator==(const CollectiveStats&, const CollectiveStats&) = default;
};

struct GridOptions {
  std::chrono::milliseconds timeout{10000};
};

/// Thrown on ranks that were waiting in a collective when another rank failed.
class GridAborted : public CollectiveError {
 public:
  GridAborted() : CollectiveError("grid aborted after a failure on another rank") {}
};

/// A failure on one rank, rethrown by spawn_grid on the calling thread.
class RankFailure : public Error {
 public:
  RankFailure(int rank, std::exception_ptr cause, const std::string& what)
      : Error("rank " + std::to_string(rank) + ": " + what), rank_(rank), cause_(std::move(cause)) {}
  int rank() const { return rank_; }
  [[noreturn]] void rethrow_cause() const { std::rethrow_exception(cause_); }

 private:
  int rank_;
  std::exception_ptr cause_;
};

namespace grid_detail {

struct OpDesc {
  CollectiveKind kind = CollectiveKind::all_reduce;
  Index rows = 0;
  Index cols = 0;
  std::size_t type_hash = 0;
  int root = -1;

  friend bool operator==(const OpDesc&, const OpDesc&) = default;

  std::string str(Axis axis, int comm_index) const {
    std::ostringstream os;
    os << kind_name(kind) << "(" << axis_name(axis) << "#" << comm_index << ", " << rows << "x" << cols;
    if (kind == CollectiveKind::broadcast) os << ", root " << root;
    os << ")";
    return os.str();
  }
};

struct Slot {
  std::mutex mu;
  std::condition_variable cv;
  std::uint64_t generation = 0;
  int arrived = 0;
  int departed = 0;
  std::vector<const void*> buffers;
  std::vector<OpDesc> descs;
  std::vector<bool> present;
};

}  // namespace grid_detail

/// Shared rendezvous state for one grid. Owned by spawn_grid.
class Router {
 public:
  Router(int grid_dim, GridOptions opt) : dim_(grid_dim), opt_(opt), pending_(static_cast<std::size_t>(dim_ * dim_)) {
    const auto make = [&](int count, int size) {
      std::vector<std::unique_ptr<grid_detail::Slot>> v;
      for (int c = 0; c < count; ++c) {
        auto s = std::make_unique<grid_detail::Slot>();
        s->buffers.assign(static_cast<std::size_t>(size), nullptr);
        s->descs.assign(static_cast<std::size_t>(size), {});
        s->present.assign(static_cast<std::size_t>(size), false);
        v.push_back(std::move(s));
      }
      return v;
    };
    slots_[0] = make(dim_, dim_);
    slots_[1] = make(dim_, dim_);
    slots_[2] = make(1, dim_ * dim_);
  }

  int grid_dim() const { return dim_; }

  void abort() {
    aborted_.store(true);
    for (auto& axis : slots_) {
      for (auto& s : axis) {
        std::lock_guard lk(s->mu);
        s->cv.notify_all();
      }
    }
  }
  bool aborted() const { return aborted_.load(); }

  // Runs one collective. `body` receives the deposited buffers in
  // comm-local rank order once every participant has arrived.
  template <typename Body>
  void rendezvous(Axis axis, int comm_index, int comm_size, int local_rank, int world_rank,
                  const grid_detail::OpDesc& desc, const void* buffer, Body&& body) {
    auto& slot = *slots_[static_cast<std::size_t>(axis)][static_cast<std::size_t>(comm_index)];
    if (aborted()) throw GridAborted();
    set_pending(world_rank, desc.str(axis, comm_index));
    std::unique_lock lk(slot.mu);
    const std::uint64_t gen = slot.generation;
    const auto me = static_cast<std::size_t>(local_rank);
    slot.buffers[me] = buffer;
    slot.descs[me] = desc;
    slot.present[me] = true;
    ++slot.arrived;
    slot.cv.notify_all();
    try {
      wait(lk, slot, [&] { return slot.arrived == comm_size; }, axis, comm_index);
    } catch (...) {
      // Withdraw so that no later arrival reads this rank's buffer.
      slot.buffers[me] = nullptr;
      slot.present[me] = false;
      --slot.arrived;
      throw;
    }

    std::optional<std::string> mismatch;
    for (int r = 0; r < comm_size; ++r) {
      if (!(slot.descs[static_cast<std::size_t>(r)] == desc)) {
        std::ostringstream os;
        os << "collective mismatch on " << axis_name(axis) << " comm " << comm_index << ": local rank " << local_rank
           << " called " << desc.str(axis, comm_index) << ", local rank " << r << " called "
           << slot.descs[static_cast<std::size_t>(r)].str(axis, comm_index);
        mismatch = os.str();
        break;
      }
    }
    const std::vector<const void*> bufs = slot.buffers;
    lk.unlock();
    std::exception_ptr failure;
    if (!mismatch) {
      try {
        body(bufs);
      } catch (...) {
        failure = std::current_exception();
      }
    }
    lk.lock();
    ++slot.departed;
    if (slot.departed == comm_size) {
      slot.arrived = 0;
      slot.departed = 0;
      std::fill(slot.present.begin(), slot.present.end(), false);
      std::fill(slot.buffers.begin(), slot.buffers.end(), nullptr);
      ++slot.generation;
      slot.cv.notify_all();
    } else {
      // Every participant has arrived and only runs local work from here,
      // so this wait always ends. Leaving early would free a buffer that
      // peers may still be reading.
      slot.cv.wait(lk, [&] { return slot.generation != gen; });
    }
    lk.unlock();
    clear_pending(world_rank);
    if (mismatch) throw CollectiveError(*mismatch);
    if (failure) std::rethrow_exception(failure);
  }

 private:
  template <typename Pred>
  void wait(std::unique_lock<std::mutex>& lk, grid_detail::Slot& slot, Pred pred, Axis axis, int comm_index) {
    const auto deadline = std::chrono::steady_clock::now() + opt_.timeout;
    while (!pred()) {
      if (aborted()) throw GridAborted();
      if (std::chrono::steady_clock::now() >= deadline) throw CollectiveError(deadlock_report(axis, comm_index));
      slot.cv.wait_for(lk, std::chrono::milliseconds(20));
    }
  }

  std::string deadlock_report(Axis axis, int comm_index) {
    std::ostringstream os;
    os << "deadlock: collective on " << axis_name(axis) << " comm " << comm_index << " timed out; pending operations:";
    std::lock_guard lk(pending_mu_);
    for (std::size_t r = 0; r < pending_.size(); ++r) {
      os << " [rank " << r << ": " << (pending_[r].empty() ? "none" : pending_[r]) << "]";
    }
    return os.str();
  }

  void set_pending(int rank, std::string s) {
    std::lock_guard lk(pending_mu_);
    pending_[static_cast<std::size_t>(rank)] = std::move(s);
  }
  void clear_pending(int rank) {
    std::lock_guard lk(pending_mu_);
    pending_[static_cast<std::size_t>(rank)].clear();
  }

  int dim_;
  GridOptions opt_;
  std::array<std::vector<std::unique_ptr<grid_detail::Slot>>, 3> slots_;
  std::atomic<bool> aborted_{false};
  std::mutex pending_mu_;
  std::vector<std::string> pending_;
};

/// Rank identity and collectives for one worker of the grid.
class GridContext {
 public:
  GridContext(Router& router, int rank) : router_(&router), rank_(rank) {
    const int g = router.grid_dim();
    coords_ = {rank / g, rank % g};
  }

  int p() const { return grid_dim() * grid_dim(); }
  int grid_dim() const { return router_->grid_dim(); }
  int rank() const { return rank_; }
  GridCoords coords() const { return coords_; }
  bool is_diagonal() const { return coords_.row == coords_.col; }

  int comm_size(Axis a) const { return a == Axis::world ? p() : grid_dim(); }
  // This rank's position inside the communicator.
  int comm_rank(Axis a) const {
    switch (a) {
      case Axis::row: return coords_.col;
      case Axis::col: return coords_.row;
      case Axis::world: return rank_;
    }
    return 0;
  }
  int comm_index(Axis a) const {
    switch (a) {
      case Axis::row: return coords_.row;
      case Axis::col: return coords_.col;
      case Axis::world: return 0;
    }
    return 0;
  }

  CollectiveStats stats;
  OpCounter ops;

  /// Elementwise sum over the communicator, accumulated in comm-rank order.
  template <typename T>
  Matrix<T> all_reduce_sum(const Matrix<T>& local, Axis axis) {
    PhaseScope scope(comm_phase(axis, CollectiveKind::all_reduce), reduce_phase(axis));
    const int size = comm_size(axis);
    if (size == 1) return local;
    Matrix<T> out;
    grid_detail::OpDesc d{CollectiveKind::all_reduce, local.rows(), local.cols(), typeid(T).hash_code(), -1};
    router_->rendezvous(axis, comm_index(axis), size, comm_rank(axis), rank_, d, &local,
                        [&](const std::vector<const void*>& bufs) {
                          out = *static_cast<const Matrix<T>*>(bufs[0]);
                          for (std::size_t r = 1; r < bufs.size(); ++r) out += *static_cast<const Matrix<T>*>(bufs[r]);
                        });
    stats.record(CollectiveKind::all_reduce, axis, static_cast<std::uint64_t>(local.size()));
    return out;
  }

  double all_reduce_sum(double local, Axis axis) {
    Matrix<double> m(1, 1);
    m(0, 0) = local;
    return all_reduce_sum(m, axis)(0, 0);
  }

  /// Copies root's buffer to every rank in the communicator. `root` is a
  /// communicator-local rank. Non-root ranks must pass a buffer of the same
  /// shape; its contents are ignored.
  template <typename T>
  Matrix<T> broadcast(const Matrix<T>& buf, int root, Axis axis) {
    PhaseScope scope(comm_phase(axis, CollectiveKind::broadcast), broadcast_phase(axis));
    const int size = comm_size(axis);
    if (root < 0 || root >= size) throw ArgumentError("broadcast root out of range");
    if (size == 1) return buf;
    Matrix<T> out;
    grid_detail::OpDesc d{CollectiveKind::broadcast, buf.rows(), buf.cols(), typeid(T).hash_code(), root};
    router_->rendezvous(axis, comm_index(axis), size, comm_rank(axis), rank_, d, &buf,
                        [&](const std::vector<const void*>& bufs) {
                          out = *static_cast<const Matrix<T>*>(bufs[static_cast<std::size_t>(root)]);
                        });
    stats.record(CollectiveKind::broadcast, axis, static_cast<std::uint64_t>(buf.size()));
    return out;
  }

 private:
  OpCounter* comm_phase(Axis axis, CollectiveKind) { return axis == Axis::world ? nullptr : &ops; }
  static Phase reduce_phase(Axis a) { return a == Axis::row ? Phase::row_reduce : Phase::column_reduce; }
  static Phase broadcast_phase(Axis a) { return a == Axis::row ? Phase::row_broadcast : Phase::column_broadcast; }

  Router* router_;
  int rank_;
  GridCoords coords_;
};

/// Local product (optionally with the left operand transposed) followed by
/// an all_reduce over `axis`.
template <typename T>
Matrix<T> dist_mm(GridContext& ctx, const Matrix<T>& a, const Matrix<T>& b, Axis axis, bool transpose_a = false) {
  if ((transpose_a ? a.rows() : a.cols()) != b.rows()) throw ShapeError("dist_mm: inner dimensions differ");
  const Matrix<T> local = transpose_a ? kernels::mul_at(a, b, &ctx.ops) : kernels::mul(a, b, &ctx.ops);
  return ctx.all_reduce_sum(local, axis);
}

/// Integer square root of p, or an error when p is not a perfect square.
inline int grid_dim_for(int p) {
  if (p < 1) throw ArgumentError("p must be >= 1");
  int g = static_cast<int>(std::lround(std::sqrt(static_cast<double>(p))));
  while (g * g > p) --g;
  while ((g + 1) * (g + 1) <= p) ++g;
  if (g * g != p) throw ArgumentError("p must be a perfect square, got " + std::to_string(p));
  return g;
}

/// Runs program(GridContext&) on p workers and returns the per-rank results
/// in rank order. A failure on any rank aborts the grid and is rethrown as
/// RankFailure.
template <typename F>
auto spawn_grid(int p, F&& program, GridOptions opt = {}) {
  using R = std::invoke_result_t<F&, GridContext&>;
  const int g = grid_dim_for(p);
  Router router(g, opt);

  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(p));
  std::vector<std::string> messages(static_cast<std::size_t>(p));
  std::vector<bool> aborted(static_cast<std::size_t>(p), false);
  constexpr bool is_void = std::is_void_v<R>;
  using Stored = std::conditional_t<is_void, char, std::optional<R>>;
  std::vector<Stored> results(static_cast<std::size_t>(p));

  auto run_rank = [&](int rank) {
    GridContext ctx(router, rank);
    try {
      if constexpr (is_void) {
        program(ctx);
      } else {
        results[static_cast<std::size_t>(rank)].emplace(program(ctx));
      }
    } catch (const GridAborted& e) {
      errors[static_cast<std::size_t>(rank)] = std::current_exception();
      messages[static_cast<std::size_t>(rank)] = e.what();
      aborted[static_cast<std::size_t>(rank)] = true;
      router.abort();
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(rank)] = std::current_exception();
      messages[static_cast<std::size_t>(rank)] = e.what();
      router.abort();
    } catch (...) {
      errors[static_cast<std::size_t>(rank)] = std::current_exception();
      messages[static_cast<std::size_t>(rank)] = "unknown exception";
      router.abort();
    }
  };

  if (p == 1) {
    run_rank(0);
  } else {
    std::vector<std::thread> workers;
    workers.reserve(static_cast<std::size_t>(p));
    for (int r = 0; r < p; ++r) workers.emplace_back(run_rank, r);
    for (auto& w : workers) w.join();
  }

  // Report the root cause in preference to ranks that were merely aborted.
  for (int pass = 0; pass < 2; ++pass) {
    for (int r = 0; r < p; ++r) {
      const auto i = static_cast<std::size_t>(r);
      if (errors[i] && (pass == 1 || !aborted[i])) throw RankFailure(r, errors[i], messages[i]);
    }
  }

  if constexpr (is_void) {
    return;
  } else {
    std::vector<R> out;
    out.reserve(static_cast<std::size_t>(p));
    for (auto& r : results) out.push_back(std::move(*r));
    return out;
  }
}

}  // namespace rescalk

#pragma once

// File formats
//
// Dense binary ("RSK1"), little-endian:
//   magic "RSK1" | version u32 = 1 | dtype u8 (0 = f32, 1 = f64) | n u64 | m u64
//   followed by m slices of n x n values, each slice row-major.
//
// Dense matrix ("RSM1"), used for factor matrices such as A (n x k):
//   magic "RSM1" | version u32 = 1 | dtype u8 | rows u64 | cols u64 | row-major values.
//
// Sparse text ("%rescalk-coo"):
//   %rescalk-coo n m nnz
//   t i j value          (0-based, one nonzero per line)

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <variant>
#include <vector>

#include "rescalk/error.hpp"
#include "rescalk/tensor.hpp"

namespace rescalk {

enum class TensorFormat { dense_binary, sparse_coo };

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>, "f32 or f64 only");
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

namespace io_detail {

inline constexpr std::uint32_t kVersion = 1;

template <typename U>
void put_le(std::string& out, U value) {
  static_assert(std::is_trivially_copyable_v<U>);
  std::array<char, sizeof(U)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.append(bytes.data(), bytes.size());
}

template <typename U>
U get_le(const char* p) {
  std::array<char, sizeof(U)> bytes;
  std::memcpy(bytes.data(), p, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  U v;
  std::memcpy(&v, bytes.data(), sizeof(U));
  return v;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failure on " + path.string());
  return std::move(ss).str();
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw IoError("write failure on " + path.string());
}

struct Header {
  DType dtype;
  std::uint64_t a;
  std::uint64_t b;
};

constexpr std::size_t kHeaderBytes = 4 + 4 + 1 + 8 + 8;

inline std::string header_bytes(std::string_view magic, DType dtype, std::uint64_t a, std::uint64_t b) {
  std::string out(magic);
  put_le<std::uint32_t>(out, kVersion);
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(dtype));
  put_le<std::uint64_t>(out, a);
  put_le<std::uint64_t>(out, b);
  return out;
}

inline Header parse_header(const std::string& bytes, std::string_view magic) {
  if (bytes.size() < kHeaderBytes) throw DataError("malformed header: file too short");
  if (std::string_view(bytes.data(), 4) != magic) throw DataError("malformed header: bad magic");
  const auto version = get_le<std::uint32_t>(bytes.data() + 4);
  if (version != kVersion) throw DataError("malformed header: unsupported version " + std::to_string(version));
  const auto dt = get_le<std::uint8_t>(bytes.data() + 8);
  if (dt > 1) throw DataError("malformed header: unknown dtype " + std::to_string(dt));
  return {static_cast<DType>(dt), get_le<std::uint64_t>(bytes.data() + 9), get_le<std::uint64_t>(bytes.data() + 17)};
}

template <typename T>
void append_values_row_major(std::string& out, const Matrix<T>& mat) {
  for (Index r = 0; r < mat.rows(); ++r) {
    for (Index c = 0; c < mat.cols(); ++c) put_le<T>(out, mat(r, c));
  }
}

// Reads rows x cols row-major values of the file dtype into a Matrix<T>.
template <typename T>
Matrix<T> read_values_row_major(const char* p, DType dt, Index rows, Index cols) {
  Matrix<T> mat(rows, cols);
  const std::size_t width = dt == DType::f32 ? 4 : 8;
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) {
      mat(r, c) = dt == DType::f32 ? static_cast<T>(get_le<float>(p)) : static_cast<T>(get_le<double>(p));
      p += width;
    }
  }
  return mat;
}

template <typename T>
std::string format_value(T v) {
  std::array<char, 64> buf;
  auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

}  // namespace io_detail

template <typename T>
void save_dense(const RelTensor<T>& x, const std::filesystem::path& path) {
  std::string out = io_detail::header_bytes("RSK1", dtype_of<T>(), static_cast<std::uint64_t>(x.n()),
                                            static_cast<std::uint64_t>(x.m()));
  out.reserve(out.size() + static_cast<std::size_t>(x.n() * x.n() * x.m()) * sizeof(T));
  for (Index t = 0; t < x.m(); ++t) io_detail::append_values_row_major(out, x.slice(t));
  io_detail::write_file(path, out);
}

template <typename T = double>
RelTensor<T> load_dense(const std::filesystem::path& path) {
  const std::string bytes = io_detail::read_file(path);
  const auto h = io_detail::parse_header(bytes, "RSK1");
  if (h.a == 0 || h.b == 0) throw DataError("malformed header: zero dimension");
  const std::size_t width = h.dtype == DType::f32 ? 4 : 8;
  const std::uint64_t expected = h.a * h.a * h.b * width;
  if (bytes.size() - io_detail::kHeaderBytes != expected) {
    throw DataError("dimension mismatch: header says " + std::to_string(h.a) + "x" + std::to_string(h.a) + "x" +
                    std::to_string(h.b) + " but payload has " +
                    std::to_string(bytes.size() - io_detail::kHeaderBytes) + " bytes");
  }
  const auto n = static_cast<Index>(h.a);
  std::vector<Matrix<T>> slices;
  const char* p = bytes.data() + io_detail::kHeaderBytes;
  for (std::uint64_t t = 0; t < h.b; ++t) {
    slices.push_back(io_detail::read_values_row_major<T>(p, h.dtype, n, n));
    p += static_cast<std::size_t>(n * n) * width;
  }
  return RelTensor<T>(std::move(slices));
}

template <typename T>
void save_matrix(const Matrix<T>& a, const std::filesystem::path& path) {
  std::string out = io_detail::header_bytes("RSM1", dtype_of<T>(), static_cast<std::uint64_t>(a.rows()),
                                            static_cast<std::uint64_t>(a.cols()));
  io_detail::append_values_row_major(out, a);
  io_detail::write_file(path, out);
}

template <typename T = double>
Matrix<T> load_matrix(const std::filesystem::path& path) {
  const std::string bytes = io_detail::read_file(path);
  const auto h = io_detail::parse_header(bytes, "RSM1");
  const std::size_t width = h.dtype == DType::f32 ? 4 : 8;
  if (bytes.size() - io_detail::kHeaderBytes != h.a * h.b * width) throw DataError("dimension mismatch in matrix file");
  return io_detail::read_values_row_major<T>(bytes.data() + io_detail::kHeaderBytes, h.dtype,
                                             static_cast<Index>(h.a), static_cast<Index>(h.b));
}

/// Writes the core tensor (m slices of k x k) in the RSK1 layout with n = k.
template <typename T>
void save_core(const std::vector<Matrix<T>>& r, const std::filesystem::path& path) {
  if (r.empty()) throw ShapeError("empty core tensor");
  const Index k = r.front().rows();
  std::string out = io_detail::header_bytes("RSK1", dtype_of<T>(), static_cast<std::uint64_t>(k),
                                            static_cast<std::uint64_t>(r.size()));
  for (const auto& s : r) {
    if (s.rows() != k || s.cols() != k) throw ShapeError("core slices must be k x k");
    io_detail::append_values_row_major(out, s);
  }
  io_detail::write_file(path, out);
}

template <typename T = double>
std::vector<Matrix<T>> load_core(const std::filesystem::path& path) {
  return load_dense<T>(path).slices();
}

template <typename T>
void save_sparse(const SparseRelTensor<T>& x, const std::filesystem::path& path) {
  std::string out = "%rescalk-coo " + std::to_string(x.n()) + " " + std::to_string(x.m()) + " " +
                    std::to_string(x.nnz()) + "\n";
  for (Index t = 0; t < x.m(); ++t) {
    const auto& s = x.slice(t);
    for (Index r = 0; r < s.outerSize(); ++r) {
      for (typename CsrMatrix<T>::InnerIterator it(s, r); it; ++it) {
        out += std::to_string(t) + " " + std::to_string(r) + " " + std::to_string(it.col()) + " " +
               io_detail::format_value(it.value()) + "\n";
      }
    }
  }
  io_detail::write_file(path, out);
}

template <typename T = double>
SparseRelTensor<T> load_sparse(const std::filesystem::path& path) {
  const std::string text = io_detail::read_file(path);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DataError("malformed header: empty file");
  std::istringstream hs(line);
  std::string tag;
  long long n = -1, m = -1, nnz = -1;
  hs >> tag >> n >> m >> nnz;
  if (tag != "%rescalk-coo" || hs.fail() || n <= 0 || m <= 0 || nnz < 0) {
    throw DataError("malformed header: expected '%rescalk-coo n m nnz'");
  }
  using Trip = Eigen::Triplet<T, std::int64_t>;
  std::vector<std::vector<std::tuple<long long, long long, T>>> entries(static_cast<std::size_t>(m));
  long long count = 0;
  long long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line.front() == '%') continue;
    const char* p = line.data();
    const char* end = line.data() + line.size();
    auto skip = [&] {
      while (p < end && (*p == ' ' || *p == '\t' || *p == '\r')) ++p;
    };
    long long idx[3];
    for (auto& v : idx) {
      skip();
      auto res = std::from_chars(p, end, v);
      if (res.ec != std::errc()) throw DataError("malformed entry on line " + std::to_string(lineno));
      p = res.ptr;
    }
    skip();
    double value = 0.0;
    auto res = std::from_chars(p, end, value);
    if (res.ec != std::errc()) throw DataError("malformed value on line " + std::to_string(lineno));
    p = res.ptr;
    skip();
    if (p != end) throw DataError("trailing characters on line " + std::to_string(lineno));
    const auto [t, i, j] = idx;
    if (t < 0 || t >= m || i < 0 || i >= n || j < 0 || j >= n) {
      throw DataError("index out of bounds on line " + std::to_string(lineno));
    }
    if (!std::isfinite(value)) throw DataError("non-finite value on line " + std::to_string(lineno));
    if (value < 0.0) throw DataError("negative value on line " + std::to_string(lineno));
    ++count;
    if (value == 0.0) continue;  // explicit zeros are dropped
    entries[static_cast<std::size_t>(t)].emplace_back(i, j, static_cast<T>(value));
  }
  if (count != nnz) {
    throw DataError("dimension mismatch: header declares " + std::to_string(nnz) + " entries, found " +
                    std::to_string(count));
  }
  std::vector<CsrMatrix<T>> slices;
  for (auto& e : entries) {
    std::sort(e.begin(), e.end(), [](const auto& a, const auto& b) {
      return std::tie(std::get<0>(a), std::get<1>(a)) < std::tie(std::get<0>(b), std::get<1>(b));
    });
    for (std::size_t q = 1; q < e.size(); ++q) {
      if (std::get<0>(e[q]) == std::get<0>(e[q - 1]) && std::get<1>(e[q]) == std::get<1>(e[q - 1])) {
        throw DataError("duplicate entry (" + std::to_string(std::get<0>(e[q])) + ", " +
                        std::to_string(std::get<1>(e[q])) + ")");
      }
    }
    std::vector<Trip> trip;
    trip.reserve(e.size());
    for (const auto& [i, j, v] : e) trip.emplace_back(i, j, v);
    CsrMatrix<T> s(n, n);
    s.setFromTriplets(trip.begin(), trip.end());
    s.makeCompressed();
    slices.push_back(std::move(s));
  }
  return SparseRelTensor<T>(std::move(slices));
}

template <typename T = double>
using AnyTensor = std::variant<RelTensor<T>, SparseRelTensor<T>>;

template <typename T = double>
AnyTensor<T> load_tensor(const std::filesystem::path& path, TensorFormat format) {
  if (format == TensorFormat::dense_binary) return load_dense<T>(path);
  return load_sparse<T>(path);
}

template <typename T>
void save_tensor(const RelTensor<T>& x, const std::filesystem::path& path, TensorFormat format) {
  if (format == TensorFormat::dense_binary) {
    save_dense(x, path);
  } else {
    save_sparse(to_sparse(x), path);
  }
}

template <typename T>
void save_tensor(const SparseRelTensor<T>& x, const std::filesystem::path& path, TensorFormat format) {
  if (format == TensorFormat::sparse_coo) {
    save_sparse(x, path);
  } else {
    save_dense(to_dense(x), path);
  }
}

// Format guess from the first bytes of the file.
inline TensorFormat sniff_format(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char head[4] = {};
  in.read(head, 4);
  if (in.gcount() == 4 && std::string_view(head, 4) == "RSK1") return TensorFormat::dense_binary;
  return TensorFormat::sparse_coo;
}

}  // namespace rescalk

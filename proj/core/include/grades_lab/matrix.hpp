#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "grades_lab/error.hpp"

namespace grades_lab {

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;
  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(Shape s);

// Dense row-major real matrix. A default-constructed Matrix is empty (0x0) and
// only serves as a placeholder; every sized matrix has rows, cols >= 1.
template <std::floating_point T>
class Matrix {
 public:
  using value_type = T;

  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols, T fill = T{0})
      : rows_(rows), cols_(cols), data_(checked_extent(rows, cols), fill) {}

  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != checked_extent(rows, cols)) {
      throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                       " does not match " + std::to_string(rows) + "x" +
                       std::to_string(cols));
    }
  }

  static Matrix from_rows(std::initializer_list<std::initializer_list<T>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<T> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("ragged initializer for Matrix");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Matrix(r, c, std::move(data));
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T{1};
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  Shape shape() const noexcept { return {rows_, cols_}; }

  T& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * cols_ + j]; }
  const T& operator()(std::size_t i, std::size_t j) const noexcept {
    return data_[i * cols_ + j];
  }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::span<T> row(std::size_t i) noexcept { return {data_.data() + i * cols_, cols_}; }
  std::span<const T> row(std::size_t i) const noexcept {
    return {data_.data() + i * cols_, cols_};
  }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  static std::size_t checked_extent(std::size_t rows, std::size_t cols) {
    if (rows == 0 || cols == 0) {
      throw ShapeError("matrix dimensions must be positive, got " + std::to_string(rows) +
                       "x" + std::to_string(cols));
    }
    return rows * cols;
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using MatrixF = Matrix<float>;
using MatrixD = Matrix<double>;

template <std::floating_point To, std::floating_point From>
Matrix<To> matrix_cast(const Matrix<From>& m) {
  if (m.empty()) return {};
  std::vector<To> out(m.values().begin(), m.values().end());
  return Matrix<To>(m.rows(), m.cols(), std::move(out));
}

namespace detail {
// Per-thread matmul FLOP tally, active only inside a FlopTallyScope.
inline thread_local std::uint64_t* active_flop_tally = nullptr;

inline void tally(std::uint64_t flops) noexcept {
  if (active_flop_tally != nullptr) *active_flop_tally += flops;
}
}  // namespace detail

// Counts 2*m*n*k for every matmul kernel executed on this thread while alive.
class FlopTallyScope {
 public:
  FlopTallyScope() : previous_(detail::active_flop_tally) {
    detail::active_flop_tally = &count_;
  }
  ~FlopTallyScope() { detail::active_flop_tally = previous_; }
  FlopTallyScope(const FlopTallyScope&) = delete;
  FlopTallyScope& operator=(const FlopTallyScope&) = delete;

  std::uint64_t count() const noexcept { return count_; }

 private:
  std::uint64_t count_ = 0;
  std::uint64_t* previous_;
};

template <std::floating_point T>
bool all_finite(const Matrix<T>& m) noexcept {
  return std::all_of(m.values().begin(), m.values().end(),
                     [](T v) { return std::isfinite(v); });
}

template <std::floating_point T>
void require_finite(const Matrix<T>& m, const char* what) {
  if (!all_finite(m)) throw InvalidInput(std::string(what) + ": non-finite matrix entry");
}

template <std::floating_point T>
void require_same_shape(const Matrix<T>& a, const Matrix<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a.shape()) +
                     " vs " + to_string(b.shape()));
  }
}

template <std::floating_point T>
Matrix<T> zeros_like(const Matrix<T>& m) {
  if (m.empty()) return {};
  return Matrix<T>(m.rows(), m.cols());
}

// C = A * B  (A: m x k, B: k x n)
template <std::floating_point T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + to_string(a.shape()) + " * " + to_string(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Matrix<T> c(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = a(i, p);
      const T* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  detail::tally(2ULL * m * n * k);
  return c;
}

// C = A * B^T  (A: m x k, B: n x k)
template <std::floating_point T>
Matrix<T> matmul_nt(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: " + to_string(a.shape()) + " * T(" + to_string(b.shape()) +
                     ")");
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  Matrix<T> c(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b.data() + j * k;
      T acc{0};
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c(i, j) = acc;
    }
  }
  detail::tally(2ULL * m * n * k);
  return c;
}

// C = A^T * B  (A: k x m, B: k x n)
template <std::floating_point T>
Matrix<T> matmul_tn(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: T(" + to_string(a.shape()) + ") * " + to_string(b.shape()));
  }
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  Matrix<T> c(m, n);
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = a.data() + p * m;
    const T* brow = b.data() + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T api = arow[i];
      T* crow = c.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += api * brow[j];
    }
  }
  detail::tally(2ULL * m * n * k);
  return c;
}

template <std::floating_point T>
Matrix<T> transpose(const Matrix<T>& m) {
  Matrix<T> t(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
  return t;
}

template <std::floating_point T>
Matrix<T> subtract(const Matrix<T>& a, const Matrix<T>& b) {
  require_same_shape(a, b, "subtract");
  Matrix<T> c = a;
  auto cv = c.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < cv.size(); ++i) cv[i] -= bv[i];
  return c;
}

template <std::floating_point T>
Matrix<T> add(const Matrix<T>& a, const Matrix<T>& b) {
  require_same_shape(a, b, "add");
  Matrix<T> c = a;
  auto cv = c.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < cv.size(); ++i) cv[i] += bv[i];
  return c;
}

// y += alpha * x
template <std::floating_point T>
void axpy(T alpha, const Matrix<T>& x, Matrix<T>& y) {
  require_same_shape(x, y, "axpy");
  auto xv = x.values();
  auto yv = y.values();
  for (std::size_t i = 0; i < yv.size(); ++i) yv[i] += alpha * xv[i];
}

template <std::floating_point T>
Matrix<T> scaled(const Matrix<T>& a, T s) {
  Matrix<T> c = a;
  for (T& v : c.values()) v *= s;
  return c;
}

}  // namespace grades_lab

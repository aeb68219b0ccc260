#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <string>
#include <vector>

#include "grades_lab/matrix.hpp"

// Matrix norms used by the convergence controller and the norm-bound checks.
// All accumulation happens in double regardless of the storage type, and
// every norm rejects non-finite input with InvalidInput.
namespace grades_lab::norms {

// Sum of |m_ij|; the controller's convergence metric.
template <std::floating_point T>
double l1_elementwise(const Matrix<T>& m) {
  require_finite(m, "l1_elementwise");
  double acc = 0.0;
  for (T v : m.values()) acc += static_cast<double>(std::abs(v));
  return acc;
}

// Sum of |a_ij - b_ij| with the subtraction done in T, so the result equals
// l1_elementwise(subtract(a, b)) bit for bit.
template <std::floating_point T>
double l1_diff(const Matrix<T>& a, const Matrix<T>& b) {
  require_same_shape(a, b, "l1_diff");
  require_finite(a, "l1_diff");
  require_finite(b, "l1_diff");
  auto av = a.values();
  auto bv = b.values();
  double acc = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const T d = av[i] - bv[i];
    acc += static_cast<double>(std::abs(d));
  }
  return acc;
}

template <std::floating_point T>
double frobenius(const Matrix<T>& m) {
  require_finite(m, "frobenius");
  double acc = 0.0;
  for (T v : m.values()) acc += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(acc);
}

// Subordinate infinity norm: maximum absolute row sum.
template <std::floating_point T>
double subordinate_inf(const Matrix<T>& m) {
  require_finite(m, "subordinate_inf");
  double best = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double row = 0.0;
    for (T v : m.row(i)) row += static_cast<double>(std::abs(v));
    best = std::max(best, row);
  }
  return best;
}

// Subordinate one norm: maximum absolute column sum.
template <std::floating_point T>
double subordinate_one(const Matrix<T>& m) {
  require_finite(m, "subordinate_one");
  std::vector<double> cols(m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) cols[j] += static_cast<double>(std::abs(m(i, j)));
  double best = 0.0;
  for (double c : cols) best = std::max(best, c);
  return best;
}

struct SpectralOptions {
  double relative_tolerance = 1e-10;
  std::size_t max_iterations = 10'000;
};

namespace detail {

struct PowerResult {
  double sigma_sq = 0.0;
  bool converged = false;
  std::size_t iterations = 0;
};

// Power iteration on m^T m from a given unit start vector.
template <std::floating_point T>
PowerResult power_iterate(const Matrix<T>& m, std::vector<double> v, const SpectralOptions& opt) {
  const std::size_t rows = m.rows(), cols = m.cols();
  std::vector<double> mv(rows), w(cols);
  double lambda_prev = -1.0;
  for (std::size_t it = 1; it <= opt.max_iterations; ++it) {
    for (std::size_t i = 0; i < rows; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < cols; ++j) acc += static_cast<double>(m(i, j)) * v[j];
      mv[i] = acc;
    }
    std::fill(w.begin(), w.end(), 0.0);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) w[j] += static_cast<double>(m(i, j)) * mv[i];
    double lambda = 0.0, wnorm_sq = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      lambda += v[j] * w[j];
      wnorm_sq += w[j] * w[j];
    }
    if (wnorm_sq == 0.0) return {0.0, true, it};
    const double wnorm = std::sqrt(wnorm_sq);
    for (std::size_t j = 0; j < cols; ++j) v[j] = w[j] / wnorm;
    if (lambda_prev >= 0.0 && std::abs(lambda - lambda_prev) <= opt.relative_tolerance * lambda) {
      return {lambda, true, it};
    }
    lambda_prev = lambda;
  }
  return {lambda_prev, false, opt.max_iterations};
}

}  // namespace detail

// Largest singular value by power iteration on m^T m, started from the
// normalized all-ones vector. If the estimate falls below the largest column
// norm (a hard lower bound on sigma_max, reached when the start vector is
// orthogonal to the top singular vector) the iteration restarts from that
// column's unit vector and the larger estimate wins.
template <std::floating_point T>
double spectral(const Matrix<T>& m, const SpectralOptions& opt = {}) {
  require_finite(m, "spectral");
  const std::size_t cols = m.cols();
  std::vector<double> start(cols, 1.0 / std::sqrt(static_cast<double>(cols)));
  auto result = detail::power_iterate(m, std::move(start), opt);
  if (!result.converged) {
    throw NumericalError("spectral norm: power iteration did not converge after " +
                         std::to_string(result.iterations) + " iterations");
  }

  std::size_t best_col = 0;
  double best_col_sq = 0.0;
  for (std::size_t j = 0; j < cols; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < m.rows(); ++i)
      acc += static_cast<double>(m(i, j)) * static_cast<double>(m(i, j));
    if (acc > best_col_sq) {
      best_col_sq = acc;
      best_col = j;
    }
  }
  if (result.sigma_sq < best_col_sq * (1.0 - 1e-6)) {
    std::vector<double> e(cols, 0.0);
    e[best_col] = 1.0;
    auto retry = detail::power_iterate(m, std::move(e), opt);
    if (!retry.converged) {
      throw NumericalError("spectral norm: power iteration did not converge after " +
                           std::to_string(retry.iterations) + " iterations");
    }
    result.sigma_sq = std::max(result.sigma_sq, retry.sigma_sq);
  }
  return std::sqrt(std::max(result.sigma_sq, 0.0));
}

}  // namespace grades_lab::norms

#pragma once

#include <concepts>
#include <cstddef>
#include <cstdint>

#include "grades_lab/component.hpp"
#include "grades_lab/matrix.hpp"

namespace grades_lab {

// Low-rank adapter for one monitored matrix W (d_out x d_in):
//   W_adapted = W_frozen + scale * B * A,  A: r x d_in,  B: d_out x r.
template <std::floating_point T>
struct LoraAdapter {
  ComponentId component;
  Matrix<T> a;
  Matrix<T> b;
  double scale = 1.0;

  std::size_t rank() const noexcept { return a.rows(); }
  std::size_t d_in() const noexcept { return a.cols(); }
  std::size_t d_out() const noexcept { return b.rows(); }
};

// A ~ normal(0, 1/r), B = 0, so the adapted model starts identical to the base.
// Throws ShapeError unless 1 <= rank <= min(d_out, d_in).
template <std::floating_point T>
LoraAdapter<T> make_adapter(ComponentId id, std::size_t d_out, std::size_t d_in,
                            std::size_t rank, double scale, std::uint64_t seed);

// x holds column vectors (d_in x n):
//   W_frozen * x + scale * B * (A * x).
// The product B*A is never formed.
template <std::floating_point T>
Matrix<T> adapted_apply(const Matrix<T>& w_frozen, const LoraAdapter<T>& adapter,
                        const Matrix<T>& x);

// ||grad_A||_{1,1} + ||grad_B||_{1,1}
template <std::floating_point T>
double lora_grad_magnitude(const Matrix<T>& grad_a, const Matrix<T>& grad_b,
                           const LoraAdapter<T>& adapter);

// W_frozen + scale * B * A, the deployable dense weight.
template <std::floating_point T>
Matrix<T> merge(const Matrix<T>& w_frozen, const LoraAdapter<T>& adapter);

}  // namespace grades_lab

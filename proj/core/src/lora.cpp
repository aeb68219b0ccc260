#include "grades_lab/lora.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "grades_lab/norms.hpp"
#include "grades_lab/rng.hpp"

namespace grades_lab {

namespace {

template <std::floating_point T>
void check_conforming(const Matrix<T>& w, const LoraAdapter<T>& ad, const char* what) {
  if (ad.a.empty() || ad.b.empty() || ad.a.rows() != ad.b.cols() || w.rows() != ad.b.rows() ||
      w.cols() != ad.a.cols()) {
    throw ShapeError(std::string(what) + ": W " + to_string(w.shape()) + ", A " +
                     to_string(ad.a.shape()) + ", B " + to_string(ad.b.shape()));
  }
}

}  // namespace

template <std::floating_point T>
LoraAdapter<T> make_adapter(ComponentId id, std::size_t d_out, std::size_t d_in,
                            std::size_t rank, double scale, std::uint64_t seed) {
  if (rank == 0 || rank > std::min(d_out, d_in)) {
    throw ShapeError("lora rank " + std::to_string(rank) + " must lie in [1, min(" +
                     std::to_string(d_out) + ", " + std::to_string(d_in) + ")]");
  }
  Rng rng(seed);
  const double stddev = std::sqrt(1.0 / static_cast<double>(rank));
  LoraAdapter<T> ad{id, Matrix<T>(rank, d_in), Matrix<T>(d_out, rank), scale};
  for (T& v : ad.a.values()) v = static_cast<T>(rng.normal(0.0, stddev));
  return ad;
}

template <std::floating_point T>
Matrix<T> adapted_apply(const Matrix<T>& w_frozen, const LoraAdapter<T>& adapter,
                        const Matrix<T>& x) {
  check_conforming(w_frozen, adapter, "adapted_apply");
  if (x.rows() != w_frozen.cols()) {
    throw ShapeError("adapted_apply: x " + to_string(x.shape()) + " vs W " +
                     to_string(w_frozen.shape()));
  }
  Matrix<T> y = matmul(w_frozen, x);
  if (adapter.scale != 0.0) {
    const Matrix<T> low = matmul(adapter.b, matmul(adapter.a, x));
    axpy(static_cast<T>(adapter.scale), low, y);
  }
  return y;
}

template <std::floating_point T>
double lora_grad_magnitude(const Matrix<T>& grad_a, const Matrix<T>& grad_b,
                           const LoraAdapter<T>& adapter) {
  require_same_shape(grad_a, adapter.a, "lora_grad_magnitude(A)");
  require_same_shape(grad_b, adapter.b, "lora_grad_magnitude(B)");
  return norms::l1_elementwise(grad_a) + norms::l1_elementwise(grad_b);
}

template <std::floating_point T>
Matrix<T> merge(const Matrix<T>& w_frozen, const LoraAdapter<T>& adapter) {
  check_conforming(w_frozen, adapter, "merge");
  Matrix<T> merged = w_frozen;
  if (adapter.scale != 0.0) axpy(static_cast<T>(adapter.scale), matmul(adapter.b, adapter.a), merged);
  return merged;
}

#define GRADES_LAB_INSTANTIATE(T)                                                              \
  template LoraAdapter<T> make_adapter<T>(ComponentId, std::size_t, std::size_t, std::size_t, \
                                          double, std::uint64_t);                              \
  template Matrix<T> adapted_apply<T>(const Matrix<T>&, const LoraAdapter<T>&,                \
                                      const Matrix<T>&);                                       \
  template double lora_grad_magnitude<T>(const Matrix<T>&, const Matrix<T>&,                  \
                                         const LoraAdapter<T>&);                               \
  template Matrix<T> merge<T>(const Matrix<T>&, const LoraAdapter<T>&);

GRADES_LAB_INSTANTIATE(float)
GRADES_LAB_INSTANTIATE(double)
#undef GRADES_LAB_INSTANTIATE

}  // namespace grades_lab

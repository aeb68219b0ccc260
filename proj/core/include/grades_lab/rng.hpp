#pragma once

#include <cstdint>
#include <random>

namespace grades_lab {

// Seeded 64-bit Mersenne Twister. Streams are reproducible within one build;
// the library's determinism contract does not extend across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }

  double normal(double mean, double stddev) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }

  // Normal draw resampled until it lies within +-bound_sigmas standard deviations.
  double truncated_normal(double stddev, double bound_sigmas = 2.0) {
    std::normal_distribution<double> dist(0.0, 1.0);
    for (;;) {
      const double z = dist(engine_);
      if (z >= -bound_sigmas && z <= bound_sigmas) return z * stddev;
    }
  }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_);
  }

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace grades_lab

#pragma once

#include <concepts>
#include <cstddef>
#include <cstdint>
#include <set>
#include <string_view>
#include <vector>

#include "grades_lab/component.hpp"
#include "grades_lab/model.hpp"

namespace grades_lab {

enum class OptimizerKind { SGD, AdamW };

std::string_view optimizer_name(OptimizerKind k) noexcept;
OptimizerKind parse_optimizer(std::string_view s);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::AdamW;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

enum class ScheduleKind { Constant, CosineWarmup };

std::string_view schedule_name(ScheduleKind k) noexcept;
ScheduleKind parse_schedule(std::string_view s);

struct ScheduleConfig {
  ScheduleKind kind = ScheduleKind::CosineWarmup;
  double warmup_fraction = 0.05;
};

// Learning rate for 1-based `step` of `total_steps`. Cosine: linear ramp over
// the first ceil(warmup_fraction * T) steps, then half-cosine decay to zero at T.
double learning_rate(const ScheduleConfig& schedule, double base_lr, std::size_t step,
                     std::size_t total_steps);

// Per-slot optimizer memory. Slots follow the canonical parameter order:
// Weights::for_each in full mode, (A, B) per adapter in LoRA mode.
template <std::floating_point T>
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {}

  void update(std::size_t slot, Matrix<T>& param, const Matrix<T>& grad, double lr);

  const OptimizerConfig& config() const noexcept { return cfg_; }
  // Number of AdamW steps taken by a slot (0 if never updated).
  std::uint64_t slot_steps(std::size_t slot) const noexcept;

 private:
  struct SlotState {
    Matrix<T> m;
    Matrix<T> v;
    std::uint64_t t = 0;
  };
  OptimizerConfig cfg_;
  std::vector<SlotState> state_;
};

// Updates every trainable matrix not in `frozen`:
//   full mode: monitored matrices unless frozen, unmonitored ones always;
//   LoRA mode: adapter pairs unless their component is frozen, base never.
// All gradients are checked first; a non-finite entry aborts the whole step
// with NumericalError and leaves params untouched.
template <std::floating_point T>
void apply_updates(ModelParams<T>& params, const GradientBundle<T>& grads, double lr,
                   const std::set<ComponentId>& frozen, Optimizer<T>& optimizer);

}  // namespace grades_lab

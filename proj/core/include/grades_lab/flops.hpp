#pragma once

#include <cstddef>
#include <cstdint>
#include <set>
#include <vector>

#include "grades_lab/component.hpp"
#include "grades_lab/model.hpp"
#include "grades_lab/optimizer.hpp"

// Analytic training-cost accounting. Only matmuls are counted (2*m*n*k);
// softmax, norms and activations are excluded. Optimizer updates are charged
// per element with a fixed per-rule constant.
namespace grades_lab::flops {

inline constexpr std::uint64_t kSgdFlopsPerElement = 2;     // mul, sub
inline constexpr std::uint64_t kAdamWFlopsPerElement = 16;  // moments, bias correction, decay, step

// 2*m*n*k; throws NumericalError on overflow and InvalidInput on a zero dim.
std::uint64_t matmul_flops(std::uint64_t m, std::uint64_t n, std::uint64_t k);

std::uint64_t checked_add(std::uint64_t a, std::uint64_t b);
std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b);

enum class TrainingMode { FullParameter, Lora };

// Everything that determines the cost of one training step.
struct CostModel {
  ModelConfig model;
  std::size_t seq_len = 1;
  std::size_t batch_size = 1;
  OptimizerKind optimizer = OptimizerKind::AdamW;
  TrainingMode mode = TrainingMode::FullParameter;
  std::size_t lora_rank = 0;
  std::vector<Role> lora_roles;  // adapted roles (LoRA mode)

  bool adapted(Role r) const;
  // One sequence of `len` tokens through the decoder and head.
  std::uint64_t forward_per_sequence(std::size_t len) const;
  std::uint64_t backward_per_sequence(std::size_t len) const;
  std::uint64_t forward_per_sequence() const { return forward_per_sequence(seq_len); }
  std::uint64_t backward_per_sequence() const { return backward_per_sequence(seq_len); }
  // Optimizer cost of one step given the frozen set.
  std::uint64_t update_per_step(const std::set<ComponentId>& frozen) const;
  std::uint64_t update_flops_per_element() const;
};

struct StepCharge {
  std::size_t step = 0;
  std::uint64_t forward = 0;
  std::uint64_t backward = 0;
  std::uint64_t update = 0;
  std::uint64_t val = 0;
};

struct CostLedger {
  std::uint64_t forward_flops = 0;
  std::uint64_t backward_flops = 0;
  std::uint64_t update_flops = 0;
  std::uint64_t val_flops = 0;
  std::vector<StepCharge> per_step;

  std::uint64_t total() const;
};

// Charges one training step: forward and backward in full (frozen matrices
// still carry gradient), update only for trainable, unfrozen parameters.
void charge_step(CostLedger& ledger, const CostModel& cost, const std::set<ComponentId>& frozen,
                 std::size_t step);

// Charges validation forwards over sequences of the given lengths at `step`.
void charge_validation(CostLedger& ledger, const CostModel& cost,
                       const std::vector<std::size_t>& sequence_lengths, std::size_t step);

}  // namespace grades_lab::flops

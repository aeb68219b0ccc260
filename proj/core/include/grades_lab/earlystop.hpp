#pragma once

#include <concepts>
#include <cstddef>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "grades_lab/flops.hpp"
#include "grades_lab/model.hpp"
#include "grades_lab/task.hpp"

namespace grades_lab {

// Validation-loss early stopping. Patience counts validation checks, not epochs.
struct EsConfig {
  double interval_fraction = 0.05;
  std::size_t patience = 3;
  double min_delta = 0.0005;

  void validate() const;
  // Steps between checks: ceil(interval_fraction * total_steps), at least 1.
  std::size_t interval(std::size_t total_steps) const;
};

enum class EsDecision { Continue, Stop };

struct EsState {
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::size_t best_step = 0;
  std::size_t checks_since_improvement = 0;
  std::vector<std::pair<std::size_t, double>> history;  // (step, val_loss)
};

// An improvement requires val_loss < best - min_delta; equality does not count.
EsDecision es_check(EsState& state, std::size_t step, double val_loss, const EsConfig& cfg);

// Mean sequence loss over the set, forward passes only. When `ledger` is set,
// every forward is charged to its validation counter at `step`.
template <std::floating_point T>
double validation_loss(const ModelParams<T>& params, std::span<const Sequence> val_set,
                       flops::CostLedger* ledger = nullptr,
                       const flops::CostModel* cost = nullptr, std::size_t step = 0);

}  // namespace grades_lab

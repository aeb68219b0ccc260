#include "grades_lab/flops.hpp"

#include <algorithm>
#include <limits>
#include <string>

namespace grades_lab::flops {

std::uint64_t checked_add(std::uint64_t a, std::uint64_t b) {
  if (a > std::numeric_limits<std::uint64_t>::max() - b) {
    throw NumericalError("flop counter overflow");
  }
  return a + b;
}

std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b) {
  if (a != 0 && b > std::numeric_limits<std::uint64_t>::max() / a) {
    throw NumericalError("flop counter overflow");
  }
  return a * b;
}

std::uint64_t matmul_flops(std::uint64_t m, std::uint64_t n, std::uint64_t k) {
  if (m == 0 || n == 0 || k == 0) throw InvalidInput("matmul_flops: dimensions must be positive");
  return checked_mul(checked_mul(checked_mul(2, m), n), k);
}

namespace {

struct LinearDims {
  Role role;
  std::uint64_t in;
  std::uint64_t out;
};

std::vector<LinearDims> layer_linears(const ModelConfig& cfg) {
  const std::uint64_t d = cfg.d_model, f = cfg.d_ff;
  return {{Role::Q, d, d},    {Role::K, d, d},  {Role::V, d, d},   {Role::O, d, d},
          {Role::Gate, d, f}, {Role::Up, d, f}, {Role::Down, f, d}};
}

}  // namespace

bool CostModel::adapted(Role r) const {
  return mode == TrainingMode::Lora && std::find(lora_roles.begin(), lora_roles.end(), r) != lora_roles.end();
}

std::uint64_t CostModel::forward_per_sequence(std::size_t len) const {
  const std::uint64_t n = len, r = lora_rank;
  const std::uint64_t heads = model.n_heads, dh = model.head_dim();
  std::uint64_t per_layer = 0;
  for (const auto& lin : layer_linears(model)) {
    per_layer = checked_add(per_layer, matmul_flops(n, lin.out, lin.in));
    if (adapted(lin.role)) {
      per_layer = checked_add(per_layer, matmul_flops(n, r, lin.in));
      per_layer = checked_add(per_layer, matmul_flops(n, lin.out, r));
    }
  }
  // scores = Q_h K_h^T and out = P V_h per head
  per_layer = checked_add(per_layer, checked_mul(heads, 2 * matmul_flops(n, n, dh)));
  std::uint64_t total = checked_mul(per_layer, model.n_layers);
  return checked_add(total, matmul_flops(n, model.vocab_size, model.d_model));
}

std::uint64_t CostModel::backward_per_sequence(std::size_t len) const {
  const std::uint64_t n = len, r = lora_rank;
  const std::uint64_t heads = model.n_heads, dh = model.head_dim();
  const bool full = mode == TrainingMode::FullParameter;
  std::uint64_t per_layer = 0;
  for (const auto& lin : layer_linears(model)) {
    per_layer = checked_add(per_layer, matmul_flops(n, lin.in, lin.out));  // dX
    if (full) per_layer = checked_add(per_layer, matmul_flops(lin.out, lin.in, n));  // dW
    if (adapted(lin.role)) {
      per_layer = checked_add(per_layer, matmul_flops(n, r, lin.out));   // dY B
      per_layer = checked_add(per_layer, matmul_flops(lin.out, r, n));   // dB
      per_layer = checked_add(per_layer, matmul_flops(r, lin.in, n));    // dA
      per_layer = checked_add(per_layer, matmul_flops(n, lin.in, r));    // dX via A
    }
  }
  // dP, dV, dQ, dK per head
  per_layer = checked_add(per_layer, checked_mul(heads, 4 * matmul_flops(n, n, dh)));
  std::uint64_t total = checked_mul(per_layer, model.n_layers);
  total = checked_add(total, matmul_flops(n, model.d_model, model.vocab_size));  // d h_final
  if (full) total = checked_add(total, matmul_flops(model.vocab_size, model.d_model, n));  // d head
  return total;
}

std::uint64_t CostModel::update_flops_per_element() const {
  return optimizer == OptimizerKind::SGD ? kSgdFlopsPerElement : kAdamWFlopsPerElement;
}

std::uint64_t CostModel::update_per_step(const std::set<ComponentId>& frozen) const {
  const std::uint64_t d = model.d_model, r = lora_rank;
  std::uint64_t elements = 0;
  for (std::size_t l = 0; l < model.n_layers; ++l) {
    for (const auto& lin : layer_linears(model)) {
      const ComponentId id{static_cast<int>(l), lin.role};
      if (frozen.contains(id)) continue;
      if (mode == TrainingMode::FullParameter) {
        elements = checked_add(elements, checked_mul(lin.in, lin.out));
      } else if (adapted(lin.role)) {
        elements = checked_add(elements, checked_mul(r, lin.in + lin.out));
      }
    }
  }
  if (mode == TrainingMode::FullParameter) {
    const std::uint64_t unmonitored = model.vocab_size * d          // token embedding
                                      + model.max_seq_len * d       // position embedding
                                      + model.n_layers * 2 * d      // norm gains
                                      + d                           // final norm
                                      + model.vocab_size * d;       // head
    elements = checked_add(elements, unmonitored);
  }
  return checked_mul(elements, update_flops_per_element());
}

std::uint64_t CostLedger::total() const {
  return checked_add(checked_add(forward_flops, backward_flops),
                     checked_add(update_flops, val_flops));
}

void charge_step(CostLedger& ledger, const CostModel& cost, const std::set<ComponentId>& frozen,
                 std::size_t step) {
  StepCharge c;
  c.step = step;
  c.forward = checked_mul(cost.forward_per_sequence(), cost.batch_size);
  c.backward = checked_mul(cost.backward_per_sequence(), cost.batch_size);
  c.update = cost.update_per_step(frozen);
  ledger.forward_flops = checked_add(ledger.forward_flops, c.forward);
  ledger.backward_flops = checked_add(ledger.backward_flops, c.backward);
  ledger.update_flops = checked_add(ledger.update_flops, c.update);
  ledger.per_step.push_back(c);
}

void charge_validation(CostLedger& ledger, const CostModel& cost,
                       const std::vector<std::size_t>& sequence_lengths, std::size_t step) {
  std::uint64_t v = 0;
  for (std::size_t len : sequence_lengths) v = checked_add(v, cost.forward_per_sequence(len));
  ledger.val_flops = checked_add(ledger.val_flops, v);
  if (!ledger.per_step.empty() && ledger.per_step.back().step == step) {
    ledger.per_step.back().val = checked_add(ledger.per_step.back().val, v);
  } else {
    ledger.per_step.push_back({step, 0, 0, 0, v});
  }
}

}  // namespace grades_lab::flops

#include "grades_lab/optimizer.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "grades_lab/grades.hpp"

namespace grades_lab {

std::string_view optimizer_name(OptimizerKind k) noexcept {
  return k == OptimizerKind::SGD ? "sgd" : "adamw";
}

OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "sgd") return OptimizerKind::SGD;
  if (s == "adamw") return OptimizerKind::AdamW;
  throw ConfigError("unknown optimizer '" + std::string(s) + "'");
}

std::string_view schedule_name(ScheduleKind k) noexcept {
  return k == ScheduleKind::Constant ? "constant" : "cosine";
}

ScheduleKind parse_schedule(std::string_view s) {
  if (s == "constant") return ScheduleKind::Constant;
  if (s == "cosine") return ScheduleKind::CosineWarmup;
  throw ConfigError("unknown schedule '" + std::string(s) + "'");
}

double learning_rate(const ScheduleConfig& schedule, double base_lr, std::size_t step,
                     std::size_t total_steps) {
  if (schedule.kind == ScheduleKind::Constant) return base_lr;
  const std::size_t warmup = ceil_fraction(schedule.warmup_fraction, total_steps);
  if (step <= warmup) {
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup);
  }
  if (total_steps <= warmup) return base_lr;
  const double progress =
      static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <std::floating_point T>
void Optimizer<T>::update(std::size_t slot, Matrix<T>& param, const Matrix<T>& grad, double lr) {
  require_same_shape(param, grad, "optimizer update");
  if (cfg_.kind == OptimizerKind::SGD) {
    auto pv = param.values();
    auto gv = grad.values();
    for (std::size_t i = 0; i < pv.size(); ++i)
      pv[i] = static_cast<T>(static_cast<double>(pv[i]) - lr * static_cast<double>(gv[i]));
    return;
  }

  if (slot >= state_.size()) state_.resize(slot + 1);
  SlotState& s = state_[slot];
  if (s.m.empty()) {
    s.m = zeros_like(param);
    s.v = zeros_like(param);
  }
  ++s.t;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(s.t));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(s.t));
  auto pv = param.values();
  auto gv = grad.values();
  auto mv = s.m.values();
  auto vv = s.v.values();
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double g = gv[i];
    const double m = b1 * mv[i] + (1.0 - b1) * g;
    const double v = b2 * vv[i] + (1.0 - b2) * g * g;
    mv[i] = static_cast<T>(m);
    vv[i] = static_cast<T>(v);
    const double mhat = m / bc1;
    const double vhat = v / bc2;
    const double p = pv[i];
    pv[i] = static_cast<T>(p - lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * p));
  }
}

template <std::floating_point T>
std::uint64_t Optimizer<T>::slot_steps(std::size_t slot) const noexcept {
  return slot < state_.size() ? state_[slot].t : 0;
}

template <std::floating_point T>
void apply_updates(ModelParams<T>& params, const GradientBundle<T>& grads, double lr,
                   const std::set<ComponentId>& frozen, Optimizer<T>& optimizer) {
  if (params.lora_mode()) {
    if (grads.adapters.size() != params.adapters.size()) {
      throw ShapeError("apply_updates: LoRA params need one gradient pair per adapter");
    }
    for (const auto& g : grads.adapters) {
      if (!all_finite(g.a) || !all_finite(g.b)) {
        throw NumericalError("apply_updates: non-finite gradient for adapter " +
                             component_name(g.component) + "; step aborted");
      }
    }
    for (std::size_t i = 0; i < params.adapters.size(); ++i) {
      auto& ad = params.adapters[i];
      const auto& g = grads.adapters[i];
      if (g.component != ad.component) throw ShapeError("apply_updates: adapter order mismatch");
      // A and B freeze together.
      if (frozen.contains(ad.component)) continue;
      optimizer.update(2 * i, ad.a, g.a, lr);
      optimizer.update(2 * i + 1, ad.b, g.b, lr);
    }
    return;
  }

  if (!grads.has_base()) throw ShapeError("apply_updates: full-parameter gradients required");
  std::vector<const Matrix<T>*> gs;
  grads.base.for_each([&](const std::string& name, std::optional<ComponentId>, const Matrix<T>& g) {
    if (!all_finite(g)) {
      throw NumericalError("apply_updates: non-finite gradient for " + name + "; step aborted");
    }
    gs.push_back(&g);
  });
  std::size_t slot = 0;
  params.base.for_each([&](const std::string&, std::optional<ComponentId> id, Matrix<T>& p) {
    const std::size_t this_slot = slot++;
    if (id && frozen.contains(*id)) return;
    optimizer.update(this_slot, p, *gs[this_slot], lr);
  });
}

template class Optimizer<float>;
template class Optimizer<double>;
template void apply_updates<float>(ModelParams<float>&, const GradientBundle<float>&, double,
                                   const std::set<ComponentId>&, Optimizer<float>&);
template void apply_updates<double>(ModelParams<double>&, const GradientBundle<double>&, double,
                                    const std::set<ComponentId>&, Optimizer<double>&);

}  // namespace grades_lab

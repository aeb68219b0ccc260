#pragma once

#include <concepts>
#include <cstddef>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "grades_lab/component.hpp"
#include "grades_lab/matrix.hpp"
#include "grades_lab/model.hpp"

namespace grades_lab {

enum class MetricMode {
  GradDiff,  // sum |grad_t - grad_{t-1}|
  GradNorm,  // sum |grad_t|
};

std::string_view metric_mode_name(MetricMode m) noexcept;
MetricMode parse_metric_mode(std::string_view s);

// ceil(fraction * total), treating products within 1e-9 of an integer as that
// integer so 0.55 * 2000 gives 1100 rather than 1101.
std::size_t ceil_fraction(double fraction, std::size_t total);

struct GradEsConfig {
  double alpha = 0.5;  // grace-period ratio
  double tau = 1.0;    // freeze when metric < tau
  std::size_t total_steps = 1;
  MetricMode metric_mode = MetricMode::GradDiff;
  bool normalize_by_size = false;
  // Optional threshold overrides; a layer entry wins over a role entry.
  std::map<Role, double> role_tau;
  std::map<int, double> layer_tau;

  void validate() const;
  std::size_t grace_step() const { return ceil_fraction(alpha, total_steps); }
  double tau_for(ComponentId id) const;
};

struct FreezeEvent {
  std::size_t step = 0;
  ComponentId component;
  double metric = 0.0;
  double tau = 0.0;
  friend bool operator==(const FreezeEvent&, const FreezeEvent&) = default;
};

struct ComponentMetric {
  ComponentId component;
  double value = 0.0;
};

struct StepObservation {
  std::size_t step = 0;
  bool monitored = false;  // step > grace step
  std::vector<ComponentId> newly_frozen;
  // Metric of every component that was unfrozen when the step began.
  std::vector<ComponentMetric> active_metrics;
  // Metric of components frozen before this step, for post-freeze monitoring.
  std::vector<ComponentMetric> frozen_metrics;
};

// Matrix-level gradient-change early stopping. Single owner; advance with
// observe_step once per training step, query read-only in between.
template <std::floating_point T>
class GradEsController {
 public:
  // part_shapes[i] lists the gradient matrices that make up components[i]:
  // one (dW) for full-parameter training, two (dA, dB) for LoRA.
  GradEsController(GradEsConfig cfg, std::vector<ComponentId> components,
                   std::vector<std::vector<Shape>> part_shapes);

  // Monitors every adapted component in LoRA mode, otherwise all 7*L matrices.
  static GradEsController for_model(GradEsConfig cfg, const ModelParams<T>& params);

  double component_metric(ComponentId id, std::span<const Matrix<T>* const> parts) const;

  // Steps must arrive as 1, 2, 3, ...; anything else is a ContractError.
  StepObservation observe_step(std::size_t step, const GradientBundle<T>& grads);
  StepObservation observe_step(std::size_t step,
                               std::span<const std::vector<const Matrix<T>*>> parts_by_component);

  // Freezes id outside the metric rule (resuming from a log, targeted freezing).
  void freeze(ComponentId id, std::size_t step, double metric);

  bool should_terminate() const noexcept { return frozen_.size() == components_.size(); }
  bool is_frozen(ComponentId id) const { return frozen_.contains(id); }
  const std::set<ComponentId>& frozen() const noexcept { return frozen_; }
  const std::vector<FreezeEvent>& freeze_log() const noexcept { return log_; }
  const std::vector<ComponentId>& components() const noexcept { return components_; }
  std::size_t step() const noexcept { return step_; }
  const GradEsConfig& config() const noexcept { return cfg_; }

 private:
  std::size_t index_of(ComponentId id) const;

  GradEsConfig cfg_;
  std::vector<ComponentId> components_;
  std::vector<std::vector<Matrix<T>>> prev_grad_;
  std::set<ComponentId> frozen_;
  std::vector<FreezeEvent> log_;
  std::size_t step_ = 0;
};

// Frozen set after each step 1..n_steps reconstructed from a freeze log.
std::vector<std::set<ComponentId>> replay_frozen_sets(std::span<const FreezeEvent> log,
                                                      std::size_t n_steps);

}  // namespace grades_lab

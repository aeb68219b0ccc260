#include "grades_lab/grades.hpp"

#include <algorithm>
#include <cmath>

#include "grades_lab/norms.hpp"

namespace grades_lab {

std::string_view metric_mode_name(MetricMode m) noexcept {
  return m == MetricMode::GradDiff ? "grad_diff" : "grad_norm";
}

MetricMode parse_metric_mode(std::string_view s) {
  if (s == "grad_diff") return MetricMode::GradDiff;
  if (s == "grad_norm") return MetricMode::GradNorm;
  throw ConfigError("unknown metric_mode '" + std::string(s) + "'");
}

std::size_t ceil_fraction(double fraction, std::size_t total) {
  const double x = fraction * static_cast<double>(total);
  const double nearest = std::round(x);
  if (std::abs(x - nearest) <= 1e-9 * std::max(1.0, std::abs(x))) {
    return static_cast<std::size_t>(nearest);
  }
  return static_cast<std::size_t>(std::ceil(x));
}

void GradEsConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("grades.alpha must lie in [0, 1]");
  if (!(tau >= 0.0) || !std::isfinite(tau)) throw ConfigError("grades.tau must be finite and >= 0");
  if (total_steps == 0) throw ConfigError("grades.total_steps must be >= 1");
  for (const auto& [role, t] : role_tau)
    if (!(t >= 0.0)) throw ConfigError("grades.role_tau values must be >= 0");
  for (const auto& [layer, t] : layer_tau)
    if (!(t >= 0.0)) throw ConfigError("grades.layer_tau values must be >= 0");
}

double GradEsConfig::tau_for(ComponentId id) const {
  if (auto it = layer_tau.find(id.layer); it != layer_tau.end()) return it->second;
  if (auto it = role_tau.find(id.role); it != role_tau.end()) return it->second;
  return tau;
}

template <std::floating_point T>
GradEsController<T>::GradEsController(GradEsConfig cfg, std::vector<ComponentId> components,
                                      std::vector<std::vector<Shape>> part_shapes)
    : cfg_(std::move(cfg)), components_(std::move(components)) {
  cfg_.validate();
  if (part_shapes.size() != components_.size()) {
    throw ShapeError("GradEsController: one shape list per component required");
  }
  if (!std::is_sorted(components_.begin(), components_.end()) ||
      std::adjacent_find(components_.begin(), components_.end()) != components_.end()) {
    throw ContractError("GradEsController: components must be unique and in canonical order");
  }
  prev_grad_.reserve(components_.size());
  for (const auto& shapes : part_shapes) {
    if (shapes.empty()) throw ShapeError("GradEsController: component without gradient parts");
    std::vector<Matrix<T>> zeros;
    for (Shape s : shapes) zeros.emplace_back(s.rows, s.cols);
    prev_grad_.push_back(std::move(zeros));
  }
}

template <std::floating_point T>
GradEsController<T> GradEsController<T>::for_model(GradEsConfig cfg, const ModelParams<T>& params) {
  std::vector<ComponentId> ids;
  std::vector<std::vector<Shape>> shapes;
  if (params.lora_mode()) {
    for (const auto& ad : params.adapters) {
      ids.push_back(ad.component);
      shapes.push_back({ad.a.shape(), ad.b.shape()});
    }
  } else {
    for (ComponentId id : all_components(static_cast<int>(params.config.n_layers))) {
      ids.push_back(id);
      shapes.push_back({params.base.at(id).shape()});
    }
  }
  return GradEsController(std::move(cfg), std::move(ids), std::move(shapes));
}

template <std::floating_point T>
std::size_t GradEsController<T>::index_of(ComponentId id) const {
  auto it = std::lower_bound(components_.begin(), components_.end(), id);
  if (it == components_.end() || *it != id) {
    throw ContractError("GradEsController: unknown component " + component_name(id));
  }
  return static_cast<std::size_t>(it - components_.begin());
}

template <std::floating_point T>
double GradEsController<T>::component_metric(ComponentId id,
                                             std::span<const Matrix<T>* const> parts) const {
  const auto& prev = prev_grad_[index_of(id)];
  if (parts.size() != prev.size()) {
    throw ShapeError("component_metric: " + component_name(id) + " expects " +
                     std::to_string(prev.size()) + " gradient parts");
  }
  double metric = 0.0;
  std::size_t elements = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    require_same_shape(*parts[p], prev[p], "component_metric");
    metric += cfg_.metric_mode == MetricMode::GradDiff ? norms::l1_diff(*parts[p], prev[p])
                                                       : norms::l1_elementwise(*parts[p]);
    elements += parts[p]->size();
  }
  if (cfg_.normalize_by_size) metric /= static_cast<double>(elements);
  return metric;
}

template <std::floating_point T>
StepObservation GradEsController<T>::observe_step(std::size_t step,
                                                  const GradientBundle<T>& grads) {
  std::vector<std::vector<const Matrix<T>*>> parts;
  parts.reserve(components_.size());
  for (ComponentId id : components_) parts.push_back(grads.parts(id));
  return observe_step(step, std::span<const std::vector<const Matrix<T>*>>(parts));
}

template <std::floating_point T>
StepObservation GradEsController<T>::observe_step(
    std::size_t step, std::span<const std::vector<const Matrix<T>*>> parts_by_component) {
  if (step != step_ + 1) {
    throw ContractError("observe_step: expected step " + std::to_string(step_ + 1) + ", got " +
                        std::to_string(step));
  }
  if (parts_by_component.size() != components_.size()) {
    throw ShapeError("observe_step: gradient for every monitored component required");
  }

  StepObservation obs;
  obs.step = step;
  obs.monitored = step > cfg_.grace_step();
  // Metrics are computed against prev_grad before it is overwritten below.
  for (std::size_t i = 0; i < components_.size(); ++i) {
    const ComponentId id = components_[i];
    const double m = component_metric(id, parts_by_component[i]);
    if (frozen_.contains(id)) {
      obs.frozen_metrics.push_back({id, m});
      continue;
    }
    obs.active_metrics.push_back({id, m});
    if (obs.monitored && m < cfg_.tau_for(id)) obs.newly_frozen.push_back(id);
  }
  for (ComponentId id : obs.newly_frozen) {
    frozen_.insert(id);
    const auto it = std::find_if(obs.active_metrics.begin(), obs.active_metrics.end(),
                                 [&](const ComponentMetric& cm) { return cm.component == id; });
    log_.push_back({step, id, it->value, cfg_.tau_for(id)});
  }
  for (std::size_t i = 0; i < components_.size(); ++i) {
    const auto& parts = parts_by_component[i];
    for (std::size_t p = 0; p < parts.size(); ++p) prev_grad_[i][p] = *parts[p];
  }
  step_ = step;
  return obs;
}

template <std::floating_point T>
void GradEsController<T>::freeze(ComponentId id, std::size_t step, double metric) {
  index_of(id);
  if (frozen_.insert(id).second) log_.push_back({step, id, metric, cfg_.tau_for(id)});
}

std::vector<std::set<ComponentId>> replay_frozen_sets(std::span<const FreezeEvent> log,
                                                      std::size_t n_steps) {
  std::vector<std::set<ComponentId>> out(n_steps);
  std::set<ComponentId> current;
  std::size_t cursor = 0;
  for (std::size_t step = 1; step <= n_steps; ++step) {
    while (cursor < log.size() && log[cursor].step <= step) current.insert(log[cursor++].component);
    out[step - 1] = current;
  }
  return out;
}

template class GradEsController<float>;
template class GradEsController<double>;

}  // namespace grades_lab

#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace grades_lab {

// The seven per-layer weight matrices tracked by the controller, in canonical order.
enum class Role : int { Q = 0, K, V, O, Gate, Up, Down };

inline constexpr std::size_t kRolesPerLayer = 7;
inline constexpr std::array<Role, kRolesPerLayer> kAllRoles = {
    Role::Q, Role::K, Role::V, Role::O, Role::Gate, Role::Up, Role::Down};

std::string_view role_name(Role r) noexcept;
std::optional<Role> parse_role(std::string_view s) noexcept;

// One monitored weight matrix. Ordered by (layer, role).
struct ComponentId {
  int layer = 0;
  Role role = Role::Q;

  friend auto operator<=>(const ComponentId&, const ComponentId&) = default;
};

// Position of id within the canonical 7*L ordering.
inline std::size_t flat_index(ComponentId id) noexcept {
  return static_cast<std::size_t>(id.layer) * kRolesPerLayer + static_cast<std::size_t>(id.role);
}

inline ComponentId component_at(std::size_t flat) noexcept {
  return {static_cast<int>(flat / kRolesPerLayer), static_cast<Role>(flat % kRolesPerLayer)};
}

// All 7*L ids in canonical order.
std::vector<ComponentId> all_components(int n_layers);

// "layer.<l>.<role>", the name used in checkpoints and CSV headers.
std::string component_name(ComponentId id);
std::optional<ComponentId> parse_component_name(std::string_view s);

}  // namespace grades_lab

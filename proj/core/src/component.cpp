#include "grades_lab/component.hpp"

#include <charconv>

#include "grades_lab/matrix.hpp"

namespace grades_lab {

std::string to_string(Shape s) {
  return std::to_string(s.rows) + "x" + std::to_string(s.cols);
}

namespace {
constexpr std::array<std::string_view, kRolesPerLayer> kRoleNames = {"q",    "k",  "v",   "o",
                                                                      "gate", "up", "down"};
}

std::string_view role_name(Role r) noexcept { return kRoleNames[static_cast<std::size_t>(r)]; }

std::optional<Role> parse_role(std::string_view s) noexcept {
  for (std::size_t i = 0; i < kRoleNames.size(); ++i) {
    if (kRoleNames[i] == s) return static_cast<Role>(i);
  }
  return std::nullopt;
}

std::vector<ComponentId> all_components(int n_layers) {
  std::vector<ComponentId> ids;
  ids.reserve(static_cast<std::size_t>(n_layers) * kRolesPerLayer);
  for (int l = 0; l < n_layers; ++l)
    for (Role r : kAllRoles) ids.push_back({l, r});
  return ids;
}

std::string component_name(ComponentId id) {
  return "layer." + std::to_string(id.layer) + "." + std::string(role_name(id.role));
}

std::optional<ComponentId> parse_component_name(std::string_view s) {
  constexpr std::string_view prefix = "layer.";
  if (!s.starts_with(prefix)) return std::nullopt;
  s.remove_prefix(prefix.size());
  const auto dot = s.find('.');
  if (dot == std::string_view::npos) return std::nullopt;
  int layer = 0;
  const auto num = s.substr(0, dot);
  auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), layer);
  if (ec != std::errc{} || ptr != num.data() + num.size() || layer < 0) return std::nullopt;
  auto role = parse_role(s.substr(dot + 1));
  if (!role) return std::nullopt;
  return ComponentId{layer, *role};
}

}  // namespace grades_lab

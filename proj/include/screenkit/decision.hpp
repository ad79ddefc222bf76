#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace screenkit {

enum class Decision { Include, Exclude };
enum class Role { Actor, Critic };

std::string_view to_string(Decision d) noexcept;
std::string_view to_string(Role r) noexcept;
Decision parse_decision_name(std::string_view s);
Role parse_role(std::string_view s);

// One model verdict on one record. confidence is the model's stated certainty
// in its own decision, in [0, 1].
struct ScreeningDecision {
  std::string record_id;
  Role role = Role::Actor;
  Decision decision = Decision::Exclude;
  double confidence = 0.0;
  std::optional<std::string> rationale;
  int replicate = 0;

  bool includes() const noexcept { return decision == Decision::Include; }
  bool operator==(const ScreeningDecision&) const = default;
};

}  // namespace screenkit

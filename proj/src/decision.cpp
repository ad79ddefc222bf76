#include "screenkit/decision.hpp"

#include "screenkit/error.hpp"
#include "screenkit/text.hpp"

namespace screenkit {

std::string_view to_string(Decision d) noexcept {
  return d == Decision::Include ? "include" : "exclude";
}

std::string_view to_string(Role r) noexcept { return r == Role::Actor ? "actor" : "critic"; }

Decision parse_decision_name(std::string_view s) {
  const auto v = text::to_lower(text::trim(s));
  if (v == "include") return Decision::Include;
  if (v == "exclude") return Decision::Exclude;
  fail(ErrorCode::InvalidArgument, "unknown decision '" + std::string(s) + "'");
}

Role parse_role(std::string_view s) {
  const auto v = text::to_lower(text::trim(s));
  if (v == "actor") return Role::Actor;
  if (v == "critic") return Role::Critic;
  fail(ErrorCode::InvalidArgument, "unknown role '" + std::string(s) + "'");
}

}  // namespace screenkit

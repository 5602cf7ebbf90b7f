#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "dget/common/canonical.hpp"

namespace dget::authz {

enum class Effect { Permit, Deny };

struct PolicyRule {
  std::string subject;   // glob over identity
  std::string action;    // glob over operation / "deploy" / "migrate" / ...
  std::string resource;  // glob over entity name
  Effect effect = Effect::Deny;
  bool operator==(const PolicyRule&) const = default;
};

/// `*` matches any run, `?` one character.
bool glob_match(std::string_view pattern, std::string_view text);

/// First applicable rule wins; no match denies.
Effect evaluate_policy(const std::vector<PolicyRule>& rules, std::string_view subject, std::string_view action,
                       std::string_view resource);

std::string_view effect_name(Effect e);
Json to_json(const PolicyRule& r);
/// Throws MalformedField on empty patterns or an unknown effect.
PolicyRule rule_from_json(const Json& j);

}  // namespace dget::authz

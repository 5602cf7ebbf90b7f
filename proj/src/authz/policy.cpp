#include "dget/authz/policy.hpp"

#include "dget/common/error.hpp"

namespace dget::authz {

bool glob_match(std::string_view pattern, std::string_view text) {
  std::size_t p = 0;
  std::size_t t = 0;
  std::size_t star = std::string_view::npos;
  std::size_t mark = 0;
  while (t < text.size()) {
    if (p < pattern.size() && (pattern[p] == '?' || pattern[p] == text[t])) {
      ++p;
      ++t;
    } else if (p < pattern.size() && pattern[p] == '*') {
      star = p++;
      mark = t;
    } else if (star != std::string_view::npos) {
      p = star + 1;
      t = ++mark;
    } else {
      return false;
    }
  }
  while (p < pattern.size() && pattern[p] == '*') ++p;
  return p == pattern.size();
}

Effect evaluate_policy(const std::vector<PolicyRule>& rules, std::string_view subject, std::string_view action,
                       std::string_view resource) {
  for (const auto& r : rules) {
    if (glob_match(r.subject, subject) && glob_match(r.action, action) && glob_match(r.resource, resource)) {
      return r.effect;
    }
  }
  return Effect::Deny;
}

std::string_view effect_name(Effect e) { return e == Effect::Permit ? "PERMIT" : "DENY"; }

Json to_json(const PolicyRule& r) {
  return Json{{"subject", r.subject}, {"action", r.action}, {"resource", r.resource},
              {"effect", std::string(effect_name(r.effect))}};
}

PolicyRule rule_from_json(const Json& j) {
  auto str = [&](const char* key) {
    if (!j.is_object() || !j.contains(key) || !j[key].is_string() || j[key].get<std::string>().empty()) {
      throw Error(ErrorCode::MalformedField, std::string("policy rule field '") + key + "'");
    }
    return j[key].get<std::string>();
  };
  PolicyRule r{str("subject"), str("action"), str("resource"), Effect::Deny};
  auto effect = str("effect");
  if (effect == "PERMIT") {
    r.effect = Effect::Permit;
  } else if (effect != "DENY") {
    throw Error(ErrorCode::MalformedField, "policy effect '" + effect + "'");
  }
  return r;
}

}  // namespace dget::authz

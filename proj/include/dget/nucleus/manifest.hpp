#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dget/authz/policy.hpp"
#include "dget/authz/quota.hpp"
#include "dget/common/canonical.hpp"

namespace dget::nucleus {

enum class EntityKind { OperationDriven, DataDriven, Hybrid };

std::string_view kind_name(EntityKind k);
EntityKind kind_from_name(std::string_view name);

struct Operation {
  std::string name;
  std::size_t arity = 0;
  bool operator==(const Operation&) const = default;
};

struct Manifest {
  std::string name;
  /// Exactly one of the two is set.
  std::optional<std::string> program_text;
  std::optional<std::string> program_path;
  std::string entry = "main";
  std::vector<authz::PolicyRule> policies;
  authz::ResourceLimits limits;
  std::string owner;
  EntityKind kind = EntityKind::DataDriven;
  std::vector<Operation> operations;
  bool operator==(const Manifest&) const = default;

  const Operation* find_operation(std::string_view op) const;
};

/// BadRequest when an invariant fails: empty name, missing program,
/// operation-driven or hybrid without operations, negative limits.
void validate(const Manifest& m);

Json to_json(const Manifest& m);
/// Parses and validates (BadRequest).
Manifest manifest_from_json(const Json& j);
/// Relative program paths resolve against the manifest's directory.
Manifest load_manifest_file(const std::string& path);

/// Program text named by the manifest (reads program_path when needed).
std::string program_source(const Manifest& m);

}  // namespace dget::nucleus

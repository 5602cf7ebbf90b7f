#include "dget/nucleus/manifest.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dget/common/error.hpp"

namespace dget::nucleus {

std::string_view kind_name(EntityKind k) {
  switch (k) {
    case EntityKind::OperationDriven: return "OPERATION_DRIVEN";
    case EntityKind::DataDriven: return "DATA_DRIVEN";
    case EntityKind::Hybrid: return "HYBRID";
  }
  return "DATA_DRIVEN";
}

EntityKind kind_from_name(std::string_view name) {
  if (name == "OPERATION_DRIVEN") return EntityKind::OperationDriven;
  if (name == "DATA_DRIVEN") return EntityKind::DataDriven;
  if (name == "HYBRID") return EntityKind::Hybrid;
  throw Error(ErrorCode::BadRequest, "unknown entity kind '" + std::string(name) + "'");
}

const Operation* Manifest::find_operation(std::string_view op) const {
  for (const auto& o : operations) {
    if (o.name == op) return &o;
  }
  return nullptr;
}

void validate(const Manifest& m) {
  if (m.name.empty()) throw Error(ErrorCode::BadRequest, "manifest name is empty");
  if (m.program_text.has_value() == m.program_path.has_value()) {
    throw Error(ErrorCode::BadRequest, "manifest needs exactly one of program.text and program.path");
  }
  if (m.entry.empty()) throw Error(ErrorCode::BadRequest, "manifest entry is empty");
  if (m.kind != EntityKind::DataDriven && m.operations.empty()) {
    throw Error(ErrorCode::BadRequest, std::string(kind_name(m.kind)) + " entity must expose operations");
  }
  for (const auto& [name, limit] : m.limits) {
    if (limit < 0) throw Error(ErrorCode::BadRequest, "negative limit for " + name);
  }
  for (const auto& r : m.policies) {
    if (r.subject.empty() || r.action.empty() || r.resource.empty()) {
      throw Error(ErrorCode::BadRequest, "policy patterns must be non-empty");
    }
  }
}

Json to_json(const Manifest& m) {
  Json program = Json::object();
  if (m.program_text) program["text"] = *m.program_text;
  if (m.program_path) program["path"] = *m.program_path;
  Json policies = Json::array();
  for (const auto& r : m.policies) policies.push_back(authz::to_json(r));
  Json ops = Json::array();
  for (const auto& o : m.operations) ops.push_back(Json{{"name", o.name}, {"arity", o.arity}});
  return Json{{"name", m.name},
              {"program", program},
              {"entry", m.entry},
              {"policies", policies},
              {"limits", authz::counters_to_json(m.limits)},
              {"owner", m.owner},
              {"kind", std::string(kind_name(m.kind))},
              {"operations", ops}};
}

namespace {

const Json& field(const Json& j, const char* key) {
  if (!j.contains(key)) throw Error(ErrorCode::BadRequest, std::string("manifest field missing: ") + key);
  return j[key];
}

std::string string_field(const Json& j, const char* key) {
  const auto& v = field(j, key);
  if (!v.is_string()) throw Error(ErrorCode::BadRequest, std::string("manifest field not a string: ") + key);
  return v.get<std::string>();
}

}  // namespace

Manifest manifest_from_json(const Json& j) {
  if (!j.is_object()) throw Error(ErrorCode::BadRequest, "manifest is not an object");
  static const char* const kKnown[] = {"name", "program", "entry", "policies", "limits", "owner", "kind", "operations"};
  for (const auto& [k, v] : j.items()) {
    if (std::find(std::begin(kKnown), std::end(kKnown), k) == std::end(kKnown)) {
      throw Error(ErrorCode::BadRequest, "unknown manifest field: " + k);
    }
  }
  Manifest m;
  m.name = string_field(j, "name");
  const auto& prog = field(j, "program");
  if (!prog.is_object()) throw Error(ErrorCode::BadRequest, "manifest program must be an object");
  if (prog.contains("text")) m.program_text = string_field(prog, "text");
  if (prog.contains("path")) m.program_path = string_field(prog, "path");
  if (j.contains("entry")) m.entry = string_field(j, "entry");
  if (j.contains("policies")) {
    if (!j["policies"].is_array()) throw Error(ErrorCode::BadRequest, "manifest policies must be a list");
    try {
      for (const auto& r : j["policies"]) m.policies.push_back(authz::rule_from_json(r));
    } catch (const Error& e) {
      throw Error(ErrorCode::BadRequest, std::string("policy: ") + e.what());
    }
  }
  if (j.contains("limits")) {
    try {
      m.limits = authz::counters_from_json(j["limits"]);
    } catch (const Error& e) {
      throw Error(ErrorCode::BadRequest, std::string("limits: ") + e.what());
    }
  }
  m.owner = j.contains("owner") ? string_field(j, "owner") : "";
  m.kind = j.contains("kind") ? kind_from_name(string_field(j, "kind")) : EntityKind::DataDriven;
  if (j.contains("operations")) {
    if (!j["operations"].is_array()) throw Error(ErrorCode::BadRequest, "manifest operations must be a list");
    for (const auto& o : j["operations"]) {
      if (!o.is_object() || !o.contains("arity") || !o["arity"].is_number_unsigned()) {
        throw Error(ErrorCode::BadRequest, "operation needs name and non-negative arity");
      }
      m.operations.push_back(Operation{string_field(o, "name"), o["arity"].get<std::size_t>()});
    }
  }
  validate(m);
  return m;
}

Manifest load_manifest_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::BadRequest, "cannot read manifest " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  Json j;
  try {
    j = parse_json(ss.str());
  } catch (const Error& e) {
    throw Error(ErrorCode::BadRequest, path + ": " + e.what());
  }
  auto m = manifest_from_json(j);
  if (m.program_path && std::filesystem::path(*m.program_path).is_relative()) {
    m.program_path = (std::filesystem::path(path).parent_path() / *m.program_path).string();
  }
  return m;
}

std::string program_source(const Manifest& m) {
  if (m.program_text) return *m.program_text;
  std::ifstream in(*m.program_path);
  if (!in) throw Error(ErrorCode::BadRequest, "cannot read program " + *m.program_path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace dget::nucleus

#include "dget/nucleus/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dget/common/error.hpp"
#include "dget/nucleus/transport.hpp"

namespace dget::nucleus {
namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::BadConfig, "cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <typename T>
T get(const Json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j[key].get<T>();
  } catch (const Json::exception&) {
    throw Error(ErrorCode::BadConfig, std::string("config field has the wrong type: ") + key);
  }
}

}  // namespace

std::string resolve_config_path(const std::string& path) {
  if (const char* env = std::getenv("DGET_CONFIG"); env != nullptr && *env != '\0') return env;
  return path;
}

NucleusConfig config_from_json(const Json& j, const std::string& base_dir) {
  if (!j.is_object()) throw Error(ErrorCode::BadConfig, "config is not an object");
  static const char* const kKnown[] = {
      "id", "listen", "admin_listen", "bootstrap", "identity_key", "digest_alg", "inbox_bound", "default_limits",
      "grace_period", "admin_policies", "overlay", "descriptor", "tick_ms", "step_slice", "round_delay_ms",
      "quiescence_timeout_ms", "request_timeout_ms", "discovery_wait_ms", "seed"};
  for (const auto& [k, v] : j.items()) {
    if (std::find(std::begin(kKnown), std::end(kKnown), k) == std::end(kKnown)) {
      throw Error(ErrorCode::BadConfig, "unknown config field: " + k);
    }
  }
  NucleusConfig c;
  c.id = get<std::string>(j, "id", "");
  if (c.id.empty()) throw Error(ErrorCode::BadConfig, "config id is required");
  c.listen = get<std::string>(j, "listen", c.listen);
  c.admin_listen = get<std::string>(j, "admin_listen", c.admin_listen);
  parse_endpoint(c.listen);
  parse_endpoint(c.admin_listen);
  c.bootstrap = get<std::vector<std::string>>(j, "bootstrap", {});
  for (const auto& b : c.bootstrap) parse_endpoint(b);
  auto key_path = get<std::string>(j, "identity_key", "");
  if (key_path.empty()) throw Error(ErrorCode::BadConfig, "identity_key is required");
  if (std::filesystem::path(key_path).is_relative()) key_path = (std::filesystem::path(base_dir) / key_path).string();
  try {
    c.identity.key = authz::key_from_store_text(read_file(key_path));
  } catch (const Error& e) {
    throw Error(ErrorCode::BadConfig, "identity key " + key_path + ": " + e.what());
  }
  c.digest_alg = get<std::string>(j, "digest_alg", c.digest_alg);
  if (c.digest_alg != "sha256") throw Error(ErrorCode::BadConfig, "unsupported digest algorithm " + c.digest_alg);
  c.inbox_bound = get<std::size_t>(j, "inbox_bound", c.inbox_bound);
  try {
    if (j.contains("default_limits")) c.default_limits = authz::counters_from_json(j["default_limits"]);
    if (j.contains("admin_policies")) {
      for (const auto& r : j["admin_policies"]) c.admin_policies.push_back(authz::rule_from_json(r));
    }
    if (j.contains("descriptor")) c.descriptor = overlay::descriptor_from_json(j["descriptor"]);
  } catch (const Error& e) {
    throw Error(ErrorCode::BadConfig, e.what());
  }
  c.grace_period = get<std::int64_t>(j, "grace_period", c.grace_period);
  if (j.contains("overlay")) {
    const auto& o = j["overlay"];
    if (!o.is_object()) throw Error(ErrorCode::BadConfig, "overlay must be an object");
    c.overlay.fanout = get<std::size_t>(o, "fanout", c.overlay.fanout);
    c.overlay.ttl_default = get<int>(o, "ttl_default", c.overlay.ttl_default);
    c.overlay.advert_lifetime = get<std::int64_t>(o, "advert_lifetime", c.overlay.advert_lifetime);
    c.overlay.location_lifetime = get<std::int64_t>(o, "location_lifetime", c.overlay.location_lifetime);
    c.overlay.dead_after = get<std::int64_t>(o, "dead_after", c.overlay.dead_after);
    c.overlay.peer_cap = get<std::size_t>(o, "peer_cap", c.overlay.peer_cap);
    c.overlay.advert_cap = get<std::size_t>(o, "advert_cap", c.overlay.advert_cap);
  }
  c.tick_ms = get<std::int64_t>(j, "tick_ms", c.tick_ms);
  c.step_slice = get<std::uint64_t>(j, "step_slice", c.step_slice);
  c.round_delay_ms = get<std::int64_t>(j, "round_delay_ms", c.round_delay_ms);
  c.quiescence_timeout_ms = get<std::int64_t>(j, "quiescence_timeout_ms", c.quiescence_timeout_ms);
  c.request_timeout_ms = get<std::int64_t>(j, "request_timeout_ms", c.request_timeout_ms);
  c.discovery_wait_ms = get<std::int64_t>(j, "discovery_wait_ms", c.discovery_wait_ms);
  c.seed = get<std::uint64_t>(j, "seed", c.seed);
  if (c.tick_ms <= 0 || c.step_slice == 0 || c.inbox_bound == 0) throw Error(ErrorCode::BadConfig, "non-positive tuning value");
  return c;
}

NucleusConfig load_config(const std::string& path) {
  Json j;
  try {
    j = parse_json(read_file(path));
  } catch (const Error& e) {
    throw Error(ErrorCode::BadConfig, path + ": " + e.what());
  }
  return config_from_json(j, std::filesystem::path(path).parent_path().string());
}

}  // namespace dget::nucleus

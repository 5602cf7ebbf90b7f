#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dget/authz/identity.hpp"
#include "dget/authz/policy.hpp"
#include "dget/authz/quota.hpp"
#include "dget/overlay/overlay.hpp"

namespace dget::nucleus {

struct NucleusConfig {
  std::string id;
  std::string listen = "127.0.0.1:0";
  std::string admin_listen = "127.0.0.1:0";
  std::vector<std::string> bootstrap;
  authz::DelegatedKey identity;
  std::string digest_alg = "sha256";
  std::size_t inbox_bound = 1024;
  authz::ResourceLimits default_limits;
  /// Seconds a migrated-away entity's messages are still forwarded.
  std::int64_t grace_period = 30;
  /// Checked after an entity's own manifest rules; also decides deploy and
  /// migration admission. Empty: permit every identity of the key's domain.
  std::vector<authz::PolicyRule> admin_policies;
  overlay::OverlayConfig overlay;
  overlay::Descriptor descriptor;
  std::int64_t tick_ms = 1000;
  /// Instructions per entity per executor round, and the pause between
  /// rounds.
  std::uint64_t step_slice = 4096;
  std::int64_t round_delay_ms = 0;
  std::int64_t quiescence_timeout_ms = 5000;
  std::int64_t request_timeout_ms = 5000;
  /// How long query/locate collect replies.
  std::int64_t discovery_wait_ms = 300;
  std::uint64_t seed = 0;
};

/// DGET_CONFIG, when set, replaces `path`.
std::string resolve_config_path(const std::string& path);

/// Parses the textual config object. The identity key store named by
/// "identity_key" is read relative to the config file. BadConfig on any
/// problem.
NucleusConfig load_config(const std::string& path);
NucleusConfig config_from_json(const Json& j, const std::string& base_dir = ".");

}  // namespace dget::nucleus

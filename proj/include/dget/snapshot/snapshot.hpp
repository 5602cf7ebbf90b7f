#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "dget/vm/vm.hpp"

namespace dget::snapshot {

inline constexpr std::string_view kFormatVersion = "dget-snapshot/1";
inline constexpr std::string_view kDigestAlg = "sha256";

struct ThreadRecord {
  std::string id;
  std::vector<vm::FrameRecord> frames;  // bottom -> top
  vm::BlockRecord block;
  bool operator==(const ThreadRecord&) const = default;
};

struct EntitySnapshot {
  std::string format_version{kFormatVersion};
  std::string digest_alg{kDigestAlg};
  std::string entity_id;
  std::string program;  // canonical instrumented assembly
  std::vector<ThreadRecord> threads;  // ordinal order
  std::map<std::string, vm::MonitorState> monitors;
  vm::Globals globals;
  std::vector<ir::Value> inbox;
  std::vector<std::string> recv_waiters;
  authz::ResourceUsage usage;
  authz::ResourceLimits limits;
  std::uint64_t next_thread = 0;
  std::string digest;

  bool operator==(const EntitySnapshot&) const = default;
};

/// Requires SUSPENDING and quiescent (NotQuiescent otherwise). The digest
/// field is filled in.
EntitySnapshot capture(const vm::Vm& vm);

/// Canonical object text with sorted keys; the digest covers every other
/// field.
std::string encode(const EntitySnapshot& s);

/// Throws UnsupportedVersion, MalformedField or DigestMismatch.
EntitySnapshot decode(std::string_view bytes);

/// Lowercase hex SHA-256 of the encoding without the digest field.
std::string digest(const EntitySnapshot& s);

Json to_json(const EntitySnapshot& s, bool with_digest = true);

enum class LaunchOrder {
  /// Wait-set threads, then execution-wait threads, then the rest.
  Normal,
  /// Execution-wait threads first and released before anything else is
  /// launched. Exists to demonstrate the lost-notification hazard.
  Reversed,
};

struct RestoreOptions {
  LaunchOrder order = LaunchOrder::Normal;
  /// Release the restored entity (flag RUNNING). When false the instance
  /// stays SUSPENDING and quiescent, ready to be captured again.
  bool resume = true;
  /// Instruction cap for replaying a single thread.
  std::uint64_t replay_budget = 1'000'000;
  vm::LoadOptions load;  // entity_id and globals are taken from the snapshot
};

/// Rebuilds an instance: program re-verified and handler-scanned, monitors,
/// globals and inbox restored structurally, frames rebuilt by dispatch
/// replay, threads launched in the requested order. Throws
/// VerificationFailed, LoadRejected, UnknownMethod, ApcOutOfRange,
/// MalformedField or RestoreFailed.
std::unique_ptr<vm::Vm> restore(const EntitySnapshot& s, const RestoreOptions& options = {});

}  // namespace dget::snapshot

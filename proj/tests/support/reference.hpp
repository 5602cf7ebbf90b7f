#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dget/ir/program.hpp"
#include "support/corpus.hpp"

namespace dget::testing {

/// Small-step interpreter written independently of the VM. It runs source or
/// instrumented programs (DISPATCH falls through, SETAPC is inert, CHECK is a
/// probe), one instruction per thread turn, and observes what the VM is
/// supposed to guarantee.
struct RefOptions {
  std::string entity_id = "ref-e1";
  std::uint64_t max_steps = 5'000'000;
  /// Stop (status "stopped") when a thread is about to execute a CHECK after
  /// at least this many instructions, and record the state projection.
  std::optional<std::uint64_t> stop_at_check_after;
};

struct RefFrame {
  std::string method;
  std::vector<ir::Value> locals;
  std::int64_t apc = -1;  // last SETAPC executed in the frame, -1 before any
  bool operator==(const RefFrame&) const = default;
};

struct RefThread {
  std::string id;
  std::vector<RefFrame> frames;  // bottom -> top
  bool operator==(const RefThread&) const = default;
};

struct RefResult {
  std::string status;  // completed | fault:<tag> | deadlock | step_limit
  std::vector<std::string> output;
  Globals globals;
  std::uint64_t steps = 0;
  std::uint64_t checks = 0;
  std::uint64_t nonzero_depth_checks = 0;
  /// Longest run of instructions a thread executed without passing a CHECK.
  std::uint64_t max_check_gap = 0;
  /// Same, where RET, RETV, THROW, SPAWN, blocking instructions and raised
  /// exceptions also close a run (the points at which a terminated entity
  /// stops).
  std::uint64_t max_observation_gap = 0;
  std::uint64_t threads = 0;
  std::vector<std::pair<std::string, std::string>> sent;  // messages to other entities
  std::vector<RefThread> projection;  // live threads when stopped
};

RefResult run_reference(const ir::GhostProgram& program, const Globals& inputs,
                        const RefOptions& options = {});

inline bool same_observables(const RefResult& a, const RefResult& b) {
  return a.status == b.status && a.output == b.output && a.globals == b.globals;
}

}  // namespace dget::testing

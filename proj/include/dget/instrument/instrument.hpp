#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "dget/ir/program.hpp"
#include "dget/ir/verifier.hpp"

namespace dget::instrument {

struct InstrumentedProgram {
  ir::GhostProgram program;
  std::string source_digest;
  std::vector<ir::VerifyWarning> warnings;

  const ir::DispatchTable& table(const std::string& method) const {
    return *program.methods.at(method).dispatch;
  }
};

/// Stores every pending operand to fresh locals and reloads it right before
/// each CALL/SPAWN, and around each blocking instruction, so these sites run
/// on an empty operand stack. Throws NonZeroDepthAtCheckpoint when a loop
/// head carries operands.
ir::GhostProgram spill_pass(const ir::GhostProgram& p);

/// Inserts CHECK at index 0 and at every back-edge target.
ir::GhostProgram inject_checkpoints(const ir::GhostProgram& p);

/// Registers every monitor id the program references in declared_monitors.
/// WAIT/NOTIFY on ids never locked in the program are reported as
/// UnknownMonitor warnings.
ir::GhostProgram rewrite_sync(const ir::GhostProgram& p, std::vector<ir::VerifyWarning>* warnings = nullptr);

/// Numbers resumption sites, places SETAPC k at each site head, prepends
/// DISPATCH and builds the per-method tables.
InstrumentedProgram build_dispatch(const ir::GhostProgram& p);

struct ScanResult {
  /// (method, handler index) of catch-all handlers; the VM never lets them
  /// observe the termination signal.
  std::vector<std::pair<std::string, std::size_t>> bypassed;
};

/// Throws LoadRejected if any handler names the termination tag.
ScanResult scan_termination_handlers(const ir::GhostProgram& p);

bool contains_instrumentation(const ir::GhostProgram& p);

/// verify(SOURCE) -> scan -> spill -> checkpoints -> sync -> dispatch ->
/// verify(INSTRUMENTED). Verification failures are reported as
/// VerificationFailed with the underlying code in the message.
InstrumentedProgram instrument(const ir::GhostProgram& p);

/// Re-checks a program received in instrumented form (migration arrival).
InstrumentedProgram accept_instrumented(const ir::GhostProgram& p);

/// Indices targeted by a branch at an equal or higher index.
std::vector<std::size_t> back_edge_targets(const ir::MethodDef& m);

/// Longest run of instructions a thread can execute, from any point of an
/// instrumented program, before it reaches an instruction at which the
/// termination signal is observed (CHECK, RET, RETV, THROW, SPAWN, blocking
/// instructions, or the entry CHECK of a callee).
std::size_t termination_distance(const ir::GhostProgram& instrumented);

}  // namespace dget::instrument

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dget {

/// Every failure surfaced by the runtime carries one of these codes. The
/// code name is what crosses process boundaries (admin API, CLI, wire ERROR
/// frames), so names are stable.
enum class ErrorCode {
  // ghost-ir
  SyntaxError,
  DuplicateMethod,
  UnknownLabel,
  UnknownMethod,
  ArityMismatch,
  BadLocalIndex,
  BadHandler,
  UnreachableCode,
  FallsOffEnd,
  MixedReturn,
  UnknownSyscall,
  InconsistentStackDepth,
  StackUnderflow,
  NonZeroDepthAtCheckpoint,
  ForbiddenOpcodeInSource,
  MalformedDispatch,
  // instrumenter
  VerificationFailed,
  NonZeroDepthAtTarget,
  LoadRejected,
  AlreadyInstrumented,
  // ghost-vm
  RuntimeFault,
  IllegalFlagTransition,
  InboxOverflow,
  NotQuiescent,
  // snapshot
  DigestMismatch,
  UnsupportedVersion,
  MalformedField,
  ApcOutOfRange,
  RestoreFailed,
  // authz
  WrongDomain,
  InvalidWindow,
  Expired,
  NotYetValid,
  SignatureInvalid,
  ChainBroken,
  ChainExpired,
  WindowNotNested,
  UnknownCounter,
  // nucleus
  AuthFailed,
  PolicyDenied,
  UnknownEntity,
  IllegalTransition,
  UnknownOperation,
  Timeout,
  TargetRefused,
  QuiescenceTimeout,
  TransferFailed,
  DuplicateEntity,
  AddressInUse,
  BadConfig,
  BadRequest,
  UnknownMonitor,
  TransportError,
};

std::string_view code_name(ErrorCode code);

/// Parses a code name produced by code_name(); unknown names map to
/// TransportError.
ErrorCode code_from_name(std::string_view name);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(code_name(code)) + ": " + message),
        code_(code),
        detail_(message) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace dget

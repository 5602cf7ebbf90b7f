#include "dget/common/error.hpp"

#include <array>
#include <utility>

namespace dget {
namespace {

constexpr std::array kNames = {
    std::pair{ErrorCode::SyntaxError, std::string_view{"SyntaxError"}},
    std::pair{ErrorCode::DuplicateMethod, std::string_view{"DuplicateMethod"}},
    std::pair{ErrorCode::UnknownLabel, std::string_view{"UnknownLabel"}},
    std::pair{ErrorCode::UnknownMethod, std::string_view{"UnknownMethod"}},
    std::pair{ErrorCode::ArityMismatch, std::string_view{"ArityMismatch"}},
    std::pair{ErrorCode::BadLocalIndex, std::string_view{"BadLocalIndex"}},
    std::pair{ErrorCode::BadHandler, std::string_view{"BadHandler"}},
    std::pair{ErrorCode::UnreachableCode, std::string_view{"UnreachableCode"}},
    std::pair{ErrorCode::FallsOffEnd, std::string_view{"FallsOffEnd"}},
    std::pair{ErrorCode::MixedReturn, std::string_view{"MixedReturn"}},
    std::pair{ErrorCode::UnknownSyscall, std::string_view{"UnknownSyscall"}},
    std::pair{ErrorCode::InconsistentStackDepth, std::string_view{"InconsistentStackDepth"}},
    std::pair{ErrorCode::StackUnderflow, std::string_view{"StackUnderflow"}},
    std::pair{ErrorCode::NonZeroDepthAtCheckpoint, std::string_view{"NonZeroDepthAtCheckpoint"}},
    std::pair{ErrorCode::ForbiddenOpcodeInSource, std::string_view{"ForbiddenOpcodeInSource"}},
    std::pair{ErrorCode::MalformedDispatch, std::string_view{"MalformedDispatch"}},
    std::pair{ErrorCode::VerificationFailed, std::string_view{"VerificationFailed"}},
    std::pair{ErrorCode::NonZeroDepthAtTarget, std::string_view{"NonZeroDepthAtTarget"}},
    std::pair{ErrorCode::LoadRejected, std::string_view{"LoadRejected"}},
    std::pair{ErrorCode::AlreadyInstrumented, std::string_view{"AlreadyInstrumented"}},
    std::pair{ErrorCode::RuntimeFault, std::string_view{"RuntimeFault"}},
    std::pair{ErrorCode::IllegalFlagTransition, std::string_view{"IllegalFlagTransition"}},
    std::pair{ErrorCode::InboxOverflow, std::string_view{"InboxOverflow"}},
    std::pair{ErrorCode::NotQuiescent, std::string_view{"NotQuiescent"}},
    std::pair{ErrorCode::DigestMismatch, std::string_view{"DigestMismatch"}},
    std::pair{ErrorCode::UnsupportedVersion, std::string_view{"UnsupportedVersion"}},
    std::pair{ErrorCode::MalformedField, std::string_view{"MalformedField"}},
    std::pair{ErrorCode::ApcOutOfRange, std::string_view{"ApcOutOfRange"}},
    std::pair{ErrorCode::RestoreFailed, std::string_view{"RestoreFailed"}},
    std::pair{ErrorCode::WrongDomain, std::string_view{"WrongDomain"}},
    std::pair{ErrorCode::InvalidWindow, std::string_view{"InvalidWindow"}},
    std::pair{ErrorCode::Expired, std::string_view{"Expired"}},
    std::pair{ErrorCode::NotYetValid, std::string_view{"NotYetValid"}},
    std::pair{ErrorCode::SignatureInvalid, std::string_view{"SignatureInvalid"}},
    std::pair{ErrorCode::ChainBroken, std::string_view{"ChainBroken"}},
    std::pair{ErrorCode::ChainExpired, std::string_view{"ChainExpired"}},
    std::pair{ErrorCode::WindowNotNested, std::string_view{"WindowNotNested"}},
    std::pair{ErrorCode::UnknownCounter, std::string_view{"UnknownCounter"}},
    std::pair{ErrorCode::AuthFailed, std::string_view{"AuthFailed"}},
    std::pair{ErrorCode::PolicyDenied, std::string_view{"PolicyDenied"}},
    std::pair{ErrorCode::UnknownEntity, std::string_view{"UnknownEntity"}},
    std::pair{ErrorCode::IllegalTransition, std::string_view{"IllegalTransition"}},
    std::pair{ErrorCode::UnknownOperation, std::string_view{"UnknownOperation"}},
    std::pair{ErrorCode::Timeout, std::string_view{"Timeout"}},
    std::pair{ErrorCode::TargetRefused, std::string_view{"TargetRefused"}},
    std::pair{ErrorCode::QuiescenceTimeout, std::string_view{"QuiescenceTimeout"}},
    std::pair{ErrorCode::TransferFailed, std::string_view{"TransferFailed"}},
    std::pair{ErrorCode::DuplicateEntity, std::string_view{"DuplicateEntity"}},
    std::pair{ErrorCode::AddressInUse, std::string_view{"AddressInUse"}},
    std::pair{ErrorCode::BadConfig, std::string_view{"BadConfig"}},
    std::pair{ErrorCode::BadRequest, std::string_view{"BadRequest"}},
    std::pair{ErrorCode::UnknownMonitor, std::string_view{"UnknownMonitor"}},
    std::pair{ErrorCode::TransportError, std::string_view{"TransportError"}},
};

}  // namespace

std::string_view code_name(ErrorCode code) {
  for (const auto& [c, name] : kNames) {
    if (c == code) return name;
  }
  return "Unknown";
}

ErrorCode code_from_name(std::string_view name) {
  for (const auto& [c, n] : kNames) {
    if (n == name) return c;
  }
  return ErrorCode::TransportError;
}

}  // namespace dget

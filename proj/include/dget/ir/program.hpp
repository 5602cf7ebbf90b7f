#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dget/ir/value.hpp"

namespace dget::ir {

enum class Opcode {
  Const,
  Load,
  Store,
  Add,
  Sub,
  Mul,
  Div,
  Cmp,
  Jmp,
  Jz,
  Call,
  Ret,
  RetV,
  Lock,
  Unlock,
  Wait,
  Notify,
  NotifyAll,
  Spawn,
  Join,
  Sleep,
  GGet,
  GSet,
  Sys,
  Throw,
  // Emitted only by the instrumenter.
  Check,
  SetApc,
  Dispatch,
};

std::string_view mnemonic(Opcode op);
std::optional<Opcode> opcode_from_mnemonic(std::string_view text);

/// One ghost instruction. Which fields are meaningful depends on the opcode:
///   CONST          value
///   LOAD/STORE, LOCK/UNLOCK/WAIT/NOTIFY/NOTIFYALL, JOIN, SLEEP
///                  operand = local index
///   JMP/JZ         operand = target instruction index
///   CALL/SPAWN/SYS name + nargs
///   GGET/GSET      name = global key
///   THROW          name = exception tag
///   SETAPC         operand = site ordinal
struct Instruction {
  Opcode op = Opcode::Ret;
  Value value{std::int64_t{0}};
  std::int64_t operand = 0;
  std::string name;
  std::uint32_t nargs = 0;

  bool operator==(const Instruction&) const = default;
};

/// Convenience constructors, mostly for tests and the instrumenter.
namespace ins {
Instruction konst(Value v);
Instruction load(std::int64_t i);
Instruction store(std::int64_t i);
Instruction op(Opcode o);
Instruction jump(Opcode o, std::int64_t target);
Instruction call(Opcode o, std::string method, std::uint32_t nargs);
Instruction local_op(Opcode o, std::int64_t i);
Instruction named(Opcode o, std::string name);
Instruction setapc(std::int64_t ordinal);
}  // namespace ins

struct HandlerEntry {
  std::size_t from = 0;
  std::size_t to = 0;
  std::size_t target = 0;
  std::string tag;  // "*" catches everything except the termination signal

  bool operator==(const HandlerEntry&) const = default;
};

enum class SiteKind { CheckSite, CallSite };

struct DispatchEntry {
  std::size_t target = 0;
  SiteKind kind = SiteKind::CheckSite;
  bool operator==(const DispatchEntry&) const = default;
};

/// Resumption targets of one instrumented method. Ordinals are dense: entry k
/// belongs to the site whose SETAPC carries k.
struct DispatchTable {
  std::vector<DispatchEntry> sites;
  std::size_t default_target = 1;
  bool operator==(const DispatchTable&) const = default;
};

struct MethodDef {
  std::string name;
  std::uint32_t nargs = 0;
  std::uint32_t nlocals = 0;
  std::vector<Instruction> body;
  std::vector<HandlerEntry> handlers;
  std::optional<DispatchTable> dispatch;

  bool operator==(const MethodDef&) const = default;
};

struct GhostProgram {
  std::string name;
  std::string entry = "main";
  std::map<std::string, MethodDef> methods;
  std::vector<std::string> declared_monitors;  // sorted, unique
  /// Digest of the source program; present only on instrumented programs.
  std::optional<std::string> instrumented_from;

  bool operator==(const GhostProgram&) const = default;

  const MethodDef* find(std::string_view method) const;
};

/// Reserved exception tag of the soft-termination signal.
inline constexpr std::string_view kTerminatedTag = "dget.terminated";
inline constexpr std::string_view kCatchAllTag = "*";

struct SyscallInfo {
  std::string_view name;
  std::uint32_t nargs;
  std::uint32_t pushes;
  bool blocking;
};

/// The EntityContext surface available to ghost code.
const SyscallInfo* find_syscall(std::string_view name);

inline bool is_branch(Opcode op) { return op == Opcode::Jmp || op == Opcode::Jz; }

/// Instructions at which a thread can stay blocked; all of them are
/// resumption sites that must execute with an empty operand stack.
bool is_blocking(const Instruction& in);

/// CALL/SPAWN and blocking instructions: resumption sites of kind CallSite.
bool is_call_site(const Instruction& in);

bool is_terminator(Opcode op);

}  // namespace dget::ir

#include "dget/ir/program.hpp"

#include <array>
#include <utility>

namespace dget::ir {
namespace {

constexpr std::array kMnemonics = {
    std::pair{Opcode::Const, std::string_view{"CONST"}},
    std::pair{Opcode::Load, std::string_view{"LOAD"}},
    std::pair{Opcode::Store, std::string_view{"STORE"}},
    std::pair{Opcode::Add, std::string_view{"ADD"}},
    std::pair{Opcode::Sub, std::string_view{"SUB"}},
    std::pair{Opcode::Mul, std::string_view{"MUL"}},
    std::pair{Opcode::Div, std::string_view{"DIV"}},
    std::pair{Opcode::Cmp, std::string_view{"CMP"}},
    std::pair{Opcode::Jmp, std::string_view{"JMP"}},
    std::pair{Opcode::Jz, std::string_view{"JZ"}},
    std::pair{Opcode::Call, std::string_view{"CALL"}},
    std::pair{Opcode::Ret, std::string_view{"RET"}},
    std::pair{Opcode::RetV, std::string_view{"RETV"}},
    std::pair{Opcode::Lock, std::string_view{"LOCK"}},
    std::pair{Opcode::Unlock, std::string_view{"UNLOCK"}},
    std::pair{Opcode::Wait, std::string_view{"WAIT"}},
    std::pair{Opcode::Notify, std::string_view{"NOTIFY"}},
    std::pair{Opcode::NotifyAll, std::string_view{"NOTIFYALL"}},
    std::pair{Opcode::Spawn, std::string_view{"SPAWN"}},
    std::pair{Opcode::Join, std::string_view{"JOIN"}},
    std::pair{Opcode::Sleep, std::string_view{"SLEEP"}},
    std::pair{Opcode::GGet, std::string_view{"GGET"}},
    std::pair{Opcode::GSet, std::string_view{"GSET"}},
    std::pair{Opcode::Sys, std::string_view{"SYS"}},
    std::pair{Opcode::Throw, std::string_view{"THROW"}},
    std::pair{Opcode::Check, std::string_view{"CHECK"}},
    std::pair{Opcode::SetApc, std::string_view{"SETAPC"}},
    std::pair{Opcode::Dispatch, std::string_view{"DISPATCH"}},
};

constexpr std::array kSyscalls = {
    SyscallInfo{"send", 2, 0, false},   SyscallInfo{"recv", 0, 1, true},
    SyscallInfo{"publish", 1, 0, false}, SyscallInfo{"query", 2, 1, false},
    SyscallInfo{"locate", 1, 1, false}, SyscallInfo{"log", 1, 0, false},
    SyscallInfo{"limits", 0, 1, false}, SyscallInfo{"usage", 0, 1, false},
    SyscallInfo{"self", 0, 1, false},
};

}  // namespace

std::string_view mnemonic(Opcode op) {
  for (const auto& [o, m] : kMnemonics) {
    if (o == op) return m;
  }
  return "?";
}

std::optional<Opcode> opcode_from_mnemonic(std::string_view text) {
  for (const auto& [o, m] : kMnemonics) {
    if (m == text) return o;
  }
  return std::nullopt;
}

namespace ins {
Instruction konst(Value v) {
  Instruction in;
  in.op = Opcode::Const;
  in.value = std::move(v);
  return in;
}
Instruction load(std::int64_t i) { return local_op(Opcode::Load, i); }
Instruction store(std::int64_t i) { return local_op(Opcode::Store, i); }
Instruction op(Opcode o) {
  Instruction in;
  in.op = o;
  return in;
}
Instruction jump(Opcode o, std::int64_t target) {
  Instruction in;
  in.op = o;
  in.operand = target;
  return in;
}
Instruction call(Opcode o, std::string method, std::uint32_t nargs) {
  Instruction in;
  in.op = o;
  in.name = std::move(method);
  in.nargs = nargs;
  return in;
}
Instruction local_op(Opcode o, std::int64_t i) {
  Instruction in;
  in.op = o;
  in.operand = i;
  return in;
}
Instruction named(Opcode o, std::string name) {
  Instruction in;
  in.op = o;
  in.name = std::move(name);
  return in;
}
Instruction setapc(std::int64_t ordinal) { return local_op(Opcode::SetApc, ordinal); }
}  // namespace ins

const MethodDef* GhostProgram::find(std::string_view method) const {
  auto it = methods.find(std::string(method));
  return it == methods.end() ? nullptr : &it->second;
}

const SyscallInfo* find_syscall(std::string_view name) {
  for (const auto& s : kSyscalls) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

bool is_blocking(const Instruction& in) {
  switch (in.op) {
    case Opcode::Lock:
    case Opcode::Wait:
    case Opcode::Join:
    case Opcode::Sleep:
      return true;
    case Opcode::Sys: {
      const auto* info = find_syscall(in.name);
      return info != nullptr && info->blocking;
    }
    default:
      return false;
  }
}

bool is_call_site(const Instruction& in) {
  return in.op == Opcode::Call || in.op == Opcode::Spawn || is_blocking(in);
}

bool is_terminator(Opcode op) {
  return op == Opcode::Ret || op == Opcode::RetV || op == Opcode::Throw || op == Opcode::Jmp;
}

}  // namespace dget::ir

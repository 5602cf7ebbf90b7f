#include "dget/ir/verifier.hpp"

#include <deque>
#include <set>

#include "dget/common/error.hpp"

namespace dget::ir {
namespace {

[[noreturn]] void fail(ErrorCode code, const std::string& method, std::size_t index,
                       const std::string& reason) {
  throw Error(code, method + "@" + std::to_string(index) + ": " + reason);
}

bool uses_local(Opcode op) {
  switch (op) {
    case Opcode::Load:
    case Opcode::Store:
    case Opcode::Lock:
    case Opcode::Unlock:
    case Opcode::Wait:
    case Opcode::Notify:
    case Opcode::NotifyAll:
    case Opcode::Join:
    case Opcode::Sleep:
      return true;
    default:
      return false;
  }
}

bool instrumenter_only(Opcode op) {
  return op == Opcode::Check || op == Opcode::SetApc || op == Opcode::Dispatch;
}

void check_structure(const GhostProgram& program, const MethodDef& m, VerifyMode mode) {
  const auto& name = m.name;
  if (m.body.empty()) fail(ErrorCode::SyntaxError, name, 0, "empty body");
  if (m.nargs > m.nlocals) fail(ErrorCode::BadLocalIndex, name, 0, "nargs exceeds nlocals");
  const auto size = m.body.size();
  bool has_ret = false;
  bool has_retv = false;
  for (std::size_t i = 0; i < size; ++i) {
    const auto& in = m.body[i];
    if (mode == VerifyMode::Source && instrumenter_only(in.op)) {
      fail(ErrorCode::ForbiddenOpcodeInSource, name, i, std::string(mnemonic(in.op)));
    }
    if (uses_local(in.op) && (in.operand < 0 || in.operand >= static_cast<std::int64_t>(m.nlocals))) {
      fail(ErrorCode::BadLocalIndex, name, i, "local " + std::to_string(in.operand));
    }
    if (is_branch(in.op) && (in.operand < 0 || in.operand >= static_cast<std::int64_t>(size))) {
      fail(ErrorCode::UnknownLabel, name, i, "jump target out of range");
    }
    if (in.op == Opcode::Call || in.op == Opcode::Spawn) {
      const auto* callee = program.find(in.name);
      if (!callee) fail(ErrorCode::UnknownMethod, name, i, in.name);
      if (callee->nargs != in.nargs) fail(ErrorCode::ArityMismatch, name, i, in.name);
    }
    if (in.op == Opcode::Sys) {
      const auto* sys = find_syscall(in.name);
      if (!sys) fail(ErrorCode::UnknownSyscall, name, i, in.name);
      if (sys->nargs != in.nargs) fail(ErrorCode::ArityMismatch, name, i, in.name);
    }
    if (in.op == Opcode::Dispatch && i != 0) fail(ErrorCode::MalformedDispatch, name, i, "DISPATCH not at 0");
    has_ret |= in.op == Opcode::Ret;
    has_retv |= in.op == Opcode::RetV;
  }
  if (has_ret && has_retv) fail(ErrorCode::MixedReturn, name, 0, "RET and RETV in one method");
  for (const auto& h : m.handlers) {
    if (!(h.from < h.to && h.to <= size && h.target < size) || h.tag.empty()) {
      fail(ErrorCode::BadHandler, name, h.from, "handler range");
    }
  }
  if (mode == VerifyMode::Instrumented) {
    if (m.body[0].op != Opcode::Dispatch) fail(ErrorCode::MalformedDispatch, name, 0, "missing DISPATCH");
    if (!m.dispatch) fail(ErrorCode::MalformedDispatch, name, 0, "missing dispatch table");
    const auto& t = *m.dispatch;
    if (t.default_target >= size) fail(ErrorCode::MalformedDispatch, name, 0, "default out of range");
    for (std::size_t k = 0; k < t.sites.size(); ++k) {
      const auto idx = t.sites[k].target;
      if (idx >= size || m.body[idx].op != Opcode::SetApc ||
          m.body[idx].operand != static_cast<std::int64_t>(k)) {
        fail(ErrorCode::MalformedDispatch, name, idx, "dispatch target is not SETAPC " + std::to_string(k));
      }
    }
    for (std::size_t i = 0; i < size; ++i) {
      if (m.body[i].op == Opcode::SetApc &&
          (m.body[i].operand < 0 || m.body[i].operand >= static_cast<std::int64_t>(t.sites.size()))) {
        fail(ErrorCode::MalformedDispatch, name, i, "SETAPC ordinal out of range");
      }
    }
  } else if (mode == VerifyMode::Source && m.dispatch) {
    fail(ErrorCode::ForbiddenOpcodeInSource, name, 0, "dispatch table in source program");
  }
}

}  // namespace

bool returns_value(const MethodDef& method) {
  for (const auto& in : method.body) {
    if (in.op == Opcode::RetV) return true;
  }
  return false;
}

int pops(const Instruction& in, const GhostProgram& program) {
  switch (in.op) {
    case Opcode::Store:
    case Opcode::Jz:
    case Opcode::RetV:
    case Opcode::GSet:
      return 1;
    case Opcode::Add:
    case Opcode::Sub:
    case Opcode::Mul:
    case Opcode::Div:
    case Opcode::Cmp:
      return 2;
    case Opcode::Call:
    case Opcode::Spawn:
    case Opcode::Sys:
      return static_cast<int>(in.nargs);
    default:
      (void)program;
      return 0;
  }
}

int pushes(const Instruction& in, const GhostProgram& program) {
  switch (in.op) {
    case Opcode::Const:
    case Opcode::Load:
    case Opcode::Add:
    case Opcode::Sub:
    case Opcode::Mul:
    case Opcode::Div:
    case Opcode::Cmp:
    case Opcode::Spawn:
    case Opcode::GGet:
      return 1;
    case Opcode::Call: {
      const auto* callee = program.find(in.name);
      return callee != nullptr && returns_value(*callee) ? 1 : 0;
    }
    case Opcode::Sys: {
      const auto* sys = find_syscall(in.name);
      return sys != nullptr ? static_cast<int>(sys->pushes) : 0;
    }
    default:
      return 0;
  }
}

std::vector<std::size_t> successors(const MethodDef& method, std::size_t index) {
  const auto& in = method.body[index];
  std::vector<std::size_t> out;
  switch (in.op) {
    case Opcode::Ret:
    case Opcode::RetV:
    case Opcode::Throw:
      break;
    case Opcode::Jmp:
      out.push_back(static_cast<std::size_t>(in.operand));
      break;
    case Opcode::Jz:
      out.push_back(index + 1);
      out.push_back(static_cast<std::size_t>(in.operand));
      break;
    case Opcode::Dispatch:
      out.push_back(index + 1);
      if (method.dispatch) {
        out.push_back(method.dispatch->default_target);
        for (const auto& e : method.dispatch->sites) out.push_back(e.target);
      }
      break;
    default:
      out.push_back(index + 1);
  }
  return out;
}

VerificationReport verify(const GhostProgram& program, VerifyMode mode) {
  VerificationReport report;
  const auto* entry = program.find(program.entry);
  if (!entry) throw Error(ErrorCode::UnknownMethod, "entry method '" + program.entry + "' missing");
  if (entry->nargs != 0) throw Error(ErrorCode::ArityMismatch, "entry method takes arguments");

  for (const auto& [name, m] : program.methods) check_structure(program, m, mode);

  for (const auto& [name, m] : program.methods) {
    const auto size = m.body.size();
    MethodReport mr;
    mr.returns_value = returns_value(m);
    mr.depth.assign(size, -1);

    std::deque<std::size_t> work;
    auto reach = [&](std::size_t idx, int depth, std::size_t from) {
      if (idx >= size) fail(ErrorCode::FallsOffEnd, name, from, "execution falls off the body");
      if (mr.depth[idx] < 0) {
        mr.depth[idx] = depth;
        work.push_back(idx);
      } else if (mr.depth[idx] != depth) {
        fail(ErrorCode::InconsistentStackDepth, name, idx,
             "depth " + std::to_string(mr.depth[idx]) + " vs " + std::to_string(depth));
      }
    };
    reach(0, 0, 0);
    // A raised exception clears the operand stack before the handler runs.
    for (const auto& h : m.handlers) reach(h.target, 0, h.target);

    while (!work.empty()) {
      auto i = work.front();
      work.pop_front();
      const auto& in = m.body[i];
      int depth = mr.depth[i];
      int p = pops(in, program);
      if (depth < p) fail(ErrorCode::StackUnderflow, name, i, std::string(mnemonic(in.op)));
      int after = depth - p + pushes(in, program);
      if (in.op == Opcode::Ret && depth > 0) {
        report.warnings.push_back({"NonEmptyStackAtReturn", name, i,
                                   std::to_string(depth) + " value(s) discarded"});
      }
      if (in.op == Opcode::RetV && depth > 1) {
        report.warnings.push_back({"NonEmptyStackAtReturn", name, i,
                                   std::to_string(depth - 1) + " value(s) discarded"});
      }
      for (auto s : successors(m, i)) reach(s, after, i);
    }

    for (std::size_t i = 0; i < size; ++i) {
      if (mr.depth[i] < 0) fail(ErrorCode::UnreachableCode, name, i, "unreachable instruction");
    }
    if (mode == VerifyMode::Instrumented) {
      for (std::size_t i = 0; i < size; ++i) {
        if (m.body[i].op == Opcode::Check && mr.depth[i] != 0) {
          fail(ErrorCode::NonZeroDepthAtCheckpoint, name, i, "CHECK at depth " + std::to_string(mr.depth[i]));
        }
      }
      for (auto s : successors(m, 0)) {
        if (mr.depth[s] != 0) fail(ErrorCode::NonZeroDepthAtCheckpoint, name, s, "dispatch target depth");
      }
    }
    report.methods.emplace(name, std::move(mr));
  }
  return report;
}

}  // namespace dget::ir

#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "dget/ir/program.hpp"

namespace dget::ir {

/// Source: the programmer-visible instruction set only.
/// Intermediate: any opcode, no dispatch requirements (between instrumenter
/// passes).
/// Instrumented: DISPATCH at index 0 of every method, zero depth at every
/// CHECK and dispatch target.
enum class VerifyMode { Source, Intermediate, Instrumented };

struct VerifyWarning {
  std::string kind;  // NonEmptyStackAtReturn, UnknownMonitor
  std::string method;
  std::size_t index = 0;
  std::string message;
};

struct MethodReport {
  /// Operand-stack depth before each instruction.
  std::vector<int> depth;
  bool returns_value = false;
};

struct VerificationReport {
  std::map<std::string, MethodReport> methods;
  std::vector<VerifyWarning> warnings;

  int depth_at(const std::string& method, std::size_t index) const {
    return methods.at(method).depth.at(index);
  }
};

/// Structural checks plus forward abstract interpretation of operand-stack
/// depth. Throws Error on the first violation.
VerificationReport verify(const GhostProgram& program, VerifyMode mode);

/// Stack effect helpers shared with the instrumenter.
int pops(const Instruction& in, const GhostProgram& program);
int pushes(const Instruction& in, const GhostProgram& program);

/// True iff the method contains RETV (CALL pushes the callee's result).
bool returns_value(const MethodDef& method);

/// Successor indices inside the method (not handler edges).
std::vector<std::size_t> successors(const MethodDef& method, std::size_t index);

}  // namespace dget::ir

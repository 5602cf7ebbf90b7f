#pragma once

#include <string>
#include <string_view>

#include "dget/ir/program.hpp"

namespace dget::ir {

/// Parses the line-oriented ".ghost" assembly format.
///
///   .program NAME
///   .entry NAME                 (default: main)
///   .monitor NAME               (declared mobile monitor, repeatable)
///   .instrumented DIGEST        (instrumented programs only)
///   .method NAME NARGS NLOCALS
///   label:
///     MNEMONIC operands...
///   .handler FROM TO TARGET TAG (indices or labels)
///   .dispatch ORDINAL TARGET check|call
///   .dispatch default TARGET
///   .end
///
/// `#` starts a comment outside string literals. Throws Error with
/// SyntaxError, DuplicateMethod or UnknownLabel.
GhostProgram parse_assembly(std::string_view text);

/// Canonical text: methods in name order, one instruction per line, jump
/// targets named L<index>. parse_assembly(emit_assembly(p)) == p.
std::string emit_assembly(const GhostProgram& program);

}  // namespace dget::ir

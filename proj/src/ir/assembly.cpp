#include "dget/ir/assembly.hpp"

#include <cctype>
#include <charconv>
#include <set>
#include <sstream>
#include <unordered_map>

#include "dget/common/error.hpp"

namespace dget::ir {
namespace {

struct Token {
  std::string text;
  bool quoted = false;
};

[[noreturn]] void syntax(std::size_t line, const std::string& reason) {
  throw Error(ErrorCode::SyntaxError, "line " + std::to_string(line) + ": " + reason);
}

std::vector<Token> tokenize(std::string_view line, std::size_t lineno) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < line.size()) {
    char c = line[i];
    if (c == ' ' || c == '\t' || c == '\r' || c == ',') {
      ++i;
      continue;
    }
    if (c == '#') break;
    if (c == '"') {
      Token tok{"", true};
      ++i;
      bool closed = false;
      while (i < line.size()) {
        char d = line[i++];
        if (d == '"') {
          closed = true;
          break;
        }
        if (d == '\\') {
          if (i >= line.size()) syntax(lineno, "dangling escape");
          char e = line[i++];
          switch (e) {
            case 'n': tok.text.push_back('\n'); break;
            case 't': tok.text.push_back('\t'); break;
            case 'r': tok.text.push_back('\r'); break;
            case '"': tok.text.push_back('"'); break;
            case '\\': tok.text.push_back('\\'); break;
            default: syntax(lineno, std::string("unknown escape \\") + e);
          }
        } else {
          tok.text.push_back(d);
        }
      }
      if (!closed) syntax(lineno, "unterminated string");
      out.push_back(std::move(tok));
      continue;
    }
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r' &&
           line[j] != ',' && line[j] != '#' && line[j] != '"')
      ++j;
    out.push_back(Token{std::string(line.substr(i, j - i)), false});
    i = j;
  }
  return out;
}

std::optional<std::int64_t> parse_int(std::string_view s) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

bool is_identifier(std::string_view s) {
  if (s.empty()) return false;
  if (!(std::isalpha(static_cast<unsigned char>(s[0])) || s[0] == '_')) return false;
  for (char c : s) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '$'))
      return false;
  }
  return true;
}

Value parse_literal(const Token& tok, std::size_t lineno) {
  if (tok.quoted) return tok.text;
  if (tok.text == "true") return true;
  if (tok.text == "false") return false;
  if (auto v = parse_int(tok.text)) return *v;
  if (tok.text.starts_with("monitor:") && tok.text.size() > 8) return MonitorRef{tok.text.substr(8)};
  if (tok.text.starts_with("thread:") && tok.text.size() > 7) return ThreadRef{tok.text.substr(7)};
  syntax(lineno, "bad literal '" + tok.text + "'");
}

std::uint32_t parse_count(const Token& tok, std::size_t lineno, const char* what) {
  auto v = parse_int(tok.text);
  if (tok.quoted || !v || *v < 0 || *v > 0xFFFF) syntax(lineno, std::string("bad ") + what);
  return static_cast<std::uint32_t>(*v);
}

/// Operand that is either an integer index or a label; labels are resolved
/// when the method block closes.
struct PendingRef {
  std::size_t lineno;
  std::string label;
  std::int64_t index = -1;
};

struct PendingHandler {
  PendingRef from, to, target;
  std::string tag;
};

struct MethodBuilder {
  MethodDef def;
  std::size_t start_line = 0;
  std::unordered_map<std::string, std::size_t> labels;
  std::vector<std::pair<std::size_t, PendingRef>> jumps;  // instruction index, label
  std::vector<PendingHandler> handlers;
  std::vector<std::pair<std::size_t, std::pair<std::int64_t, PendingRef>>> dispatch;  // line, (ordinal|-1 default, target)
  std::vector<SiteKind> dispatch_kinds;
};

PendingRef parse_ref(const Token& tok, std::size_t lineno) {
  if (tok.quoted) syntax(lineno, "quoted index");
  if (auto v = parse_int(tok.text)) {
    if (*v < 0) syntax(lineno, "negative index");
    return PendingRef{lineno, "", *v};
  }
  if (!is_identifier(tok.text)) syntax(lineno, "bad label '" + tok.text + "'");
  return PendingRef{lineno, tok.text, -1};
}

std::size_t resolve(const MethodBuilder& mb, const PendingRef& ref) {
  if (ref.index >= 0) return static_cast<std::size_t>(ref.index);
  auto it = mb.labels.find(ref.label);
  if (it == mb.labels.end()) {
    throw Error(ErrorCode::UnknownLabel, "line " + std::to_string(ref.lineno) + ": '" + ref.label +
                                             "' in method " + mb.def.name);
  }
  return it->second;
}

std::string bare_word(const Token& tok, std::size_t lineno, const char* what) {
  if (tok.text.empty()) syntax(lineno, std::string("empty ") + what);
  for (char c : tok.text) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '"' || c == '#' || c == ',')
      syntax(lineno, std::string("bad ") + what);
  }
  return tok.text;
}

Instruction parse_instruction(const std::vector<Token>& toks, std::size_t lineno,
                              MethodBuilder& mb) {
  auto op = toks[0].quoted ? std::nullopt : opcode_from_mnemonic(toks[0].text);
  if (!op) syntax(lineno, "unknown mnemonic '" + toks[0].text + "'");
  auto want = [&](std::size_t n) {
    if (toks.size() != n + 1) {
      syntax(lineno, std::string(mnemonic(*op)) + " expects " + std::to_string(n) + " operand(s)");
    }
  };
  Instruction in;
  in.op = *op;
  switch (*op) {
    case Opcode::Const:
      want(1);
      in.value = parse_literal(toks[1], lineno);
      break;
    case Opcode::Load:
    case Opcode::Store:
    case Opcode::Lock:
    case Opcode::Unlock:
    case Opcode::Wait:
    case Opcode::Notify:
    case Opcode::NotifyAll:
    case Opcode::Join:
    case Opcode::Sleep:
    case Opcode::SetApc:
      want(1);
      in.operand = parse_count(toks[1], lineno, "index");
      break;
    case Opcode::Jmp:
    case Opcode::Jz: {
      want(1);
      auto ref = parse_ref(toks[1], lineno);
      mb.jumps.emplace_back(mb.def.body.size(), ref);
      break;
    }
    case Opcode::Call:
    case Opcode::Spawn:
    case Opcode::Sys:
      want(2);
      in.name = bare_word(toks[1], lineno, "name");
      in.nargs = parse_count(toks[2], lineno, "argument count");
      break;
    case Opcode::GGet:
    case Opcode::GSet:
      want(1);
      in.name = bare_word(toks[1], lineno, "global key");
      break;
    case Opcode::Throw:
      want(1);
      in.name = bare_word(toks[1], lineno, "tag");
      break;
    default:
      want(0);
  }
  return in;
}

void close_method(MethodBuilder& mb, GhostProgram& prog) {
  auto& def = mb.def;
  for (auto& [at, ref] : mb.jumps) def.body[at].operand = static_cast<std::int64_t>(resolve(mb, ref));
  for (auto& h : mb.handlers) {
    def.handlers.push_back(HandlerEntry{resolve(mb, h.from), resolve(mb, h.to), resolve(mb, h.target), h.tag});
  }
  if (!mb.dispatch.empty()) {
    DispatchTable table;
    std::map<std::int64_t, DispatchEntry> by_ordinal;
    bool have_default = false;
    for (std::size_t k = 0; k < mb.dispatch.size(); ++k) {
      const auto& [line, entry] = mb.dispatch[k];
      auto target = resolve(mb, entry.second);
      if (entry.first < 0) {
        table.default_target = target;
        have_default = true;
      } else if (!by_ordinal.emplace(entry.first, DispatchEntry{target, mb.dispatch_kinds[k]}).second) {
        syntax(line, "duplicate dispatch ordinal");
      }
    }
    if (!have_default) syntax(mb.start_line, "dispatch table without default");
    std::int64_t expect = 0;
    for (auto& [ordinal, e] : by_ordinal) {
      if (ordinal != expect++) syntax(mb.start_line, "dispatch ordinals not dense");
      table.sites.push_back(e);
    }
    def.dispatch = std::move(table);
  }
  if (prog.methods.count(def.name) != 0) {
    throw Error(ErrorCode::DuplicateMethod, "line " + std::to_string(mb.start_line) + ": " + def.name);
  }
  prog.methods.emplace(def.name, std::move(def));
}

}  // namespace

GhostProgram parse_assembly(std::string_view text) {
  GhostProgram prog;
  std::optional<MethodBuilder> current;
  std::set<std::string> monitors;
  bool saw_program = false;

  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++lineno;
    auto toks = tokenize(line, lineno);
    if (toks.empty()) {
      if (nl == text.size()) break;
      continue;
    }
    const auto& head = toks[0];
    if (!head.quoted && head.text.starts_with(".")) {
      const auto& d = head.text;
      if (d == ".program") {
        if (current || toks.size() != 2 || saw_program) syntax(lineno, "bad .program");
        prog.name = bare_word(toks[1], lineno, "program name");
        saw_program = true;
      } else if (d == ".entry") {
        if (current || toks.size() != 2 || !is_identifier(toks[1].text)) syntax(lineno, "bad .entry");
        prog.entry = toks[1].text;
      } else if (d == ".monitor") {
        if (current || toks.size() != 2) syntax(lineno, "bad .monitor");
        monitors.insert(bare_word(toks[1], lineno, "monitor id"));
      } else if (d == ".instrumented") {
        if (current || toks.size() != 2) syntax(lineno, "bad .instrumented");
        prog.instrumented_from = bare_word(toks[1], lineno, "digest");
      } else if (d == ".method") {
        if (current) syntax(lineno, "nested .method");
        if (toks.size() != 4 || !is_identifier(toks[1].text)) syntax(lineno, "bad .method header");
        current.emplace();
        current->start_line = lineno;
        current->def.name = toks[1].text;
        current->def.nargs = parse_count(toks[2], lineno, "NARGS");
        current->def.nlocals = parse_count(toks[3], lineno, "NLOCALS");
      } else if (d == ".handler") {
        if (!current || toks.size() != 5) syntax(lineno, "bad .handler");
        current->handlers.push_back(PendingHandler{parse_ref(toks[1], lineno), parse_ref(toks[2], lineno),
                                                   parse_ref(toks[3], lineno),
                                                   bare_word(toks[4], lineno, "tag")});
      } else if (d == ".dispatch") {
        if (!current) syntax(lineno, ".dispatch outside method");
        if (toks.size() == 3 && toks[1].text == "default") {
          current->dispatch.push_back({lineno, {-1, parse_ref(toks[2], lineno)}});
          current->dispatch_kinds.push_back(SiteKind::CheckSite);
        } else if (toks.size() == 4) {
          auto ordinal = parse_count(toks[1], lineno, "ordinal");
          SiteKind kind;
          if (toks[3].text == "check") kind = SiteKind::CheckSite;
          else if (toks[3].text == "call") kind = SiteKind::CallSite;
          else syntax(lineno, "bad site kind");
          current->dispatch.push_back({lineno, {ordinal, parse_ref(toks[2], lineno)}});
          current->dispatch_kinds.push_back(kind);
        } else {
          syntax(lineno, "bad .dispatch");
        }
      } else if (d == ".end") {
        if (!current || toks.size() != 1) syntax(lineno, "bad .end");
        close_method(*current, prog);
        current.reset();
      } else {
        syntax(lineno, "unknown directive " + d);
      }
    } else if (!head.quoted && toks.size() == 1 && head.text.size() > 1 && head.text.back() == ':') {
      if (!current) syntax(lineno, "label outside method");
      auto label = head.text.substr(0, head.text.size() - 1);
      if (!is_identifier(label)) syntax(lineno, "bad label '" + label + "'");
      if (!current->labels.emplace(label, current->def.body.size()).second) {
        syntax(lineno, "duplicate label '" + label + "'");
      }
    } else {
      if (!current) syntax(lineno, "instruction outside method");
      current->def.body.push_back(parse_instruction(toks, lineno, *current));
    }
    if (nl == text.size()) break;
  }
  if (current) syntax(lineno, "missing .end for method " + current->def.name);
  prog.declared_monitors.assign(monitors.begin(), monitors.end());
  return prog;
}

std::string emit_assembly(const GhostProgram& program) {
  std::ostringstream out;
  if (!program.name.empty()) out << ".program " << program.name << "\n";
  out << ".entry " << program.entry << "\n";
  for (const auto& m : program.declared_monitors) out << ".monitor " << m << "\n";
  if (program.instrumented_from) out << ".instrumented " << *program.instrumented_from << "\n";
  bool first = true;
  for (const auto& [name, def] : program.methods) {
    if (!first) out << "\n";
    first = false;
    out << ".method " << name << " " << def.nargs << " " << def.nlocals << "\n";
    std::set<std::size_t> targets;
    for (const auto& in : def.body) {
      if (is_branch(in.op)) targets.insert(static_cast<std::size_t>(in.operand));
    }
    for (std::size_t i = 0; i < def.body.size(); ++i) {
      if (targets.count(i)) out << "L" << i << ":\n";
      const auto& in = def.body[i];
      out << "  " << mnemonic(in.op);
      switch (in.op) {
        case Opcode::Const: out << " " << to_literal(in.value); break;
        case Opcode::Load:
        case Opcode::Store:
        case Opcode::Lock:
        case Opcode::Unlock:
        case Opcode::Wait:
        case Opcode::Notify:
        case Opcode::NotifyAll:
        case Opcode::Join:
        case Opcode::Sleep:
        case Opcode::SetApc: out << " " << in.operand; break;
        case Opcode::Jmp:
        case Opcode::Jz: out << " L" << in.operand; break;
        case Opcode::Call:
        case Opcode::Spawn:
        case Opcode::Sys: out << " " << in.name << " " << in.nargs; break;
        case Opcode::GGet:
        case Opcode::GSet:
        case Opcode::Throw: out << " " << in.name; break;
        default: break;
      }
      out << "\n";
    }
    // Out-of-range jump targets (rejected later by verify) still need a
    // resolvable label so that emission stays total.
    for (auto t : targets) {
      if (t >= def.body.size()) out << "L" << t << ":\n";
    }
    for (const auto& h : def.handlers) {
      out << "  .handler " << h.from << " " << h.to << " " << h.target << " " << h.tag << "\n";
    }
    if (def.dispatch) {
      for (std::size_t k = 0; k < def.dispatch->sites.size(); ++k) {
        const auto& e = def.dispatch->sites[k];
        out << "  .dispatch " << k << " " << e.target << " "
            << (e.kind == SiteKind::CheckSite ? "check" : "call") << "\n";
      }
      out << "  .dispatch default " << def.dispatch->default_target << "\n";
    }
    out << ".end\n";
  }
  return out.str();
}

}  // namespace dget::ir

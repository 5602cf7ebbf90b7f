#include "dget/instrument/instrument.hpp"

#include <functional>
#include <map>
#include <set>

#include "dget/common/error.hpp"
#include "dget/ir/assembly.hpp"

namespace dget::instrument {

using ir::GhostProgram;
using ir::Instruction;
using ir::MethodDef;
using ir::Opcode;

namespace {

/// Rebuilds a method body with instructions inserted around original ones.
/// Old index i maps to the first instruction emitted for it (its prefix if
/// any), so a branch to i lands on the code inserted before i.
struct Splice {
  std::map<std::size_t, std::vector<Instruction>> before;
  std::map<std::size_t, std::vector<Instruction>> after;

  void apply(MethodDef& m) const {
    const auto size = m.body.size();
    std::vector<std::size_t> remap(size + 1);
    std::vector<Instruction> out;
    for (std::size_t i = 0; i < size; ++i) {
      remap[i] = out.size();
      if (auto it = before.find(i); it != before.end()) out.insert(out.end(), it->second.begin(), it->second.end());
      out.push_back(m.body[i]);
      if (auto it = after.find(i); it != after.end()) out.insert(out.end(), it->second.begin(), it->second.end());
    }
    remap[size] = out.size();
    for (auto& in : out) {
      if (ir::is_branch(in.op)) in.operand = static_cast<std::int64_t>(remap.at(static_cast<std::size_t>(in.operand)));
    }
    for (auto& h : m.handlers) {
      h.from = remap.at(h.from);
      h.to = remap.at(h.to);
      h.target = remap.at(h.target);
    }
    m.body = std::move(out);
  }
};

ir::VerificationReport analyze(const GhostProgram& p) { return ir::verify(p, ir::VerifyMode::Intermediate); }

std::set<std::size_t> branch_targets(const MethodDef& m) {
  std::set<std::size_t> out;
  for (const auto& in : m.body) {
    if (ir::is_branch(in.op)) out.insert(static_cast<std::size_t>(in.operand));
  }
  for (const auto& h : m.handlers) out.insert(h.target);
  return out;
}

}  // namespace

std::vector<std::size_t> back_edge_targets(const MethodDef& m) {
  std::set<std::size_t> out;
  for (std::size_t i = 0; i < m.body.size(); ++i) {
    const auto& in = m.body[i];
    if (ir::is_branch(in.op) && static_cast<std::size_t>(in.operand) <= i) out.insert(static_cast<std::size_t>(in.operand));
  }
  return {out.begin(), out.end()};
}

bool contains_instrumentation(const GhostProgram& p) {
  if (p.instrumented_from) return true;
  for (const auto& [name, m] : p.methods) {
    if (m.dispatch) return true;
    for (const auto& in : m.body) {
      if (in.op == Opcode::Check || in.op == Opcode::SetApc || in.op == Opcode::Dispatch) return true;
    }
  }
  return false;
}

GhostProgram spill_pass(const GhostProgram& p) {
  auto report = analyze(p);
  GhostProgram out = p;
  for (auto& [name, m] : out.methods) {
    const auto& depth = report.methods.at(name).depth;
    for (auto t : back_edge_targets(m)) {
      if (depth[t] != 0) {
        throw Error(ErrorCode::NonZeroDepthAtCheckpoint,
                    name + "@" + std::to_string(t) + ": loop head at depth " + std::to_string(depth[t]));
      }
    }
    const auto base = static_cast<std::int64_t>(m.nlocals);
    std::uint32_t needed = m.nlocals;
    Splice splice;
    for (std::size_t i = 0; i < m.body.size(); ++i) {
      const auto& in = m.body[i];
      const int d = depth[i];
      if (d == 0 || !ir::is_call_site(in)) continue;
      std::vector<Instruction> stores, loads;
      for (int k = d - 1; k >= 0; --k) stores.push_back(ir::ins::store(base + k));
      for (int k = 0; k < d; ++k) loads.push_back(ir::ins::load(base + k));
      if (in.op == Opcode::Call || in.op == Opcode::Spawn) {
        stores.insert(stores.end(), loads.begin(), loads.end());
        splice.before[i] = std::move(stores);
        needed = std::max<std::uint32_t>(needed, m.nlocals + d);
      } else {
        // Blocking instruction: nothing pending may sit under it while the
        // thread is parked, so operands are restored after it completes.
        const int pushed = ir::pushes(in, p);
        std::vector<Instruction> tail;
        if (pushed) tail.push_back(ir::ins::store(base + d));
        tail.insert(tail.end(), loads.begin(), loads.end());
        if (pushed) tail.push_back(ir::ins::load(base + d));
        splice.before[i] = std::move(stores);
        splice.after[i] = std::move(tail);
        needed = std::max<std::uint32_t>(needed, m.nlocals + d + pushed);
      }
    }
    splice.apply(m);
    m.nlocals = needed;
  }
  return out;
}

GhostProgram inject_checkpoints(const GhostProgram& p) {
  GhostProgram out = p;
  for (auto& [name, m] : out.methods) {
    Splice splice;
    splice.before[0] = {ir::ins::op(Opcode::Check)};
    for (auto t : back_edge_targets(m)) splice.before[t] = {ir::ins::op(Opcode::Check)};
    splice.apply(m);
  }
  return out;
}

GhostProgram rewrite_sync(const GhostProgram& p, std::vector<ir::VerifyWarning>* warnings) {
  GhostProgram out = p;
  std::set<std::string> declared(p.declared_monitors.begin(), p.declared_monitors.end());
  std::set<std::string> locked;
  struct Use {
    std::string method;
    std::size_t index;
    std::string id;
  };
  std::vector<Use> waits;
  for (const auto& [name, m] : p.methods) {
    // Monitor constants stored into each local anywhere in the method.
    std::map<std::int64_t, std::set<std::string>> held;
    for (std::size_t i = 0; i < m.body.size(); ++i) {
      const auto& in = m.body[i];
      if (in.op != Opcode::Const) continue;
      const auto* ref = std::get_if<ir::MonitorRef>(&in.value);
      if (!ref) continue;
      declared.insert(ref->id);
      if (i + 1 < m.body.size() && m.body[i + 1].op == Opcode::Store) held[m.body[i + 1].operand].insert(ref->id);
    }
    for (std::size_t i = 0; i < m.body.size(); ++i) {
      const auto& in = m.body[i];
      auto it = held.find(in.operand);
      if (it == held.end()) continue;
      if (in.op == Opcode::Lock) locked.insert(it->second.begin(), it->second.end());
      if (in.op == Opcode::Wait || in.op == Opcode::Notify || in.op == Opcode::NotifyAll) {
        for (const auto& id : it->second) waits.push_back({name, i, id});
      }
    }
  }
  out.declared_monitors.assign(declared.begin(), declared.end());
  if (warnings) {
    for (const auto& w : waits) {
      if (!locked.count(w.id)) {
        warnings->push_back({"UnknownMonitor", w.method, w.index, "monitor '" + w.id + "' is never locked"});
      }
    }
  }
  return out;
}

InstrumentedProgram build_dispatch(const GhostProgram& p) {
  auto report = analyze(p);
  InstrumentedProgram ip;
  ip.program = p;
  for (auto& [name, m] : ip.program.methods) {
    const auto& depth = report.methods.at(name).depth;
    const auto targets = branch_targets(m);
    Splice splice;
    std::vector<ir::SiteKind> kinds;
    for (std::size_t i = 0; i < m.body.size(); ++i) {
      const auto& in = m.body[i];
      std::size_t head = i;
      if (in.op == Opcode::Check) {
        kinds.push_back(ir::SiteKind::CheckSite);
      } else if (ir::is_call_site(in)) {
        kinds.push_back(ir::SiteKind::CallSite);
        while (depth[head] > 0) {
          if (head == 0 || m.body[head - 1].op != Opcode::Load || targets.count(head)) {
            throw Error(ErrorCode::NonZeroDepthAtTarget,
                        name + "@" + std::to_string(i) + ": call site without reload sequence");
          }
          --head;
        }
      } else {
        continue;
      }
      if (in.op != Opcode::Check && ir::is_blocking(in) && depth[i] != 0) {
        throw Error(ErrorCode::NonZeroDepthAtTarget, name + "@" + std::to_string(i) + ": blocking at depth");
      }
      splice.before[head].push_back(ir::ins::setapc(static_cast<std::int64_t>(kinds.size() - 1)));
    }
    splice.apply(m);

    // Shift by one for DISPATCH at index 0.
    for (auto& in : m.body) {
      if (ir::is_branch(in.op)) in.operand += 1;
    }
    for (auto& h : m.handlers) {
      h.from += 1;
      h.to += 1;
      h.target += 1;
    }
    m.body.insert(m.body.begin(), ir::ins::op(Opcode::Dispatch));
    ir::DispatchTable table;
    table.default_target = 1;
    table.sites.resize(kinds.size());
    for (std::size_t i = 0; i < m.body.size(); ++i) {
      if (m.body[i].op == Opcode::SetApc) {
        auto k = static_cast<std::size_t>(m.body[i].operand);
        table.sites[k] = ir::DispatchEntry{i, kinds[k]};
      }
    }
    m.dispatch = std::move(table);
  }
  return ip;
}

ScanResult scan_termination_handlers(const GhostProgram& p) {
  ScanResult result;
  for (const auto& [name, m] : p.methods) {
    for (std::size_t h = 0; h < m.handlers.size(); ++h) {
      if (m.handlers[h].tag == ir::kTerminatedTag) {
        throw Error(ErrorCode::LoadRejected,
                    name + " handler " + std::to_string(h) + " catches " + std::string(ir::kTerminatedTag));
      }
      if (m.handlers[h].tag == ir::kCatchAllTag) result.bypassed.emplace_back(name, h);
    }
  }
  return result;
}

namespace {

template <class Fn>
auto as_verification_failure(Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::VerificationFailed) throw;
    throw Error(ErrorCode::VerificationFailed, e.what());
  }
}

}  // namespace

InstrumentedProgram instrument(const GhostProgram& p) {
  if (contains_instrumentation(p)) throw Error(ErrorCode::AlreadyInstrumented, p.name);
  auto source_report = as_verification_failure([&] { return ir::verify(p, ir::VerifyMode::Source); });
  scan_termination_handlers(p);
  std::vector<ir::VerifyWarning> warnings = source_report.warnings;
  auto spilled = as_verification_failure([&] { return spill_pass(p); });
  auto checked = inject_checkpoints(spilled);
  auto synced = rewrite_sync(checked, &warnings);
  auto ip = as_verification_failure([&] { return build_dispatch(synced); });
  ip.source_digest = sha256_hex(ir::emit_assembly(p));
  ip.program.instrumented_from = ip.source_digest;
  ip.warnings = std::move(warnings);
  as_verification_failure([&] { return ir::verify(ip.program, ir::VerifyMode::Instrumented); });
  return ip;
}

InstrumentedProgram accept_instrumented(const GhostProgram& p) {
  if (!p.instrumented_from) throw Error(ErrorCode::VerificationFailed, "program is not instrumented");
  auto report = as_verification_failure([&] { return ir::verify(p, ir::VerifyMode::Instrumented); });
  scan_termination_handlers(p);
  InstrumentedProgram ip;
  ip.program = p;
  ip.source_digest = *p.instrumented_from;
  ip.warnings = report.warnings;
  return ip;
}

std::size_t termination_distance(const GhostProgram& prog) {
  std::map<std::string, std::vector<std::int64_t>> memo;
  for (const auto& [name, m] : prog.methods) memo[name].assign(m.body.size(), -1);
  // -2 marks "in progress" for cycle detection.
  std::function<std::int64_t(const std::string&, std::size_t)> dist = [&](const std::string& name,
                                                                          std::size_t i) -> std::int64_t {
    auto& slot = memo.at(name)[i];
    if (slot >= 0) return slot;
    if (slot == -2) throw Error(ErrorCode::VerificationFailed, name + "@" + std::to_string(i) + ": checkpoint-free cycle");
    slot = -2;
    const auto& m = prog.methods.at(name);
    const auto& in = m.body[i];
    std::int64_t value = 1;
    switch (in.op) {
      case Opcode::Check:
      case Opcode::Ret:
      case Opcode::RetV:
      case Opcode::Throw:
      case Opcode::Spawn:
        break;
      case Opcode::Call:
        value += dist(in.name, 0);
        break;
      case Opcode::Dispatch:
        // The restore flag is never set while a terminated entity drains.
        value += dist(name, i + 1);
        break;
      default:
        if (ir::is_blocking(in)) break;
        {
          std::int64_t best = 0;
          for (auto s : ir::successors(m, i)) best = std::max(best, dist(name, s));
          value += best;
        }
    }
    memo.at(name)[i] = value;
    return value;
  };
  std::int64_t best = 0;
  for (const auto& [name, m] : prog.methods) {
    for (std::size_t i = 0; i < m.body.size(); ++i) best = std::max(best, dist(name, i));
  }
  return static_cast<std::size_t>(best);
}

}  // namespace dget::instrument

#include "support/reference.hpp"

#include <deque>
#include <optional>

namespace dget::testing {
namespace {

using ir::Instruction;
using ir::MethodDef;
using ir::Opcode;
using ir::Value;

struct Frame {
  const MethodDef* method;
  std::vector<Value> locals;
  std::vector<Value> stack;
  std::size_t pc = 0;
  std::int64_t apc = -1;
};

enum class St { Run, Lock, Wait, Join, Sleep, Recv, Done };

struct Thread {
  std::string id;
  std::vector<Frame> frames;
  St st = St::Run;
  std::string on;  // monitor or thread id
  std::int64_t wake = 0;
  std::int64_t reacquire = 0;
  std::uint64_t gap = 0;
  std::uint64_t obs_gap = 0;
};

struct Monitor {
  std::string owner;
  std::int64_t count = 0;
};

struct Thrown {
  std::string tag;
};

bool truthy_zero(const Value& v) {
  if (auto i = std::get_if<std::int64_t>(&v)) return *i == 0;
  if (auto b = std::get_if<bool>(&v)) return !*b;
  if (auto s = std::get_if<std::string>(&v)) return s->empty();
  return false;
}

std::string show(const Value& v) {
  switch (v.index()) {
    case 0: return std::to_string(std::get<0>(v));
    case 1: return std::get<1>(v);
    case 2: return std::get<2>(v) ? "true" : "false";
    case 3: return "monitor:" + std::get<3>(v).id;
    default: return "thread:" + std::get<4>(v).id;
  }
}

std::int64_t as_int(const Value& v) {
  if (auto i = std::get_if<std::int64_t>(&v)) return *i;
  throw Thrown{"type"};
}

struct Machine {
  const ir::GhostProgram& prog;
  RefOptions opt;
  RefResult res;
  std::vector<Thread> threads;
  std::map<std::string, Monitor> monitors;
  std::deque<Value> inbox;
  std::int64_t clock = 0;

  Machine(const ir::GhostProgram& p, const RefOptions& o) : prog(p), opt(o) {}

  Thread* thread(const std::string& id) {
    for (auto& t : threads)
      if (t.id == id) return &t;
    return nullptr;
  }

  void launch(const std::string& method, std::vector<Value> args) {
    const auto* m = prog.find(method);
    Frame f{m, std::vector<Value>(m->nlocals, Value{std::int64_t{0}}), {}, 0};
    for (std::size_t i = 0; i < args.size(); ++i) f.locals[i] = args[i];
    Thread t;
    t.id = "t" + std::to_string(threads.size());
    t.frames.push_back(std::move(f));
    threads.push_back(std::move(t));
  }

  static std::string mon_id(const Value& v) {
    if (auto m = std::get_if<ir::MonitorRef>(&v)) return m->id;
    throw Thrown{"type"};
  }

  bool try_acquire(Thread& t, const std::string& id, std::int64_t count) {
    auto& m = monitors[id];
    if (m.count == 0) {
      m.owner = t.id;
      m.count = count;
      return true;
    }
    if (m.owner == t.id) {
      m.count += count;
      return true;
    }
    return false;
  }

  void release_all(Thread& t) {
    for (auto& [id, m] : monitors) {
      if (m.owner == t.id) {
        m.owner.clear();
        m.count = 0;
      }
    }
  }

  // Executes one instruction of thread t. Returns false when the thread is
  // blocked and made no progress.
  bool exec(Thread& t) {
    auto& f = t.frames.back();
    const Instruction& in = f.method->body[f.pc];
    auto pop = [&] {
      Value v = f.stack.back();
      f.stack.pop_back();
      return v;
    };
    auto arith = [&](auto fn) {
      auto b = as_int(pop());
      auto a = as_int(pop());
      f.stack.push_back(Value{fn(a, b)});
    };
    switch (in.op) {
      case Opcode::Const: f.stack.push_back(in.value); break;
      case Opcode::Load: f.stack.push_back(f.locals[in.operand]); break;
      case Opcode::Store: f.locals[in.operand] = pop(); break;
      case Opcode::Add: {
        auto b = pop();
        auto a = pop();
        if (a.index() == 1 || b.index() == 1) {
          f.stack.push_back(Value{show(a) + show(b)});
        } else {
          f.stack.push_back(Value{static_cast<std::int64_t>(static_cast<std::uint64_t>(as_int(a)) +
                                                            static_cast<std::uint64_t>(as_int(b)))});
        }
        break;
      }
      case Opcode::Sub:
        arith([](std::int64_t a, std::int64_t b) {
          return static_cast<std::int64_t>(static_cast<std::uint64_t>(a) - static_cast<std::uint64_t>(b));
        });
        break;
      case Opcode::Mul:
        arith([](std::int64_t a, std::int64_t b) {
          return static_cast<std::int64_t>(static_cast<std::uint64_t>(a) * static_cast<std::uint64_t>(b));
        });
        break;
      case Opcode::Div:
        arith([](std::int64_t a, std::int64_t b) -> std::int64_t {
          if (b == 0) throw Thrown{"arith"};
          if (b == -1) return static_cast<std::int64_t>(0 - static_cast<std::uint64_t>(a));
          return a / b;
        });
        break;
      case Opcode::Cmp: {
        auto b = pop();
        auto a = pop();
        if (a.index() != b.index()) throw Thrown{"type"};
        f.stack.push_back(Value{std::int64_t{a < b ? -1 : (b < a ? 1 : 0)}});
        break;
      }
      case Opcode::Jmp: f.pc = in.operand; return true;
      case Opcode::Jz:
        if (truthy_zero(pop())) {
          f.pc = in.operand;
          return true;
        }
        break;
      case Opcode::Call: {
        std::vector<Value> args(in.nargs);
        for (std::size_t i = in.nargs; i-- > 0;) args[i] = pop();
        const auto* m = prog.find(in.name);
        Frame callee{m, std::vector<Value>(m->nlocals, Value{std::int64_t{0}}), {}, 0};
        for (std::size_t i = 0; i < args.size(); ++i) callee.locals[i] = args[i];
        f.pc++;
        t.frames.push_back(std::move(callee));
        return true;
      }
      case Opcode::Ret:
      case Opcode::RetV: {
        std::optional<Value> rv;
        if (in.op == Opcode::RetV) rv = pop();
        t.frames.pop_back();
        if (t.frames.empty()) {
          t.st = St::Done;
          return true;
        }
        if (rv) t.frames.back().stack.push_back(*rv);
        return true;
      }
      case Opcode::Lock: {
        auto id = mon_id(f.locals[in.operand]);
        if (!try_acquire(t, id, 1)) {
          t.st = St::Lock;
          t.on = id;
          t.reacquire = 1;
        }
        break;
      }
      case Opcode::Unlock: {
        auto id = mon_id(f.locals[in.operand]);
        auto& m = monitors[id];
        if (m.owner != t.id) throw Thrown{"monitor"};
        if (--m.count == 0) m.owner.clear();
        break;
      }
      case Opcode::Wait: {
        auto id = mon_id(f.locals[in.operand]);
        auto& m = monitors[id];
        if (m.owner != t.id) throw Thrown{"monitor"};
        t.reacquire = m.count;
        m.owner.clear();
        m.count = 0;
        t.st = St::Wait;
        t.on = id;
        break;
      }
      case Opcode::Notify:
      case Opcode::NotifyAll: {
        auto id = mon_id(f.locals[in.operand]);
        if (monitors[id].owner != t.id) throw Thrown{"monitor"};
        // FIFO by wait order is irrelevant to the corpus observables; the
        // reference wakes in thread-id order.
        for (auto& o : threads) {
          if (o.st == St::Wait && o.on == id) {
            o.st = St::Lock;
            if (in.op == Opcode::Notify) break;
          }
        }
        break;
      }
      case Opcode::Spawn: {
        std::vector<Value> args(in.nargs);
        for (std::size_t i = in.nargs; i-- > 0;) args[i] = pop();
        std::string name = in.name;
        f.stack.push_back(Value{ir::ThreadRef{"t" + std::to_string(threads.size())}});
        f.pc++;
        launch(name, std::move(args));
        // launch may reallocate `threads`; callers re-fetch.
        return true;
      }
      case Opcode::Join: {
        const auto& v = f.locals[in.operand];
        auto* ref = std::get_if<ir::ThreadRef>(&v);
        if (!ref) throw Thrown{"type"};
        auto* other = thread(ref->id);
        if (other && other->st != St::Done) {
          t.st = St::Join;
          t.on = ref->id;
        }
        break;
      }
      case Opcode::Sleep: {
        auto ms = as_int(f.locals[in.operand]);
        if (ms > 0) {
          t.st = St::Sleep;
          t.wake = clock + ms;
        }
        break;
      }
      case Opcode::GGet: {
        auto it = res.globals.find(in.name);
        f.stack.push_back(it == res.globals.end() ? Value{std::int64_t{0}} : it->second);
        break;
      }
      case Opcode::GSet: res.globals[in.name] = pop(); break;
      case Opcode::Sys: {
        std::vector<Value> args(in.nargs);
        for (std::size_t i = in.nargs; i-- > 0;) args[i] = pop();
        if (in.name == "log") {
          res.output.push_back(show(args[0]));
        } else if (in.name == "self") {
          f.stack.push_back(Value{opt.entity_id});
        } else if (in.name == "send") {
          if (show(args[0]) == opt.entity_id) {
            inbox.push_back(args[1]);
          } else {
            res.sent.emplace_back(show(args[0]), show(args[1]));
          }
        } else if (in.name == "recv") {
          if (inbox.empty()) {
            t.st = St::Recv;
            return true;  // re-executes when woken
          }
          f.stack.push_back(inbox.front());
          inbox.pop_front();
        } else if (in.name == "publish") {
        } else if (in.name == "query") {
          f.stack.push_back(Value{std::int64_t{0}});
        } else {
          f.stack.push_back(Value{std::string{}});
        }
        break;
      }
      case Opcode::Throw: throw Thrown{in.name};
      case Opcode::Check:
        res.checks++;
        if (!f.stack.empty()) res.nonzero_depth_checks++;
        res.max_check_gap = std::max(res.max_check_gap, t.gap);
        t.gap = 0;
        break;
      case Opcode::SetApc: f.apc = in.operand; break;
      case Opcode::Dispatch: break;
    }
    f.pc++;
    return true;
  }

  void raise(Thread& t, const std::string& tag) {
    while (!t.frames.empty()) {
      auto& f = t.frames.back();
      std::size_t at = f.pc;
      for (const auto& h : f.method->handlers) {
        if (h.from <= at && at < h.to && (h.tag == tag || h.tag == "*")) {
          f.stack.clear();
          f.pc = h.target;
          return;
        }
      }
      t.frames.pop_back();
      if (!t.frames.empty()) t.frames.back().pc--;  // blame the CALL instruction
    }
    t.st = St::Done;
    if (res.status.empty()) res.status = "fault:" + tag;
  }

  bool unblock(Thread& t) {
    switch (t.st) {
      case St::Run: return true;
      case St::Done: return false;
      case St::Lock:
        if (try_acquire(t, t.on, t.reacquire)) {
          t.st = St::Run;
          return true;
        }
        return false;
      case St::Wait: return false;
      case St::Join: {
        auto* o = thread(t.on);
        if (!o || o->st == St::Done) {
          t.st = St::Run;
          return true;
        }
        return false;
      }
      case St::Sleep:
        if (clock >= t.wake) {
          t.st = St::Run;
          return true;
        }
        return false;
      case St::Recv:
        if (!inbox.empty()) {
          t.st = St::Run;
          return true;
        }
        return false;
    }
    return false;
  }

  RefResult run(const Globals& inputs) {
    res.globals = inputs;
    for (const auto& m : prog.declared_monitors) monitors[m];
    launch(prog.entry, {});
    std::size_t cursor = 0;
    while (res.status.empty()) {
      bool progressed = false;
      for (std::size_t n = 0; n < threads.size() && res.status.empty(); ++n) {
        std::size_t idx = (cursor + n) % threads.size();
        if (!unblock(threads[idx])) continue;
        if (opt.stop_at_check_after && res.steps >= *opt.stop_at_check_after) {
          const auto& top = threads[idx].frames.back();
          if (top.method->body[top.pc].op == Opcode::Check) {
            res.status = "stopped";
            for (const auto& t : threads) {
              if (t.st == St::Done) continue;
              RefThread rt{t.id, {}};
              for (const auto& fr : t.frames) rt.frames.push_back({fr.method->name, fr.locals, fr.apc});
              res.projection.push_back(std::move(rt));
            }
            break;
          }
        }
        if (res.steps >= opt.max_steps) {
          res.status = "step_limit";
          break;
        }
        res.steps++;
        clock++;
        threads[idx].gap++;
        threads[idx].obs_gap++;
        const auto& cur = threads[idx].frames.back();
        const auto& op = cur.method->body[cur.pc];
        bool observes = op.op == Opcode::Ret || op.op == Opcode::RetV || op.op == Opcode::Throw ||
                        op.op == Opcode::Spawn || op.op == Opcode::Check || ir::is_blocking(op);
        try {
          exec(threads[idx]);
        } catch (const Thrown& e) {
          observes = true;
          raise(threads[idx], e.tag);
        }
        if (observes) {
          res.max_observation_gap = std::max(res.max_observation_gap, threads[idx].obs_gap);
          threads[idx].obs_gap = 0;
        }
        if (threads[idx].st == St::Done) {
          res.max_check_gap = std::max(res.max_check_gap, threads[idx].gap);
          release_all(threads[idx]);
        }
        progressed = true;
        cursor = idx + 1;
        break;
      }
      if (!res.status.empty()) break;
      bool all_done = true;
      for (auto& t : threads) all_done &= t.st == St::Done;
      if (all_done) {
        res.status = "completed";
        break;
      }
      if (!progressed) {
        std::optional<std::int64_t> next;
        for (auto& t : threads) {
          if (t.st == St::Sleep && (!next || t.wake < *next)) next = t.wake;
        }
        if (!next) {
          res.status = "deadlock";
          break;
        }
        clock = *next;
      }
    }
    res.threads = threads.size();
    return res;
  }
};

}  // namespace

RefResult run_reference(const ir::GhostProgram& program, const Globals& inputs,
                        const RefOptions& options) {
  Machine m(program, options);
  return m.run(inputs);
}

}  // namespace dget::testing

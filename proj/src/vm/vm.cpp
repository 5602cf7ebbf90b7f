#include "dget/vm/vm.hpp"

#include <algorithm>

#include "dget/common/error.hpp"
#include "dget/ir/verifier.hpp"

namespace dget::vm {

using ir::Instruction;
using ir::Opcode;

namespace {

struct GhostThrow {
  std::string tag;
};

constexpr std::pair<ThreadStatus, std::string_view> kStatusNames[] = {
    {ThreadStatus::Runnable, "RUNNABLE"},          {ThreadStatus::ExecWait, "EXEC_WAIT"},
    {ThreadStatus::MonitorEntry, "MONITOR_ENTRY"}, {ThreadStatus::MonitorWait, "MONITOR_WAIT"},
    {ThreadStatus::JoinWait, "JOIN_WAIT"},         {ThreadStatus::Sleeping, "SLEEPING"},
    {ThreadStatus::RecvWait, "RECV_WAIT"},         {ThreadStatus::Done, "DONE"},
    {ThreadStatus::PendingLaunch, "PENDING_LAUNCH"},
};

std::int64_t as_int(const Value& v) {
  if (const auto* i = std::get_if<std::int64_t>(&v)) return *i;
  throw GhostThrow{"type"};
}

std::int64_t wrap(std::uint64_t v) { return static_cast<std::int64_t>(v); }

bool is_zero(const Value& v) {
  if (const auto* i = std::get_if<std::int64_t>(&v)) return *i == 0;
  if (const auto* b = std::get_if<bool>(&v)) return !*b;
  if (const auto* s = std::get_if<std::string>(&v)) return s->empty();
  return false;
}

const std::string& monitor_id(const Value& v) {
  if (const auto* m = std::get_if<ir::MonitorRef>(&v)) return m->id;
  throw GhostThrow{"type"};
}

void erase_id(std::deque<std::string>& q, const std::string& id) {
  q.erase(std::remove(q.begin(), q.end(), id), q.end());
}

}  // namespace

std::string_view flag_name(Flag f) {
  switch (f) {
    case Flag::Running: return "RUNNING";
    case Flag::Suspending: return "SUSPENDING";
    case Flag::Terminated: return "TERMINATED";
  }
  return "?";
}

std::string_view status_name(ThreadStatus s) {
  for (const auto& [st, name] : kStatusNames) {
    if (st == s) return name;
  }
  return "?";
}

std::optional<ThreadStatus> status_from_name(std::string_view name) {
  for (const auto& [st, n] : kStatusNames) {
    if (n == name) return st;
  }
  return std::nullopt;
}

bool is_blocked(ThreadStatus s) {
  switch (s) {
    case ThreadStatus::ExecWait:
    case ThreadStatus::MonitorEntry:
    case ThreadStatus::MonitorWait:
    case ThreadStatus::JoinWait:
    case ThreadStatus::Sleeping:
    case ThreadStatus::RecvWait:
      return true;
    default:
      return false;
  }
}

std::string_view step_kind_name(StepKind k) {
  switch (k) {
    case StepKind::Quiescent: return "QUIESCENT";
    case StepKind::Ran: return "RAN";
    case StepKind::AllDone: return "ALL_DONE";
    case StepKind::Terminated: return "TERMINATED";
  }
  return "?";
}

Vm::Vm(std::shared_ptr<const instrument::InstrumentedProgram> program, LoadOptions options)
    : program_(std::move(program)), options_(std::move(options)), rng_(options_.seed) {}

Vm::Vm(instrument::InstrumentedProgram program, authz::ResourceLimits limits, LoadOptions options)
    : Vm(std::make_shared<const instrument::InstrumentedProgram>(instrument::accept_instrumented(program.program)),
         std::move(options)) {
  for (const auto& id : program_->program.declared_monitors) st_.monitors[id];
  st_.globals = options_.globals;
  st_.limits = std::move(limits);
  const auto* entry = program_->program.find(program_->program.entry);
  new_thread(*entry, {});
  if (!charge("threads", 1)) request_terminate();
}

std::unique_ptr<Vm> Vm::from_state(instrument::InstrumentedProgram program, VmState state, LoadOptions options) {
  auto accepted = instrument::accept_instrumented(program.program);
  std::unique_ptr<Vm> vm(new Vm(std::make_shared<const instrument::InstrumentedProgram>(std::move(accepted)),
                                std::move(options)));
  vm->st_ = std::move(state);
  for (auto& [ord, t] : vm->st_.threads) {
    for (auto& f : t.frames) {
      if (!f.method) throw Error(ErrorCode::RestoreFailed, "frame without method");
      f.method = vm->program_->program.find(f.method->name);
      if (!f.method) throw Error(ErrorCode::UnknownMethod, "frame method");
    }
  }
  return vm;
}

GreenThread* Vm::find_thread(const std::string& id) {
  for (auto& [ord, t] : st_.threads) {
    if (t.id == id) return &t;
  }
  return nullptr;
}

const GreenThread* Vm::thread(const std::string& id) const {
  for (const auto& [ord, t] : st_.threads) {
    if (t.id == id) return &t;
  }
  return nullptr;
}

GreenThread& Vm::new_thread(const ir::MethodDef& method, std::vector<Value> args) {
  GreenThread t;
  t.ordinal = st_.next_ordinal++;
  t.id = "t" + std::to_string(t.ordinal);
  Frame f;
  f.method = &method;
  f.locals.assign(method.nlocals, Value{std::int64_t{0}});
  for (std::size_t i = 0; i < args.size() && i < f.locals.size(); ++i) f.locals[i] = std::move(args[i]);
  t.frames.push_back(std::move(f));
  auto ord = t.ordinal;
  return st_.threads.emplace(ord, std::move(t)).first->second;
}

bool Vm::charge(std::string_view counter, std::int64_t amount) {
  if (st_.flag == Flag::Terminated) {
    authz::charge_quota(st_.usage, {}, counter, amount);
    return true;
  }
  return authz::charge_quota(st_.usage, st_.limits, counter, amount) == authz::QuotaResult::Ok;
}

bool Vm::all_done() const {
  for (const auto& [ord, t] : st_.threads) {
    if (t.status != ThreadStatus::Done) return false;
  }
  return true;
}

std::size_t Vm::live_threads() const {
  std::size_t n = 0;
  for (const auto& [ord, t] : st_.threads) n += t.status != ThreadStatus::Done;
  return n;
}

void Vm::request_suspend() {
  if (st_.flag != Flag::Running) {
    throw Error(ErrorCode::IllegalFlagTransition, std::string(flag_name(st_.flag)) + " -> SUSPENDING");
  }
  st_.flag = Flag::Suspending;
}

void Vm::resume() {
  if (st_.flag != Flag::Suspending) {
    throw Error(ErrorCode::IllegalFlagTransition, std::string(flag_name(st_.flag)) + " -> RUNNING");
  }
  st_.flag = Flag::Running;
  for (auto& [ord, t] : st_.threads) {
    if (t.status == ThreadStatus::ExecWait) {
      t.status = ThreadStatus::Runnable;
      t.frames.back().pc++;
    }
  }
  handoff_messages();
}

void Vm::request_terminate() {
  if (st_.flag == Flag::Terminated) return;
  st_.flag = Flag::Terminated;
  for (auto& [ord, t] : st_.threads) {
    if (t.status != ThreadStatus::Done && t.status != ThreadStatus::Runnable) terminate_thread(t);
  }
}

bool Vm::quiescent() const {
  if (st_.flag != Flag::Suspending) return false;
  for (const auto& [ord, t] : st_.threads) {
    if (t.status == ThreadStatus::Done) continue;
    if (!is_blocked(t.status) || t.replaying) return false;
  }
  return true;
}

void Vm::deliver_message(Value payload) {
  if (st_.flag == Flag::Terminated) {
    st_.dropped_messages++;
    return;
  }
  if (!charge("inbox", 1)) {
    st_.dropped_messages++;
    request_terminate();
    return;
  }
  if (st_.inbox.size() >= options_.inbox_bound) {
    st_.dropped_messages++;
    throw Error(ErrorCode::InboxOverflow, "inbox bound " + std::to_string(options_.inbox_bound));
  }
  st_.inbox.push_back(std::move(payload));
  handoff_messages();
}

void Vm::handoff_messages() {
  if (st_.flag != Flag::Running) return;
  for (auto it = st_.recv_waiters.begin(); it != st_.recv_waiters.end() && !st_.inbox.empty();) {
    auto* t = find_thread(*it);
    if (!t || t->status != ThreadStatus::RecvWait || t->replaying) {
      ++it;
      continue;
    }
    auto& f = t->frames.back();
    f.stack.push_back(std::move(st_.inbox.front()));
    st_.inbox.pop_front();
    f.pc++;
    t->status = ThreadStatus::Runnable;
    it = st_.recv_waiters.erase(it);
  }
}

std::vector<Message> Vm::take_outbox() {
  std::vector<Message> out;
  out.swap(st_.outbox);
  return out;
}

std::string Vm::spawn_invocation(const std::string& method, const std::vector<Value>& args) {
  const auto* m = program_->program.find(method);
  if (!m) throw Error(ErrorCode::UnknownOperation, method);
  if (m->nargs != args.size()) throw Error(ErrorCode::ArityMismatch, method);
  if (st_.flag == Flag::Terminated) throw Error(ErrorCode::IllegalTransition, "entity terminated");
  auto& t = new_thread(*m, args);
  std::string id = t.id;
  if (!charge("threads", 1)) request_terminate();
  return id;
}

void Vm::launch(const std::string& thread_id) {
  auto* t = find_thread(thread_id);
  if (!t || t->status != ThreadStatus::PendingLaunch) {
    throw Error(ErrorCode::RestoreFailed, "thread " + thread_id + " is not pending launch");
  }
  t->status = ThreadStatus::Runnable;
  t->replaying = true;
}

bool Vm::settled(const std::string& thread_id) const {
  const auto* t = thread(thread_id);
  return t && !t->replaying && t->status != ThreadStatus::Runnable && t->status != ThreadStatus::PendingLaunch;
}

void Vm::wake_sleepers() {
  for (auto& [ord, t] : st_.threads) {
    if (t.status == ThreadStatus::Sleeping && !t.replaying && t.wake_at <= st_.clock) {
      t.status = ThreadStatus::Runnable;
      t.frames.back().pc++;
    }
  }
}

GreenThread* Vm::pick_next() {
  if (st_.threads.empty()) return nullptr;
  auto start = st_.threads.lower_bound(cursor_);
  for (auto it = start; it != st_.threads.end(); ++it) {
    if (it->second.status == ThreadStatus::Runnable) return &it->second;
  }
  for (auto it = st_.threads.begin(); it != start; ++it) {
    if (it->second.status == ThreadStatus::Runnable) return &it->second;
  }
  return nullptr;
}

StepOutcome Vm::step(std::uint64_t budget) {
  if (fault_) throw Error(ErrorCode::RuntimeFault, "entity failed: " + fault_->tag);
  StepOutcome out;
  while (out.executed < budget) {
    if (st_.flag == Flag::Running) wake_sleepers();
    GreenThread* t = pick_next();
    if (!t) {
      if (st_.flag != Flag::Running) break;
      std::optional<std::int64_t> next;
      for (const auto& [ord, th] : st_.threads) {
        if (th.status == ThreadStatus::Sleeping && !th.replaying && (!next || th.wake_at < *next)) next = th.wake_at;
      }
      if (!next) break;
      st_.clock = std::max(st_.clock, *next);
      continue;
    }
    auto remaining = budget - out.executed;
    run_thread(*t, remaining, out.executed);
    cursor_ = t->ordinal + 1;
  }
  if (all_done()) {
    out.kind = st_.flag == Flag::Terminated ? StepKind::Terminated : StepKind::AllDone;
  } else if (pick_next() == nullptr) {
    bool sleeper = false;
    for (const auto& [ord, th] : st_.threads) sleeper |= th.status == ThreadStatus::Sleeping && !th.replaying;
    out.kind = (sleeper && st_.flag == Flag::Running) ? StepKind::Ran : StepKind::Quiescent;
  } else {
    out.kind = StepKind::Ran;
  }
  return out;
}

void Vm::run_thread(GreenThread& t, std::uint64_t& budget, std::uint64_t& executed) {
  std::uint64_t quantum = options_.quantum == 0 ? 1 : options_.quantum;
  if (options_.randomize_quantum) quantum = std::uniform_int_distribution<std::uint64_t>(1, 2 * quantum)(rng_);
  while (quantum-- > 0 && budget > 0 && t.status == ThreadStatus::Runnable) {
    if (!t.replaying) {
      if (!charge("steps", 1)) request_terminate();
      executed_++;
      if (st_.flag == Flag::Running) st_.clock++;
    }
    --budget;
    ++executed;
    try {
      exec(t);
    } catch (const GhostThrow& e) {
      raise(t, e.tag);
    }
  }
}

void Vm::fail(GreenThread& t, const std::string& tag) {
  (void)t;
  throw Error(ErrorCode::RuntimeFault, "uncaught '" + tag + "' in thread " + fault_->thread + " at " +
                                           fault_->method + "@" + std::to_string(fault_->index));
}

void Vm::raise(GreenThread& t, const std::string& tag) {
  if (st_.flag == Flag::Terminated) {
    terminate_thread(t);
    return;
  }
  Fault where{tag, t.id, t.frames.back().method->name, t.frames.back().pc};
  while (!t.frames.empty()) {
    auto& f = t.frames.back();
    for (const auto& h : f.method->handlers) {
      if (h.from <= f.pc && f.pc < h.to && (h.tag == tag || h.tag == ir::kCatchAllTag)) {
        f.stack.clear();
        f.pc = h.target;
        return;
      }
    }
    t.frames.pop_back();
  }
  fault_ = where;
  t.status = ThreadStatus::Done;
  fail(t, tag);
}

void Vm::finish_thread(GreenThread& t) {
  t.status = ThreadStatus::Done;
  t.frames.clear();
  t.replaying = false;
  t.replay_frames.clear();
  t.replay_block.reset();
  for (auto& [id, m] : st_.monitors) {
    if (m.owner == t.id) release_monitor(m, id);
  }
  for (auto& [ord, o] : st_.threads) {
    if (o.status == ThreadStatus::JoinWait && o.join_target == t.id) {
      o.status = ThreadStatus::Runnable;
      o.frames.back().pc++;
    }
  }
}

void Vm::terminate_thread(GreenThread& t) {
  for (auto& [id, m] : st_.monitors) {
    erase_id(m.entry_set, t.id);
    erase_id(m.wait_set, t.id);
  }
  erase_id(st_.recv_waiters, t.id);
  finish_thread(t);
}

void Vm::release_monitor(MonitorState& m, const std::string& id) {
  (void)id;
  m.owner.clear();
  m.entry_count = 0;
  while (!m.entry_set.empty()) {
    auto next = m.entry_set.front();
    m.entry_set.pop_front();
    if (auto* t = find_thread(next); t && t->status != ThreadStatus::Done) {
      grant(*t, m);
      return;
    }
  }
}

void Vm::grant(GreenThread& t, MonitorState& m) {
  m.owner = t.id;
  if (t.status == ThreadStatus::PendingLaunch || t.replaying) {
    m.entry_count = t.replay_block ? t.replay_block->reacquire : 1;
    if (t.replay_block) t.replay_block->status = ThreadStatus::Runnable;
    return;
  }
  m.entry_count = t.reacquire;
  t.status = ThreadStatus::Runnable;
  t.frames.back().pc++;
}

void Vm::apply_replay_block(GreenThread& t, const Instruction& in) {
  auto& f = t.frames.back();
  auto block = t.replay_block.value_or(BlockRecord{});
  t.replaying = false;
  t.replay_block.reset();
  auto mismatch = [&] {
    throw Error(ErrorCode::RestoreFailed, t.id + ": captured " + std::string(status_name(block.status)) +
                                              " does not match " + std::string(ir::mnemonic(in.op)));
  };
  switch (block.status) {
    case ThreadStatus::Runnable:
      // Granted the monitor while still pending.
      if (in.op != Opcode::Lock && in.op != Opcode::Wait) mismatch();
      t.status = ThreadStatus::Runnable;
      f.pc++;
      break;
    case ThreadStatus::MonitorEntry: {
      if (in.op != Opcode::Lock && in.op != Opcode::Wait) mismatch();
      auto& m = st_.monitors[block.monitor];
      if (std::find(m.entry_set.begin(), m.entry_set.end(), t.id) == m.entry_set.end()) mismatch();
      t.status = ThreadStatus::MonitorEntry;
      t.monitor = block.monitor;
      t.reacquire = block.reacquire;
      break;
    }
    case ThreadStatus::MonitorWait:
      if (in.op != Opcode::Wait) mismatch();
      st_.monitors[block.monitor].wait_set.push_back(t.id);
      t.status = ThreadStatus::MonitorWait;
      t.monitor = block.monitor;
      t.reacquire = block.reacquire;
      break;
    case ThreadStatus::JoinWait: {
      if (in.op != Opcode::Join) mismatch();
      const auto* target = find_thread(block.join_target);
      if (target && target->status != ThreadStatus::Done) {
        t.status = ThreadStatus::JoinWait;
        t.join_target = block.join_target;
      } else {
        t.status = ThreadStatus::Runnable;
        f.pc++;
      }
      break;
    }
    case ThreadStatus::Sleeping:
      if (in.op != Opcode::Sleep) mismatch();
      t.status = ThreadStatus::Sleeping;
      t.wake_at = st_.clock + std::max<std::int64_t>(0, block.sleep_remaining);
      break;
    case ThreadStatus::RecvWait:
      if (in.op != Opcode::Sys || in.name != "recv") mismatch();
      if (std::find(st_.recv_waiters.begin(), st_.recv_waiters.end(), t.id) == st_.recv_waiters.end()) {
        st_.recv_waiters.push_back(t.id);
      }
      t.status = ThreadStatus::RecvWait;
      handoff_messages();
      break;
    default:
      mismatch();
  }
}

void Vm::exec(GreenThread& t) {
  auto& f = t.frames.back();
  const Instruction& in = f.method->body[f.pc];
  auto pop = [&] {
    Value v = std::move(f.stack.back());
    f.stack.pop_back();
    return v;
  };
  auto pop_args = [&](std::uint32_t n) {
    std::vector<Value> args(n);
    for (std::uint32_t i = n; i-- > 0;) args[i] = pop();
    return args;
  };
  auto replay_site = [&] { return t.replaying && t.replay_frames.empty(); };
  const bool terminated = st_.flag == Flag::Terminated;

  switch (in.op) {
    case Opcode::Const: f.stack.push_back(in.value); break;
    case Opcode::Load: f.stack.push_back(f.locals[in.operand]); break;
    case Opcode::Store: f.locals[in.operand] = pop(); break;
    case Opcode::Add: {
      auto b = pop();
      auto a = pop();
      if (std::holds_alternative<std::string>(a) || std::holds_alternative<std::string>(b)) {
        f.stack.push_back(Value{ir::to_display(a) + ir::to_display(b)});
      } else {
        f.stack.push_back(Value{wrap(static_cast<std::uint64_t>(as_int(a)) + static_cast<std::uint64_t>(as_int(b)))});
      }
      break;
    }
    case Opcode::Sub:
    case Opcode::Mul:
    case Opcode::Div: {
      auto b = as_int(pop());
      auto a = as_int(pop());
      std::int64_t r = 0;
      if (in.op == Opcode::Sub) {
        r = wrap(static_cast<std::uint64_t>(a) - static_cast<std::uint64_t>(b));
      } else if (in.op == Opcode::Mul) {
        r = wrap(static_cast<std::uint64_t>(a) * static_cast<std::uint64_t>(b));
      } else {
        if (b == 0) throw GhostThrow{"arith"};
        r = b == -1 ? wrap(0 - static_cast<std::uint64_t>(a)) : a / b;
      }
      f.stack.push_back(Value{r});
      break;
    }
    case Opcode::Cmp: {
      auto b = pop();
      auto a = pop();
      if (a.index() != b.index()) throw GhostThrow{"type"};
      f.stack.push_back(Value{std::int64_t{a < b ? -1 : (b < a ? 1 : 0)}});
      break;
    }
    case Opcode::Jmp: f.pc = static_cast<std::size_t>(in.operand); return;
    case Opcode::Jz:
      if (is_zero(pop())) {
        f.pc = static_cast<std::size_t>(in.operand);
        return;
      }
      break;
    case Opcode::Call: {
      auto args = pop_args(in.nargs);
      const auto* callee = program_->program.find(in.name);
      Frame next;
      next.method = callee;
      if (t.replaying && !t.replay_frames.empty()) {
        auto rec = std::move(t.replay_frames.front());
        t.replay_frames.pop_front();
        if (rec.method != in.name) {
          throw Error(ErrorCode::RestoreFailed, t.id + ": frame record " + rec.method + " replayed at CALL " + in.name);
        }
        next.locals = std::move(rec.locals);
        next.apc = rec.apc;
        next.restore_flag = true;
      } else {
        next.locals.assign(callee->nlocals, Value{std::int64_t{0}});
        for (std::size_t i = 0; i < args.size(); ++i) next.locals[i] = std::move(args[i]);
      }
      t.frames.push_back(std::move(next));
      return;
    }
    case Opcode::Ret:
    case Opcode::RetV: {
      if (terminated) return terminate_thread(t);
      std::optional<Value> rv;
      if (in.op == Opcode::RetV) rv = pop();
      t.frames.pop_back();
      if (t.frames.empty()) {
        t.result = std::move(rv);
        finish_thread(t);
        return;
      }
      auto& caller = t.frames.back();
      if (rv) caller.stack.push_back(std::move(*rv));
      caller.pc++;
      return;
    }
    case Opcode::Lock: {
      if (terminated) return terminate_thread(t);
      if (replay_site()) return apply_replay_block(t, in);
      const auto& id = monitor_id(f.locals[in.operand]);
      auto& m = st_.monitors[id];
      if (m.owner.empty()) {
        m.owner = t.id;
        m.entry_count = 1;
      } else if (m.owner == t.id) {
        m.entry_count++;
      } else {
        t.status = ThreadStatus::MonitorEntry;
        t.monitor = id;
        t.reacquire = 1;
        m.entry_set.push_back(t.id);
        return;
      }
      break;
    }
    case Opcode::Unlock: {
      const auto& id = monitor_id(f.locals[in.operand]);
      auto& m = st_.monitors[id];
      if (m.owner != t.id) throw GhostThrow{"monitor"};
      f.pc++;
      if (--m.entry_count == 0) release_monitor(m, id);
      return;
    }
    case Opcode::Wait: {
      if (terminated) return terminate_thread(t);
      if (replay_site()) return apply_replay_block(t, in);
      const auto& id = monitor_id(f.locals[in.operand]);
      auto& m = st_.monitors[id];
      if (m.owner != t.id) throw GhostThrow{"monitor"};
      t.reacquire = m.entry_count;
      t.monitor = id;
      t.status = ThreadStatus::MonitorWait;
      m.wait_set.push_back(t.id);
      release_monitor(m, id);
      return;
    }
    case Opcode::Notify:
    case Opcode::NotifyAll: {
      const auto& id = monitor_id(f.locals[in.operand]);
      auto& m = st_.monitors[id];
      if (m.owner != t.id) throw GhostThrow{"monitor"};
      do {
        if (m.wait_set.empty()) break;
        auto w = m.wait_set.front();
        m.wait_set.pop_front();
        if (auto* wt = find_thread(w)) {
          wt->status = ThreadStatus::MonitorEntry;
          m.entry_set.push_back(w);
        }
      } while (in.op == Opcode::NotifyAll);
      break;
    }
    case Opcode::Spawn: {
      if (terminated) return terminate_thread(t);
      auto args = pop_args(in.nargs);
      if (!charge("threads", 1)) {
        request_terminate();
        return terminate_thread(t);
      }
      const auto* callee = program_->program.find(in.name);
      auto& child = new_thread(*callee, std::move(args));
      f.stack.push_back(Value{ir::ThreadRef{child.id}});
      break;
    }
    case Opcode::Join: {
      if (terminated) return terminate_thread(t);
      if (replay_site()) return apply_replay_block(t, in);
      const auto* ref = std::get_if<ir::ThreadRef>(&f.locals[in.operand]);
      if (!ref) throw GhostThrow{"type"};
      const auto* target = find_thread(ref->id);
      if (target && target->status != ThreadStatus::Done) {
        t.status = ThreadStatus::JoinWait;
        t.join_target = ref->id;
        return;
      }
      break;
    }
    case Opcode::Sleep: {
      if (terminated) return terminate_thread(t);
      if (replay_site()) return apply_replay_block(t, in);
      auto ms = as_int(f.locals[in.operand]);
      if (ms > 0) {
        t.status = ThreadStatus::Sleeping;
        t.wake_at = st_.clock + ms;
        return;
      }
      break;
    }
    case Opcode::GGet: {
      auto it = st_.globals.find(in.name);
      f.stack.push_back(it == st_.globals.end() ? Value{std::int64_t{0}} : it->second);
      break;
    }
    case Opcode::GSet: st_.globals[in.name] = pop(); break;
    case Opcode::Sys: {
      if (in.name == "recv") {
        if (terminated) return terminate_thread(t);
        if (replay_site()) return apply_replay_block(t, in);
        if (!st_.inbox.empty()) {
          f.stack.push_back(std::move(st_.inbox.front()));
          st_.inbox.pop_front();
          break;
        }
        t.status = ThreadStatus::RecvWait;
        st_.recv_waiters.push_back(t.id);
        return;
      }
      auto args = pop_args(in.nargs);
      if (in.name == "send") {
        const auto* target = std::get_if<std::string>(&args[0]);
        if (!target) throw GhostThrow{"type"};
        if (!charge("messages", 1)) {
          request_terminate();
          return terminate_thread(t);
        }
        st_.outbox.push_back(Message{*target, std::move(args[1])});
      } else if (in.name == "log") {
        st_.output.push_back(ir::to_display(args[0]));
      } else if (in.name == "self") {
        f.stack.push_back(Value{options_.entity_id});
      } else if (in.name == "publish") {
        host_->publish(args[0]);
      } else if (in.name == "query") {
        f.stack.push_back(host_->query(args[0], as_int(args[1])));
      } else if (in.name == "locate") {
        f.stack.push_back(host_->locate(ir::to_display(args[0])));
      } else if (in.name == "limits") {
        f.stack.push_back(Value{canonical_dump(authz::counters_to_json(st_.limits))});
      } else if (in.name == "usage") {
        f.stack.push_back(Value{canonical_dump(authz::counters_to_json(st_.usage))});
      }
      break;
    }
    case Opcode::Throw: throw GhostThrow{in.name};
    case Opcode::Check:
      if (terminated) return terminate_thread(t);
      if (t.replaying) {
        if (!t.replay_frames.empty() ||
            (t.replay_block && t.replay_block->status != ThreadStatus::ExecWait)) {
          throw Error(ErrorCode::RestoreFailed, t.id + ": replay reached CHECK before its site");
        }
        t.replaying = false;
        t.replay_block.reset();
      }
      if (st_.flag == Flag::Suspending) {
        t.status = ThreadStatus::ExecWait;
        return;
      }
      break;
    case Opcode::SetApc: f.apc = in.operand; break;
    case Opcode::Dispatch:
      if (f.restore_flag) {
        f.restore_flag = false;
        const auto& table = *f.method->dispatch;
        if (f.apc == kEntryApc) {
          f.pc = table.default_target;
        } else if (f.apc < 0 || static_cast<std::size_t>(f.apc) >= table.sites.size()) {
          throw Error(ErrorCode::ApcOutOfRange, f.method->name + " apc " + std::to_string(f.apc));
        } else {
          f.pc = table.sites[static_cast<std::size_t>(f.apc)].target;
        }
        return;
      }
      break;
  }
  f.pc++;
}

}  // namespace dget::vm

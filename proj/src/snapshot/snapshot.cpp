#include "dget/snapshot/snapshot.hpp"

#include <algorithm>

#include "dget/common/error.hpp"
#include "dget/instrument/instrument.hpp"
#include "dget/ir/assembly.hpp"

namespace dget::snapshot {

using vm::BlockRecord;
using vm::FrameRecord;
using vm::ThreadStatus;

namespace {

[[noreturn]] void malformed(const std::string& what) { throw Error(ErrorCode::MalformedField, what); }

const Json& field(const Json& j, const char* key) {
  if (!j.is_object()) malformed(std::string("expected object around '") + key + "'");
  auto it = j.find(key);
  if (it == j.end()) malformed(std::string("missing field '") + key + "'");
  return *it;
}

std::string str_field(const Json& j, const char* key) {
  const auto& v = field(j, key);
  if (!v.is_string()) malformed(std::string("field '") + key + "' is not a string");
  return v.get<std::string>();
}

std::int64_t int_field(const Json& j, const char* key) {
  const auto& v = field(j, key);
  if (!v.is_number_integer()) malformed(std::string("field '") + key + "' is not an integer");
  return v.get<std::int64_t>();
}

const Json& array_field(const Json& j, const char* key) {
  const auto& v = field(j, key);
  if (!v.is_array()) malformed(std::string("field '") + key + "' is not an array");
  return v;
}

std::vector<std::string> strings(const Json& arr) {
  std::vector<std::string> out;
  for (const auto& e : arr) {
    if (!e.is_string()) malformed("expected string element");
    out.push_back(e.get<std::string>());
  }
  return out;
}

ir::Value value_of(const Json& j) {
  try {
    return ir::value_from_json(j);
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    malformed(std::string("value: ") + e.what());
  }
}

bool uses_monitor(ThreadStatus s) { return s == ThreadStatus::MonitorEntry || s == ThreadStatus::MonitorWait; }

Json block_json(const BlockRecord& b) {
  Json d = Json::object();
  if (uses_monitor(b.status)) {
    d["monitor"] = b.monitor;
    d["reacquire"] = b.reacquire;
  } else if (b.status == ThreadStatus::JoinWait) {
    d["join_target"] = b.join_target;
  } else if (b.status == ThreadStatus::Sleeping) {
    d["sleep_remaining"] = b.sleep_remaining;
  }
  return d;
}

BlockRecord block_of(const std::string& status, const Json& d) {
  BlockRecord b;
  auto st = vm::status_from_name(status);
  if (!st || !vm::is_blocked(*st)) malformed("thread status '" + status + "'");
  b.status = *st;
  if (uses_monitor(b.status)) {
    b.monitor = str_field(d, "monitor");
    b.reacquire = int_field(d, "reacquire");
    if (b.reacquire < 1) malformed("reacquire count");
  } else if (b.status == ThreadStatus::JoinWait) {
    b.join_target = str_field(d, "join_target");
  } else if (b.status == ThreadStatus::Sleeping) {
    b.sleep_remaining = int_field(d, "sleep_remaining");
  }
  return b;
}

// Checks that a frame's pc is reachable from its apc's resumption target by
// the reload sequence alone; returns the site entry.
const ir::DispatchEntry& site_of(const vm::Frame& f) {
  const auto& table = *f.method->dispatch;
  if (f.apc < 0 || static_cast<std::size_t>(f.apc) >= table.sites.size()) {
    throw Error(ErrorCode::ApcOutOfRange, f.method->name + " apc " + std::to_string(f.apc));
  }
  const auto& e = table.sites[static_cast<std::size_t>(f.apc)];
  if (f.pc <= e.target) throw Error(ErrorCode::NotQuiescent, f.method->name + ": pc before its site");
  for (auto i = e.target + 1; i < f.pc; ++i) {
    if (f.method->body[i].op != ir::Opcode::Load) {
      throw Error(ErrorCode::NotQuiescent, f.method->name + ": apc does not match pc");
    }
  }
  return e;
}

}  // namespace

EntitySnapshot capture(const vm::Vm& machine) {
  if (machine.flag() != vm::Flag::Suspending || !machine.quiescent()) {
    throw Error(ErrorCode::NotQuiescent, "entity is not suspended at quiescence");
  }
  const auto& st = machine.state();
  EntitySnapshot s;
  s.entity_id = machine.options().entity_id;
  s.program = ir::emit_assembly(machine.program().program);
  for (const auto& [ord, t] : st.threads) {
    if (t.status == ThreadStatus::Done) continue;
    ThreadRecord rec;
    rec.id = t.id;
    for (std::size_t k = 0; k < t.frames.size(); ++k) {
      const auto& f = t.frames[k];
      const auto& site = site_of(f);
      const auto& at = f.method->body[f.pc];
      bool top = k + 1 == t.frames.size();
      bool ok = top ? (t.status == ThreadStatus::ExecWait ? at.op == ir::Opcode::Check : ir::is_blocking(at))
                    : at.op == ir::Opcode::Call;
      if (!ok || (top && t.status == ThreadStatus::ExecWait) != (site.kind == ir::SiteKind::CheckSite)) {
        throw Error(ErrorCode::NotQuiescent, t.id + ": frame " + f.method->name + " is not at a resumption site");
      }
      rec.frames.push_back(FrameRecord{f.method->name, f.locals, f.apc});
    }
    rec.block.status = t.status;
    if (uses_monitor(t.status)) {
      rec.block.monitor = t.monitor;
      rec.block.reacquire = t.reacquire;
    } else if (t.status == ThreadStatus::JoinWait) {
      rec.block.join_target = t.join_target;
    } else if (t.status == ThreadStatus::Sleeping) {
      rec.block.sleep_remaining = std::max<std::int64_t>(0, t.wake_at - st.clock);
    }
    s.threads.push_back(std::move(rec));
  }
  s.monitors = st.monitors;
  s.globals = st.globals;
  s.inbox.assign(st.inbox.begin(), st.inbox.end());
  s.recv_waiters.assign(st.recv_waiters.begin(), st.recv_waiters.end());
  s.usage = st.usage;
  s.limits = st.limits;
  s.next_thread = st.next_ordinal;
  s.digest = digest(s);
  return s;
}

Json to_json(const EntitySnapshot& s, bool with_digest) {
  Json j = Json::object();
  j["format_version"] = s.format_version;
  j["digest_alg"] = s.digest_alg;
  j["entity_id"] = s.entity_id;
  j["program"] = s.program;
  Json threads = Json::array();
  for (const auto& t : s.threads) {
    Json frames = Json::array();
    for (const auto& f : t.frames) {
      Json locals = Json::array();
      for (const auto& v : f.locals) locals.push_back(ir::to_json(v));
      frames.push_back({{"method", f.method}, {"locals", locals}, {"apc", f.apc}});
    }
    threads.push_back({{"id", t.id},
                       {"frames", frames},
                       {"status", std::string(vm::status_name(t.block.status))},
                       {"detail", block_json(t.block)}});
  }
  j["threads"] = threads;
  Json monitors = Json::object();
  for (const auto& [id, m] : s.monitors) {
    monitors[id] = {{"owner", m.owner},
                    {"entry_count", m.entry_count},
                    {"entry_set", Json(std::vector<std::string>(m.entry_set.begin(), m.entry_set.end()))},
                    {"wait_set", Json(std::vector<std::string>(m.wait_set.begin(), m.wait_set.end()))}};
  }
  j["monitors"] = monitors;
  Json globals = Json::object();
  for (const auto& [k, v] : s.globals) globals[k] = ir::to_json(v);
  j["globals"] = globals;
  Json inbox = Json::array();
  for (const auto& v : s.inbox) inbox.push_back(ir::to_json(v));
  j["inbox"] = inbox;
  j["recv_waiters"] = s.recv_waiters;
  j["usage"] = authz::counters_to_json(s.usage);
  j["limits"] = authz::counters_to_json(s.limits);
  j["next_thread"] = s.next_thread;
  if (with_digest) j["digest"] = s.digest;
  return j;
}

std::string digest(const EntitySnapshot& s) {
  if (s.digest_alg != kDigestAlg) throw Error(ErrorCode::UnsupportedVersion, "digest algorithm " + s.digest_alg);
  return sha256_hex(canonical_dump(to_json(s, false)));
}

std::string encode(const EntitySnapshot& s) { return canonical_dump(to_json(s, true)); }

EntitySnapshot decode(std::string_view bytes) {
  Json j = parse_json(bytes);
  if (!j.is_object()) malformed("snapshot is not an object");
  EntitySnapshot s;
  s.format_version = str_field(j, "format_version");
  if (s.format_version != kFormatVersion) throw Error(ErrorCode::UnsupportedVersion, s.format_version);
  s.digest_alg = str_field(j, "digest_alg");
  if (s.digest_alg != kDigestAlg) throw Error(ErrorCode::UnsupportedVersion, "digest algorithm " + s.digest_alg);
  s.entity_id = str_field(j, "entity_id");
  s.program = str_field(j, "program");
  for (const auto& t : array_field(j, "threads")) {
    ThreadRecord rec;
    rec.id = str_field(t, "id");
    for (const auto& f : array_field(t, "frames")) {
      FrameRecord fr;
      fr.method = str_field(f, "method");
      for (const auto& v : array_field(f, "locals")) fr.locals.push_back(value_of(v));
      fr.apc = int_field(f, "apc");
      rec.frames.push_back(std::move(fr));
    }
    if (rec.frames.empty()) malformed("thread " + rec.id + " has no frames");
    rec.block = block_of(str_field(t, "status"), field(t, "detail"));
    s.threads.push_back(std::move(rec));
  }
  const auto& monitors = field(j, "monitors");
  if (!monitors.is_object()) malformed("monitors");
  for (const auto& [id, m] : monitors.items()) {
    vm::MonitorState ms;
    ms.owner = str_field(m, "owner");
    ms.entry_count = int_field(m, "entry_count");
    for (auto& e : strings(array_field(m, "entry_set"))) ms.entry_set.push_back(std::move(e));
    for (auto& e : strings(array_field(m, "wait_set"))) ms.wait_set.push_back(std::move(e));
    if (ms.owner.empty() != (ms.entry_count == 0) || ms.entry_count < 0) malformed("monitor " + id + " ownership");
    s.monitors.emplace(id, std::move(ms));
  }
  const auto& globals = field(j, "globals");
  if (!globals.is_object()) malformed("globals");
  for (const auto& [k, v] : globals.items()) s.globals.emplace(k, value_of(v));
  for (const auto& v : array_field(j, "inbox")) s.inbox.push_back(value_of(v));
  s.recv_waiters = strings(array_field(j, "recv_waiters"));
  try {
    s.usage = authz::counters_from_json(field(j, "usage"));
    s.limits = authz::counters_from_json(field(j, "limits"));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::MalformedField) throw;
    malformed(e.what());
  }
  auto next = int_field(j, "next_thread");
  if (next < 0) malformed("next_thread");
  s.next_thread = static_cast<std::uint64_t>(next);
  s.digest = str_field(j, "digest");
  if (digest(s) != s.digest) throw Error(ErrorCode::DigestMismatch, "snapshot digest does not match its content");
  return s;
}

namespace {

std::uint64_t ordinal_of(const std::string& id) {
  if (id.size() < 2 || id[0] != 't' || !std::all_of(id.begin() + 1, id.end(), ::isdigit)) {
    malformed("thread id '" + id + "'");
  }
  return std::stoull(id.substr(1));
}

void check_frames(const instrument::InstrumentedProgram& ip, const ThreadRecord& t) {
  for (std::size_t k = 0; k < t.frames.size(); ++k) {
    const auto& fr = t.frames[k];
    const auto* m = ip.program.find(fr.method);
    if (!m) throw Error(ErrorCode::UnknownMethod, t.id + ": " + fr.method);
    if (fr.locals.size() != m->nlocals) malformed(t.id + ": locals of " + fr.method);
    const auto& table = *m->dispatch;
    if (fr.apc < 0 || static_cast<std::size_t>(fr.apc) >= table.sites.size()) {
      throw Error(ErrorCode::ApcOutOfRange, t.id + ": " + fr.method + " apc " + std::to_string(fr.apc));
    }
    const auto& site = table.sites[static_cast<std::size_t>(fr.apc)];
    std::size_t i = site.target + 1;
    while (i < m->body.size() && m->body[i].op == ir::Opcode::Load) ++i;
    const auto& at = m->body.at(site.target + 1);
    bool top = k + 1 == t.frames.size();
    bool ok = false;
    if (!top) {
      ok = i < m->body.size() && m->body[i].op == ir::Opcode::Call && m->body[i].name == t.frames[k + 1].method;
    } else if (t.block.status == ThreadStatus::ExecWait) {
      ok = at.op == ir::Opcode::Check;
    } else {
      ok = ir::is_blocking(at);
    }
    if (!ok) throw Error(ErrorCode::RestoreFailed, t.id + ": apc " + std::to_string(fr.apc) + " of " + fr.method +
                                                       " does not lead to the recorded state");
  }
}

}  // namespace

std::unique_ptr<vm::Vm> restore(const EntitySnapshot& s, const RestoreOptions& options) {
  if (s.format_version != kFormatVersion) throw Error(ErrorCode::UnsupportedVersion, s.format_version);
  auto program = ir::parse_assembly(s.program);
  auto ip = instrument::accept_instrumented(program);

  vm::VmState st;
  st.flag = vm::Flag::Suspending;
  st.monitors = s.monitors;
  for (const auto& id : ip.program.declared_monitors) st.monitors[id];
  st.globals = s.globals;
  st.inbox.assign(s.inbox.begin(), s.inbox.end());
  st.recv_waiters.assign(s.recv_waiters.begin(), s.recv_waiters.end());
  st.usage = s.usage;
  st.limits = s.limits;
  st.next_ordinal = s.next_thread;

  std::map<std::string, std::uint64_t> ordinals;
  for (const auto& t : s.threads) {
    check_frames(ip, t);
    auto ord = ordinal_of(t.id);
    if (ord >= s.next_thread || st.threads.count(ord)) malformed("thread id '" + t.id + "'");
    ordinals[t.id] = ord;
    vm::GreenThread g;
    g.id = t.id;
    g.ordinal = ord;
    g.status = ThreadStatus::PendingLaunch;
    g.monitor = t.block.monitor;
    g.reacquire = t.block.reacquire;
    g.join_target = t.block.join_target;
    vm::Frame bottom;
    bottom.method = ip.program.find(t.frames[0].method);
    bottom.locals = t.frames[0].locals;
    bottom.apc = t.frames[0].apc;
    bottom.restore_flag = true;
    g.frames.push_back(std::move(bottom));
    g.replay_frames.assign(t.frames.begin() + 1, t.frames.end());
    g.replay_block = t.block;
    st.threads.emplace(ord, std::move(g));
  }
  for (auto& [id, m] : st.monitors) {
    auto live = [&](const std::string& tid) { return ordinals.count(tid) > 0; };
    if (!m.owner.empty() && !live(m.owner)) malformed("monitor " + id + " owned by unknown thread");
    if (!std::all_of(m.entry_set.begin(), m.entry_set.end(), live) ||
        !std::all_of(m.wait_set.begin(), m.wait_set.end(), live)) {
      malformed("monitor " + id + " references unknown thread");
    }
  }
  // Wait sets are rebuilt as the waiting threads are launched.
  std::vector<std::string> waiters;
  for (auto& [id, m] : st.monitors) {
    for (const auto& tid : m.wait_set) waiters.push_back(tid);
    m.wait_set.clear();
  }
  std::vector<std::string> exec_waiters;
  std::vector<std::string> others;
  for (const auto& t : s.threads) {
    if (t.block.status == ThreadStatus::MonitorWait) {
      if (std::find(waiters.begin(), waiters.end(), t.id) == waiters.end()) {
        malformed(t.id + " waits on " + t.block.monitor + " but is not in its wait set");
      }
    } else if (t.block.status == ThreadStatus::ExecWait) {
      exec_waiters.push_back(t.id);
    } else {
      others.push_back(t.id);
    }
  }
  if (static_cast<std::ptrdiff_t>(waiters.size()) != std::count_if(s.threads.begin(), s.threads.end(), [](const ThreadRecord& t) {
        return t.block.status == ThreadStatus::MonitorWait;
      })) {
    malformed("wait sets do not match waiting threads");
  }
  std::sort(exec_waiters.begin(), exec_waiters.end(),
            [&](const std::string& a, const std::string& b) { return ordinals[a] < ordinals[b]; });
  std::sort(others.begin(), others.end(),
            [&](const std::string& a, const std::string& b) { return ordinals[a] < ordinals[b]; });

  auto load = options.load;
  load.entity_id = s.entity_id;
  auto machine = vm::Vm::from_state(std::move(ip), std::move(st), load);

  auto launch = [&](const std::string& id) {
    machine->launch(id);
    std::uint64_t spent = 0;
    while (!machine->settled(id)) {
      auto out = machine->step(1);
      spent += out.executed;
      if (out.executed == 0 || spent > options.replay_budget) {
        throw Error(ErrorCode::RestoreFailed, "replay of " + id + " did not settle");
      }
    }
  };
  auto run_released = [&] {
    std::uint64_t spent = 0;
    while (spent <= options.replay_budget) {
      auto out = machine->step(256);
      spent += out.executed;
      if (out.kind != vm::StepKind::Ran || out.executed == 0) break;
    }
  };

  if (options.order == LaunchOrder::Normal) {
    for (const auto& id : waiters) launch(id);
    for (const auto& id : exec_waiters) launch(id);
    for (const auto& id : others) launch(id);
    if (options.resume) machine->resume();
  } else {
    for (const auto& id : exec_waiters) launch(id);
    machine->resume();
    run_released();
    for (const auto& id : waiters) launch(id);
    for (const auto& id : others) launch(id);
  }
  return machine;
}

}  // namespace dget::snapshot

#include "dget/nucleus/nucleus.hpp"

#include <algorithm>

#include "dget/common/error.hpp"
#include "dget/instrument/instrument.hpp"
#include "dget/ir/assembly.hpp"
#include "dget/nucleus/admin.hpp"
#include "dget/snapshot/snapshot.hpp"

namespace dget::nucleus {

using vm::Value;

constexpr std::size_t kEventCap = 4096;
constexpr int kMaxForwardHops = 8;

struct Nucleus::Record {
  std::string id;
  Manifest manifest;
  bool system = false;
  Shell shell;
  std::unique_ptr<vm::Vm> vm;
  std::unique_ptr<Host> host;
  std::vector<std::string> output;
  std::size_t output_seen = 0;
  std::uint64_t location_version = 1;
  bool busy = false;  // migration in progress
  std::deque<Value> pending;  // messages received while MIGRATING
  std::string fault;
};

/// Entity-context services; always called with the nucleus lock held.
class Nucleus::Host final : public vm::SysHost {
 public:
  Host(Nucleus& n, std::string entity) : n_(n), entity_(std::move(entity)) {}

  void publish(const Value& descriptor) override {
    auto expr = overlay::parse_expression(ir::to_display(descriptor));
    for (const auto& t : expr.terms) {
      if (t.op != overlay::PredOp::Eq) throw Error(ErrorCode::BadRequest, "descriptor terms must be name=value");
      n_.published_[t.name] = t.value;
    }
    n_.republish();
  }

  Value query(const Value& expr, std::int64_t ttl) override {
    (void)ttl;
    auto e = overlay::parse_expression(ir::to_display(expr));
    std::int64_t hits = 0;
    for (const auto& a : n_.overlay_->adverts()) hits += overlay::matches(e, a.descriptor);
    return Value{hits};
  }

  Value locate(const std::string& entity) override { return Value{n_.address_of(entity).value_or("")}; }

 private:
  Nucleus& n_;
  std::string entity_;
};

Json to_json(const EntityInfo& e, bool detail) {
  Json j{{"id", e.id},
         {"name", e.name},
         {"kind", e.kind},
         {"state", std::string(state_name(e.state))},
         {"system", e.system},
         {"owner", e.owner},
         {"home", e.home},
         {"usage", authz::counters_to_json(e.usage)},
         {"limits", authz::counters_to_json(e.limits)}};
  if (!e.fault.empty()) j["fault"] = e.fault;
  if (detail) {
    j["output"] = e.output;
    Json g = Json::object();
    for (const auto& [k, v] : e.globals) g[k] = ir::to_json(v);
    j["globals"] = g;
  }
  return j;
}

Json to_json(const MigrationReceipt& r) {
  return Json{{"entity", r.entity},
              {"source", r.source},
              {"target", r.target},
              {"digest", r.digest},
              {"version", r.version},
              {"state", std::string(state_name(ShellState::Terminated))}};
}

Json to_json(const Event& e) {
  return Json{{"seq", e.seq},         {"entity", e.entity},   {"name", e.name},
              {"state", e.state},     {"previous", e.previous}, {"detail", e.detail}};
}

const Clock& Nucleus::default_clock() {
  static const SystemClock clock;
  return clock;
}

Nucleus::Nucleus(NucleusConfig config, const Clock& clock) : config_(std::move(config)), clock_(clock) {}

Nucleus::~Nucleus() { shutdown(); }

std::string Nucleus::wire_address() const { return wire_ ? wire_->address() : config_.listen; }

std::string Nucleus::admin_address() const { return admin_ ? admin_->address() : config_.admin_listen; }

void Nucleus::start() {
  if (running_) return;
  wire_ = std::make_unique<TcpServer>(config_.listen, [this](const WireFrame& f) { return handle_frame(f); });
  admin_ = std::make_unique<AdminServer>(*this, config_.admin_listen);
  {
    Lock lock(mu_);
    overlay_ = std::make_unique<overlay::OverlayNode>(overlay::NodeInfo{config_.id, wire_->address()}, config_.overlay,
                                                      clock_, config_.seed);
    for (auto name : kSystemEntities) {
      auto r = std::make_unique<Record>();
      r->id = config_.id + "." + std::string(name);
      r->manifest.name = std::string(name);
      r->manifest.owner = config_.identity.key.identity;
      r->manifest.kind = EntityKind::OperationDriven;
      r->system = true;
      r->shell.transition(ShellState::Running);
      records_[r->id] = std::move(r);
    }
    published_ = config_.descriptor;
    published_["nucleus"] = config_.id;
    republish();
    send_overlay(overlay_->hello(config_.bootstrap));
    running_ = true;
    stopping_ = false;
  }
  wire_->start();
  admin_->start();
  executor_ = std::thread([this] { executor_loop(); });
  sender_ = std::thread([this] { sender_loop(); });
}

void Nucleus::shutdown() {
  if (!running_) return;
  if (admin_) admin_->stop();
  if (wire_) wire_->stop();
  {
    Lock lock(mu_);
    stopping_ = true;
  }
  cv_.notify_all();
  outgoing_cv_.notify_all();
  if (executor_.joinable()) executor_.join();
  if (sender_.joinable()) sender_.join();
  running_ = false;
}

std::string Nucleus::authenticate(const Json& env, std::string_view payload) const {
  auto a = open(config_.identity.key.params, env, payload, clock_.now());
  if (!a.result) throw Error(ErrorCode::AuthFailed, std::string("caller not authenticated: ") + std::string(code_name(a.result.reason)));
  return a.identity;
}

Nucleus::Record& Nucleus::find(const std::string& id, const Lock&) {
  auto it = records_.find(id);
  if (it == records_.end()) throw Error(ErrorCode::UnknownEntity, "no entity " + id + " on " + config_.id);
  return *it->second;
}

const Nucleus::Record& Nucleus::find(const std::string& id, const Lock&) const {
  auto it = records_.find(id);
  if (it == records_.end()) throw Error(ErrorCode::UnknownEntity, "no entity " + id + " on " + config_.id);
  return *it->second;
}

Nucleus::Record& Nucleus::find_vm(const std::string& id, const Lock& lock) {
  auto& r = find(id, lock);
  if (r.system) throw Error(ErrorCode::IllegalTransition, id + " is a system entity");
  return r;
}

std::vector<authz::PolicyRule> Nucleus::admin_rules() const {
  if (!config_.admin_policies.empty()) return config_.admin_policies;
  return {authz::PolicyRule{"*@" + config_.identity.key.params.domain, "*", "*", authz::Effect::Permit}};
}

void Nucleus::authorize(const std::string& caller, const std::string& action, const Record& r) const {
  auto rules = r.manifest.policies;
  auto admin = admin_rules();
  rules.insert(rules.end(), admin.begin(), admin.end());
  if (authz::evaluate_policy(rules, caller, action, r.manifest.name) == authz::Effect::Deny) {
    throw Error(ErrorCode::PolicyDenied, caller + " may not " + action + " " + r.manifest.name);
  }
}

void Nucleus::emit(const Record& r, ShellState previous, const std::string& detail) {
  events_.push_back(Event{next_event_++, r.id, r.manifest.name, std::string(state_name(r.shell.state())),
                          std::string(state_name(previous)), detail});
  if (events_.size() > kEventCap) events_.pop_front();
  cv_.notify_all();
}

void Nucleus::set_state(Record& r, ShellState to, const std::string& detail) {
  auto prev = r.shell.transition(to);
  emit(r, prev, detail);
}

EntityInfo Nucleus::info(const Record& r, bool detail) const {
  EntityInfo e;
  e.id = r.id;
  e.name = r.manifest.name;
  e.kind = r.system ? "SYSTEM" : std::string(kind_name(r.manifest.kind));
  e.state = r.shell.state();
  e.system = r.system;
  e.owner = r.manifest.owner;
  e.home = wire_address();
  e.fault = r.fault;
  if (r.vm) {
    e.usage = r.vm->state().usage;
    e.limits = r.vm->state().limits;
    if (detail) e.globals = r.vm->state().globals;
  }
  if (detail) e.output = r.output;
  return e;
}

std::string Nucleus::deploy(const std::string& caller, const Manifest& manifest,
                            const std::optional<std::string>& program) {
  validate(manifest);
  {
    Lock lock(mu_);
    if (authz::evaluate_policy(admin_rules(), caller, "deploy", manifest.name) == authz::Effect::Deny) {
      throw Error(ErrorCode::PolicyDenied, caller + " may not deploy " + manifest.name);
    }
  }
  auto text = program ? *program : program_source(manifest);
  instrument::InstrumentedProgram ip;
  try {
    auto gp = ir::parse_assembly(text);
    gp.entry = manifest.entry;
    ip = instrument::instrument(gp);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::LoadRejected || e.code() == ErrorCode::VerificationFailed) throw;
    throw Error(ErrorCode::VerificationFailed, std::string(code_name(e.code())) + ": " + e.what());
  }
  for (const auto& op : manifest.operations) {
    auto it = ip.program.methods.find(op.name);
    if (it == ip.program.methods.end() || it->second.nargs != op.arity) {
      throw Error(ErrorCode::LoadRejected, "exposed operation " + op.name + "/" + std::to_string(op.arity) +
                                               " has no matching method");
    }
  }
  auto limits = config_.default_limits;
  for (const auto& [k, v] : manifest.limits) limits[k] = v;

  Lock lock(mu_);
  auto r = std::make_unique<Record>();
  r->id = config_.id + ".e" + std::to_string(next_ordinal_++);
  r->manifest = manifest;
  if (!r->manifest.program_text) {
    r->manifest.program_text = text;
    r->manifest.program_path.reset();
  }
  vm::LoadOptions lo;
  lo.entity_id = r->id;
  lo.seed = config_.seed + next_ordinal_;
  lo.inbox_bound = config_.inbox_bound;
  r->vm = std::make_unique<vm::Vm>(std::move(ip), limits, lo);
  r->host = std::make_unique<Host>(*this, r->id);
  r->vm->set_host(r->host.get());
  auto& rec = *r;
  records_[r->id] = std::move(r);
  set_state(rec, ShellState::Running, "deployed");
  send_overlay(overlay_->update_location(rec.id, wire_address(), rec.location_version));
  return rec.id;
}

bool Nucleus::wait_quiescent(Lock& lock, Record& r) {
  auto id = r.id;
  auto* self = &r;
  cv_.notify_all();
  return cv_.wait_for(lock, std::chrono::milliseconds(config_.quiescence_timeout_ms), [&] {
    auto it = records_.find(id);
    if (it == records_.end() || it->second.get() != self) return true;
    return self->vm->quiescent() || self->shell.state() == ShellState::Terminated ||
           self->shell.state() == ShellState::Failed;
  });
}

ShellState Nucleus::stop_entity(const std::string& caller, const std::string& id) {
  Lock lock(mu_);
  auto& r = find_vm(id, lock);
  authorize(caller, "stop", r);
  auto s = r.shell.state();
  if (r.busy || (s != ShellState::Running && s != ShellState::Suspended)) {
    throw Error(ErrorCode::IllegalTransition, id + " is " + std::string(state_name(s)));
  }
  r.vm->request_terminate();
  cv_.notify_all();
  auto* self = &r;
  cv_.wait_for(lock, std::chrono::milliseconds(config_.quiescence_timeout_ms), [&] {
    auto it = records_.find(id);
    return it == records_.end() || it->second.get() != self || self->shell.state() == ShellState::Terminated ||
           self->shell.state() == ShellState::Failed;
  });
  return find(id, lock).shell.state();
}

ShellState Nucleus::suspend_entity(const std::string& caller, const std::string& id) {
  Lock lock(mu_);
  auto& r = find_vm(id, lock);
  authorize(caller, "suspend", r);
  if (r.busy || r.shell.state() != ShellState::Running || r.vm->flag() != vm::Flag::Running) {
    throw Error(ErrorCode::IllegalTransition, id + " is " + std::string(state_name(r.shell.state())));
  }
  r.vm->request_suspend();
  r.busy = true;
  bool ok = wait_quiescent(lock, r);
  auto& again = find(id, lock);
  again.busy = false;
  if (again.shell.state() != ShellState::Running) return again.shell.state();
  if (!ok) {
    again.vm->resume();
    throw Error(ErrorCode::QuiescenceTimeout, id + " did not reach quiescence");
  }
  set_state(again, ShellState::Suspended);
  return again.shell.state();
}

ShellState Nucleus::resume_entity(const std::string& caller, const std::string& id) {
  Lock lock(mu_);
  auto& r = find_vm(id, lock);
  authorize(caller, "resume", r);
  if (r.busy || r.shell.state() != ShellState::Suspended) {
    throw Error(ErrorCode::IllegalTransition, id + " is " + std::string(state_name(r.shell.state())));
  }
  if (r.vm->flag() == vm::Flag::Suspending) r.vm->resume();
  set_state(r, ShellState::Running);
  cv_.notify_all();
  return r.shell.state();
}

WireFrame Nucleus::make_frame(const std::string& type, Json body) const {
  WireFrame f;
  f.type = type;
  f.sender = config_.id;
  f.address = wire_address();
  f.body = std::move(body);
  seal(f, config_.identity, clock_.now());
  return f;
}

std::optional<WireFrame> Nucleus::exchange(const std::string& address, WireFrame f) {
  auto reply = tcp_exchange(address, f, std::chrono::milliseconds(config_.request_timeout_ms), true);
  if (!open(config_.identity.key.params, *reply, clock_.now()).result) {
    throw Error(ErrorCode::TransportError, "unauthenticated reply from " + address);
  }
  return reply;
}

namespace {

[[noreturn]] void rethrow_remote(const WireFrame& reply, ErrorCode fallback) {
  auto code = reply.body.contains("code") && reply.body["code"].is_string()
                  ? code_from_name(reply.body["code"].get<std::string>())
                  : fallback;
  auto msg = reply.body.value("message", std::string("remote error"));
  throw Error(code, msg);
}

}  // namespace

MigrationReceipt Nucleus::migrate(const std::string& caller, const std::string& id, const std::string& target) {
  parse_endpoint(target);
  Lock lock(mu_);
  auto& r0 = find_vm(id, lock);
  authorize(caller, "migrate", r0);
  auto s = r0.shell.state();
  if (r0.busy || (s != ShellState::Running && s != ShellState::Suspended)) {
    throw Error(ErrorCode::IllegalTransition, id + " is " + std::string(state_name(s)));
  }
  if (target == wire_address()) throw Error(ErrorCode::BadRequest, "target is this nucleus");
  r0.busy = true;
  auto* self = &r0;
  auto migration_id = config_.id + "/m" + std::to_string(++migration_counter_) + "/" + id;
  auto manifest_json = to_json(r0.manifest);
  lock.unlock();

  auto release = [&](ErrorCode code, const std::string& msg) -> MigrationReceipt {
    if (!lock.owns_lock()) lock.lock();
    auto& r = *self;
    r.busy = false;
    if (r.shell.state() == ShellState::Migrating) {
      auto back = *r.shell.migrating_from();
      set_state(r, back, "migration failed");
    }
    if (r.shell.state() == ShellState::Running && r.vm->flag() == vm::Flag::Suspending) r.vm->resume();
    while (!r.pending.empty()) {
      deliver_local(r, r.pending.front());
      r.pending.pop_front();
    }
    cv_.notify_all();
    throw Error(code, msg);
  };

  // Offer.
  std::optional<WireFrame> offer;
  try {
    offer = exchange(target, make_frame("MIGRATE_OFFER", Json{{"migration_id", migration_id},
                                                               {"entity", id},
                                                               {"manifest", manifest_json}}));
  } catch (const Error& e) {
    return release(ErrorCode::TransferFailed, std::string("offer to ") + target + ": " + e.what());
  }
  if (offer->type != "MIGRATE_ACK") {
    auto reason = offer->body.value("message", std::string("refused"));
    return release(ErrorCode::TargetRefused, target + " refused " + id + ": " + reason);
  }

  // Quiescence.
  lock.lock();
  if (self->vm->flag() == vm::Flag::Running) self->vm->request_suspend();
  bool quiet = wait_quiescent(lock, *self);
  if (self->shell.state() == ShellState::Terminated || self->shell.state() == ShellState::Failed) {
    self->busy = false;
    throw Error(ErrorCode::IllegalTransition, id + " finished before migration");
  }
  if (!quiet) return release(ErrorCode::QuiescenceTimeout, id + " did not reach quiescence");
  set_state(*self, ShellState::Migrating, "to " + target);
  snapshot::EntitySnapshot snap;
  std::string bytes;
  try {
    snap = snapshot::capture(*self->vm);
    bytes = snapshot::encode(snap);
  } catch (const Error& e) {
    return release(e.code() == ErrorCode::NotQuiescent ? ErrorCode::QuiescenceTimeout : ErrorCode::TransferFailed,
                   e.what());
  }
  auto version = self->location_version;
  Json body{{"migration_id", migration_id}, {"entity", id},          {"manifest", manifest_json},
            {"snapshot", bytes},            {"output", self->output}, {"version", version},
            {"source", wire_address()}};
  lock.unlock();

  // Transfer.
  std::optional<WireFrame> ack;
  try {
    ack = exchange(target, make_frame("MIGRATE_STATE", std::move(body)));
  } catch (const Error& e) {
    return release(ErrorCode::TransferFailed, std::string("transfer to ") + target + ": " + e.what());
  }
  if (ack->type != "MIGRATE_ACK") {
    auto code = ack->body.value("code", std::string("TransferFailed"));
    return release(ErrorCode::TransferFailed, target + " rejected state (" + code + "): " +
                                                  ack->body.value("message", std::string()));
  }
  auto new_address = ack->body.value("address", target);
  auto new_version = ack->body.value("version", version + 1);

  lock.lock();
  auto& r = *self;
  set_state(r, ShellState::Terminated, "migrated to " + new_address);
  forwards_[id] = Forward{new_address, clock_.now() + config_.grace_period};
  for (auto& p : r.pending) send(new_address, make_frame("MSG", Json{{"target", id}, {"payload", ir::to_json(p)}, {"hops", 1}}));
  send_overlay(overlay_->update_location(id, new_address, new_version));
  records_.erase(id);
  cv_.notify_all();
  return MigrationReceipt{id, wire_address(), new_address, snap.digest, new_version};
}

std::optional<Value> Nucleus::invoke(const std::string& caller, const std::string& id, const std::string& op,
                                     const std::vector<Value>& args) {
  Lock lock(mu_);
  auto it = records_.find(id);
  if (it == records_.end()) {
    auto where = address_of(id);
    if (!where || *where == wire_address()) throw Error(ErrorCode::UnknownEntity, "no entity " + id);
    Json a = Json::array();
    for (const auto& v : args) a.push_back(ir::to_json(v));
    auto frame = make_frame("INVOKE", Json{{"entity", id}, {"op", op}, {"args", a}, {"caller", caller}});
    lock.unlock();
    auto reply = exchange(*where, std::move(frame));
    if (reply->type != "REPLY") rethrow_remote(*reply, ErrorCode::TransportError);
    if (!reply->body.contains("result") || reply->body["result"].is_null()) return std::nullopt;
    return ir::value_from_json(reply->body["result"]);
  }
  auto& r = *it->second;
  if (r.system) return invoke_system(caller, r, op, args, lock);
  if (r.manifest.kind == EntityKind::DataDriven) {
    throw Error(ErrorCode::UnknownOperation, id + " is data-driven and exposes no operations");
  }
  const auto* exposed = r.manifest.find_operation(op);
  if (!exposed) throw Error(ErrorCode::UnknownOperation, id + " does not expose " + op);
  if (exposed->arity != args.size()) throw Error(ErrorCode::ArityMismatch, op + " takes " + std::to_string(exposed->arity));
  authorize(caller, op, r);
  auto s = r.shell.state();
  if (r.busy || s != ShellState::Running) {
    throw Error(ErrorCode::IllegalTransition, id + " is " + std::string(state_name(s)));
  }
  auto tid = r.vm->spawn_invocation(op, args);
  auto* self = &r;
  cv_.notify_all();
  std::optional<Value> result;
  bool finished = cv_.wait_for(lock, std::chrono::milliseconds(config_.request_timeout_ms), [&] {
    auto cur = records_.find(id);
    if (cur == records_.end() || cur->second.get() != self) return true;
    if (self->shell.state() == ShellState::Failed) return true;
    const auto* t = self->vm->thread(tid);
    return t == nullptr || t->status == vm::ThreadStatus::Done;
  });
  auto cur = records_.find(id);
  if (!finished || cur == records_.end() || cur->second.get() != self) {
    throw Error(ErrorCode::Timeout, op + " on " + id + " did not complete");
  }
  if (self->shell.state() == ShellState::Failed) throw Error(ErrorCode::RuntimeFault, self->fault);
  if (const auto* t = self->vm->thread(tid)) result = t->result;
  return result;
}

std::optional<Value> Nucleus::invoke_system(const std::string& caller, Record& r, const std::string& op,
                                            const std::vector<Value>& args, Lock& lock) {
  if (authz::evaluate_policy(admin_rules(), caller, op, r.manifest.name) == authz::Effect::Deny) {
    throw Error(ErrorCode::PolicyDenied, caller + " may not " + op + " " + r.manifest.name);
  }
  auto arity = [&](std::size_t n) {
    if (args.size() != n) throw Error(ErrorCode::ArityMismatch, op + " takes " + std::to_string(n));
  };
  const auto& name = r.manifest.name;
  if (name == "entity-manager" && op == "count") {
    arity(0);
    return Value{static_cast<std::int64_t>(records_.size())};
  }
  if (name == "entity-manager" && op == "list") {
    arity(0);
    std::string ids;
    for (const auto& [id, rec] : records_) ids += (ids.empty() ? "" : ",") + id;
    return Value{ids};
  }
  if (name == "security" && op == "whoami") {
    arity(0);
    return Value{caller};
  }
  if (name == "security" && op == "permits") {
    arity(2);
    return Value{authz::evaluate_policy(admin_rules(), caller, ir::to_display(args[0]), ir::to_display(args[1])) ==
                 authz::Effect::Permit};
  }
  if (name == "resource-discovery" && op == "query") {
    arity(2);
    auto expr = ir::to_display(args[0]);
    auto ttl = std::get_if<std::int64_t>(&args[1]);
    if (!ttl) throw Error(ErrorCode::BadRequest, "ttl must be an integer");
    lock.unlock();
    auto hits = query(expr, static_cast<int>(*ttl));
    lock.lock();
    return Value{static_cast<std::int64_t>(hits.size())};
  }
  if (name == "location-discovery" && op == "locate") {
    arity(1);
    auto entity = ir::to_display(args[0]);
    lock.unlock();
    auto where = locate(entity);
    lock.lock();
    return Value{where.value_or("")};
  }
  throw Error(ErrorCode::UnknownOperation, name + " has no operation " + op);
}

std::vector<EntityInfo> Nucleus::list_entities() const {
  Lock lock(mu_);
  std::vector<EntityInfo> out;
  for (const auto& [id, r] : records_) out.push_back(info(*r, false));
  return out;
}

EntityInfo Nucleus::entity(const std::string& id) const {
  Lock lock(mu_);
  return info(find(id, lock), true);
}

std::vector<overlay::PeerEntry> Nucleus::peers() const {
  Lock lock(mu_);
  return overlay_ ? overlay_->peers() : std::vector<overlay::PeerEntry>{};
}

std::vector<overlay::Advert> Nucleus::query(const std::string& expr, int ttl) {
  auto e = overlay::parse_expression(expr);
  Lock lock(mu_);
  std::vector<overlay::Outgoing> out;
  auto qid = overlay_->query(e, ttl, out);
  send_overlay(std::move(out));
  cv_.wait_for(lock, std::chrono::milliseconds(config_.discovery_wait_ms), [&] { return stopping_; });
  std::vector<overlay::Advert> hits;
  for (const auto& h : overlay_->hits(qid)) hits.push_back(h.advert);
  return hits;
}

std::optional<std::string> Nucleus::address_of(const std::string& entity) const {
  auto it = records_.find(entity);
  if (it != records_.end()) return wire_address();
  auto fw = forwards_.find(entity);
  auto loc = overlay_ ? overlay_->location(entity) : std::nullopt;
  if (loc && loc->address != wire_address()) return loc->address;
  if (fw != forwards_.end()) return fw->second.address;
  return std::nullopt;
}

std::optional<std::string> Nucleus::locate(const std::string& entity, std::optional<int> ttl) {
  Lock lock(mu_);
  if (records_.count(entity)) return wire_address();
  std::vector<overlay::Outgoing> out;
  overlay_->locate(entity, ttl.value_or(config_.overlay.ttl_default), out);
  send_overlay(std::move(out));
  cv_.wait_for(lock, std::chrono::milliseconds(config_.discovery_wait_ms), [&] { return stopping_; });
  if (records_.count(entity)) return wire_address();
  return address_of(entity);
}

void Nucleus::send(const std::string& address, WireFrame f) {
  outgoing_.emplace_back(address, std::move(f));
  outgoing_cv_.notify_one();
}

void Nucleus::send_overlay(std::vector<overlay::Outgoing> out) {
  for (auto& o : out) send(o.to, make_frame(o.frame.type, std::move(o.frame.body)));
}

void Nucleus::republish() { send_overlay(overlay_->publish_advert(published_)); }

void Nucleus::deliver_local(Record& r, const Value& payload) {
  auto s = r.shell.state();
  if (s == ShellState::Migrating) {
    r.pending.push_back(payload);
    return;
  }
  if (!r.vm || (s != ShellState::Running && s != ShellState::Suspended)) {
    ++counters_.undeliverable;
    return;
  }
  try {
    r.vm->deliver_message(payload);
  } catch (const Error&) {
    ++counters_.undeliverable;
  }
}

void Nucleus::route(const std::string& from, const vm::Message& m) {
  (void)from;
  auto it = records_.find(m.target);
  if (it != records_.end() && !it->second->system) {
    deliver_local(*it->second, m.payload);
    return;
  }
  auto where = address_of(m.target);
  if (!where || *where == wire_address()) {
    ++counters_.undeliverable;
    return;
  }
  send(*where, make_frame("MSG", Json{{"target", m.target}, {"payload", ir::to_json(m.payload)}, {"hops", 0}}));
}

void Nucleus::drain(Record& r) {
  const auto& out = r.vm->state().output;
  for (; r.output_seen < out.size(); ++r.output_seen) r.output.push_back(out[r.output_seen]);
  for (const auto& m : r.vm->take_outbox()) route(r.id, m);
}

void Nucleus::run_round(Lock& lock) {
  (void)lock;
  bool progressed = false;
  std::vector<Record*> live;
  for (auto& [id, r] : records_) {
    auto s = r->shell.state();
    if (!r->system && (s == ShellState::Running || s == ShellState::Suspended)) live.push_back(r.get());
  }
  for (auto* r : live) {
    try {
      auto out = r->vm->step(config_.step_slice);
      progressed |= out.executed > 0;
    } catch (const Error& e) {
      drain(*r);
      r->fault = e.what();
      auto to = transition_allowed(r->shell.state(), ShellState::Failed) ? ShellState::Failed : ShellState::Terminated;
      set_state(*r, to, r->fault);
      continue;
    }
    drain(*r);
    if (r->vm->all_done() &&
        (r->vm->flag() == vm::Flag::Terminated || r->manifest.kind == EntityKind::DataDriven)) {
      set_state(*r, ShellState::Terminated, r->vm->flag() == vm::Flag::Terminated ? "stopped" : "completed");
    }
  }
  if (progressed) cv_.notify_all();
}

void Nucleus::executor_loop() {
  using clock = std::chrono::steady_clock;
  Lock lock(mu_);
  auto next_tick = clock::now() + std::chrono::milliseconds(config_.tick_ms);
  auto republish_every = std::chrono::seconds(std::max<Timestamp>(1, config_.overlay.advert_lifetime / 2));
  auto next_publish = clock::now() + republish_every;
  while (!stopping_) {
    run_round(lock);
    auto now = clock::now();
    if (now >= next_tick) {
      next_tick = now + std::chrono::milliseconds(config_.tick_ms);
      send_overlay(overlay_->gossip_tick());
      if (overlay_->peers().empty()) send_overlay(overlay_->hello(config_.bootstrap));
      auto t = clock_.now();
      std::erase_if(forwards_, [&](const auto& kv) { return kv.second.until < t; });
    }
    if (now >= next_publish) {
      next_publish = now + republish_every;
      republish();
    }
    cv_.notify_all();
    bool busy = std::any_of(records_.begin(), records_.end(), [](const auto& kv) {
      const auto& r = *kv.second;
      return !r.system && r.vm && !r.vm->all_done() && !r.vm->quiescent() &&
             (r.shell.state() == ShellState::Running || r.shell.state() == ShellState::Suspended);
    });
    auto pause = config_.round_delay_ms > 0 ? std::chrono::milliseconds(config_.round_delay_ms)
                                            : std::chrono::milliseconds(busy ? 0 : 5);
    if (pause.count() > 0) {
      cv_.wait_for(lock, pause);
    } else {
      lock.unlock();
      std::this_thread::yield();
      lock.lock();
    }
  }
}

void Nucleus::sender_loop() {
  Lock lock(mu_);
  while (true) {
    outgoing_cv_.wait(lock, [&] { return stopping_ || !outgoing_.empty(); });
    if (stopping_) break;
    auto [address, frame] = std::move(outgoing_.front());
    outgoing_.pop_front();
    lock.unlock();
    bool ok = true;
    try {
      tcp_exchange(address, frame, std::chrono::milliseconds(2000), false);
    } catch (const Error&) {
      ok = false;
    }
    lock.lock();
    if (!ok) ++counters_.send_failures;
  }
}

std::optional<WireFrame> Nucleus::handle_frame(const WireFrame& f) {
  auto authenticated = open(config_.identity.key.params, f, clock_.now());
  {
    Lock lock(mu_);
    ++counters_.frames_handled;
    if (!authenticated.result) {
      ++counters_.dropped_frames;
      return std::nullopt;
    }
  }
  auto fail = [&](ErrorCode code, const std::string& msg) {
    auto e = error_frame(code, msg);
    return make_frame("ERROR", e.body);
  };
  try {
    if (!known_frame_type(f.type)) return fail(ErrorCode::BadRequest, "unknown frame type " + f.type);
    static const std::set<std::string, std::less<>> kOverlay{"HELLO", "PEERS", "ADVERT", "QUERY",
                                                             "QUERY_HIT", "LOCATE", "LOCATE_HIT"};
    if (kOverlay.count(f.type)) {
      Lock lock(mu_);
      send_overlay(overlay_->handle(overlay::Frame{f.type, overlay::NodeInfo{f.sender, f.address}, f.body}));
      return std::nullopt;
    }
    if (f.type == "MSG") return on_msg(f);
    if (f.type == "INVOKE") return on_invoke(f);
    if (f.type == "MIGRATE_OFFER") return on_offer(f);
    if (f.type == "MIGRATE_STATE") return on_state(f);
    return std::nullopt;  // REPLY / MIGRATE_ACK / ERROR outside an exchange
  } catch (const Error& e) {
    return fail(e.code(), e.what());
  } catch (const Json::exception& e) {
    return fail(ErrorCode::MalformedField, e.what());
  }
}

std::optional<WireFrame> Nucleus::on_msg(const WireFrame& f) {
  auto target = f.body.at("target").get<std::string>();
  auto payload = ir::value_from_json(f.body.at("payload"));
  int hops = f.body.value("hops", 0);
  Lock lock(mu_);
  auto it = records_.find(target);
  if (it != records_.end() && !it->second->system) {
    deliver_local(*it->second, payload);
    return std::nullopt;
  }
  auto fw = forwards_.find(target);
  if (fw != forwards_.end() && fw->second.until >= clock_.now() && hops < kMaxForwardHops) {
    ++counters_.forwarded;
    send(fw->second.address, make_frame("MSG", Json{{"target", target}, {"payload", f.body["payload"]}, {"hops", hops + 1}}));
    return std::nullopt;
  }
  ++counters_.undeliverable;
  return std::nullopt;
}

std::optional<WireFrame> Nucleus::on_invoke(const WireFrame& f) {
  std::vector<Value> args;
  for (const auto& a : f.body.at("args")) args.push_back(ir::value_from_json(a));
  auto entity = f.body.at("entity").get<std::string>();
  {
    Lock lock(mu_);
    if (!records_.count(entity)) throw Error(ErrorCode::UnknownEntity, "no entity " + entity + " on " + config_.id);
  }
  auto result = invoke(f.body.at("caller").get<std::string>(), entity, f.body.at("op").get<std::string>(), args);
  return make_frame("REPLY", Json{{"entity", entity}, {"result", result ? ir::to_json(*result) : Json(nullptr)}});
}

std::optional<WireFrame> Nucleus::on_offer(const WireFrame& f) {
  auto entity = f.body.at("entity").get<std::string>();
  auto manifest = manifest_from_json(f.body.at("manifest"));
  Lock lock(mu_);
  if (records_.count(entity)) throw Error(ErrorCode::DuplicateEntity, entity + " already hosted on " + config_.id);
  if (authz::evaluate_policy(admin_rules(), manifest.owner, "import", manifest.name) == authz::Effect::Deny) {
    throw Error(ErrorCode::PolicyDenied, config_.id + " does not admit " + manifest.name + " owned by " + manifest.owner);
  }
  return make_frame("MIGRATE_ACK", Json{{"phase", "offer"}, {"migration_id", f.body.at("migration_id")}});
}

std::optional<WireFrame> Nucleus::on_state(const WireFrame& f) {
  auto migration_id = f.body.at("migration_id").get<std::string>();
  auto entity = f.body.at("entity").get<std::string>();
  auto manifest = manifest_from_json(f.body.at("manifest"));
  {
    Lock lock(mu_);
    if (records_.count(entity) || imported_.count(migration_id)) {
      throw Error(ErrorCode::DuplicateEntity, "state for " + entity + " already imported");
    }
    if (authz::evaluate_policy(admin_rules(), manifest.owner, "import", manifest.name) == authz::Effect::Deny) {
      throw Error(ErrorCode::PolicyDenied, config_.id + " does not admit " + manifest.name);
    }
  }
  auto snap = snapshot::decode(f.body.at("snapshot").get<std::string>());
  if (snap.entity_id != entity) throw Error(ErrorCode::MalformedField, "snapshot belongs to " + snap.entity_id);
  snapshot::RestoreOptions ro;
  ro.load.inbox_bound = config_.inbox_bound;
  ro.load.seed = config_.seed + std::hash<std::string>{}(migration_id);
  auto restored = snapshot::restore(snap, ro);
  auto version = f.body.value("version", std::uint64_t{1}) + 1;

  Lock lock(mu_);
  if (records_.count(entity) || imported_.count(migration_id)) {
    throw Error(ErrorCode::DuplicateEntity, "state for " + entity + " already imported");
  }
  auto r = std::make_unique<Record>();
  r->id = entity;
  r->manifest = manifest;
  r->vm = std::move(restored);
  r->host = std::make_unique<Host>(*this, entity);
  r->vm->set_host(r->host.get());
  r->output = f.body.value("output", std::vector<std::string>{});
  r->location_version = version;
  auto& rec = *r;
  records_[entity] = std::move(r);
  imported_.insert(migration_id);
  forwards_.erase(entity);
  set_state(rec, ShellState::Running, "imported from " + f.body.value("source", f.address));
  send_overlay(overlay_->update_location(entity, wire_address(), version));
  cv_.notify_all();
  return make_frame("MIGRATE_ACK", Json{{"phase", "state"},
                                        {"migration_id", migration_id},
                                        {"entity", entity},
                                        {"address", wire_address()},
                                        {"version", version}});
}

std::vector<Event> Nucleus::events_since(std::uint64_t after, std::chrono::milliseconds wait) const {
  Lock lock(mu_);
  cv_.wait_for(lock, wait, [&] { return stopping_ || (!events_.empty() && events_.back().seq > after); });
  std::vector<Event> out;
  for (const auto& e : events_) {
    if (e.seq > after) out.push_back(e);
  }
  return out;
}

Counters Nucleus::counters() const {
  Lock lock(mu_);
  return counters_;
}

bool Nucleus::wait_for_state(const std::string& id, ShellState state, std::chrono::milliseconds timeout) const {
  Lock lock(mu_);
  return cv_.wait_for(lock, timeout, [&] {
    auto it = records_.find(id);
    return it == records_.end() || it->second->shell.state() == state;
  });
}

}  // namespace dget::nucleus

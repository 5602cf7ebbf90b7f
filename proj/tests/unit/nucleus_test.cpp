#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>
#include <thread>

#include "dget/common/error.hpp"
#include "dget/instrument/instrument.hpp"
#include "dget/ir/assembly.hpp"
#include "dget/nucleus/admin.hpp"
#include "dget/nucleus/nucleus.hpp"
#include "dget/nucleus/wire.hpp"
#include "dget/snapshot/snapshot.hpp"
#include "support/corpus.hpp"
#include "support/grid.hpp"
#include "support/harness.hpp"
#include "support/migration.hpp"
#include "support/process.hpp"

using namespace dget;
using namespace dget::nucleus;
using namespace std::chrono_literals;
namespace dt = dget::testing;

namespace {

const std::string kAlice = "alice@grid";

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::BadRequest;
}

Manifest fixture_manifest(const std::string& file) {
  return load_manifest_file(std::string(DGET_FIXTURE_DIR) + "/" + file);
}

bool has_line(Nucleus& n, const std::string& id, const std::string& line) {
  try {
    auto out = n.entity(id).output;
    return std::find(out.begin(), out.end(), line) != out.end();
  } catch (const Error&) {
    return false;
  }
}

dt::VmRunResult standalone(const Manifest& m) {
  auto gp = ir::parse_assembly(program_source(m));
  gp.entry = m.entry;
  dt::VmRunOptions o;
  o.max_steps = 50'000'000;
  o.limits = m.limits;
  return dt::run_vm(instrument::instrument(gp), {}, o);
}

WireFrame signed_frame(const std::string& type, Json body, const std::string& who = "tester@grid",
                       authz::Window w = {0, dt::kFarFuture}, Timestamp at = SystemClock{}.now()) {
  WireFrame f;
  f.type = type;
  f.sender = "tester";
  f.address = "127.0.0.1:9";
  f.body = std::move(body);
  seal(f, dt::key_for(who, w), at);
  return f;
}

std::optional<WireFrame> exchange(Nucleus& n, const WireFrame& f, bool reply = true) {
  return tcp_exchange(n.wire_address(), f, 3000ms, reply);
}

bool knows(Nucleus& a, const Nucleus& b) {
  auto ps = a.peers();
  return std::any_of(ps.begin(), ps.end(), [&](const auto& p) { return p.info.id == b.id(); });
}

const char* kReceiver = R"(.program receiver
.method main 0 1
loop:
  SYS recv 0
  STORE 0
  CONST "recv "
  LOAD 0
  ADD
  SYS log 1
  JMP loop
.end
)";

const char* kSender = R"(.program sender
.method main 0 0
  GGET target
  CONST "ping"
  SYS send 2
  RET
.end
)";

}  // namespace

TEST_CASE("frames encode to a length-prefixed canonical fixpoint") {
  WireFrame f;
  f.type = "MSG";
  f.sender = "n1";
  f.address = "127.0.0.1:7000";
  f.body = Json{{"target", "n1.e1"}, {"payload", Json{{"int", 5}}}, {"hops", 0}};
  seal(f, dt::key_for("n1@grid"), 100);
  auto bytes = encode_frame(f);
  auto len = (std::uint32_t(std::uint8_t(bytes[0])) << 24) | (std::uint32_t(std::uint8_t(bytes[1])) << 16) |
             (std::uint32_t(std::uint8_t(bytes[2])) << 8) | std::uint32_t(std::uint8_t(bytes[3]));
  CHECK(len == bytes.size() - 4);
  CHECK(bytes.substr(4) == canonical_dump(to_json(f)));
  CHECK(encode_frame(decode_frame(bytes)) == bytes);

  CHECK(code_of([&] { decode_frame(bytes.substr(0, bytes.size() - 1)); }) == ErrorCode::MalformedField);
  CHECK(code_of([&] { decode_frame(bytes + "x"); }) == ErrorCode::MalformedField);
  CHECK(code_of([&] { decode_frame(bytes.substr(0, 3)); }) == ErrorCode::MalformedField);
  auto garbage = bytes;
  garbage[4] = '[';
  CHECK(code_of([&] { decode_frame(garbage); }) == ErrorCode::MalformedField);

  FrameReader reader;
  std::string stream = bytes + bytes + bytes;
  int got = 0;
  for (char c : stream) {
    reader.feed(std::string_view(&c, 1));
    while (auto g = reader.next()) {
      CHECK(encode_frame(*g) == bytes);
      ++got;
    }
  }
  CHECK(got == 3);
  CHECK(reader.buffered() == 0);
}

TEST_CASE("sealed frames open only while untampered and unexpired") {
  auto params = dt::test_pkg().params;
  WireFrame f;
  f.type = "HELLO";
  f.sender = "n1";
  f.address = "127.0.0.1:1";
  f.body = Json{{"x", 1}};
  seal(f, dt::key_for("n1@grid", {0, 1000}), 500);
  auto a = open(params, f, 600);
  CHECK(a.result.accepted);
  CHECK(a.identity == "n1@grid");
  CHECK_FALSE(open(params, f, 1001).result.accepted);
  auto t = f;
  t.body["x"] = 2;
  CHECK_FALSE(open(params, t, 600).result.accepted);
  t = f;
  t.address = "127.0.0.1:2";
  CHECK_FALSE(open(params, t, 600).result.accepted);

  auto parent = dt::key_for("nucleus@grid", {0, 1000});
  auto child = authz::delegate(parent, "worker@grid", {100, 900}, 500);
  WireFrame d = f;
  seal(d, child, 500);
  CHECK(d.auth.contains("chain"));
  auto da = open(params, d, 500);
  CHECK(da.result.accepted);
  CHECK(da.identity == "worker@grid");
  CHECK_FALSE(open(params, d, 950).result.accepted);
}

TEST_CASE("shell transitions follow the declared table") {
  using S = ShellState;
  const std::set<std::pair<S, S>> allowed{{S::Created, S::Running},     {S::Running, S::Suspended},
                                          {S::Suspended, S::Running},   {S::Running, S::Migrating},
                                          {S::Suspended, S::Migrating}, {S::Migrating, S::Terminated},
                                          {S::Running, S::Terminated},  {S::Suspended, S::Terminated},
                                          {S::Running, S::Failed}};
  const S all[] = {S::Created, S::Running, S::Suspended, S::Migrating, S::Terminated, S::Failed};
  for (auto a : all) {
    CHECK(state_from_name(state_name(a)) == a);
    for (auto b : all) {
      INFO(state_name(a), " -> ", state_name(b));
      if (a == S::Migrating) continue;
      CHECK(transition_allowed(a, b) == (allowed.count({a, b}) > 0));
    }
  }

  Shell s;
  CHECK(code_of([&] { s.transition(S::Suspended); }) == ErrorCode::IllegalTransition);
  s.transition(S::Running);
  s.transition(S::Suspended);
  s.transition(S::Migrating);
  CHECK(code_of([&] { s.transition(S::Running); }) == ErrorCode::IllegalTransition);
  CHECK(s.transition(S::Suspended) == S::Migrating);
  s.transition(S::Running);
  s.transition(S::Migrating);
  CHECK(code_of([&] { s.transition(S::Suspended); }) == ErrorCode::IllegalTransition);
  s.transition(S::Terminated);
  for (auto b : all) CHECK(code_of([&] { s.transition(b); }) == ErrorCode::IllegalTransition);
}

TEST_CASE("a started nucleus hosts the system entities and greets its bootstrap peer") {
  dt::Grid g(2);
  auto list = g[0].list_entities();
  std::set<std::string> ids;
  for (const auto& e : list) {
    CHECK(e.system);
    CHECK(e.kind == "SYSTEM");
    CHECK(e.state == ShellState::Running);
    ids.insert(e.id);
  }
  CHECK(ids == std::set<std::string>{"n1.entity-manager", "n1.location-discovery", "n1.resource-discovery",
                                     "n1.security"});
  CHECK(g.wait_connected(5s));
  CHECK(knows(g[0], g[1]));
  CHECK(knows(g[1], g[0]));

  CHECK(ir::to_display(*g[0].invoke(kAlice, "n1.security", "whoami", {})) == kAlice);
  CHECK(std::get<std::int64_t>(*g[0].invoke(kAlice, "n1.entity-manager", "count", {})) == 4);
  CHECK(code_of([&] { g[0].invoke(kAlice, "n1.security", "nope", {}); }) == ErrorCode::UnknownOperation);
  CHECK(code_of([&] { g[0].suspend_entity(kAlice, "n1.security"); }) == ErrorCode::IllegalTransition);

  auto hits = g[0].query("nucleus=n2", 2);
  REQUIRE(hits.size() == 1);
  CHECK(hits[0].origin.id == "n2");
}

TEST_CASE("startup fails cleanly on a taken port or a bad config") {
  dt::Grid g(1);
  auto c = dt::test_config("dup");
  c.listen = g[0].wire_address();
  Nucleus clash(c);
  CHECK(code_of([&] { clash.start(); }) == ErrorCode::AddressInUse);

  dt::TempDir dir;
  dt::write_key(dir.path(), "x@grid");
  Json good{{"id", "x"}, {"identity_key", "x@grid.key"}};
  CHECK(config_from_json(good, dir.path()).identity.key.identity == "x@grid");
  const Json bad[] = {
      Json{{"identity_key", "x@grid.key"}},
      Json{{"id", "x"}},
      Json{{"id", "x"}, {"identity_key", "missing.key"}},
      Json{{"id", "x"}, {"identity_key", "x@grid.key"}, {"colour", "red"}},
      Json{{"id", "x"}, {"identity_key", "x@grid.key"}, {"listen", "nowhere"}},
      Json{{"id", "x"}, {"identity_key", "x@grid.key"}, {"digest_alg", "md5"}},
      Json{{"id", "x"}, {"identity_key", "x@grid.key"}, {"tick_ms", 0}},
      Json{{"id", "x"}, {"identity_key", "x@grid.key"}, {"inbox_bound", "many"}},
  };
  for (const auto& j : bad) {
    INFO(j.dump());
    CHECK(code_of([&] { config_from_json(j, dir.path()); }) == ErrorCode::BadConfig);
  }
  CHECK(code_of([&] { load_config(dir.file("absent.json")); }) == ErrorCode::BadConfig);
}

TEST_CASE("unauthenticated, expired and unknown frames are handled without effect") {
  dt::Grid g(1);
  auto& n = g[0];
  auto before = n.counters();

  WireFrame bare;
  bare.type = "HELLO";
  bare.sender = "x";
  bare.address = "127.0.0.1:9";
  CHECK_FALSE(exchange(n, bare, false));
  auto expired = signed_frame("HELLO", Json::object(), "tester@grid", {0, 1000}, 500);
  CHECK_FALSE(exchange(n, expired, false));
  CHECK(dt::wait_until([&] { return n.counters().dropped_frames == before.dropped_frames + 2; }, 2s));
  CHECK(n.peers().empty());

  auto reply = exchange(n, signed_frame("BOGUS", Json::object()));
  REQUIRE(reply);
  CHECK(reply->type == "ERROR");
  CHECK(reply->body["code"] == "BadRequest");
  CHECK(open(dt::test_pkg().params, *reply, SystemClock{}.now()).result.accepted);

  auto malformed = exchange(n, signed_frame("MIGRATE_OFFER", Json{{"entity", 3}}));
  REQUIRE(malformed);
  CHECK(malformed->type == "ERROR");
}

TEST_CASE("deploy verifies the program and the exposed operations") {
  dt::Grid g(1);
  auto& n = g[0];
  auto id = n.deploy(kAlice, fixture_manifest("counter_service.manifest.json"));
  CHECK(id == "n1.e1");
  CHECK(n.entity(id).state == ShellState::Running);

  CHECK(code_of([&] {
          n.deploy(kAlice, dt::manifest_for("th", dt::fixture_text("terminated_handler.ghost")));
        }) == ErrorCode::LoadRejected);
  CHECK(code_of([&] { n.deploy(kAlice, dt::manifest_for("bad", ".method main 0 0\n  POP\n  RET\n.end\n")); }) ==
        ErrorCode::VerificationFailed);
  CHECK(code_of([&] { n.deploy(kAlice, dt::manifest_for("bad", ".method main 0 0\n  CHECK\n  RET\n.end\n")); }) ==
        ErrorCode::VerificationFailed);
  auto wrong_ops = fixture_manifest("counter_service.manifest.json");
  wrong_ops.operations.push_back(Operation{"reset", 0});
  CHECK(code_of([&] { n.deploy(kAlice, wrong_ops); }) == ErrorCode::LoadRejected);
  wrong_ops.operations = {Operation{"add", 2}};
  CHECK(code_of([&] { n.deploy(kAlice, wrong_ops); }) == ErrorCode::LoadRejected);
  auto no_ops = fixture_manifest("counter_service.manifest.json");
  no_ops.operations.clear();
  CHECK(code_of([&] { n.deploy(kAlice, no_ops); }) == ErrorCode::BadRequest);
  CHECK(code_of([&] { n.deploy("eve@other", fixture_manifest("counter_service.manifest.json")); }) ==
        ErrorCode::PolicyDenied);
  CHECK(n.list_entities().size() == 5);
}

TEST_CASE("admin posts require a valid envelope") {
  dt::Grid g(1);
  auto& n = g[0];
  SystemClock sys;
  auto mjson = to_json(fixture_manifest("counter_service.manifest.json"));

  AdminClient anon(n.admin_address(), std::nullopt, sys);
  auto r = anon.post("/v1/entities", Json{{"manifest", mjson}});
  CHECK(r.status == 401);
  CHECK(r.body["error"] == "AuthFailed");

  VirtualClock past(500);
  AdminClient stale(n.admin_address(), dt::key_for(kAlice, {0, 1000}), past);
  r = stale.post("/v1/entities", Json{{"manifest", mjson}});
  CHECK(r.status == 401);
  CHECK(r.body["error"] == "AuthFailed");

  AdminClient alice(n.admin_address(), dt::key_for(kAlice), sys);
  r = alice.post("/v1/entities", Json{{"manifest", mjson}});
  CHECK(r.status == 201);
  CHECK(r.body["state"] == "RUNNING");
  auto id = r.body["id"].get<std::string>();
  CHECK(n.entity(id).owner == kAlice);

  r = alice.post("/v1/entities", Json{{"manifest", Json{{"name", "x"}}}});
  CHECK(r.status == 400);
  r = alice.post("/v1/entities/nope/stop", Json::object());
  CHECK(r.status == 404);
  CHECK(r.body["error"] == "UnknownEntity");
  CHECK(n.list_entities().size() == 5);
}

TEST_CASE("stop terminates and later commands are illegal") {
  dt::Grid g(1);
  auto& n = g[0];
  auto guarded = n.deploy(kAlice, fixture_manifest("counter_service.manifest.json"));
  auto m = dt::manifest_for("forever", ".method main 0 1\nloop:\n  JMP loop\n.end\n");
  auto forever = n.deploy(kAlice, m);
  CHECK(n.stop_entity(kAlice, forever) == ShellState::Terminated);
  CHECK(n.entity(forever).state == ShellState::Terminated);
  CHECK(code_of([&] { n.resume_entity(kAlice, forever); }) == ErrorCode::IllegalTransition);
  CHECK(code_of([&] { n.suspend_entity(kAlice, forever); }) == ErrorCode::IllegalTransition);
  CHECK(code_of([&] { n.stop_entity(kAlice, forever); }) == ErrorCode::IllegalTransition);
  CHECK(code_of([&] { n.stop_entity(kAlice, "n1.e99"); }) == ErrorCode::UnknownEntity);
  CHECK(code_of([&] { n.stop_entity("mallory@grid", guarded); }) == ErrorCode::PolicyDenied);
  CHECK(n.entity(guarded).state == ShellState::Running);
  CHECK(n.stop_entity(kAlice, guarded) == ShellState::Terminated);
}

TEST_CASE("suspend and resume leave the observable result unchanged") {
  dt::Grid g(1, [](NucleusConfig& c) {
    c.step_slice = 300;
    c.round_delay_ms = 1;
  });
  auto& n = g[0];
  auto m = fixture_manifest("long_counter.manifest.json");
  auto expected = standalone(m);
  REQUIRE(expected.status == "completed");
  auto id = n.deploy(kAlice, m);
  REQUIRE(dt::wait_until([&] { return has_line(n, id, "tick 3000"); }, 20s));
  CHECK(n.suspend_entity(kAlice, id) == ShellState::Suspended);
  CHECK(code_of([&] { n.suspend_entity(kAlice, id); }) == ErrorCode::IllegalTransition);
  auto frozen = n.entity(id);
  std::this_thread::sleep_for(200ms);
  auto later = n.entity(id);
  CHECK(later.output == frozen.output);
  CHECK(later.usage == frozen.usage);
  CHECK(n.resume_entity(kAlice, id) == ShellState::Running);
  REQUIRE(n.wait_for_state(id, ShellState::Terminated, 30s));
  auto done = n.entity(id);
  CHECK(done.state == ShellState::Terminated);
  CHECK(done.output == expected.output);
  CHECK(done.globals == expected.globals);
}

TEST_CASE("typed invocation honours exposure, arity and policy") {
  dt::Grid g(1);
  auto& n = g[0];
  auto id = n.deploy(kAlice, fixture_manifest("counter_service.manifest.json"));
  REQUIRE(dt::wait_until([&] { return has_line(n, id, "service up"); }, 5s));

  CHECK(std::get<std::int64_t>(*n.invoke(kAlice, id, "add", {ir::int_value(5)})) == 5);
  CHECK(std::get<std::int64_t>(*n.invoke(kAlice, id, "add", {ir::int_value(-2)})) == 3);
  CHECK(std::get<std::int64_t>(*n.invoke("bob@grid", id, "get", {})) == 3);

  auto steps = n.entity(id).usage.at("steps");
  CHECK(code_of([&] { n.invoke("mallory@grid", id, "get", {}); }) == ErrorCode::PolicyDenied);
  CHECK(code_of([&] { n.invoke("eve@other", id, "add", {ir::int_value(1)}); }) == ErrorCode::PolicyDenied);
  CHECK(code_of([&] { n.invoke(kAlice, id, "main", {}); }) == ErrorCode::UnknownOperation);
  CHECK(code_of([&] { n.invoke(kAlice, id, "add", {}); }) == ErrorCode::ArityMismatch);
  CHECK(n.entity(id).usage.at("steps") == steps);
  CHECK(std::get<std::int64_t>(*n.invoke(kAlice, id, "get", {})) == 3);

  auto data = n.deploy(kAlice, dt::manifest_for("rx", kReceiver));
  CHECK(code_of([&] { n.invoke(kAlice, data, "main", {}); }) == ErrorCode::UnknownOperation);

  std::vector<std::thread> callers;
  for (int t = 0; t < 4; ++t) {
    callers.emplace_back([&] {
      for (int k = 0; k < 25; ++k) n.invoke(kAlice, id, "add", {ir::int_value(1)});
    });
  }
  for (auto& t : callers) t.join();
  CHECK(std::get<std::int64_t>(*n.invoke(kAlice, id, "get", {})) == 103);
}

TEST_CASE("random command sequences only produce declared transitions") {
  dt::Grid g(1);
  auto& n = g[0];
  std::mt19937_64 rng(2024);
  std::vector<std::string> ids;
  for (int k = 0; k < 3; ++k) ids.push_back(n.deploy(kAlice, fixture_manifest("counter_service.manifest.json")));
  ids.push_back(n.deploy(kAlice, dt::manifest_for("rx", kReceiver)));
  for (int step = 0; step < 120; ++step) {
    const auto& id = ids[rng() % ids.size()];
    try {
      switch (rng() % 4) {
        case 0:
          n.suspend_entity(kAlice, id);
          break;
        case 1:
          n.resume_entity(kAlice, id);
          break;
        case 2:
          if (rng() % 6 == 0) n.stop_entity(kAlice, id);
          break;
        default:
          n.invoke(kAlice, id, "add", {ir::int_value(1)});
      }
    } catch (const Error& e) {
      auto c = e.code();
      INFO(code_name(c));
      CHECK((c == ErrorCode::IllegalTransition || c == ErrorCode::UnknownOperation));
    }
  }
  for (const auto& e : n.events_since(0, 0ms)) {
    INFO(e.entity, " ", e.previous, " -> ", e.state);
    auto from = state_from_name(e.previous);
    auto to = state_from_name(e.state);
    REQUIRE(from);
    REQUIRE(to);
    CHECK(transition_allowed(*from, *to));
  }
}

TEST_CASE("a migrated entity continues where it stopped and is located at the target") {
  dt::Grid g(3, [](NucleusConfig& c) {
    c.step_slice = 300;
    c.round_delay_ms = 1;
  });
  REQUIRE(g.wait_connected(5s));
  auto m = fixture_manifest("long_counter.manifest.json");
  auto expected = standalone(m);
  auto id = g[0].deploy(kAlice, m);
  REQUIRE(dt::wait_until([&] { return has_line(g[0], id, "tick 4000"); }, 20s));
  auto receipt = g[0].migrate(kAlice, id, g[1].wire_address());
  CHECK(receipt.entity == id);
  CHECK(receipt.target == g[1].wire_address());
  CHECK(receipt.digest.size() == 64);
  CHECK(receipt.version == 2);

  CHECK(code_of([&] { g[0].entity(id); }) == ErrorCode::UnknownEntity);
  auto listed = g[0].list_entities();
  CHECK(std::none_of(listed.begin(), listed.end(), [&](const auto& e) { return e.id == id; }));
  REQUIRE(g[1].wait_for_state(id, ShellState::Terminated, 30s));
  auto done = g[1].entity(id);
  CHECK(done.state == ShellState::Terminated);
  CHECK(done.output == expected.output);
  CHECK(done.globals == expected.globals);
  CHECK(g[0].locate(id) == g[1].wire_address());
  CHECK(g[2].locate(id) == g[1].wire_address());
  CHECK(g[1].locate(id) == g[1].wire_address());

  std::vector<std::string> states;
  for (const auto& e : g[0].events_since(0, 0ms)) {
    if (e.entity == id) states.push_back(e.state);
  }
  CHECK(states == std::vector<std::string>{"RUNNING", "MIGRATING", "TERMINATED"});
}

TEST_CASE("a suspended entity migrates and arrives running") {
  dt::Grid g(2);
  auto id = g[0].deploy(kAlice, fixture_manifest("counter_service.manifest.json"));
  REQUIRE(dt::wait_until([&] { return has_line(g[0], id, "service up"); }, 5s));
  g[0].invoke(kAlice, id, "add", {ir::int_value(41)});
  g[0].suspend_entity(kAlice, id);
  g[0].migrate(kAlice, id, g[1].wire_address());
  CHECK(g[1].entity(id).state == ShellState::Running);
  CHECK(g[1].entity(id).output == std::vector<std::string>{"service up"});
  CHECK(std::get<std::int64_t>(*g[1].invoke(kAlice, id, "add", {ir::int_value(1)})) == 42);
  CHECK(std::get<std::int64_t>(*g[0].invoke(kAlice, id, "get", {})) == 42);
}

TEST_CASE("failed migrations leave the entity running at the source") {
  dt::Grid g(2, [](NucleusConfig& c) {
    if (c.id == "n2") {
      c.admin_policies = {authz::PolicyRule{"alice@*", "import", "*", authz::Effect::Deny},
                          authz::PolicyRule{"*@grid", "*", "*", authz::Effect::Permit}};
    }
  });
  auto id = g[0].deploy(kAlice, fixture_manifest("counter_service.manifest.json"));
  REQUIRE(dt::wait_until([&] { return has_line(g[0], id, "service up"); }, 5s));
  CHECK(code_of([&] { g[0].migrate(kAlice, id, g[1].wire_address()); }) == ErrorCode::TargetRefused);
  CHECK(g[0].entity(id).state == ShellState::Running);
  CHECK(code_of([&] { g[1].entity(id); }) == ErrorCode::UnknownEntity);
  CHECK(std::get<std::int64_t>(*g[0].invoke(kAlice, id, "add", {ir::int_value(2)})) == 2);

  CHECK(code_of([&] { g[0].migrate(kAlice, id, "127.0.0.1:1"); }) == ErrorCode::TransferFailed);
  CHECK(g[0].entity(id).state == ShellState::Running);
  g[0].suspend_entity(kAlice, id);
  CHECK(code_of([&] { g[0].migrate(kAlice, id, "127.0.0.1:1"); }) == ErrorCode::TransferFailed);
  CHECK(g[0].entity(id).state == ShellState::Suspended);
  g[0].resume_entity(kAlice, id);
  CHECK(code_of([&] { g[0].migrate(kAlice, id, g[0].wire_address()); }) == ErrorCode::BadRequest);
  CHECK(code_of([&] { g[0].migrate("mallory@grid", id, g[1].wire_address()); }) == ErrorCode::PolicyDenied);
  CHECK(std::get<std::int64_t>(*g[0].invoke(kAlice, id, "get", {})) == 2);

  std::vector<std::pair<std::string, std::string>> moves;
  for (const auto& e : g[0].events_since(0, 0ms)) {
    if (e.entity == id) moves.emplace_back(e.previous, e.state);
  }
  for (const auto& [from, to] : moves) {
    if (from == "MIGRATING") CHECK(to != "TERMINATED");
  }
}

TEST_CASE("duplicate and tampered state transfers are rejected") {
  dt::Grid g(1);
  auto& n = g[0];
  auto m = fixture_manifest("long_counter.manifest.json");
  auto gp = ir::parse_assembly(program_source(m));
  gp.entry = m.entry;
  auto ip = instrument::instrument(gp);
  auto frozen = [&](const std::string& entity) {
    vm::LoadOptions lo;
    lo.entity_id = entity;
    vm::Vm v(ip, m.limits, lo);
    v.step(5000);
    REQUIRE(dt::suspend_to_quiescence(v));
    return snapshot::encode(snapshot::capture(v));
  };
  auto state_body = [&](const std::string& mid, const std::string& entity, const std::string& bytes) {
    return Json{{"migration_id", mid}, {"entity", entity}, {"manifest", to_json(m)}, {"snapshot", bytes},
                {"output", Json::array()}, {"version", 1}, {"source", "127.0.0.1:9"}};
  };

  auto bytes = frozen("x.e1");
  auto first = exchange(n, signed_frame("MIGRATE_STATE", state_body("x/m1/x.e1", "x.e1", bytes)));
  REQUIRE(first);
  CHECK(first->type == "MIGRATE_ACK");
  CHECK(first->body["version"] == 2);
  CHECK(first->body["address"] == n.wire_address());
  auto again = exchange(n, signed_frame("MIGRATE_STATE", state_body("x/m1/x.e1", "x.e1", bytes)));
  REQUIRE(again);
  CHECK(again->type == "ERROR");
  CHECK(again->body["code"] == "DuplicateEntity");
  auto offer = exchange(n, signed_frame("MIGRATE_OFFER", Json{{"migration_id", "x/m2/x.e1"}, {"entity", "x.e1"},
                                                              {"manifest", to_json(m)}}));
  REQUIRE(offer);
  CHECK(offer->body["code"] == "DuplicateEntity");

  auto other = frozen("x.e2");
  auto snap = parse_json(other);
  auto digest = snap["digest"].get<std::string>();
  digest[0] = digest[0] == '0' ? '1' : '0';
  snap["digest"] = digest;
  auto tampered = exchange(n, signed_frame("MIGRATE_STATE", state_body("x/m3/x.e2", "x.e2", canonical_dump(snap))));
  REQUIRE(tampered);
  CHECK(tampered->type == "ERROR");
  CHECK(tampered->body["code"] == "DigestMismatch");
  CHECK(code_of([&] { n.entity("x.e2"); }) == ErrorCode::UnknownEntity);
}

TEST_CASE("messages follow a migrated entity") {
  dt::Grid g(3, [](NucleusConfig& c) { c.grace_period = 1; });
  REQUIRE(g.wait_connected(5s));
  auto rx = g[0].deploy(kAlice, dt::manifest_for("rx", kReceiver));
  g[0].migrate(kAlice, rx, g[1].wire_address());
  CHECK(g[1].entity(rx).state == ShellState::Running);

  auto before = g[0].counters().forwarded;
  auto stale = signed_frame("MSG", Json{{"target", rx}, {"payload", ir::to_json(ir::str_value("late"))}, {"hops", 0}});
  exchange(g[0], stale, false);
  CHECK(dt::wait_until([&] { return has_line(g[1], rx, "recv late"); }, 5s));
  CHECK(g[0].counters().forwarded == before + 1);

  REQUIRE(dt::wait_until([&] { return g[2].locate(rx) == g[1].wire_address(); }, 5s));
  auto tx = g[2].deploy(kAlice, dt::manifest_for("tx", dt::with_boot(kSender, {{"target", ir::str_value(rx)}}),
                                                 EntityKind::DataDriven, dt::kBootMethod));
  CHECK(g[2].wait_for_state(tx, ShellState::Terminated, 5s));
  CHECK(dt::wait_until([&] { return has_line(g[1], rx, "recv ping"); }, 5s));

  std::this_thread::sleep_for(2500ms);
  auto dropped = g[0].counters().undeliverable;
  auto after = signed_frame("MSG", Json{{"target", rx}, {"payload", ir::to_json(ir::str_value("gone"))}, {"hops", 0}});
  exchange(g[0], after, false);
  CHECK(dt::wait_until([&] { return g[0].counters().undeliverable == dropped + 1; }, 3s));
  CHECK(g[0].counters().forwarded == before + 1);
  CHECK_FALSE(has_line(g[1], rx, "recv gone"));
}

TEST_CASE("the admin API serves entities, peers, status and an event stream") {
  dt::Grid g(2);
  REQUIRE(g.wait_connected(5s));
  SystemClock sys;
  AdminClient alice(g[0].admin_address(), dt::key_for(kAlice), sys);

  auto created = alice.post_ok("/v1/entities", Json{{"manifest", to_json(dt::manifest_for("rx", kReceiver))}});
  auto id = created["id"].get<std::string>();
  auto list = alice.get_ok("/v1/entities");
  REQUIRE(list["entities"].is_array());
  CHECK(list["entities"].size() == 5);
  for (const auto& e : list["entities"]) {
    for (const char* k : {"id", "name", "kind", "state", "system", "owner", "home", "usage", "limits"}) {
      INFO(k);
      CHECK(e.contains(k));
    }
    CHECK(state_from_name(e["state"].get<std::string>()));
  }
  auto detail = alice.get_ok("/v1/entities/" + id);
  CHECK(detail["output"].is_array());
  CHECK(detail["globals"].is_object());
  CHECK(detail["kind"] == "DATA_DRIVEN");

  auto peers = alice.get_ok("/v1/peers");
  REQUIRE(peers["peers"].size() == 1);
  CHECK(peers["peers"][0]["id"] == "n2");
  CHECK(peers["peers"][0]["address"] == g[1].wire_address());
  CHECK(peers["peers"][0]["last_seen"].is_number_integer());

  auto status = alice.get_ok("/v1/status");
  CHECK(status["id"] == "n1");
  CHECK(status["counters"].contains("dropped_frames"));

  auto q = alice.get_ok("/v1/query?expr=" + url_encode("nucleus=n2") + "&ttl=2");
  REQUIRE(q["hits"].size() == 1);
  CHECK(q["hits"][0]["origin"]["id"] == "n2");
  auto loc = alice.get_ok("/v1/locate/" + id);
  CHECK(loc["address"] == g[0].wire_address());
  CHECK(alice.get("/v1/locate/n9.e9?ttl=2").status == 404);

  alice.post_ok("/v1/entities/" + id + "/suspend", Json::object());
  alice.post_ok("/v1/entities/" + id + "/resume", Json::object());
  auto receipt = alice.post_ok("/v1/entities/" + id + "/migrate", Json{{"target", g[1].wire_address()}});
  CHECK(receipt["target"] == g[1].wire_address());

  auto events = alice.events(0, 5, 5000);
  REQUIRE(events.size() == 5);
  std::vector<std::string> states;
  std::uint64_t last = 0;
  for (const auto& e : events) {
    CHECK(e["seq"].get<std::uint64_t>() > last);
    last = e["seq"].get<std::uint64_t>();
    CHECK(e["entity"] == id);
    states.push_back(e["state"].get<std::string>());
  }
  CHECK(states == std::vector<std::string>{"RUNNING", "SUSPENDED", "RUNNING", "MIGRATING", "TERMINATED"});
  auto tail = alice.events(3, 2, 5000);
  REQUIRE(tail.size() == 2);
  CHECK(tail[0]["seq"] == 4);

  AdminClient remote(g[1].admin_address(), dt::key_for(kAlice), sys);
  auto inv = remote.post("/v1/entities/nope/invoke", Json{{"op", "get"}, {"args", Json::array()}});
  CHECK(inv.status == 404);
}

TEST_CASE("invocations reach an entity hosted on another nucleus") {
  dt::Grid g(2);
  REQUIRE(g.wait_connected(5s));
  auto id = g[1].deploy(kAlice, fixture_manifest("counter_service.manifest.json"));
  REQUIRE(dt::wait_until([&] { return has_line(g[1], id, "service up"); }, 5s));
  REQUIRE(g[0].locate(id) == g[1].wire_address());
  CHECK(std::get<std::int64_t>(*g[0].invoke(kAlice, id, "add", {ir::int_value(7)})) == 7);
  CHECK(code_of([&] { g[0].invoke("mallory@grid", id, "get", {}); }) == ErrorCode::PolicyDenied);
  CHECK(code_of([&] { g[0].invoke(kAlice, "n9.e1", "get", {}); }) == ErrorCode::UnknownEntity);
}

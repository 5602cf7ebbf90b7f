#include <doctest.h>

#include <sstream>

#include "dget/instrument/instrument.hpp"
#include "dget/ir/assembly.hpp"
#include "dget/nucleus/manifest.hpp"
#include "support/grid.hpp"
#include "support/harness.hpp"
#include "support/process.hpp"

using namespace dget;
using namespace std::chrono_literals;
namespace dt = dget::testing;

namespace {

const std::string kFixtures = DGET_FIXTURE_DIR;

std::vector<Json> json_lines(const std::string& text) {
  std::vector<Json> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(parse_json(line));
  }
  return out;
}

std::string trimmed(std::string s) {
  while (!s.empty() && (s.back() == '\n' || s.back() == ' ')) s.pop_back();
  return s;
}

struct TwoNodes {
  dt::TempDir dir;
  std::unique_ptr<dt::NucleusProcess> a;
  std::unique_ptr<dt::NucleusProcess> b;
  std::string key;

  TwoNodes() {
    Json slow{{"step_slice", 200}, {"round_delay_ms", 2}};
    a = std::make_unique<dt::NucleusProcess>(dt::write_process_config(dir.path(), "A", {}, slow));
    b = std::make_unique<dt::NucleusProcess>(dt::write_process_config(dir.path(), "B", {a->wire()}, slow));
    key = dir.file("alice.key");
    auto r = dt::run_cli({"keygen", "--domain", dt::kDomain, "--identity", "alice@grid", "--seed", dt::kPkgSeed,
                          "--out", key});
    REQUIRE(r.exit == 0);
  }

  dt::CliResult on(const dt::NucleusProcess& n, std::vector<std::string> args, bool structured = false) {
    std::vector<std::string> full{"-n", n.admin(), "-k", key};
    if (structured) full.insert(full.end(), {"-o", "structured"});
    full.insert(full.end(), args.begin(), args.end());
    return dt::run_cli(full);
  }
};

}  // namespace

TEST_CASE("dgetctl migrates an entity between two nucleus processes") {
  TwoNodes g;
  auto manifest = kFixtures + "/long_counter.manifest.json";
  auto m = nucleus::load_manifest_file(manifest);
  auto gp = ir::parse_assembly(nucleus::program_source(m));
  gp.entry = m.entry;
  dt::VmRunOptions o;
  o.limits = m.limits;
  o.max_steps = 50'000'000;
  auto expected = dt::run_vm(instrument::instrument(gp), {}, o);
  REQUIRE(expected.status == "completed");

  auto dep = g.on(*g.a, {"deploy", "-m", manifest}, true);
  REQUIRE(dep.exit == 0);
  auto id = json_lines(dep.out).at(0)["id"].get<std::string>();
  CHECK(id == "A.e1");

  REQUIRE(dt::wait_until(
      [&] {
        auto s = g.on(*g.a, {"show", id}, true);
        if (s.exit != 0) return false;
        auto out = json_lines(s.out).at(0)["output"];
        return out.size() >= 2;
      },
      20s));
  auto mig = g.on(*g.a, {"migrate", id, "--to", g.b->wire()}, true);
  REQUIRE(mig.exit == 0);
  auto receipt = json_lines(mig.out).at(0);
  CHECK(receipt["target"] == g.b->wire());
  CHECK(receipt["source"] == g.a->wire());

  auto loc = g.on(*g.a, {"locate", id});
  CHECK(loc.exit == 0);
  CHECK(trimmed(loc.out) == g.b->wire());
  CHECK(trimmed(g.on(*g.b, {"locate", id}).out) == g.b->wire());
  CHECK(g.on(*g.a, {"show", id}).exit == 1);

  Json final;
  REQUIRE(dt::wait_until(
      [&] {
        auto s = g.on(*g.b, {"show", id}, true);
        if (s.exit != 0) return false;
        final = json_lines(s.out).at(0);
        return final["state"] == "TERMINATED";
      },
      30s));
  CHECK(final["output"].get<std::vector<std::string>>() == expected.output);
  CHECK(final["globals"]["count"] == ir::to_json(expected.globals.at("count")));
}

TEST_CASE("dgetctl exit codes and structured output") {
  TwoNodes g;
  REQUIRE(dt::wait_until([&] { return g.on(*g.a, {"peers"}, true).out.find("\"B\"") != std::string::npos; }, 10s));

  auto svc = g.on(*g.a, {"deploy", "-m", kFixtures + "/counter_service.manifest.json"}, true);
  REQUIRE(svc.exit == 0);
  auto id = json_lines(svc.out).at(0)["id"].get<std::string>();
  REQUIRE(dt::wait_until([&] { return g.on(*g.a, {"show", id}).out.find("service up") != std::string::npos; }, 5s));

  struct Row {
    std::vector<std::string> args;
    int exit;
  };
  const Row rows[] = {
      {{"bogus"}, 2},
      {{}, 2},
      {{"ls", "--frobnicate"}, 2},
      {{"-o", "yaml", "ls"}, 2},
      {{"migrate", id}, 2},
      {{"-n", g.a->admin(), "ls"}, 0},
      {{"-n", g.a->admin(), "show", "A.e99"}, 1},
      {{"-n", g.a->admin(), "stop", id}, 1},
      {{"-n", "127.0.0.1:1", "ls"}, 1},
      {{"-n", g.a->admin(), "-k", g.key, "invoke", id, "add", "5"}, 0},
      {{"-n", g.a->admin(), "-k", g.key, "invoke", id, "add"}, 1},
      {{"-n", g.a->admin(), "-k", g.key, "invoke", id, "reset"}, 1},
      {{"-n", g.a->admin(), "query", "nucleus=B", "--ttl", "0"}, 1},
      {{"-n", g.a->admin(), "-k", g.key, "suspend", id}, 0},
      {{"-n", g.a->admin(), "-k", g.key, "suspend", id}, 1},
      {{"-n", g.a->admin(), "-k", g.key, "resume", id}, 0},
  };
  for (const auto& row : rows) {
    std::string joined;
    for (const auto& a : row.args) joined += a + " ";
    INFO(joined);
    auto r = dt::run_cli(row.args);
    CHECK(r.exit == row.exit);
    if (r.exit == 1) CHECK(r.err.find("dgetctl: ") == 0);
  }

  auto got = g.on(*g.a, {"invoke", id, "get"});
  CHECK(trimmed(got.out) == "5");

  for (const auto& args : std::vector<std::vector<std::string>>{
           {"ls"}, {"peers"}, {"show", id}, {"query", "nucleus=B", "--ttl", "2"}, {"locate", id}, {"show", "nope"}}) {
    auto r = g.on(*g.a, args, true);
    INFO(args[0]);
    auto lines = json_lines(r.out);
    CHECK_FALSE(lines.empty());
    for (const auto& j : lines) CHECK(j.is_object());
  }
  auto ls = json_lines(g.on(*g.a, {"ls"}, true).out);
  CHECK(ls.size() == 5);
  auto hits = json_lines(g.on(*g.a, {"query", "nucleus=B", "--ttl", "2"}, true).out);
  REQUIRE(hits.size() == 1);
  CHECK(hits[0]["origin"]["address"] == g.b->wire());
  auto err = json_lines(g.on(*g.a, {"show", "nope"}, true).out);
  CHECK(err.at(0)["error"] == "UnknownEntity");

  auto env = dt::run_cli({"peers"}, {{"DGET_NUCLEUS", g.b->admin()}});
  CHECK(env.exit == 0);
  CHECK(env.out.find(g.a->wire()) != std::string::npos);
  auto with_key = dt::run_cli({"-n", g.a->admin(), "stop", id}, {{"DGET_KEY", g.key}});
  CHECK(with_key.exit == 0);
  CHECK(with_key.out.find("TERMINATED") != std::string::npos);
}

TEST_CASE("a nucleus process honours DGET_CONFIG and rejects bad configs") {
  dt::TempDir dir;
  auto bad = dir.write("bad.json", "{\"id\": \"Z\"}");
  auto r = dt::run_cli({"nucleus", "run", "--config", bad});
  CHECK(r.exit == 1);
  CHECK(r.err.find("BadConfig") != std::string::npos);
  auto good = dt::write_process_config(dir.path(), "C", {});
  auto over = dt::run_cli({"nucleus", "run", "--config", good}, {{"DGET_CONFIG", bad}});
  CHECK(over.exit == 1);
  CHECK(over.err.find("BadConfig") != std::string::npos);
  CHECK(dt::run_cli({"nucleus", "run"}).exit == 1);

  dt::NucleusProcess c(good);
  CHECK(c.id() == "C");
  CHECK(c.terminate() == 0);
}

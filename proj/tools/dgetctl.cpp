#include <CLI11.hpp>

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "dget/authz/identity.hpp"
#include "dget/common/error.hpp"
#include "dget/nucleus/admin.hpp"
#include "dget/nucleus/config.hpp"
#include "dget/nucleus/manifest.hpp"
#include "dget/nucleus/nucleus.hpp"

using namespace dget;
using namespace dget::nucleus;

namespace {

struct Options {
  std::string nucleus = "127.0.0.1:7700";
  std::string key_path;
  std::string output = "human";
  bool structured() const { return output == "structured"; }
};

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v != nullptr && *v != '\0' ? v : fallback;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::BadRequest, "cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

AdminClient client(const Options& o, bool needs_key) {
  std::optional<authz::DelegatedKey> key;
  if (!o.key_path.empty()) {
    key = authz::DelegatedKey{authz::key_from_store_text(read_file(o.key_path)), {}};
  } else if (needs_key) {
    throw Error(ErrorCode::AuthFailed, "no identity key: pass --key or set DGET_KEY");
  }
  return AdminClient(o.nucleus, key, Nucleus::default_clock());
}

void print_line(const Json& j) { std::cout << canonical_dump(j) << "\n"; }

void print_table(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& r : rows) {
    width.resize(std::max(width.size(), r.size()));
    for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
  }
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) {
      std::cout << std::left << std::setw(static_cast<int>(i + 1 < r.size() ? width[i] + 2 : 0)) << r[i];
    }
    std::cout << "\n";
  }
}

std::string usage_text(const Json& e) {
  std::string out;
  for (const auto& [k, v] : e["usage"].items()) {
    if (!out.empty()) out += " ";
    out += k + "=" + std::to_string(v.get<std::int64_t>());
    if (e["limits"].contains(k)) out += "/" + std::to_string(e["limits"][k].get<std::int64_t>());
  }
  return out.empty() ? "-" : out;
}

int run_nucleus(const Options& o, const std::string& config_path) {
  auto path = resolve_config_path(config_path);
  if (path.empty()) throw Error(ErrorCode::BadConfig, "no config: pass --config or set DGET_CONFIG");
  auto config = load_config(path);

  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  Nucleus n(config);
  n.start();
  Json ready{{"id", n.id()}, {"address", n.wire_address()}, {"admin", n.admin_address()}};
  if (o.structured()) {
    print_line(ready);
  } else {
    std::cout << "nucleus " << n.id() << " wire " << n.wire_address() << " admin " << n.admin_address() << "\n";
  }
  std::cout.flush();
  int sig = 0;
  sigwait(&set, &sig);
  n.shutdown();
  return 0;
}

int keygen(const Options& o, const std::string& domain, const std::string& identity, const std::string& seed,
           Timestamp not_before, Timestamp not_after, const std::string& out) {
  auto pkg = authz::pkg_init(domain, authz::HmacTestBackend{}, to_bytes(seed));
  auto key = authz::issue_identity(pkg, identity, authz::Window{not_before, not_after});
  auto text = authz::key_store_text(key);
  if (out.empty()) {
    std::cout << text << "\n";
  } else {
    std::ofstream f(out);
    if (!f) throw Error(ErrorCode::BadRequest, "cannot write " + out);
    f << text << "\n";
    if (o.structured()) print_line(Json{{"identity", identity}, {"path", out}});
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  Options o;
  o.nucleus = env_or("DGET_NUCLEUS", o.nucleus);
  o.key_path = env_or("DGET_KEY", "");

  CLI::App app{"dgetctl: operate DGET nuclei through the admin API"};
  app.require_subcommand(1, 1);
  app.add_option("--nucleus,-n", o.nucleus, "admin API address host:port (DGET_NUCLEUS)");
  app.add_option("--key,-k", o.key_path, "identity key store used to sign requests (DGET_KEY)");
  app.add_option("--output,-o", o.output, "human or structured")->check(CLI::IsMember({"human", "structured"}));

  auto* nucleus_cmd = app.add_subcommand("nucleus", "run a nucleus");
  nucleus_cmd->require_subcommand(1, 1);
  std::string config_path;
  auto* run_cmd = nucleus_cmd->add_subcommand("run", "start a nucleus and serve until interrupted");
  run_cmd->add_option("--config,-c", config_path, "config file (DGET_CONFIG overrides)");

  std::string domain, identity, seed, key_out;
  Timestamp not_before = 0, not_after = 4102444800;
  auto* keygen_cmd = app.add_subcommand("keygen", "issue an identity key from a seeded test PKG");
  keygen_cmd->add_option("--domain", domain)->required();
  keygen_cmd->add_option("--identity", identity)->required();
  keygen_cmd->add_option("--seed", seed)->required();
  keygen_cmd->add_option("--not-before", not_before);
  keygen_cmd->add_option("--not-after", not_after);
  keygen_cmd->add_option("--out", key_out);

  std::string manifest_path, program_path;
  auto* deploy_cmd = app.add_subcommand("deploy", "deploy an entity");
  deploy_cmd->add_option("-m,--manifest", manifest_path)->required();
  deploy_cmd->add_option("-p,--program", program_path);

  auto* ls_cmd = app.add_subcommand("ls", "list entities");
  std::string entity_id;
  auto* show_cmd = app.add_subcommand("show", "show one entity with output and globals");
  show_cmd->add_option("id", entity_id)->required();
  std::map<std::string, CLI::App*> shell_cmds;
  for (const char* action : {"stop", "suspend", "resume"}) {
    auto* c = app.add_subcommand(action, std::string(action) + " an entity");
    c->add_option("id", entity_id)->required();
    shell_cmds[action] = c;
  }
  std::string target;
  auto* migrate_cmd = app.add_subcommand("migrate", "migrate an entity to another nucleus");
  migrate_cmd->add_option("id", entity_id)->required();
  migrate_cmd->add_option("--to", target, "target wire address")->required();

  std::string op;
  std::vector<std::string> args;
  auto* invoke_cmd = app.add_subcommand("invoke", "call an exposed operation");
  invoke_cmd->add_option("id", entity_id)->required();
  invoke_cmd->add_option("op", op)->required();
  invoke_cmd->add_option("args", args, "integers, true/false, or text");

  std::string expr;
  int ttl = -1;
  auto* query_cmd = app.add_subcommand("query", "discover resources");
  query_cmd->add_option("expr", expr)->required();
  query_cmd->add_option("--ttl", ttl);
  auto* locate_cmd = app.add_subcommand("locate", "find the nucleus hosting an entity");
  locate_cmd->add_option("id", entity_id)->required();
  locate_cmd->add_option("--ttl", ttl);
  auto* peers_cmd = app.add_subcommand("peers", "list overlay peers");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (run_cmd->parsed()) return run_nucleus(o, config_path);
    if (keygen_cmd->parsed()) return keygen(o, domain, identity, seed, not_before, not_after, key_out);

    if (deploy_cmd->parsed()) {
      auto m = load_manifest_file(manifest_path);
      Json body{{"manifest", to_json(m)}};
      body["program"] = program_path.empty() ? program_source(m) : read_file(program_path);
      auto r = client(o, true).post_ok("/v1/entities", body);
      if (o.structured()) {
        print_line(r);
      } else {
        std::cout << r["id"].get<std::string>() << " " << r["state"].get<std::string>() << "\n";
      }
      return 0;
    }
    if (ls_cmd->parsed()) {
      auto r = client(o, false).get_ok("/v1/entities");
      if (o.structured()) {
        for (const auto& e : r["entities"]) print_line(e);
        return 0;
      }
      std::vector<std::vector<std::string>> rows{{"ID", "NAME", "KIND", "STATE", "USAGE"}};
      for (const auto& e : r["entities"]) {
        rows.push_back({e["id"].get<std::string>(), e["name"].get<std::string>(), e["kind"].get<std::string>(),
                        e["state"].get<std::string>(), usage_text(e)});
      }
      print_table(rows);
      return 0;
    }
    if (show_cmd->parsed()) {
      auto r = client(o, false).get_ok("/v1/entities/" + url_encode(entity_id));
      if (o.structured()) {
        print_line(r);
      } else {
        std::cout << r["id"].get<std::string>() << " " << r["name"].get<std::string>() << " "
                  << r["state"].get<std::string>() << "\n";
        for (const auto& line : r["output"]) std::cout << "  " << line.get<std::string>() << "\n";
      }
      return 0;
    }
    for (const auto& [action, cmd] : shell_cmds) {
      if (!cmd->parsed()) continue;
      auto r = client(o, true).post_ok("/v1/entities/" + url_encode(entity_id) + "/" + action, Json::object());
      if (o.structured()) {
        print_line(r);
      } else {
        std::cout << r["id"].get<std::string>() << " " << r["state"].get<std::string>() << "\n";
      }
      return 0;
    }
    if (migrate_cmd->parsed()) {
      auto r = client(o, true).post_ok("/v1/entities/" + url_encode(entity_id) + "/migrate", Json{{"target", target}});
      if (o.structured()) {
        print_line(r);
      } else {
        std::cout << r["entity"].get<std::string>() << " -> " << r["target"].get<std::string>() << "\n";
      }
      return 0;
    }
    if (invoke_cmd->parsed()) {
      Json a = Json::array();
      for (const auto& s : args) {
        if (s == "true" || s == "false") {
          a.push_back(s == "true");
        } else if (!s.empty() && s.find_first_not_of("0123456789", s[0] == '-' ? 1 : 0) == std::string::npos &&
                   s != "-") {
          a.push_back(std::stoll(s));
        } else {
          a.push_back(s);
        }
      }
      auto r = client(o, true).post_ok("/v1/entities/" + url_encode(entity_id) + "/invoke", Json{{"op", op}, {"args", a}});
      if (o.structured()) {
        print_line(r);
      } else {
        std::cout << r["display"].get<std::string>() << "\n";
      }
      return 0;
    }
    if (query_cmd->parsed()) {
      auto path = "/v1/query?expr=" + url_encode(expr) + (ttl >= 0 ? "&ttl=" + std::to_string(ttl) : "");
      auto r = client(o, false).get_ok(path);
      if (o.structured()) {
        for (const auto& h : r["hits"]) print_line(h);
        return 0;
      }
      std::vector<std::vector<std::string>> rows{{"NODE", "ADDRESS", "DESCRIPTOR"}};
      for (const auto& h : r["hits"]) {
        rows.push_back({h["origin"]["id"].get<std::string>(), h["origin"]["address"].get<std::string>(),
                        canonical_dump(h["descriptor"])});
      }
      print_table(rows);
      return 0;
    }
    if (locate_cmd->parsed()) {
      auto path = "/v1/locate/" + url_encode(entity_id) + (ttl >= 0 ? "?ttl=" + std::to_string(ttl) : "");
      auto r = client(o, false).get_ok(path);
      if (o.structured()) {
        print_line(r);
      } else {
        std::cout << r["address"].get<std::string>() << "\n";
      }
      return 0;
    }
    if (peers_cmd->parsed()) {
      auto r = client(o, false).get_ok("/v1/peers");
      if (o.structured()) {
        for (const auto& p : r["peers"]) print_line(p);
        return 0;
      }
      std::vector<std::vector<std::string>> rows{{"ID", "ADDRESS", "LAST_SEEN"}};
      for (const auto& p : r["peers"]) {
        rows.push_back({p["id"].get<std::string>(), p["address"].get<std::string>(),
                        std::to_string(p["last_seen"].get<std::int64_t>())});
      }
      print_table(rows);
      return 0;
    }
  } catch (const Error& e) {
    if (o.structured()) {
      print_line(Json{{"error", std::string(code_name(e.code()))}, {"message", e.what()}});
    }
    std::cerr << "dgetctl: " << code_name(e.code()) << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "dgetctl: " << e.what() << "\n";
    return 1;
  }
  std::cerr << app.help();
  return 2;
}

#include "dget/nucleus/admin.hpp"

#include <httplib.h>

#include <atomic>
#include <thread>

#include "dget/common/error.hpp"
#include "dget/nucleus/nucleus.hpp"

namespace dget::nucleus {

std::string admin_payload(std::string_view method, std::string_view path, std::string_view body) {
  return std::string(method) + " " + std::string(path) + "\n" + std::string(body);
}

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::AuthFailed: return 401;
    case ErrorCode::PolicyDenied: return 403;
    case ErrorCode::UnknownEntity: return 404;
    case ErrorCode::IllegalTransition:
    case ErrorCode::DuplicateEntity: return 409;
    case ErrorCode::LoadRejected:
    case ErrorCode::VerificationFailed: return 422;
    case ErrorCode::TargetRefused:
    case ErrorCode::TransferFailed:
    case ErrorCode::TransportError: return 502;
    case ErrorCode::Timeout:
    case ErrorCode::QuiescenceTimeout: return 504;
    case ErrorCode::RuntimeFault: return 500;
    default: return 400;
  }
}

std::string url_encode(std::string_view s) {
  static const char* hex = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : s) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
      out.push_back(static_cast<char>(c));
    } else {
      out.push_back('%');
      out.push_back(hex[c >> 4]);
      out.push_back(hex[c & 15]);
    }
  }
  return out;
}

namespace {

void reply(httplib::Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(canonical_dump(body), "application/json");
}

void reply_error(httplib::Response& res, ErrorCode code, const std::string& message) {
  reply(res, http_status(code), Json{{"error", std::string(code_name(code))}, {"message", message}});
}

Json state_reply(const std::string& id, ShellState s) { return Json{{"id", id}, {"state", std::string(state_name(s))}}; }

std::vector<vm::Value> args_from_json(const Json& j) {
  std::vector<vm::Value> out;
  if (j.is_null()) return out;
  if (!j.is_array()) throw Error(ErrorCode::BadRequest, "args must be a list");
  for (const auto& a : j) {
    if (a.is_number_integer()) {
      out.emplace_back(a.get<std::int64_t>());
    } else if (a.is_string()) {
      out.emplace_back(a.get<std::string>());
    } else if (a.is_boolean()) {
      out.emplace_back(a.get<bool>());
    } else {
      out.push_back(ir::value_from_json(a));
    }
  }
  return out;
}

}  // namespace

struct AdminServer::Impl {
  Nucleus& n;
  httplib::Server server;
  std::string host;
  int port = 0;
  std::thread thread;
  std::atomic<bool> stopping{false};

  explicit Impl(Nucleus& nucleus) : n(nucleus) {}

  std::string caller(const httplib::Request& req) {
    auto header = req.get_header_value(kAuthHeader);
    if (header.empty()) throw Error(ErrorCode::AuthFailed, std::string("missing ") + kAuthHeader + " header");
    Json env;
    try {
      env = parse_json(header);
    } catch (const Error&) {
      throw Error(ErrorCode::AuthFailed, "malformed auth envelope");
    }
    return n.authenticate(env, admin_payload(req.method, req.path, req.body));
  }

  static Json body_of(const httplib::Request& req) {
    if (req.body.empty()) return Json::object();
    try {
      auto j = parse_json(req.body);
      if (!j.is_object()) throw Error(ErrorCode::BadRequest, "request body must be an object");
      return j;
    } catch (const Error& e) {
      throw Error(ErrorCode::BadRequest, e.what());
    }
  }

  template <typename F>
  httplib::Server::Handler guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const Error& e) {
        reply_error(res, e.code(), e.what());
      } catch (const Json::exception& e) {
        reply_error(res, ErrorCode::BadRequest, e.what());
      } catch (const std::exception& e) {
        reply_error(res, ErrorCode::BadRequest, e.what());
      }
    };
  }

  void routes() {
    server.Get("/v1/entities", guarded([this](const httplib::Request&, httplib::Response& res) {
      Json list = Json::array();
      for (const auto& e : n.list_entities()) list.push_back(to_json(e, false));
      reply(res, 200, Json{{"entities", list}});
    }));
    server.Get(R"(/v1/entities/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      reply(res, 200, to_json(n.entity(req.matches[1]), true));
    }));
    server.Post("/v1/entities", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto who = caller(req);
      auto body = body_of(req);
      if (!body.contains("manifest")) throw Error(ErrorCode::BadRequest, "manifest is required");
      auto m = manifest_from_json(body["manifest"]);
      std::optional<std::string> program;
      if (body.contains("program")) {
        if (!body["program"].is_string()) throw Error(ErrorCode::BadRequest, "program must be text");
        program = body["program"].get<std::string>();
      }
      auto id = n.deploy(who, m, program);
      reply(res, 201, state_reply(id, n.entity(id).state));
    }));
    server.Post(R"(/v1/entities/([^/]+)/(stop|suspend|resume))",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  auto who = caller(req);
                  std::string id = req.matches[1];
                  std::string action = req.matches[2];
                  ShellState s = action == "stop"      ? n.stop_entity(who, id)
                                 : action == "suspend" ? n.suspend_entity(who, id)
                                                       : n.resume_entity(who, id);
                  reply(res, 200, state_reply(id, s));
                }));
    server.Post(R"(/v1/entities/([^/]+)/migrate)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto who = caller(req);
      auto body = body_of(req);
      if (!body.contains("target") || !body["target"].is_string()) throw Error(ErrorCode::BadRequest, "target is required");
      reply(res, 200, to_json(n.migrate(who, req.matches[1], body["target"].get<std::string>())));
    }));
    server.Post(R"(/v1/entities/([^/]+)/invoke)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto who = caller(req);
      auto body = body_of(req);
      if (!body.contains("op") || !body["op"].is_string()) throw Error(ErrorCode::BadRequest, "op is required");
      auto result = n.invoke(who, req.matches[1], body["op"].get<std::string>(), args_from_json(body.value("args", Json())));
      Json out{{"id", std::string(req.matches[1])}, {"op", body["op"]}};
      out["result"] = result ? ir::to_json(*result) : Json(nullptr);
      out["display"] = result ? ir::to_display(*result) : std::string();
      reply(res, 200, out);
    }));
    server.Get("/v1/peers", guarded([this](const httplib::Request&, httplib::Response& res) {
      Json list = Json::array();
      for (const auto& p : n.peers()) {
        list.push_back(Json{{"id", p.info.id}, {"address", p.info.address}, {"last_seen", p.last_seen}});
      }
      reply(res, 200, Json{{"peers", list}});
    }));
    server.Get("/v1/query", guarded([this](const httplib::Request& req, httplib::Response& res) {
      auto expr = req.get_param_value("expr");
      int ttl = req.has_param("ttl") ? std::stoi(req.get_param_value("ttl")) : n.config().overlay.ttl_default;
      Json hits = Json::array();
      for (const auto& a : n.query(expr, ttl)) hits.push_back(overlay::to_json(a));
      reply(res, 200, Json{{"expr", expr}, {"ttl", ttl}, {"hits", hits}});
    }));
    server.Get(R"(/v1/locate/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      std::optional<int> ttl;
      if (req.has_param("ttl")) ttl = std::stoi(req.get_param_value("ttl"));
      std::string id = req.matches[1];
      auto where = n.locate(id, ttl);
      if (!where) throw Error(ErrorCode::UnknownEntity, "cannot locate " + id);
      reply(res, 200, Json{{"entity", id}, {"address", *where}});
    }));
    server.Get("/v1/status", guarded([this](const httplib::Request&, httplib::Response& res) {
      auto c = n.counters();
      reply(res, 200, Json{{"id", n.id()},
                           {"address", n.wire_address()},
                           {"admin", n.admin_address()},
                           {"counters", Json{{"frames_handled", c.frames_handled},
                                             {"dropped_frames", c.dropped_frames},
                                             {"undeliverable", c.undeliverable},
                                             {"forwarded", c.forwarded},
                                             {"send_failures", c.send_failures}}}});
    }));
    server.Get("/v1/events", [this](const httplib::Request& req, httplib::Response& res) {
      std::uint64_t since = 0;
      try {
        if (req.has_param("since")) since = std::stoull(req.get_param_value("since"));
        if (req.has_header("Last-Event-ID")) since = std::stoull(req.get_header_value("Last-Event-ID"));
      } catch (const std::exception&) {
        reply_error(res, ErrorCode::BadRequest, "since must be a sequence number");
        return;
      }
      auto last = std::make_shared<std::uint64_t>(since);
      res.set_header("Cache-Control", "no-cache");
      res.set_chunked_content_provider("text/event-stream", [this, last](std::size_t, httplib::DataSink& sink) {
        if (stopping) return false;
        auto events = n.events_since(*last, std::chrono::milliseconds(500));
        std::string chunk;
        for (const auto& e : events) {
          chunk += "id: " + std::to_string(e.seq) + "\nevent: state\ndata: " + canonical_dump(to_json(e)) + "\n\n";
          *last = e.seq;
        }
        if (chunk.empty()) chunk = ": keepalive\n\n";
        return !stopping && sink.write(chunk.data(), chunk.size());
      });
    });
  }
};

AdminServer::AdminServer(Nucleus& nucleus, const std::string& listen) : impl_(std::make_unique<Impl>(nucleus)) {
  auto ep = parse_endpoint(listen);
  impl_->host = ep.host;
  impl_->routes();
  if (ep.port == 0) {
    impl_->port = impl_->server.bind_to_any_port(ep.host);
    if (impl_->port < 0) throw Error(ErrorCode::AddressInUse, "admin " + listen + ": bind failed");
  } else {
    if (!impl_->server.bind_to_port(ep.host, ep.port)) throw Error(ErrorCode::AddressInUse, "admin " + listen + ": bind failed");
    impl_->port = ep.port;
  }
}

AdminServer::~AdminServer() { stop(); }

void AdminServer::start() {
  if (impl_->thread.joinable()) return;
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void AdminServer::stop() {
  if (!impl_->thread.joinable()) return;
  impl_->stopping = true;
  impl_->server.stop();
  impl_->thread.join();
}

std::string AdminServer::address() const { return impl_->host + ":" + std::to_string(impl_->port); }

struct AdminClient::Impl {
  httplib::Client http;
  explicit Impl(const Endpoint& ep) : http(ep.host, ep.port) {
    http.set_connection_timeout(5, 0);
    http.set_read_timeout(120, 0);
  }
};

AdminClient::AdminClient(std::string address, std::optional<authz::DelegatedKey> key, const Clock& clock)
    : address_(std::move(address)), key_(std::move(key)), clock_(clock) {
  impl_ = std::make_unique<Impl>(parse_endpoint(address_));
}

AdminClient::~AdminClient() = default;

namespace {

AdminResponse to_response(const httplib::Result& r, const std::string& address) {
  if (!r) throw Error(ErrorCode::TransportError, "admin API at " + address + ": " + httplib::to_string(r.error()));
  AdminResponse out;
  out.status = r->status;
  try {
    out.body = r->body.empty() ? Json::object() : parse_json(r->body);
  } catch (const Error&) {
    out.body = Json{{"error", "TransportError"}, {"message", r->body}};
  }
  return out;
}

Json ok_or_throw(const AdminResponse& r) {
  if (r.ok()) return r.body;
  auto code = r.body.is_object() && r.body.contains("error") && r.body["error"].is_string()
                  ? code_from_name(r.body["error"].get<std::string>())
                  : ErrorCode::TransportError;
  auto msg = r.body.is_object() ? r.body.value("message", std::string("HTTP ") + std::to_string(r.status))
                                : std::string("HTTP ") + std::to_string(r.status);
  throw Error(code, msg);
}

}  // namespace

AdminResponse AdminClient::get(const std::string& target) { return to_response(impl_->http.Get(target), address_); }

AdminResponse AdminClient::post(const std::string& path, const Json& body) {
  auto text = canonical_dump(body);
  httplib::Headers headers;
  if (key_) headers.emplace(kAuthHeader, canonical_dump(envelope(*key_, admin_payload("POST", path, text), clock_.now())));
  return to_response(impl_->http.Post(path, headers, text, "application/json"), address_);
}

Json AdminClient::get_ok(const std::string& target) { return ok_or_throw(get(target)); }

Json AdminClient::post_ok(const std::string& path, const Json& body) { return ok_or_throw(post(path, body)); }

std::vector<Json> AdminClient::events(std::uint64_t since, std::size_t count, int timeout_ms) {
  auto ep = parse_endpoint(address_);
  httplib::Client c(ep.host, ep.port);
  c.set_read_timeout(std::max(1, timeout_ms / 1000 + 1), 0);
  std::vector<Json> out;
  std::string buffer;
  auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
  c.Get("/v1/events?since=" + std::to_string(since), [&](const char* data, std::size_t len) {
    buffer.append(data, len);
    std::size_t cut;
    while (out.size() < count && (cut = buffer.find("\n\n")) != std::string::npos) {
      auto block = buffer.substr(0, cut);
      buffer.erase(0, cut + 2);
      std::size_t pos = 0;
      while (pos < block.size()) {
        auto eol = block.find('\n', pos);
        auto line = block.substr(pos, eol == std::string::npos ? std::string::npos : eol - pos);
        if (line.rfind("data: ", 0) == 0 && out.size() < count) out.push_back(parse_json(line.substr(6)));
        if (eol == std::string::npos) break;
        pos = eol + 1;
      }
    }
    return out.size() < count && std::chrono::steady_clock::now() < deadline;
  });
  return out;
}

}  // namespace dget::nucleus

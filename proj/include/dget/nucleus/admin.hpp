#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dget/authz/identity.hpp"
#include "dget/common/canonical.hpp"
#include "dget/common/clock.hpp"

namespace dget::nucleus {

class Nucleus;

inline constexpr const char* kAuthHeader = "X-Dget-Auth";

/// Bytes an admin caller signs: "METHOD PATH\nBODY".
std::string admin_payload(std::string_view method, std::string_view path, std::string_view body);

/// HTTP status used for an error code.
int http_status(ErrorCode code);

/// HTTP admin API over a nucleus. Reads are open; every POST carries an
/// envelope in the X-Dget-Auth header.
///
///   GET  /v1/entities                       {"entities": [...]}
///   GET  /v1/entities/{id}                  entity with output and globals
///   POST /v1/entities                       {manifest, program?} -> {id, state}
///   POST /v1/entities/{id}/stop|suspend|resume                -> {id, state}
///   POST /v1/entities/{id}/migrate          {target} -> receipt
///   POST /v1/entities/{id}/invoke           {op, args} -> {result}
///   GET  /v1/peers                          {"peers": [...]}
///   GET  /v1/events?since=N                 text/event-stream of state changes
///   GET  /v1/query?expr=E&ttl=N             {"hits": [...]}
///   GET  /v1/locate/{id}?ttl=N              {entity, address}
///   GET  /v1/status                         {id, address, admin, counters}
///
/// Errors: {"error": CODE, "message": text} with a matching status.
class AdminServer {
 public:
  AdminServer(Nucleus& nucleus, const std::string& listen);
  ~AdminServer();
  AdminServer(const AdminServer&) = delete;
  AdminServer& operator=(const AdminServer&) = delete;

  void start();
  void stop();
  std::string address() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct AdminResponse {
  int status = 0;
  Json body;
  bool ok() const { return status >= 200 && status < 300; }
};

class AdminClient {
 public:
  AdminClient(std::string address, std::optional<authz::DelegatedKey> key, const Clock& clock);
  ~AdminClient();

  /// TransportError when the server cannot be reached.
  AdminResponse get(const std::string& target);
  AdminResponse post(const std::string& path, const Json& body);

  /// Like get/post but throws Error carrying the server's code on failure.
  Json get_ok(const std::string& target);
  Json post_ok(const std::string& path, const Json& body);

  /// Reads server-sent events until `count` arrived or `timeout_ms` passed.
  std::vector<Json> events(std::uint64_t since, std::size_t count, int timeout_ms);

  const std::string& address() const { return address_; }

 private:
  struct Impl;
  std::string address_;
  std::optional<authz::DelegatedKey> key_;
  const Clock& clock_;
  std::unique_ptr<Impl> impl_;
};

std::string url_encode(std::string_view s);

}  // namespace dget::nucleus

#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include "dget/nucleus/wire.hpp"

namespace dget::nucleus {

struct Endpoint {
  std::string host;
  std::uint16_t port = 0;
  std::string text() const { return host + ":" + std::to_string(port); }
};

/// "host:port". BadConfig when malformed.
Endpoint parse_endpoint(std::string_view address);

/// One frame per connection: the client writes a frame, the server answers
/// with at most one frame and closes.
class TcpServer {
 public:
  using Handler = std::function<std::optional<WireFrame>(const WireFrame&)>;

  /// Binds immediately. AddressInUse when the port is taken, BadConfig when
  /// the host does not resolve.
  TcpServer(const std::string& listen, Handler handler);
  ~TcpServer();
  TcpServer(const TcpServer&) = delete;
  TcpServer& operator=(const TcpServer&) = delete;

  void start();
  void stop();
  /// Bound address with the actual port.
  std::string address() const { return bound_.text(); }

 private:
  void accept_loop();
  void serve(int fd);

  Handler handler_;
  Endpoint bound_;
  int listen_fd_ = -1;
  std::atomic<bool> running_{false};
  std::thread acceptor_;
  std::mutex mu_;
  std::condition_variable idle_;
  int active_ = 0;
};

/// Sends `f` and, when `expect_reply`, waits for the answer. TransportError
/// on connection failure, timeout or a closed connection without reply.
std::optional<WireFrame> tcp_exchange(const std::string& address, const WireFrame& f,
                                      std::chrono::milliseconds timeout, bool expect_reply);

}  // namespace dget::nucleus

#include "dget/nucleus/transport.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <cstring>

#include "dget/common/error.hpp"

namespace dget::nucleus {
namespace {

void set_timeout(int fd, std::chrono::milliseconds t) {
  timeval tv{};
  tv.tv_sec = static_cast<time_t>(t.count() / 1000);
  tv.tv_usec = static_cast<suseconds_t>((t.count() % 1000) * 1000);
  ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
  ::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
}

bool write_all(int fd, std::string_view data) {
  while (!data.empty()) {
    auto n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return false;
    data.remove_prefix(static_cast<std::size_t>(n));
  }
  return true;
}

/// Reads until one frame is complete. nullopt on EOF before any byte.
std::optional<WireFrame> read_frame(int fd) {
  FrameReader reader;
  char buf[16384];
  while (true) {
    if (auto f = reader.next()) return f;
    auto n = ::recv(fd, buf, sizeof buf, 0);
    if (n < 0 && errno == EINTR) continue;
    if (n < 0) throw Error(ErrorCode::TransportError, std::string("recv: ") + std::strerror(errno));
    if (n == 0) {
      if (reader.buffered() == 0) return std::nullopt;
      throw Error(ErrorCode::MalformedField, "connection closed inside a frame");
    }
    reader.feed(std::string_view(buf, static_cast<std::size_t>(n)));
  }
}

addrinfo* resolve(const Endpoint& ep, bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  auto port = std::to_string(ep.port);
  if (::getaddrinfo(ep.host.c_str(), port.c_str(), &hints, &res) != 0 || res == nullptr) {
    throw Error(ErrorCode::BadConfig, "cannot resolve " + ep.host);
  }
  return res;
}

}  // namespace

Endpoint parse_endpoint(std::string_view address) {
  auto colon = address.rfind(':');
  if (colon == std::string_view::npos || colon == 0 || colon + 1 == address.size()) {
    throw Error(ErrorCode::BadConfig, "address must be host:port: '" + std::string(address) + "'");
  }
  unsigned port = 0;
  auto tail = address.substr(colon + 1);
  auto [p, ec] = std::from_chars(tail.data(), tail.data() + tail.size(), port);
  if (ec != std::errc{} || p != tail.data() + tail.size() || port > 65535) {
    throw Error(ErrorCode::BadConfig, "bad port in '" + std::string(address) + "'");
  }
  return Endpoint{std::string(address.substr(0, colon)), static_cast<std::uint16_t>(port)};
}

TcpServer::TcpServer(const std::string& listen, Handler handler) : handler_(std::move(handler)) {
  auto ep = parse_endpoint(listen);
  auto* res = resolve(ep, true);
  int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
  if (fd < 0) {
    ::freeaddrinfo(res);
    throw Error(ErrorCode::TransportError, "socket failed");
  }
  int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  if (::bind(fd, res->ai_addr, res->ai_addrlen) != 0) {
    auto err = errno;
    ::freeaddrinfo(res);
    ::close(fd);
    if (err == EADDRINUSE || err == EACCES) throw Error(ErrorCode::AddressInUse, listen + ": " + std::strerror(err));
    throw Error(ErrorCode::BadConfig, listen + ": " + std::strerror(err));
  }
  ::freeaddrinfo(res);
  if (::listen(fd, 64) != 0) {
    ::close(fd);
    throw Error(ErrorCode::AddressInUse, listen + ": listen failed");
  }
  sockaddr_in sa{};
  socklen_t len = sizeof sa;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&sa), &len);
  bound_ = Endpoint{ep.host, ntohs(sa.sin_port)};
  listen_fd_ = fd;
}

TcpServer::~TcpServer() {
  stop();
  if (listen_fd_ >= 0) ::close(listen_fd_);
}

void TcpServer::start() {
  if (running_.exchange(true)) return;
  acceptor_ = std::thread([this] { accept_loop(); });
}

void TcpServer::stop() {
  if (!running_.exchange(false)) return;
  ::shutdown(listen_fd_, SHUT_RDWR);
  if (acceptor_.joinable()) acceptor_.join();
  std::unique_lock lock(mu_);
  idle_.wait(lock, [&] { return active_ == 0; });
}

void TcpServer::accept_loop() {
  while (running_) {
    pollfd p{listen_fd_, POLLIN, 0};
    int r = ::poll(&p, 1, 100);
    if (r <= 0) continue;
    int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) continue;
    {
      std::lock_guard lock(mu_);
      ++active_;
    }
    std::thread([this, fd] {
      serve(fd);
      std::lock_guard lock(mu_);
      if (--active_ == 0) idle_.notify_all();
    }).detach();
  }
}

void TcpServer::serve(int fd) {
  set_timeout(fd, std::chrono::seconds(10));
  std::optional<WireFrame> reply;
  try {
    auto f = read_frame(fd);
    if (f) reply = handler_(*f);
  } catch (const Error& e) {
    reply = error_frame(e.code(), e.what());
  } catch (const std::exception& e) {
    reply = error_frame(ErrorCode::TransportError, e.what());
  }
  if (reply) {
    try {
      write_all(fd, encode_frame(*reply));
    } catch (const Error&) {
    }
  }
  ::close(fd);
}

std::optional<WireFrame> tcp_exchange(const std::string& address, const WireFrame& f, std::chrono::milliseconds timeout,
                                      bool expect_reply) {
  auto ep = parse_endpoint(address);
  addrinfo* res = nullptr;
  try {
    res = resolve(ep, false);
  } catch (const Error& e) {
    throw Error(ErrorCode::TransportError, e.what());
  }
  int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
  if (fd < 0) {
    ::freeaddrinfo(res);
    throw Error(ErrorCode::TransportError, "socket failed");
  }
  set_timeout(fd, timeout);
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  if (::connect(fd, res->ai_addr, res->ai_addrlen) != 0) {
    auto err = errno;
    ::freeaddrinfo(res);
    ::close(fd);
    throw Error(ErrorCode::TransportError, "connect " + address + ": " + std::strerror(err));
  }
  ::freeaddrinfo(res);
  struct Closer {
    int fd;
    ~Closer() { ::close(fd); }
  } closer{fd};
  if (!write_all(fd, encode_frame(f))) throw Error(ErrorCode::TransportError, "send to " + address + " failed");
  ::shutdown(fd, SHUT_WR);
  if (!expect_reply) return std::nullopt;
  std::optional<WireFrame> reply;
  try {
    reply = read_frame(fd);
  } catch (const Error& e) {
    throw Error(ErrorCode::TransportError, std::string("reply from ") + address + ": " + e.what());
  }
  if (!reply) throw Error(ErrorCode::TransportError, "no reply from " + address);
  return reply;
}

}  // namespace dget::nucleus

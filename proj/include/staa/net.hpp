#pragma once

// Minimal RAII wrappers over POSIX TCP sockets.

#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "staa/error.hpp"
#include "staa/protocol.hpp"

namespace staa::net {

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket() { reset(); }

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }
  // Unblocks any thread sitting in recv/accept on this socket.
  void shutdown() const {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
  }

 private:
  int fd_ = -1;
};

struct Endpoint {
  std::string host;
  std::string port;
};

inline Endpoint parse_endpoint(const std::string& address) {
  const auto colon = address.rfind(':');
  if (colon == std::string::npos || colon + 1 == address.size()) {
    throw Error(ErrorKind::kInvalidArgument, "address '" + address + "' is not HOST:PORT");
  }
  Endpoint ep{address.substr(0, colon), address.substr(colon + 1)};
  if (ep.host.empty() || ep.host == "*") ep.host = "0.0.0.0";
  return ep;
}

inline void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

inline addrinfo* resolve(const Endpoint& ep, bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  if (int rc = ::getaddrinfo(ep.host.c_str(), ep.port.c_str(), &hints, &res); rc != 0) {
    throw Error(ErrorKind::kNetwork, "cannot resolve " + ep.host + ":" + ep.port + ": " +
                                         ::gai_strerror(rc));
  }
  return res;
}

inline Socket listen_on(const std::string& address, int backlog = 16) {
  const Endpoint ep = parse_endpoint(address);
  addrinfo* res = resolve(ep, true);
  Socket s(::socket(res->ai_family, res->ai_socktype, res->ai_protocol));
  if (!s.valid()) {
    ::freeaddrinfo(res);
    throw Error(ErrorKind::kNetwork, std::string("socket: ") + std::strerror(errno));
  }
  int one = 1;
  ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  const int rc = ::bind(s.fd(), res->ai_addr, res->ai_addrlen);
  ::freeaddrinfo(res);
  if (rc != 0 || ::listen(s.fd(), backlog) != 0) {
    throw Error(ErrorKind::kNetwork, "cannot bind " + address + ": " + std::strerror(errno));
  }
  return s;
}

inline std::uint16_t local_port(const Socket& s) {
  sockaddr_in addr{};
  socklen_t len = sizeof(addr);
  ::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
  return ntohs(addr.sin_port);
}

inline Socket connect_to(const std::string& address) {
  const Endpoint ep = parse_endpoint(address);
  addrinfo* res = resolve(ep, false);
  Socket s(::socket(res->ai_family, res->ai_socktype, res->ai_protocol));
  const int rc = s.valid() ? ::connect(s.fd(), res->ai_addr, res->ai_addrlen) : -1;
  ::freeaddrinfo(res);
  if (rc != 0) {
    throw Error(ErrorKind::kNetwork, "cannot connect to " + address + ": " + std::strerror(errno));
  }
  set_nodelay(s.fd());
  return s;
}

// Returns false on orderly EOF before the first byte; throws on a short read.
inline bool read_exact(const Socket& s, std::span<std::uint8_t> buf) {
  std::size_t got = 0;
  while (got < buf.size()) {
    const ssize_t n = ::recv(s.fd(), buf.data() + got, buf.size() - got, 0);
    if (n == 0) {
      if (got == 0) return false;
      throw Error(ErrorKind::kNetwork, "connection closed mid-frame");
    }
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorKind::kNetwork, std::string("recv: ") + std::strerror(errno));
    }
    got += static_cast<std::size_t>(n);
  }
  return true;
}

inline void write_all(const Socket& s, std::span<const std::uint8_t> buf) {
  std::size_t sent = 0;
  while (sent < buf.size()) {
    const ssize_t n = ::send(s.fd(), buf.data() + sent, buf.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorKind::kNetwork, std::string("send: ") + std::strerror(errno));
    }
    sent += static_cast<std::size_t>(n);
  }
}

inline void send_message(const Socket& s, const wire::Message& m) {
  write_all(s, wire::encode(m));
}

// Reads one frame; nullopt on clean EOF. Header violations surface as
// wire::ProtocolError after the header bytes are consumed.
inline std::optional<wire::Message> read_message(const Socket& s) {
  std::uint8_t header[wire::kHeaderSize];
  if (!read_exact(s, header)) return std::nullopt;
  const wire::Header h = wire::decode_header(header);
  wire::Message m{h.type, std::vector<std::uint8_t>(h.payload_len)};
  if (h.payload_len > 0 && !read_exact(s, m.payload)) {
    throw Error(ErrorKind::kNetwork, "connection closed mid-frame");
  }
  return m;
}

}  // namespace staa::net

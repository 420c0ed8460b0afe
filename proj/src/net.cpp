#include "myo/net.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "myo/bytes.hpp"
#include "myo/error.hpp"

#include <zlib.h>

namespace myo::bytes {

std::uint32_t crc32(std::span<const std::uint8_t> data) noexcept {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  std::size_t off = 0;
  while (off < data.size()) {
    auto chunk = static_cast<uInt>(std::min<std::size_t>(data.size() - off, 1u << 30));
    crc = ::crc32(crc, data.data() + off, chunk);
    off += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace myo::bytes

namespace myo::net {

namespace {

sockaddr_in resolve(const Endpoint& ep) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(ep.port);
  std::string host = ep.host.empty() ? "0.0.0.0" : ep.host;
  if (host == "localhost") host = "127.0.0.1";
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) == 1) return addr;

  addrinfo hints{};
  hints.ai_family = AF_INET;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr) {
    throw Error(Errc::SocketError, "cannot resolve host " + host);
  }
  addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  ::freeaddrinfo(res);
  return addr;
}

std::string errno_text() { return std::strerror(errno); }

// Waits for readiness; returns false on timeout.
bool wait_fd(int fd, short events, std::chrono::milliseconds timeout) {
  pollfd p{fd, events, 0};
  for (;;) {
    int rc = ::poll(&p, 1, static_cast<int>(timeout.count()));
    if (rc > 0) return true;
    if (rc == 0) return false;
    if (errno != EINTR) throw Error(Errc::SocketError, "poll: " + errno_text());
  }
}

std::uint16_t local_port(int fd) {
  sockaddr_in addr{};
  socklen_t len = sizeof(addr);
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  return ntohs(addr.sin_port);
}

}  // namespace

Endpoint Endpoint::parse(const std::string& text) {
  auto colon = text.rfind(':');
  if (colon == std::string::npos) {
    throw Error(Errc::InvalidArgument, "expected host:port, got '" + text + "'");
  }
  Endpoint ep;
  ep.host = text.substr(0, colon);
  int port = 0;
  try {
    port = std::stoi(text.substr(colon + 1));
  } catch (const std::exception&) {
    throw Error(Errc::InvalidArgument, "bad port in '" + text + "'");
  }
  if (port < 0 || port > 65535) throw Error(Errc::InvalidArgument, "port out of range");
  ep.port = static_cast<std::uint16_t>(port);
  return ep;
}

std::string Endpoint::to_string() const { return host + ":" + std::to_string(port); }

Socket& Socket::operator=(Socket&& other) noexcept {
  if (this != &other) {
    close();
    fd_ = other.release();
  }
  return *this;
}

void Socket::close() noexcept {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

void Socket::shutdown() noexcept {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

TcpStream TcpStream::connect(const Endpoint& ep, std::chrono::milliseconds timeout) {
  auto addr = resolve(ep);
  Socket s(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
  if (!s.valid()) throw Error(Errc::SocketError, "socket: " + errno_text());

  int flags = ::fcntl(s.fd(), F_GETFL, 0);
  ::fcntl(s.fd(), F_SETFL, flags | O_NONBLOCK);
  int rc = ::connect(s.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr));
  if (rc != 0 && errno != EINPROGRESS) {
    throw Error(Errc::DeviceLost, "connect " + ep.to_string() + ": " + errno_text());
  }
  if (rc != 0) {
    if (!wait_fd(s.fd(), POLLOUT, timeout)) {
      throw Error(Errc::DeviceLost, "connect " + ep.to_string() + ": timed out");
    }
    int err = 0;
    socklen_t len = sizeof(err);
    ::getsockopt(s.fd(), SOL_SOCKET, SO_ERROR, &err, &len);
    if (err != 0) {
      throw Error(Errc::DeviceLost, "connect " + ep.to_string() + ": " + std::strerror(err));
    }
  }
  ::fcntl(s.fd(), F_SETFL, flags);
  TcpStream stream(std::move(s));
  stream.set_nodelay(true);
  return stream;
}

void TcpStream::write_all(std::span<const std::uint8_t> data, const std::atomic<bool>* cancel) {
  std::size_t off = 0;
  while (off < data.size()) {
    if (cancel != nullptr) {
      while (!wait_fd(sock_.fd(), POLLOUT, std::chrono::milliseconds(100))) {
        if (cancel->load()) throw Error(Errc::ClientDisconnected, "send cancelled");
      }
    }
    ssize_t n = ::send(sock_.fd(), data.data() + off, data.size() - off, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw Error(Errc::ClientDisconnected, "send: " + errno_text());
    }
    off += static_cast<std::size_t>(n);
  }
}

std::size_t TcpStream::read_some(std::span<std::uint8_t> out, std::chrono::milliseconds timeout) {
  if (!sock_.valid()) throw Error(Errc::ClientDisconnected, "socket closed");
  if (!wait_fd(sock_.fd(), POLLIN, timeout)) return 0;
  for (;;) {
    ssize_t n = ::recv(sock_.fd(), out.data(), out.size(), 0);
    if (n > 0) return static_cast<std::size_t>(n);
    if (n == 0) throw Error(Errc::ClientDisconnected, "peer closed connection");
    if (errno == EINTR) continue;
    if (errno == EAGAIN || errno == EWOULDBLOCK) return 0;
    throw Error(Errc::ClientDisconnected, "recv: " + errno_text());
  }
}

void TcpStream::set_nodelay(bool on) {
  int v = on ? 1 : 0;
  ::setsockopt(sock_.fd(), IPPROTO_TCP, TCP_NODELAY, &v, sizeof(v));
}

void TcpStream::set_send_buffer(int bytes) {
  ::setsockopt(sock_.fd(), SOL_SOCKET, SO_SNDBUF, &bytes, sizeof(bytes));
}

void TcpStream::set_recv_buffer(int bytes) {
  ::setsockopt(sock_.fd(), SOL_SOCKET, SO_RCVBUF, &bytes, sizeof(bytes));
}

TcpListener TcpListener::bind(const Endpoint& ep) {
  auto addr = resolve(ep);
  Socket s(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
  if (!s.valid()) throw Error(Errc::SocketError, "socket: " + errno_text());
  int one = 1;
  ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  if (::bind(s.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    throw Error(Errc::PortInUse, "bind " + ep.to_string() + ": " + errno_text());
  }
  if (::listen(s.fd(), 4) != 0) throw Error(Errc::SocketError, "listen: " + errno_text());
  TcpListener l;
  l.port_ = local_port(s.fd());
  l.sock_ = std::move(s);
  return l;
}

std::optional<TcpStream> TcpListener::accept(std::chrono::milliseconds timeout) {
  if (!sock_.valid()) return std::nullopt;
  if (!wait_fd(sock_.fd(), POLLIN, timeout)) return std::nullopt;
  int fd = ::accept4(sock_.fd(), nullptr, nullptr, SOCK_CLOEXEC);
  if (fd < 0) return std::nullopt;
  TcpStream stream{Socket(fd)};
  stream.set_nodelay(true);
  return stream;
}

UdpSocket UdpSocket::open() {
  UdpSocket u;
  u.sock_ = Socket(::socket(AF_INET, SOCK_DGRAM | SOCK_CLOEXEC, 0));
  if (!u.sock_.valid()) throw Error(Errc::SocketError, "socket: " + errno_text());
  return u;
}

UdpSocket UdpSocket::bind(const Endpoint& ep) {
  auto u = open();
  auto addr = resolve(ep);
  if (::bind(u.sock_.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    throw Error(Errc::PortInUse, "bind " + ep.to_string() + ": " + errno_text());
  }
  u.port_ = local_port(u.sock_.fd());
  return u;
}

bool UdpSocket::send_to(const Endpoint& ep, std::span<const std::uint8_t> data) noexcept {
  try {
    auto addr = resolve(ep);
    ssize_t n = ::sendto(sock_.fd(), data.data(), data.size(), 0,
                         reinterpret_cast<sockaddr*>(&addr), sizeof(addr));
    return n == static_cast<ssize_t>(data.size());
  } catch (...) {
    return false;
  }
}

std::optional<std::size_t> UdpSocket::recv(std::span<std::uint8_t> out,
                                           std::chrono::milliseconds timeout) {
  if (!wait_fd(sock_.fd(), POLLIN, timeout)) return std::nullopt;
  ssize_t n = ::recv(sock_.fd(), out.data(), out.size(), 0);
  if (n < 0) return std::nullopt;
  return static_cast<std::size_t>(n);
}

}  // namespace myo::net

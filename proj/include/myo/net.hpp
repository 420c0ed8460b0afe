#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <optional>
#include <span>
#include <string>

// Thin RAII wrappers over POSIX sockets. Device streams and UDP outputs use
// these directly; the operator API sits on Boost.Beast instead.
namespace myo::net {

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;

  static Endpoint parse(const std::string& text);
  std::string to_string() const;
};

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) noexcept : fd_(fd) {}
  Socket(Socket&& other) noexcept : fd_(other.release()) {}
  Socket& operator=(Socket&& other) noexcept;
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket() { close(); }

  int fd() const noexcept { return fd_; }
  bool valid() const noexcept { return fd_ >= 0; }
  int release() noexcept {
    int fd = fd_;
    fd_ = -1;
    return fd;
  }
  void close() noexcept;
  // Unblocks any thread waiting on this socket.
  void shutdown() noexcept;

 private:
  int fd_ = -1;
};

class TcpStream {
 public:
  TcpStream() = default;
  explicit TcpStream(Socket s) : sock_(std::move(s)) {}

  static TcpStream connect(const Endpoint& ep,
                           std::chrono::milliseconds timeout = std::chrono::seconds(2));

  // Throws Error{ClientDisconnected} when the peer goes away.
  // Blocks while the peer applies back-pressure; gives up early once
  // `cancel` becomes true.
  void write_all(std::span<const std::uint8_t> data, const std::atomic<bool>* cancel = nullptr);
  // Returns 0 on timeout; throws Error{ClientDisconnected} on EOF.
  std::size_t read_some(std::span<std::uint8_t> out, std::chrono::milliseconds timeout);

  void set_nodelay(bool on);
  void set_send_buffer(int bytes);
  void set_recv_buffer(int bytes);
  bool valid() const noexcept { return sock_.valid(); }
  void shutdown() noexcept { sock_.shutdown(); }
  void close() noexcept { sock_.close(); }

 private:
  Socket sock_;
};

class TcpListener {
 public:
  // Throws Error{PortInUse} if the port cannot be bound. Port 0 picks one.
  static TcpListener bind(const Endpoint& ep);

  std::uint16_t port() const noexcept { return port_; }
  // Returns nullopt on timeout.
  std::optional<TcpStream> accept(std::chrono::milliseconds timeout);
  void close() noexcept { sock_.close(); }

 private:
  Socket sock_;
  std::uint16_t port_ = 0;
};

class UdpSocket {
 public:
  // Unconnected socket for sending.
  static UdpSocket open();
  // Socket bound for receiving; port 0 picks one.
  static UdpSocket bind(const Endpoint& ep);

  // Returns false on a send error (logged by caller).
  bool send_to(const Endpoint& ep, std::span<const std::uint8_t> data) noexcept;
  std::optional<std::size_t> recv(std::span<std::uint8_t> out, std::chrono::milliseconds timeout);
  std::uint16_t port() const noexcept { return port_; }

 private:
  Socket sock_;
  std::uint16_t port_ = 0;
};

}  // namespace myo::net

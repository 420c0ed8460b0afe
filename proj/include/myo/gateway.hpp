#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <string>

#include <json.hpp>

#include "myo/net.hpp"
#include "myo/session.hpp"

namespace myo::gateway {

struct GatewayOptions {
  net::Endpoint bind{"127.0.0.1", 8765};
  double plot_rate_hz = 30.0;
  double prediction_rate_hz = 32.0;
  double guide_rate_hz = 60.0;
  // Per-client outgoing queue; droppable messages beyond it are discarded.
  std::size_t client_queue = 64;
  // Hard cap for any message; a client this far behind is disconnected.
  std::size_t client_queue_hard = 4096;
};

// {"type", "seq", "payload"}
nlohmann::json envelope(const std::string& type, const nlohmann::json& seq, nlohmann::json payload);

struct GatewayStats {
  std::uint64_t clients = 0;
  std::uint64_t messages_sent = 0;
  std::uint64_t plot_messages = 0;
  std::uint64_t client_drops = 0;
  std::uint64_t commands = 0;

  nlohmann::json to_json() const;
};

// WebSocket /ws plus HTTP GET /health and /state on one port. Commands are
// forwarded to the orchestrator; its events are broadcast to every client.
class Gateway {
 public:
  Gateway(session::Orchestrator& engine, GatewayOptions options = {});
  ~Gateway();
  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  // Throws Error{PortInUse}.
  void start();
  void stop();
  std::uint16_t port() const noexcept;
  GatewayStats stats() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace myo::gateway

#include "myo/gateway.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <spdlog/spdlog.h>

#include <condition_variable>
#include <deque>
#include <future>
#include <mutex>
#include <set>
#include <thread>

#include "myo/error.hpp"
#include "myo/plot.hpp"

namespace myo::gateway {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;
using nlohmann::json;
using clock_type = std::chrono::steady_clock;

json envelope(const std::string& type, const json& seq, json payload) {
  return {{"type", type}, {"seq", seq}, {"payload", std::move(payload)}};
}

json GatewayStats::to_json() const {
  return {{"clients", clients},
          {"messages_sent", messages_sent},
          {"plot_messages", plot_messages},
          {"client_drops", client_drops},
          {"commands", commands}};
}

namespace {

class WsSession;

struct Shared {
  session::Orchestrator& engine;
  GatewayOptions options;
  std::atomic<std::uint64_t> messages_sent{0};
  std::atomic<std::uint64_t> plot_messages{0};
  std::atomic<std::uint64_t> client_drops{0};
  std::atomic<std::uint64_t> commands{0};

  std::mutex sessions_mu;
  std::set<std::shared_ptr<WsSession>> sessions;

  // Commands run off the io thread so a slow command never stalls sockets.
  std::mutex cmd_mu;
  std::condition_variable cmd_cv;
  std::deque<std::pair<std::weak_ptr<WsSession>, std::string>> cmd_queue;
  bool stopping = false;

  Shared(session::Orchestrator& e, GatewayOptions o) : engine(e), options(std::move(o)) {}
};

class WsSession : public std::enable_shared_from_this<WsSession> {
 public:
  WsSession(tcp::socket socket, Shared& shared) : ws_(std::move(socket)), shared_(shared) {}

  void start(http::request<http::string_body> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
      if (ec) return;
      {
        std::lock_guard lock(self->shared_.sessions_mu);
        self->shared_.sessions.insert(self);
      }
      self->send(std::make_shared<const std::string>(
                     envelope("state", nullptr, self->shared_.engine.state_json()).dump()),
                 false);
      self->read();
    });
  }

  // Called on the io thread.
  void send(std::shared_ptr<const std::string> msg, bool droppable) {
    if (closed_) return;
    if (droppable && queue_.size() >= shared_.options.client_queue) {
      ++shared_.client_drops;
      return;
    }
    if (queue_.size() >= shared_.options.client_queue_hard) {
      spdlog::warn("websocket client too slow, closing");
      close();
      return;
    }
    queue_.push_back(std::move(msg));
    if (!writing_) write();
  }

  void close() {
    if (closed_) return;
    closed_ = true;
    detach();
    beast::error_code ec;
    beast::get_lowest_layer(ws_).socket().shutdown(tcp::socket::shutdown_both, ec);
    beast::get_lowest_layer(ws_).socket().close(ec);
  }

 private:
  void read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->closed_ = true;
        self->detach();
        return;
      }
      std::string text = beast::buffers_to_string(self->buffer_.data());
      self->buffer_.consume(self->buffer_.size());
      {
        std::lock_guard lock(self->shared_.cmd_mu);
        self->shared_.cmd_queue.emplace_back(self, std::move(text));
      }
      self->shared_.cmd_cv.notify_one();
      self->read();
    });
  }

  void write() {
    writing_ = true;
    ws_.text(true);
    ws_.async_write(asio::buffer(*queue_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      self->queue_.pop_front();
      if (ec) {
        self->closed_ = true;
        self->writing_ = false;
        self->detach();
        return;
      }
      ++self->shared_.messages_sent;
      if (!self->queue_.empty() && !self->closed_) {
        self->write();
      } else {
        self->writing_ = false;
      }
    });
  }

  void detach() {
    std::lock_guard lock(shared_.sessions_mu);
    shared_.sessions.erase(shared_from_this());
  }

  websocket::stream<beast::tcp_stream> ws_;
  beast::flat_buffer buffer_;
  Shared& shared_;
  std::deque<std::shared_ptr<const std::string>> queue_;
  bool writing_ = false;
  bool closed_ = false;
};

class HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(tcp::socket socket, Shared& shared, std::function<json()> state)
      : stream_(std::move(socket)), shared_(shared), state_(std::move(state)) {}

  void start() {
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return;
      self->handle();
    });
  }

 private:
  void handle() {
    if (websocket::is_upgrade(req_)) {
      if (req_.target() != "/ws") {
        respond(http::status::not_found, {{"error", "websocket endpoint is /ws"}});
        return;
      }
      stream_.expires_never();
      std::make_shared<WsSession>(stream_.release_socket(), shared_)->start(std::move(req_));
      return;
    }
    if (req_.method() != http::verb::get) {
      respond(http::status::method_not_allowed, {{"error", "GET only"}});
    } else if (req_.target() == "/health") {
      respond(http::status::ok, {{"status", "ok"}, {"phase", session::to_string(shared_.engine.phase())}});
    } else if (req_.target() == "/state") {
      respond(http::status::ok, state_());
    } else {
      respond(http::status::not_found, {{"error", "not found"}});
    }
  }

  void respond(http::status status, const json& body) {
    res_ = {};
    res_.version(req_.version());
    res_.result(status);
    res_.set(http::field::content_type, "application/json");
    res_.set(http::field::access_control_allow_origin, "*");
    res_.keep_alive(false);
    res_.body() = body.dump();
    res_.prepare_payload();
    http::async_write(stream_, res_, [self = shared_from_this()](beast::error_code, std::size_t) {
      beast::error_code ec;
      self->stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
    });
  }

  beast::tcp_stream stream_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
  http::response<http::string_body> res_;
  Shared& shared_;
  std::function<json()> state_;
};

}  // namespace

struct Gateway::Impl {
  Shared shared;
  asio::io_context ioc{1};
  tcp::acceptor acceptor{ioc};
  std::thread io_thread;
  std::thread cmd_thread;
  std::thread publish_thread;
  std::atomic<bool> stop{false};
  std::uint16_t port = 0;
  std::uint64_t subscription = 0;

  std::mutex broadcast_mu;
  std::uint64_t seq = 0;

  std::mutex latest_mu;
  std::optional<json> latest_prediction;
  std::optional<json> latest_guide;

  Impl(session::Orchestrator& e, GatewayOptions o) : shared(e, std::move(o)) {}

  json state_with_stats() {
    json s = shared.engine.state_json();
    s["ingest"] = shared.engine.stats().to_json();
    s["gateway"] = stats().to_json();
    return s;
  }

  GatewayStats stats() {
    GatewayStats g;
    {
      std::lock_guard lock(shared.sessions_mu);
      g.clients = shared.sessions.size();
    }
    g.messages_sent = shared.messages_sent.load();
    g.plot_messages = shared.plot_messages.load();
    g.client_drops = shared.client_drops.load();
    g.commands = shared.commands.load();
    return g;
  }

  // Assigns the broadcast seq and queues delivery in seq order.
  void broadcast(const std::string& type, json payload, bool droppable) {
    std::lock_guard lock(broadcast_mu);
    auto msg = std::make_shared<const std::string>(envelope(type, ++seq, std::move(payload)).dump());
    asio::post(ioc, [this, msg, droppable] {
      std::vector<std::shared_ptr<WsSession>> targets;
      {
        std::lock_guard lock(shared.sessions_mu);
        targets.assign(shared.sessions.begin(), shared.sessions.end());
      }
      for (auto& s : targets) s->send(msg, droppable);
    });
  }

  void reply(const std::weak_ptr<WsSession>& who, json message) {
    auto msg = std::make_shared<const std::string>(message.dump());
    asio::post(ioc, [who, msg] {
      if (auto s = who.lock()) s->send(msg, false);
    });
  }

  void on_event(const session::Event& e) {
    if (e.type == "prediction") {
      std::lock_guard lock(latest_mu);
      latest_prediction = e.payload;
    } else if (e.type == "guide") {
      std::lock_guard lock(latest_mu);
      latest_guide = e.payload;
    } else {
      broadcast(e.type, e.payload, false);
    }
  }

  void accept() {
    acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;
      std::make_shared<HttpSession>(std::move(socket), shared, [this] { return state_with_stats(); })->start();
      accept();
    });
  }

  void command_loop() {
    for (;;) {
      std::pair<std::weak_ptr<WsSession>, std::string> item;
      {
        std::unique_lock lock(shared.cmd_mu);
        shared.cmd_cv.wait(lock, [&] { return !shared.cmd_queue.empty() || shared.stopping; });
        if (shared.stopping) return;
        item = std::move(shared.cmd_queue.front());
        shared.cmd_queue.pop_front();
      }
      ++shared.commands;
      json seq = nullptr;
      std::string type;
      try {
        json msg = json::parse(item.second);
        seq = msg.value("seq", json(nullptr));
        type = msg.at("type").get<std::string>();
        json payload = msg.value("payload", json::object());
        if (!payload.is_object()) throw Error(Errc::InvalidArgument, "payload must be an object");
        json result = shared.engine.call({type, payload});
        reply(item.first, envelope("ack", seq, {{"command", type}, {"result", result}}));
      } catch (const Error& e) {
        reply(item.first, envelope("error", seq,
                                   {{"command", type},
                                    {"code", std::string(to_string(e.code()))},
                                    {"message", e.what()},
                                    {"phase", session::to_string(shared.engine.phase())}}));
      } catch (const std::exception& e) {
        reply(item.first, envelope("error", seq,
                                   {{"command", type},
                                    {"code", "InvalidArgument"},
                                    {"message", e.what()},
                                    {"phase", session::to_string(shared.engine.phase())}}));
      }
    }
  }

  void publish_loop() {
    using namespace std::chrono;
    auto every = [](double hz) { return duration_cast<clock_type::duration>(duration<double>(1.0 / hz)); };
    const auto plot_period = every(shared.options.plot_rate_hz);
    const auto pred_period = every(shared.options.prediction_rate_hz);
    const auto guide_period = every(shared.options.guide_rate_hz);
    auto next_plot = clock_type::now(), next_pred = next_plot, next_guide = next_plot;
    while (!stop) {
      auto now = clock_type::now();
      if (now >= next_plot) {
        next_plot = now + plot_period;
        auto frames = shared.engine.plot_channel().drain();
        if (!frames.empty()) {
          json chunks = json::array();
          for (const auto& f : frames) chunks.push_back(plot::to_json(plot::decimate_for_plot(f)));
          ++shared.plot_messages;
          broadcast("plot",
                    {{"chunks", std::move(chunks)},
                     {"dropped", shared.engine.plot_channel().dropped()},
                     {"client_drops", shared.client_drops.load()}},
                    true);
        }
      }
      std::optional<json> pred, guide;
      {
        std::lock_guard lock(latest_mu);
        if (now >= next_pred && latest_prediction) {
          pred.swap(latest_prediction);
          next_pred = now + pred_period;
        }
        if (now >= next_guide && latest_guide) {
          guide.swap(latest_guide);
          next_guide = now + guide_period;
        }
      }
      if (pred) broadcast("prediction", std::move(*pred), true);
      if (guide) broadcast("guide", std::move(*guide), true);
      std::this_thread::sleep_for(milliseconds(2));
    }
  }
};

Gateway::Gateway(session::Orchestrator& engine, GatewayOptions options)
    : impl_(std::make_unique<Impl>(engine, std::move(options))) {
  impl_->subscription = engine.subscribe([impl = impl_.get()](const session::Event& e) {
    if (!impl->stop) impl->on_event(e);
  });
}

Gateway::~Gateway() {
  stop();
  impl_->shared.engine.unsubscribe(impl_->subscription);
}

void Gateway::start() {
  auto& im = *impl_;
  beast::error_code ec;
  auto addr = asio::ip::make_address(im.shared.options.bind.host == "localhost" ? "127.0.0.1"
                                                                                : im.shared.options.bind.host,
                                     ec);
  if (ec) throw Error(Errc::InvalidArgument, "bad bind address " + im.shared.options.bind.host);
  tcp::endpoint ep{addr, im.shared.options.bind.port};
  im.acceptor.open(ep.protocol(), ec);
  if (!ec) im.acceptor.set_option(asio::socket_base::reuse_address(true), ec);
  if (!ec) im.acceptor.bind(ep, ec);
  if (!ec) im.acceptor.listen(asio::socket_base::max_listen_connections, ec);
  if (ec) {
    throw Error(Errc::PortInUse, "cannot listen on " + im.shared.options.bind.host + ":" +
                                     std::to_string(im.shared.options.bind.port) + ": " + ec.message());
  }
  im.port = im.acceptor.local_endpoint().port();
  im.accept();
  im.io_thread = std::thread([&im] { im.ioc.run(); });
  im.cmd_thread = std::thread([&im] { im.command_loop(); });
  im.publish_thread = std::thread([&im] { im.publish_loop(); });
}

void Gateway::stop() {
  if (!impl_) return;
  auto& im = *impl_;
  im.stop = true;
  {
    std::lock_guard lock(im.shared.cmd_mu);
    im.shared.stopping = true;
  }
  im.shared.cmd_cv.notify_all();
  if (im.cmd_thread.joinable()) im.cmd_thread.join();
  if (im.publish_thread.joinable()) im.publish_thread.join();
  if (im.io_thread.joinable()) {
    std::promise<void> closed;
    asio::post(im.ioc, [&im, &closed] {
      beast::error_code ec;
      im.acceptor.close(ec);
      std::vector<std::shared_ptr<WsSession>> all;
      {
        std::lock_guard lock(im.shared.sessions_mu);
        all.assign(im.shared.sessions.begin(), im.shared.sessions.end());
      }
      for (auto& s : all) s->close();
      closed.set_value();
    });
    closed.get_future().wait();
    im.ioc.stop();
    im.io_thread.join();
  }
}

std::uint16_t Gateway::port() const noexcept { return impl_->port; }

GatewayStats Gateway::stats() const { return impl_->stats(); }

}  // namespace myo::gateway

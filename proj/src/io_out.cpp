#include "myo/io_out.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstring>

#include "myo/bytes.hpp"
#include "myo/error.hpp"

namespace myo::out {

namespace {

constexpr std::uint8_t kHandMagic[4] = {'M', 'G', 'H', '1'};
constexpr std::uint8_t kCursorMagic[4] = {'M', 'G', 'C', '1'};
constexpr std::size_t kMaxSendTimes = 1 << 16;

}  // namespace

std::string to_string(OutputKind kind) {
  switch (kind) {
    case OutputKind::VirtualHand: return "virtual_hand";
    case OutputKind::Cursor2d: return "cursor_2d";
    case OutputKind::Null: return "null";
  }
  return "null";
}

OutputKind parse_kind(std::string_view text) {
  if (text == "virtual_hand") return OutputKind::VirtualHand;
  if (text == "cursor_2d") return OutputKind::Cursor2d;
  if (text == "null") return OutputKind::Null;
  throw Error(Errc::InvalidArgument, "unknown output kind '" + std::string(text) + "'");
}

void OutputTarget::validate() const {
  if (!(rate_hz > 0.0)) throw Error(Errc::InvalidArgument, "output rate_hz must be positive");
}

HandDatagram encode_hand(const kin::HandState& state, std::uint64_t t_us) noexcept {
  HandDatagram d{};
  std::memcpy(d.data(), kHandMagic, 4);
  bytes::put_le(d.data() + 4, t_us);
  for (std::size_t k = 0; k < kin::kHandDims; ++k) {
    bytes::put_f32(d.data() + 12 + 4 * k, static_cast<float>(state[k]));
  }
  return d;
}

std::optional<HandMessage> parse_hand(std::span<const std::uint8_t> data) noexcept {
  if (data.size() != kHandDatagramBytes || std::memcmp(data.data(), kHandMagic, 4) != 0) return std::nullopt;
  HandMessage m;
  m.t_us = bytes::get_le<std::uint64_t>(data.data() + 4);
  for (std::size_t k = 0; k < kin::kHandDims; ++k) m.state[k] = bytes::get_f32(data.data() + 12 + 4 * k);
  return m;
}

CursorDatagram encode_cursor(const CursorState& c, std::uint64_t t_us) noexcept {
  CursorDatagram d{};
  std::memcpy(d.data(), kCursorMagic, 4);
  bytes::put_le(d.data() + 4, t_us);
  bytes::put_f32(d.data() + 12, static_cast<float>(c.x));
  bytes::put_f32(d.data() + 16, static_cast<float>(c.y));
  return d;
}

std::optional<std::pair<std::uint64_t, CursorState>> parse_cursor(std::span<const std::uint8_t> data) noexcept {
  if (data.size() != kCursorDatagramBytes || std::memcmp(data.data(), kCursorMagic, 4) != 0) return std::nullopt;
  return std::pair{bytes::get_le<std::uint64_t>(data.data() + 4),
                   CursorState{bytes::get_f32(data.data() + 12), bytes::get_f32(data.data() + 16)}};
}

CursorState map_cursor(std::string_view class_id, double a) {
  if (class_id == kin::kRest) return {0.0, 0.0};
  if (class_id == "inversion") return {-a, 0.0};
  if (class_id == "eversion") return {a, 0.0};
  if (class_id == "dorsiflexion") return {0.0, a};
  if (class_id == "plantarflexion") return {0.0, -a};
  throw Error(Errc::UnknownClass, "no cursor direction for class '" + std::string(class_id) + "'");
}

Interpolator::Interpolator(double duration_s, kin::HandState initial)
    : duration_s_(duration_s), from_(initial), current_(initial), target_(initial) {}

void Interpolator::set_target(const kin::HandState& target) {
  if (target == target_) return;
  from_ = current_;
  target_ = target;
  elapsed_ = 0.0;
}

kin::HandState Interpolator::step(double dt) {
  elapsed_ += std::max(dt, 0.0);
  double f = duration_s_ > 0.0 ? std::min(elapsed_ / duration_s_, 1.0) : 1.0;
  for (std::size_t k = 0; k < kin::kHandDims; ++k) {
    current_[k] = f >= 1.0 ? target_[k] : from_[k] + (target_[k] - from_[k]) * f;
  }
  return current_;
}

UdpSender::UdpSender(OutputTarget target, const LatestCell<OutputSample>& cell, double interp_s)
    : target_(std::move(target)), cell_(cell), interp_s_(interp_s) {
  target_.validate();
  if (target_.kind != OutputKind::Null) socket_ = net::UdpSocket::open();
}

UdpSender::~UdpSender() { stop(); }

void UdpSender::start() {
  if (thread_.joinable()) return;
  stop_ = false;
  thread_ = std::thread([this] { run(); });
}

void UdpSender::stop() {
  stop_ = true;
  if (thread_.joinable()) thread_.join();
}

std::vector<std::int64_t> UdpSender::send_times_us() const {
  std::lock_guard lock(times_mu_);
  return times_;
}

void UdpSender::run() {
  using clock = std::chrono::steady_clock;
  const auto period = std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(1.0 / target_.rate_hz));
  const double dt = 1.0 / target_.rate_hz;
  Interpolator interp(interp_s_, cell_.load().state);
  auto next = clock::now();
  while (!stop_) {
    std::this_thread::sleep_until(next);
    auto now = clock::now();
    auto sample = cell_.load();
    kin::HandState state = sample.state;
    if (interp_s_ > 0.0) {
      interp.set_target(sample.state);
      state = interp.step(dt);
    }
    bool ok = true;
    if (target_.kind == OutputKind::VirtualHand) {
      auto d = encode_hand(state, sample.t_us);
      ok = socket_->send_to(target_.address, d);
    } else if (target_.kind == OutputKind::Cursor2d) {
      auto d = encode_cursor({sample.cursor_x, sample.cursor_y}, sample.t_us);
      ok = socket_->send_to(target_.address, d);
    }
    if (!ok) {
      if (errors_++ == 0) spdlog::warn("udp send to {}:{} failed", target_.address.host, target_.address.port);
    }
    ++sent_;
    {
      std::lock_guard lock(times_mu_);
      if (times_.size() == kMaxSendTimes) times_.erase(times_.begin(), times_.begin() + kMaxSendTimes / 2);
      times_.push_back(std::chrono::duration_cast<std::chrono::microseconds>(now.time_since_epoch()).count());
    }
    next += period;
    if (next < now) {
      // fell behind: skip the missed ticks
      auto missed = (now - next) / period + 1;
      next += missed * period;
    }
  }
}

}  // namespace myo::out

#pragma once

#include <array>
#include <atomic>
#include <bit>
#include <chrono>
#include <cstdint>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <type_traits>
#include <vector>

#include "myo/kinematics.hpp"
#include "myo/net.hpp"

namespace myo::out {

enum class OutputKind { VirtualHand, Cursor2d, Null };

std::string to_string(OutputKind kind);
// "virtual_hand", "cursor_2d" or "null". Throws Error{InvalidArgument}.
OutputKind parse_kind(std::string_view text);

struct OutputTarget {
  OutputKind kind = OutputKind::Null;
  net::Endpoint address{"127.0.0.1", 5570};
  double rate_hz = 32.0;

  // Throws Error{InvalidArgument} unless rate_hz > 0.
  void validate() const;
};

inline constexpr std::size_t kHandDatagramBytes = 48;
inline constexpr std::size_t kCursorDatagramBytes = 20;

using HandDatagram = std::array<std::uint8_t, kHandDatagramBytes>;
using CursorDatagram = std::array<std::uint8_t, kCursorDatagramBytes>;

// "MGH1" + t_us (u64 LE) + 9 x f32 LE.
HandDatagram encode_hand(const kin::HandState& state, std::uint64_t t_us) noexcept;

struct HandMessage {
  std::uint64_t t_us = 0;
  std::array<float, kin::kHandDims> state{};
};
std::optional<HandMessage> parse_hand(std::span<const std::uint8_t> data) noexcept;

struct CursorState {
  double x = 0.0;
  double y = 0.0;
};

// "MGC1" + t_us (u64 LE) + x, y as f32 LE.
CursorDatagram encode_cursor(const CursorState& c, std::uint64_t t_us) noexcept;
std::optional<std::pair<std::uint64_t, CursorState>> parse_cursor(std::span<const std::uint8_t> data) noexcept;

// rest -> (0,0), inversion/eversion on x, dorsiflexion/plantarflexion on y.
// Throws Error{UnknownClass}.
CursorState map_cursor(std::string_view class_id, double activation = 1.0);

// Linear transition toward the latest target. Retargeting restarts from the
// state last emitted, so the output never jumps.
class Interpolator {
 public:
  explicit Interpolator(double duration_s = 0.25, kin::HandState initial = {});

  void set_target(const kin::HandState& target);
  kin::HandState step(double dt);

  const kin::HandState& current() const noexcept { return current_; }
  const kin::HandState& target() const noexcept { return target_; }
  double duration() const noexcept { return duration_s_; }

 private:
  double duration_s_;
  kin::HandState from_{};
  kin::HandState current_{};
  kin::HandState target_{};
  double elapsed_ = 0.0;
};

// Seqlock cell: one writer, any number of readers, nobody blocks the
// writer. T must be trivially copyable and a whole number of 8-byte words.
template <typename T>
class LatestCell {
  static_assert(std::is_trivially_copyable_v<T> && sizeof(T) % 8 == 0);
  static constexpr std::size_t kWords = sizeof(T) / 8;

 public:
  LatestCell() { store(T{}); }

  void store(const T& value) noexcept {
    auto words = std::bit_cast<std::array<std::uint64_t, kWords>>(value);
    auto v = version_.load(std::memory_order_relaxed);
    version_.store(v + 1, std::memory_order_relaxed);
    std::atomic_thread_fence(std::memory_order_release);
    for (std::size_t i = 0; i < kWords; ++i) words_[i].store(words[i], std::memory_order_relaxed);
    version_.store(v + 2, std::memory_order_release);
  }

  T load() const noexcept {
    std::array<std::uint64_t, kWords> words;
    for (;;) {
      auto v0 = version_.load(std::memory_order_acquire);
      if (v0 & 1) continue;
      for (std::size_t i = 0; i < kWords; ++i) words[i] = words_[i].load(std::memory_order_relaxed);
      std::atomic_thread_fence(std::memory_order_acquire);
      if (version_.load(std::memory_order_relaxed) == v0) return std::bit_cast<T>(words);
    }
  }

  // Number of completed stores.
  std::uint64_t version() const noexcept { return version_.load(std::memory_order_acquire) / 2; }

 private:
  std::atomic<std::uint64_t> version_{0};
  std::array<std::atomic<std::uint64_t>, kWords> words_{};
};

struct OutputSample {
  std::uint64_t t_us = 0;
  kin::HandState state{};
  double cursor_x = 0.0;
  double cursor_y = 0.0;
};

// Sends the cell's newest sample at a fixed wall-clock rate. Missed ticks
// are skipped rather than bunched.
class UdpSender {
 public:
  UdpSender(OutputTarget target, const LatestCell<OutputSample>& cell, double interp_s = 0.0);
  ~UdpSender();
  UdpSender(const UdpSender&) = delete;
  UdpSender& operator=(const UdpSender&) = delete;

  void start();
  void stop();

  std::uint64_t sent() const noexcept { return sent_.load(); }
  std::uint64_t send_errors() const noexcept { return errors_.load(); }
  // Wall-clock send instants (steady clock, microseconds), newest last.
  std::vector<std::int64_t> send_times_us() const;
  const OutputTarget& target() const noexcept { return target_; }

 private:
  void run();

  OutputTarget target_;
  const LatestCell<OutputSample>& cell_;
  double interp_s_;
  std::optional<net::UdpSocket> socket_;
  std::thread thread_;
  std::atomic<bool> stop_{false};
  std::atomic<std::uint64_t> sent_{0};
  std::atomic<std::uint64_t> errors_{0};
  mutable std::mutex times_mu_;
  std::vector<std::int64_t> times_;
};

}  // namespace myo::out

#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "myo/net.hpp"

namespace myo {

inline constexpr std::size_t kChannels = 32;
inline constexpr std::size_t kSamplesPerFrame = 18;
inline constexpr std::size_t kFrameHeaderBytes = 1 + 4 + 8;
inline constexpr std::size_t kFrameBytes = kFrameHeaderBytes + kChannels * kSamplesPerFrame * 2;
inline constexpr std::uint8_t kFrameMagic = 0xE7;
inline constexpr std::size_t kDefaultBufferFrames = 20;

static_assert(kFrameBytes == 1165);

struct StreamConfig {
  double sample_rate_hz = 2000.0;
  std::size_t channels = kChannels;
  std::size_t samples_per_frame = kSamplesPerFrame;
  int adc_bits = 16;
  double gain = 4.0;

  double frame_rate_hz() const noexcept { return sample_rate_hz / static_cast<double>(samples_per_frame); }
  std::uint64_t frame_period_us() const noexcept {
    return static_cast<std::uint64_t>(1e6 * static_cast<double>(samples_per_frame) / sample_rate_hz + 0.5);
  }
};

// One amplifier emission, channel-major.
struct EmgFrame {
  std::uint32_t seq = 0;
  std::uint64_t t_us = 0;
  std::array<std::int16_t, kChannels * kSamplesPerFrame> samples{};

  std::int16_t& at(std::size_t channel, std::size_t sample) noexcept {
    return samples[channel * kSamplesPerFrame + sample];
  }
  std::int16_t at(std::size_t channel, std::size_t sample) const noexcept {
    return samples[channel * kSamplesPerFrame + sample];
  }

  bool operator==(const EmgFrame&) const = default;
};

using FrameBytes = std::array<std::uint8_t, kFrameBytes>;

FrameBytes encode_frame(const EmgFrame& frame) noexcept;
void encode_frame(const EmgFrame& frame, std::span<std::uint8_t, kFrameBytes> out) noexcept;

enum class DecodeStatus { Ok, BadMagic, Truncated };

struct DecodeResult {
  DecodeStatus status = DecodeStatus::Truncated;
  EmgFrame frame;
};

// Decodes one frame from the front of `bytes`. On success exactly kFrameBytes
// are consumed by the caller.
DecodeResult decode_frame(std::span<const std::uint8_t> bytes) noexcept;

// Incremental parser over a byte stream split at arbitrary positions. On a
// bad magic byte it drops input until the next 0xE7.
class FrameParser {
 public:
  void feed(std::span<const std::uint8_t> data);
  std::optional<EmgFrame> next();

  std::size_t buffered() const noexcept { return pending_.size() - head_; }
  std::uint64_t resync_bytes() const noexcept { return resync_bytes_; }

 private:
  void compact();

  std::vector<std::uint8_t> pending_;
  std::size_t head_ = 0;
  std::uint64_t resync_bytes_ = 0;
};

// 32 x T matrix of counts widened to double, channel-major.
class SignalMatrix {
 public:
  SignalMatrix() = default;
  SignalMatrix(std::size_t channels, std::size_t samples)
      : channels_(channels), samples_(samples), data_(channels * samples, 0.0) {}

  std::size_t channels() const noexcept { return channels_; }
  std::size_t samples() const noexcept { return samples_; }
  double& operator()(std::size_t c, std::size_t t) noexcept { return data_[c * samples_ + t]; }
  double operator()(std::size_t c, std::size_t t) const noexcept { return data_[c * samples_ + t]; }
  std::span<const double> row(std::size_t c) const noexcept {
    return {data_.data() + c * samples_, samples_};
  }
  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  bool operator==(const SignalMatrix&) const = default;

 private:
  std::size_t channels_ = 0;
  std::size_t samples_ = 0;
  std::vector<double> data_;
};

enum class PushStatus { Appended, GapFlushed };

// Rolling window of the newest `capacity` contiguous frames. A seq
// discontinuity flushes the window so no feature spans a gap.
class FrameBuffer {
 public:
  explicit FrameBuffer(std::size_t capacity = kDefaultBufferFrames,
                       std::uint64_t jitter_tolerance_us = 3000,
                       std::uint64_t frame_period_us = 9000);

  PushStatus push(const EmgFrame& frame);
  void clear() noexcept;

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t size() const noexcept { return count_; }
  bool full() const noexcept { return count_ == capacity_; }
  bool empty() const noexcept { return count_ == 0; }
  // 0 is the oldest frame.
  const EmgFrame& operator[](std::size_t i) const noexcept {
    return frames_[(head_ + i) % capacity_];
  }
  const EmgFrame& newest() const noexcept { return (*this)[count_ - 1]; }
  const EmgFrame& oldest() const noexcept { return (*this)[0]; }
  std::size_t span_samples() const noexcept { return count_ * kSamplesPerFrame; }

  std::uint64_t gaps() const noexcept { return gaps_; }
  std::uint64_t jitter_warnings() const noexcept { return jitter_warnings_; }

  // Channel-major concatenation, oldest first. Throws Error{NotFull}.
  SignalMatrix concat() const;

 private:
  std::size_t capacity_;
  std::uint64_t jitter_tolerance_us_;
  std::uint64_t frame_period_us_;
  std::vector<EmgFrame> frames_;
  std::size_t head_ = 0;
  std::size_t count_ = 0;
  std::optional<std::uint32_t> last_seq_;
  std::optional<std::uint64_t> last_t_us_;
  std::uint64_t gaps_ = 0;
  std::uint64_t jitter_warnings_ = 0;
};

// Anything that yields amplifier frames: a TCP device or an in-process generator.
class FrameSource {
 public:
  virtual ~FrameSource() = default;
  // nullopt on timeout. Throws Error{DeviceLost} when the source is gone.
  virtual std::optional<EmgFrame> next(std::chrono::milliseconds timeout) = 0;
  // Unblocks a pending next() from another thread.
  virtual void interrupt() noexcept {}
  // When the bytes of the frame last returned by next() arrived.
  std::chrono::steady_clock::time_point received_at() const noexcept { return received_at_; }

 protected:
  std::chrono::steady_clock::time_point received_at_{};
};

// TCP client for the amplifier wire format.
class TcpFrameSource final : public FrameSource {
 public:
  explicit TcpFrameSource(const net::Endpoint& device, int recv_buffer_bytes = 0);

  std::optional<EmgFrame> next(std::chrono::milliseconds timeout) override;
  void interrupt() noexcept override { stream_.shutdown(); }

  std::uint64_t resync_bytes() const noexcept { return parser_.resync_bytes(); }

 private:
  net::TcpStream stream_;
  FrameParser parser_;
  std::vector<std::uint8_t> scratch_;
};

}  // namespace myo

#include "myo/proto.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>

#include "myo/bytes.hpp"
#include "myo/error.hpp"

namespace myo {

void encode_frame(const EmgFrame& frame, std::span<std::uint8_t, kFrameBytes> out) noexcept {
  out[0] = kFrameMagic;
  bytes::put_le(out.data() + 1, frame.seq);
  bytes::put_le(out.data() + 5, frame.t_us);
  std::uint8_t* p = out.data() + kFrameHeaderBytes;
  for (std::int16_t s : frame.samples) {
    bytes::put_le(p, s);
    p += 2;
  }
}

FrameBytes encode_frame(const EmgFrame& frame) noexcept {
  FrameBytes out;
  encode_frame(frame, out);
  return out;
}

DecodeResult decode_frame(std::span<const std::uint8_t> in) noexcept {
  DecodeResult r;
  if (!in.empty() && in[0] != kFrameMagic) {
    r.status = DecodeStatus::BadMagic;
    return r;
  }
  if (in.size() < kFrameBytes) {
    r.status = DecodeStatus::Truncated;
    return r;
  }
  r.frame.seq = bytes::get_le<std::uint32_t>(in.data() + 1);
  r.frame.t_us = bytes::get_le<std::uint64_t>(in.data() + 5);
  const std::uint8_t* p = in.data() + kFrameHeaderBytes;
  for (auto& s : r.frame.samples) {
    s = bytes::get_le<std::int16_t>(p);
    p += 2;
  }
  r.status = DecodeStatus::Ok;
  return r;
}

void FrameParser::feed(std::span<const std::uint8_t> data) {
  compact();
  pending_.insert(pending_.end(), data.begin(), data.end());
}

void FrameParser::compact() {
  if (head_ == 0) return;
  if (head_ >= pending_.size()) {
    pending_.clear();
  } else {
    pending_.erase(pending_.begin(), pending_.begin() + static_cast<std::ptrdiff_t>(head_));
  }
  head_ = 0;
}

std::optional<EmgFrame> FrameParser::next() {
  for (;;) {
    std::span<const std::uint8_t> view(pending_.data() + head_, pending_.size() - head_);
    if (view.empty()) return std::nullopt;
    auto r = decode_frame(view);
    switch (r.status) {
      case DecodeStatus::Ok:
        head_ += kFrameBytes;
        return r.frame;
      case DecodeStatus::Truncated:
        return std::nullopt;
      case DecodeStatus::BadMagic: {
        auto it = std::find(view.begin() + 1, view.end(), kFrameMagic);
        auto skipped = static_cast<std::size_t>(it - view.begin());
        resync_bytes_ += skipped;
        head_ += skipped;
        break;
      }
    }
  }
}

FrameBuffer::FrameBuffer(std::size_t capacity, std::uint64_t jitter_tolerance_us,
                         std::uint64_t frame_period_us)
    : capacity_(capacity),
      jitter_tolerance_us_(jitter_tolerance_us),
      frame_period_us_(frame_period_us),
      frames_(capacity) {
  if (capacity == 0) throw Error(Errc::InvalidArgument, "buffer capacity must be positive");
}

PushStatus FrameBuffer::push(const EmgFrame& frame) {
  PushStatus status = PushStatus::Appended;
  if (last_seq_ && frame.seq != static_cast<std::uint32_t>(*last_seq_ + 1)) {
    spdlog::warn("GapDetected: seq {} -> {}, flushing {} buffered frames", *last_seq_, frame.seq,
                 count_);
    ++gaps_;
    clear();
    status = PushStatus::GapFlushed;
  } else if (last_t_us_) {
    auto delta = frame.t_us - *last_t_us_;
    auto dev = delta > frame_period_us_ ? delta - frame_period_us_ : frame_period_us_ - delta;
    if (frame.t_us < *last_t_us_ || dev > jitter_tolerance_us_) ++jitter_warnings_;
  }
  last_seq_ = frame.seq;
  last_t_us_ = frame.t_us;

  if (count_ < capacity_) {
    frames_[(head_ + count_) % capacity_] = frame;
    ++count_;
  } else {
    frames_[head_] = frame;
    head_ = (head_ + 1) % capacity_;
  }
  return status;
}

void FrameBuffer::clear() noexcept {
  head_ = 0;
  count_ = 0;
}

SignalMatrix FrameBuffer::concat() const {
  if (!full()) throw Error(Errc::NotFull, "frame buffer holds " + std::to_string(count_) + "/" +
                                              std::to_string(capacity_) + " frames");
  SignalMatrix m(kChannels, capacity_ * kSamplesPerFrame);
  for (std::size_t f = 0; f < capacity_; ++f) {
    const auto& fr = (*this)[f];
    for (std::size_t c = 0; c < kChannels; ++c) {
      for (std::size_t s = 0; s < kSamplesPerFrame; ++s) {
        m(c, f * kSamplesPerFrame + s) = fr.at(c, s);
      }
    }
  }
  return m;
}

TcpFrameSource::TcpFrameSource(const net::Endpoint& device, int recv_buffer_bytes)
    : stream_(net::TcpStream::connect(device)), scratch_(64 * 1024) {
  if (recv_buffer_bytes > 0) stream_.set_recv_buffer(recv_buffer_bytes);
}

std::optional<EmgFrame> TcpFrameSource::next(std::chrono::milliseconds timeout) {
  if (auto f = parser_.next()) return f;
  try {
    auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
      auto now = std::chrono::steady_clock::now();
      auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now);
      if (remaining.count() < 0) remaining = std::chrono::milliseconds(0);
      std::size_t n = stream_.read_some(scratch_, remaining);
      if (n == 0) return std::nullopt;
      received_at_ = std::chrono::steady_clock::now();
      parser_.feed({scratch_.data(), n});
      if (auto f = parser_.next()) return f;
    }
  } catch (const Error& e) {
    throw Error(Errc::DeviceLost, std::string("device stream lost: ") + e.what());
  }
}

}  // namespace myo

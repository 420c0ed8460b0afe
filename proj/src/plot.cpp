#include "myo/plot.hpp"

#include <algorithm>

namespace myo::plot {

PlotChunk decimate_for_plot(const EmgFrame& frame) noexcept {
  PlotChunk chunk;
  chunk.seq = frame.seq;
  chunk.t_us = frame.t_us;
  constexpr std::size_t half = kSamplesPerFrame / 2;
  for (std::size_t c = 0; c < kChannels; ++c) {
    for (std::size_t h = 0; h < 2; ++h) {
      std::size_t lo = h * half, hi = h * half;
      for (std::size_t s = h * half; s < (h + 1) * half; ++s) {
        if (frame.at(c, s) < frame.at(c, lo)) lo = s;
        if (frame.at(c, s) > frame.at(c, hi)) hi = s;
      }
      auto a = std::min(lo, hi), b = std::max(lo, hi);
      chunk.channels[c][2 * h] = static_cast<float>(frame.at(c, a));
      chunk.channels[c][2 * h + 1] = static_cast<float>(frame.at(c, b));
    }
  }
  return chunk;
}

nlohmann::json to_json(const PlotChunk& chunk) {
  nlohmann::json ch = nlohmann::json::array();
  for (const auto& c : chunk.channels) ch.push_back(c);
  return {{"seq", chunk.seq}, {"t_us", chunk.t_us}, {"channels", std::move(ch)}};
}

void PlotChannel::push(const EmgFrame& frame) {
  std::lock_guard lock(mu_);
  ++pushed_;
  if (capacity_ == 0) {
    ++dropped_;
    return;
  }
  if (frames_.size() >= capacity_) {
    frames_.pop_front();
    ++dropped_;
  }
  frames_.push_back(frame);
}

std::vector<EmgFrame> PlotChannel::drain(std::size_t max) {
  std::lock_guard lock(mu_);
  std::size_t n = std::min(max, frames_.size());
  std::vector<EmgFrame> out(frames_.begin(), frames_.begin() + static_cast<std::ptrdiff_t>(n));
  frames_.erase(frames_.begin(), frames_.begin() + static_cast<std::ptrdiff_t>(n));
  return out;
}

std::uint64_t PlotChannel::dropped() const {
  std::lock_guard lock(mu_);
  return dropped_;
}

std::uint64_t PlotChannel::pushed() const {
  std::lock_guard lock(mu_);
  return pushed_;
}

void PlotChannel::set_capacity(std::size_t capacity) {
  std::lock_guard lock(mu_);
  capacity_ = capacity;
  while (frames_.size() > capacity_) {
    frames_.pop_front();
    ++dropped_;
  }
}

}  // namespace myo::plot

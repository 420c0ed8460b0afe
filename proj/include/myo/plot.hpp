#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <mutex>
#include <vector>

#include <json.hpp>

#include "myo/proto.hpp"

namespace myo::plot {

inline constexpr std::size_t kPointsPerFrame = 4;  // min/max pairs over 9-sample halves

// Per channel: [min, max] of samples 0..8 then [min, max] of samples 9..17,
// each pair written in time order of the two extremes.
struct PlotChunk {
  std::uint32_t seq = 0;
  std::uint64_t t_us = 0;
  std::array<std::array<float, kPointsPerFrame>, kChannels> channels{};
};

PlotChunk decimate_for_plot(const EmgFrame& frame) noexcept;
nlohmann::json to_json(const PlotChunk& chunk);

// Bounded hand-off from ingestion to the plot consumer. A full channel
// discards its oldest frame; the producer never waits.
class PlotChannel {
 public:
  explicit PlotChannel(std::size_t capacity = 64) : capacity_(capacity) {}

  void push(const EmgFrame& frame);
  std::vector<EmgFrame> drain(std::size_t max = SIZE_MAX);
  std::uint64_t dropped() const;
  std::uint64_t pushed() const;
  void set_capacity(std::size_t capacity);

 private:
  mutable std::mutex mu_;
  std::size_t capacity_;
  std::deque<EmgFrame> frames_;
  std::uint64_t dropped_ = 0;
  std::uint64_t pushed_ = 0;
};

}  // namespace myo::plot

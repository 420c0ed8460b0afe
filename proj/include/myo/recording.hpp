#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "myo/kinematics.hpp"
#include "myo/proto.hpp"

namespace myo {

inline constexpr std::uint32_t kSessionSchemaVersion = 1;
inline constexpr double kGuideRateHz = 60.0;

struct GuideSample {
  std::uint64_t t_us = 0;
  kin::HandState state{};  // values are f32-representable
  std::uint8_t movement = 0;  // index into the recording's catalog

  bool operator==(const GuideSample&) const = default;
};

// Rounds every component to the nearest f32, matching the on-disk precision.
kin::HandState quantize_f32(const kin::HandState& s) noexcept;

// Guide timestamp j of a segment starting at start_t_us (60 Hz grid).
std::uint64_t guide_time_us(std::uint64_t start_t_us, std::uint64_t j) noexcept;

struct Segment {
  std::string movement;
  std::vector<EmgFrame> frames;
  std::vector<GuideSample> guide;

  bool operator==(const Segment&) const = default;
};

struct SessionRecording {
  std::string session_id;
  std::string created_at;
  kin::Catalog catalog = kin::Catalog::defaults();
  StreamConfig stream;
  kin::GuideTiming timing;
  std::vector<Segment> segments;

  std::vector<std::string> movements() const;
  // Re-recording a movement replaces its earlier segment.
  void put_segment(Segment segment);
  const Segment* find(const std::string& movement) const noexcept;
  std::size_t frame_count() const noexcept;
};

bool operator==(const SessionRecording& a, const SessionRecording& b);

std::vector<std::uint8_t> serialize_session(const SessionRecording& rec);
// Throws Error{CorruptFile} or Error{SchemaVersionMismatch}.
SessionRecording deserialize_session(std::span<const std::uint8_t> data);

// Throws Error{DiskFull} when the write cannot complete.
void save_session(const SessionRecording& rec, const std::string& path);
SessionRecording load_session(const std::string& path);

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> data);

std::string utc_timestamp();

}  // namespace myo

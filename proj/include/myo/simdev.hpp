#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <deque>
#include <string>
#include <thread>
#include <vector>

#include "myo/kinematics.hpp"
#include "myo/net.hpp"
#include "myo/proto.hpp"
#include "myo/recording.hpp"

namespace myo::sim {

using Pattern = std::array<double, kChannels>;

struct SyntheticModel {
  std::map<std::string, Pattern> patterns;  // per movement, unit max
  double noise_floor = 50.0;                 // baseline RMS in counts
  double snr = 6.0;
  std::uint64_t seed = 1;
  // Electrodes without skin contact: floor noise scaled by noisy_gain.
  std::vector<std::size_t> noisy_channels;
  double noisy_gain = 20.0;

  // Throws Error{InvalidArgument} on a pattern without unit max or two
  // movements sharing an argmax channel.
  void validate() const;

  // One-hot patterns on well separated channels, one per movement.
  static SyntheticModel one_hot(const std::vector<std::string>& movements, double snr = 6.0,
                                double noise_floor = 50.0, std::uint64_t seed = 1);
  static std::size_t one_hot_channel(std::size_t movement_index) noexcept;
};

struct DriveSignal {
  std::string movement_id{kin::kRest};
  double activation = 0.0;
};

// Per channel zero-mean Gaussian noise with RMS
// noise_floor * (1 + snr * activation * pattern[c]); deterministic in
// (seed, t_us). Throws Error{UnknownMovement}.
EmgFrame synth_frame(const SyntheticModel& model, const DriveSignal& drive, std::uint32_t seq,
                     std::uint64_t t_us);
EmgFrame synth_frame(const SyntheticModel& model, const DriveSignal& drive, std::uint64_t t_us);

using DriveFn = std::function<DriveSignal(std::uint64_t t_us)>;

DriveFn rest_drive();
// A simulated participant that follows whatever guide is on display.
DriveFn follow(const kin::GuideBoard& board);

struct ScriptBlock {
  std::string movement;
  int repetitions = 4;
};

// JSON: {"timing": {...}, "lead_in_s": 0, "gap_s": 0, "blocks": [{"movement", "repetitions"}]}
struct SessionScript {
  kin::GuideTiming timing;
  double lead_in_s = 0.0;
  double gap_s = 0.0;
  std::vector<ScriptBlock> blocks;

  static SessionScript from_json(const nlohmann::json& j);
  static SessionScript load(const std::string& path);

  struct Span {
    std::string movement;
    std::uint64_t start_t_us;
    std::uint64_t end_t_us;
  };
  std::vector<Span> spans() const;
  std::uint64_t duration_us() const;
};

// Drives a scripted timeline; rest outside the blocks.
DriveFn script_drive(const SessionScript& script, const kin::Catalog& catalog);

// Synchronised EMG and 60 Hz guide for each movement (segment_s each, plus
// gap_s of rest between segments). Guide states are f32-quantised as on disk.
SessionRecording scripted_session(const SyntheticModel& model, const std::vector<std::string>& movements,
                                  const kin::GuideTiming& timing, double segment_s = 30.0,
                                  double gap_s = 0.0, const kin::Catalog& catalog = kin::Catalog::defaults());

// In-process frame source: generates frames on demand, optionally paced at
// the real frame rate.
class SyntheticSource final : public FrameSource {
 public:
  SyntheticSource(SyntheticModel model, DriveFn drive, bool realtime = false,
                  StreamConfig stream = {});

  std::optional<EmgFrame> next(std::chrono::milliseconds timeout) override;
  std::uint64_t frames() const noexcept { return seq_; }

 private:
  SyntheticModel model_;
  DriveFn drive_;
  bool realtime_;
  std::uint64_t period_us_;
  std::uint32_t seq_ = 0;
  std::chrono::steady_clock::time_point start_;
};

struct ServeOptions {
  net::Endpoint bind{"127.0.0.1", 5566};
  bool realtime = true;
  // Small socket buffers bound how far a non-realtime server runs ahead.
  int send_buffer_bytes = 0;
  // Replay mode: close the client after the last frame.
  bool replay_close_at_end = true;
};

// Serves the amplifier wire format to one client at a time; returns to
// accepting when the client goes away.
class SimServer {
 public:
  // Synthetic mode. Throws Error{PortInUse}.
  SimServer(SyntheticModel model, DriveFn drive, ServeOptions options);
  // Replay mode: emits the recorded frames verbatim.
  SimServer(std::vector<EmgFrame> recording, ServeOptions options);
  ~SimServer();
  SimServer(const SimServer&) = delete;
  SimServer& operator=(const SimServer&) = delete;

  void start();
  // Blocks until stop() is requested.
  void run();
  void stop();

  // Control messages processed by the serving loop between frames.
  void switch_drive(DriveFn drive);

  std::uint16_t port() const noexcept { return listener_.port(); }
  std::uint64_t frames_sent() const noexcept { return frames_sent_.load(); }
  std::uint64_t clients_served() const noexcept { return clients_.load(); }

 private:
  void serve_client(net::TcpStream& client);
  void drain_control();

  std::optional<SyntheticModel> model_;
  DriveFn drive_;
  std::vector<EmgFrame> replay_;
  ServeOptions options_;
  net::TcpListener listener_;
  std::thread thread_;
  std::atomic<bool> stop_{false};
  std::atomic<std::uint64_t> frames_sent_{0};
  std::atomic<std::uint64_t> clients_{0};
  std::mutex control_mu_;
  std::deque<DriveFn> control_;
};

}  // namespace myo::sim

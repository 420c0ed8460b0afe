#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "myo/session.hpp"

namespace myo::bench {

struct BenchOptions {
  double seconds = 10.0;
  double warmup_s = 1.0;
  int rounds = 1000;
  double snr = 6.0;
  std::uint64_t seed = 1;
  std::vector<std::string> movements{"thumb", "index", "middle"};
};

struct BenchResult {
  double seconds = 0.0;
  std::uint64_t frames = 0;
  std::uint64_t windows = 0;
  std::uint64_t seq_gaps = 0;
  double windows_per_s = 0.0;
  double train_s = 0.0;
  session::LatencyStats latency;

  nlohmann::json to_json() const;
};

// Serves a realtime simulated amplifier over loopback TCP, runs the live
// decoder on it and measures per-window processing from the arrival of the
// frame's bytes to the solver output.
BenchResult run_bench(const BenchOptions& options);

}  // namespace myo::bench

#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <thread>
#include <unistd.h>

#include "myo/proto.hpp"

namespace myo::test {

inline EmgFrame random_frame(std::mt19937_64& rng) {
  EmgFrame f;
  f.seq = static_cast<std::uint32_t>(rng());
  f.t_us = rng();
  std::uniform_int_distribution<int> d(-32768, 32767);
  for (auto& s : f.samples) s = static_cast<std::int16_t>(d(rng));
  return f;
}

inline EmgFrame frame_at(std::uint32_t seq, std::uint64_t period_us = 9000) {
  EmgFrame f;
  f.seq = seq;
  f.t_us = static_cast<std::uint64_t>(seq) * period_us;
  return f;
}

// Unique path under the system temp dir, removed on destruction.
class TempPath {
 public:
  explicit TempPath(const std::string& suffix) {
    static std::atomic<int> counter{0};
    path_ = (std::filesystem::temp_directory_path() /
             ("myo_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++) + suffix))
                .string();
  }
  ~TempPath() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
  const std::string& str() const noexcept { return path_; }

 private:
  std::string path_;
};

template <typename Pred>
bool eventually(Pred pred, std::chrono::milliseconds timeout) {
  auto deadline = std::chrono::steady_clock::now() + timeout;
  while (std::chrono::steady_clock::now() < deadline) {
    if (pred()) return true;
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
  }
  return pred();
}

}  // namespace myo::test

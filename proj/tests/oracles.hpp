#pragma once

// Straight-line reference implementations used to check the library.

#include <array>
#include <cmath>
#include <vector>

namespace myo::oracle {

// Electrode k sits at row k % 16, column k / 16. Rows wrap around the
// forearm, columns outside the 2-wide strip read zero.
// x is 32 x T channel-major.
inline std::array<double, 32> rms_features(const std::vector<double>& x, std::size_t T) {
  const double K[3][3] = {{0.0, 0.25, 0.0}, {0.25, 0.125, 0.25}, {0.0, 0.25, 0.0}};
  std::array<double, 32> out{};
  for (int k = 0; k < 32; ++k) {
    int r = k % 16;
    int c = k / 16;
    double sumsq = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      double acc = 0.0;
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          int rr = ((r + dr) % 16 + 16) % 16;
          int cc = c + dc;
          if (cc < 0 || cc > 1) continue;
          int ch = cc * 16 + rr;
          acc += K[dr + 1][dc + 1] * x[static_cast<std::size_t>(ch) * T + t];
        }
      }
      sumsq += acc * acc;
    }
    out[static_cast<std::size_t>(k)] = std::sqrt(sumsq / static_cast<double>(T));
  }
  return out;
}

}  // namespace myo::oracle

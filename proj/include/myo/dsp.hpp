#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "myo/proto.hpp"

namespace myo::dsp {

inline constexpr std::size_t kGridRows = 16;
inline constexpr std::size_t kGridCols = 2;

struct GridCell {
  std::size_t row = 0;
  std::size_t col = 0;
  bool operator==(const GridCell&) const = default;
};

// Channel -> electrode position on the bracelet. The default places channel k
// at (k mod 16, k div 16); hardware with another numbering supplies its own
// permutation.
class GridLayout {
 public:
  GridLayout();
  // cells[k] is the position of channel k; must be a bijection onto 16 x 2.
  explicit GridLayout(const std::array<GridCell, kChannels>& cells);

  GridCell cell(std::size_t channel) const noexcept { return cells_[channel]; }
  std::size_t channel(std::size_t row, std::size_t col) const noexcept {
    return channels_[row * kGridCols + col];
  }

 private:
  std::array<GridCell, kChannels> cells_{};
  std::array<std::size_t, kChannels> channels_{};
};

// 16 x 2 x T grid, stored [row][col][t].
class GridSignal {
 public:
  GridSignal() = default;
  explicit GridSignal(std::size_t samples)
      : samples_(samples), data_(kGridRows * kGridCols * samples, 0.0) {}

  std::size_t samples() const noexcept { return samples_; }
  double& operator()(std::size_t r, std::size_t c, std::size_t t) noexcept {
    return data_[(r * kGridCols + c) * samples_ + t];
  }
  double operator()(std::size_t r, std::size_t c, std::size_t t) const noexcept {
    return data_[(r * kGridCols + c) * samples_ + t];
  }

 private:
  std::size_t samples_ = 0;
  std::vector<double> data_;
};

// Grid with one row of circular padding above/below and one zero column
// either side: 18 x 4 x T. Index (r+1, c+1) holds grid cell (r, c).
class PaddedGrid {
 public:
  static constexpr std::size_t kRows = kGridRows + 2;
  static constexpr std::size_t kCols = kGridCols + 2;

  explicit PaddedGrid(std::size_t samples)
      : samples_(samples), data_(kRows * kCols * samples, 0.0) {}

  std::size_t samples() const noexcept { return samples_; }
  double& operator()(std::size_t r, std::size_t c, std::size_t t) noexcept {
    return data_[(r * kCols + c) * samples_ + t];
  }
  double operator()(std::size_t r, std::size_t c, std::size_t t) const noexcept {
    return data_[(r * kCols + c) * samples_ + t];
  }

 private:
  std::size_t samples_ = 0;
  std::vector<double> data_;
};

// (1/4) * [[0,1,0],[1,0.5,1],[0,1,0]]
inline constexpr std::array<std::array<double, 3>, 3> kSmoothingKernel{{
    {0.0, 0.25, 0.0},
    {0.25, 0.125, 0.25},
    {0.0, 0.25, 0.0},
}};

struct FeatureVector {
  std::array<double, kChannels> rms{};
  std::uint64_t t_us = 0;
};

// Throws Error{WrongShape} unless the matrix has 32 rows.
GridSignal to_grid(const SignalMatrix& signal, const GridLayout& layout = GridLayout{});
SignalMatrix from_grid(const GridSignal& grid, const GridLayout& layout = GridLayout{});

PaddedGrid pad_grid(const GridSignal& grid);

// Per time sample: (up + down + left + right + 0.5 * center) / 4 with rows
// wrapping and out-of-grid columns reading zero.
GridSignal spatial_filter(const GridSignal& grid);

// reshape -> pad -> convolve -> per-channel RMS over the whole window.
FeatureVector extract_features(const SignalMatrix& signal, const GridLayout& layout = GridLayout{});
// Throws Error{NotFull}.
FeatureVector extract_features(const FrameBuffer& buffer, const GridLayout& layout = GridLayout{});

}  // namespace myo::dsp

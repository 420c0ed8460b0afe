#include "myo/dsp.hpp"

#include <cmath>

#include "myo/error.hpp"

namespace myo::dsp {

GridLayout::GridLayout() {
  for (std::size_t k = 0; k < kChannels; ++k) {
    cells_[k] = {k % kGridRows, k / kGridRows};
    channels_[cells_[k].row * kGridCols + cells_[k].col] = k;
  }
}

GridLayout::GridLayout(const std::array<GridCell, kChannels>& cells) : cells_(cells) {
  std::array<bool, kChannels> seen{};
  for (std::size_t k = 0; k < kChannels; ++k) {
    const auto& c = cells_[k];
    if (c.row >= kGridRows || c.col >= kGridCols) {
      throw Error(Errc::InvalidArgument, "grid cell out of range for channel " + std::to_string(k));
    }
    std::size_t idx = c.row * kGridCols + c.col;
    if (seen[idx]) throw Error(Errc::InvalidArgument, "grid layout is not a bijection");
    seen[idx] = true;
    channels_[idx] = k;
  }
}

GridSignal to_grid(const SignalMatrix& signal, const GridLayout& layout) {
  if (signal.channels() != kChannels) {
    throw Error(Errc::WrongShape, "expected 32 channels, got " + std::to_string(signal.channels()));
  }
  const std::size_t T = signal.samples();
  GridSignal g(T);
  for (std::size_t k = 0; k < kChannels; ++k) {
    auto cell = layout.cell(k);
    auto src = signal.row(k);
    for (std::size_t t = 0; t < T; ++t) g(cell.row, cell.col, t) = src[t];
  }
  return g;
}

SignalMatrix from_grid(const GridSignal& grid, const GridLayout& layout) {
  const std::size_t T = grid.samples();
  SignalMatrix m(kChannels, T);
  for (std::size_t k = 0; k < kChannels; ++k) {
    auto cell = layout.cell(k);
    for (std::size_t t = 0; t < T; ++t) m(k, t) = grid(cell.row, cell.col, t);
  }
  return m;
}

PaddedGrid pad_grid(const GridSignal& grid) {
  const std::size_t T = grid.samples();
  PaddedGrid p(T);
  for (std::size_t pr = 0; pr < PaddedGrid::kRows; ++pr) {
    // padded row 0 is the last grid row, padded row 17 the first
    std::size_t src_row = (pr + kGridRows - 1) % kGridRows;
    for (std::size_t c = 0; c < kGridCols; ++c) {
      for (std::size_t t = 0; t < T; ++t) p(pr, c + 1, t) = grid(src_row, c, t);
    }
  }
  return p;
}

GridSignal spatial_filter(const GridSignal& grid) {
  const std::size_t T = grid.samples();
  GridSignal out(T);
  for (std::size_t r = 0; r < kGridRows; ++r) {
    const std::size_t up = (r + kGridRows - 1) % kGridRows;
    const std::size_t down = (r + 1) % kGridRows;
    for (std::size_t c = 0; c < kGridCols; ++c) {
      const std::size_t other = 1 - c;  // the only in-grid horizontal neighbour
      for (std::size_t t = 0; t < T; ++t) {
        out(r, c, t) = 0.25 * (grid(up, c, t) + grid(down, c, t) + grid(r, other, t)) +
                       0.125 * grid(r, c, t);
      }
    }
  }
  return out;
}

FeatureVector extract_features(const SignalMatrix& signal, const GridLayout& layout) {
  if (signal.channels() != kChannels) {
    throw Error(Errc::WrongShape, "expected 32 channels, got " + std::to_string(signal.channels()));
  }
  const std::size_t T = signal.samples();
  FeatureVector fv;
  if (T == 0) return fv;
  for (std::size_t r = 0; r < kGridRows; ++r) {
    const std::size_t up = (r + kGridRows - 1) % kGridRows;
    const std::size_t down = (r + 1) % kGridRows;
    for (std::size_t c = 0; c < kGridCols; ++c) {
      const std::size_t k = layout.channel(r, c);
      auto center = signal.row(k);
      auto above = signal.row(layout.channel(up, c));
      auto below = signal.row(layout.channel(down, c));
      auto side = signal.row(layout.channel(r, 1 - c));
      double acc = 0.0;
      for (std::size_t t = 0; t < T; ++t) {
        double v = 0.25 * (above[t] + below[t] + side[t]) + 0.125 * center[t];
        acc += v * v;
      }
      fv.rms[k] = std::sqrt(acc / static_cast<double>(T));
    }
  }
  return fv;
}

FeatureVector extract_features(const FrameBuffer& buffer, const GridLayout& layout) {
  auto fv = extract_features(buffer.concat(), layout);
  fv.t_us = buffer.newest().t_us;
  return fv;
}

}  // namespace myo::dsp

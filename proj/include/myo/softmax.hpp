#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace myo {

struct SoftmaxOutput {
  std::vector<double> probs;
  std::size_t argmax = 0;

  std::size_t n_classes() const noexcept { return probs.size(); }
};

// Numerically stable softmax; ties in argmax go to the lower class id.
SoftmaxOutput softmax(std::span<const double> scores);

}  // namespace myo

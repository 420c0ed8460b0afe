#pragma once

#include <cstddef>
#include <deque>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "myo/softmax.hpp"

namespace myo::conformal {

struct Config {
  double alpha = 0.1;
  std::size_t k_reg = 1;
  double lambda = 0.01;
  std::size_t window = 75;
  bool enabled = true;

  void validate() const;
  bool operator==(const Config&) const = default;
};

void to_json(nlohmann::json& j, const Config& c);
void from_json(const nlohmann::json& j, Config& c);

// Regularized adaptive prediction sets, deterministic variant.
struct RapsCalibration {
  double alpha = 0.1;
  std::size_t k_reg = 1;
  double lambda = 0.01;
  std::optional<double> q_hat;  // empty until calibrated
  std::size_t n_calibration = 0;

  bool calibrated() const noexcept { return q_hat.has_value(); }
};

// Probability mass of every class ranked at or above the true class, plus
// lambda * max(0, rank - k_reg) with 1-based rank. Throws Error{UnknownClass}.
double raps_score(const SoftmaxOutput& probs, std::size_t true_class, std::size_t k_reg, double lambda);

// The ceil((n+1)(1-alpha))-th smallest score, clipped to the largest.
// Throws Error{EmptyCalibration}.
double conformal_quantile(std::span<const double> scores, double alpha);
RapsCalibration calibrate(std::span<const double> scores, const Config& config);

struct PredictionSet {
  std::vector<std::size_t> labels;  // descending probability, never empty
  bool certain = false;             // singleton
  SoftmaxOutput probs;

  bool contains(std::size_t c) const noexcept;
};

// Classes whose RAPS score is within q_hat, and always the top class.
// Throws Error{NotCalibrated}.
PredictionSet predict_set(const SoftmaxOutput& probs, const RapsCalibration& cal);

// Descending-probability order; ties keep the lower class id first.
std::vector<std::size_t> rank_order(const SoftmaxOutput& probs);

// Majority vote over the most recent prediction sets.
class SolverWindow {
 public:
  explicit SolverWindow(std::size_t capacity = 75) : capacity_(capacity) {}

  // Pushes `set`. A certain set answers directly; otherwise each label is
  // counted once per set in the window and the most frequent wins, ties
  // going to the higher probability in `set`, then the lower class id.
  std::size_t solve(PredictionSet set);

  std::size_t size() const noexcept { return history_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }
  const std::deque<PredictionSet>& history() const noexcept { return history_; }
  void clear() noexcept { history_.clear(); }

 private:
  std::size_t capacity_;
  std::deque<PredictionSet> history_;
};

}  // namespace myo::conformal

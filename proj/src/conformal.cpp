#include "myo/conformal.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "myo/error.hpp"

namespace myo::conformal {

void Config::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(Errc::InvalidArgument, "conformal.alpha must be in (0, 1)");
  if (!(lambda >= 0.0)) throw Error(Errc::InvalidArgument, "conformal.lambda must be >= 0");
  if (window == 0) throw Error(Errc::InvalidArgument, "conformal.window must be positive");
}

void to_json(nlohmann::json& j, const Config& c) {
  j = {{"alpha", c.alpha}, {"k_reg", c.k_reg}, {"lambda", c.lambda}, {"window", c.window}, {"enabled", c.enabled}};
}

void from_json(const nlohmann::json& j, Config& c) {
  c.alpha = j.value("alpha", c.alpha);
  c.k_reg = j.value("k_reg", c.k_reg);
  c.lambda = j.value("lambda", c.lambda);
  c.window = j.value("window", c.window);
  c.enabled = j.value("enabled", c.enabled);
  c.validate();
}

std::vector<std::size_t> rank_order(const SoftmaxOutput& probs) {
  std::vector<std::size_t> order(probs.probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return probs.probs[a] > probs.probs[b]; });
  return order;
}

double raps_score(const SoftmaxOutput& probs, std::size_t true_class, std::size_t k_reg, double lambda) {
  if (true_class >= probs.probs.size()) {
    throw Error(Errc::UnknownClass, "class " + std::to_string(true_class) + " outside the softmax");
  }
  double mass = 0.0;
  std::size_t rank = 0;
  for (std::size_t c : rank_order(probs)) {
    mass += probs.probs[c];
    ++rank;
    if (c == true_class) break;
  }
  double penalty = lambda * static_cast<double>(rank > k_reg ? rank - k_reg : 0);
  return mass + penalty;
}

double conformal_quantile(std::span<const double> scores, double alpha) {
  if (scores.empty()) throw Error(Errc::EmptyCalibration, "no calibration scores");
  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  auto index = static_cast<std::size_t>(std::ceil((n + 1.0) * (1.0 - alpha) - 1e-12));
  index = std::clamp<std::size_t>(index, 1, sorted.size());
  return sorted[index - 1];
}

RapsCalibration calibrate(std::span<const double> scores, const Config& config) {
  config.validate();
  RapsCalibration cal;
  cal.alpha = config.alpha;
  cal.k_reg = config.k_reg;
  cal.lambda = config.lambda;
  cal.q_hat = conformal_quantile(scores, config.alpha);
  cal.n_calibration = scores.size();
  return cal;
}

bool PredictionSet::contains(std::size_t c) const noexcept {
  return std::find(labels.begin(), labels.end(), c) != labels.end();
}

PredictionSet predict_set(const SoftmaxOutput& probs, const RapsCalibration& cal) {
  if (!cal.calibrated()) throw Error(Errc::NotCalibrated, "RAPS calibration missing");
  PredictionSet set;
  set.probs = probs;
  double mass = 0.0;
  std::size_t rank = 0;
  for (std::size_t c : rank_order(probs)) {
    mass += probs.probs[c];
    ++rank;
    double score = mass + cal.lambda * static_cast<double>(rank > cal.k_reg ? rank - cal.k_reg : 0);
    // scores only grow with rank, so the first miss ends the set
    if (rank > 1 && score > *cal.q_hat) break;
    if (rank == 1 || score <= *cal.q_hat) set.labels.push_back(c);
  }
  set.certain = set.labels.size() == 1;
  return set;
}

std::size_t SolverWindow::solve(PredictionSet set) {
  if (history_.size() == capacity_) history_.pop_front();
  history_.push_back(std::move(set));
  const auto& newest = history_.back();
  if (newest.certain) return newest.labels.front();

  const std::size_t K = newest.probs.probs.size();
  std::vector<std::size_t> counts(K, 0);
  for (const auto& s : history_) {
    for (auto c : s.labels) {
      if (c < K) ++counts[c];
    }
  }
  std::size_t best = newest.labels.front();
  for (std::size_t c = 0; c < K; ++c) {
    if (counts[c] > counts[best] ||
        (counts[c] == counts[best] && newest.probs.probs[c] > newest.probs.probs[best]) ||
        (counts[c] == counts[best] && newest.probs.probs[c] == newest.probs.probs[best] && c < best)) {
      best = c;
    }
  }
  return best;
}

}  // namespace myo::conformal

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "myo/softmax.hpp"

namespace myo::gbdt {

// Dense row-major feature matrix.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  std::span<const double> row(std::size_t i) const noexcept { return {data.data() + i * cols, cols}; }
  std::span<double> row(std::size_t i) noexcept { return {data.data() + i * cols, cols}; }
};

struct Params {
  int n_rounds = 1000;
  int max_depth = 6;
  double learning_rate = 0.1;
  int n_bins = 64;
  double lambda_l2 = 1.0;
  double min_child_weight = 1.0;
  double min_split_gain = 1e-9;
  // 0 = pick from the machine; 1 = fully serial. The result does not depend on it.
  int threads = 0;

  bool operator==(const Params&) const = default;
};

struct GradPair {
  double g = 0.0;
  double h = 0.0;

  GradPair& operator+=(const GradPair& o) noexcept {
    g += o.g;
    h += o.h;
    return *this;
  }
  GradPair& operator-=(const GradPair& o) noexcept {
    g -= o.g;
    h -= o.h;
    return *this;
  }
};

// Quantile cut points per feature. bin(x) = number of cuts strictly below x,
// so x <= cuts[b] exactly when bin(x) <= b.
class BinMapper {
 public:
  static BinMapper fit(const FeatureMatrix& x, std::span<const std::size_t> rows, int n_bins);

  std::uint8_t bin(std::size_t feature, double value) const noexcept;
  std::size_t n_bins(std::size_t feature) const noexcept { return cuts_[feature].size() + 1; }
  std::size_t max_bins() const noexcept { return max_bins_; }
  double cut(std::size_t feature, std::size_t b) const noexcept { return cuts_[feature][b]; }
  std::size_t n_features() const noexcept { return cuts_.size(); }

 private:
  std::vector<std::vector<double>> cuts_;
  std::size_t max_bins_ = 1;
};

struct BinnedMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> bins;  // row-major

  static BinnedMatrix build(const FeatureMatrix& x, const BinMapper& mapper);
  const std::uint8_t* row(std::size_t i) const noexcept { return bins.data() + i * cols; }
};

struct SplitCandidate {
  int feature = -1;
  int bin = -1;
  double threshold = 0.0;
  double gain = 0.0;
  GradPair left;
  GradPair right;

  bool valid() const noexcept { return feature >= 0; }
};

double split_gain(const GradPair& left, const GradPair& right, double lambda) noexcept;

// Best histogram split over `rows`; invalid if nothing beats min_split_gain.
SplitCandidate find_best_split(const BinnedMatrix& binned, const BinMapper& mapper,
                               std::span<const GradPair> grads, std::span<const std::uint32_t> rows,
                               const Params& params);

struct TreeNode {
  std::int32_t feature = -1;  // -1 marks a leaf
  double threshold = 0.0;     // go left when x <= threshold
  std::int32_t left = -1;
  std::int32_t right = -1;
  double value = 0.0;         // leaf output, learning rate applied

  bool operator==(const TreeNode&) const = default;
};

struct Tree {
  std::vector<TreeNode> nodes;

  double predict(const double* x) const noexcept {
    std::int32_t i = 0;
    while (nodes[i].feature >= 0) {
      i = x[nodes[i].feature] <= nodes[i].threshold ? nodes[i].left : nodes[i].right;
    }
    return nodes[i].value;
  }
  bool operator==(const Tree&) const = default;
};

// Multiclass softmax boosting: one regression tree per class per round.
class Model {
 public:
  Model() = default;
  Model(std::size_t n_classes, std::size_t n_features, Params params, std::vector<double> base_score)
      : n_classes_(n_classes), n_features_(n_features), params_(params), base_score_(std::move(base_score)) {}

  std::size_t n_classes() const noexcept { return n_classes_; }
  std::size_t n_features() const noexcept { return n_features_; }
  std::size_t n_rounds() const noexcept { return n_classes_ == 0 ? 0 : trees_.size() / n_classes_; }
  const Params& params() const noexcept { return params_; }
  const std::vector<double>& base_score() const noexcept { return base_score_; }
  // Round-major: tree r * n_classes + k belongs to class k.
  const std::vector<Tree>& trees() const noexcept { return trees_; }
  std::vector<Tree>& trees() noexcept { return trees_; }

  void raw_scores(std::span<const double> x, std::span<double> out) const;
  // Throws Error{ShapeMismatch}.
  SoftmaxOutput predict(std::span<const double> x) const;

  bool operator==(const Model&) const = default;

 private:
  std::size_t n_classes_ = 0;
  std::size_t n_features_ = 0;
  Params params_;
  std::vector<double> base_score_;
  std::vector<Tree> trees_;
};

struct TrainLog {
  // loss[r] = mean training log-loss after r rounds (loss[0] is the prior).
  std::vector<double> loss;
};

// Labels are class indices in [0, n_classes). Throws Error{DegenerateClass}
// when a class has no training row and Error{EmptyTrain} on no rows.
Model train(const FeatureMatrix& x, std::span<const int> y, std::size_t n_classes,
            std::span<const std::size_t> rows, const Params& params, TrainLog* log = nullptr);

}  // namespace myo::gbdt

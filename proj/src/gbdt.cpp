#include "myo/gbdt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

#include "myo/error.hpp"

namespace myo {

SoftmaxOutput softmax(std::span<const double> scores) {
  SoftmaxOutput out;
  out.probs.resize(scores.size());
  if (scores.empty()) return out;
  double mx = *std::max_element(scores.begin(), scores.end());
  double sum = 0.0;
  for (std::size_t k = 0; k < scores.size(); ++k) {
    out.probs[k] = std::exp(scores[k] - mx);
    sum += out.probs[k];
  }
  for (auto& p : out.probs) p /= sum;
  out.argmax = static_cast<std::size_t>(std::max_element(out.probs.begin(), out.probs.end()) - out.probs.begin());
  return out;
}

}  // namespace myo

namespace myo::gbdt {

BinMapper BinMapper::fit(const FeatureMatrix& x, std::span<const std::size_t> rows, int n_bins) {
  if (n_bins < 2 || n_bins > 255) throw Error(Errc::InvalidArgument, "n_bins must be in [2, 255]");
  BinMapper m;
  m.cuts_.resize(x.cols);
  std::vector<double> values(rows.size());
  for (std::size_t f = 0; f < x.cols; ++f) {
    for (std::size_t i = 0; i < rows.size(); ++i) values[i] = x.data[rows[i] * x.cols + f];
    std::sort(values.begin(), values.end());
    auto& cuts = m.cuts_[f];
    const std::size_t n = values.size();
    std::size_t distinct = n == 0 ? 0 : 1;
    for (std::size_t i = 1; i < n; ++i) distinct += values[i] != values[i - 1];
    if (distinct <= static_cast<std::size_t>(n_bins)) {
      for (std::size_t i = 1; i < n; ++i) {
        if (values[i] != values[i - 1]) cuts.push_back(0.5 * (values[i - 1] + values[i]));
      }
    } else {
      for (int q = 1; q < n_bins; ++q) {
        std::size_t idx = static_cast<std::size_t>(q) * n / static_cast<std::size_t>(n_bins);
        if (idx == 0) continue;
        double a = values[idx - 1];
        auto it = std::upper_bound(values.begin(), values.end(), a);
        if (it == values.end()) break;
        double cut = 0.5 * (a + *it);
        if (cuts.empty() || cut > cuts.back()) cuts.push_back(cut);
      }
    }
    m.max_bins_ = std::max(m.max_bins_, cuts.size() + 1);
  }
  return m;
}

std::uint8_t BinMapper::bin(std::size_t feature, double value) const noexcept {
  const auto& cuts = cuts_[feature];
  return static_cast<std::uint8_t>(std::lower_bound(cuts.begin(), cuts.end(), value) - cuts.begin());
}

BinnedMatrix BinnedMatrix::build(const FeatureMatrix& x, const BinMapper& mapper) {
  BinnedMatrix b;
  b.rows = x.rows;
  b.cols = x.cols;
  b.bins.resize(x.rows * x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t f = 0; f < x.cols; ++f) b.bins[i * x.cols + f] = mapper.bin(f, x.data[i * x.cols + f]);
  }
  return b;
}

double split_gain(const GradPair& left, const GradPair& right, double lambda) noexcept {
  const double g = left.g + right.g;
  const double h = left.h + right.h;
  return left.g * left.g / (left.h + lambda) + right.g * right.g / (right.h + lambda) - g * g / (h + lambda);
}

namespace {

using Histogram = std::vector<GradPair>;

void build_histogram(const BinnedMatrix& binned, std::size_t stride, std::span<const GradPair> grads,
                     std::span<const std::uint32_t> rows, Histogram& hist) {
  std::fill(hist.begin(), hist.end(), GradPair{});
  const std::size_t F = binned.cols;
  GradPair* h = hist.data();
  for (std::uint32_t r : rows) {
    const std::uint8_t* b = binned.row(r);
    const GradPair gp = grads[r];
    for (std::size_t f = 0; f < F; ++f) h[f * stride + b[f]] += gp;
  }
}

SplitCandidate best_from_histogram(const Histogram& hist, std::size_t stride, const GradPair& total,
                                   const BinMapper& mapper, const Params& params) {
  SplitCandidate best;
  best.gain = params.min_split_gain;
  for (std::size_t f = 0; f < mapper.n_features(); ++f) {
    const std::size_t nb = mapper.n_bins(f);
    GradPair left;
    for (std::size_t b = 0; b + 1 < nb; ++b) {
      left += hist[f * stride + b];
      if (left.h < params.min_child_weight) continue;
      GradPair right = total;
      right -= left;
      if (right.h < params.min_child_weight) continue;
      double gain = split_gain(left, right, params.lambda_l2);
      if (gain > best.gain) {
        best.feature = static_cast<int>(f);
        best.bin = static_cast<int>(b);
        best.threshold = mapper.cut(f, b);
        best.gain = gain;
        best.left = left;
        best.right = right;
      }
    }
  }
  return best;
}

// Scratch state for growing one tree at a time; reused across rounds.
class TreeBuilder {
 public:
  TreeBuilder(const BinnedMatrix& binned, const BinMapper& mapper, const Params& params)
      : binned_(binned), mapper_(mapper), params_(params), stride_(mapper.max_bins()),
        rows_(binned.rows), tmp_(binned.rows) {}

  // Grows a tree on `grads` and writes each row's leaf value into `delta`.
  Tree grow(std::span<const GradPair> grads, std::span<double> delta) {
    Tree tree;
    for (std::uint32_t i = 0; i < rows_.size(); ++i) rows_[i] = i;

    struct Work {
      std::int32_t node;
      std::uint32_t begin, end;
      GradPair sum;
      int depth;
      int hist;
    };

    GradPair total;
    for (const auto& g : grads) total += g;
    tree.nodes.emplace_back();
    std::vector<Work> level{{0, 0, static_cast<std::uint32_t>(rows_.size()), total, 0, -1}};
    if (can_split(total, 0)) {
      level[0].hist = acquire();
      build_histogram(binned_, stride_, grads, rows(0, rows_.size()), pool_[level[0].hist]);
    }

    std::vector<Work> next;
    while (!level.empty()) {
      next.clear();
      for (auto& w : level) {
        SplitCandidate split;
        if (w.hist >= 0) split = best_from_histogram(pool_[w.hist], stride_, w.sum, mapper_, params_);
        if (!split.valid()) {
          make_leaf(tree, w.node, w.sum, w.begin, w.end, delta);
          if (w.hist >= 0) release(w.hist);
          continue;
        }
        const std::uint32_t mid = partition(w.begin, w.end, split);
        const auto left_id = static_cast<std::int32_t>(tree.nodes.size());
        tree.nodes.emplace_back();
        tree.nodes.emplace_back();
        auto& node = tree.nodes[w.node];
        node.feature = split.feature;
        node.threshold = split.threshold;
        node.left = left_id;
        node.right = left_id + 1;

        Work left{left_id, w.begin, mid, split.left, w.depth + 1, -1};
        Work right{left_id + 1, mid, w.end, split.right, w.depth + 1, -1};
        const bool need_left = can_split(left.sum, left.depth);
        const bool need_right = can_split(right.sum, right.depth);
        if (need_left || need_right) {
          Work& small = (mid - w.begin) <= (w.end - mid) ? left : right;
          Work& large = &small == &left ? right : left;
          small.hist = acquire();
          build_histogram(binned_, stride_, grads, rows(small.begin, small.end), pool_[small.hist]);
          auto& parent = pool_[w.hist];
          const auto& sh = pool_[small.hist];
          for (std::size_t i = 0; i < parent.size(); ++i) parent[i] -= sh[i];
          large.hist = w.hist;
          if (!can_split(small.sum, small.depth)) {
            release(small.hist);
            small.hist = -1;
          }
          if (!can_split(large.sum, large.depth)) {
            release(large.hist);
            large.hist = -1;
          }
        } else {
          release(w.hist);
        }
        next.push_back(left);
        next.push_back(right);
      }
      std::swap(level, next);
    }
    return tree;
  }

 private:
  bool can_split(const GradPair& sum, int depth) const noexcept {
    return depth < params_.max_depth && sum.h >= 2.0 * params_.min_child_weight;
  }

  std::span<const std::uint32_t> rows(std::size_t begin, std::size_t end) const noexcept {
    return {rows_.data() + begin, end - begin};
  }

  int acquire() {
    if (!free_.empty()) {
      int i = free_.back();
      free_.pop_back();
      return i;
    }
    pool_.emplace_back(mapper_.n_features() * stride_);
    return static_cast<int>(pool_.size() - 1);
  }
  void release(int i) { free_.push_back(i); }

  std::uint32_t partition(std::uint32_t begin, std::uint32_t end, const SplitCandidate& split) {
    const auto f = static_cast<std::size_t>(split.feature);
    const auto b = static_cast<std::uint8_t>(split.bin);
    std::uint32_t nl = begin, nr = 0;
    for (std::uint32_t i = begin; i < end; ++i) {
      std::uint32_t r = rows_[i];
      if (binned_.row(r)[f] <= b) {
        rows_[nl++] = r;
      } else {
        tmp_[nr++] = r;
      }
    }
    std::copy(tmp_.begin(), tmp_.begin() + nr, rows_.begin() + nl);
    return nl;
  }

  void make_leaf(Tree& tree, std::int32_t node, const GradPair& sum, std::uint32_t begin, std::uint32_t end,
                 std::span<double> delta) {
    const double value = -params_.learning_rate * sum.g / (sum.h + params_.lambda_l2);
    tree.nodes[node].value = value;
    for (std::uint32_t i = begin; i < end; ++i) delta[rows_[i]] = value;
  }

  const BinnedMatrix& binned_;
  const BinMapper& mapper_;
  const Params& params_;
  std::size_t stride_;
  std::vector<std::uint32_t> rows_;
  std::vector<std::uint32_t> tmp_;
  std::vector<Histogram> pool_;
  std::vector<int> free_;
};

}  // namespace

SplitCandidate find_best_split(const BinnedMatrix& binned, const BinMapper& mapper,
                               std::span<const GradPair> grads, std::span<const std::uint32_t> rows,
                               const Params& params) {
  const std::size_t stride = mapper.max_bins();
  Histogram hist(mapper.n_features() * stride);
  build_histogram(binned, stride, grads, rows, hist);
  GradPair total;
  for (auto r : rows) total += grads[r];
  return best_from_histogram(hist, stride, total, mapper, params);
}

void Model::raw_scores(std::span<const double> x, std::span<double> out) const {
  for (std::size_t k = 0; k < n_classes_; ++k) out[k] = base_score_[k];
  const std::size_t rounds = n_rounds();
  for (std::size_t r = 0; r < rounds; ++r) {
    const Tree* t = trees_.data() + r * n_classes_;
    for (std::size_t k = 0; k < n_classes_; ++k) out[k] += t[k].predict(x.data());
  }
}

SoftmaxOutput Model::predict(std::span<const double> x) const {
  if (x.size() != n_features_) {
    throw Error(Errc::ShapeMismatch, "model expects " + std::to_string(n_features_) + " features, got " +
                                         std::to_string(x.size()));
  }
  std::vector<double> scores(n_classes_);
  raw_scores(x, scores);
  return softmax(scores);
}

Model train(const FeatureMatrix& x, std::span<const int> y, std::size_t n_classes,
            std::span<const std::size_t> rows, const Params& params, TrainLog* log) {
  if (rows.empty()) throw Error(Errc::EmptyTrain, "no training rows");
  if (n_classes < 2) throw Error(Errc::DegenerateClass, "need at least two classes");
  if (params.max_depth < 1 || params.n_rounds < 0 || !(params.learning_rate > 0.0)) {
    throw Error(Errc::InvalidArgument, "invalid boosting parameters");
  }
  const std::size_t n = rows.size();
  const std::size_t K = n_classes;

  std::vector<std::size_t> counts(K, 0);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    int c = y[rows[i]];
    if (c < 0 || static_cast<std::size_t>(c) >= K) throw Error(Errc::InvalidArgument, "label out of range");
    labels[i] = c;
    ++counts[static_cast<std::size_t>(c)];
  }
  for (std::size_t k = 0; k < K; ++k) {
    if (counts[k] == 0) throw Error(Errc::DegenerateClass, "class " + std::to_string(k) + " has no training rows");
  }

  auto mapper = BinMapper::fit(x, rows, params.n_bins);
  FeatureMatrix local(n, x.cols);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(x.data.begin() + static_cast<std::ptrdiff_t>(rows[i] * x.cols), x.cols,
                local.data.begin() + static_cast<std::ptrdiff_t>(i * x.cols));
  }
  const auto binned = BinnedMatrix::build(local, mapper);

  std::vector<double> base(K);
  for (std::size_t k = 0; k < K; ++k) base[k] = std::log(static_cast<double>(counts[k]) / static_cast<double>(n));
  Model model(K, x.cols, params, base);
  model.trees().reserve(static_cast<std::size_t>(params.n_rounds) * K);

  std::vector<double> scores(n * K);
  for (std::size_t i = 0; i < n; ++i) std::copy(base.begin(), base.end(), scores.begin() + static_cast<std::ptrdiff_t>(i * K));
  std::vector<double> probs(n * K);

  auto refresh_probs = [&] {
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double* s = scores.data() + i * K;
      double* p = probs.data() + i * K;
      double mx = *std::max_element(s, s + K);
      double sum = 0.0;
      for (std::size_t k = 0; k < K; ++k) sum += (p[k] = std::exp(s[k] - mx));
      for (std::size_t k = 0; k < K; ++k) p[k] /= sum;
      loss -= std::log(std::max(p[labels[i]], 1e-300));
    }
    return loss / static_cast<double>(n);
  };

  unsigned workers = params.threads > 0 ? static_cast<unsigned>(params.threads)
                                        : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min<unsigned>(workers, static_cast<unsigned>(K));

  std::vector<TreeBuilder> builders;
  builders.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) builders.emplace_back(binned, mapper, params);
  std::vector<std::vector<GradPair>> grads(workers, std::vector<GradPair>(n));
  std::vector<std::vector<double>> delta(K, std::vector<double>(n));
  std::vector<Tree> round_trees(K);

  auto grow_class = [&](unsigned w, std::size_t k) {
    auto& g = grads[w];
    for (std::size_t i = 0; i < n; ++i) {
      double p = probs[i * K + k];
      g[i].g = p - (labels[i] == static_cast<int>(k) ? 1.0 : 0.0);
      g[i].h = std::max(p * (1.0 - p), 1e-16);
    }
    round_trees[k] = builders[w].grow(g, delta[k]);
  };

  for (int r = 0; r < params.n_rounds; ++r) {
    double loss = refresh_probs();
    if (log) log->loss.push_back(loss);
    if (workers <= 1) {
      for (std::size_t k = 0; k < K; ++k) grow_class(0, k);
    } else {
      std::vector<std::thread> pool;
      for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
          for (std::size_t k = w; k < K; k += workers) grow_class(w, k);
        });
      }
      for (auto& t : pool) t.join();
    }
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t i = 0; i < n; ++i) scores[i * K + k] += delta[k][i];
      model.trees().push_back(std::move(round_trees[k]));
    }
  }
  double final_loss = refresh_probs();
  if (log) log->loss.push_back(final_loss);
  return model;
}

}  // namespace myo::gbdt

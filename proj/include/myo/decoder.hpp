#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "myo/conformal.hpp"
#include "myo/dsp.hpp"
#include "myo/gbdt.hpp"
#include "myo/kinematics.hpp"
#include "myo/recording.hpp"

namespace myo::decoder {

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> calibration;
  std::vector<std::size_t> test;
};

struct AssembleOptions {
  std::size_t buffer_frames = kDefaultBufferFrames;
  double test_fraction = 0.2;
  // Share of each segment's training block held back to calibrate RAPS.
  double calibration_fraction = 0.125;
};

// One sample per frame once the 20-frame window is full.
struct Dataset {
  std::vector<std::string> classes;  // class index -> movement id; 0 is rest
  gbdt::FeatureMatrix x;             // N x 32 RMS features
  std::vector<int> y;
  std::vector<kin::HandState> guide;  // mean guide over each window
  std::vector<std::uint64_t> t_us;    // newest frame of each window
  std::vector<std::size_t> segment;   // index into the recording's segments
  Split split;

  std::size_t size() const noexcept { return y.size(); }
  std::size_t class_index(std::string_view id) const;
};

// Slides the frame window over every segment (hop = 1 frame), labels each
// window by its mean guide under the 50% rule and splits each segment
// temporally: leading 80% train (its tail calibrates), trailing 20% test.
// Throws Error{TooShort} / Error{MissingGuide}.
Dataset assemble(const SessionRecording& recording, const AssembleOptions& options = {});

class Normalizer {
 public:
  Normalizer() = default;
  Normalizer(std::vector<double> mean, std::vector<double> std) : mean_(std::move(mean)), std_(std::move(std)) {}

  // Throws Error{EmptyTrain}.
  static Normalizer fit(const gbdt::FeatureMatrix& x, std::span<const std::size_t> rows);

  void apply(std::span<double> x) const;
  std::vector<double> applied(std::span<const double> x) const;
  void apply(gbdt::FeatureMatrix& x) const;

  const std::vector<double>& mean() const noexcept { return mean_; }
  const std::vector<double>& stddev() const noexcept { return std_; }
  std::size_t size() const noexcept { return mean_.size(); }
  bool operator==(const Normalizer&) const = default;

  static constexpr double kStdFloor = 1e-12;

 private:
  std::vector<double> mean_;
  std::vector<double> std_;
};

// Pluggable classifier slot.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual SoftmaxOutput classify(std::span<const double> normalized) const = 0;
  virtual std::size_t n_classes() const = 0;
};

// Pluggable proportional (regression) slot.
class ProportionalDecoder {
 public:
  virtual ~ProportionalDecoder() = default;
  virtual kin::HandState decode(std::span<const double> normalized) const = 0;
};

class GbdtClassifier final : public Classifier {
 public:
  explicit GbdtClassifier(gbdt::Model model) : model_(std::move(model)) {}
  SoftmaxOutput classify(std::span<const double> normalized) const override { return model_.predict(normalized); }
  std::size_t n_classes() const override { return model_.n_classes(); }
  const gbdt::Model& model() const noexcept { return model_; }

 private:
  gbdt::Model model_;
};

// Everything needed to run the decoder live: trees, normalizer, class map and
// the conformal calibration.
struct TrainedModel {
  gbdt::Model gbdt;
  Normalizer normalizer;
  std::vector<std::string> classes;
  std::string catalog_hash;
  conformal::RapsCalibration raps;

  bool operator==(const TrainedModel& o) const {
    return gbdt == o.gbdt && normalizer == o.normalizer && classes == o.classes &&
           catalog_hash == o.catalog_hash && raps.q_hat == o.raps.q_hat && raps.alpha == o.raps.alpha &&
           raps.k_reg == o.raps.k_reg && raps.lambda == o.raps.lambda;
  }
};

// Normalises raw features and runs the trees. Throws Error{ShapeMismatch}.
SoftmaxOutput predict(const gbdt::Model& model, const Normalizer& norm, std::span<const double> features);
SoftmaxOutput predict(const TrainedModel& model, const dsp::FeatureVector& features);

// Boosts on the dataset's train split after normalising with train-only
// statistics. Returns the model without conformal calibration.
TrainedModel train_gbdt(const Dataset& ds, const gbdt::Params& params, const std::string& catalog_hash = {},
                        gbdt::TrainLog* log = nullptr);

// RAPS calibration on the dataset's calibration split.
conformal::RapsCalibration calibrate_raps(const TrainedModel& model, const Dataset& ds,
                                          const conformal::Config& config);

inline constexpr std::uint32_t kModelFormatVersion = 1;

std::vector<std::uint8_t> serialize_model(const TrainedModel& model);

struct LoadedModel {
  TrainedModel model;
  std::vector<std::string> warnings;
};

// Throws Error{CorruptFile} or Error{VersionMismatch}. A catalog hash that
// differs from `current_catalog` is reported as a VersionMismatch warning.
LoadedModel deserialize_model(std::span<const std::uint8_t> data, const kin::Catalog* current_catalog = nullptr);
void save_model(const TrainedModel& model, const std::string& path);
LoadedModel load_model(const std::string& path, const kin::Catalog* current_catalog = nullptr);

// Ridge regression from normalised features to the 9D hand state, clamped
// to [0, 1]. Baseline for the proportional slot.
class LinearRegressor final : public ProportionalDecoder {
 public:
  // Throws Error{EmptyTrain}.
  static LinearRegressor fit(const gbdt::FeatureMatrix& x, std::span<const kin::HandState> targets,
                             std::span<const std::size_t> rows, double ridge = 1e-3);

  kin::HandState decode(std::span<const double> normalized) const override;

 private:
  Eigen::MatrixXd weights_;  // (features + 1) x 9, last row is the intercept
};

LinearRegressor train_linear_regressor(const Dataset& ds, const Normalizer& norm, double ridge = 1e-3);

}  // namespace myo::decoder

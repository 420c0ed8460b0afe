#include "myo/decoder.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>

#include "myo/bytes.hpp"
#include "myo/error.hpp"

namespace myo::decoder {

std::size_t Dataset::class_index(std::string_view id) const {
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i] == id) return i;
  }
  throw Error(Errc::UnknownClass, "class '" + std::string(id) + "' not in dataset");
}

Dataset assemble(const SessionRecording& rec, const AssembleOptions& options) {
  Dataset ds;
  ds.classes.emplace_back(kin::kRest);
  for (const auto& id : rec.catalog.ids()) {
    if (id != kin::kRest && rec.find(id) != nullptr) ds.classes.push_back(id);
  }
  for (const auto& seg : rec.segments) {
    if (!rec.catalog.contains(seg.movement)) {
      throw Error(Errc::UnknownClass, "segment movement '" + seg.movement + "' missing from catalog");
    }
  }

  const std::uint64_t period = rec.stream.frame_period_us();
  const std::size_t W = options.buffer_frames;
  ds.x = gbdt::FeatureMatrix(0, kChannels);

  for (std::size_t si = 0; si < rec.segments.size(); ++si) {
    const auto& seg = rec.segments[si];
    if (seg.frames.size() < 2 * W) {
      throw Error(Errc::TooShort, "segment '" + seg.movement + "' has " + std::to_string(seg.frames.size()) +
                                      " frames, need at least " + std::to_string(2 * W));
    }
    const auto tmpl = rec.catalog.effective(seg.movement);
    const std::size_t first = ds.size();

    FrameBuffer buf(W, ~std::uint64_t{0} / 2, period);
    std::size_t lo = 0, hi = 0;
    for (const auto& frame : seg.frames) {
      buf.push(frame);
      if (!buf.full()) continue;
      const std::uint64_t start = buf.oldest().t_us;
      const std::uint64_t end = buf.newest().t_us + period;
      while (lo < seg.guide.size() && seg.guide[lo].t_us < start) ++lo;
      hi = std::max(hi, lo);
      while (hi < seg.guide.size() && seg.guide[hi].t_us < end) ++hi;
      if (hi == lo) {
        throw Error(Errc::MissingGuide, "no guide state within window ending at t_us=" + std::to_string(end));
      }
      kin::HandState mean{};
      for (std::size_t g = lo; g < hi; ++g) {
        for (std::size_t k = 0; k < kin::kHandDims; ++k) mean[k] += seg.guide[g].state[k];
      }
      for (auto& v : mean) v /= static_cast<double>(hi - lo);

      auto fv = dsp::extract_features(buf);
      ds.x.data.insert(ds.x.data.end(), fv.rms.begin(), fv.rms.end());
      ++ds.x.rows;
      ds.y.push_back(static_cast<int>(ds.class_index(kin::label(mean, tmpl))));
      ds.guide.push_back(mean);
      ds.t_us.push_back(fv.t_us);
      ds.segment.push_back(si);
    }

    const std::size_t n = ds.size() - first;
    const auto m = static_cast<std::size_t>(std::floor(static_cast<double>(n) * (1.0 - options.test_fraction)));
    const auto c = static_cast<std::size_t>(std::llround(static_cast<double>(m) * options.calibration_fraction));
    for (std::size_t i = 0; i < n; ++i) {
      if (i < m - c) {
        ds.split.train.push_back(first + i);
      } else if (i < m) {
        ds.split.calibration.push_back(first + i);
      } else {
        ds.split.test.push_back(first + i);
      }
    }
  }
  return ds;
}

Normalizer Normalizer::fit(const gbdt::FeatureMatrix& x, std::span<const std::size_t> rows) {
  if (rows.empty()) throw Error(Errc::EmptyTrain, "cannot fit normalizer on an empty training set");
  std::vector<double> mean(x.cols, 0.0), sd(x.cols, 0.0);
  for (auto r : rows) {
    for (std::size_t f = 0; f < x.cols; ++f) mean[f] += x.data[r * x.cols + f];
  }
  for (auto& m : mean) m /= static_cast<double>(rows.size());
  for (auto r : rows) {
    for (std::size_t f = 0; f < x.cols; ++f) {
      double d = x.data[r * x.cols + f] - mean[f];
      sd[f] += d * d;
    }
  }
  for (auto& s : sd) s = std::max(std::sqrt(s / static_cast<double>(rows.size())), kStdFloor);
  return Normalizer(std::move(mean), std::move(sd));
}

void Normalizer::apply(std::span<double> x) const {
  if (x.size() != mean_.size()) {
    throw Error(Errc::ShapeMismatch, "normalizer expects " + std::to_string(mean_.size()) + " features");
  }
  for (std::size_t k = 0; k < x.size(); ++k) x[k] = (x[k] - mean_[k]) / std_[k];
}

std::vector<double> Normalizer::applied(std::span<const double> x) const {
  std::vector<double> out(x.begin(), x.end());
  apply(out);
  return out;
}

void Normalizer::apply(gbdt::FeatureMatrix& x) const {
  for (std::size_t i = 0; i < x.rows; ++i) apply(x.row(i));
}

SoftmaxOutput predict(const gbdt::Model& model, const Normalizer& norm, std::span<const double> features) {
  if (features.size() != model.n_features() || norm.size() != model.n_features()) {
    throw Error(Errc::ShapeMismatch, "expected " + std::to_string(model.n_features()) + " features, got " +
                                         std::to_string(features.size()));
  }
  std::array<double, 64> local{};
  std::vector<double> heap;
  std::span<double> z;
  if (features.size() <= local.size()) {
    z = {local.data(), features.size()};
  } else {
    heap.resize(features.size());
    z = heap;
  }
  std::copy(features.begin(), features.end(), z.begin());
  norm.apply(z);
  return model.predict(z);
}

SoftmaxOutput predict(const TrainedModel& model, const dsp::FeatureVector& features) {
  return predict(model.gbdt, model.normalizer, features.rms);
}

TrainedModel train_gbdt(const Dataset& ds, const gbdt::Params& params, const std::string& catalog_hash,
                        gbdt::TrainLog* log) {
  if (ds.split.train.empty()) throw Error(Errc::EmptyTrain, "training split is empty");
  TrainedModel out;
  out.normalizer = Normalizer::fit(ds.x, ds.split.train);
  gbdt::FeatureMatrix z = ds.x;
  out.normalizer.apply(z);
  out.gbdt = gbdt::train(z, ds.y, ds.classes.size(), ds.split.train, params, log);
  out.classes = ds.classes;
  out.catalog_hash = catalog_hash;
  return out;
}

conformal::RapsCalibration calibrate_raps(const TrainedModel& model, const Dataset& ds,
                                          const conformal::Config& config) {
  std::vector<double> scores;
  scores.reserve(ds.split.calibration.size());
  for (auto i : ds.split.calibration) {
    auto sm = predict(model.gbdt, model.normalizer, ds.x.row(i));
    scores.push_back(conformal::raps_score(sm, static_cast<std::size_t>(ds.y[i]), config.k_reg, config.lambda));
  }
  return conformal::calibrate(scores, config);
}

namespace {

constexpr char kModelMagic[4] = {'M', 'G', 'D', '1'};
constexpr std::size_t kNodeBytes = 4 + 8 + 4 + 4 + 8;

nlohmann::json params_to_json(const gbdt::Params& p) {
  return {{"n_rounds", p.n_rounds},       {"max_depth", p.max_depth},
          {"learning_rate", p.learning_rate}, {"n_bins", p.n_bins},
          {"lambda_l2", p.lambda_l2},     {"min_child_weight", p.min_child_weight},
          {"min_split_gain", p.min_split_gain}};
}

gbdt::Params params_from_json(const nlohmann::json& j) {
  gbdt::Params p;
  p.n_rounds = j.at("n_rounds").get<int>();
  p.max_depth = j.at("max_depth").get<int>();
  p.learning_rate = j.at("learning_rate").get<double>();
  p.n_bins = j.at("n_bins").get<int>();
  p.lambda_l2 = j.at("lambda_l2").get<double>();
  p.min_child_weight = j.at("min_child_weight").get<double>();
  p.min_split_gain = j.at("min_split_gain").get<double>();
  return p;
}

}  // namespace

std::vector<std::uint8_t> serialize_model(const TrainedModel& m) {
  nlohmann::json manifest;
  manifest["classes"] = m.classes;
  manifest["catalog_hash"] = m.catalog_hash;
  manifest["params"] = params_to_json(m.gbdt.params());
  manifest["n_features"] = m.gbdt.n_features();
  manifest["n_classes"] = m.gbdt.n_classes();
  manifest["n_trees"] = m.gbdt.trees().size();
  manifest["raps"] = {{"alpha", m.raps.alpha},
                      {"k_reg", m.raps.k_reg},
                      {"lambda", m.raps.lambda},
                      {"n_calibration", m.raps.n_calibration}};
  manifest["raps"]["q_hat"] = m.raps.q_hat ? nlohmann::json(*m.raps.q_hat) : nlohmann::json(nullptr);
  // exact f64 copies of the numeric state live in the payload; the manifest
  // carries readable duplicates
  manifest["normalizer"] = {{"mean", m.normalizer.mean()}, {"std", m.normalizer.stddev()}};
  manifest["base_score"] = m.gbdt.base_score();
  std::string text = manifest.dump();

  std::vector<std::uint8_t> payload;
  for (double v : m.gbdt.base_score()) bytes::append_f64(payload, v);
  for (double v : m.normalizer.mean()) bytes::append_f64(payload, v);
  for (double v : m.normalizer.stddev()) bytes::append_f64(payload, v);
  bytes::append_f64(payload, m.raps.q_hat.value_or(0.0));
  for (const auto& t : m.gbdt.trees()) {
    bytes::append_le(payload, static_cast<std::uint32_t>(t.nodes.size()));
    for (const auto& n : t.nodes) {
      bytes::append_le(payload, n.feature);
      bytes::append_f64(payload, n.threshold);
      bytes::append_le(payload, n.left);
      bytes::append_le(payload, n.right);
      bytes::append_f64(payload, n.value);
    }
  }

  std::vector<std::uint8_t> out(kModelMagic, kModelMagic + 4);
  bytes::append_le(out, kModelFormatVersion);
  bytes::append_le(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  bytes::append_le(out, static_cast<std::uint64_t>(payload.size()));
  out.insert(out.end(), payload.begin(), payload.end());
  bytes::append_le(out, bytes::crc32(out));
  return out;
}

LoadedModel deserialize_model(std::span<const std::uint8_t> data, const kin::Catalog* current_catalog) {
  auto need = [&](std::size_t pos, std::size_t n) {
    if (data.size() < pos + n) throw Error(Errc::CorruptFile, "model file truncated");
  };
  need(0, 12);
  if (!std::equal(data.begin(), data.begin() + 4, kModelMagic)) throw Error(Errc::CorruptFile, "not a model file");
  auto version = bytes::get_le<std::uint32_t>(data.data() + 4);
  if (version != kModelFormatVersion) {
    throw Error(Errc::VersionMismatch, "model format " + std::to_string(version) + ", expected " +
                                           std::to_string(kModelFormatVersion));
  }
  auto manifest_len = bytes::get_le<std::uint32_t>(data.data() + 8);
  std::size_t pos = 12;
  need(pos, manifest_len + 8);
  const auto* mp = data.data() + pos;
  pos += manifest_len;
  auto payload_len = bytes::get_le<std::uint64_t>(data.data() + pos);
  pos += 8;
  need(pos, payload_len + 4);
  const std::uint8_t* payload = data.data() + pos;
  pos += payload_len;
  auto crc = bytes::get_le<std::uint32_t>(data.data() + pos);
  if (crc != bytes::crc32(data.first(pos))) throw Error(Errc::CorruptFile, "model checksum mismatch");

  LoadedModel out;
  try {
    auto manifest = nlohmann::json::parse(mp, mp + manifest_len);
    auto& m = out.model;
    m.classes = manifest.at("classes").get<std::vector<std::string>>();
    m.catalog_hash = manifest.at("catalog_hash").get<std::string>();
    auto params = params_from_json(manifest.at("params"));
    auto n_features = manifest.at("n_features").get<std::size_t>();
    auto n_classes = manifest.at("n_classes").get<std::size_t>();
    auto n_trees = manifest.at("n_trees").get<std::size_t>();
    const auto& raps = manifest.at("raps");
    m.raps.alpha = raps.at("alpha").get<double>();
    m.raps.k_reg = raps.at("k_reg").get<std::size_t>();
    m.raps.lambda = raps.at("lambda").get<double>();
    m.raps.n_calibration = raps.at("n_calibration").get<std::size_t>();
    const bool calibrated = !raps.at("q_hat").is_null();

    std::size_t off = 0;
    auto take = [&](std::size_t n) {
      if (off + n > payload_len) throw Error(Errc::CorruptFile, "model payload truncated");
      const auto* p = payload + off;
      off += n;
      return p;
    };
    auto f64s = [&](std::size_t n) {
      std::vector<double> v(n);
      for (auto& x : v) x = bytes::get_f64(take(8));
      return v;
    };
    auto base = f64s(n_classes);
    auto mean = f64s(n_features);
    auto sd = f64s(n_features);
    double q_hat = bytes::get_f64(take(8));
    if (calibrated) m.raps.q_hat = q_hat;
    m.normalizer = Normalizer(std::move(mean), std::move(sd));
    m.gbdt = gbdt::Model(n_classes, n_features, params, std::move(base));
    m.gbdt.trees().resize(n_trees);
    for (auto& t : m.gbdt.trees()) {
      auto count = bytes::get_le<std::uint32_t>(take(4));
      t.nodes.resize(count);
      for (auto& node : t.nodes) {
        const auto* p = take(kNodeBytes);
        node.feature = bytes::get_le<std::int32_t>(p);
        node.threshold = bytes::get_f64(p + 4);
        node.left = bytes::get_le<std::int32_t>(p + 12);
        node.right = bytes::get_le<std::int32_t>(p + 16);
        node.value = bytes::get_f64(p + 20);
        if (node.feature >= static_cast<std::int32_t>(n_features) ||
            (node.feature >= 0 && (node.left < 0 || node.right < 0 || node.left >= static_cast<std::int32_t>(count) ||
                                   node.right >= static_cast<std::int32_t>(count)))) {
          throw Error(Errc::CorruptFile, "model tree structure invalid");
        }
      }
    }
    if (n_classes == 0 || n_trees % n_classes != 0 || m.classes.size() != n_classes) {
      throw Error(Errc::CorruptFile, "model shape inconsistent");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::CorruptFile, std::string("model manifest invalid: ") + e.what());
  }

  if (current_catalog != nullptr && current_catalog->hash() != out.model.catalog_hash) {
    std::string w = "VersionMismatch: catalog changed since the model was saved (saved " + out.model.catalog_hash +
                    ", current " + current_catalog->hash() + ")";
    spdlog::warn("{}", w);
    out.warnings.push_back(std::move(w));
  }
  return out;
}

void save_model(const TrainedModel& model, const std::string& path) { write_file(path, serialize_model(model)); }

LoadedModel load_model(const std::string& path, const kin::Catalog* current_catalog) {
  return deserialize_model(read_file(path), current_catalog);
}

LinearRegressor LinearRegressor::fit(const gbdt::FeatureMatrix& x, std::span<const kin::HandState> targets,
                                     std::span<const std::size_t> rows, double ridge) {
  if (rows.empty()) throw Error(Errc::EmptyTrain, "no rows for the regressor");
  const auto F = static_cast<Eigen::Index>(x.cols);
  Eigen::MatrixXd a(static_cast<Eigen::Index>(rows.size()), F + 1);
  Eigen::MatrixXd b(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(kin::kHandDims));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    for (Eigen::Index f = 0; f < F; ++f) a(r, f) = x.data[rows[i] * x.cols + static_cast<std::size_t>(f)];
    a(r, F) = 1.0;
    for (std::size_t k = 0; k < kin::kHandDims; ++k) b(r, static_cast<Eigen::Index>(k)) = targets[rows[i]][k];
  }
  Eigen::MatrixXd gram = a.transpose() * a;
  for (Eigen::Index f = 0; f < F; ++f) gram(f, f) += ridge * static_cast<double>(rows.size());
  LinearRegressor lr;
  lr.weights_ = gram.ldlt().solve(a.transpose() * b);
  return lr;
}

kin::HandState LinearRegressor::decode(std::span<const double> z) const {
  if (static_cast<Eigen::Index>(z.size()) + 1 != weights_.rows()) {
    throw Error(Errc::ShapeMismatch, "regressor feature count mismatch");
  }
  kin::HandState out{};
  const auto F = static_cast<Eigen::Index>(z.size());
  for (std::size_t k = 0; k < kin::kHandDims; ++k) {
    const auto c = static_cast<Eigen::Index>(k);
    double v = weights_(F, c);
    for (Eigen::Index f = 0; f < F; ++f) v += z[static_cast<std::size_t>(f)] * weights_(f, c);
    out[k] = std::clamp(v, 0.0, 1.0);
  }
  return out;
}

LinearRegressor train_linear_regressor(const Dataset& ds, const Normalizer& norm, double ridge) {
  gbdt::FeatureMatrix z = ds.x;
  norm.apply(z);
  return LinearRegressor::fit(z, ds.guide, ds.split.train, ridge);
}

}  // namespace myo::decoder

#include "myo/session.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>

#include "myo/error.hpp"

namespace myo::session {

using nlohmann::json;
using clock_type = std::chrono::steady_clock;

std::string to_string(Phase phase) {
  switch (phase) {
    case Phase::Disconnected: return "Disconnected";
    case Phase::Monitoring: return "Monitoring";
    case Phase::Recording: return "Recording";
    case Phase::Training: return "Training";
    case Phase::Validating: return "Validating";
    case Phase::Idle: return "Idle";
  }
  return "Disconnected";
}

namespace {

json output_json(const OutputConfig& o) {
  return {{"kind", out::to_string(o.kind)}, {"addr", o.addr}, {"rate_hz", o.rate_hz}, {"interp_s", o.interp_s}};
}

OutputConfig output_from(const json& j) {
  OutputConfig o;
  o.kind = out::parse_kind(j.at("kind").get<std::string>());
  o.addr = j.at("addr").get<std::string>();
  o.rate_hz = j.at("rate_hz").get<double>();
  o.interp_s = j.at("interp_s").get<double>();
  return o;
}

// Every key of `j` must exist in `reference`, recursively.
void check_keys(const json& j, const json& reference, const std::string& prefix) {
  if (!j.is_object()) return;
  for (const auto& [k, v] : j.items()) {
    std::string key = prefix.empty() ? k : prefix + "." + k;
    if (!reference.contains(k)) throw Error(Errc::InvalidArgument, "unknown config key '" + key + "'");
    if (reference.at(k).is_object()) {
      if (!v.is_object()) throw Error(Errc::InvalidArgument, "config key '" + key + "' must be an object");
      check_keys(v, reference.at(k), key);
    }
  }
}

}  // namespace

json EngineConfig::to_json() const {
  json g = {{"n_rounds", gbdt.n_rounds},
            {"max_depth", gbdt.max_depth},
            {"learning_rate", gbdt.learning_rate},
            {"n_bins", gbdt.n_bins},
            {"lambda_l2", gbdt.lambda_l2},
            {"min_child_weight", gbdt.min_child_weight},
            {"min_split_gain", gbdt.min_split_gain},
            {"threads", gbdt.threads}};
  return {{"device", {{"addr", device}, {"recv_buffer_bytes", recv_buffer_bytes}}},
          {"buffer_frames", buffer_frames},
          {"guide", timing},
          {"record_s", record_s},
          {"gbdt", g},
          {"conformal", conformal},
          {"split", {{"test_fraction", test_fraction}, {"calibration_fraction", calibration_fraction}}},
          {"output", output_json(output)},
          {"guide_output", output_json(guide_output)},
          {"validation", {{"reps", validation_reps}, {"window_s", validation_window_s}}},
          {"paths", {{"session", session_path}, {"model", model_path}, {"catalog", catalog_path}}},
          {"plot", {{"queue_frames", plot_queue_frames}}}};
}

EngineConfig EngineConfig::from_json(const json& patch) {
  const json defaults = EngineConfig{}.to_json();
  check_keys(patch, defaults, "");
  json j = defaults;
  j.merge_patch(patch);
  EngineConfig c;
  try {
    c.device = j["device"]["addr"].get<std::string>();
    c.recv_buffer_bytes = j["device"]["recv_buffer_bytes"].get<int>();
    c.buffer_frames = j["buffer_frames"].get<std::size_t>();
    c.timing = j["guide"].get<kin::GuideTiming>();
    c.record_s = j["record_s"].get<double>();
    const auto& g = j["gbdt"];
    c.gbdt.n_rounds = g["n_rounds"].get<int>();
    c.gbdt.max_depth = g["max_depth"].get<int>();
    c.gbdt.learning_rate = g["learning_rate"].get<double>();
    c.gbdt.n_bins = g["n_bins"].get<int>();
    c.gbdt.lambda_l2 = g["lambda_l2"].get<double>();
    c.gbdt.min_child_weight = g["min_child_weight"].get<double>();
    c.gbdt.min_split_gain = g["min_split_gain"].get<double>();
    c.gbdt.threads = g["threads"].get<int>();
    c.conformal = j["conformal"].get<conformal::Config>();
    c.test_fraction = j["split"]["test_fraction"].get<double>();
    c.calibration_fraction = j["split"]["calibration_fraction"].get<double>();
    c.output = output_from(j["output"]);
    c.guide_output = output_from(j["guide_output"]);
    c.validation_reps = j["validation"]["reps"].get<int>();
    c.validation_window_s = j["validation"]["window_s"].get<double>();
    c.session_path = j["paths"]["session"].get<std::string>();
    c.model_path = j["paths"]["model"].get<std::string>();
    c.catalog_path = j["paths"]["catalog"].get<std::string>();
    c.plot_queue_frames = j["plot"]["queue_frames"].get<std::size_t>();
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidArgument, std::string("bad config value: ") + e.what());
  }
  c.validate();
  return c;
}

EngineConfig EngineConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open config " + path);
  try {
    return from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw Error(Errc::InvalidArgument, "config " + path + " is not valid JSON: " + e.what());
  }
}

EngineConfig EngineConfig::from_env() {
  const char* path = std::getenv("MYO_CONFIG");
  if (path == nullptr || *path == '\0') return EngineConfig{};
  return load(path);
}

void EngineConfig::set(const std::string& key, const json& value) {
  json patch = value;
  std::string rest = key;
  std::vector<std::string> parts;
  for (std::size_t pos; (pos = rest.find('.')) != std::string::npos; rest = rest.substr(pos + 1)) {
    parts.push_back(rest.substr(0, pos));
  }
  parts.push_back(rest);
  json current = to_json();
  const json* node = &current;
  for (const auto& p : parts) {
    if (!node->is_object() || !node->contains(p)) throw Error(Errc::InvalidArgument, "unknown config key '" + key + "'");
    node = &node->at(p);
  }
  if (node->is_object()) throw Error(Errc::InvalidArgument, "config key '" + key + "' is a section");
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
  current.merge_patch(patch);
  *this = from_json(current);
}

void EngineConfig::validate() const {
  timing.validate();
  conformal.validate();
  if (buffer_frames == 0) throw Error(Errc::InvalidArgument, "buffer_frames must be positive");
  if (!(record_s > 0)) throw Error(Errc::InvalidArgument, "record_s must be positive");
  if (!(test_fraction >= 0 && test_fraction < 1)) throw Error(Errc::InvalidArgument, "split.test_fraction must be in [0, 1)");
  if (!(calibration_fraction >= 0 && calibration_fraction < 1)) {
    throw Error(Errc::InvalidArgument, "split.calibration_fraction must be in [0, 1)");
  }
  if (gbdt.n_rounds < 0 || gbdt.max_depth < 1 || gbdt.n_bins < 2 || gbdt.n_bins > 256) {
    throw Error(Errc::InvalidArgument, "gbdt parameters out of range");
  }
  if (validation_reps < 1 || !(validation_window_s > 0)) throw Error(Errc::InvalidArgument, "validation settings out of range");
  for (const auto* o : {&output, &guide_output}) {
    if (!(o->rate_hz > 0)) throw Error(Errc::InvalidArgument, "output rate_hz must be positive");
    if (o->interp_s < 0) throw Error(Errc::InvalidArgument, "output interp_s must be >= 0");
    net::Endpoint::parse(o->addr);
  }
}

double MovementAccuracy::naive() const noexcept {
  return samples == 0 ? 0.0 : static_cast<double>(naive_correct) / static_cast<double>(samples);
}

double MovementAccuracy::conformal() const noexcept {
  return samples == 0 ? 0.0 : static_cast<double>(conformal_correct) / static_cast<double>(samples);
}

namespace {

std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() < 2) return {m, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

}  // namespace

std::pair<double, double> ValidationReport::naive_summary() const {
  std::vector<double> v;
  for (const auto& m : movements) v.push_back(m.naive());
  return mean_std(v);
}

std::pair<double, double> ValidationReport::conformal_summary() const {
  std::vector<double> v;
  for (const auto& m : movements) v.push_back(m.conformal());
  return mean_std(v);
}

json ValidationReport::to_json() const {
  json rows = json::array();
  std::size_t samples = 0, naive_ok = 0, conf_ok = 0;
  for (const auto& m : movements) {
    rows.push_back({{"movement", m.movement},
                    {"samples", m.samples},
                    {"naive_correct", m.naive_correct},
                    {"conformal_correct", m.conformal_correct},
                    {"naive_accuracy", m.naive()},
                    {"conformal_accuracy", m.conformal()}});
    samples += m.samples;
    naive_ok += m.naive_correct;
    conf_ok += m.conformal_correct;
  }
  auto [nm, ns] = naive_summary();
  auto [cm, cs] = conformal_summary();
  auto ratio = [&](std::size_t k) { return samples == 0 ? 0.0 : static_cast<double>(k) / static_cast<double>(samples); };
  return {{"source", source},
          {"conformal_enabled", conformal_enabled},
          {"movements", rows},
          {"naive", {{"mean", nm}, {"std", ns}, {"pooled", ratio(naive_ok)}}},
          {"conformal", {{"mean", cm}, {"std", cs}, {"pooled", ratio(conf_ok)}}},
          {"samples", samples},
          {"durations_s", durations_s}};
}

LivePipeline::LivePipeline(std::shared_ptr<const decoder::TrainedModel> model, conformal::Config config)
    : model_(std::move(model)), config_(config), solver_(config.window) {}

bool LivePipeline::conformal_active() const noexcept { return config_.enabled && model_->raps.calibrated(); }

LivePipeline::Output LivePipeline::process(const FrameBuffer& buffer) {
  return process(dsp::extract_features(buffer));
}

LivePipeline::Output LivePipeline::process(const dsp::FeatureVector& features) {
  Output o;
  o.features = features;
  o.probs = decoder::predict(*model_, o.features);
  o.naive = o.probs.argmax;
  if (conformal_active()) {
    o.set = conformal::predict_set(o.probs, model_->raps);
    o.solved = solver_.solve(o.set);
  } else {
    o.set.labels = {o.naive};
    o.set.certain = true;
    o.set.probs = o.probs;
    o.solved = o.naive;
  }
  return o;
}

std::uint64_t paired_guide_index(std::uint64_t start_t_us, std::uint64_t end_t_us, std::uint64_t first_t_us,
                                 std::uint64_t last_t_us, std::uint64_t period_us) {
  const std::uint64_t centre = (first_t_us + last_t_us + period_us) / 2;
  const double frames = std::round(static_cast<double>(centre - start_t_us) / static_cast<double>(period_us));
  const std::uint64_t snapped = start_t_us + static_cast<std::uint64_t>(frames) * period_us;
  auto j = static_cast<std::uint64_t>(std::llround(static_cast<double>(snapped - start_t_us) * kGuideRateHz * 1e-6));
  while (j > 0 && guide_time_us(start_t_us, j) >= end_t_us) --j;
  return j;
}

ValidationReport evaluate_holdout(const decoder::TrainedModel& model, const decoder::Dataset& ds,
                                  const SessionRecording& rec, const conformal::Config& config) {
  ValidationReport report;
  report.source = "holdout";
  auto shared = std::make_shared<const decoder::TrainedModel>(model);
  report.conformal_enabled = config.enabled && model.raps.calibrated();

  std::map<std::size_t, std::vector<std::size_t>> by_segment;
  for (auto i : ds.split.test) by_segment[ds.segment[i]].push_back(i);
  for (const auto& [seg, rows] : by_segment) {
    LivePipeline pipe(shared, config);
    MovementAccuracy acc;
    acc.movement = rec.segments[seg].movement;
    for (auto i : rows) {
      dsp::FeatureVector fv;
      std::copy(ds.x.row(i).begin(), ds.x.row(i).end(), fv.rms.begin());
      fv.t_us = ds.t_us[i];
      auto o = pipe.process(fv);
      const auto truth = static_cast<std::size_t>(ds.y[i]);
      ++acc.samples;
      acc.naive_correct += o.naive == truth;
      acc.conformal_correct += o.solved == truth;
    }
    report.movements.push_back(acc);
  }
  return report;
}

json TrainResult::to_json() const {
  json j = {{"classes", model.classes},
            {"samples", samples},
            {"train_samples", train_samples},
            {"rounds", model.gbdt.n_rounds()},
            {"assemble_s", assemble_s},
            {"fit_s", fit_s},
            {"total_s", total_s},
            {"holdout", holdout.to_json()}};
  j["raps"] = {{"alpha", model.raps.alpha},
               {"q_hat", model.raps.q_hat ? json(*model.raps.q_hat) : json(nullptr)},
               {"n_calibration", model.raps.n_calibration}};
  if (!log.loss.empty()) j["final_loss"] = log.loss.back();
  return j;
}

TrainResult train_session(const SessionRecording& rec, const EngineConfig& config) {
  if (rec.segments.empty()) throw Error(Errc::EmptyTrain, "no recorded movements");
  TrainResult r;
  auto t0 = clock_type::now();
  decoder::AssembleOptions opts;
  opts.buffer_frames = config.buffer_frames;
  opts.test_fraction = config.test_fraction;
  opts.calibration_fraction = config.calibration_fraction;
  auto ds = decoder::assemble(rec, opts);
  auto t1 = clock_type::now();
  r.model = decoder::train_gbdt(ds, config.gbdt, rec.catalog.hash(), &r.log);
  auto t2 = clock_type::now();
  if (config.conformal.enabled && !ds.split.calibration.empty()) {
    r.model.raps = decoder::calibrate_raps(r.model, ds, config.conformal);
  }
  r.holdout = evaluate_holdout(r.model, ds, rec, config.conformal);
  auto t3 = clock_type::now();
  auto secs = [](auto a, auto b) { return std::chrono::duration<double>(b - a).count(); };
  r.samples = ds.size();
  r.train_samples = ds.split.train.size();
  r.assemble_s = secs(t0, t1);
  r.fit_s = secs(t1, t2);
  r.total_s = secs(t0, t3);
  r.holdout.durations_s["training"] = r.total_s;
  return r;
}

json LatencyStats::to_json() const {
  return {{"count", count}, {"mean_ms", mean_ms}, {"p50_ms", p50_ms}, {"p99_ms", p99_ms}, {"max_ms", max_ms}};
}

void LatencyRecorder::add(double ms) {
  std::lock_guard lock(mu_);
  if (samples_.size() < capacity_) {
    samples_.push_back(ms);
  } else {
    samples_[next_] = ms;
    next_ = (next_ + 1) % capacity_;
  }
}

LatencyStats LatencyRecorder::stats() const {
  std::vector<double> v;
  {
    std::lock_guard lock(mu_);
    v = samples_;
  }
  LatencyStats s;
  s.count = v.size();
  if (v.empty()) return s;
  std::sort(v.begin(), v.end());
  auto pct = [&](double p) {
    auto idx = static_cast<std::size_t>(std::ceil(p * static_cast<double>(v.size()))) - 1;
    return v[std::min(idx, v.size() - 1)];
  };
  s.mean_ms = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  s.p50_ms = pct(0.50);
  s.p99_ms = pct(0.99);
  s.max_ms = v.back();
  return s;
}

void LatencyRecorder::clear() {
  std::lock_guard lock(mu_);
  samples_.clear();
  next_ = 0;
}

json IngestStats::to_json() const {
  return {{"frames", frames},
          {"seq_gaps", seq_gaps},
          {"windows", windows},
          {"plot_dropped", plot_dropped},
          {"latency", latency.to_json()}};
}

SourceFactory tcp_source_factory() {
  return [](const EngineConfig& c, const kin::GuideBoard&) -> std::unique_ptr<FrameSource> {
    return std::make_unique<TcpFrameSource>(net::Endpoint::parse(c.device), c.recv_buffer_bytes);
  };
}

SourceFactory synthetic_source_factory(sim::SyntheticModel model, bool realtime) {
  return [model = std::move(model), realtime](const EngineConfig&,
                                              const kin::GuideBoard& board) -> std::unique_ptr<FrameSource> {
    return std::make_unique<sim::SyntheticSource>(model, sim::follow(board), realtime);
  };
}

}  // namespace myo::session

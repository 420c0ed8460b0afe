#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>

#include "myo/error.hpp"
#include "myo/session.hpp"

namespace myo::session {

using nlohmann::json;
using clock_type = std::chrono::steady_clock;

namespace {

constexpr std::uint64_t kJitterToleranceUs = 3000;
constexpr std::uint64_t kProgressEveryUs = 500000;

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

json error_json(const Error& e) { return {{"code", std::string(to_string(e.code()))}, {"message", e.what()}}; }

}  // namespace

struct Orchestrator::RecordJob {
  std::uint64_t id = 0;
  kin::MovementTemplate tmpl;
  kin::GuideTiming timing;
  std::uint8_t movement_index = 0;
  std::uint64_t duration_us = 0;
  bool started = false;
  std::uint64_t start_t = 0;
  std::uint64_t end_t = 0;
  std::uint64_t next_guide = 0;
  std::uint64_t last_progress = 0;
  Segment segment;
  clock_type::time_point wall_start;
};

struct Orchestrator::ValidateJob {
  std::uint64_t id = 0;
  std::vector<std::string> movements;
  kin::GuideTiming timing;
  std::uint64_t window_us = 0;
  std::size_t index = 0;
  bool started = false;
  std::uint64_t start_t = 0;
  std::uint64_t end_t = 0;
  kin::MovementTemplate tmpl;
  std::vector<MovementAccuracy> accuracy;
  clock_type::time_point wall_start;
};

struct Orchestrator::Ingest {
  std::unique_ptr<FrameSource> source;
  std::thread thread;
  std::atomic<bool> stop{false};
  std::size_t buffer_frames = kDefaultBufferFrames;
  std::uint64_t period_us = StreamConfig{}.frame_period_us();
  out::OutputKind output_kind = out::OutputKind::Null;

  // Guarded by mu: everything the command thread hands to ingestion.
  std::mutex mu;
  std::optional<RecordJob> record;
  std::optional<ValidateJob> validate;
  std::shared_ptr<const decoder::TrainedModel> model;
  conformal::Config conformal;
  kin::Catalog catalog;
  std::uint64_t model_version = 0;
};

class Orchestrator::Writer {
 public:
  explicit Writer(Orchestrator& owner) : owner_(owner), thread_([this] { run(); }) {}
  ~Writer() {
    {
      std::lock_guard lock(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    thread_.join();
  }

  void push(std::shared_ptr<const SessionRecording> rec, std::string path) {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return jobs_.size() < kCapacity || stop_; });
    jobs_.emplace_back(std::move(rec), std::move(path));
    cv_.notify_all();
  }

 private:
  static constexpr std::size_t kCapacity = 2;

  void run() {
    for (;;) {
      std::pair<std::shared_ptr<const SessionRecording>, std::string> job;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return !jobs_.empty() || stop_; });
        if (jobs_.empty()) return;
        job = std::move(jobs_.front());
        jobs_.pop_front();
        cv_.notify_all();
      }
      try {
        save_session(*job.first, job.second);
      } catch (const Error& e) {
        spdlog::error("autosave to {} failed: {}", job.second, e.what());
        owner_.emit({"error", error_json(e)});
      }
    }
  }

  Orchestrator& owner_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::pair<std::shared_ptr<const SessionRecording>, std::string>> jobs_;
  bool stop_ = false;
  std::thread thread_;
};

Orchestrator::Orchestrator(EngineConfig config, SourceFactory factory)
    : config_(std::move(config)), factory_(std::move(factory)) {
  config_.validate();
  catalog_ = config_.catalog_path.empty() ? kin::Catalog::defaults() : kin::Catalog::load(config_.catalog_path);
  recording_.catalog = catalog_;
  recording_.timing = config_.timing;
  recording_.created_at = utc_timestamp();
  recording_.session_id = "session-" + recording_.created_at;
  plot_.set_capacity(config_.plot_queue_frames);
}

Orchestrator::~Orchestrator() { stop(); }

void Orchestrator::start() {
  if (command_thread_.joinable()) return;
  {
    std::lock_guard lock(queue_mu_);
    stopping_ = false;
  }
  writer_ = std::make_unique<Writer>(*this);
  restart_senders();
  command_thread_ = std::thread([this] { command_loop(); });
}

void Orchestrator::stop() {
  {
    std::lock_guard lock(queue_mu_);
    stopping_ = true;
  }
  queue_cv_.notify_all();
  if (command_thread_.joinable()) command_thread_.join();
  if (train_thread_.joinable()) train_thread_.join();
  stop_ingest();
  {
    std::lock_guard lock(sender_mu_);
    prediction_sender_.reset();
    guide_sender_.reset();
  }
  writer_.reset();
  // fail whatever was still queued
  std::deque<Task> rest;
  {
    std::lock_guard lock(queue_mu_);
    rest.swap(queue_);
  }
}

void Orchestrator::post(Task task) {
  {
    std::lock_guard lock(queue_mu_);
    if (stopping_) return;
    queue_.push_back(std::move(task));
  }
  queue_cv_.notify_one();
}

void Orchestrator::command_loop() {
  for (;;) {
    Task task;
    {
      std::unique_lock lock(queue_mu_);
      queue_cv_.wait(lock, [&] { return !queue_.empty() || stopping_; });
      if (stopping_) return;
      task = std::move(queue_.front());
      queue_.pop_front();
    }
    task();
  }
}

std::future<json> Orchestrator::submit(Command command) {
  auto promise = std::make_shared<std::promise<json>>();
  auto future = promise->get_future();
  bool accepted = false;
  {
    std::lock_guard lock(queue_mu_);
    if (!stopping_ && command_thread_.joinable()) {
      queue_.push_back([this, promise, command = std::move(command)] {
        try {
          promise->set_value(dispatch(command));
        } catch (...) {
          promise->set_exception(std::current_exception());
        }
      });
      accepted = true;
    }
  }
  if (accepted) {
    queue_cv_.notify_one();
  } else {
    promise->set_exception(std::make_exception_ptr(Error(Errc::InvalidTransition, "engine is not running")));
  }
  return future;
}

json Orchestrator::call(Command command, std::chrono::milliseconds timeout) {
  auto f = submit(std::move(command));
  if (f.wait_for(timeout) != std::future_status::ready) throw Error(Errc::IoError, "command timed out");
  return f.get();
}

std::uint64_t Orchestrator::subscribe(EventSink sink) {
  std::lock_guard lock(sinks_mu_);
  sinks_.emplace_back(++next_sink_, std::move(sink));
  return next_sink_;
}

void Orchestrator::unsubscribe(std::uint64_t id) {
  std::lock_guard lock(sinks_mu_);
  std::erase_if(sinks_, [&](const auto& s) { return s.first == id; });
}

void Orchestrator::emit(const Event& event) {
  std::lock_guard lock(sinks_mu_);
  for (const auto& s : sinks_) s.second(event);
}

void Orchestrator::emit_state() { emit({"state", state_json()}); }

Phase Orchestrator::phase() const {
  std::lock_guard lock(mu_);
  return phase_;
}

bool Orchestrator::wait_for_phase(Phase phase, std::chrono::milliseconds timeout) const {
  std::unique_lock lock(mu_);
  return phase_cv_.wait_for(lock, timeout, [&] { return phase_ == phase; });
}

bool Orchestrator::wait_while_phase(Phase phase, std::chrono::milliseconds timeout) const {
  std::unique_lock lock(mu_);
  return phase_cv_.wait_for(lock, timeout, [&] { return phase_ != phase; });
}

void Orchestrator::set_phase(Phase phase) {
  {
    std::lock_guard lock(mu_);
    phase_ = phase;
    if (phase != Phase::Recording && phase != Phase::Validating) {
      active_movement_.clear();
      t_remaining_s_ = 0.0;
      rep_ = 0;
      active_job_ = 0;
    }
  }
  phase_cv_.notify_all();
  emit_state();
}

Phase Orchestrator::resting_phase() const {
  std::lock_guard lock(mu_);
  if (connected_) return Phase::Monitoring;
  return recording_.segments.empty() && !model_ ? Phase::Disconnected : Phase::Idle;
}

void Orchestrator::require(bool ok, const std::string& what) const {
  if (!ok) throw Error(Errc::InvalidTransition, what + " not allowed in phase " + to_string(phase()));
}

json Orchestrator::state_json() const {
  std::lock_guard lock(mu_);
  return state_json_locked();
}

json Orchestrator::state_json_locked() const {
  json recs = json::array();
  for (const auto& s : recording_.segments) {
    recs.push_back({{"movement", s.movement}, {"frames", s.frames.size()}, {"guide", s.guide.size()}});
  }
  json model = {{"trained", model_ != nullptr}};
  if (model_) {
    model["classes"] = model_->classes;
    model["calibrated"] = model_->raps.calibrated();
    model["q_hat"] = model_->raps.q_hat ? json(*model_->raps.q_hat) : json(nullptr);
  }
  return {{"phase", to_string(phase_)},
          {"movement", active_movement_},
          {"t_remaining_s", t_remaining_s_},
          {"rep", rep_},
          {"device",
           {{"connected", connected_},
            {"addr", config_.device},
            {"frames", frames_.load()},
            {"seq_gaps", seq_gaps_.load()}}},
          {"model", model},
          {"recordings", recs},
          {"plot_dropped", plot_.dropped()},
          {"last_error", last_error_}};
}

IngestStats Orchestrator::stats() const {
  IngestStats s;
  s.frames = frames_.load();
  s.seq_gaps = seq_gaps_.load();
  s.windows = windows_.load();
  s.plot_dropped = plot_.dropped();
  s.latency = latency_.stats();
  return s;
}

void Orchestrator::reset_latency() { latency_.clear(); }

std::uint64_t Orchestrator::prediction_datagrams() const {
  std::lock_guard lock(sender_mu_);
  return prediction_sender_ ? prediction_sender_->sent() : 0;
}

std::uint64_t Orchestrator::guide_datagrams() const {
  std::lock_guard lock(sender_mu_);
  return guide_sender_ ? guide_sender_->sent() : 0;
}

SessionRecording Orchestrator::recording() const {
  std::lock_guard lock(mu_);
  return recording_;
}

std::optional<decoder::TrainedModel> Orchestrator::model() const {
  std::lock_guard lock(mu_);
  if (!model_) return std::nullopt;
  return *model_;
}

std::optional<ValidationReport> Orchestrator::last_report() const {
  std::lock_guard lock(mu_);
  return report_;
}

std::optional<TrainResult> Orchestrator::last_training() const {
  std::lock_guard lock(mu_);
  return training_;
}

EngineConfig Orchestrator::config() const {
  std::lock_guard lock(mu_);
  return config_;
}

void Orchestrator::restart_senders() {
  EngineConfig c = config();
  auto target = [](const OutputConfig& o) {
    return out::OutputTarget{o.kind, net::Endpoint::parse(o.addr), o.rate_hz};
  };
  std::lock_guard lock(sender_mu_);
  prediction_sender_.reset();
  guide_sender_.reset();
  prediction_sender_ = std::make_unique<out::UdpSender>(target(c.output), prediction_cell_, c.output.interp_s);
  guide_sender_ = std::make_unique<out::UdpSender>(target(c.guide_output), guide_cell_, c.guide_output.interp_s);
  prediction_sender_->start();
  guide_sender_->start();
}

json Orchestrator::dispatch(const Command& c) {
  const auto& p = c.payload;
  if (c.type == "connect_device") return do_connect(p);
  if (c.type == "disconnect") return do_disconnect();
  if (c.type == "start_recording") return do_start_recording(p);
  if (c.type == "stop_recording") return do_stop_recording();
  if (c.type == "train") return do_train();
  if (c.type == "start_validation") return do_start_validation(p);
  if (c.type == "stop") return do_stop();
  if (c.type == "set_config") return do_set_config(p);
  if (c.type == "list_catalog") {
    std::lock_guard lock(mu_);
    return catalog_.to_json();
  }
  if (c.type == "remap_display") return do_remap(p);
  if (c.type == "get_state") return state_json();
  if (c.type == "get_config") return config().to_json();
  if (c.type == "get_stats") return stats().to_json();
  if (c.type == "get_report") {
    std::lock_guard lock(mu_);
    return report_ ? report_->to_json() : json(nullptr);
  }
  if (c.type == "load_session") return do_load_session(p);
  if (c.type == "save_session") return do_save_session(p);
  if (c.type == "load_model") return do_load_model(p);
  if (c.type == "save_model") return do_save_model(p);
  throw Error(Errc::InvalidArgument, "unknown command '" + c.type + "'");
}

json Orchestrator::do_connect(const json& p) {
  Phase ph = phase();
  require(ph == Phase::Disconnected || ph == Phase::Idle, "connect_device");
  if (p.contains("addr")) {
    std::lock_guard lock(mu_);
    config_.device = p.at("addr").get<std::string>();
  }
  EngineConfig c = config();
  auto ing = std::make_unique<Ingest>();
  ing->source = factory_(c, board_);
  ing->buffer_frames = c.buffer_frames;
  ing->output_kind = c.output.kind;
  ing->conformal = c.conformal;
  {
    std::lock_guard lock(mu_);
    ing->catalog = catalog_;
    ing->model = model_;
    connected_ = true;
  }
  frames_ = 0;
  seq_gaps_ = 0;
  windows_ = 0;
  latency_.clear();
  ingest_ = std::move(ing);
  ingest_->thread = std::thread([this, raw = ingest_.get()] { ingest_loop(*raw); });
  set_phase(Phase::Monitoring);
  return {{"phase", "Monitoring"}, {"addr", c.device}};
}

void Orchestrator::stop_ingest() {
  if (!ingest_) return;
  ingest_->stop = true;
  ingest_->source->interrupt();
  if (ingest_->thread.joinable()) ingest_->thread.join();
  ingest_.reset();
  board_.clear();
  std::lock_guard lock(mu_);
  connected_ = false;
}

json Orchestrator::do_disconnect() {
  if (!ingest_) return {{"phase", to_string(phase())}};
  stop_ingest();
  if (phase() != Phase::Training) set_phase(resting_phase());
  return {{"phase", to_string(phase())}};
}

json Orchestrator::do_start_recording(const json& p) {
  require(phase() == Phase::Monitoring && ingest_, "start_recording");
  std::string movement = p.at("movement").get<std::string>();
  if (movement == kin::kRest) throw Error(Errc::InvalidArgument, "rest is harvested from every segment, not recorded");
  double duration = p.value("duration_s", config().record_s);
  if (!(duration > 0)) throw Error(Errc::InvalidArgument, "duration_s must be positive");

  RecordJob job;
  {
    std::lock_guard lock(mu_);
    if (!catalog_.contains(movement)) throw Error(Errc::UnknownMovement, "movement '" + movement + "' not in catalog");
    job.tmpl = catalog_.effective(movement);
    auto ids = catalog_.ids();
    job.movement_index = static_cast<std::uint8_t>(std::find(ids.begin(), ids.end(), movement) - ids.begin());
    job.id = ++next_job_;
    active_job_ = job.id;
    active_movement_ = movement;
    t_remaining_s_ = duration;
  }
  job.duration_us = static_cast<std::uint64_t>(std::llround(duration * 1e6));
  job.timing = config().timing;
  job.segment.movement = movement;
  job.wall_start = clock_type::now();
  {
    std::lock_guard lock(ingest_->mu);
    ingest_->record = std::move(job);
  }
  set_phase(Phase::Recording);
  return {{"movement", movement}, {"duration_s", duration}};
}

json Orchestrator::do_stop_recording() {
  require(phase() == Phase::Recording, "stop_recording");
  std::optional<RecordJob> job;
  {
    std::lock_guard lock(ingest_->mu);
    job.swap(ingest_->record);
  }
  if (!job) return {{"complete", true}};  // finished on its own; completion is queued
  board_.clear();
  on_segment_done(job->id, std::move(job->segment), seconds_since(job->wall_start));
  return {{"complete", true}, {"truncated", true}};
}

void Orchestrator::on_segment_done(std::uint64_t job, Segment segment, double wall_s) {
  {
    std::lock_guard lock(mu_);
    if (phase_ != Phase::Recording || job != active_job_) return;
    if (!segment.frames.empty()) {
      recording_.put_segment(std::move(segment));
      phase_durations_["recording"] += wall_s;
    }
  }
  enqueue_save();
  set_phase(resting_phase());
}

void Orchestrator::enqueue_save() {
  std::shared_ptr<const SessionRecording> snapshot;
  std::string path;
  {
    std::lock_guard lock(mu_);
    if (config_.session_path.empty()) return;
    snapshot = std::make_shared<const SessionRecording>(recording_);
    path = config_.session_path;
  }
  writer_->push(std::move(snapshot), std::move(path));
}

json Orchestrator::do_train() {
  Phase ph = phase();
  require(ph == Phase::Idle || ph == Phase::Monitoring, "train");
  SessionRecording rec;
  EngineConfig c;
  {
    std::lock_guard lock(mu_);
    if (recording_.segments.empty()) throw Error(Errc::InvalidTransition, "train needs at least one recording");
    rec = recording_;
    c = config_;
  }
  if (train_thread_.joinable()) train_thread_.join();
  set_phase(Phase::Training);
  train_thread_ = std::thread([this, rec = std::move(rec), c = std::move(c)] {
    std::shared_ptr<TrainResult> result;
    std::exception_ptr error;
    try {
      result = std::make_shared<TrainResult>(train_session(rec, c));
    } catch (...) {
      error = std::current_exception();
    }
    post([this, result, error] { on_training_done(result, error); });
  });
  return {{"started", true}};
}

void Orchestrator::on_training_done(std::shared_ptr<TrainResult> result, std::exception_ptr error) {
  if (error) {
    json err;
    try {
      std::rethrow_exception(error);
    } catch (const Error& e) {
      err = error_json(e);
    } catch (const std::exception& e) {
      err = {{"code", "IoError"}, {"message", e.what()}};
    }
    {
      std::lock_guard lock(mu_);
      last_error_ = err.value("message", "");
    }
    emit({"error", err});
    set_phase(resting_phase());
    return;
  }
  auto model = std::make_shared<const decoder::TrainedModel>(result->model);
  std::string model_path;
  {
    std::lock_guard lock(mu_);
    model_ = model;
    training_ = *result;
    phase_durations_["training"] = result->total_s;
    model_path = config_.model_path;
  }
  if (ingest_) {
    std::lock_guard lock(ingest_->mu);
    ingest_->model = model;
    ++ingest_->model_version;
  }
  if (!model_path.empty()) {
    try {
      decoder::save_model(*model, model_path);
    } catch (const Error& e) {
      emit({"error", error_json(e)});
    }
  }
  json payload = result->to_json();
  payload["kind"] = "training";
  emit({"report", payload});
  set_phase(resting_phase());
}

json Orchestrator::do_start_validation(const json& p) {
  std::vector<std::string> movements;
  EngineConfig c = config();
  {
    std::lock_guard lock(mu_);
    if (!model_) throw Error(Errc::NoModel, "no trained model");
    for (const auto& id : model_->classes) {
      if (id != kin::kRest) movements.push_back(id);
    }
  }
  require(phase() == Phase::Monitoring && ingest_, "start_validation");
  if (p.contains("movements")) movements = p.at("movements").get<std::vector<std::string>>();
  int reps = p.value("reps", c.validation_reps);
  double window_s = p.value("window_s", c.validation_window_s);
  if (movements.empty()) throw Error(Errc::InvalidArgument, "no movements to validate");

  ValidateJob job;
  {
    std::lock_guard lock(mu_);
    for (const auto& m : movements) {
      if (!catalog_.contains(m)) throw Error(Errc::UnknownMovement, "movement '" + m + "' not in catalog");
    }
    job.id = ++next_job_;
    active_job_ = job.id;
    active_movement_ = movements.front();
    rep_ = 1;
  }
  job.movements = movements;
  job.timing = kin::GuideTiming::for_window(window_s, reps, c.timing.hold_s);
  job.window_us = static_cast<std::uint64_t>(std::llround(window_s * 1e6));
  job.wall_start = clock_type::now();
  {
    std::lock_guard lock(ingest_->mu);
    ingest_->validate = std::move(job);
  }
  set_phase(Phase::Validating);
  return {{"movements", movements}, {"reps", reps}, {"window_s", window_s}};
}

void Orchestrator::on_validation_done(std::uint64_t job, ValidationReport report) {
  {
    std::lock_guard lock(mu_);
    if (phase_ != Phase::Validating || job != active_job_) return;
    phase_durations_["validation"] = report.durations_s["validation"];
    for (const auto& [k, v] : phase_durations_) report.durations_s[k] = v;
    report_ = report;
  }
  json payload = report.to_json();
  payload["kind"] = "validation";
  emit({"report", payload});
  set_phase(resting_phase());
}

json Orchestrator::do_stop() {
  Phase ph = phase();
  if (ph == Phase::Recording || ph == Phase::Validating) {
    {
      std::lock_guard lock(ingest_->mu);
      ingest_->record.reset();
      ingest_->validate.reset();
    }
    board_.clear();
    set_phase(resting_phase());
  }
  return {{"phase", to_string(phase())}};
}

json Orchestrator::do_set_config(const json& p) {
  std::string key = p.at("key").get<std::string>();
  const json& value = p.at("value");
  conformal::Config conf;
  std::size_t plot_frames;
  {
    std::lock_guard lock(mu_);
    EngineConfig next = config_;
    next.set(key, value);
    config_ = next;
    conf = config_.conformal;
    plot_frames = config_.plot_queue_frames;
  }
  plot_.set_capacity(plot_frames);
  if (key.rfind("output", 0) == 0 || key.rfind("guide_output", 0) == 0) restart_senders();
  if (key.rfind("conformal", 0) == 0 && ingest_) {
    std::lock_guard lock(ingest_->mu);
    ingest_->conformal = conf;
    ++ingest_->model_version;
  }
  return {{"key", key}, {"value", value}};
}

json Orchestrator::do_remap(const json& p) {
  Phase ph = phase();
  require(ph != Phase::Recording && ph != Phase::Validating, "remap_display");
  std::string movement = p.at("movement").get<std::string>();
  std::string display = p.at("display").get<std::string>();
  kin::Catalog cat;
  {
    std::lock_guard lock(mu_);
    catalog_.remap_display(movement, display);
    recording_.catalog = catalog_;
    cat = catalog_;
  }
  if (ingest_) {
    std::lock_guard lock(ingest_->mu);
    ingest_->catalog = cat;
  }
  return cat.to_json();
}

json Orchestrator::do_load_session(const json& p) {
  Phase ph = phase();
  require(ph == Phase::Disconnected || ph == Phase::Idle || ph == Phase::Monitoring, "load_session");
  auto rec = load_session(p.at("path").get<std::string>());
  json summary = json::array();
  kin::Catalog cat;
  {
    std::lock_guard lock(mu_);
    recording_ = std::move(rec);
    catalog_ = recording_.catalog;
    cat = catalog_;
    for (const auto& s : recording_.segments) summary.push_back({{"movement", s.movement}, {"frames", s.frames.size()}});
  }
  if (ingest_) {
    std::lock_guard lock(ingest_->mu);
    ingest_->catalog = cat;
  }
  set_phase(resting_phase());
  return {{"segments", summary}};
}

json Orchestrator::do_save_session(const json& p) {
  SessionRecording rec;
  std::string path;
  {
    std::lock_guard lock(mu_);
    rec = recording_;
    path = p.value("path", config_.session_path);
  }
  if (path.empty()) throw Error(Errc::InvalidArgument, "no session path");
  save_session(rec, path);
  return {{"path", path}, {"frames", rec.frame_count()}};
}

json Orchestrator::do_load_model(const json& p) {
  Phase ph = phase();
  require(ph != Phase::Training && ph != Phase::Validating, "load_model");
  kin::Catalog cat;
  {
    std::lock_guard lock(mu_);
    cat = catalog_;
  }
  auto loaded = decoder::load_model(p.at("path").get<std::string>(), &cat);
  auto model = std::make_shared<const decoder::TrainedModel>(std::move(loaded.model));
  {
    std::lock_guard lock(mu_);
    model_ = model;
  }
  if (ingest_) {
    std::lock_guard lock(ingest_->mu);
    ingest_->model = model;
    ++ingest_->model_version;
  }
  set_phase(resting_phase());
  return {{"classes", model->classes}, {"warnings", loaded.warnings}};
}

json Orchestrator::do_save_model(const json& p) {
  std::shared_ptr<const decoder::TrainedModel> model;
  std::string path;
  {
    std::lock_guard lock(mu_);
    model = model_;
    path = p.value("path", config_.model_path);
  }
  if (!model) throw Error(Errc::NoModel, "no trained model");
  if (path.empty()) throw Error(Errc::InvalidArgument, "no model path");
  decoder::save_model(*model, path);
  return {{"path", path}};
}

void Orchestrator::on_device_lost(std::string reason) {
  if (!ingest_) return;
  spdlog::warn("device lost: {}", reason);
  stop_ingest();
  {
    std::lock_guard lock(mu_);
    last_error_ = reason;
  }
  emit({"error", {{"code", "DeviceLost"}, {"message", reason}}});
  if (phase() != Phase::Training) set_phase(resting_phase());
}

void Orchestrator::ingest_loop(Ingest& ing) {
  const std::uint64_t period = ing.period_us;
  FrameBuffer buffer(ing.buffer_frames, kJitterToleranceUs, period);
  std::optional<LivePipeline> pipe;
  std::uint64_t pipe_version = ~std::uint64_t{0};
  std::optional<std::uint32_t> last_seq;

  while (!ing.stop) {
    std::optional<EmgFrame> frame;
    try {
      frame = ing.source->next(std::chrono::milliseconds(100));
    } catch (const Error& e) {
      if (!ing.stop) post([this, msg = std::string(e.what())] { on_device_lost(msg); });
      return;
    }
    if (!frame) continue;
    const auto t0 = ing.source->received_at() == clock_type::time_point{} ? clock_type::now()
                                                                         : ing.source->received_at();
    const EmgFrame& f = *frame;
    ++frames_;
    if (last_seq && f.seq != *last_seq + 1) ++seq_gaps_;
    last_seq = f.seq;
    plot_.push(f);
    buffer.push(f);

    std::vector<Event> events;
    {
      std::lock_guard lock(ing.mu);
      if (pipe_version != ing.model_version) {
        pipe_version = ing.model_version;
        if (ing.model) {
          pipe.emplace(ing.model, ing.conformal);
        } else {
          pipe.reset();
        }
      }

      if (ing.record) {
        auto& r = *ing.record;
        if (!r.started) {
          r.started = true;
          r.start_t = f.t_us;
          r.end_t = f.t_us + r.duration_us;
          r.last_progress = f.t_us;
          board_.show({r.tmpl, r.timing, r.start_t, r.end_t});
        }
        if (f.t_us >= r.end_t) {
          board_.clear();
          post([this, id = r.id, seg = std::move(r.segment), wall = seconds_since(r.wall_start)]() mutable {
            on_segment_done(id, std::move(seg), wall);
          });
          ing.record.reset();
        } else {
          r.segment.frames.push_back(f);
          for (;;) {
            std::uint64_t t = guide_time_us(r.start_t, r.next_guide);
            if (t >= f.t_us + period || t >= r.end_t) break;
            auto gp = kin::guide_trajectory(r.tmpl, r.timing, static_cast<double>(t - r.start_t) * 1e-6);
            r.segment.guide.push_back({t, quantize_f32(gp.state), r.movement_index});
            ++r.next_guide;
          }
          if (f.t_us - r.last_progress >= kProgressEveryUs) {
            r.last_progress = f.t_us;
            std::lock_guard state_lock(mu_);
            t_remaining_s_ = static_cast<double>(r.end_t - f.t_us) * 1e-6;
            events.push_back({"state", state_json_locked()});
          }
        }
      }

      if (ing.validate) {
        auto& v = *ing.validate;
        if (!v.started || f.t_us >= v.end_t) {
          if (v.started) ++v.index;
          if (v.index == v.movements.size()) {
            board_.clear();
            ValidationReport report;
            report.source = "live";
            report.conformal_enabled = pipe && pipe->conformal_active();
            report.movements = v.accuracy;
            report.durations_s["validation"] = seconds_since(v.wall_start);
            post([this, id = v.id, report = std::move(report)]() mutable { on_validation_done(id, std::move(report)); });
            ing.validate.reset();
          } else {
            v.started = true;
            v.start_t = f.t_us;
            v.end_t = f.t_us + v.window_us;
            v.tmpl = ing.catalog.effective(v.movements[v.index]);
            v.accuracy.push_back({v.movements[v.index]});
            board_.show({v.tmpl, v.timing, v.start_t, v.end_t});
            if (pipe) pipe->reset();
            std::lock_guard state_lock(mu_);
            active_movement_ = v.movements[v.index];
            rep_ = 1;
            events.push_back({"state", state_json_locked()});
          }
        }
      }

      auto guide = board_.sample(f.t_us);
      guide_cell_.store({f.t_us, guide.point.state, 0.0, 0.0});
      const bool guiding = ing.record || ing.validate;
      if (guiding) {
        events.push_back({"guide",
                          {{"t_us", f.t_us},
                           {"movement", guide.movement},
                           {"activation", guide.point.activation},
                           {"state", guide.point.state}}});
      }

      if (pipe && buffer.full()) {
        auto o = pipe->process(buffer);
        ++windows_;
        const auto& classes = pipe->model().classes;
        const std::string& cls = classes[o.solved];
        out::OutputSample sample{f.t_us, {}, 0.0, 0.0};
        if (ing.catalog.contains(cls)) sample.state = kin::class_to_state(cls, ing.catalog);
        if (ing.output_kind == out::OutputKind::Cursor2d) {
          try {
            auto c = out::map_cursor(cls);
            sample.cursor_x = c.x;
            sample.cursor_y = c.y;
          } catch (const Error&) {
          }
        }
        prediction_cell_.store(sample);
        latency_.add(std::chrono::duration<double, std::milli>(clock_type::now() - t0).count());

        if (ing.validate && ing.validate->started && buffer.oldest().t_us >= ing.validate->start_t) {
          auto& v = *ing.validate;
          const auto j = paired_guide_index(v.start_t, v.end_t, buffer.oldest().t_us, buffer.newest().t_us, period);
          const std::uint64_t tg = guide_time_us(v.start_t, j);
          auto gp = kin::guide_trajectory(v.tmpl, v.timing, static_cast<double>(tg - v.start_t) * 1e-6);
          const std::string truth = kin::label(quantize_f32(gp.state), v.tmpl);
          auto& acc = v.accuracy.back();
          ++acc.samples;
          acc.naive_correct += classes[o.naive] == truth;
          acc.conformal_correct += cls == truth;
          int rep = static_cast<int>(static_cast<double>(f.t_us - v.start_t) * 1e-6 / v.timing.period_s()) + 1;
          std::lock_guard state_lock(mu_);
          rep_ = rep;
          t_remaining_s_ = static_cast<double>(v.end_t - std::min(v.end_t, f.t_us)) * 1e-6;
        }

        json labels = json::array();
        for (auto l : o.set.labels) labels.push_back(classes[l]);
        events.push_back({"prediction",
                          {{"t_us", f.t_us},
                           {"class", cls},
                           {"naive", classes[o.naive]},
                           {"set", labels},
                           {"certain", o.set.certain},
                           {"probs", o.probs.probs},
                           {"state", sample.state},
                           {"cursor", {sample.cursor_x, sample.cursor_y}}}});
      } else {
        latency_.add(std::chrono::duration<double, std::milli>(clock_type::now() - t0).count());
      }
    }
    for (const auto& e : events) emit(e);
  }
}

}  // namespace myo::session

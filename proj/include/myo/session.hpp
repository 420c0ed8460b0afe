#pragma once

#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "myo/conformal.hpp"
#include "myo/decoder.hpp"
#include "myo/io_out.hpp"
#include "myo/kinematics.hpp"
#include "myo/plot.hpp"
#include "myo/proto.hpp"
#include "myo/recording.hpp"
#include "myo/simdev.hpp"

namespace myo::session {

enum class Phase { Disconnected, Monitoring, Recording, Training, Validating, Idle };

std::string to_string(Phase phase);

struct OutputConfig {
  out::OutputKind kind = out::OutputKind::Null;
  std::string addr = "127.0.0.1:5570";
  double rate_hz = 32.0;
  double interp_s = 0.25;  // 0 disables smoothing
};

struct EngineConfig {
  std::string device = "127.0.0.1:5566";
  int recv_buffer_bytes = 0;
  std::size_t buffer_frames = kDefaultBufferFrames;
  kin::GuideTiming timing;
  double record_s = 30.0;
  gbdt::Params gbdt;
  conformal::Config conformal;
  double test_fraction = 0.2;
  double calibration_fraction = 0.125;
  OutputConfig output;
  OutputConfig guide_output{out::OutputKind::Null, "127.0.0.1:5571", 60.0, 0.0};
  int validation_reps = 6;
  double validation_window_s = 45.0;
  std::string session_path;  // autosaved after every segment when set
  std::string model_path;    // written after training when set
  std::string catalog_path;
  std::size_t plot_queue_frames = 64;

  nlohmann::json to_json() const;
  // Missing keys keep their defaults. Throws Error{InvalidArgument}.
  static EngineConfig from_json(const nlohmann::json& j);
  static EngineConfig load(const std::string& path);
  // Reads the JSON file named by MYO_CONFIG, or defaults.
  static EngineConfig from_env();
  // Dotted key such as "output.rate_hz". Throws Error{InvalidArgument}.
  void set(const std::string& key, const nlohmann::json& value);
  void validate() const;
};

struct MovementAccuracy {
  std::string movement;
  std::size_t samples = 0;
  std::size_t naive_correct = 0;
  std::size_t conformal_correct = 0;

  double naive() const noexcept;
  double conformal() const noexcept;
};

struct ValidationReport {
  std::string source;  // "holdout" or "live"
  std::vector<MovementAccuracy> movements;
  std::map<std::string, double> durations_s;
  bool conformal_enabled = true;

  // Mean and sample standard deviation across movements.
  std::pair<double, double> naive_summary() const;
  std::pair<double, double> conformal_summary() const;
  nlohmann::json to_json() const;
};

// Runtime decoding of one window: features, softmax, conformal set and the
// temporal solver. Owned by a single thread.
class LivePipeline {
 public:
  LivePipeline(std::shared_ptr<const decoder::TrainedModel> model, conformal::Config config);

  struct Output {
    dsp::FeatureVector features;
    SoftmaxOutput probs;
    conformal::PredictionSet set;
    std::size_t naive = 0;
    std::size_t solved = 0;
  };
  Output process(const FrameBuffer& buffer);
  Output process(const dsp::FeatureVector& features);
  void reset() noexcept { solver_.clear(); }
  bool conformal_active() const noexcept;
  const decoder::TrainedModel& model() const noexcept { return *model_; }

 private:
  std::shared_ptr<const decoder::TrainedModel> model_;
  conformal::Config config_;
  conformal::SolverWindow solver_;
};

// Index of the 60 Hz guide sample paired with the feature window whose frames
// start at first_t_us and last_t_us, inside a span [start_t_us, end_t_us).
// The window centre is snapped to the frame grid counted from start_t_us,
// then matched to the nearest guide sample before end_t_us.
std::uint64_t paired_guide_index(std::uint64_t start_t_us, std::uint64_t end_t_us, std::uint64_t first_t_us,
                                 std::uint64_t last_t_us, std::uint64_t period_us);

// Held-out evaluation on the dataset's test split, paired naive and
// conformal outputs from the same softmax stream.
ValidationReport evaluate_holdout(const decoder::TrainedModel& model, const decoder::Dataset& ds,
                                  const SessionRecording& rec, const conformal::Config& config);

struct TrainResult {
  decoder::TrainedModel model;
  ValidationReport holdout;
  gbdt::TrainLog log;
  std::size_t samples = 0;
  std::size_t train_samples = 0;
  double assemble_s = 0.0;
  double fit_s = 0.0;
  double total_s = 0.0;

  nlohmann::json to_json() const;
};

// Assemble, normalise, boost, calibrate and evaluate.
TrainResult train_session(const SessionRecording& rec, const EngineConfig& config);

struct LatencyStats {
  std::size_t count = 0;
  double mean_ms = 0.0;
  double p50_ms = 0.0;
  double p99_ms = 0.0;
  double max_ms = 0.0;

  nlohmann::json to_json() const;
};

// Keeps the most recent samples and reports percentiles over them.
class LatencyRecorder {
 public:
  explicit LatencyRecorder(std::size_t capacity = 1 << 17) : capacity_(capacity) {}
  void add(double ms);
  LatencyStats stats() const;
  void clear();

 private:
  mutable std::mutex mu_;
  std::size_t capacity_;
  std::vector<double> samples_;
  std::size_t next_ = 0;
};

struct IngestStats {
  std::uint64_t frames = 0;
  std::uint64_t seq_gaps = 0;
  std::uint64_t windows = 0;
  std::uint64_t plot_dropped = 0;
  LatencyStats latency;

  nlohmann::json to_json() const;
};

struct Event {
  std::string type;  // state, prediction, guide, report, error
  nlohmann::json payload;
};
using EventSink = std::function<void(const Event&)>;

// The board is the orchestrator's displayed guide, for sources that simulate
// a participant following it.
using SourceFactory = std::function<std::unique_ptr<FrameSource>(const EngineConfig&, const kin::GuideBoard&)>;
SourceFactory tcp_source_factory();
// In-process simulated amplifier whose participant follows the guide.
SourceFactory synthetic_source_factory(sim::SyntheticModel model, bool realtime);

struct Command {
  std::string type;
  nlohmann::json payload = nlohmann::json::object();
};

// The single state machine behind the CLI and the gateway. Commands are
// serialised through one queue; a per-device ingestion thread feeds the
// recorder, the live decoder and the plot channel.
class Orchestrator {
 public:
  explicit Orchestrator(EngineConfig config = EngineConfig::from_env(),
                        SourceFactory factory = tcp_source_factory());
  ~Orchestrator();
  Orchestrator(const Orchestrator&) = delete;
  Orchestrator& operator=(const Orchestrator&) = delete;

  void start();
  void stop();

  // Result payload, or an Error carried by the future.
  std::future<nlohmann::json> submit(Command command);
  // submit() and wait. Throws Error.
  nlohmann::json call(Command command, std::chrono::milliseconds timeout = std::chrono::seconds(60));

  // Sinks run on engine threads and must not block.
  std::uint64_t subscribe(EventSink sink);
  void unsubscribe(std::uint64_t id);

  Phase phase() const;
  nlohmann::json state_json() const;
  bool wait_for_phase(Phase phase, std::chrono::milliseconds timeout) const;
  // Waits while the engine is in `phase`; true once it left.
  bool wait_while_phase(Phase phase, std::chrono::milliseconds timeout) const;

  IngestStats stats() const;
  void reset_latency();
  plot::PlotChannel& plot_channel() noexcept { return plot_; }
  kin::GuideBoard& guide_board() noexcept { return board_; }
  const out::LatestCell<out::OutputSample>& prediction_cell() const noexcept { return prediction_cell_; }
  const out::LatestCell<out::OutputSample>& guide_cell() const noexcept { return guide_cell_; }
  std::uint64_t prediction_datagrams() const;
  std::uint64_t guide_datagrams() const;

  SessionRecording recording() const;
  std::optional<decoder::TrainedModel> model() const;
  std::optional<ValidationReport> last_report() const;
  std::optional<TrainResult> last_training() const;
  EngineConfig config() const;

 private:
  struct RecordJob;
  struct ValidateJob;
  struct Ingest;

  using Task = std::function<void()>;
  void post(Task task);
  void command_loop();
  nlohmann::json dispatch(const Command& command);

  nlohmann::json do_connect(const nlohmann::json& payload);
  nlohmann::json do_disconnect();
  nlohmann::json do_start_recording(const nlohmann::json& payload);
  nlohmann::json do_stop_recording();
  nlohmann::json do_train();
  nlohmann::json do_start_validation(const nlohmann::json& payload);
  nlohmann::json do_stop();
  nlohmann::json do_set_config(const nlohmann::json& payload);
  nlohmann::json do_remap(const nlohmann::json& payload);
  nlohmann::json do_load_session(const nlohmann::json& payload);
  nlohmann::json do_save_session(const nlohmann::json& payload);
  nlohmann::json do_load_model(const nlohmann::json& payload);
  nlohmann::json do_save_model(const nlohmann::json& payload);

  void ingest_loop(Ingest& ing);
  void on_segment_done(std::uint64_t job, Segment segment, double wall_s);
  void on_validation_done(std::uint64_t job, ValidationReport report);
  void on_device_lost(std::string reason);
  void on_training_done(std::shared_ptr<TrainResult> result, std::exception_ptr error);

  void set_phase(Phase phase);
  Phase resting_phase() const;
  void require(bool ok, const std::string& what) const;
  void emit(const Event& event);
  void emit_state();
  void stop_ingest();
  void restart_senders();
  void enqueue_save();
  nlohmann::json state_json_locked() const;

  EngineConfig config_;
  SourceFactory factory_;
  kin::Catalog catalog_;

  mutable std::mutex mu_;
  mutable std::condition_variable phase_cv_;
  Phase phase_ = Phase::Disconnected;
  SessionRecording recording_;
  std::shared_ptr<const decoder::TrainedModel> model_;
  std::optional<ValidationReport> report_;
  std::optional<TrainResult> training_;
  std::map<std::string, double> phase_durations_;
  std::string active_movement_;
  double t_remaining_s_ = 0.0;
  int rep_ = 0;
  std::string last_error_;
  bool connected_ = false;
  std::uint64_t active_job_ = 0;
  std::uint64_t next_job_ = 0;

  std::mutex queue_mu_;
  std::condition_variable queue_cv_;
  std::deque<Task> queue_;
  bool stopping_ = false;
  std::thread command_thread_;

  std::unique_ptr<Ingest> ingest_;
  std::thread train_thread_;

  std::mutex sinks_mu_;
  std::vector<std::pair<std::uint64_t, EventSink>> sinks_;
  std::uint64_t next_sink_ = 0;

  kin::GuideBoard board_;
  plot::PlotChannel plot_;
  LatencyRecorder latency_;
  std::atomic<std::uint64_t> frames_{0};
  std::atomic<std::uint64_t> seq_gaps_{0};
  std::atomic<std::uint64_t> windows_{0};

  out::LatestCell<out::OutputSample> prediction_cell_;
  out::LatestCell<out::OutputSample> guide_cell_;
  std::unique_ptr<out::UdpSender> prediction_sender_;
  std::unique_ptr<out::UdpSender> guide_sender_;
  mutable std::mutex sender_mu_;

  // Serialises session autosaves off the command thread; a full queue makes
  // the caller wait instead of dropping a save.
  class Writer;
  std::unique_ptr<Writer> writer_;
};

}  // namespace myo::session

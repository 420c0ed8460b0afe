#include <doctest.h>

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>

#include "myo/error.hpp"
#include "myo/session.hpp"
#include "support.hpp"

using namespace myo;
using namespace myo::session;
using namespace std::chrono_literals;
using nlohmann::json;

namespace {

Errc code_of(auto fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return Errc::IoError;
}

EngineConfig quick_config() {
  EngineConfig c;
  c.gbdt.n_rounds = 40;
  c.validation_reps = 1;
  c.validation_window_s = 7.5;
  c.record_s = 6.0;
  return c;
}

sim::SyntheticModel sim_model() {
  return sim::SyntheticModel::one_hot({"thumb", "index", "middle"}, 8.0, 50.0, 4);
}

// Passes frames through until told to report the device as gone.
class DyingSource final : public FrameSource {
 public:
  DyingSource(std::unique_ptr<FrameSource> inner, const std::atomic<bool>& kill) : inner_(std::move(inner)), kill_(kill) {}
  std::optional<EmgFrame> next(std::chrono::milliseconds timeout) override {
    if (kill_) throw Error(Errc::DeviceLost, "peer closed");
    return inner_->next(timeout);
  }

 private:
  std::unique_ptr<FrameSource> inner_;
  const std::atomic<bool>& kill_;
};

struct EventLog {
  std::mutex mu;
  std::vector<Event> events;

  EventSink sink() {
    return [this](const Event& e) {
      std::lock_guard lock(mu);
      events.push_back(e);
    };
  }
  std::vector<Event> of(const std::string& type) {
    std::lock_guard lock(mu);
    std::vector<Event> out;
    for (const auto& e : events)
      if (e.type == type) out.push_back(e);
    return out;
  }
};

void record(Orchestrator& o, const std::string& movement, double seconds) {
  o.call({"start_recording", {{"movement", movement}, {"duration_s", seconds}}});
  REQUIRE(o.wait_while_phase(Phase::Recording, 30s));
}

}  // namespace

TEST_CASE("config defaults round-trip through json") {
  EngineConfig c;
  auto j = c.to_json();
  CHECK(j["buffer_frames"] == 20);
  CHECK(j["conformal"]["alpha"] == 0.1);
  CHECK(EngineConfig::from_json(j).to_json() == j);
  CHECK(EngineConfig::from_json(json::object()).to_json() == j);
}

TEST_CASE("config set with dotted keys") {
  EngineConfig c;
  c.set("output.rate_hz", 60.0);
  CHECK(c.output.rate_hz == 60.0);
  c.set("conformal.alpha", 0.2);
  CHECK(c.conformal.alpha == 0.2);
  c.set("record_s", 12);
  CHECK(c.record_s == 12.0);
  CHECK(code_of([&] { c.set("output.nonsense", 1); }) == Errc::InvalidArgument);
  CHECK(code_of([&] { c.set("output", 1); }) == Errc::InvalidArgument);
  CHECK(code_of([&] { c.set("conformal.alpha", 1.5); }) == Errc::InvalidArgument);
  // a rejected patch leaves the config untouched
  CHECK(c.conformal.alpha == 0.2);
}

TEST_CASE("config json is strict") {
  json j = {{"record_s", 5.0}, {"bogus", 1}};
  CHECK(code_of([&] { EngineConfig::from_json(j); }) == Errc::InvalidArgument);
  json k = {{"output", {{"kind", "virtual_hand"}, {"rat_hz", 10}}}};
  CHECK(code_of([&] { EngineConfig::from_json(k); }) == Errc::InvalidArgument);
}

TEST_CASE("config from MYO_CONFIG") {
  test::TempPath path(".json");
  {
    std::ofstream f(path.str());
    f << R"({"record_s": 9.5, "conformal": {"window": 10}})";
  }
  ::setenv("MYO_CONFIG", path.str().c_str(), 1);
  auto c = EngineConfig::from_env();
  ::unsetenv("MYO_CONFIG");
  CHECK(c.record_s == 9.5);
  CHECK(c.conformal.window == 10);
  CHECK(EngineConfig::from_env().record_s == 30.0);
}

TEST_CASE("guide pairing examples") {
  // window over frames 0..19: centre 90 ms, nearest 60 Hz sample is #5 at 83.3 ms
  CHECK(paired_guide_index(0, 2'000'000, 0, 171'000, 9000) == 5);
  // never past the end of the span
  CHECK(paired_guide_index(0, 100'000, 81'000, 252'000, 9000) < 6);
}

TEST_CASE("guide pairing ignores sub-frame arrival jitter") {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<std::uint64_t> frame(19, 3000);
  std::uniform_int_distribution<std::int64_t> jitter(-4000, 4000);
  const std::uint64_t start = 1'234'567, period = 9000, end = start + 30'000'000;
  for (int i = 0; i < 2000; ++i) {
    std::uint64_t last = start + frame(rng) * period;
    std::uint64_t first = last - 19 * period;
    auto j0 = paired_guide_index(start, end, first, last, period);
    auto d = jitter(rng);
    auto j1 = paired_guide_index(start, end, first + static_cast<std::uint64_t>(d), last + static_cast<std::uint64_t>(d),
                                 period);
    CHECK(j0 == j1);
    // the chosen sample is the nearest one to the window centre
    double centre = static_cast<double>(first + last + period) / 2.0;
    double best = std::abs(static_cast<double>(guide_time_us(start, j0)) - centre);
    CHECK(best <= std::abs(static_cast<double>(guide_time_us(start, j0 + 1)) - centre));
    if (j0 > 0) CHECK(best <= std::abs(static_cast<double>(guide_time_us(start, j0 - 1)) - centre));
  }
}

TEST_CASE("latency percentiles") {
  LatencyRecorder r;
  for (int i = 100; i >= 1; --i) r.add(i);
  auto s = r.stats();
  CHECK(s.count == 100);
  CHECK(s.mean_ms == doctest::Approx(50.5));
  CHECK(s.p50_ms == doctest::Approx(50.0).epsilon(0.02));
  CHECK(s.p99_ms == doctest::Approx(99.0).epsilon(0.02));
  CHECK(s.max_ms == 100.0);
  r.clear();
  CHECK(r.stats().count == 0);

  LatencyRecorder small(10);
  for (int i = 0; i < 100; ++i) small.add(i < 90 ? 1000.0 : 1.0);
  CHECK(small.stats().count == 10);
  CHECK(small.stats().max_ms == 1.0);
}

TEST_CASE("report summaries use the sample standard deviation") {
  ValidationReport r;
  r.movements = {{"thumb", 10, 10, 9}, {"index", 10, 8, 9}, {"middle", 10, 6, 9}};
  auto [nm, ns] = r.naive_summary();
  CHECK(nm == doctest::Approx(0.8));
  CHECK(ns == doctest::Approx(0.2));
  auto [cm, cs] = r.conformal_summary();
  CHECK(cm == doctest::Approx(0.9));
  CHECK(cs == doctest::Approx(0.0));
  auto j = r.to_json();
  CHECK(j["samples"] == 30);
  CHECK(j["naive"]["pooled"] == doctest::Approx(0.8));
  CHECK(j["movements"].size() == 3);
  CHECK(j["movements"][1]["naive_accuracy"] == doctest::Approx(0.8));
}

TEST_CASE("training a scripted session gives rest plus each movement") {
  auto rec = sim::scripted_session(sim_model(), {"thumb", "index", "middle"}, kin::GuideTiming{}, 12.0);
  auto cfg = quick_config();
  auto r = train_session(rec, cfg);
  CHECK(r.model.classes == std::vector<std::string>{"rest", "thumb", "index", "middle"});
  CHECK(r.model.raps.calibrated());
  CHECK(r.log.loss.size() == 41);
  CHECK(r.holdout.source == "holdout");
  CHECK(r.holdout.movements.size() == 3);
  CHECK(r.holdout.naive_summary().first > 0.8);
  auto j = r.to_json();
  CHECK(j["rounds"] == 40);
  CHECK(j["raps"]["q_hat"].is_number());

  SessionRecording empty;
  CHECK(code_of([&] { train_session(empty, cfg); }) == Errc::EmptyTrain);
}

TEST_CASE("holdout naive accuracy matches a direct argmax count") {
  auto rec = sim::scripted_session(sim_model(), {"thumb", "index"}, kin::GuideTiming{}, 12.0);
  auto ds = decoder::assemble(rec);
  auto m = decoder::train_gbdt(ds, quick_config().gbdt);
  m.raps = decoder::calibrate_raps(m, ds, conformal::Config{});
  auto rep = evaluate_holdout(m, ds, rec, conformal::Config{});
  std::size_t ok = 0, conf_ok = 0, n = 0;
  for (const auto& a : rep.movements) {
    n += a.samples;
    ok += a.naive_correct;
    conf_ok += a.conformal_correct;
  }
  std::size_t direct = 0;
  for (auto i : ds.split.test) direct += decoder::predict(m.gbdt, m.normalizer, ds.x.row(i)).argmax == static_cast<std::size_t>(ds.y[i]);
  CHECK(n == ds.split.test.size());
  CHECK(ok == direct);

  conformal::Config off;
  off.enabled = false;
  auto plain = evaluate_holdout(m, ds, rec, off);
  CHECK_FALSE(plain.conformal_enabled);
  for (const auto& a : plain.movements) CHECK(a.naive_correct == a.conformal_correct);
}

TEST_CASE("live pipeline without conformal is the argmax") {
  auto rec = sim::scripted_session(sim_model(), {"thumb", "index"}, kin::GuideTiming{}, 8.0);
  auto ds = decoder::assemble(rec);
  auto m = std::make_shared<decoder::TrainedModel>(decoder::train_gbdt(ds, quick_config().gbdt));
  m->raps = decoder::calibrate_raps(*m, ds, conformal::Config{});
  conformal::Config off;
  off.enabled = false;
  LivePipeline plain(m, off);
  LivePipeline conf(m, conformal::Config{});
  CHECK_FALSE(plain.conformal_active());
  CHECK(conf.conformal_active());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    dsp::FeatureVector f;
    std::copy(ds.x.row(i).begin(), ds.x.row(i).end(), f.rms.begin());
    auto a = plain.process(f);
    auto b = conf.process(f);
    CHECK(a.solved == a.naive);
    CHECK(a.probs.probs == b.probs.probs);
    CHECK(b.set.labels.front() == b.naive);
  }
}

TEST_CASE("orchestrator rejects commands out of phase") {
  Orchestrator o(quick_config(), synthetic_source_factory(sim_model(), false));
  o.start();
  CHECK(o.phase() == Phase::Disconnected);
  CHECK(code_of([&] { o.call({"start_recording", {{"movement", "thumb"}}}); }) == Errc::InvalidTransition);
  CHECK(code_of([&] { o.call({"train"}); }) == Errc::InvalidTransition);
  CHECK(code_of([&] { o.call({"start_validation"}); }) == Errc::NoModel);
  CHECK(code_of([&] { o.call({"stop_recording"}); }) == Errc::InvalidTransition);
  CHECK(code_of([&] { o.call({"frobnicate"}); }) == Errc::InvalidArgument);
  CHECK(code_of([&] { o.call({"save_model", {{"path", "/tmp/x.mgd"}}}); }) == Errc::NoModel);
  CHECK(o.call({"stop"})["phase"] == "Disconnected");
  o.stop();
  CHECK(code_of([&] { o.call({"get_state"}); }) == Errc::InvalidTransition);
}

TEST_CASE("orchestrator record, train and validate") {
  test::TempPath session_path(".mgr");
  test::TempPath model_path(".mgd");
  auto cfg = quick_config();
  cfg.session_path = session_path.str();
  cfg.model_path = model_path.str();
  Orchestrator o(cfg, synthetic_source_factory(sim_model(), false));
  EventLog log;
  o.subscribe(log.sink());
  o.start();

  auto r = o.call({"connect_device"});
  CHECK(r["phase"] == "Monitoring");
  CHECK(o.phase() == Phase::Monitoring);
  CHECK(code_of([&] { o.call({"connect_device"}); }) == Errc::InvalidTransition);
  CHECK(code_of([&] { o.call({"start_recording", {{"movement", "rest"}}}); }) == Errc::InvalidArgument);
  CHECK(code_of([&] { o.call({"start_recording", {{"movement", "wave"}}}); }) == Errc::UnknownMovement);
  CHECK(code_of([&] { o.call({"start_recording", {{"movement", "thumb"}, {"duration_s", 0}}}); }) ==
        Errc::InvalidArgument);

  SUBCASE("segments are lossless and re-recording replaces") {
    record(o, "thumb", 3.0);
    record(o, "thumb", 3.0);
    auto rec = o.recording();
    REQUIRE(rec.segments.size() == 1);
    const auto& seg = rec.segments[0];
    CHECK(seg.movement == "thumb");
    CHECK(seg.frames.size() >= 333);
    CHECK(seg.frames.size() <= 334);
    for (std::size_t i = 1; i < seg.frames.size(); ++i) CHECK(seg.frames[i].seq == seg.frames[i - 1].seq + 1);
    CHECK(seg.guide.size() == 180);
    CHECK(o.stats().seq_gaps == 0);
    // autosave lands on disk
    REQUIRE(test::eventually([&] { return std::filesystem::exists(session_path.str()); }, 5s));
    CHECK(test::eventually(
        [&] {
          try {
            return load_session(session_path.str()) == o.recording();
          } catch (const Error&) {
            return false;
          }
        },
        5s));
  }

  SUBCASE("stop aborts a recording and stop_recording keeps a truncated one") {
    // realtime pacing is off, so a long duration is needed to catch it mid-way
    o.call({"start_recording", {{"movement", "index"}, {"duration_s", 3600}}});
    CHECK(o.phase() == Phase::Recording);
    CHECK(code_of([&] { o.call({"remap_display", {{"movement", "index"}, {"display", "grasp"}}}); }) ==
          Errc::InvalidTransition);
    CHECK(o.call({"stop"})["phase"] == "Monitoring");
    CHECK(o.call({"stop"})["phase"] == "Monitoring");
    CHECK(o.recording().segments.empty());

    o.call({"start_recording", {{"movement", "index"}, {"duration_s", 3600}}});
    REQUIRE(test::eventually([&] { return o.state_json()["t_remaining_s"].get<double>() < 3599.0; }, 10s));
    auto res = o.call({"stop_recording"});
    CHECK(res["truncated"] == true);
    CHECK(o.phase() == Phase::Monitoring);
    REQUIRE(o.recording().segments.size() == 1);
    CHECK(o.recording().segments[0].frames.size() > 100);
  }

  SUBCASE("train then validate") {
    for (const auto* m : {"thumb", "index", "middle"}) record(o, m, 8.0);
    CHECK(o.state_json()["recordings"].size() == 3);
    o.call({"train"});
    REQUIRE(o.wait_while_phase(Phase::Training, 60s));
    CHECK(o.phase() == Phase::Monitoring);
    auto model = o.model();
    REQUIRE(model);
    CHECK(model->classes == std::vector<std::string>{"rest", "thumb", "index", "middle"});
    auto reports = log.of("report");
    REQUIRE(reports.size() == 1);
    CHECK(reports[0].payload["kind"] == "training");
    CHECK(test::eventually([&] { return std::filesystem::exists(model_path.str()); }, 5s));
    auto st = o.state_json();
    CHECK(st["model"]["trained"] == true);
    CHECK(st["model"]["calibrated"] == true);

    o.call({"start_validation", {{"movements", {"thumb", "index"}}}});
    REQUIRE(o.wait_while_phase(Phase::Validating, 60s));
    auto rep = o.last_report();
    REQUIRE(rep);
    CHECK(rep->source == "live");
    REQUIRE(rep->movements.size() == 2);
    CHECK(rep->movements[0].movement == "thumb");
    CHECK(rep->movements[0].samples > 700);
    CHECK(rep->naive_summary().first > 0.8);
    CHECK(rep->durations_s.count("training") == 1);
    CHECK(rep->durations_s.count("validation") == 1);
    CHECK(log.of("report").back().payload["kind"] == "validation");
    CHECK(o.call({"get_report"})["source"] == "live");
    CHECK(o.stats().windows > 0);

    SUBCASE("conformal off gives identical paired outputs") {
      o.call({"set_config", {{"key", "conformal.enabled"}, {"value", false}}});
      o.call({"start_validation", {{"movements", {"thumb"}}}});
      REQUIRE(o.wait_while_phase(Phase::Validating, 60s));
      auto off = o.last_report();
      REQUIRE(off);
      CHECK_FALSE(off->conformal_enabled);
      CHECK(off->movements[0].naive_correct == off->movements[0].conformal_correct);
    }

    SUBCASE("model save and load") {
      test::TempPath other(".mgd");
      o.call({"save_model", {{"path", other.str()}}});
      o.call({"disconnect"});
      CHECK(o.phase() == Phase::Idle);
      auto res = o.call({"load_model", {{"path", other.str()}}});
      CHECK(res["warnings"].empty());
      CHECK(*o.model() == *model);
      CHECK(code_of([&] { o.call({"load_model", {{"path", "/nonexistent/m.mgd"}}}); }) == Errc::IoError);
    }
  }

  SUBCASE("session save and load") {
    record(o, "thumb", 2.5);
    test::TempPath other(".mgr");
    auto res = o.call({"save_session", {{"path", other.str()}}});
    CHECK(res["frames"] == o.recording().frame_count());
    auto before = o.recording();
    o.call({"disconnect"});
    CHECK(o.phase() == Phase::Idle);
    CHECK(code_of([&] { o.call({"start_recording", {{"movement", "thumb"}}}); }) == Errc::InvalidTransition);
    o.call({"load_session", {{"path", other.str()}}});
    CHECK(o.recording() == before);
    CHECK(o.phase() == Phase::Idle);
  }

  SUBCASE("display remap applies outside recording") {
    auto cat = o.call({"remap_display", {{"movement", "thumb"}, {"display", "grasp"}}});
    CHECK(o.call({"list_catalog"}) == cat);
  }

  o.stop();
  o.stop();
}

TEST_CASE("state events carry monotone frame counts") {
  Orchestrator o(quick_config(), synthetic_source_factory(sim_model(), false));
  EventLog log;
  o.subscribe(log.sink());
  o.start();
  o.call({"connect_device"});
  record(o, "thumb", 4.0);
  o.stop();
  auto states = log.of("state");
  REQUIRE(states.size() > 3);
  std::uint64_t prev = 0;
  for (const auto& s : states) {
    auto f = s.payload["device"]["frames"].get<std::uint64_t>();
    CHECK(f >= prev);
    prev = f;
  }
  CHECK(states.front().payload["phase"] == "Monitoring");
  CHECK_FALSE(log.of("guide").empty());
}

TEST_CASE("device loss during recording falls back and discards the segment") {
  auto inner = synthetic_source_factory(sim_model(), false);
  std::atomic<int> connects{0};
  std::atomic<bool> kill{false};
  SourceFactory dying = [&](const EngineConfig& c, const kin::GuideBoard& b) -> std::unique_ptr<FrameSource> {
    ++connects;
    return std::make_unique<DyingSource>(inner(c, b), kill);
  };
  Orchestrator o(quick_config(), dying);
  EventLog log;
  o.subscribe(log.sink());
  o.start();
  o.call({"connect_device"});
  o.call({"start_recording", {{"movement", "thumb"}, {"duration_s", 3600}}});
  REQUIRE(test::eventually([&] { return o.state_json()["t_remaining_s"].get<double>() < 3599.0; }, 10s));
  kill = true;
  REQUIRE(o.wait_while_phase(Phase::Recording, 10s));
  CHECK(o.phase() == Phase::Disconnected);
  CHECK(o.recording().segments.empty());
  auto errors = log.of("error");
  REQUIRE(errors.size() == 1);
  CHECK(errors[0].payload["code"] == "DeviceLost");
  auto st = o.state_json();
  CHECK(st["device"]["connected"] == false);
  CHECK(st["last_error"] == "peer closed");

  // reconnecting works, and with data the resting phase is Idle
  kill = false;
  o.call({"connect_device"});
  CHECK(connects == 2);
  record(o, "thumb", 1.0);
  CHECK(o.recording().segments.size() == 1);
  CHECK(o.phase() == Phase::Monitoring);
  o.call({"disconnect"});
  CHECK(o.phase() == Phase::Idle);
  o.stop();
}

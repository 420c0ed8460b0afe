#include <doctest.h>

#include <chrono>
#include <cmath>
#include <random>
#include <set>

#include "myo/dsp.hpp"
#include "myo/error.hpp"
#include "myo/proto.hpp"
#include "myo/simdev.hpp"
#include "support.hpp"

using namespace myo;
using namespace std::chrono_literals;

namespace {

// RMS per channel over `seconds` of generated signal.
std::array<double, kChannels> measure_rms(const sim::SyntheticModel& model, const sim::DriveSignal& drive,
                                          double seconds) {
  std::array<double, kChannels> sumsq{};
  std::size_t n = 0;
  auto frames = static_cast<std::uint64_t>(seconds * 111.11);
  for (std::uint64_t i = 0; i < frames; ++i) {
    auto f = sim::synth_frame(model, drive, static_cast<std::uint32_t>(i), i * 9000);
    for (std::size_t c = 0; c < kChannels; ++c)
      for (std::size_t s = 0; s < kSamplesPerFrame; ++s) sumsq[c] += double(f.at(c, s)) * f.at(c, s);
    n += kSamplesPerFrame;
  }
  for (auto& v : sumsq) v = std::sqrt(v / static_cast<double>(n));
  return sumsq;
}

sim::SyntheticModel channel7_model(double snr) {
  sim::SyntheticModel m;
  m.snr = snr;
  sim::Pattern p{};
  p[7] = 1.0;
  m.patterns["thumb"] = p;
  return m;
}

}  // namespace

TEST_CASE("rest is at the noise floor") {
  auto m = channel7_model(10.0);
  auto rms = measure_rms(m, {"rest", 0.0}, 2.0);
  for (double r : rms) CHECK(r == doctest::Approx(m.noise_floor).epsilon(0.2));
}

TEST_CASE("full activation scales the patterned channel by 1 + snr") {
  auto m = channel7_model(10.0);
  auto rms = measure_rms(m, {"thumb", 1.0}, 2.0);
  CHECK(rms[7] == doctest::Approx(11.0 * m.noise_floor).epsilon(0.05));
  CHECK(rms[6] == doctest::Approx(m.noise_floor).epsilon(0.1));
}

TEST_CASE("rms grows monotonically with activation") {
  auto m = channel7_model(6.0);
  double prev = 0.0;
  for (double a : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    double r = measure_rms(m, {"thumb", a}, 1.0)[7];
    CHECK(r > prev);
    prev = r;
  }
}

TEST_CASE("generation is deterministic in seed and time") {
  auto m = channel7_model(6.0);
  CHECK(sim::synth_frame(m, {"thumb", 0.5}, 3, 27000) == sim::synth_frame(m, {"thumb", 0.5}, 3, 27000));
  auto other = m;
  other.seed = 2;
  CHECK_FALSE(sim::synth_frame(m, {"thumb", 0.5}, 3, 27000) == sim::synth_frame(other, {"thumb", 0.5}, 3, 27000));
}

TEST_CASE("unknown movement is rejected") {
  auto m = channel7_model(6.0);
  try {
    sim::synth_frame(m, {"pinky", 1.0}, 0, 0);
    FAIL("expected UnknownMovement");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::UnknownMovement);
  }
}

TEST_CASE("one-hot patterns have distinct argmax channels") {
  auto m = sim::SyntheticModel::one_hot({"rest", "thumb", "index", "middle", "ring", "pinky", "grasp", "pinch2",
                                         "pinch3"});
  std::set<std::size_t> argmax;
  for (const auto& [id, p] : m.patterns) {
    CHECK(*std::max_element(p.begin(), p.end()) == 1.0);
    argmax.insert(static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin()));
  }
  CHECK(argmax.size() == 8);
}

TEST_CASE("feature argmax of a channel-7 pattern stays next to channel 7") {
  auto m = channel7_model(6.0);
  FrameBuffer buf;
  for (std::uint32_t s = 0; s < 20; ++s) buf.push(sim::synth_frame(m, {"thumb", 1.0}, s, s * 9000));
  auto f = dsp::extract_features(buf);
  auto k = static_cast<std::size_t>(std::max_element(f.rms.begin(), f.rms.end()) - f.rms.begin());
  CHECK((k == 6 || k == 7 || k == 8 || k == 23));
}

TEST_CASE("noisy channels are amplified") {
  auto m = channel7_model(6.0);
  m.noisy_channels = {1, 17};
  auto rms = measure_rms(m, {"rest", 0.0}, 1.0);
  CHECK(rms[1] > 5 * rms[0]);
  CHECK(rms[17] > 5 * rms[0]);
}

TEST_CASE("scripted session labels follow the guide") {
  auto m = sim::SyntheticModel::one_hot({"thumb", "index", "middle"});
  auto rec = sim::scripted_session(m, {"thumb", "index", "middle"}, kin::GuideTiming{}, 30.0);
  REQUIRE(rec.segments.size() == 3);
  double rest_s = 0.0, active_s = 0.0;
  for (const auto& seg : rec.segments) {
    auto tmpl = rec.catalog.at(seg.movement);
    for (const auto& g : seg.guide) {
      auto l = kin::label(g.state, tmpl);
      (l == "rest" ? rest_s : active_s) += 1.0 / 60.0;
      CHECK((l == "rest" || l == seg.movement));
    }
  }
  // three 30 s segments: at least 45 s of rest, about 15 s active each
  CHECK(rest_s >= 45.0 - 1e-6);
  CHECK(active_s / 3 == doctest::Approx(15.0).epsilon(0.1));
}

TEST_CASE("empty movement list gives an empty session") {
  auto m = sim::SyntheticModel::one_hot({"thumb"});
  CHECK(sim::scripted_session(m, {}, kin::GuideTiming{}).segments.empty());
}

TEST_CASE("script spans are laid out back to back") {
  auto script = sim::SessionScript::from_json(
      nlohmann::json{{"lead_in_s", 1.0}, {"gap_s", 0.5},
                     {"blocks", {{{"movement", "thumb"}, {"repetitions", 2}}, {{"movement", "index"}}}}});
  auto spans = script.spans();
  REQUIRE(spans.size() == 2);
  CHECK(spans[0].start_t_us == 1'000'000);
  CHECK(spans[0].end_t_us == 16'000'000);
  CHECK(spans[1].start_t_us == 16'500'000);
  CHECK(spans[1].end_t_us == 46'500'000);
  auto drive = sim::script_drive(script, kin::Catalog::defaults());
  CHECK(drive(500'000).movement_id == "rest");
  CHECK(drive(1'000'000 + 4'000'000).movement_id == "thumb");
  CHECK(drive(1'000'000 + 4'000'000).activation == 1.0);
}

TEST_CASE("replay server sends frames verbatim") {
  std::mt19937_64 rng(8);
  std::vector<EmgFrame> frames;
  for (std::uint32_t i = 0; i < 100; ++i) {
    auto f = test::random_frame(rng);
    f.seq = i;
    frames.push_back(f);
  }
  sim::ServeOptions opts;
  opts.bind.port = 0;
  opts.realtime = false;
  sim::SimServer server(frames, opts);
  server.start();
  TcpFrameSource src({"127.0.0.1", server.port()});
  std::vector<EmgFrame> got;
  while (got.size() < frames.size()) {
    auto f = src.next(2s);
    REQUIRE(f);
    got.push_back(*f);
  }
  CHECK(got == frames);
  server.stop();
}

TEST_CASE("fast synthetic server streams 10000 frames quickly") {
  auto m = sim::SyntheticModel::one_hot({"thumb"});
  sim::ServeOptions opts;
  opts.bind.port = 0;
  opts.realtime = false;
  sim::SimServer server(m, sim::rest_drive(), opts);
  server.start();
  TcpFrameSource src({"127.0.0.1", server.port()});
  auto t0 = std::chrono::steady_clock::now();
  std::uint32_t expect = 0;
  for (int i = 0; i < 10000; ++i) {
    auto f = src.next(2s);
    REQUIRE(f);
    CHECK(f->seq == expect++);
  }
  CHECK(std::chrono::steady_clock::now() - t0 < 30s);
  server.stop();
}

TEST_CASE("realtime server holds 111.1 frames per second") {
  auto m = sim::SyntheticModel::one_hot({"thumb"});
  sim::ServeOptions opts;
  opts.bind.port = 0;
  opts.realtime = true;
  sim::SimServer server(m, sim::rest_drive(), opts);
  server.start();
  TcpFrameSource src({"127.0.0.1", server.port()});
  REQUIRE(src.next(2s));
  auto t0 = std::chrono::steady_clock::now();
  std::size_t n = 0;
  while (std::chrono::steady_clock::now() - t0 < 10s) {
    if (src.next(100ms)) ++n;
  }
  CHECK(n >= 1107);
  CHECK(n <= 1115);
  server.stop();
}

TEST_CASE("busy port is reported") {
  auto m = sim::SyntheticModel::one_hot({"thumb"});
  sim::ServeOptions opts;
  opts.bind.port = 0;
  sim::SimServer a(m, sim::rest_drive(), opts);
  opts.bind.port = a.port();
  try {
    sim::SimServer b(m, sim::rest_drive(), opts);
    FAIL("expected PortInUse");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::PortInUse);
  }
}

#include "myo/simdev.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "myo/error.hpp"

namespace myo::sim {

void SyntheticModel::validate() const {
  std::set<std::size_t> argmaxes;
  for (const auto& [id, p] : patterns) {
    auto it = std::max_element(p.begin(), p.end());
    if (std::abs(*it - 1.0) > 1e-12) {
      throw Error(Errc::InvalidArgument, "pattern for '" + id + "' must have unit max");
    }
    for (double w : p) {
      if (w < 0.0) throw Error(Errc::InvalidArgument, "pattern weights must be non-negative");
    }
    if (!argmaxes.insert(static_cast<std::size_t>(it - p.begin())).second) {
      throw Error(Errc::InvalidArgument, "pattern for '" + id + "' shares its argmax channel");
    }
  }
  for (auto c : noisy_channels) {
    if (c >= kChannels) throw Error(Errc::InvalidArgument, "noisy channel out of range");
  }
  if (!(noise_floor > 0.0) || !(snr >= 0.0)) {
    throw Error(Errc::InvalidArgument, "noise_floor must be > 0 and snr >= 0");
  }
}

std::size_t SyntheticModel::one_hot_channel(std::size_t movement_index) noexcept {
  // stride 9 walks all 32 channels and keeps consecutive movements apart
  return (3 + 9 * movement_index) % kChannels;
}

SyntheticModel SyntheticModel::one_hot(const std::vector<std::string>& movements, double snr,
                                       double noise_floor, std::uint64_t seed) {
  SyntheticModel m;
  m.snr = snr;
  m.noise_floor = noise_floor;
  m.seed = seed;
  std::size_t i = 0;
  for (const auto& id : movements) {
    if (id == kin::kRest) continue;
    Pattern p{};
    p[one_hot_channel(i++)] = 1.0;
    m.patterns[id] = p;
  }
  m.validate();
  return m;
}

EmgFrame synth_frame(const SyntheticModel& model, const DriveSignal& drive, std::uint32_t seq,
                     std::uint64_t t_us) {
  const Pattern* pattern = nullptr;
  if (drive.movement_id != kin::kRest) {
    auto it = model.patterns.find(drive.movement_id);
    if (it == model.patterns.end()) {
      throw Error(Errc::UnknownMovement, "no synthetic pattern for '" + drive.movement_id + "'");
    }
    pattern = &it->second;
  }
  const double a = std::clamp(drive.activation, 0.0, 1.0);

  std::seed_seq sseq{static_cast<std::uint32_t>(model.seed), static_cast<std::uint32_t>(model.seed >> 32),
                     static_cast<std::uint32_t>(t_us), static_cast<std::uint32_t>(t_us >> 32)};
  std::mt19937_64 rng(sseq);
  std::normal_distribution<double> normal(0.0, 1.0);

  EmgFrame f;
  f.seq = seq;
  f.t_us = t_us;
  for (std::size_t c = 0; c < kChannels; ++c) {
    double sigma = model.noise_floor * (1.0 + model.snr * a * (pattern ? (*pattern)[c] : 0.0));
    if (std::find(model.noisy_channels.begin(), model.noisy_channels.end(), c) != model.noisy_channels.end()) {
      sigma *= model.noisy_gain;
    }
    for (std::size_t s = 0; s < kSamplesPerFrame; ++s) {
      double v = std::round(sigma * normal(rng));
      f.at(c, s) = static_cast<std::int16_t>(std::clamp(v, -32768.0, 32767.0));
    }
  }
  return f;
}

EmgFrame synth_frame(const SyntheticModel& model, const DriveSignal& drive, std::uint64_t t_us) {
  return synth_frame(model, drive, static_cast<std::uint32_t>(t_us / StreamConfig{}.frame_period_us()), t_us);
}

DriveFn rest_drive() {
  return [](std::uint64_t) { return DriveSignal{}; };
}

DriveFn follow(const kin::GuideBoard& board) {
  return [&board](std::uint64_t t_us) {
    auto s = board.sample(t_us);
    return DriveSignal{s.movement, s.point.activation};
  };
}

SessionScript SessionScript::from_json(const nlohmann::json& j) {
  SessionScript s;
  if (j.contains("timing")) s.timing = j.at("timing").get<kin::GuideTiming>();
  s.lead_in_s = j.value("lead_in_s", 0.0);
  s.gap_s = j.value("gap_s", 0.0);
  const auto& blocks = j.is_array() ? j : j.at("blocks");
  for (const auto& b : blocks) {
    ScriptBlock block;
    block.movement = b.at("movement").get<std::string>();
    block.repetitions = b.value("repetitions", 4);
    if (block.repetitions <= 0) throw Error(Errc::InvalidArgument, "repetitions must be positive");
    s.blocks.push_back(block);
  }
  if (s.lead_in_s < 0 || s.gap_s < 0) throw Error(Errc::InvalidArgument, "negative script timing");
  return s;
}

SessionScript SessionScript::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open script " + path);
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidArgument, "bad script " + path + ": " + e.what());
  }
}

std::vector<SessionScript::Span> SessionScript::spans() const {
  std::vector<Span> out;
  double t = lead_in_s;
  for (const auto& b : blocks) {
    double len = b.repetitions * timing.period_s();
    out.push_back({b.movement, static_cast<std::uint64_t>(std::llround(t * 1e6)),
                   static_cast<std::uint64_t>(std::llround((t + len) * 1e6))});
    t += len + gap_s;
  }
  return out;
}

std::uint64_t SessionScript::duration_us() const {
  auto s = spans();
  return s.empty() ? static_cast<std::uint64_t>(lead_in_s * 1e6) : s.back().end_t_us;
}

DriveFn script_drive(const SessionScript& script, const kin::Catalog& catalog) {
  for (const auto& b : script.blocks) catalog.at(b.movement);
  auto spans = script.spans();
  auto timing = script.timing;
  return [spans, timing](std::uint64_t t_us) {
    for (const auto& s : spans) {
      if (t_us >= s.start_t_us && t_us < s.end_t_us) {
        double t = static_cast<double>(t_us - s.start_t_us) * 1e-6;
        return DriveSignal{s.movement, kin::guide_activation(timing, t)};
      }
    }
    return DriveSignal{};
  };
}

SessionRecording scripted_session(const SyntheticModel& model, const std::vector<std::string>& movements,
                                  const kin::GuideTiming& timing, double segment_s, double gap_s,
                                  const kin::Catalog& catalog) {
  timing.validate();
  SessionRecording rec;
  rec.session_id = "scripted";
  rec.created_at = "1970-01-01T00:00:00Z";
  rec.catalog = catalog;
  rec.timing = timing;

  const std::uint64_t period = rec.stream.frame_period_us();
  const auto seg_us = static_cast<std::uint64_t>(std::llround(segment_s * 1e6));
  const auto gap_us = static_cast<std::uint64_t>(std::llround(gap_s * 1e6));
  const auto ids = catalog.ids();

  std::uint64_t seg_start = 0;
  for (const auto& id : movements) {
    auto tmpl = catalog.effective(id);
    auto movement_index = static_cast<std::uint8_t>(std::find(ids.begin(), ids.end(), id) - ids.begin());
    Segment seg;
    seg.movement = id;
    const std::uint64_t seg_end = seg_start + seg_us;
    for (std::uint64_t n = (seg_start + period - 1) / period; n * period < seg_end; ++n) {
      std::uint64_t t = n * period;
      double a = kin::guide_activation(timing, static_cast<double>(t - seg_start) * 1e-6);
      seg.frames.push_back(synth_frame(model, {id, a}, static_cast<std::uint32_t>(n), t));
    }
    for (std::uint64_t j = 0;; ++j) {
      std::uint64_t t = guide_time_us(seg_start, j);
      if (t >= seg_end) break;
      auto p = kin::guide_trajectory(tmpl, timing, static_cast<double>(t - seg_start) * 1e-6);
      seg.guide.push_back({t, quantize_f32(p.state), movement_index});
    }
    rec.segments.push_back(std::move(seg));
    seg_start = seg_end + gap_us;
  }
  return rec;
}

SyntheticSource::SyntheticSource(SyntheticModel model, DriveFn drive, bool realtime, StreamConfig stream)
    : model_(std::move(model)),
      drive_(std::move(drive)),
      realtime_(realtime),
      period_us_(stream.frame_period_us()),
      start_(std::chrono::steady_clock::now()) {
  model_.validate();
}

std::optional<EmgFrame> SyntheticSource::next(std::chrono::milliseconds timeout) {
  const std::uint64_t t = static_cast<std::uint64_t>(seq_) * period_us_;
  if (realtime_) {
    auto due = start_ + std::chrono::microseconds(t + period_us_);
    auto now = std::chrono::steady_clock::now();
    if (due - now > timeout) {
      std::this_thread::sleep_for(timeout);
      return std::nullopt;
    }
    std::this_thread::sleep_until(due);
  }
  auto f = synth_frame(model_, drive_(t), seq_, t);
  ++seq_;
  received_at_ = std::chrono::steady_clock::now();
  return f;
}

SimServer::SimServer(SyntheticModel model, DriveFn drive, ServeOptions options)
    : model_(std::move(model)), drive_(std::move(drive)), options_(std::move(options)) {
  model_->validate();
  listener_ = net::TcpListener::bind(options_.bind);
}

SimServer::SimServer(std::vector<EmgFrame> recording, ServeOptions options)
    : replay_(std::move(recording)), options_(std::move(options)) {
  listener_ = net::TcpListener::bind(options_.bind);
}

SimServer::~SimServer() { stop(); }

void SimServer::start() {
  thread_ = std::thread([this] { run(); });
}

void SimServer::stop() {
  stop_ = true;
  if (thread_.joinable()) thread_.join();
}

void SimServer::switch_drive(DriveFn drive) {
  std::lock_guard lock(control_mu_);
  control_.push_back(std::move(drive));
}

void SimServer::drain_control() {
  std::lock_guard lock(control_mu_);
  while (!control_.empty()) {
    drive_ = std::move(control_.front());
    control_.pop_front();
  }
}

void SimServer::run() {
  while (!stop_) {
    auto client = listener_.accept(std::chrono::milliseconds(50));
    if (!client) continue;
    ++clients_;
    if (options_.send_buffer_bytes > 0) client->set_send_buffer(options_.send_buffer_bytes);
    try {
      serve_client(*client);
    } catch (const Error& e) {
      spdlog::info("simdev: client disconnected ({})", e.what());
    }
  }
  listener_.close();
}

void SimServer::serve_client(net::TcpStream& client) {
  const std::uint64_t period = StreamConfig{}.frame_period_us();
  const auto start = std::chrono::steady_clock::now();
  FrameBytes buf;
  for (std::uint64_t n = 0; !stop_; ++n) {
    drain_control();
    if (!model_ && n >= replay_.size()) {
      if (options_.replay_close_at_end) return;
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
      continue;
    }
    if (options_.realtime) {
      std::this_thread::sleep_until(start + std::chrono::microseconds((n + 1) * period));
    }
    if (model_) {
      const std::uint64_t t = n * period;
      encode_frame(synth_frame(*model_, drive_(t), static_cast<std::uint32_t>(n), t), buf);
    } else {
      encode_frame(replay_[n], buf);
    }
    client.write_all(buf, &stop_);
    ++frames_sent_;
  }
}

}  // namespace myo::sim

#include "myo/kinematics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "myo/bytes.hpp"
#include "myo/error.hpp"

namespace myo::kin {

namespace {

MovementTemplate make(std::string id, std::initializer_list<std::size_t> active) {
  MovementTemplate t;
  t.id = std::move(id);
  for (auto c : active) t.target[c] = 1.0;
  t.display_id = t.id;
  return t;
}

}  // namespace

Catalog::Catalog(std::vector<MovementTemplate> templates) {
  for (auto& t : templates) add(std::move(t));
  if (!contains(kRest)) {
    templates_.insert(templates_.begin(), MovementTemplate{std::string(kRest), {}, std::string(kRest)});
  }
  for (const auto& t : templates_) {
    if (!contains(t.display_id)) {
      throw Error(Errc::InvalidArgument, "movement '" + t.id + "' displays unknown template '" +
                                             t.display_id + "'");
    }
  }
}

Catalog Catalog::defaults() {
  return Catalog({
      make("rest", {}),
      make("thumb", {kThumbFlexion}),
      make("index", {kIndexFlexion}),
      make("middle", {kMiddleFlexion}),
      make("ring", {kRingFlexion}),
      make("pinky", {kPinkyFlexion}),
      make("grasp", {kThumbFlexion, kIndexFlexion, kMiddleFlexion, kRingFlexion, kPinkyFlexion}),
      make("pinch2", {kThumbFlexion, kIndexFlexion}),
      make("pinch3", {kThumbFlexion, kIndexFlexion, kMiddleFlexion}),
  });
}

void Catalog::add(MovementTemplate t) {
  if (t.id.empty()) throw Error(Errc::InvalidArgument, "movement id must not be empty");
  for (double v : t.target) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw Error(Errc::InvalidArgument, "target of '" + t.id + "' leaves [0,1]");
    }
  }
  if (t.display_id.empty()) t.display_id = t.id;
  if (t.id == kRest) {
    for (double v : t.target) {
      if (v != 0.0) throw Error(Errc::InvalidArgument, "rest target must be all zeros");
    }
  }
  for (auto& existing : templates_) {
    if (existing.id == t.id) {
      existing = std::move(t);
      return;
    }
  }
  templates_.push_back(std::move(t));
}

Catalog Catalog::from_json(const nlohmann::json& j) {
  const auto& list = j.is_object() ? j.at("movements") : j;
  if (!list.is_array()) throw Error(Errc::InvalidArgument, "catalog must be a list of movements");
  std::vector<MovementTemplate> out;
  for (const auto& m : list) {
    MovementTemplate t;
    t.id = m.at("id").get<std::string>();
    auto target = m.at("target").get<std::vector<double>>();
    if (target.size() != kHandDims) {
      throw Error(Errc::InvalidArgument, "target of '" + t.id + "' must have 9 values");
    }
    std::copy(target.begin(), target.end(), t.target.begin());
    t.display_id = m.value("display_id", t.id);
    out.push_back(std::move(t));
  }
  return Catalog(std::move(out));
}

Catalog Catalog::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open catalog " + path);
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidArgument, "bad catalog " + path + ": " + e.what());
  }
}

nlohmann::json Catalog::to_json() const {
  auto list = nlohmann::json::array();
  for (const auto& t : templates_) {
    list.push_back({{"id", t.id},
                    {"target", std::vector<double>(t.target.begin(), t.target.end())},
                    {"display_id", t.display_id}});
  }
  return {{"movements", list}};
}

bool Catalog::contains(std::string_view id) const noexcept {
  for (const auto& t : templates_) {
    if (t.id == id) return true;
  }
  return false;
}

const MovementTemplate& Catalog::at(std::string_view id) const {
  for (const auto& t : templates_) {
    if (t.id == id) return t;
  }
  throw Error(Errc::UnknownClass, "unknown movement '" + std::string(id) + "'");
}

MovementTemplate Catalog::effective(std::string_view id) const {
  const auto& executed = at(id);
  MovementTemplate t = executed;
  t.target = at(executed.display_id).target;
  return t;
}

void Catalog::remap_display(std::string_view id, std::string_view display_id) {
  at(display_id);
  for (auto& t : templates_) {
    if (t.id == id) {
      t.display_id = std::string(display_id);
      return;
    }
  }
  throw Error(Errc::UnknownClass, "unknown movement '" + std::string(id) + "'");
}

std::vector<std::string> Catalog::ids() const {
  std::vector<std::string> out;
  out.reserve(templates_.size());
  for (const auto& t : templates_) out.push_back(t.id);
  return out;
}

std::string Catalog::hash() const {
  auto text = to_json().dump();
  auto crc = bytes::crc32({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
  char buf[9];
  std::snprintf(buf, sizeof(buf), "%08x", crc);
  return buf;
}

void GuideTiming::validate() const {
  if (!(hold_s >= 0.0)) throw Error(Errc::InvalidArgument, "hold_s must be >= 0");
  if (!(ramp_s > 0.0)) throw Error(Errc::InvalidArgument, "ramp_s must be > 0");
}

GuideTiming GuideTiming::for_window(double window_s, int reps, double hold_s) {
  if (reps <= 0 || !(window_s > 0.0)) {
    throw Error(Errc::InvalidArgument, "validation window and repetitions must be positive");
  }
  GuideTiming t;
  t.hold_s = hold_s;
  t.ramp_s = (window_s / reps - 2.0 * hold_s) / 2.0;
  t.validate();
  return t;
}

void to_json(nlohmann::json& j, const GuideTiming& t) {
  j = {{"hold_s", t.hold_s}, {"ramp_s", t.ramp_s}};
}

void from_json(const nlohmann::json& j, GuideTiming& t) {
  t.hold_s = j.value("hold_s", 1.5);
  t.ramp_s = j.value("ramp_s", 2.25);
  t.validate();
}

double guide_activation(const GuideTiming& timing, double t_s) noexcept {
  if (t_s < 0.0) return 0.0;
  const double h = timing.hold_s;
  const double r = timing.ramp_s;
  const double tau = std::fmod(t_s, timing.period_s());
  if (tau < h) return 0.0;
  if (tau < h + r) return 0.5 * (1.0 - std::cos(std::numbers::pi * (tau - h) / r));
  if (tau < 2.0 * h + r) return 1.0;
  return 0.5 * (1.0 + std::cos(std::numbers::pi * (tau - 2.0 * h - r) / r));
}

HandState scale(const HandState& target, double activation) noexcept {
  HandState s{};
  for (std::size_t i = 0; i < kHandDims; ++i) s[i] = activation * target[i];
  return s;
}

GuidePoint guide_trajectory(const MovementTemplate& tmpl, const GuideTiming& timing, double t_s) {
  GuidePoint p;
  p.activation = guide_activation(timing, t_s);
  p.state = scale(tmpl.target, p.activation);
  return p;
}

double activation_of(const HandState& guide, const MovementTemplate& tmpl) noexcept {
  double a = 0.0;
  for (std::size_t i = 0; i < kHandDims; ++i) {
    if (tmpl.target[i] != 0.0) a = std::max(a, guide[i]);
  }
  return a;
}

std::string label(const HandState& guide, const MovementTemplate& tmpl) {
  return activation_of(guide, tmpl) >= 0.5 ? tmpl.id : std::string(kRest);
}

HandState class_to_state(std::string_view class_id, const Catalog& catalog) {
  return catalog.effective(class_id).target;
}

}  // namespace myo::kin

namespace myo::kin {

void GuideBoard::show(GuideSchedule schedule) {
  std::lock_guard lock(mu_);
  schedule_ = std::move(schedule);
}

void GuideBoard::clear() {
  std::lock_guard lock(mu_);
  schedule_.reset();
}

std::optional<GuideSchedule> GuideBoard::current() const {
  std::lock_guard lock(mu_);
  return schedule_;
}

GuideBoard::Sample GuideBoard::sample(std::uint64_t t_us) const {
  std::lock_guard lock(mu_);
  Sample s;
  if (!schedule_ || t_us < schedule_->start_t_us || t_us >= schedule_->end_t_us) return s;
  double t = static_cast<double>(t_us - schedule_->start_t_us) * 1e-6;
  s.movement = schedule_->movement.id;
  s.point = guide_trajectory(schedule_->movement, schedule_->timing, t);
  return s;
}

}  // namespace myo::kin

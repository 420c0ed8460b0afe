#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace myo::kin {

inline constexpr std::size_t kHandDims = 9;
inline constexpr std::string_view kRest = "rest";

// [0] thumb flexion, [1] thumb abduction, [2..5] index/middle/ring/pinky
// flexion, [6] wrist flexion, [7] wrist adduction, [8] wrist pronation.
using HandState = std::array<double, kHandDims>;

enum Component : std::size_t {
  kThumbFlexion = 0,
  kThumbAbduction,
  kIndexFlexion,
  kMiddleFlexion,
  kRingFlexion,
  kPinkyFlexion,
  kWristFlexion,
  kWristAdduction,
  kWristPronation,
};

struct MovementTemplate {
  std::string id;
  HandState target{};
  std::string display_id;  // template rendered for this movement

  bool operator==(const MovementTemplate&) const = default;
};

class Catalog {
 public:
  Catalog() = default;
  explicit Catalog(std::vector<MovementTemplate> templates);

  // rest, thumb, index, middle, ring, pinky, grasp, pinch2, pinch3
  static Catalog defaults();
  static Catalog from_json(const nlohmann::json& j);
  static Catalog load(const std::string& path);
  nlohmann::json to_json() const;

  bool contains(std::string_view id) const noexcept;
  // Throws Error{UnknownClass}.
  const MovementTemplate& at(std::string_view id) const;
  // The template that actually drives the guide for `id`: the executed id
  // paired with its display template's target.
  MovementTemplate effective(std::string_view id) const;
  void remap_display(std::string_view id, std::string_view display_id);
  void add(MovementTemplate t);

  const std::vector<MovementTemplate>& templates() const noexcept { return templates_; }
  std::vector<std::string> ids() const;
  // Stable fingerprint of the catalog contents (hex crc32 of canonical JSON).
  std::string hash() const;

 private:
  std::vector<MovementTemplate> templates_;
};

struct GuideTiming {
  double hold_s = 1.5;
  double ramp_s = 2.25;

  double period_s() const noexcept { return 2.0 * hold_s + 2.0 * ramp_s; }
  // Throws Error{InvalidArgument}.
  void validate() const;
  // Keeps the hold and fits the ramps so `reps` cycles fill `window_s`.
  static GuideTiming for_window(double window_s, int reps, double hold_s = 1.5);

  bool operator==(const GuideTiming&) const = default;
};

void to_json(nlohmann::json& j, const GuideTiming& t);
void from_json(const nlohmann::json& j, GuideTiming& t);

struct GuidePoint {
  HandState state{};
  double activation = 0.0;
};

// Periodic rest-hold -> cosine rise -> full-hold -> cosine fall.
double guide_activation(const GuideTiming& timing, double t_s) noexcept;
GuidePoint guide_trajectory(const MovementTemplate& tmpl, const GuideTiming& timing, double t_s);

// Max of `guide` over the template's nonzero target components.
double activation_of(const HandState& guide, const MovementTemplate& tmpl) noexcept;

// tmpl.id when activation >= 0.5, otherwise rest.
std::string label(const HandState& guide, const MovementTemplate& tmpl);

// Full-activation target of the display template for `class_id`.
HandState class_to_state(std::string_view class_id, const Catalog& catalog);

HandState scale(const HandState& target, double activation) noexcept;

}  // namespace myo::kin

#include <cstdint>
#include <mutex>
#include <optional>

namespace myo::kin {

// The guide currently on display, in device time. Written by the session
// orchestrator, read by anything that follows the guide (the guide sender, a
// simulated participant).
struct GuideSchedule {
  MovementTemplate movement;  // effective template (executed id, display target)
  GuideTiming timing;
  std::uint64_t start_t_us = 0;
  std::uint64_t end_t_us = 0;
};

class GuideBoard {
 public:
  void show(GuideSchedule schedule);
  void clear();
  std::optional<GuideSchedule> current() const;

  // Guide point at device time t_us; rest outside the scheduled span.
  struct Sample {
    std::string movement{kRest};
    GuidePoint point;
  };
  Sample sample(std::uint64_t t_us) const;

 private:
  mutable std::mutex mu_;
  std::optional<GuideSchedule> schedule_;
};

}  // namespace myo::kin

// input_pipeline.hpp - safety validation and per-body estimation/prediction
#pragma once

#include "kst/core_math.hpp"

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace kst {

struct BodyTarget {
  Pose pose;
  bool track_linear = true;
  bool track_angular = true;
};

struct MotionInput {
  double timestamp = 0.0;
  std::map<std::string, BodyTarget> targets;
  std::optional<Vec3> com_ground;
  std::optional<Quat> chest_orientation;
};

struct SafetyLimits {
  Vec3 box_min = Vec3(-0.8, -0.8, 0.0);  // mid-feet frame
  Vec3 box_max = Vec3(0.8, 0.8, 2.2);
  double max_rate_linear = 0.1;    // m per nominal input interval
  double max_rate_angular = 0.5;   // rad per nominal input interval
  double max_velocity_linear = 4.0;    // m/s
  double max_velocity_angular = 12.0;  // rad/s
};

enum class LimitRule { non_finite, unknown_body, bounding_box, rate, velocity, timestamp };

inline const char* to_string(LimitRule r) {
  switch (r) {
    case LimitRule::non_finite: return "non_finite";
    case LimitRule::unknown_body: return "unknown_body";
    case LimitRule::bounding_box: return "bounding_box";
    case LimitRule::rate: return "rate";
    case LimitRule::velocity: return "velocity";
    case LimitRule::timestamp: return "timestamp";
  }
  return "?";
}

struct Rejection {
  std::string body;
  LimitRule rule;
  double measured = 0.0;
};

/// Last accepted pose and time per body ("com" and "chest" for the optional fields).
struct AcceptedSample {
  Pose pose;
  double timestamp = 0.0;
};
using InputHistory = std::map<std::string, AcceptedSample>;

struct ValidationResult {
  MotionInput accepted;
  std::vector<Rejection> rejections;
};

namespace detail {

// Rate and velocity checks against the previous accepted sample. The rate
// allowance grows with the number of nominal input intervals elapsed, so a
// body that legitimately moved during a dropout is not locked out forever.
inline std::optional<Rejection> check_motion(const std::string& body, const Pose& pose, double t,
                                             const AcceptedSample* prev, const SafetyLimits& lim,
                                             double nominal_interval, bool linear, bool angular) {
  if (!prev) return std::nullopt;
  const double dt = t - prev->timestamp;
  if (!(dt > 0.0)) return Rejection{body, LimitRule::timestamp, dt};
  const double intervals = std::max(1.0, dt / nominal_interval);
  const double dt_v = std::max(dt, 0.005);
  if (linear) {
    const double d = (pose.position - prev->pose.position).norm();
    if (d > lim.max_rate_linear * intervals) return Rejection{body, LimitRule::rate, d};
    if (d / dt_v > lim.max_velocity_linear) return Rejection{body, LimitRule::velocity, d / dt_v};
  }
  if (angular) {
    const double a = angle_between(prev->pose.orientation, pose.orientation);
    if (a > lim.max_rate_angular * intervals) return Rejection{body, LimitRule::rate, a};
    if (a / dt_v > lim.max_velocity_angular) return Rejection{body, LimitRule::velocity, a / dt_v};
  }
  return std::nullopt;
}

inline std::optional<Rejection> check_box(const std::string& body, const Vec3& p, const Pose& mid_feet,
                                          const SafetyLimits& lim, bool with_z = true) {
  const Vec3 local = mid_feet.inverse() * p;
  double excess = 0.0;
  for (int k = 0; k < (with_z ? 3 : 2); ++k)
    excess = std::max({excess, lim.box_min[k] - local[k], local[k] - lim.box_max[k]});
  if (excess > 0.0) return Rejection{body, LimitRule::bounding_box, excess};
  return std::nullopt;
}

}  // namespace detail

/// Drops each target that leaves the box (in the mid-feet frame), moves more
/// than the rate allowance, or implies a velocity above the limit. Accepted
/// samples are written back into `history`.
inline ValidationResult validate_input(const MotionInput& input, const SafetyLimits& lim, const Pose& mid_feet,
                                       InputHistory& history, double nominal_interval = 1.0 / 60.0,
                                       const std::set<std::string>* known_bodies = nullptr) {
  ValidationResult out;
  out.accepted.timestamp = input.timestamp;
  auto prev_of = [&](const std::string& b) -> const AcceptedSample* {
    auto it = history.find(b);
    return it == history.end() ? nullptr : &it->second;
  };
  for (const auto& [body, target] : input.targets) {
    if (known_bodies && !known_bodies->count(body)) {
      out.rejections.push_back({body, LimitRule::unknown_body, 0.0});
      continue;
    }
    if (!all_finite(target.pose) || !std::isfinite(input.timestamp)) {
      out.rejections.push_back({body, LimitRule::non_finite, 0.0});
      continue;
    }
    auto r = detail::check_box(body, target.pose.position, mid_feet, lim);
    if (!r)
      r = detail::check_motion(body, target.pose, input.timestamp, prev_of(body), lim, nominal_interval,
                               target.track_linear, target.track_angular);
    if (r) {
      out.rejections.push_back(*r);
      continue;
    }
    out.accepted.targets[body] = target;
    history[body] = {target.pose, input.timestamp};
  }
  if (input.com_ground) {
    const Pose p(*input.com_ground, Quat::Identity());
    std::optional<Rejection> r;
    if (!input.com_ground->allFinite()) r = Rejection{"com", LimitRule::non_finite, 0.0};
    if (!r) r = detail::check_box("com", p.position, mid_feet, lim, false);
    if (!r) r = detail::check_motion("com", p, input.timestamp, prev_of("com"), lim, nominal_interval, true, false);
    if (r) out.rejections.push_back(*r);
    else {
      out.accepted.com_ground = input.com_ground;
      history["com"] = {p, input.timestamp};
    }
  }
  if (input.chest_orientation) {
    const Pose p(Vec3::Zero(), *input.chest_orientation);
    std::optional<Rejection> r;
    if (!input.chest_orientation->coeffs().allFinite()) r = Rejection{"chest", LimitRule::non_finite, 0.0};
    if (!r) r = detail::check_motion("chest", p, input.timestamp, prev_of("chest"), lim, nominal_interval, false, true);
    if (r) out.rejections.push_back(*r);
    else {
      out.accepted.chest_orientation = p.orientation;
      history["chest"] = {p, input.timestamp};
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Estimation and prediction

enum class EstimatorMode { first_order, feedback };

struct EstimatorParams {
  EstimatorMode mode = EstimatorMode::feedback;
  double decay_duration = 0.25;  // s
  double t_corr = 0.05;          // s
  double dt_min = 0.005;         // clamp on the input interval
  double dt_max = 0.1;
  bool compensate_age = true;  // extrapolate a fresh input over its age at consumption
};

struct Prediction {
  Pose desired;
  Twist feedforward;  // body-frame angular, world linear
  bool active = false;
  double alpha = 0.0;
};

/// Per-body estimator. All times are on the session clock.
class BodyEstimator {
 public:
  explicit BodyEstimator(EstimatorParams params = {}) : params_(params) {}

  const EstimatorParams& params() const { return params_; }
  bool initialized() const { return initialized_; }
  bool active() const { return initialized_ && alpha() > 0.0; }
  double alpha() const {
    if (!initialized_) return 0.0;
    return std::max(0.0, 1.0 - alpha_timer_ / params_.decay_duration);
  }
  const Pose& estimated() const { return estimated_; }
  const Pose& last_input() const { return last_input_; }
  const Twist& fd() const { return fd_; }
  const Twist& corr() const { return corr_; }
  double alpha_timer() const { return alpha_timer_; }

  /// `t_input` is the input's own timestamp, `age` how long ago (session clock)
  /// it arrived relative to the current tick.
  void on_input(const Pose& pose, double t_input, double age = 0.0) {
    age = params_.compensate_age ? std::max(0.0, age) : 0.0;
    if (!initialized_ || !active()) {
      // First input, or a body that went inactive: start over from rest.
      initialized_ = true;
      fd_ = {};
      corr_ = {};
      estimated_ = pose;
    } else {
      const double dt = std::clamp(t_input - last_time_, params_.dt_min, params_.dt_max);
      fd_.linear = (pose.position - last_input_.position) / dt;
      fd_.angular = quat_log(last_input_.orientation.conjugate() * pose.orientation) / dt;
      const Pose now = integrate(pose, fd_, age);
      if (params_.mode == EstimatorMode::feedback) {
        corr_.linear = (now.position - estimated_.position) / params_.t_corr;
        corr_.angular = quat_log(estimated_.orientation.conjugate() * now.orientation) / params_.t_corr;
      } else {
        corr_ = {};
        estimated_ = now;
      }
    }
    last_input_ = pose;
    last_time_ = t_input;
    alpha_timer_ = 0.0;
  }

  /// Returns the estimate for the current tick, then advances it by dt_tick.
  Prediction predict(double dt_tick) {
    Prediction p;
    if (!initialized_) return p;
    p.alpha = alpha();
    p.active = p.alpha > 0.0;
    p.feedforward = (params_.mode == EstimatorMode::feedback ? fd_ + corr_ : fd_) * p.alpha;
    p.desired = estimated_;
    if (p.active) estimated_ = integrate(estimated_, p.feedforward, dt_tick);
    alpha_timer_ += dt_tick;
    return p;
  }

 private:
  EstimatorParams params_;
  bool initialized_ = false;
  Pose last_input_;
  double last_time_ = 0.0;
  Pose estimated_;
  Twist fd_, corr_;
  double alpha_timer_ = 0.0;
};

}  // namespace kst

// retargeting.hpp - seven-tracker human bundle to robot references
#pragma once

#include "kst/kinematics.hpp"

#include <array>
#include <optional>
#include <stdexcept>
#include <string>

namespace kst {

enum class Side { left = 0, right = 1 };

inline const char* to_string(Side s) { return s == Side::left ? "left" : "right"; }

class RetargetingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrackerBundle {
  double timestamp = 0.0;
  Pose headset;
  Pose controller_left, controller_right;
  Pose chest;
  Pose waist;
  Pose ankle_left, ankle_right;

  const Pose& controller(Side s) const { return s == Side::left ? controller_left : controller_right; }
  const Pose& ankle(Side s) const { return s == Side::left ? ankle_left : ankle_right; }
};

inline bool all_finite(const TrackerBundle& b) {
  return std::isfinite(b.timestamp) && all_finite(b.headset) && all_finite(b.controller_left) &&
         all_finite(b.controller_right) && all_finite(b.chest) && all_finite(b.waist) && all_finite(b.ankle_left) &&
         all_finite(b.ankle_right);
}

struct RetargetingParams {
  double step_threshold = 0.15;  // m
  double lift_threshold = 0.08;  // m
  double stride = 0.30;          // m
  double turning_threshold = 25.0 * kPi / 180.0;
  double stability_threshold = 0.02;  // m
  int stability_samples = 20;
  double max_reach = 0.5;  // m, from the stance foot
  double max_step_yaw = 30.0 * kPi / 180.0;
  double min_step_width = 0.10;  // m, lateral, in the stance foot frame
  double max_step_width = 0.45;
  bool scale_pelvis_horizontal = true;  // false scales only the z displacement
};

/// Robot-side reference geometry for calibration.
struct RobotGeometry {
  Pose pelvis;                 // initial pelvis pose
  Quat chest = Quat::Identity();  // initial chest orientation
  double pelvis_height = 0.0;  // with extended legs
  double arm_length = 0.0;     // shoulder to hand, extended
};

/// Measured on `model` at `q`. Pelvis height and arm length come from the
/// same base pose with every joint at zero, which extends the limbs of the
/// bundled humanoid.
inline RobotGeometry measure_robot(const RobotModel& model, const JointConfiguration& q) {
  RobotGeometry g;
  const KinematicsState ks = compute_kinematics(model, q);
  g.pelvis = frame_pose(model, ks, model.resolve_frame("pelvis"));
  g.chest = frame_pose(model, ks, model.resolve_frame("chest")).orientation;

  JointConfiguration straight = q;
  straight.joint_positions.setZero();
  const KinematicsState kz = compute_kinematics(model, straight);
  const Pose pelvis0 = frame_pose(model, kz, model.resolve_frame("pelvis"));
  const double sole_z = std::min(frame_pose(model, kz, model.resolve_frame("foot_left")).position.z(),
                                 frame_pose(model, kz, model.resolve_frame("foot_right")).position.z());
  g.pelvis_height = pelvis0.position.z() - sole_z;
  double arm = 0.0;
  for (const char* side : {"left", "right"}) {
    const Vec3 s = frame_pose(model, kz, model.resolve_frame(std::string("shoulder_") + side)).position;
    const Vec3 h = frame_pose(model, kz, model.resolve_frame(std::string("hand_") + side)).position;
    arm += 0.5 * (h - s).norm();
  }
  g.arm_length = arm;
  return g;
}

/// l_head = |p_head - p_chest| / 1.5; shoulders offset by +-l_head along the
/// chest tracker's lateral axis and raised by half the head-chest height.
inline std::array<Pose, 2> estimate_shoulders(const TrackerBundle& b) {
  const double dist = (b.headset.position - b.chest.position).norm();
  if (!(dist > 0.1)) throw RetargetingError("degenerate head-chest distance");
  const double l_head = dist / 1.5;
  const Vec3 up(0.0, 0.0, 0.5 * (b.headset.position.z() - b.chest.position.z()));
  const Vec3 lateral = b.chest.orientation * Vec3::UnitY();
  return {Pose(b.chest.position + l_head * lateral + up, b.chest.orientation),
          Pose(b.chest.position - l_head * lateral + up, b.chest.orientation)};
}

struct RetargetingCalibration {
  TrackerBundle initial_bundle;
  Pose robot_initial_pelvis;
  Quat robot_initial_chest = Quat::Identity();
  double delta_pelvis = 1.0;
  double delta_arm = 1.0;
  double arm_length_human = 0.0;
  std::array<Pose, 2> shoulder_initial_human;
};

inline RetargetingCalibration initialize_calibration(const TrackerBundle& bundle, const RobotGeometry& robot) {
  if (!all_finite(bundle)) throw RetargetingError("calibration bundle is not finite");
  const double h_human = bundle.waist.position.z();
  if (!(h_human > 0.3)) throw RetargetingError("waist tracker below 0.3 m; user not upright");
  if (!(robot.pelvis_height > 0.0) || !(robot.arm_length > 0.0))
    throw RetargetingError("robot geometry must have positive pelvis height and arm length");
  RetargetingCalibration cal;
  cal.initial_bundle = bundle;
  cal.robot_initial_pelvis = robot.pelvis;
  cal.robot_initial_chest = robot.chest;
  cal.shoulder_initial_human = estimate_shoulders(bundle);
  cal.arm_length_human =
      0.5 * ((bundle.controller_left.position - cal.shoulder_initial_human[0].position).norm() +
             (bundle.controller_right.position - cal.shoulder_initial_human[1].position).norm());
  if (cal.arm_length_human < 0.2) throw RetargetingError("human arm length below 0.2 m");
  cal.delta_pelvis = robot.pelvis_height / h_human;
  cal.delta_arm = robot.arm_length / cal.arm_length_human;
  return cal;
}

inline RetargetingCalibration initialize_calibration(const TrackerBundle& bundle, const RobotModel& model,
                                                     const JointConfiguration& q) {
  return initialize_calibration(bundle, measure_robot(model, q));
}

/// Drops the roll of `relative` in an intrinsic z-y-x factorization.
inline Quat remove_roll(const Quat& relative) {
  const YawPitchRoll ypr = to_yaw_pitch_roll(relative);
  return from_yaw_pitch_roll(ypr.yaw, ypr.pitch, 0.0);
}

inline Pose retarget_pelvis(const RetargetingCalibration& cal, const TrackerBundle& b,
                            bool scale_horizontal = true) {
  const Pose& w0 = cal.initial_bundle.waist;
  Vec3 dp = b.waist.position - w0.position;
  if (scale_horizontal) dp *= cal.delta_pelvis;
  else dp.z() *= cal.delta_pelvis;
  const Quat relative = b.waist.orientation * w0.orientation.conjugate();
  return Pose(cal.robot_initial_pelvis.position + dp, cal.robot_initial_pelvis.orientation * remove_roll(relative));
}

/// Chest follows the chest tracker's rotation since calibration.
inline Quat retarget_chest(const RetargetingCalibration& cal, const TrackerBundle& b) {
  return canonicalize(cal.robot_initial_chest * (b.chest.orientation * cal.initial_bundle.chest.orientation.conjugate()));
}

/// Robot hand = robot shoulder + delta_arm * (controller - estimated human shoulder).
/// Orientation is the controller's composed with the per-side mounting rotation.
inline std::array<Pose, 2> retarget_hands(const RetargetingCalibration& cal, const TrackerBundle& b,
                                          const std::array<Vec3, 2>& robot_shoulders,
                                          const std::array<Quat, 2>& mounting = {Quat::Identity(), Quat::Identity()}) {
  const auto human = estimate_shoulders(b);
  std::array<Pose, 2> out;
  for (Side s : {Side::left, Side::right}) {
    const int i = static_cast<int>(s);
    const Vec3 p = robot_shoulders[i] + cal.delta_arm * (b.controller(s).position - human[i].position);
    out[i] = Pose(p, b.controller(s).orientation * mounting[i]);
  }
  return out;
}

inline Vec3 ground(const Vec3& p) { return Vec3(p.x(), p.y(), 0.0); }

/// Normalized offset of the waist ground point along the human feet line, in [0, 1].
inline std::optional<double> normalized_com_offset(const TrackerBundle& b) {
  const Vec3 l = ground(b.ankle_left.position), r = ground(b.ankle_right.position);
  const Vec3 d = r - l;
  if (d.norm() <= 1e-3) return std::nullopt;
  return std::clamp((ground(b.waist.position) - l).dot(d) / d.squaredNorm(), 0.0, 1.0);
}

/// Robot CoM ground point on the segment between the robot feet. Empty on a
/// degenerate stance; callers hold their previous output.
inline std::optional<Vec3> retarget_com(const TrackerBundle& b, const std::array<Vec3, 2>& robot_feet) {
  const auto o = normalized_com_offset(b);
  const Vec3 l = ground(robot_feet[0]), r = ground(robot_feet[1]);
  if (!o || (r - l).norm() <= 1e-3) return std::nullopt;
  return Vec3(l + *o * (r - l));
}

// ---------------------------------------------------------------------------
// Footstep streaming

struct FootstepCommand {
  Side side = Side::left;
  Pose pose;  // sole frame, yaw only
  double timestamp = 0.0;
};

struct FootstepSideState {
  Pose initial_ankle;
  bool stepping = false;
  int stability_counter = 0;
  Vec3 stability_anchor = Vec3::Zero();
  double last_yaw = 0.0;
};

struct FootstepStreamState {
  std::array<FootstepSideState, 2> sides;
  bool initialized = false;
  long rejected = 0;
};

inline FootstepStreamState initialize_footstep_state(const TrackerBundle& b) {
  FootstepStreamState st;
  for (Side s : {Side::left, Side::right}) {
    auto& ss = st.sides[static_cast<int>(s)];
    ss.initial_ankle = b.ankle(s);
    ss.stability_anchor = b.ankle(s).position;
    ss.last_yaw = yaw_of(b.ankle(s).orientation);
  }
  st.initialized = true;
  return st;
}

enum class FootstepRejection { none, reach, width, yaw };

inline const char* to_string(FootstepRejection r) {
  switch (r) {
    case FootstepRejection::none: return "none";
    case FootstepRejection::reach: return "reach";
    case FootstepRejection::width: return "width";
    case FootstepRejection::yaw: return "yaw";
  }
  return "?";
}

/// Checks a candidate against the stance (opposite) foot.
inline FootstepRejection check_footstep(Side side, const Pose& candidate, const Pose& stance,
                                        const RetargetingParams& p) {
  const double stance_yaw = yaw_of(stance.orientation);
  const Vec3 rel = yaw_rotation(stance_yaw).conjugate() * (candidate.position - stance.position);
  if (std::hypot(rel.x(), rel.y()) > p.max_reach + 1e-12) return FootstepRejection::reach;
  const double lateral = side == Side::left ? rel.y() : -rel.y();
  if (lateral < p.min_step_width - 1e-12 || lateral > p.max_step_width + 1e-12) return FootstepRejection::width;
  if (std::abs(wrap_angle(yaw_of(candidate.orientation) - stance_yaw)) > p.max_step_yaw + 1e-12)
    return FootstepRejection::yaw;
  return FootstepRejection::none;
}

struct FootstepUpdate {
  std::optional<FootstepCommand> command;
  FootstepRejection rejection = FootstepRejection::none;
};

/// One side. A step needs horizontal displacement above step_threshold and a
/// lift above lift_threshold; a yaw change above turning_threshold alone
/// gives an in-place step. While stepping, the side re-arms once the ankle
/// stays within stability_threshold of a window anchor for stability_samples.
inline FootstepUpdate footstep_side_update(FootstepStreamState& st, Side side, const TrackerBundle& b,
                                           const std::array<Pose, 2>& robot_feet, const RetargetingParams& p) {
  auto& ss = st.sides[static_cast<int>(side)];
  const Pose& ankle = b.ankle(side);
  FootstepUpdate out;
  ss.last_yaw = yaw_of(ankle.orientation);

  if (ss.stepping) {
    if ((ankle.position - ss.stability_anchor).norm() < p.stability_threshold) {
      if (++ss.stability_counter >= p.stability_samples) {
        ss.stepping = false;
        ss.stability_counter = 0;
        ss.initial_ankle = ankle;
      }
    } else {
      ss.stability_counter = 0;
      ss.stability_anchor = ankle.position;
    }
    return out;
  }

  const Vec3 disp = ankle.position - ss.initial_ankle.position;
  const Vec3 horizontal(disp.x(), disp.y(), 0.0);
  const double lift = disp.z();
  const double dyaw = wrap_angle(yaw_of(ankle.orientation) - yaw_of(ss.initial_ankle.orientation));
  const bool translate = horizontal.norm() > p.step_threshold && lift > p.lift_threshold;
  const bool turn = std::abs(dyaw) > p.turning_threshold;
  if (!translate && !turn) return out;

  const Pose& foot = robot_feet[static_cast<int>(side)];
  const Pose& stance = robot_feet[1 - static_cast<int>(side)];
  Vec3 position = foot.position;
  if (translate) position += horizontal.normalized() * p.stride;
  double yaw = yaw_of(foot.orientation);
  if (turn) yaw += std::clamp(dyaw, -p.max_step_yaw, p.max_step_yaw);
  const Pose candidate(position, yaw_rotation(wrap_angle(yaw)));

  out.rejection = check_footstep(side, candidate, stance, p);
  if (out.rejection != FootstepRejection::none) {
    ++st.rejected;
    return out;
  }
  out.command = FootstepCommand{side, candidate, b.timestamp};
  ss.stepping = true;
  ss.stability_counter = 0;
  ss.stability_anchor = ankle.position;
  return out;
}

inline std::array<FootstepUpdate, 2> footstep_stream_update(FootstepStreamState& st, const TrackerBundle& b,
                                                            const std::array<Pose, 2>& robot_feet,
                                                            const RetargetingParams& p) {
  if (!st.initialized) st = initialize_footstep_state(b);
  return {footstep_side_update(st, Side::left, b, robot_feet, p),
          footstep_side_update(st, Side::right, b, robot_feet, p)};
}

// ---------------------------------------------------------------------------

struct RobotReferences {
  double timestamp = 0.0;
  Pose pelvis;
  std::array<Pose, 2> hands;
  Quat chest_orientation = Quat::Identity();
  Vec3 com_ground = Vec3::Zero();
};

/// Robot quantities the retargeter reads each update.
struct RobotContext {
  std::array<Vec3, 2> shoulders;   // robot shoulder frame positions
  std::array<Pose, 2> feet;        // sole poses footsteps are checked against (planned stance)
  std::array<Quat, 2> hand_mounting{Quat::Identity(), Quat::Identity()};
  std::optional<std::array<Pose, 2>> support_feet;  // soles for the CoM line; `feet` when unset
};

/// Stateful wrapper: calibrates on the first bundle, then maps every bundle
/// to references and footstep commands.
class Retargeter {
 public:
  explicit Retargeter(RetargetingParams params = {}) : params_(params) {}

  bool calibrated() const { return calibration_.has_value(); }
  const RetargetingCalibration& calibration() const { return *calibration_; }
  const RetargetingParams& params() const { return params_; }
  const FootstepStreamState& footstep_state() const { return steps_; }

  void calibrate(const TrackerBundle& b, const RobotGeometry& robot, const std::array<Vec3, 2>& initial_feet) {
    calibration_ = initialize_calibration(b, robot);
    steps_ = initialize_footstep_state(b);
    const Vec3 mid = 0.5 * (ground(initial_feet[0]) + ground(initial_feet[1]));
    last_com_ = retarget_com(b, initial_feet).value_or(mid);
  }

  struct Output {
    RobotReferences references;
    std::array<FootstepUpdate, 2> footsteps;
  };

  Output update(const TrackerBundle& b, const RobotContext& robot) {
    if (!calibration_) throw RetargetingError("retargeter used before calibration");
    Output out;
    auto& r = out.references;
    r.timestamp = b.timestamp;
    r.pelvis = retarget_pelvis(*calibration_, b, params_.scale_pelvis_horizontal);
    r.chest_orientation = retarget_chest(*calibration_, b);
    r.hands = retarget_hands(*calibration_, b, robot.shoulders, robot.hand_mounting);
    const auto& support = robot.support_feet ? *robot.support_feet : robot.feet;
    const std::array<Vec3, 2> feet{support[0].position, support[1].position};
    if (auto c = retarget_com(b, feet)) last_com_ = *c;
    r.com_ground = last_com_;
    out.footsteps = footstep_stream_update(steps_, b, robot.feet, params_);
    return out;
  }

 private:
  RetargetingParams params_;
  std::optional<RetargetingCalibration> calibration_;
  FootstepStreamState steps_;
  Vec3 last_com_ = Vec3::Zero();
};

}  // namespace kst

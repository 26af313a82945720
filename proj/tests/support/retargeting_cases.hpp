// Retargeting example cases shared by the unit suite and the acceptance binary.
// Each case reports its worst deviation against a hand-computed or oracle value.
#pragma once

#include "kst/retargeting.hpp"

#include <functional>
#include <string>
#include <vector>

namespace cases {

using namespace kst;

struct CaseResult {
  std::string name;
  double error;      // worst absolute deviation
  double tolerance;  // rounding level for arithmetic cases
  bool passed() const { return error <= tolerance; }
};

/// Upright human: chest tracker at 1.3 m, headset 0.3 m above it, waist 1.0 m,
/// ankles 0.2 m apart, controllers 0.6 m in front of the estimated shoulders.
inline TrackerBundle upright_bundle() {
  TrackerBundle b;
  b.timestamp = 0.0;
  b.chest = Pose(Vec3(0.0, 0.0, 1.3), Quat::Identity());
  b.headset = Pose(Vec3(0.0, 0.0, 1.6), Quat::Identity());
  b.waist = Pose(Vec3(0.0, 0.0, 1.0), Quat::Identity());
  b.ankle_left = Pose(Vec3(0.0, 0.1, 0.1), Quat::Identity());
  b.ankle_right = Pose(Vec3(0.0, -0.1, 0.1), Quat::Identity());
  b.controller_left = Pose(Vec3(0.6, 0.2, 1.45), Quat::Identity());
  b.controller_right = Pose(Vec3(0.6, -0.2, 1.45), Quat::Identity());
  return b;
}

inline RobotGeometry robot_geometry(double pelvis_height, double arm_length) {
  RobotGeometry g;
  g.pelvis = Pose(Vec3(0.0, 0.0, 0.98), Quat::Identity());
  g.pelvis_height = pelvis_height;
  g.arm_length = arm_length;
  return g;
}

inline double vec_err(const Vec3& a, const Vec3& b) { return (a - b).cwiseAbs().maxCoeff(); }

inline std::array<Pose, 2> robot_feet_at(const Vec3& left, const Vec3& right) {
  return {Pose(left, Quat::Identity()), Pose(right, Quat::Identity())};
}

/// Feeds a bundle stream into the footstep detector and counts commands per side.
inline std::array<int, 2> count_footsteps(const std::vector<TrackerBundle>& stream, const RetargetingParams& p,
                                          std::vector<FootstepCommand>* out = nullptr) {
  FootstepStreamState st = initialize_footstep_state(stream.front());
  std::array<Pose, 2> feet = robot_feet_at(Vec3(0, 0.1, 0), Vec3(0, -0.1, 0));
  std::array<int, 2> n{0, 0};
  for (const auto& b : stream) {
    for (const auto& u : footstep_stream_update(st, b, feet, p)) {
      if (!u.command) continue;
      ++n[static_cast<int>(u.command->side)];
      feet[static_cast<int>(u.command->side)] = u.command->pose;  // executed instantly
      if (out) out->push_back(*u.command);
    }
  }
  return n;
}

/// Synthetic walk at 60 Hz: `steps` alternating left/right steps of 0.4 m,
/// each a 0.5 s swing with a 0.12 m sine lift followed by 0.5 s of stance.
inline std::vector<TrackerBundle> synthetic_walk(int steps) {
  std::vector<TrackerBundle> out;
  TrackerBundle b = upright_bundle();
  const double dt = 1.0 / 60.0;
  double t = 0.0;
  for (int i = 0; i < 30; ++i, t += dt) {
    b.timestamp = t;
    out.push_back(b);
  }
  for (int s = 0; s < steps; ++s) {
    Pose& ankle = s % 2 == 0 ? b.ankle_left : b.ankle_right;
    const Vec3 start = ankle.position;
    for (int i = 1; i <= 30; ++i, t += dt) {
      const double u = i / 30.0;
      ankle.position = start + Vec3(0.4 * smoothstep(u), 0.0, 0.12 * std::sin(kPi * u));
      b.waist.position.x() = start.x() + 0.2 * smoothstep(u);
      b.timestamp = t;
      out.push_back(b);
    }
    for (int i = 0; i < 30; ++i, t += dt) {
      b.timestamp = t;
      out.push_back(b);
    }
  }
  return out;
}

inline std::vector<CaseResult> retargeting_cases() {
  std::vector<CaseResult> r;
  const TrackerBundle b0 = upright_bundle();

  // Calibration scale factors. Human arm: |(0.6, 0, 0)| = 0.6.
  {
    const auto cal = initialize_calibration(b0, robot_geometry(1.0, 0.6));
    r.push_back({"calibration identity scaling", std::max(std::abs(cal.delta_pelvis - 1.0), std::abs(cal.delta_arm - 1.0)), 0.0});
  }
  {
    const auto cal = initialize_calibration(b0, robot_geometry(0.9, 0.6));
    r.push_back({"calibration pelvis ratio 0.9/1.0", std::abs(cal.delta_pelvis - 0.9), 0.0});
  }
  {
    TrackerBundle b = b0;
    b.controller_left.position = Vec3(0.75, 0.2, 1.45);
    b.controller_right.position = Vec3(0.75, -0.2, 1.45);
    const auto cal = initialize_calibration(b, robot_geometry(1.0, 0.6));
    r.push_back({"calibration arm ratio 0.6/0.75", std::abs(cal.delta_arm - 0.8), 1e-15});
  }

  // Pelvis.
  {
    const auto cal = initialize_calibration(b0, robot_geometry(0.9, 0.6));
    const Pose p = retarget_pelvis(cal, b0);
    r.push_back({"pelvis fixed point at calibration",
                 std::max(vec_err(p.position, cal.robot_initial_pelvis.position),
                          angle_between(p.orientation, cal.robot_initial_pelvis.orientation)),
                 0.0});
    TrackerBundle b = b0;
    b.waist.position.z() += 0.10;
    const Pose q = retarget_pelvis(cal, b);
    r.push_back({"pelvis raise 0.10 scaled by 0.9", std::abs(q.position.z() - (0.98 + 0.09)), 1e-15});
    b = b0;
    b.waist.orientation = axis_angle(Vec3::UnitX(), 20.0 * kPi / 180.0);
    const Pose rolled = retarget_pelvis(cal, b);
    r.push_back({"pelvis roll dropped", angle_between(rolled.orientation, cal.robot_initial_pelvis.orientation), 1e-15});
  }

  // Shoulders.
  {
    TrackerBundle b = b0;
    b.chest = Pose(Vec3::Zero(), Quat::Identity());
    b.headset = Pose(Vec3(0, 0, 0.3), Quat::Identity());
    const auto s = estimate_shoulders(b);
    r.push_back({"head length 0.30/1.5",
                 std::max(vec_err(s[0].position, Vec3(0, 0.2, 0.15)), vec_err(s[1].position, Vec3(0, -0.2, 0.15))),
                 1e-15});
    b.chest.orientation = yaw_rotation(kPi / 2.0);
    const auto y = estimate_shoulders(b);
    const Eigen::Matrix3d R = Eigen::AngleAxisd(kPi / 2.0, Vec3::UnitZ()).toRotationMatrix();
    r.push_back({"shoulders rotate with yawed chest",
                 std::max(vec_err(y[0].position, R * Vec3(0, 0.2, 0) + Vec3(0, 0, 0.15)),
                          vec_err(y[1].position, R * Vec3(0, -0.2, 0) + Vec3(0, 0, 0.15))),
                 1e-9});
  }

  // Hands. Human shoulders of b0 are (0, +-0.2, 1.45).
  {
    const std::array<Vec3, 2> robot_shoulders{Vec3(0.05, 0.22, 1.36), Vec3(0.05, -0.22, 1.36)};
    TrackerBundle b = b0;
    b.controller_left.position = Vec3(0.75, 0.2, 1.45);
    b.controller_right.position = Vec3(0.75, -0.2, 1.45);
    const auto cal = initialize_calibration(b, robot_geometry(1.0, 0.6));  // delta_arm = 0.8
    TrackerBundle at = b;
    at.controller_left.position = Vec3(0, 0.2, 1.45);
    at.controller_right.position = Vec3(0, -0.2, 1.45);
    auto h = retarget_hands(cal, at, robot_shoulders);
    r.push_back({"hand at shoulder maps to robot shoulder",
                 std::max(vec_err(h[0].position, robot_shoulders[0]), vec_err(h[1].position, robot_shoulders[1])), 1e-15});
    TrackerBundle off = b;
    off.controller_left.position = Vec3(0.5, 0.2, 1.45);
    off.controller_right.position = Vec3(0.5, -0.2, 1.45);
    h = retarget_hands(cal, off, robot_shoulders);
    r.push_back({"hand offset 0.5 scaled by 0.8",
                 std::max(vec_err(h[0].position, robot_shoulders[0] + Vec3(0.4, 0, 0)),
                          vec_err(h[1].position, robot_shoulders[1] + Vec3(0.4, 0, 0))),
                 1e-15});
    h = retarget_hands(cal, b, robot_shoulders);
    r.push_back({"full human reach maps to robot arm length",
                 std::abs((h[0].position - robot_shoulders[0]).norm() - 0.6), 1e-15});

    // Doubling human displacement and human arm length cancels.
    TrackerBundle big = b0, move = b0;
    big.controller_left.position = Vec3(1.2, 0.2, 1.45);
    big.controller_right.position = Vec3(1.2, -0.2, 1.45);
    move.controller_left.position = Vec3(0.3, 0.5, 1.2);
    TrackerBundle move2 = big;
    move2.controller_left.position = Vec3(0.6, 0.8, 0.95);  // shoulder + 2 * (0.3, 0.3, -0.25)
    const auto cal1 = initialize_calibration(b0, robot_geometry(1.0, 0.6));
    const auto cal2 = initialize_calibration(big, robot_geometry(1.0, 0.6));
    const auto h1 = retarget_hands(cal1, move, robot_shoulders);
    const auto h2 = retarget_hands(cal2, move2, robot_shoulders);
    r.push_back({"hand scaling consistency", vec_err(h1[0].position, h2[0].position), 1e-9});
  }

  // CoM.
  {
    const std::array<Vec3, 2> feet{Vec3(0.1, 0.12, 0.0), Vec3(0.1, -0.12, 0.0)};
    TrackerBundle b = b0;
    b.waist.position = Vec3(0.0, 0.1, 1.0);
    r.push_back({"com offset 0 at left ankle", vec_err(*retarget_com(b, feet), feet[0]), 0.0});
    b.waist.position = Vec3(0.0, 0.0, 1.0);
    r.push_back({"com offset 0.5 midway", vec_err(*retarget_com(b, feet), 0.5 * (feet[0] + feet[1])), 1e-15});
    b.ankle_left.position = Vec3(0.1, 0.2, 0.1);
    b.ankle_right.position = Vec3(-0.2, -0.15, 0.12);
    b.waist.position = Vec3(0.0, 0.05, 0.95);
    const Vec3 l(0.1, 0.2, 0), d = Vec3(-0.2, -0.15, 0) - l, w(0.0, 0.05, 0);
    const double o_ref = ((w - l).transpose() * d)(0) / (d.transpose() * d)(0);
    r.push_back({"com off-axis scalar projection",
                 std::max(std::abs(*normalized_com_offset(b) - o_ref),
                          vec_err(*retarget_com(b, feet), feet[0] + o_ref * (feet[1] - feet[0]))),
                 1e-9});
    b.waist.position = Vec3(0.0, 2.0, 1.0);
    r.push_back({"com offset clamped to [0, 1]", std::max(0.0, -*normalized_com_offset(b)), 0.0});
  }

  // Footsteps, default thresholds.
  {
    const RetargetingParams p;
    const auto feet = robot_feet_at(Vec3(0, 0, 0), Vec3(0, -0.2, 0));
    FootstepStreamState st = initialize_footstep_state(b0);
    TrackerBundle b = b0;
    b.ankle_left.position += Vec3(0.05, 0.0, 0.02);
    const auto small = footstep_side_update(st, Side::left, b, feet, p);
    r.push_back({"footstep below thresholds", small.command ? 1.0 : 0.0, 0.0});

    st = initialize_footstep_state(b0);
    b = b0;
    b.ankle_left.position += Vec3(0.40, 0.0, 0.12);
    const auto step = footstep_side_update(st, Side::left, b, feet, p);
    // Oracle: direction (1, 0), stride 0.30, from the robot foot at the origin.
    const double step_err = step.command ? std::max(vec_err(step.command->pose.position, Vec3(0.30, 0, 0)),
                                                    angle_between(step.command->pose.orientation, Quat::Identity()))
                                         : 1.0;
    r.push_back({"footstep forward stride 0.30", step_err, 1e-9});

    st = initialize_footstep_state(b0);
    b = b0;
    b.ankle_left.orientation = yaw_rotation(40.0 * kPi / 180.0);
    const auto turn = footstep_side_update(st, Side::left, b, feet, p);
    const double turn_err = turn.command ? std::max(vec_err(turn.command->pose.position, Vec3::Zero()),
                                                    std::abs(yaw_of(turn.command->pose.orientation) - p.max_step_yaw))
                                         : 1.0;
    r.push_back({"footstep yaw-only clamped to max_step_yaw", turn_err, 1e-9});
  }
  {
    const auto n = count_footsteps(synthetic_walk(6), RetargetingParams{});
    r.push_back({"synthetic walk fires once per step", std::abs(n[0] - 3.0) + std::abs(n[1] - 3.0), 0.0});
  }
  return r;
}

}  // namespace cases

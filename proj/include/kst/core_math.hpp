// core_math.hpp - rotation and rigid-body primitives shared by the whole pipeline
//
// Conventions (fixed project-wide):
//  * Quaternions are stored w,x,y,z and kept on the w >= 0 hemisphere after
//    every normalization, so log() is continuous along a stream.
//  * 6-vectors are ordered (angular; linear).
//  * Angular velocities are expressed in the body-fixed frame of the "current"
//    pose: q(t+dt) = q(t) * exp(omega * dt). Linear velocities are expressed in
//    the world frame.
#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace kst {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;
using Mat6X = Eigen::Matrix<double, 6, Eigen::Dynamic>;
using Mat3X = Eigen::Matrix<double, 3, Eigen::Dynamic>;

inline constexpr double kPi = std::numbers::pi;

namespace detail {
inline constexpr double kSeriesThreshold = 1e-8;
}

/// Normalizes and flips onto the w >= 0 hemisphere.
inline Quat canonicalize(Quat q) {
  const double n = q.norm();
  if (!(n > 0.0) || !std::isfinite(n)) return Quat::Identity();
  q.coeffs() /= n;
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  return q;
}

/// Rotation vector (theta * axis, theta in [0, pi]) of a unit quaternion.
inline Vec3 quat_log(const Quat& q_in) {
  const Quat q = canonicalize(q_in);
  const Vec3 v = q.vec();
  const double s = v.norm();
  if (s < detail::kSeriesThreshold) {
    // 2 atan(s / w) / s  ~  (2 / w) (1 - s^2 / (3 w^2))
    const double w = q.w();
    return v * (2.0 / w) * (1.0 - s * s / (3.0 * w * w));
  }
  const double theta = 2.0 * std::atan2(s, q.w());
  return v * (theta / s);
}

inline Quat quat_exp(const Vec3& v) {
  const double theta = v.norm();
  if (theta < detail::kSeriesThreshold) {
    const double t2 = theta * theta;
    Quat q(1.0 - t2 / 8.0, 0.0, 0.0, 0.0);
    q.vec() = v * (0.5 * (1.0 - t2 / 24.0));
    return q.normalized();
  }
  const double half = 0.5 * theta;
  Quat q(std::cos(half), 0.0, 0.0, 0.0);
  q.vec() = v * (std::sin(half) / theta);
  return q;
}

inline Quat axis_angle(const Vec3& axis, double angle) {
  return quat_exp(axis.normalized() * angle);
}

/// Intrinsic z-y-x (yaw, pitch, roll) factorization: R = Rz(yaw) Ry(pitch) Rx(roll).
struct YawPitchRoll {
  double yaw = 0.0;
  double pitch = 0.0;
  double roll = 0.0;
};

inline YawPitchRoll to_yaw_pitch_roll(const Quat& q) {
  const Mat3 r = q.toRotationMatrix();
  YawPitchRoll out;
  out.pitch = std::asin(std::clamp(-r(2, 0), -1.0, 1.0));
  out.yaw = std::atan2(r(1, 0), r(0, 0));
  out.roll = std::atan2(r(2, 1), r(2, 2));
  return out;
}

inline Quat from_yaw_pitch_roll(double yaw, double pitch, double roll) {
  return canonicalize(Quat(Eigen::AngleAxisd(yaw, Vec3::UnitZ())) *
                      Quat(Eigen::AngleAxisd(pitch, Vec3::UnitY())) *
                      Quat(Eigen::AngleAxisd(roll, Vec3::UnitX())));
}

inline Quat from_rpy(const Vec3& rpy) { return from_yaw_pitch_roll(rpy.z(), rpy.y(), rpy.x()); }

inline double yaw_of(const Quat& q) { return to_yaw_pitch_roll(q).yaw; }

inline Quat yaw_rotation(double yaw) { return canonicalize(Quat(Eigen::AngleAxisd(yaw, Vec3::UnitZ()))); }

/// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  return a;
}

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

struct Pose {
  Vec3 position = Vec3::Zero();
  Quat orientation = Quat::Identity();

  Pose() = default;
  Pose(Vec3 p, const Quat& q) : position(std::move(p)), orientation(canonicalize(q)) {}

  static Pose identity() { return {}; }

  Pose operator*(const Pose& rhs) const {
    return {position + orientation * rhs.position, orientation * rhs.orientation};
  }
  Vec3 operator*(const Vec3& point) const { return position + orientation * point; }

  Pose inverse() const {
    const Quat inv = orientation.conjugate();
    return {-(inv * position), inv};
  }
};

struct Twist {
  Vec3 angular = Vec3::Zero();
  Vec3 linear = Vec3::Zero();

  Vec6 stacked() const {
    Vec6 v;
    v << angular, linear;
    return v;
  }
  Twist operator*(double s) const { return {angular * s, linear * s}; }
  Twist operator+(const Twist& o) const { return {angular + o.angular, linear + o.linear}; }
};

/// Proportional feedback on the error transform between two poses.
/// Linear part is world-frame, angular part is in the body frame of `current`.
inline Twist pose_feedback(const Pose& current, const Pose& desired, double gain) {
  Twist t;
  t.linear = gain * (desired.position - current.position);
  t.angular = gain * quat_log(current.orientation.conjugate() * desired.orientation);
  return t;
}

/// First-order integration of a pose by a (body-angular, world-linear) twist.
inline Pose integrate(const Pose& pose, const Twist& twist, double dt) {
  return {pose.position + twist.linear * dt, pose.orientation * quat_exp(twist.angular * dt)};
}

/// Geodesic interpolation, s in [0, 1].
inline Pose interpolate(const Pose& a, const Pose& b, double s) {
  const Vec3 delta = quat_log(a.orientation.conjugate() * b.orientation);
  return {a.position + s * (b.position - a.position), a.orientation * quat_exp(s * delta)};
}

inline double angle_between(const Quat& a, const Quat& b) {
  return quat_log(a.conjugate() * b).norm();
}

inline double smoothstep(double s) {
  s = std::clamp(s, 0.0, 1.0);
  return s * s * (3.0 - 2.0 * s);
}

inline bool all_finite(const Pose& p) {
  return p.position.allFinite() && p.orientation.coeffs().allFinite();
}

}  // namespace kst

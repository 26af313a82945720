// kinematics.hpp - forward kinematics, Jacobians, CoM and centroidal momentum
#pragma once

#include "kst/robot_model.hpp"

#include <map>

namespace kst {

/// World-frame quantities for one configuration. Computed once per tick and
/// then queried by every Jacobian / momentum routine.
struct KinematicsState {
  std::vector<Pose> link_poses;
  std::vector<Mat3> link_rotations;
  std::vector<Vec3> axes;     // per revolute q_index, world frame
  std::vector<Vec3> origins;  // per revolute q_index, world frame
  Pose base_pose;
  Mat3 base_rotation = Mat3::Identity();
};

inline void check_dimensions(const RobotModel& model, const JointConfiguration& q) {
  if (q.joint_positions.size() != model.num_joints())
    throw std::invalid_argument("configuration has " + std::to_string(q.joint_positions.size()) +
                                " joint positions, model expects " + std::to_string(model.num_joints()));
}

inline KinematicsState compute_kinematics(const RobotModel& model, const JointConfiguration& q) {
  check_dimensions(model, q);
  KinematicsState ks;
  const std::size_t nl = model.links.size();
  ks.link_poses.resize(nl);
  ks.link_rotations.resize(nl);
  ks.axes.resize(model.num_joints());
  ks.origins.resize(model.num_joints());
  ks.base_pose = model.floating_base() ? q.base_pose : Pose{};
  ks.base_rotation = ks.base_pose.orientation.toRotationMatrix();

  for (const Joint& j : model.joints) {
    Pose parent = j.parent_link < 0 ? Pose{} : ks.link_poses[j.parent_link];
    Pose at_joint = parent * j.origin;
    Pose child;
    switch (j.type) {
      case JointType::floating:
        child = q.base_pose;
        break;
      case JointType::fixed:
        child = at_joint;
        break;
      case JointType::revolute: {
        ks.origins[j.q_index] = at_joint.position;
        ks.axes[j.q_index] = at_joint.orientation * j.axis;
        child = at_joint * Pose(Vec3::Zero(), axis_angle(j.axis, q.joint_positions[j.q_index]));
        break;
      }
    }
    ks.link_poses[j.child_link] = child;
    ks.link_rotations[j.child_link] = child.orientation.toRotationMatrix();
  }
  return ks;
}

inline Pose frame_pose(const RobotModel& model, const KinematicsState& ks, const Frame& f) {
  (void)model;
  return ks.link_poses[f.link] * f.offset;
}

inline Pose frame_pose(const RobotModel& model, const KinematicsState& ks, const std::string& name) {
  return frame_pose(model, ks, model.resolve_frame(name));
}

/// World pose of every link and named frame.
inline std::map<std::string, Pose> forward_kinematics(const RobotModel& model, const JointConfiguration& q) {
  const KinematicsState ks = compute_kinematics(model, q);
  std::map<std::string, Pose> out;
  for (std::size_t i = 0; i < model.links.size(); ++i) out[model.links[i].name] = ks.link_poses[i];
  for (const Frame& f : model.frames) out[f.name] = frame_pose(model, ks, f);
  return out;
}

/// World-frame angular and linear Jacobians of a point rigidly attached to `link`.
/// Rows 0-2: world angular velocity of the link, rows 3-5: world linear
/// velocity of `point`.
inline Mat6X world_jacobian(const RobotModel& model, const KinematicsState& ks, int link, const Vec3& point) {
  Mat6X J = Mat6X::Zero(6, model.nv());
  const int b = model.base_dofs();
  if (b == 6) {
    const Vec3 r = point - ks.base_pose.position;
    for (int k = 0; k < 3; ++k) {
      const Vec3 a = ks.base_rotation.col(k);
      J.block<3, 1>(0, k) = a;
      J.block<3, 1>(3, k) = a.cross(r);
      J(3 + k, 3 + k) = 1.0;
    }
  }
  for (int qi : model.support(link)) {
    const Vec3& a = ks.axes[qi];
    J.block<3, 1>(0, b + qi) = a;
    J.block<3, 1>(3, b + qi) = a.cross(point - ks.origins[qi]);
  }
  return J;
}

/// Linear-velocity Jacobian only (3 x nv) of a world point attached to `link`.
inline Mat3X point_jacobian(const RobotModel& model, const KinematicsState& ks, int link, const Vec3& point) {
  Mat3X J = Mat3X::Zero(3, model.nv());
  const int b = model.base_dofs();
  if (b == 6) {
    const Vec3 r = point - ks.base_pose.position;
    for (int k = 0; k < 3; ++k) {
      J.col(k) = ks.base_rotation.col(k).cross(r);
      J(k, 3 + k) = 1.0;
    }
  }
  for (int qi : model.support(link)) J.col(b + qi) = ks.axes[qi].cross(point - ks.origins[qi]);
  return J;
}

/// Geometric Jacobian of `frame` evaluated at the world point `expressed_at`.
/// Angular rows give the body-frame angular velocity of the frame, linear rows
/// give the world-frame velocity of the point (moving rigidly with the frame).
inline Mat6X geometric_jacobian(const RobotModel& model, const KinematicsState& ks, const Frame& frame,
                                const Vec3& expressed_at) {
  Mat6X J = world_jacobian(model, ks, frame.link, expressed_at);
  const Mat3 rt = frame_pose(model, ks, frame).orientation.toRotationMatrix().transpose();
  J.topRows<3>() = rt * J.topRows<3>();
  return J;
}

inline Mat6X geometric_jacobian(const RobotModel& model, const KinematicsState& ks, const Frame& frame) {
  return geometric_jacobian(model, ks, frame, frame_pose(model, ks, frame).position);
}

inline Mat6X geometric_jacobian(const RobotModel& model, const JointConfiguration& q, const std::string& body_frame,
                                const Vec3& expressed_at) {
  return geometric_jacobian(model, compute_kinematics(model, q), model.resolve_frame(body_frame), expressed_at);
}

inline Vec3 com_position(const RobotModel& model, const KinematicsState& ks) {
  Vec3 acc = Vec3::Zero();
  for (std::size_t i = 0; i < model.links.size(); ++i) {
    const Link& l = model.links[i];
    if (l.mass == 0.0) continue;
    acc += l.mass * (ks.link_poses[i] * l.com);
  }
  return acc / model.total_mass();
}

inline Vec3 com_position(const RobotModel& model, const JointConfiguration& q) {
  return com_position(model, compute_kinematics(model, q));
}

/// Centroidal momentum matrix: h = A v, h = (angular momentum about the CoM; linear momentum),
/// both world-frame.
struct CentroidalMomentum {
  Mat6X matrix;
  Vec3 com = Vec3::Zero();

  auto angular() const { return matrix.topRows<3>(); }
  auto linear() const { return matrix.bottomRows<3>(); }
};

inline CentroidalMomentum centroidal_momentum_matrix(const RobotModel& model, const KinematicsState& ks) {
  CentroidalMomentum out;
  out.com = com_position(model, ks);
  out.matrix = Mat6X::Zero(6, model.nv());
  const int b = model.base_dofs();
  for (std::size_t i = 0; i < model.links.size(); ++i) {
    const Link& l = model.links[i];
    if (l.mass == 0.0) continue;
    const Vec3 c = ks.link_poses[i] * l.com;
    const Vec3 rc = c - out.com;
    const Mat3& R = ks.link_rotations[i];
    const Mat3 I = R * l.inertia * R.transpose();
    auto accumulate = [&](int col, const Vec3& omega, const Vec3& v) {
      out.matrix.block<3, 1>(3, col) += l.mass * v;
      out.matrix.block<3, 1>(0, col) += rc.cross(l.mass * v) + I * omega;
    };
    if (b == 6) {
      const Vec3 r = c - ks.base_pose.position;
      for (int k = 0; k < 3; ++k) {
        const Vec3 a = ks.base_rotation.col(k);
        accumulate(k, a, a.cross(r));
        accumulate(3 + k, Vec3::Zero(), Vec3::Unit(k));
      }
    }
    for (int qi : model.support(static_cast<int>(i))) {
      const Vec3& a = ks.axes[qi];
      accumulate(b + qi, a, a.cross(c - ks.origins[qi]));
    }
  }
  return out;
}

inline CentroidalMomentum centroidal_momentum_matrix(const RobotModel& model, const JointConfiguration& q) {
  return centroidal_momentum_matrix(model, compute_kinematics(model, q));
}

}  // namespace kst

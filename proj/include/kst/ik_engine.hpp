// ik_engine.hpp - per-tick differential IK: task assembly, QP solve, integration
#pragma once

#include "kst/collision.hpp"
#include "kst/input_pipeline.hpp"
#include "kst/qp_solver.hpp"
#include "kst/support_polygon.hpp"

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace kst {

enum class TaskKind { spatial_pose, com, momentum_min };

// Axis order everywhere: (wx, wy, wz, x, y, z).
using AxisMask = std::array<bool, 6>;
inline constexpr AxisMask kAllAxes{true, true, true, true, true, true};
inline constexpr AxisMask kAngularAxes{true, true, true, false, false, false};
inline constexpr AxisMask kPelvisAxes{true, true, true, false, false, true};
inline constexpr AxisMask kGroundAxes{false, false, false, true, true, false};

struct MotionTask {
  TaskKind kind = TaskKind::spatial_pose;
  std::string name;
  std::string frame;  // spatial tasks only
  Vec6 weight = Vec6::Ones();
  double gain = 0.0;
  AxisMask selection = kAllAxes;
  Pose desired;  // CoM tasks use desired.position
  Twist feedforward;
};

enum class ComMode { balance_hold, track_user };

struct TaskWeights {
  double hand = 10.0;
  double chest = 1.0;
  double pelvis = 5.0;
  double com = 20.0;
  double momentum = 0.1;
  double contact = 100.0;
};

struct IKConfig {
  double dt = 0.001;
  double nominal_weight = 0.05;  // C_nom, actuated joints only
  double nominal_gain = 5.0;     // 1/s
  double damping_weight = 0.01;  // C_vd
  std::optional<VecX> q_nominal;  // defaults to the model's nominal posture
  double velocity_bound_scale = 1.0;  // times the model velocity limits
  TaskWeights weights;
  double task_gain = 50.0;
  double contact_gain = 50.0;
  bool collision_avoidance = true;
  double activation_distance = 0.05;
  double min_separation = 0.01;
  bool com_constraint = true;
  double support_shrink = 0.01;
  double recovery_speed = 0.1;  // m/s, cap on the push-back demanded by violated rows
  // Extra distance kept in the linearized collision/CoM rows so the
  // second-order integration error stays on the safe side.
  double safety_buffer = 1e-4;
  int max_step_halvings = 8;  // then the step is dropped
  ComMode com_mode = ComMode::balance_hold;
  QpSettings qp;
};

/// Estimator output per tracked body, keyed by frame name.
struct TaskInputs {
  std::map<std::string, Prediction> bodies;  // hand_left, hand_right, chest, pelvis
  std::optional<Prediction> com;             // user CoM ground point, track_user only
  Vec3 balance_com = Vec3::Zero();           // balance_hold target on the ground
};

/// Tasks for the tracked bodies plus the CoM and momentum tasks. Inactive
/// bodies produce nothing.
inline std::vector<MotionTask> build_tasks(const TaskInputs& in, const IKConfig& cfg) {
  std::vector<MotionTask> tasks;
  auto spatial = [&](const char* frame, double w, const AxisMask& sel) {
    auto it = in.bodies.find(frame);
    if (it == in.bodies.end() || !it->second.active) return;
    MotionTask t;
    t.name = frame;
    t.frame = frame;
    t.weight = Vec6::Constant(w);
    t.gain = cfg.task_gain;
    t.selection = sel;
    t.desired = it->second.desired;
    t.feedforward = it->second.feedforward;
    tasks.push_back(t);
  };
  spatial("hand_left", cfg.weights.hand, kAllAxes);
  spatial("hand_right", cfg.weights.hand, kAllAxes);
  spatial("chest", cfg.weights.chest, kAngularAxes);
  spatial("pelvis", cfg.weights.pelvis, kPelvisAxes);

  MotionTask com;
  com.kind = TaskKind::com;
  com.name = "com";
  com.weight = Vec6::Constant(cfg.weights.com);
  com.gain = cfg.task_gain;
  com.selection = kGroundAxes;
  com.desired.position = in.balance_com;
  if (cfg.com_mode == ComMode::track_user && in.com && in.com->active) {
    com.desired.position = in.com->desired.position;
    com.feedforward.linear = in.com->feedforward.linear;
  }
  tasks.push_back(com);

  MotionTask mom;
  mom.kind = TaskKind::momentum_min;
  mom.name = "momentum";
  mom.weight = Vec6::Constant(cfg.weights.momentum);
  mom.selection = kAngularAxes;
  tasks.push_back(mom);
  return tasks;
}

/// Sole tasks holding the stance feet (and driving a swing foot).
inline std::vector<MotionTask> build_contact_tasks(const RobotModel& model, const std::array<Pose, 2>& soles,
                                                   const std::array<Twist, 2>& velocities, const IKConfig& cfg) {
  std::vector<MotionTask> out;
  const char* sides[2] = {"left", "right"};
  for (int s = 0; s < 2; ++s) {
    MotionTask t;
    t.name = std::string("contact_") + sides[s];
    t.frame = model.frames[model.foot_polygons.at(sides[s]).frame].name;
    t.weight = Vec6::Constant(cfg.weights.contact);
    t.gain = cfg.contact_gain;
    t.desired = soles[s];
    t.feedforward = velocities[s];
    out.push_back(t);
  }
  return out;
}

struct AssembledQp {
  QuadraticProgram qp;
  int com_rows = 0;  // first rows of C
  int collision_rows = 0;  // following the CoM rows
  std::vector<Proximity> collisions;  // one per collision row
};

namespace detail {

// Task Jacobian (6 x nv) and desired task-space velocity.
inline std::pair<Mat6X, Vec6> task_terms(const RobotModel& model, const KinematicsState& ks,
                                         const CentroidalMomentum& cmm, const MotionTask& t) {
  Mat6X J = Mat6X::Zero(6, model.nv());
  Vec6 p = Vec6::Zero();
  switch (t.kind) {
    case TaskKind::spatial_pose: {
      const Frame f = model.resolve_frame(t.frame);
      J = geometric_jacobian(model, ks, f);
      p = (pose_feedback(frame_pose(model, ks, f), t.desired, t.gain) + t.feedforward).stacked();
      break;
    }
    case TaskKind::com:
      J.bottomRows<3>() = cmm.linear() / model.total_mass();
      p.tail<3>() = t.gain * (t.desired.position - cmm.com) + t.feedforward.linear;
      break;
    case TaskKind::momentum_min:
      J.topRows<3>() = cmm.angular() / model.total_mass();
      break;
  }
  return {J, p};
}

}  // namespace detail

/// Builds the tick QP over the generalized velocity. `polygon` may be null
/// (no CoM rows); `proximity` holds the current pair distances.
inline AssembledQp assemble_qp(const RobotModel& model, const KinematicsState& ks, const JointConfiguration& q,
                               const std::vector<MotionTask>& tasks, const IKConfig& cfg,
                               const SupportPolygon* polygon, const std::vector<Proximity>& proximity) {
  const int nv = model.nv(), b = model.base_dofs(), nj = model.num_joints();
  constexpr double inf = std::numeric_limits<double>::infinity();
  AssembledQp out;
  QuadraticProgram& qp = out.qp;
  qp.H = MatX::Identity(nv, nv) * cfg.damping_weight;
  qp.g = VecX::Zero(nv);

  const VecX q_nom = cfg.q_nominal ? *cfg.q_nominal : model.nominal_joint_positions();
  for (int j = 0; j < nj; ++j) {
    qp.H(b + j, b + j) += cfg.nominal_weight;
    qp.g[b + j] -= cfg.nominal_weight * cfg.nominal_gain * (q_nom[j] - q.joint_positions[j]);
  }

  const CentroidalMomentum cmm = centroidal_momentum_matrix(model, ks);
  for (const MotionTask& t : tasks) {
    const auto [J, p] = detail::task_terms(model, ks, cmm, t);
    for (int r = 0; r < 6; ++r) {
      if (!t.selection[r] || t.weight[r] == 0.0) continue;
      qp.H.noalias() += t.weight[r] * J.row(r).transpose() * J.row(r);
      qp.g.noalias() -= t.weight[r] * p[r] * J.row(r).transpose();
    }
  }

  qp.lb = VecX::Constant(nv, -inf);
  qp.ub = VecX::Constant(nv, inf);
  const VecX vmax = model.velocity_limits() * cfg.velocity_bound_scale;
  const VecX lo = model.joint_lower(), hi = model.joint_upper();
  for (int j = 0; j < nj; ++j) {
    qp.lb[b + j] = std::max(-vmax[j], (lo[j] - q.joint_positions[j]) / cfg.dt);
    qp.ub[b + j] = std::min(vmax[j], (hi[j] - q.joint_positions[j]) / cfg.dt);
  }

  std::vector<VecX> rows;
  std::vector<double> rhs;
  auto capped = [&](double slack) { return std::max(slack / cfg.dt, -cfg.recovery_speed); };
  if (cfg.com_constraint && polygon && polygon->vertices.size() >= 3) {
    const Eigen::Matrix<double, 2, Eigen::Dynamic> Jc = cmm.linear().topRows<2>() / model.total_mass();
    const Vec2 c = cmm.com.head<2>();
    for (const auto& e : polygon->edges()) {
      const double dist = e.normal.dot(c) - e.offset;
      rows.push_back(-(e.normal.transpose() * Jc).transpose());
      rhs.push_back(capped(dist - cfg.support_shrink - cfg.safety_buffer));
    }
    out.com_rows = static_cast<int>(rows.size());
  }
  if (cfg.collision_avoidance) {
    for (const Proximity& pr : proximity) {
      if (pr.distance >= cfg.activation_distance) continue;
      const int la = model.collision_shapes[pr.shape_a].link, lb = model.collision_shapes[pr.shape_b].link;
      const Mat3X Ja = point_jacobian(model, ks, la, pr.point_a);
      const Mat3X Jb = point_jacobian(model, ks, lb, pr.point_b);
      rows.push_back(((Ja - Jb).transpose() * pr.axis).eval());
      rhs.push_back(capped(pr.distance - cfg.min_separation - cfg.safety_buffer));
      out.collisions.push_back(pr);
    }
    out.collision_rows = static_cast<int>(out.collisions.size());
  }
  qp.C.resize(static_cast<int>(rows.size()), nv);
  qp.d.resize(static_cast<int>(rows.size()));
  for (int i = 0; i < static_cast<int>(rows.size()); ++i) {
    qp.C.row(i) = rows[i].transpose();
    qp.d[i] = rhs[i];
  }
  return out;
}

struct TickStats {
  QpStatus status = QpStatus::optimal;
  int iterations = 0;
  double kkt_residual = 0.0;
  int clamped_joints = 0;
  int step_halvings = 0;
  bool fault = false;
};

struct TickResult {
  JointConfiguration q;
  VecX v;
  TickStats stats;
};

/// Owns the IK's desired configuration and the QP warm start.
class IKEngine {
 public:
  IKEngine(const RobotModel& model, IKConfig cfg, JointConfiguration q0)
      : model_(&model), cfg_(std::move(cfg)), solver_(cfg_.qp), q_(std::move(q0)), v_(VecX::Zero(model.nv())) {
    check_dimensions(model, q_);
  }

  const IKConfig& config() const { return cfg_; }
  const JointConfiguration& q() const { return q_; }
  const VecX& v() const { return v_; }
  const AssembledQp& last_qp() const { return last_; }
  long faults() const { return faults_; }
  long clamp_events() const { return clamp_events_; }
  long step_halvings() const { return step_halvings_; }
  void reset(const JointConfiguration& q) {
    q_ = q;
    v_.setZero();
    cached_ = false;
  }

  TickResult tick(const std::vector<MotionTask>& tasks, const SupportPolygon* polygon = nullptr) {
    if (!cached_) cache(compute_kinematics(*model_, q_));
    last_ = assemble_qp(*model_, *ks_, q_, tasks, cfg_, polygon, prox_);

    TickResult r;
    const QpSolution sol = solver_.solve(last_.qp, v_);
    r.stats.status = sol.status;
    r.stats.iterations = sol.iterations;
    r.stats.kkt_residual = sol.kkt_residual;
    if (sol.status == QpStatus::infeasible || !sol.x.allFinite()) {
      r.stats.fault = true;
      ++faults_;
      v_.setZero();
    } else {
      v_ = sol.x;
    }

    // The rows are linear in v; halve the step until the integrated
    // configuration keeps every separation and the CoM margin.
    const bool com_rows = cfg_.com_constraint && polygon && polygon->vertices.size() >= 3;
    const double margin = com_rows ? polygon->margin_of(com_position(*model_, *ks_).head<2>()) : 0.0;
    JointConfiguration next;
    KinematicsState ks;
    int clamped = 0;
    for (int halving = 0;; ++halving) {
      next = integrate(*model_, q_, v_, cfg_.dt);
      clamped = clamp_to_limits(next);
      ks = compute_kinematics(*model_, next);
      if (v_.isZero(0.0) || keeps_invariants(ks, com_rows ? polygon : nullptr, margin)) break;
      if (halving == cfg_.max_step_halvings) {
        v_.setZero();
        continue;
      }
      v_ *= 0.5;
      ++r.stats.step_halvings;
    }
    step_halvings_ += r.stats.step_halvings;
    q_ = std::move(next);
    cache(std::move(ks));
    r.stats.clamped_joints = clamped;
    clamp_events_ += clamped;
    r.q = q_;
    r.v = v_;
    return r;
  }

 private:
  const RobotModel* model_;
  IKConfig cfg_;
  QpSolver solver_;
  JointConfiguration q_;
  VecX v_;
  AssembledQp last_;
  long faults_ = 0;
  long clamp_events_ = 0;
  long step_halvings_ = 0;
  bool cached_ = false;
  std::optional<KinematicsState> ks_;  // of q_
  std::vector<Proximity> prox_;

  void cache(KinematicsState ks) {
    prox_.clear();
    if (cfg_.collision_avoidance) prox_ = collision_proximity(*model_, ks, model_->collision_pairs);
    ks_ = std::move(ks);
    cached_ = true;
  }

  int clamp_to_limits(JointConfiguration& q) const {
    int n = 0;
    for (int j = 0; j < model_->num_joints(); ++j) {
      const Joint& jt = model_->revolute(j);
      const double c = std::clamp(q.joint_positions[j], jt.q_min, jt.q_max);
      if (c != q.joint_positions[j]) {
        q.joint_positions[j] = c;
        ++n;
      }
    }
    return n;
  }

  // A pair or margin already short of its bound may not get worse.
  bool keeps_invariants(const KinematicsState& ks, const SupportPolygon* polygon, double margin) const {
    if (cfg_.collision_avoidance) {
      const auto next = collision_proximity(*model_, ks, model_->collision_pairs);
      for (std::size_t i = 0; i < next.size(); ++i)
        if (next[i].distance < cfg_.min_separation && next[i].distance < prox_[i].distance) return false;
    }
    if (polygon) {
      const double m = polygon->margin_of(com_position(*model_, ks).head<2>());
      if (m < cfg_.support_shrink && m < margin) return false;
    }
    return true;
  }
};

/// Nominal posture with the base raised so the lower sole touches z = 0.
inline JointConfiguration standing_configuration(const RobotModel& model) {
  JointConfiguration q{Pose{}, model.nominal_joint_positions()};
  if (!model.floating_base() || model.foot_polygons.size() < 2) return q;
  const auto soles = sole_poses(model, compute_kinematics(model, q));
  q.base_pose.position.z() = -std::min(soles[0].position.z(), soles[1].position.z());
  return q;
}

}  // namespace kst

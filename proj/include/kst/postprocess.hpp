// postprocess.hpp - setpoint shaping after the IK: scaling, PD double integration,
// low-pass and initial blending
#pragma once

#include "kst/robot_model.hpp"

#include <cstdint>

namespace kst {

struct PostProcessConfig {
  double velocity_scale = 1.0;
  double kp = 100.0;  // 1/s^2
  double kd = 20.0;   // 1/s
  double lowpass_cutoff = 0.0;  // Hz, 0 bypasses
  double blend_duration = 1.0;  // s
  bool lowpass_after_feedback = true;

  void validate() const {
    if (!(velocity_scale >= 0.0 && velocity_scale <= 1.0)) throw std::invalid_argument("velocity_scale outside [0, 1]");
    if (!(kp >= 0.0) || !(kd >= 0.0)) throw std::invalid_argument("kp and kd must be >= 0");
    if (!(lowpass_cutoff >= 0.0)) throw std::invalid_argument("lowpass_cutoff must be >= 0");
    if (!(blend_duration >= 0.0)) throw std::invalid_argument("blend_duration must be >= 0");
  }
  bool underdamped() const { return kd * kd < 2.0 * kp; }
};

struct JointSetpointFrame {
  VecX q, qd, qdd;
  Pose base_pose;
  Twist base_twist;  // body angular, world linear
  Twist base_accel;
  std::int64_t tick = 0;
  double timestamp = 0.0;

  static JointSetpointFrame at_rest(const JointConfiguration& c) {
    JointSetpointFrame f;
    f.q = c.joint_positions;
    f.qd = VecX::Zero(c.joint_positions.size());
    f.qdd = VecX::Zero(c.joint_positions.size());
    f.base_pose = c.base_pose;
    return f;
  }
  JointConfiguration configuration() const { return {base_pose, q}; }
};

inline VecX downscale_velocity(const VecX& v, double scale) { return v * scale; }

/// One PD step towards the IK stream; velocity is integrated before position.
/// `v_ik` is the generalized IK velocity (base twist first when floating).
inline JointSetpointFrame feedback_integrate(const JointSetpointFrame& f, const JointConfiguration& q_ik,
                                             const VecX& v_ik, const PostProcessConfig& cfg, double dt) {
  JointSetpointFrame out = f;
  const int nj = static_cast<int>(f.q.size());
  const int b = static_cast<int>(v_ik.size()) - nj;
  const VecX qd_ik = v_ik.tail(nj);
  out.qdd = cfg.kp * (q_ik.joint_positions - f.q) + cfg.kd * (qd_ik - f.qd);
  out.qd = f.qd + out.qdd * dt;
  out.q = f.q + out.qd * dt;
  if (b == 6) {
    const Twist err = pose_feedback(f.base_pose, q_ik.base_pose, 1.0);
    const Twist v_target{v_ik.head<3>(), v_ik.segment<3>(3)};
    out.base_accel = err * cfg.kp + Twist{v_target.angular - f.base_twist.angular, v_target.linear - f.base_twist.linear} * cfg.kd;
    out.base_twist = f.base_twist + out.base_accel * dt;
    out.base_pose = integrate(f.base_pose, out.base_twist, dt);
  }
  return out;
}

/// First-order low-pass; orientation is filtered in the tangent space of the
/// previous output.
class LowPass {
 public:
  LowPass(double cutoff = 0.0) : cutoff_(cutoff) {}

  double beta(double dt) const {
    if (cutoff_ <= 0.0) return 1.0;
    return dt / (dt + 1.0 / (2.0 * kPi * cutoff_));
  }

  double cutoff() const { return cutoff_; }
  void reset() { primed_ = false; }

  JointSetpointFrame operator()(const JointSetpointFrame& x, double dt) {
    if (cutoff_ <= 0.0 || !primed_) {
      y_ = x;
      primed_ = true;
      return y_;
    }
    const double a = beta(dt);
    JointSetpointFrame y = x;
    y.q = y_.q + a * (x.q - y_.q);
    y.qd = y_.qd + a * (x.qd - y_.qd);
    y.qdd = y_.qdd + a * (x.qdd - y_.qdd);
    y.base_pose = interpolate(y_.base_pose, x.base_pose, a);
    y.base_twist = y_.base_twist + Twist{x.base_twist.angular - y_.base_twist.angular,
                                         x.base_twist.linear - y_.base_twist.linear} * a;
    y.base_accel = y_.base_accel + Twist{x.base_accel.angular - y_.base_accel.angular,
                                         x.base_accel.linear - y_.base_accel.linear} * a;
    y_ = y;
    return y;
  }

 private:
  double cutoff_;
  bool primed_ = false;
  JointSetpointFrame y_;
};

inline double blend_weight(double t, double duration) {
  if (duration <= 0.0) return 1.0;
  return smoothstep(t / duration);
}

/// Smoothstep blend from the robot's actual configuration (at rest) to the stream.
inline JointSetpointFrame blend_initial(const JointConfiguration& actual, const JointSetpointFrame& stream,
                                        double t_since_start, double duration) {
  const double s = blend_weight(t_since_start, duration);
  if (s >= 1.0) return stream;
  JointSetpointFrame out = stream;
  if (s <= 0.0) {
    out.q = actual.joint_positions;
    out.base_pose = actual.base_pose;
    out.qd.setZero();
    out.qdd.setZero();
    out.base_twist = {};
    out.base_accel = {};
    return out;
  }
  out.q = (1.0 - s) * actual.joint_positions + s * stream.q;
  out.qd = s * stream.qd;
  out.qdd = s * stream.qdd;
  out.base_pose = interpolate(actual.base_pose, stream.base_pose, s);
  out.base_twist = stream.base_twist * s;
  out.base_accel = stream.base_accel * s;
  return out;
}

/// The whole chain for one output stream.
class PostProcessor {
 public:
  PostProcessor(const RobotModel& model, PostProcessConfig cfg) : model_(&model), cfg_(cfg), filter_(cfg.lowpass_cutoff) {
    cfg_.validate();
  }

  const PostProcessConfig& config() const { return cfg_; }
  const JointSetpointFrame& feedback_state() const { return fb_; }
  bool started() const { return started_; }

  /// (Re)starts the stream from the robot's actual configuration.
  void start(const JointConfiguration& actual, double t) {
    actual_ = actual;
    t_start_ = t;
    fb_ = JointSetpointFrame::at_rest(actual);
    filter_.reset();
    started_ = true;
  }

  JointSetpointFrame step(const JointConfiguration& q_ik, const VecX& v_ik, double t, double dt, std::int64_t tick) {
    if (!started_) start(q_ik, t);
    const VecX v = downscale_velocity(v_ik, cfg_.velocity_scale);
    JointSetpointFrame x;
    if (cfg_.lowpass_after_feedback) {
      fb_ = feedback_integrate(fb_, q_ik, v, cfg_, dt);
      x = filter_(fb_, dt);
    } else {
      JointSetpointFrame target = JointSetpointFrame::at_rest(q_ik);
      target.qd = v.tail(model_->num_joints());
      const auto filtered = filter_(target, dt);
      VecX vf = v;
      vf.tail(model_->num_joints()) = filtered.qd;
      fb_ = feedback_integrate(fb_, filtered.configuration(), vf, cfg_, dt);
      x = fb_;
    }
    JointSetpointFrame out = blend_initial(actual_, x, t - t_start_, cfg_.blend_duration);
    for (int j = 0; j < model_->num_joints(); ++j) {
      const Joint& jt = model_->revolute(j);
      out.q[j] = std::clamp(out.q[j], jt.q_min, jt.q_max);
    }
    out.tick = tick;
    out.timestamp = t;
    return out;
  }

 private:
  const RobotModel* model_;
  PostProcessConfig cfg_;
  LowPass filter_;
  JointConfiguration actual_;
  double t_start_ = 0.0;
  JointSetpointFrame fb_;
  bool started_ = false;
};

}  // namespace kst

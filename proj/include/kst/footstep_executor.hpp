// footstep_executor.hpp - kinematic swing-foot executor for streamed footsteps
#pragma once

#include "kst/retargeting.hpp"
#include "kst/support_polygon.hpp"

#include <deque>
#include <optional>

namespace kst {

struct FootstepExecutorConfig {
  double swing_duration = 0.6;  // s
  double apex_height = 0.05;    // m above the straight line between start and goal
  std::size_t max_queue = 8;
};

struct ActiveSwing {
  Side side = Side::left;
  Pose start, goal;
  double start_time = 0.0;
};

struct FootstepCompletion {
  Side side = Side::left;
  Pose pose;
  double time = 0.0;
};

/// Swing-foot pose and velocity at normalized time tau in [0, 1].
/// Horizontal position and yaw follow smoothstep(tau); height adds a
/// parabola 4 tau (1 - tau) reaching the apex at mid-swing.
inline std::pair<Pose, Twist> swing_state(const ActiveSwing& s, double tau, double duration, double apex) {
  tau = std::clamp(tau, 0.0, 1.0);
  const double sigma = smoothstep(tau);
  const double dsigma = 6.0 * tau * (1.0 - tau) / duration;
  const double y0 = yaw_of(s.start.orientation);
  const double dyaw = wrap_angle(yaw_of(s.goal.orientation) - y0);
  Pose p;
  p.position = s.start.position + sigma * (s.goal.position - s.start.position);
  p.position.z() += apex * 4.0 * tau * (1.0 - tau);
  p.orientation = yaw_rotation(y0 + sigma * dyaw);
  Twist v;
  v.linear = dsigma * (s.goal.position - s.start.position);
  v.linear.z() += apex * 4.0 * (1.0 - 2.0 * tau) / duration;
  v.angular = Vec3(0, 0, dsigma * dyaw);
  return {p, v};
}

class FootstepExecutor {
 public:
  FootstepExecutor() = default;
  FootstepExecutor(const RobotModel& model, const std::array<Pose, 2>& soles, FootstepExecutorConfig cfg = {})
      : model_(&model), cfg_(cfg), stance_(soles), polygon_(support_polygon(model, soles)) {}

  const FootstepExecutorConfig& config() const { return cfg_; }
  bool idle() const { return !swing_; }
  std::size_t queue_depth() const { return queue_.size(); }
  const std::optional<ActiveSwing>& swing() const { return swing_; }
  double time() const { return time_; }

  /// Stance feet (the swing foot at its start pose while swinging).
  const std::array<Pose, 2>& stance() const { return stance_; }
  /// Support polygon of the stance; recomputed on completion.
  const SupportPolygon& polygon() const { return polygon_; }
  Pose mid_feet() const { return mid_feet_frame(stance_); }

  /// Current sole targets and velocities, swing foot included.
  std::array<Pose, 2> soles() const {
    auto out = stance_;
    if (swing_) out[static_cast<int>(swing_->side)] = current_swing().first;
    return out;
  }
  std::array<Twist, 2> sole_velocities() const {
    std::array<Twist, 2> out{};
    if (swing_) out[static_cast<int>(swing_->side)] = current_swing().second;
    return out;
  }

  /// Stance after the active swing and every queued step have landed.
  std::array<Pose, 2> planned_feet() const {
    auto out = stance_;
    if (swing_) out[static_cast<int>(swing_->side)] = swing_->goal;
    for (const auto& c : queue_) out[static_cast<int>(c.side)] = c.pose;
    return out;
  }

  /// False when the queue is full.
  bool enqueue(const FootstepCommand& c) {
    if (queue_.size() >= cfg_.max_queue) return false;
    queue_.push_back(c);
    return true;
  }

  /// Advances the executor clock by dt.
  std::optional<FootstepCompletion> update(double dt) {
    time_ += dt;
    if (!swing_ && !queue_.empty()) {
      const FootstepCommand c = queue_.front();
      queue_.pop_front();
      const int i = static_cast<int>(c.side);
      Pose goal = c.pose;
      goal.orientation = yaw_rotation(yaw_of(goal.orientation));
      swing_ = ActiveSwing{c.side, stance_[i], goal, time_ - dt};
    }
    if (!swing_ || time_ - swing_->start_time < cfg_.swing_duration - 1e-12) return std::nullopt;
    const int i = static_cast<int>(swing_->side);
    stance_[i] = swing_->goal;
    polygon_ = support_polygon(*model_, stance_);
    FootstepCompletion done{swing_->side, swing_->goal, time_};
    swing_.reset();
    return done;
  }

 private:
  std::pair<Pose, Twist> current_swing() const {
    return swing_state(*swing_, (time_ - swing_->start_time) / cfg_.swing_duration, cfg_.swing_duration,
                       cfg_.apex_height);
  }

  const RobotModel* model_ = nullptr;
  FootstepExecutorConfig cfg_;
  std::array<Pose, 2> stance_;
  SupportPolygon polygon_;
  std::deque<FootstepCommand> queue_;
  std::optional<ActiveSwing> swing_;
  double time_ = 0.0;
};

}  // namespace kst

// synthetic.hpp - deterministic input streams for replay, benchmarks and tests
#pragma once

#include "kst/ik_engine.hpp"
#include "kst/protocol.hpp"
#include "kst/recording.hpp"

#include <random>

namespace kst::synth {

/// Body poses of the standing configuration: the natural "hold still" targets.
inline std::map<std::string, Pose> rest_targets(const RobotModel& model) {
  const auto ks = compute_kinematics(model, standing_configuration(model));
  std::map<std::string, Pose> out;
  for (const char* b : {"hand_left", "hand_right", "chest", "pelvis"}) out[b] = frame_pose(model, ks, b);
  return out;
}

inline RecordedMessage message(const std::string& type, std::uint64_t seq, double t_send, double arrival,
                               nlohmann::json payload) {
  return {arrival, encode({type, seq, t_send, std::move(payload)})};
}

struct SinusoidOptions {
  double duration = 10.0;   // s
  double rate = 60.0;       // Hz
  double amplitude = 0.15;  // m
  double frequency = 0.5;   // Hz
  Vec3 axis = Vec3::UnitX();
  double transport_delay = 0.0;  // s, arrival minus send
  double jitter = 0.0;           // s, uniform in [0, jitter) added to the delay
  bool chest = true, pelvis = true;
  unsigned seed = 7;
};

/// Hand targets oscillate about their rest poses; the other bodies hold.
inline std::vector<RecordedMessage> sinusoid_motion(const RobotModel& model, const SinusoidOptions& o = {}) {
  const auto rest = rest_targets(model);
  std::mt19937 rng(o.seed);
  std::uniform_real_distribution<double> jit(0.0, 1.0);
  std::vector<RecordedMessage> out;
  const auto n = static_cast<long>(std::floor(o.duration * o.rate + 1e-9));
  double last_arrival = 0.0;
  for (long k = 0; k < n; ++k) {
    const double t = k / o.rate;
    const double s = o.amplitude * std::sin(2.0 * kPi * o.frequency * t);
    MotionInput m;
    m.timestamp = t;
    for (const char* h : {"hand_left", "hand_right"}) {
      Pose p = rest.at(h);
      p.position += s * o.axis.normalized();
      m.targets[h] = {p};
    }
    if (o.chest) m.targets["chest"] = {rest.at("chest"), false, true};
    if (o.pelvis) m.targets["pelvis"] = {rest.at("pelvis")};
    const double arrival = std::max(last_arrival, t + o.transport_delay + o.jitter * jit(rng));
    last_arrival = arrival;
    out.push_back(message(msg::motion_input, static_cast<std::uint64_t>(k + 1), t, arrival, to_json(m)));
  }
  return out;
}

struct AdversarialOptions {
  double duration = 60.0;
  double rate = 60.0;
  unsigned seed = 1;
  double p_jump = 0.02;      // per message
  double p_dropout = 0.01;   // starts a gap of up to max_gap
  double max_gap = 1.5;      // s
  double p_out_of_box = 0.02;
};

/// Random walk of hand, chest and pelvis targets with large jumps, dropouts,
/// out-of-box targets and far-reaching hand sweeps.
inline std::vector<RecordedMessage> adversarial_motion(const RobotModel& model, const AdversarialOptions& o = {}) {
  const auto rest = rest_targets(model);
  std::mt19937 rng(o.seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::map<std::string, Pose> cur = rest;
  std::vector<RecordedMessage> out;
  std::uint64_t seq = 0;
  auto random_pose_near = [&](const Pose& base, double r, double a) {
    Pose p = base;
    p.position += r * Vec3(u(rng), u(rng), u(rng));
    p.orientation = (p.orientation * quat_exp(a * Vec3(u(rng), u(rng), u(rng)))).normalized();
    return p;
  };
  const double dt = 1.0 / o.rate;
  for (double t = 0.0; t < o.duration - 1e-9; t += dt) {
    if (u01(rng) < o.p_dropout) {
      t += o.max_gap * u01(rng);
      continue;
    }
    MotionInput m;
    m.timestamp = t;
    for (auto& [body, p] : cur) {
      if (u01(rng) < o.p_jump) {
        // a jump anywhere around the robot, often into the torso or the other arm
        p = random_pose_near(rest.at("chest"), 0.6, kPi);
      } else {
        const double r = body == "pelvis" ? 0.004 : 0.015;
        p = random_pose_near(p, r, 0.05);
        p.position += 0.01 * (rest.at(body).position - p.position);
      }
      Pose sent = p;
      if (u01(rng) < o.p_out_of_box) sent.position += Vec3(0, 0, 3.0 * (u01(rng) + 0.5));
      m.targets[body] = {sent, body != "chest", true};
    }
    if (u01(rng) < 0.5) m.com_ground = Vec3(0.3 * u(rng), 0.3 * u(rng), 0.0);
    out.push_back(message(msg::motion_input, ++seq, t, t + 0.001, to_json(m)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Human tracker bundles

/// A 1.75 m person standing with the controllers held at waist height.
inline TrackerBundle standing_human(double t = 0.0) {
  TrackerBundle b;
  b.timestamp = t;
  b.headset = Pose(Vec3(0.05, 0.0, 1.7), Quat::Identity());
  b.controller_left = Pose(Vec3(0.3, 0.25, 1.1), Quat::Identity());
  b.controller_right = Pose(Vec3(0.3, -0.25, 1.1), Quat::Identity());
  b.chest = Pose(Vec3(0.0, 0.0, 1.35), Quat::Identity());
  b.waist = Pose(Vec3(0.0, 0.0, 1.0), Quat::Identity());
  b.ankle_left = Pose(Vec3(0.0, 0.1, 0.08), Quat::Identity());
  b.ankle_right = Pose(Vec3(0.0, -0.1, 0.08), Quat::Identity());
  return b;
}

struct WalkOptions {
  double duration = 10.0;
  double rate = 60.0;
  double step_period = 2.5;   // s between steps of alternating feet
  double step_length = 0.25;  // m
  double lift_time = 0.5;     // s in the air
  double arm_amplitude = 0.08;
  double transport_delay = 0.002;
};

/// The person reaches with both arms while walking forward in alternating
/// steps, the torso following the feet.
inline std::vector<RecordedMessage> walking_tracker(const WalkOptions& o = {}) {
  std::vector<RecordedMessage> out;
  const auto n = static_cast<long>(std::floor(o.duration * o.rate + 1e-9));
  for (long k = 0; k < n; ++k) {
    const double t = k / o.rate;
    TrackerBundle b = standing_human(t);
    std::array<double, 2> foot_x{0.0, 0.0};
    std::array<double, 2> lift{0.0, 0.0};
    for (int step = 0;; ++step) {
      const double t0 = o.step_period * (step + 1) - 1.0;
      if (t < t0) break;
      const int side = step % 2;
      const double tau = std::min(1.0, (t - t0) / o.lift_time);
      foot_x[side] = o.step_length * (step / 2 + smoothstep(tau));
      lift[side] = 0.15 * 4.0 * tau * (1.0 - tau);
    }
    b.ankle_left.position += Vec3(foot_x[0], 0.0, lift[0]);
    b.ankle_right.position += Vec3(foot_x[1], 0.0, lift[1]);
    const double mid = 0.5 * (foot_x[0] + foot_x[1]);
    for (Pose* p : {&b.headset, &b.chest, &b.waist}) p->position.x() += mid;
    const double s = o.arm_amplitude * std::sin(2.0 * kPi * 0.5 * t);
    b.controller_left.position += Vec3(mid + s, 0.0, 0.5 * s);
    b.controller_right.position += Vec3(mid - s, 0.0, -0.5 * s);
    b.chest.orientation = quat_exp(Vec3(0.0, 0.0, 0.1 * std::sin(2.0 * kPi * 0.25 * t)));
    out.push_back(message(msg::tracker_frame, static_cast<std::uint64_t>(k + 1), t, t + o.transport_delay, to_json(b)));
  }
  return out;
}

inline void write_recording(const std::string& path, const std::vector<RecordedMessage>& msgs) {
  RecordingWriter w(path);
  for (const auto& m : msgs) w.append(m.arrival, m.text);
  w.flush();
}

}  // namespace kst::synth

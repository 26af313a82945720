// session_config.hpp - one JSON file for every module's parameters
#pragma once

#include "kst/footstep_executor.hpp"
#include "kst/ik_engine.hpp"
#include "kst/input_pipeline.hpp"
#include "kst/postprocess.hpp"
#include "kst/retargeting.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <string>

namespace kst {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class InputMode { motion_input, tracker };

struct SessionConfig {
  double tick_rate = 1000.0;  // Hz
  double input_rate = 60.0;   // Hz, expected
  double broadcast_rate = 60.0;  // Hz, joint_frame decimation
  std::string model_path;
  InputMode input_mode = InputMode::motion_input;
  std::string listen = "127.0.0.1:8765";
  std::string record_path;
  std::size_t output_queue = 256;
  bool keep_traces = false;
  RetargetingParams retargeting;
  SafetyLimits safety;
  EstimatorParams estimator;
  IKConfig ik;
  PostProcessConfig postprocess;
  FootstepExecutorConfig footsteps;

  double dt() const { return 1.0 / tick_rate; }

  void validate() const {
    if (!(tick_rate > 0.0) || !(input_rate > 0.0)) throw ConfigError("rates must be positive");
    if (tick_rate < input_rate) throw ConfigError("tick_rate must be >= input_rate");
    if (!(broadcast_rate > 0.0) || broadcast_rate > tick_rate)
      throw ConfigError("broadcast_rate must be in (0, tick_rate]");
    if ((safety.box_max - safety.box_min).minCoeff() <= 0.0) throw ConfigError("safety box needs positive extent");
    if (!(safety.max_rate_linear > 0 && safety.max_rate_angular > 0 && safety.max_velocity_linear > 0 &&
          safety.max_velocity_angular > 0))
      throw ConfigError("safety limits must be positive");
    if (!(estimator.decay_duration > 0.0) || !(estimator.t_corr > 0.0))
      throw ConfigError("estimator durations must be positive");
    if (!(ik.activation_distance > ik.min_separation) || ik.min_separation < 0.0)
      throw ConfigError("need activation_distance > min_separation >= 0");
    if (ik.nominal_weight < 0 || ik.damping_weight < 0) throw ConfigError("weights must be >= 0");
    if (!(footsteps.swing_duration > 0.0)) throw ConfigError("swing_duration must be positive");
    if (output_queue == 0) throw ConfigError("output_queue must be >= 1");
    try {
      postprocess.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("postprocess: ") + e.what());
    }
  }
};

namespace detail {

// Reads known keys from one object and rejects the rest.
class Section {
 public:
  Section(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError(path_ + " must be an object");
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (const auto& [k, v] : j_.items())
      if (!used_.count(k)) throw ConfigError("unknown config key " + path_ + "." + k);
  }

  template <typename T>
  void get(const char* key, T& out) {
    used_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(path_ + "." + key + " has the wrong type");
    }
  }
  void degrees(const char* key, double& rad) {
    double deg = rad * 180.0 / kPi;
    get(key, deg);
    rad = deg * kPi / 180.0;
  }
  void vec3(const char* key, Vec3& out) {
    std::vector<double> v{out.x(), out.y(), out.z()};
    get(key, v);
    if (v.size() != 3) throw ConfigError(path_ + "." + key + " must have 3 entries");
    out = Vec3(v[0], v[1], v[2]);
  }
  bool has(const char* key) const { return j_.contains(key); }
  Section sub(const char* key) {
    used_.insert(key);
    static const nlohmann::json empty = nlohmann::json::object();
    return Section(j_.contains(key) ? j_.at(key) : empty, path_ + "." + key);
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> used_;
};

}  // namespace detail

/// Relative paths resolve against `base_dir`.
inline SessionConfig session_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  SessionConfig c;
  {
    detail::Section s(j, "config");
    s.get("tick_rate", c.tick_rate);
    s.get("input_rate", c.input_rate);
    s.get("broadcast_rate", c.broadcast_rate);
    s.get("model", c.model_path);
    std::string mode = "motion_input";
    s.get("input_mode", mode);
    if (mode == "motion_input") c.input_mode = InputMode::motion_input;
    else if (mode == "tracker") c.input_mode = InputMode::tracker;
    else throw ConfigError("config.input_mode must be \"motion_input\" or \"tracker\"");
    s.get("listen", c.listen);
    s.get("record", c.record_path);
    s.get("output_queue", c.output_queue);
    s.get("keep_traces", c.keep_traces);
    {
      auto r = s.sub("retargeting");
      auto& p = c.retargeting;
      r.get("step_threshold", p.step_threshold);
      r.get("lift_threshold", p.lift_threshold);
      r.get("stride", p.stride);
      r.degrees("turning_threshold_deg", p.turning_threshold);
      r.get("stability_threshold", p.stability_threshold);
      r.get("stability_samples", p.stability_samples);
      r.get("max_reach", p.max_reach);
      r.degrees("max_step_yaw_deg", p.max_step_yaw);
      r.get("min_step_width", p.min_step_width);
      r.get("max_step_width", p.max_step_width);
      r.get("scale_pelvis_horizontal", p.scale_pelvis_horizontal);
    }
    {
      auto r = s.sub("safety");
      auto& p = c.safety;
      r.vec3("box_min", p.box_min);
      r.vec3("box_max", p.box_max);
      r.get("max_rate_linear", p.max_rate_linear);
      r.get("max_rate_angular", p.max_rate_angular);
      r.get("max_velocity_linear", p.max_velocity_linear);
      r.get("max_velocity_angular", p.max_velocity_angular);
    }
    {
      auto r = s.sub("estimator");
      auto& p = c.estimator;
      std::string mode = p.mode == EstimatorMode::feedback ? "feedback" : "first_order";
      r.get("mode", mode);
      if (mode == "feedback") p.mode = EstimatorMode::feedback;
      else if (mode == "first_order") p.mode = EstimatorMode::first_order;
      else throw ConfigError("config.estimator.mode must be \"feedback\" or \"first_order\"");
      r.get("decay_duration", p.decay_duration);
      r.get("t_corr", p.t_corr);
      r.get("dt_min", p.dt_min);
      r.get("dt_max", p.dt_max);
      r.get("compensate_age", p.compensate_age);
    }
    {
      auto r = s.sub("ik");
      auto& p = c.ik;
      r.get("nominal_weight", p.nominal_weight);
      r.get("nominal_gain", p.nominal_gain);
      r.get("damping_weight", p.damping_weight);
      r.get("velocity_bound_scale", p.velocity_bound_scale);
      r.get("task_gain", p.task_gain);
      r.get("contact_gain", p.contact_gain);
      r.get("collision_avoidance", p.collision_avoidance);
      r.get("activation_distance", p.activation_distance);
      r.get("min_separation", p.min_separation);
      r.get("com_constraint", p.com_constraint);
      r.get("support_shrink", p.support_shrink);
      r.get("recovery_speed", p.recovery_speed);
      r.get("safety_buffer", p.safety_buffer);
      r.get("max_step_halvings", p.max_step_halvings);
      if (p.max_step_halvings < 0) throw ConfigError("ik.max_step_halvings must be >= 0");
      std::string com = p.com_mode == ComMode::balance_hold ? "balance_hold" : "track_user";
      r.get("com_mode", com);
      if (com == "balance_hold") p.com_mode = ComMode::balance_hold;
      else if (com == "track_user") p.com_mode = ComMode::track_user;
      else throw ConfigError("config.ik.com_mode must be \"balance_hold\" or \"track_user\"");
      {
        auto w = r.sub("weights");
        w.get("hand", p.weights.hand);
        w.get("chest", p.weights.chest);
        w.get("pelvis", p.weights.pelvis);
        w.get("com", p.weights.com);
        w.get("momentum", p.weights.momentum);
        w.get("contact", p.weights.contact);
      }
      {
        auto q = r.sub("qp");
        q.get("max_iterations", p.qp.max_iterations);
        q.get("feasibility_tolerance", p.qp.feasibility_tolerance);
      }
    }
    {
      auto r = s.sub("postprocess");
      auto& p = c.postprocess;
      r.get("velocity_scale", p.velocity_scale);
      r.get("kp", p.kp);
      r.get("kd", p.kd);
      r.get("lowpass_cutoff", p.lowpass_cutoff);
      r.get("blend_duration", p.blend_duration);
      r.get("lowpass_after_feedback", p.lowpass_after_feedback);
    }
    {
      auto r = s.sub("footsteps");
      r.get("swing_duration", c.footsteps.swing_duration);
      r.get("apex_height", c.footsteps.apex_height);
      r.get("max_queue", c.footsteps.max_queue);
    }
  }
  c.ik.dt = c.dt();
  if (!c.model_path.empty() && std::filesystem::path(c.model_path).is_relative() && !base_dir.empty())
    c.model_path = (base_dir / c.model_path).lexically_normal().string();
  if (!c.record_path.empty() && std::filesystem::path(c.record_path).is_relative() && !base_dir.empty())
    c.record_path = (base_dir / c.record_path).lexically_normal().string();
  c.validate();
  return c;
}

inline SessionConfig load_session_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return session_config_from_json(j, std::filesystem::path(path).parent_path());
}

}  // namespace kst

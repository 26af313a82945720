// pipeline.hpp - ingestion side (parse, route, record) and the per-tick pipeline
#pragma once

#include "kst/footstep_executor.hpp"
#include "kst/ik_engine.hpp"
#include "kst/mailbox.hpp"
#include "kst/metrics.hpp"
#include "kst/postprocess.hpp"
#include "kst/protocol.hpp"
#include "kst/recording.hpp"
#include "kst/retargeting.hpp"
#include "kst/session_config.hpp"

#include <atomic>
#include <functional>
#include <memory>
#include <variant>

namespace kst {

inline constexpr int kBroadcast = -1;

struct InboundInput {
  double arrival = 0.0;
  std::uint64_t seq = 0;
  std::variant<MotionInput, TrackerBundle> data;
};

struct FootstepRequest {
  FootstepCommand command;
  std::uint64_t seq = 0;
  int client = kBroadcast;
};

struct Outbound {
  int client = kBroadcast;  // kBroadcast goes to every client
  std::string text;
};

/// Shared handoff objects between the ingestion thread and the tick loop.
struct SessionChannels {
  LatestValueMailbox<InboundInput> inputs;
  DropOldestQueue<FootstepRequest> footsteps{64};
  DropOldestQueue<Outbound> outbound;

  explicit SessionChannels(std::size_t output_capacity) : outbound(output_capacity) {}
};

inline const std::set<std::string>& tracked_bodies() {
  static const std::set<std::string> b{"hand_left", "hand_right", "chest", "pelvis"};
  return b;
}

/// Parses incoming messages and routes them. Runs on the ingestion thread
/// (or inline during simulated replay); never touches tick-loop state.
class Ingestor {
 public:
  Ingestor(const RobotModel& model, const SessionConfig& cfg, SessionChannels& ch)
      : model_(&model), cfg_(&cfg), ch_(&ch) {}

  void set_recorder(RecordingWriter* w) { recorder_ = w; }
  std::uint64_t protocol_errors() const { return errors_.load(std::memory_order_relaxed); }

  void handle(const std::string& text, double arrival, int client = kBroadcast) {
    Envelope e;
    try {
      e = parse_envelope(text);
      route(e, text, arrival, client);
    } catch (const ProtocolError& err) {
      errors_.fetch_add(1, std::memory_order_relaxed);
      reply(client, error_message(err.code(), err.what(), e.seq));
    }
  }

 private:
  void reply(int client, Envelope e) {
    e.seq = ++out_seq_;
    ch_->outbound.push({client, encode(e)});
  }

  void route(const Envelope& e, const std::string& text, double arrival, int client) {
    const bool tracker_mode = cfg_->input_mode == InputMode::tracker;
    if (e.type == msg::tracker_frame || e.type == msg::motion_input) {
      const bool is_tracker = e.type == msg::tracker_frame;
      if (is_tracker != tracker_mode)
        throw ProtocolError("wrong_mode", std::string("session expects ") + (tracker_mode ? "tracker_frame" : "motion_input"));
      InboundInput in{arrival, e.seq, MotionInput{}};
      if (is_tracker) {
        TrackerBundle b = tracker_bundle_from_json(e.payload);
        if (!all_finite(b)) throw ProtocolError("bad_payload", "tracker frame has non-finite values");
        in.data = b;
      } else {
        in.data = motion_input_from_json(e.payload);
      }
      if (recorder_) recorder_->append(arrival, text);
      ch_->inputs.write(std::move(in));
    } else if (e.type == msg::footstep_command) {
      FootstepCommand c = footstep_command_from_json(e.payload);
      c.timestamp = arrival;
      if (recorder_) recorder_->append(arrival, text);
      ch_->footsteps.push({c, e.seq, client});
    } else if (e.type == msg::hello) {
      if (e.payload.contains("mode")) {
        const auto& m = e.payload["mode"];
        const char* want = tracker_mode ? "tracker" : "motion_input";
        if (m != want) throw ProtocolError("wrong_mode", std::string("session runs in ") + want + " mode");
      }
      reply(client, {msg::hello, 0, 0.0,
                     {{"mode", tracker_mode ? "tracker" : "motion_input"},
                      {"model", model_->name},
                      {"tick_rate", cfg_->tick_rate},
                      {"input_rate", cfg_->input_rate},
                      {"broadcast_rate", cfg_->broadcast_rate},
                      {"bounding_box", {{"min", wire::vec(cfg_->safety.box_min)}, {"max", wire::vec(cfg_->safety.box_max)}}},
                      {"t_send_echo", e.t_send_s}}});
    } else if (e.type == msg::model_summary_request) {
      reply(client, {msg::model_summary, 0, 0.0, model_summary_payload(*model_)});
    } else {
      throw ProtocolError("unexpected_type", "'" + e.type + "' is sent by the server only");
    }
  }

  const RobotModel* model_;
  const SessionConfig* cfg_;
  SessionChannels* ch_;
  RecordingWriter* recorder_ = nullptr;
  std::atomic<std::uint64_t> errors_{0};
  std::uint64_t out_seq_ = 0;  // ingestion thread only
};

/// Everything the tick loop owns.
class Pipeline {
 public:
  using FrameSink = std::function<void(const JointSetpointFrame&)>;
  using Observer = std::function<void(const Pipeline&)>;

  Pipeline(const RobotModel& model, const SessionConfig& cfg, SessionChannels& ch)
      : model_(&model),
        cfg_(cfg),
        ch_(&ch),
        q0_(standing_configuration(model)),
        ik_(model, cfg.ik, q0_),
        post_(model, cfg.postprocess),
        retargeter_(cfg.retargeting) {
    const auto ks = compute_kinematics(model, q0_);
    executor_ = FootstepExecutor(model, sole_poses(model, ks), cfg.footsteps);
    Vec3 com = com_position(model, ks);
    com.z() = 0.0;
    com_offset_ = executor_.mid_feet().inverse() * com;
    geometry_ = measure_robot(model, q0_);
    chest0_ = frame_pose(model, ks, "chest");
    shoulder0_ = {frame_pose(model, ks, "shoulder_left").position, frame_pose(model, ks, "shoulder_right").position};
    mounting_ = {model.hand_mounting.count("left") ? model.hand_mounting.at("left") : Quat::Identity(),
                 model.hand_mounting.count("right") ? model.hand_mounting.at("right") : Quat::Identity()};
    for (const auto& b : tracked_bodies()) estimators_.emplace(b, BodyEstimator(cfg.estimator));
    estimators_.emplace("com", BodyEstimator(cfg.estimator));
    decimation_ = std::max<long>(1, std::lround(cfg.tick_rate / cfg.broadcast_rate));
    metrics_.keep_traces = cfg.keep_traces;
    post_.start(q0_, 0.0);
  }

  void set_frame_sink(FrameSink s) { sink_ = std::move(s); }
  void set_observer(Observer o) { observer_ = std::move(o); }
  void set_dump_qp(long tick, std::function<void(const AssembledQp&)> f) {
    dump_tick_ = tick;
    dump_ = std::move(f);
  }

  const RobotModel& model() const { return *model_; }
  const SessionConfig& config() const { return cfg_; }
  const IKEngine& ik() const { return ik_; }
  const TickResult& last_ik() const { return last_ik_; }
  const JointSetpointFrame& last_frame() const { return frame_; }
  const FootstepExecutor& executor() const { return executor_; }
  const std::map<std::string, BodyEstimator>& estimators() const { return estimators_; }
  const std::map<std::string, Prediction>& predictions() const { return predictions_; }
  const std::vector<MotionTask>& tasks() const { return tasks_; }
  const JointConfiguration& initial_configuration() const { return q0_; }
  const Metrics& metrics() const { return metrics_; }
  Metrics& metrics() { return metrics_; }
  std::int64_t ticks() const { return tick_; }
  bool consumed_input() const { return !pending_latency_.empty(); }

  /// Runs one tick at session time `now` and emits its frame.
  const JointSetpointFrame& tick(double now) {
    const double dt = cfg_.dt();
    process_footstep_requests(now);
    pending_latency_.clear();
    if (auto in = ch_->inputs.read()) consume(*in, now);
    metrics_.mailbox_overwrites = ch_->inputs.overwrites();

    predictions_.clear();
    TaskInputs ti;
    for (auto& [name, est] : estimators_) {
      if (!est.initialized()) continue;
      const Prediction p = est.predict(dt);
      predictions_[name] = p;
      if (name == "com") ti.com = p;
      else ti.bodies[name] = p;
    }
    const auto soles = executor_.soles();
    ti.balance_com = mid_feet_frame(soles) * com_offset_;
    ti.balance_com.z() = 0.0;
    tasks_ = build_tasks(ti, cfg_.ik);
    const auto contacts = build_contact_tasks(*model_, soles, executor_.sole_velocities(), cfg_.ik);
    tasks_.insert(tasks_.end(), contacts.begin(), contacts.end());

    last_ik_ = ik_.tick(tasks_, &executor_.polygon());
    if (dump_ && tick_ == dump_tick_) dump_(ik_.last_qp());
    metrics_.record_qp(last_ik_.stats.status, last_ik_.stats.iterations);
    metrics_.clamp_events += static_cast<std::uint64_t>(last_ik_.stats.clamped_joints);
    metrics_.step_halvings += static_cast<std::uint64_t>(last_ik_.stats.step_halvings);
    if (last_ik_.stats.fault) ++metrics_.faults;

    frame_ = post_.step(last_ik_.q, last_ik_.v, now, dt, tick_);
    record_tracking();

    if (auto done = executor_.update(dt)) {
      ++metrics_.footsteps_completed;
      broadcast({msg::footstep_command_ack, 0, now,
                 {{"status", "completed"}, {"side", to_string(done->side)}, {"p", wire::vec(done->pose.position)},
                  {"yaw", yaw_of(done->pose.orientation)}, {"queue_depth", executor_.queue_depth()}}});
    }

    ++metrics_.frames_emitted;
    if (sink_) sink_(frame_);
    if (tick_ % decimation_ == 0) broadcast({msg::joint_frame, 0, now, joint_frame_payload(frame_)});
    if (tick_ > 0 && tick_ % std::max<long>(1, std::lround(cfg_.tick_rate)) == 0)
      broadcast({msg::metrics_snapshot, 0, now, metrics_.summary()});
    if (observer_) observer_(*this);
    ++tick_;
    return frame_;
  }

  /// Closes the latency samples of the inputs consumed by the last tick.
  void finish_tick(double emit_time) {
    for (double a : pending_latency_) {
      const double ms = (emit_time - a) * 1e3;
      metrics_.latency_ms.add(ms);
      metrics_.latency_samples_ms.push_back(ms);
    }
    metrics_.output_drops = ch_->outbound.dropped();
  }

 private:
  void broadcast(Envelope e) {
    e.seq = ++out_seq_;
    ch_->outbound.push({kBroadcast, encode(e)});
  }

  // Shoulders of the standing posture carried along by this bundle's pelvis
  // and chest references, so hand targets do not chase the IK state.
  std::array<Vec3, 2> shoulders(const TrackerBundle& b) const {
    const auto& cal = retargeter_.calibration();
    const Pose pelvis = retarget_pelvis(cal, b, cfg_.retargeting.scale_pelvis_horizontal);
    const Quat chest = retarget_chest(cal, b);
    const Pose moved = pelvis * geometry_.pelvis.inverse();
    const Vec3 chest_origin = moved * chest0_.position;
    const Quat turn = chest * chest0_.orientation.conjugate();
    std::array<Vec3, 2> out;
    for (int i = 0; i < 2; ++i) out[i] = chest_origin + turn * (shoulder0_[i] - chest0_.position);
    return out;
  }

  void ack(const FootstepCommand& c, const char* status, const char* reason, std::uint64_t ref, int client,
           const char* source) {
    Envelope e{msg::footstep_command_ack, ++out_seq_, c.timestamp,
               {{"status", status}, {"reason", reason}, {"ref_seq", ref}, {"source", source},
                {"side", to_string(c.side)}, {"p", wire::vec(c.pose.position)}, {"yaw", yaw_of(c.pose.orientation)},
                {"queue_depth", executor_.queue_depth()}}};
    ch_->outbound.push({client, encode(e)});
  }

  void process_footstep_requests(double) {
    while (auto r = ch_->footsteps.pop()) {
      const auto planned = executor_.planned_feet();
      const int side = static_cast<int>(r->command.side);
      FootstepRejection why = check_footstep(r->command.side, r->command.pose, planned[1 - side], cfg_.retargeting);
      const bool ok = why == FootstepRejection::none && executor_.enqueue(r->command);
      if (!ok) ++metrics_.footsteps_rejected;
      ack(r->command, ok ? "accepted" : "rejected", why != FootstepRejection::none ? to_string(why) : ok ? "none" : "queue_full",
          r->seq, r->client, "client");
    }
  }

  void consume(const InboundInput& in, double now) {
    ++metrics_.inputs_consumed;
    metrics_.input_age_ms.add((now - in.arrival) * 1e3);
    pending_latency_.push_back(in.arrival);

    MotionInput mi;
    if (const auto* b = std::get_if<TrackerBundle>(&in.data)) {
      if (!retargeter_.calibrated()) {
        const auto feet = executor_.stance();
        retargeter_.calibrate(*b, geometry_, {feet[0].position, feet[1].position});
      }
      const RobotContext ctx{shoulders(*b), executor_.planned_feet(), mounting_, executor_.soles()};
      const auto out = retargeter_.update(*b, ctx);
      for (const auto& fs : out.footsteps) {
        if (fs.rejection != FootstepRejection::none) ++metrics_.footsteps_rejected;
        if (!fs.command) continue;
        const bool ok = executor_.enqueue(*fs.command);
        if (!ok) ++metrics_.footsteps_rejected;
        ack(*fs.command, ok ? "accepted" : "rejected", ok ? "none" : "queue_full", in.seq, kBroadcast, "stream");
      }
      const auto& r = out.references;
      mi.timestamp = b->timestamp;
      mi.targets["hand_left"] = {r.hands[0]};
      mi.targets["hand_right"] = {r.hands[1]};
      mi.targets["pelvis"] = {r.pelvis};
      mi.chest_orientation = r.chest_orientation;
      mi.com_ground = r.com_ground;
    } else {
      mi = std::get<MotionInput>(in.data);
    }

    const auto v = validate_input(mi, cfg_.safety, executor_.mid_feet(), history_, 1.0 / cfg_.input_rate,
                                  &tracked_bodies());
    for (const auto& rej : v.rejections) ++metrics_.rejections[to_string(rej.rule)];
    const double age = now - in.arrival;
    const double t = v.accepted.timestamp;
    for (const auto& [body, target] : v.accepted.targets) estimators_.at(body).on_input(target.pose, t, age);
    if (v.accepted.chest_orientation)
      estimators_.at("chest").on_input(Pose(Vec3::Zero(), *v.accepted.chest_orientation), t, age);
    if (v.accepted.com_ground) estimators_.at("com").on_input(Pose(*v.accepted.com_ground, Quat::Identity()), t, age);
  }

  void record_tracking() {
    if (predictions_.empty()) return;
    const auto ks = compute_kinematics(*model_, last_ik_.q);
    for (const auto& [name, p] : predictions_) {
      if (!p.active || name == "com") continue;
      Pose input = estimators_.at(name).last_input();
      Pose desired = frame_pose(*model_, ks, name);
      if (name == "chest") input.position = desired.position;
      if (name == "pelvis") desired.position.head<2>() = input.position.head<2>();
      metrics_.record_tracking(tick_, name, input, desired, name == "chest");
    }
  }

  const RobotModel* model_;
  SessionConfig cfg_;
  SessionChannels* ch_;
  JointConfiguration q0_;
  IKEngine ik_;
  PostProcessor post_;
  Retargeter retargeter_;
  RobotGeometry geometry_;
  Pose chest0_;
  std::array<Vec3, 2> shoulder0_;
  std::array<Quat, 2> mounting_;
  FootstepExecutor executor_;
  Vec3 com_offset_ = Vec3::Zero();
  InputHistory history_;
  std::map<std::string, BodyEstimator> estimators_;
  std::map<std::string, Prediction> predictions_;
  std::vector<MotionTask> tasks_;
  TickResult last_ik_;
  JointSetpointFrame frame_;
  Metrics metrics_;
  std::vector<double> pending_latency_;
  std::int64_t tick_ = 0;
  long decimation_ = 1;
  std::uint64_t out_seq_ = 0;
  FrameSink sink_;
  Observer observer_;
  long dump_tick_ = -1;
  std::function<void(const AssembledQp&)> dump_;
};

}  // namespace kst

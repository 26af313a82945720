// session.hpp - replay (simulated or real-time clock), live serving and benchmarking
#pragma once

#include "kst/pipeline.hpp"
#include "kst/server.hpp"
#include "kst/synthetic.hpp"

#include <chrono>
#include <cstring>
#include <thread>

namespace kst {

/// FNV-1a over the numeric content of the emitted frames.
class FrameHash {
 public:
  void add(const JointSetpointFrame& f) {
    bytes(&f.tick, sizeof f.tick);
    vec(f.q);
    vec(f.qd);
    vec(f.qdd);
    vec(f.base_pose.position);
    vec(f.base_pose.orientation.coeffs());
    vec(f.base_twist.linear);
    vec(f.base_twist.angular);
  }
  std::uint64_t value() const { return h_; }

 private:
  template <typename V>
  void vec(const V& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const double d = v[i];
      bytes(&d, sizeof d);
    }
  }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) h_ = (h_ ^ b[i]) * 1099511628211ull;
  }
  std::uint64_t h_ = 14695981039346656037ull;
};

/// One tick's QP as JSON (row-major matrices; infinite bounds become null).
/// Rows of C: CoM rows first, then collision rows, each C x <= d.
inline nlohmann::json qp_to_json(const AssembledQp& a, std::int64_t tick) {
  const auto& qp = a.qp;
  auto vec = [](const VecX& v) {
    nlohmann::json j = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) j.push_back(std::isfinite(v[i]) ? nlohmann::json(v[i]) : nlohmann::json());
    return j;
  };
  auto mat = [&](const MatX& m) {
    nlohmann::json j = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) j.push_back(vec(m.row(r).transpose()));
    return j;
  };
  nlohmann::json collisions = nlohmann::json::array();
  for (const auto& c : a.collisions) collisions.push_back({{"distance", c.distance}});
  return {{"tick", tick}, {"n", qp.n()},          {"m", qp.m()},           {"H", mat(qp.H)},
          {"g", vec(qp.g)}, {"lb", vec(qp.lb)},    {"ub", vec(qp.ub)},      {"C", mat(qp.C)},
          {"d", vec(qp.d)}, {"com_rows", a.com_rows}, {"collision_rows", a.collision_rows}, {"collisions", collisions}};
}

struct SessionResult {
  std::uint64_t frames = 0;
  std::uint64_t hash = 0;
  double wall_seconds = 0.0;
  Metrics metrics;
};

struct ReplayOptions {
  bool sim_clock = true;
  double speed = 1.0;               // real-time clock only
  std::optional<double> duration;   // s of session time; default: last arrival + one input interval
  std::function<void(Pipeline&)> setup;       // sinks, observers, QP dumps
  std::function<void(const Outbound&)> on_outbound;
};

namespace detail {

using SteadyClock = std::chrono::steady_clock;

inline double seconds_since(SteadyClock::time_point t0) {
  return std::chrono::duration<double>(SteadyClock::now() - t0).count();
}

inline void timed_tick(Pipeline& p, double now, const std::function<double()>& emit_clock) {
  const auto a = SteadyClock::now();
  p.tick(now);
  const double us = std::chrono::duration<double, std::micro>(SteadyClock::now() - a).count();
  p.metrics().tick_us.add(us);
  p.finish_tick(emit_clock ? emit_clock() : now);
}

inline void drain_outbound(SessionChannels& ch, const std::function<void(const Outbound&)>& f) {
  for (const auto& o : ch.outbound.drain())
    if (f) f(o);
}

/// Ticks at 1/dt of session time until `done(now)`; a session second lasts
/// 1/speed wall seconds. Periods lost to an overrun are counted in
/// tick_overruns and skipped instead of caught up.
inline void run_realtime_loop(Pipeline& p, double speed, const std::function<double()>& clock,
                              const std::function<bool(double)>& done, const std::function<void()>& after_tick = {}) {
  const double dt = p.config().dt();
  const auto t0 = SteadyClock::now() - std::chrono::duration_cast<SteadyClock::duration>(
                                           std::chrono::duration<double>(clock() / speed));
  std::int64_t n = static_cast<std::int64_t>(std::ceil(clock() / dt - 1e-9));
  while (true) {
    const double deadline = n * dt;
    std::this_thread::sleep_until(t0 + std::chrono::duration_cast<SteadyClock::duration>(
                                           std::chrono::duration<double>(deadline / speed)));
    const double now = clock();
    if (done(now)) break;
    timed_tick(p, now, clock);
    if (after_tick) after_tick();
    const double after = clock();
    ++n;
    if (after > (n + 1) * dt) {
      const auto next = static_cast<std::int64_t>(std::floor(after / dt)) + 1;
      p.metrics().tick_overruns += static_cast<std::uint64_t>(next - n);
      n = next;
    }
  }
}

}  // namespace detail

inline double default_replay_duration(const std::vector<RecordedMessage>& msgs, const SessionConfig& cfg) {
  return msgs.empty() ? 0.0 : msgs.back().arrival + 1.0 / cfg.input_rate;
}

inline SessionResult run_replay(const RobotModel& model, const SessionConfig& cfg,
                                const std::vector<RecordedMessage>& msgs, const ReplayOptions& opt = {}) {
  SessionChannels ch(cfg.output_queue);
  Ingestor ingestor(model, cfg, ch);
  Pipeline p(model, cfg, ch);
  FrameHash hash;
  std::uint64_t frames = 0;
  p.set_frame_sink([&](const JointSetpointFrame& f) {
    hash.add(f);
    ++frames;
  });
  if (opt.setup) opt.setup(p);
  const double duration = opt.duration.value_or(default_replay_duration(msgs, cfg));
  const double dt = cfg.dt();
  const auto wall0 = detail::SteadyClock::now();

  if (opt.sim_clock) {
    const auto ticks = static_cast<std::int64_t>(std::ceil(duration / dt - 1e-9));
    std::size_t next = 0;
    for (std::int64_t n = 0; n < ticks; ++n) {
      const double now = n * dt;
      for (; next < msgs.size() && msgs[next].arrival <= now + 1e-12; ++next) ingestor.handle(msgs[next].text, msgs[next].arrival);
      detail::timed_tick(p, now, nullptr);
      detail::drain_outbound(ch, opt.on_outbound);
    }
  } else {
    if (!(opt.speed > 0.0)) throw std::invalid_argument("replay speed must be positive");
    const auto start = detail::SteadyClock::now();
    auto clock = [&] { return detail::seconds_since(start) * opt.speed; };
    std::atomic<bool> stop{false};
    std::thread feeder([&] {
      for (const auto& m : msgs) {
        std::this_thread::sleep_until(start + std::chrono::duration_cast<detail::SteadyClock::duration>(
                                                  std::chrono::duration<double>(m.arrival / opt.speed)));
        if (stop) return;
        ingestor.handle(m.text, clock());
      }
    });
    detail::run_realtime_loop(p, opt.speed, clock, [&](double now) { return now >= duration - 1e-12; },
                              [&] { detail::drain_outbound(ch, opt.on_outbound); });
    stop = true;
    feeder.join();
  }

  SessionResult r;
  r.frames = frames;
  r.hash = hash.value();
  r.wall_seconds = detail::seconds_since(wall0);
  r.metrics = p.metrics();
  r.metrics.protocol_errors = ingestor.protocol_errors();
  r.metrics.output_drops = ch.outbound.dropped();
  return r;
}

/// Serves until `stop` is set. `on_ready` receives the bound port.
inline SessionResult run_serve(const RobotModel& model, const SessionConfig& cfg, const std::atomic<bool>& stop,
                               const std::function<void(int)>& on_ready = {},
                               const std::function<void(Pipeline&)>& setup = {}) {
  SessionChannels ch(cfg.output_queue);
  Ingestor ingestor(model, cfg, ch);
  std::unique_ptr<RecordingWriter> recorder;
  if (!cfg.record_path.empty()) {
    recorder = std::make_unique<RecordingWriter>(cfg.record_path);
    ingestor.set_recorder(recorder.get());
  }
  Pipeline p(model, cfg, ch);
  FrameHash hash;
  std::uint64_t frames = 0;
  p.set_frame_sink([&](const JointSetpointFrame& f) {
    hash.add(f);
    ++frames;
  });
  if (setup) setup(p);
  const auto start = detail::SteadyClock::now();
  auto clock = [start] { return detail::seconds_since(start); };
  Server server(ingestor, ch, clock);
  server.start(cfg.listen);
  if (on_ready) on_ready(server.port());
  detail::run_realtime_loop(p, 1.0, clock, [&](double) { return stop.load(); });
  server.stop();
  if (recorder) recorder->flush();

  SessionResult r;
  r.frames = frames;
  r.hash = hash.value();
  r.wall_seconds = detail::seconds_since(start);
  r.metrics = p.metrics();
  r.metrics.protocol_errors = ingestor.protocol_errors();
  r.metrics.output_drops = ch.outbound.dropped();
  return r;
}

/// Simulated-clock run over a synthetic 60 Hz hand sinusoid, for timing.
inline SessionResult run_bench(const RobotModel& model, const SessionConfig& cfg, std::int64_t ticks,
                               const std::function<void(Pipeline&)>& setup = {}) {
  synth::SinusoidOptions o;
  o.duration = ticks * cfg.dt();
  o.rate = cfg.input_rate;
  ReplayOptions r;
  r.duration = o.duration;
  r.setup = setup;
  SessionConfig c = cfg;
  c.input_mode = InputMode::motion_input;
  return run_replay(model, c, synth::sinusoid_motion(model, o), r);
}

}  // namespace kst

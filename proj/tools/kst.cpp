// kst - serve, replay, check-model, bench and synth

#include "kst/session.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>

using namespace kst;

namespace {

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop = true; }

SessionConfig config_or_default(const std::string& path) {
  return path.empty() ? session_config_from_json(nlohmann::json::object()) : load_session_config(path);
}

RobotModel model_for(const SessionConfig& cfg, const std::string& override_path) {
  const std::string path = override_path.empty() ? cfg.model_path : override_path;
  if (path.empty()) throw ConfigError("no model: set \"model\" in the config or pass --model");
  return load_model(path);
}

void install_qp_dump(Pipeline& p, long tick, const std::string& out) {
  if (tick < 0) return;
  p.set_dump_qp(tick, [tick, out](const AssembledQp& a) {
    const std::string text = qp_to_json(a, tick).dump(1);
    if (out.empty() || out == "-") {
      std::cout << text << "\n";
    } else {
      std::ofstream(out) << text << "\n";
      std::cerr << "wrote QP of tick " << tick << " to " << out << "\n";
    }
  });
}

void report(const SessionResult& r, const std::string& metrics_out) {
  nlohmann::json s = r.metrics.summary();
  s["frames"] = r.frames;
  s["wall_seconds"] = r.wall_seconds;
  char hash[32];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(r.hash));
  s["output_hash"] = hash;
  std::cout << s.dump(2) << "\n";
  if (!metrics_out.empty()) {
    r.metrics.write_csv(metrics_out);
    std::cerr << "metrics written to " << metrics_out << "\n";
  }
}

void print_histogram(const Histogram& h) {
  std::printf("tick time (us): n=%llu mean=%.1f p50=%.0f p90=%.0f p99=%.0f p99.9=%.0f max=%.1f\n",
              static_cast<unsigned long long>(h.count()), h.mean(), h.percentile(0.5), h.percentile(0.9),
              h.percentile(0.99), h.percentile(0.999), h.max());
  // coarse view in 50 us bins
  const auto& c = h.counts();
  const double w = h.bucket_width();
  std::uint64_t peak = 0;
  std::vector<std::uint64_t> bins;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto b = static_cast<std::size_t>(i * w / 50.0);
    if (b >= bins.size()) bins.resize(b + 1, 0);
    bins[b] += c[i];
  }
  while (!bins.empty() && bins.back() == 0) bins.pop_back();
  for (auto b : bins) peak = std::max(peak, b);
  for (std::size_t b = 0; b < bins.size() && b < 40; ++b) {
    if (!bins[b]) continue;
    const int bar = peak ? static_cast<int>(50.0 * bins[b] / peak) : 0;
    std::printf("%5zu-%-5zu %9llu %s\n", b * 50, (b + 1) * 50, static_cast<unsigned long long>(bins[b]),
                std::string(std::max(bar, 1), '#').c_str());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kst - whole-body kinematics streaming"};
  app.require_subcommand(1);

  std::string config_path, model_path, input_path, metrics_out, frames_out, listen, record, dump_out, out_path, kind;
  double speed = 1.0, duration = 10.0;
  bool sim_clock = false;
  long dump_tick = -1;
  std::int64_t ticks = 100000;
  unsigned seed = 1;

  auto* serve = app.add_subcommand("serve", "run the live session");
  serve->add_option("--config", config_path, "session config (JSON)")->check(CLI::ExistingFile);
  serve->add_option("--listen", listen, "host:port, overrides the config");
  serve->add_option("--record", record, "record accepted inputs to this file");
  serve->add_option("--metrics-out", metrics_out, "directory for metrics CSV on exit");
  serve->add_option("--model", model_path, "model file, overrides the config");

  auto* replay = app.add_subcommand("replay", "replay a recording through the pipeline");
  replay->add_option("--config", config_path, "session config (JSON)")->check(CLI::ExistingFile);
  replay->add_option("--input", input_path, "recording")->required();
  replay->add_option("--speed", speed, "real-time clock speed factor")->check(CLI::PositiveNumber);
  replay->add_flag("--sim-clock", sim_clock, "simulated clock: one tick period per iteration, deterministic");
  replay->add_option("--metrics-out", metrics_out, "directory for metrics CSV");
  replay->add_option("--frames-out", frames_out, "write every emitted frame as CSV");
  replay->add_option("--dump-qp", dump_tick, "dump the QP of this tick as JSON");
  replay->add_option("--dump-qp-out", dump_out, "file for --dump-qp (default stdout)");
  replay->add_option("--model", model_path, "model file, overrides the config");

  auto* check = app.add_subcommand("check-model", "load and validate a model file");
  std::string check_path;
  check->add_option("file", check_path, "model file")->required();

  auto* bench = app.add_subcommand("bench", "tick-time histogram on a synthetic stream");
  bench->add_option("--model", model_path, "model file")->required()->check(CLI::ExistingFile);
  bench->add_option("--ticks", ticks, "number of ticks")->check(CLI::PositiveNumber);
  bench->add_option("--config", config_path, "session config (JSON)")->check(CLI::ExistingFile);
  bench->add_option("--dump-qp", dump_tick, "dump the QP of this tick as JSON");
  bench->add_option("--dump-qp-out", dump_out, "file for --dump-qp (default stdout)");

  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic recording");
  synth_cmd->add_option("--kind", kind, "sinusoid | walking | adversarial")
      ->required()
      ->check(CLI::IsMember({"sinusoid", "walking", "adversarial"}));
  synth_cmd->add_option("--model", model_path, "model file (sinusoid, adversarial)");
  synth_cmd->add_option("--duration", duration, "seconds")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--seed", seed, "random seed (adversarial)");
  synth_cmd->add_option("--out", out_path, "output recording")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*serve) {
      SessionConfig cfg = config_or_default(config_path);
      if (!listen.empty()) cfg.listen = listen;
      if (!record.empty()) cfg.record_path = record;
      const RobotModel model = model_for(cfg, model_path);
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      const auto r = run_serve(model, cfg, g_stop, [&](int port) {
        std::cerr << "kst: serving " << model.name << " on port " << port << " ("
                  << (cfg.input_mode == InputMode::tracker ? "tracker" : "motion_input") << " mode)\n";
      });
      report(r, metrics_out);
      return 0;
    }
    if (*replay) {
      const SessionConfig cfg = config_or_default(config_path);
      const RobotModel model = model_for(cfg, model_path);
      const auto msgs = read_recording(input_path);
      std::ofstream frames;
      if (!frames_out.empty()) {
        frames.open(frames_out);
        if (!frames) throw std::runtime_error("cannot write " + frames_out);
        frames.precision(17);
        frames << "tick,t,base_x,base_y,base_z,base_qw,base_qx,base_qy,base_qz";
        for (int i = 0; i < model.num_joints(); ++i) frames << ",q_" << model.revolute(i).name;
        frames << "\n";
      }
      ReplayOptions o;
      o.sim_clock = sim_clock;
      o.speed = speed;
      o.setup = [&](Pipeline& p) {
        install_qp_dump(p, dump_tick, dump_out);
        if (!frames.is_open()) return;
        p.set_observer([&](const Pipeline& pl) {
          const auto& f = pl.last_frame();
          const auto& b = f.base_pose;
          frames << f.tick << ',' << f.timestamp << ',' << b.position.x() << ',' << b.position.y() << ','
                 << b.position.z() << ',' << b.orientation.w() << ',' << b.orientation.x() << ','
                 << b.orientation.y() << ',' << b.orientation.z();
          for (Eigen::Index i = 0; i < f.q.size(); ++i) frames << ',' << f.q[i];
          frames << "\n";
        });
      };
      if (!metrics_out.empty()) {
        // traces only when they will be written
        SessionConfig traced = cfg;
        traced.keep_traces = true;
        report(run_replay(model, traced, msgs, o), metrics_out);
      } else {
        report(run_replay(model, cfg, msgs, o), metrics_out);
      }
      return 0;
    }
    if (*check) {
      const RobotModel m = load_model(check_path);
      std::cout << "ok: " << m.name << "\n"
                << "  dof: " << m.num_joints() << (m.floating_base() ? " + floating base" : "") << "\n"
                << "  links: " << m.links.size() << ", frames: " << m.frames.size()
                << ", collision shapes: " << m.collision_shapes.size()
                << ", collision pairs: " << m.collision_pairs.size() << "\n";
      if (m.floating_base()) {
        const auto q = standing_configuration(m);
        std::cout << "  standing base height: " << q.base_pose.position.z() << " m, mass: " << m.total_mass()
                  << " kg\n";
      }
      return 0;
    }
    if (*bench) {
      SessionConfig cfg = config_or_default(config_path);
      const RobotModel model = load_model(model_path);
      const auto r = run_bench(model, cfg, ticks, [&](Pipeline& p) { install_qp_dump(p, dump_tick, dump_out); });
      print_histogram(r.metrics.tick_us);
      std::printf("total wall time: %.2f s for %lld ticks; faults %llu\n", r.wall_seconds,
                  static_cast<long long>(ticks), static_cast<unsigned long long>(r.metrics.faults));
      return 0;
    }
    if (*synth_cmd) {
      std::vector<RecordedMessage> msgs;
      if (kind == "walking") {
        synth::WalkOptions o;
        o.duration = duration;
        msgs = synth::walking_tracker(o);
      } else {
        if (model_path.empty()) throw ConfigError("--model is required for --kind " + kind);
        const RobotModel model = load_model(model_path);
        if (kind == "sinusoid") {
          synth::SinusoidOptions o;
          o.duration = duration;
          o.transport_delay = 0.0005;
          msgs = synth::sinusoid_motion(model, o);
        } else {
          synth::AdversarialOptions o;
          o.duration = duration;
          o.seed = seed;
          msgs = synth::adversarial_motion(model, o);
        }
      }
      synth::write_recording(out_path, msgs);
      std::cerr << "wrote " << msgs.size() << " messages to " << out_path << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "kst: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

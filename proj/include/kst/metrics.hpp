// metrics.hpp - session counters, histograms, tracking traces and CSV export
#pragma once

#include "kst/core_math.hpp"
#include "kst/qp_solver.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace kst {

/// Fixed-width bucket histogram; values past the last bucket land in an
/// overflow bucket.
class Histogram {
 public:
  explicit Histogram(double bucket_width = 1.0, std::size_t buckets = 100000)
      : width_(bucket_width), counts_(buckets + 1, 0) {}

  void add(double v) {
    const double b = std::floor(std::max(0.0, v) / width_);
    const std::size_t i = b >= static_cast<double>(counts_.size() - 1) ? counts_.size() - 1 : static_cast<std::size_t>(b);
    ++counts_[i];
    ++total_;
    sum_ += v;
    max_ = std::max(max_, v);
  }

  std::uint64_t count() const { return total_; }
  double mean() const { return total_ ? sum_ / static_cast<double>(total_) : 0.0; }
  double max() const { return max_; }
  double bucket_width() const { return width_; }
  const std::vector<std::uint64_t>& counts() const { return counts_; }

  /// Upper edge of the bucket holding the p-quantile (p in [0, 1]).
  double percentile(double p) const {
    if (!total_) return 0.0;
    const auto rank = static_cast<std::uint64_t>(std::ceil(std::clamp(p, 0.0, 1.0) * static_cast<double>(total_)));
    std::uint64_t acc = 0;
    for (std::size_t i = 0; i < counts_.size(); ++i) {
      acc += counts_[i];
      if (acc >= std::max<std::uint64_t>(rank, 1)) return i + 1 == counts_.size() ? max_ : (i + 1) * width_;
    }
    return max_;
  }

 private:
  double width_;
  std::vector<std::uint64_t> counts_;
  std::uint64_t total_ = 0;
  double sum_ = 0.0;
  double max_ = 0.0;
};

struct TrackingAccumulator {
  double sum_sq_position = 0.0, sum_sq_angle = 0.0;
  std::uint64_t samples = 0;
  double rms_position() const { return samples ? std::sqrt(sum_sq_position / samples) : 0.0; }
  double rms_angle() const { return samples ? std::sqrt(sum_sq_angle / samples) : 0.0; }
};

struct TraceRow {
  std::int64_t tick;
  Pose input, desired;
};

struct Metrics {
  Histogram tick_us{1.0, 100000};
  Histogram input_age_ms{0.01, 100000};
  Histogram latency_ms{0.01, 100000};
  std::vector<double> latency_samples_ms;
  std::map<std::string, TrackingAccumulator> tracking;
  std::map<std::string, std::vector<TraceRow>> traces;
  bool keep_traces = false;
  std::map<std::string, std::uint64_t> qp_status;
  std::uint64_t qp_iterations = 0;
  std::map<std::string, std::uint64_t> rejections;  // by rule
  std::uint64_t clamp_events = 0;
  std::uint64_t step_halvings = 0;
  std::uint64_t faults = 0;
  std::uint64_t frames_emitted = 0;
  std::uint64_t inputs_consumed = 0;
  std::uint64_t mailbox_overwrites = 0;
  std::uint64_t output_drops = 0;
  std::uint64_t protocol_errors = 0;
  std::uint64_t tick_overruns = 0;
  std::uint64_t footsteps_completed = 0;
  std::uint64_t footsteps_rejected = 0;

  void record_tracking(std::int64_t tick, const std::string& body, const Pose& input, const Pose& desired,
                       bool angular_only = false, bool linear_only = false) {
    auto& acc = tracking[body];
    const double ep = angular_only ? 0.0 : (input.position - desired.position).norm();
    const double ea = linear_only ? 0.0 : angle_between(input.orientation, desired.orientation);
    acc.sum_sq_position += ep * ep;
    acc.sum_sq_angle += ea * ea;
    ++acc.samples;
    if (keep_traces) traces[body].push_back({tick, input, desired});
  }

  void record_qp(QpStatus s, int iterations) {
    ++qp_status[to_string(s)];
    qp_iterations += static_cast<std::uint64_t>(iterations);
  }

  nlohmann::json summary() const {
    nlohmann::json track = nlohmann::json::object();
    for (const auto& [b, a] : tracking)
      track[b] = {{"rms_position_m", a.rms_position()}, {"rms_angle_rad", a.rms_angle()}, {"samples", a.samples}};
    return {
        {"frames_emitted", frames_emitted},
        {"inputs_consumed", inputs_consumed},
        {"tick_us", {{"count", tick_us.count()}, {"mean", tick_us.mean()}, {"p50", tick_us.percentile(0.5)},
                     {"p99", tick_us.percentile(0.99)}, {"max", tick_us.max()}}},
        {"input_age_ms", {{"p50", input_age_ms.percentile(0.5)}, {"p99", input_age_ms.percentile(0.99)}}},
        {"latency_ms", {{"count", latency_ms.count()}, {"p50", latency_ms.percentile(0.5)},
                        {"p99", latency_ms.percentile(0.99)}, {"max", latency_ms.max()}}},
        {"tracking", track},
        {"qp_status", qp_status},
        {"qp_iterations", qp_iterations},
        {"rejections", rejections},
        {"clamp_events", clamp_events},
        {"step_halvings", step_halvings},
        {"faults", faults},
        {"mailbox_overwrites", mailbox_overwrites},
        {"output_drops", output_drops},
        {"protocol_errors", protocol_errors},
        {"tick_overruns", tick_overruns},
        {"footsteps_completed", footsteps_completed},
        {"footsteps_rejected", footsteps_rejected},
    };
  }

  static constexpr const char* kTraceHeader =
      "tick,body,input_x,input_y,input_z,input_qw,input_qx,input_qy,input_qz,"
      "desired_x,desired_y,desired_z,desired_qw,desired_qx,desired_qy,desired_qz,error_position,error_angle";

  /// One `<body>.csv` per traced body plus `summary.csv` and `summary.json`.
  void write_csv(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    for (const auto& [body, rows] : traces) {
      std::ofstream f(dir / (body + ".csv"));
      f.precision(17);
      f << kTraceHeader << "\n";
      for (const auto& r : rows) {
        const auto& a = r.input;
        const auto& d = r.desired;
        f << r.tick << ',' << body << ',' << a.position.x() << ',' << a.position.y() << ',' << a.position.z() << ','
          << a.orientation.w() << ',' << a.orientation.x() << ',' << a.orientation.y() << ',' << a.orientation.z()
          << ',' << d.position.x() << ',' << d.position.y() << ',' << d.position.z() << ',' << d.orientation.w()
          << ',' << d.orientation.x() << ',' << d.orientation.y() << ',' << d.orientation.z() << ','
          << (a.position - d.position).norm() << ',' << angle_between(a.orientation, d.orientation) << "\n";
      }
    }
    std::ofstream s(dir / "summary.csv");
    s << "metric,value\n";
    s << "frames_emitted," << frames_emitted << "\n";
    s << "inputs_consumed," << inputs_consumed << "\n";
    s << "tick_us_p50," << tick_us.percentile(0.5) << "\n";
    s << "tick_us_p99," << tick_us.percentile(0.99) << "\n";
    s << "tick_us_max," << tick_us.max() << "\n";
    s << "latency_ms_p50," << latency_ms.percentile(0.5) << "\n";
    s << "latency_ms_p99," << latency_ms.percentile(0.99) << "\n";
    s << "latency_ms_max," << latency_ms.max() << "\n";
    for (const auto& [b, a] : tracking) {
      s << "rms_position_m_" << b << "," << a.rms_position() << "\n";
      s << "rms_angle_rad_" << b << "," << a.rms_angle() << "\n";
    }
    for (const auto& [k, v] : qp_status) s << "qp_" << k << "," << v << "\n";
    for (const auto& [k, v] : rejections) s << "rejected_" << k << "," << v << "\n";
    s << "clamp_events," << clamp_events << "\n";
    s << "step_halvings," << step_halvings << "\n";
    s << "faults," << faults << "\n";
    s << "mailbox_overwrites," << mailbox_overwrites << "\n";
    s << "output_drops," << output_drops << "\n";
    s << "protocol_errors," << protocol_errors << "\n";
    s << "tick_overruns," << tick_overruns << "\n";
    s << "footsteps_completed," << footsteps_completed << "\n";
    s << "footsteps_rejected," << footsteps_rejected << "\n";
    std::ofstream(dir / "summary.json") << summary().dump(2) << "\n";
  }
};

}  // namespace kst

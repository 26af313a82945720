// Drives a BodyEstimator with a sampled trajectory on a tick clock.
#pragma once

#include "kst/input_pipeline.hpp"

#include <functional>

namespace sim {

using namespace kst;

struct EstimatorRun {
  double worst_arrival_position_error = 0.0;  // |estimate at consumption tick - new input|
  double worst_arrival_angle_error = 0.0;
  double worst_jump_excess = -1e300;  // max over ticks of |jump| - (|v_fd| + |v_corr|) dt
  double final_position_error = 0.0;
  int arrivals = 0;
  int ticks = 0;
};

/// Inputs sampled from `trajectory` at `input_rate`, consumed on the first
/// tick at or after their arrival. Arrival errors are measured just before
/// the new input is applied, skipping the first `skip` arrivals.
inline EstimatorRun run_estimator(const std::function<Pose(double)>& trajectory, const EstimatorParams& params,
                                  double input_rate, double dt_tick, double duration, int skip = 2) {
  BodyEstimator est(params);
  EstimatorRun out;
  int next_input = 0;
  const long n_ticks = std::lround(duration / dt_tick);
  Pose previous_desired;
  double previous_bound = 0.0;
  bool have_previous = false;
  for (long n = 0; n < n_ticks; ++n) {
    const double now = n * dt_tick;
    while (next_input / input_rate <= now + 1e-12) {
      const double t_in = next_input / input_rate;
      const Pose p = trajectory(t_in);
      if (est.initialized() && out.arrivals >= skip) {
        out.worst_arrival_position_error =
            std::max(out.worst_arrival_position_error, (est.estimated().position - p.position).norm());
        out.worst_arrival_angle_error =
            std::max(out.worst_arrival_angle_error, angle_between(est.estimated().orientation, p.orientation));
      }
      est.on_input(p, t_in, now - t_in);
      ++out.arrivals;
      ++next_input;
    }
    const Prediction pr = est.predict(dt_tick);
    if (have_previous) {
      const double jump = (pr.desired.position - previous_desired.position).norm();
      out.worst_jump_excess = std::max(out.worst_jump_excess, jump - previous_bound);
    }
    // Bound for the step this tick takes towards the next one.
    previous_bound = (est.fd().linear.norm() + est.corr().linear.norm()) * dt_tick * (1.0 + 1e-12) + 1e-15;
    previous_desired = pr.desired;
    have_previous = true;
    out.final_position_error = (pr.desired.position - trajectory(now).position).norm();
    ++out.ticks;
  }
  return out;
}

}  // namespace sim

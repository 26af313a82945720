// collision.hpp - sphere/capsule proximity queries between declared shape pairs
#pragma once

#include "kst/kinematics.hpp"

namespace kst {

struct Proximity {
  int shape_a = -1;
  int shape_b = -1;
  Vec3 point_a = Vec3::Zero();  // on the surface of a
  Vec3 point_b = Vec3::Zero();  // on the surface of b
  Vec3 axis = Vec3::UnitZ();    // unit, from a to b
  double distance = 0.0;        // signed, negative when penetrating
};

/// Closest points between segments [p0, p1] and [q0, q1].
/// Returns the parameters (s, t) of the closest points.
inline std::pair<double, double> closest_segment_params(const Vec3& p0, const Vec3& p1, const Vec3& q0,
                                                        const Vec3& q1) {
  constexpr double eps = 1e-14;
  const Vec3 d1 = p1 - p0, d2 = q1 - q0, r = p0 - q0;
  const double a = d1.squaredNorm(), e = d2.squaredNorm(), f = d2.dot(r);
  double s = 0.0, t = 0.0;
  if (a <= eps && e <= eps) return {0.0, 0.0};
  if (a <= eps) return {0.0, std::clamp(f / e, 0.0, 1.0)};
  const double c = d1.dot(r);
  if (e <= eps) return {std::clamp(-c / a, 0.0, 1.0), 0.0};
  const double b = d1.dot(d2);
  const double denom = a * e - b * b;
  s = denom > eps * a * e ? std::clamp((b * f - c * e) / denom, 0.0, 1.0) : 0.0;
  t = (b * s + f) / e;
  if (t < 0.0) {
    t = 0.0;
    s = std::clamp(-c / a, 0.0, 1.0);
  } else if (t > 1.0) {
    t = 1.0;
    s = std::clamp((b - c) / a, 0.0, 1.0);
  }
  return {s, t};
}

namespace detail {

// Core geometry of a shape in world: a segment (degenerate for spheres) plus radius.
struct WorldCore {
  Vec3 p0, p1;
  double radius;
};

inline WorldCore world_core(const CollisionShape& shape, const Pose& link_pose) {
  return std::visit(
      [&](const auto& g) -> WorldCore {
        using G = std::decay_t<decltype(g)>;
        if constexpr (std::is_same_v<G, Sphere>) {
          const Vec3 c = link_pose * g.center;
          return {c, c, g.radius};
        } else {
          return {link_pose * g.p0, link_pose * g.p1, g.radius};
        }
      },
      shape.geometry);
}

inline Proximity core_proximity(const WorldCore& a, const WorldCore& b) {
  const auto [s, t] = closest_segment_params(a.p0, a.p1, b.p0, b.p1);
  const Vec3 ca = a.p0 + s * (a.p1 - a.p0);
  const Vec3 cb = b.p0 + t * (b.p1 - b.p0);
  Proximity out;
  const Vec3 d = cb - ca;
  const double n = d.norm();
  out.axis = n > 1e-12 ? Vec3(d / n) : Vec3::UnitZ();
  out.distance = n - a.radius - b.radius;
  out.point_a = ca + a.radius * out.axis;
  out.point_b = cb - b.radius * out.axis;
  return out;
}

}  // namespace detail

/// Proximity between two shapes. The computation always runs in ascending
/// shape-index order, so swapping the arguments negates the axis and swaps the
/// points exactly.
inline Proximity shape_proximity(const RobotModel& model, const KinematicsState& ks, int shape_a, int shape_b) {
  const bool swapped = shape_a > shape_b;
  const int lo = swapped ? shape_b : shape_a, hi = swapped ? shape_a : shape_b;
  const auto& sa = model.collision_shapes[lo];
  const auto& sb = model.collision_shapes[hi];
  Proximity p = detail::core_proximity(detail::world_core(sa, ks.link_poses[sa.link]),
                                       detail::world_core(sb, ks.link_poses[sb.link]));
  if (swapped) {
    std::swap(p.point_a, p.point_b);
    p.axis = -p.axis;
  }
  p.shape_a = shape_a;
  p.shape_b = shape_b;
  return p;
}

inline std::vector<Proximity> collision_proximity(const RobotModel& model, const KinematicsState& ks,
                                                  const std::vector<CollisionPair>& pairs) {
  std::vector<Proximity> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(shape_proximity(model, ks, p.a, p.b));
  return out;
}

inline std::vector<Proximity> collision_proximity(const RobotModel& model, const JointConfiguration& q,
                                                  const std::vector<CollisionPair>& pairs) {
  return collision_proximity(model, compute_kinematics(model, q), pairs);
}

inline double min_separation(const std::vector<Proximity>& report) {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& p : report) m = std::min(m, p.distance);
  return m;
}

}  // namespace kst

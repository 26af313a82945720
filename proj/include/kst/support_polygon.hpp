// support_polygon.hpp - stance geometry: support hull and mid-feet frame
#pragma once

#include "kst/kinematics.hpp"

#include <algorithm>
#include <array>
#include <vector>

namespace kst {

/// Convex polygon in the ground plane, counter-clockwise.
struct SupportPolygon {
  std::vector<Vec2> vertices;

  struct Edge {
    Vec2 normal;    // unit, pointing inwards
    double offset;  // normal . x >= offset on the polygon
  };

  std::vector<Edge> edges() const {
    std::vector<Edge> out;
    const std::size_t n = vertices.size();
    for (std::size_t i = 0; i < n; ++i) {
      const Vec2& a = vertices[i];
      const Vec2& b = vertices[(i + 1) % n];
      const Vec2 d = (b - a).normalized();
      const Vec2 inward(-d.y(), d.x());
      out.push_back({inward, inward.dot(a)});
    }
    return out;
  }

  /// Smallest inward distance from `p` to the edge lines (negative outside).
  double margin_of(const Vec2& p) const {
    double m = std::numeric_limits<double>::infinity();
    for (const Edge& e : edges()) m = std::min(m, e.normal.dot(p) - e.offset);
    return m;
  }

  bool contains(const Vec2& p, double shrink = 0.0) const { return margin_of(p) >= shrink; }

  Vec2 centroid() const {
    double area = 0.0;
    Vec2 c = Vec2::Zero();
    const std::size_t n = vertices.size();
    for (std::size_t i = 0; i < n; ++i) {
      const Vec2& a = vertices[i];
      const Vec2& b = vertices[(i + 1) % n];
      const double cr = a.x() * b.y() - b.x() * a.y();
      area += cr;
      c += (a + b) * cr;
    }
    return c / (3.0 * area);
  }
};

/// Andrew's monotone chain; collinear points are dropped.
inline SupportPolygon convex_hull(std::vector<Vec2> pts) {
  std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return {pts};
  auto cross = [](const Vec2& o, const Vec2& a, const Vec2& b) {
    return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
  };
  std::vector<Vec2> hull(2 * pts.size());
  std::size_t k = 0;
  for (const Vec2& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0.0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return {hull};
}

/// Sole polygon vertices placed at a sole pose (yaw and ground position only).
inline std::vector<Vec2> place_sole(const FootPolygon& foot, const Pose& sole) {
  const double yaw = yaw_of(sole.orientation);
  const double c = std::cos(yaw), s = std::sin(yaw);
  std::vector<Vec2> out;
  for (const Vec2& v : foot.vertices)
    out.emplace_back(sole.position.x() + c * v.x() - s * v.y(), sole.position.y() + s * v.x() + c * v.y());
  return out;
}

inline SupportPolygon support_polygon(const RobotModel& model, const std::array<Pose, 2>& soles) {
  std::vector<Vec2> pts = place_sole(model.foot_polygons.at("left"), soles[0]);
  const auto right = place_sole(model.foot_polygons.at("right"), soles[1]);
  pts.insert(pts.end(), right.begin(), right.end());
  return convex_hull(pts);
}

/// Midpoint of the soles with their mean yaw.
inline Pose mid_feet_frame(const std::array<Pose, 2>& soles) {
  const double yl = yaw_of(soles[0].orientation), yr = yaw_of(soles[1].orientation);
  const double yaw = yl + 0.5 * wrap_angle(yr - yl);
  return Pose(0.5 * (soles[0].position + soles[1].position), yaw_rotation(wrap_angle(yaw)));
}

inline std::array<Pose, 2> sole_poses(const RobotModel& model, const KinematicsState& ks) {
  return {frame_pose(model, ks, model.frames[model.foot_polygons.at("left").frame]),
          frame_pose(model, ks, model.frames[model.foot_polygons.at("right").frame])};
}

}  // namespace kst

// robot_model.hpp - kinematic tree, mass properties and collision primitives
//
// Model files are JSON documents (comments allowed) with the top-level keys
// links[], joints[], frames{}, collision_shapes[], collision_pairs[] and
// foot_polygons{}. Optional keys: name, nominal_posture{}, hand_mounting{}.
#pragma once

#include "kst/core_math.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

namespace kst {

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class JointType { revolute, floating, fixed };

struct Link {
  std::string name;
  int parent_joint = -1;
  double mass = 0.0;
  Vec3 com = Vec3::Zero();
  Mat3 inertia = Mat3::Zero();
};

struct Joint {
  std::string name;
  JointType type = JointType::revolute;
  int parent_link = -1;  // -1 for the root joint
  int child_link = -1;
  Vec3 axis = Vec3::UnitZ();
  Pose origin;
  double q_min = 0.0;
  double q_max = 0.0;
  double velocity_limit = 0.0;
  int q_index = -1;  // index into JointConfiguration::joint_positions, revolute only
};

struct Frame {
  std::string name;
  int link = -1;
  Pose offset;
};

struct Sphere {
  Vec3 center = Vec3::Zero();
  double radius = 0.0;
};

struct Capsule {
  Vec3 p0 = Vec3::Zero();
  Vec3 p1 = Vec3::Zero();
  double radius = 0.0;
};

struct CollisionShape {
  std::string name;
  int link = -1;
  std::variant<Sphere, Capsule> geometry;
};

struct CollisionPair {
  int a = -1;
  int b = -1;
};

/// Sole polygon attached to a frame; vertices in the frame's x-y plane, CCW.
struct FootPolygon {
  int frame = -1;
  std::vector<Vec2> vertices;
};

struct JointConfiguration {
  Pose base_pose;
  VecX joint_positions;
};

struct JointVelocity {
  Twist base_twist;
  VecX joint_rates;
};

class RobotModel {
 public:
  std::string name;
  std::vector<Link> links;
  std::vector<Joint> joints;  // topological order, root joint first
  std::vector<Frame> frames;
  std::vector<CollisionShape> collision_shapes;
  std::vector<CollisionPair> collision_pairs;
  std::map<std::string, FootPolygon> foot_polygons;  // "left" / "right"
  std::map<std::string, Quat> hand_mounting;         // "left" / "right"
  std::map<std::string, double> nominal_posture;     // joint name -> rad

  bool floating_base() const { return joints.front().type == JointType::floating; }
  int base_dofs() const { return floating_base() ? 6 : 0; }
  int num_joints() const { return static_cast<int>(revolute_.size()); }
  /// Size of the generalized velocity vector.
  int nv() const { return base_dofs() + num_joints(); }
  int root_link() const { return joints.front().child_link; }
  double total_mass() const { return total_mass_; }

  /// Revolute joint indices into `joints`, ordered by q_index.
  const std::vector<int>& revolute_joints() const { return revolute_; }
  const Joint& revolute(int q_index) const { return joints[revolute_[q_index]]; }

  /// Revolute q_indices on the path from the root to `link`, root first.
  const std::vector<int>& support(int link) const { return support_[link]; }

  int link_index(const std::string& n) const { return lookup(link_ids_, n, "link"); }
  int frame_index(const std::string& n) const { return lookup(frame_ids_, n, "frame"); }
  int shape_index(const std::string& n) const { return lookup(shape_ids_, n, "collision shape"); }
  bool has_frame(const std::string& n) const { return frame_ids_.count(n) != 0; }

  /// Frame names resolve first; a bare link name resolves to the link origin.
  Frame resolve_frame(const std::string& n) const {
    if (auto it = frame_ids_.find(n); it != frame_ids_.end()) return frames[it->second];
    if (auto it = link_ids_.find(n); it != link_ids_.end()) return {n, it->second, Pose{}};
    throw ModelError("unknown frame '" + n + "'");
  }

  VecX joint_lower() const {
    VecX v(num_joints());
    for (int i = 0; i < num_joints(); ++i) v[i] = revolute(i).q_min;
    return v;
  }
  VecX joint_upper() const {
    VecX v(num_joints());
    for (int i = 0; i < num_joints(); ++i) v[i] = revolute(i).q_max;
    return v;
  }
  VecX velocity_limits() const {
    VecX v(num_joints());
    for (int i = 0; i < num_joints(); ++i) v[i] = revolute(i).velocity_limit;
    return v;
  }

  /// Nominal posture (missing entries default to 0, clamped into limits).
  VecX nominal_joint_positions() const {
    VecX q = VecX::Zero(num_joints());
    for (int i = 0; i < num_joints(); ++i) {
      const Joint& j = revolute(i);
      if (auto it = nominal_posture.find(j.name); it != nominal_posture.end()) q[i] = it->second;
      q[i] = std::clamp(q[i], j.q_min, j.q_max);
    }
    return q;
  }

  JointConfiguration zero_configuration() const { return {Pose{}, VecX::Zero(num_joints())}; }

  /// Rebuilds lookup tables and derived data; throws ModelError on invalid models.
  void finalize();

 private:
  static int lookup(const std::unordered_map<std::string, int>& m, const std::string& n,
                    const char* what) {
    auto it = m.find(n);
    if (it == m.end()) throw ModelError(std::string("unknown ") + what + " '" + n + "'");
    return it->second;
  }

  std::unordered_map<std::string, int> link_ids_, frame_ids_, shape_ids_;
  std::vector<int> revolute_;
  std::vector<std::vector<int>> support_;
  double total_mass_ = 0.0;
};

// ---------------------------------------------------------------------------
// Generalized velocity packing: floating base -> [omega_body(3), v_world(3), qdot]

inline VecX pack_velocity(const RobotModel& model, const JointVelocity& v) {
  VecX out(model.nv());
  if (model.floating_base()) out << v.base_twist.angular, v.base_twist.linear, v.joint_rates;
  else out = v.joint_rates;
  return out;
}

inline JointVelocity unpack_velocity(const RobotModel& model, const VecX& v) {
  JointVelocity out;
  const int b = model.base_dofs();
  if (b == 6) {
    out.base_twist.angular = v.head<3>();
    out.base_twist.linear = v.segment<3>(3);
  }
  out.joint_rates = v.tail(model.num_joints());
  return out;
}

/// q <- q + v dt with the base orientation integrated on SO(3).
inline JointConfiguration integrate(const RobotModel& model, const JointConfiguration& q,
                                    const VecX& v, double dt) {
  JointConfiguration out = q;
  if (model.floating_base()) {
    out.base_pose = integrate(q.base_pose, Twist{v.head<3>(), v.segment<3>(3)}, dt);
  }
  out.joint_positions = q.joint_positions + v.tail(model.num_joints()) * dt;
  return out;
}

// ---------------------------------------------------------------------------
// Loading

namespace detail {

struct JsonPath {
  std::string path;
  [[noreturn]] void fail(const std::string& msg) const { throw ModelError(path + ": " + msg); }
};

inline const nlohmann::json& require(const nlohmann::json& obj, const char* key, const JsonPath& at) {
  if (!obj.is_object() || !obj.contains(key)) at.fail(std::string("missing field '") + key + "'");
  return obj.at(key);
}

inline double read_number(const nlohmann::json& j, const JsonPath& at) {
  if (!j.is_number()) at.fail("expected a number");
  return j.get<double>();
}

inline Vec3 read_vec3(const nlohmann::json& j, const JsonPath& at) {
  if (!j.is_array() || j.size() != 3) at.fail("expected an array of 3 numbers");
  Vec3 v;
  for (int i = 0; i < 3; ++i) v[i] = read_number(j[i], {at.path + "[" + std::to_string(i) + "]"});
  return v;
}

inline Quat read_quat_wxyz(const nlohmann::json& j, const JsonPath& at) {
  if (!j.is_array() || j.size() != 4) at.fail("expected an array of 4 numbers (w, x, y, z)");
  double c[4];
  for (int i = 0; i < 4; ++i) c[i] = read_number(j[i], {at.path + "[" + std::to_string(i) + "]"});
  Quat q(c[0], c[1], c[2], c[3]);
  if (std::abs(q.norm() - 1.0) > 1e-6) at.fail("quaternion is not unit norm");
  return canonicalize(q);
}

/// {"xyz": [..], "rpy": [..]} or {"xyz": [..], "quat": [w,x,y,z]}; both keys optional.
inline Pose read_origin(const nlohmann::json& j, const JsonPath& at) {
  if (!j.is_object()) at.fail("expected an object with 'xyz' and 'rpy' or 'quat'");
  Pose p;
  if (j.contains("xyz")) p.position = read_vec3(j["xyz"], {at.path + ".xyz"});
  if (j.contains("rpy")) p.orientation = from_rpy(read_vec3(j["rpy"], {at.path + ".rpy"}));
  if (j.contains("quat")) p.orientation = read_quat_wxyz(j["quat"], {at.path + ".quat"});
  return p;
}

inline std::string read_string(const nlohmann::json& j, const JsonPath& at) {
  if (!j.is_string()) at.fail("expected a string");
  return j.get<std::string>();
}

inline std::string line_col(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

}  // namespace detail

inline void RobotModel::finalize() {
  link_ids_.clear();
  frame_ids_.clear();
  shape_ids_.clear();
  revolute_.clear();
  for (int i = 0; i < static_cast<int>(links.size()); ++i) {
    if (!link_ids_.emplace(links[i].name, i).second) throw ModelError("duplicate link '" + links[i].name + "'");
    links[i].parent_joint = -1;
  }
  if (joints.empty()) throw ModelError("model has no joints (a root joint is required)");

  // Topological sort from the single root; detects cycles and disconnected links.
  std::vector<int> roots;
  for (int j = 0; j < static_cast<int>(joints.size()); ++j) {
    Joint& jt = joints[j];
    if (jt.child_link < 0) throw ModelError("joint '" + jt.name + "' has no child link");
    if (links[jt.child_link].parent_joint >= 0)
      throw ModelError("link '" + links[jt.child_link].name + "' has more than one parent joint (cycle or duplicate)");
    links[jt.child_link].parent_joint = j;
    if (jt.parent_link < 0) roots.push_back(j);
  }
  if (roots.size() != 1) throw ModelError("model must have exactly one root joint, found " + std::to_string(roots.size()));
  if (joints[roots[0]].type == JointType::revolute) throw ModelError("root joint must be 'floating' or 'fixed'");

  std::vector<Joint> ordered;
  ordered.reserve(joints.size());
  std::vector<bool> visited(links.size(), false);
  std::vector<int> stack{roots[0]};
  while (!stack.empty()) {
    const int j = stack.back();
    stack.pop_back();
    const int child = joints[j].child_link;
    if (visited[child]) throw ModelError("kinematic cycle through link '" + links[child].name + "'");
    visited[child] = true;
    ordered.push_back(joints[j]);
    for (int k = static_cast<int>(joints.size()) - 1; k >= 0; --k)
      if (joints[k].parent_link == child) stack.push_back(k);
  }
  for (std::size_t l = 0; l < links.size(); ++l)
    if (!visited[l]) throw ModelError("link '" + links[l].name + "' is not connected to the root (cycle or orphan)");
  joints = std::move(ordered);

  int q_index = 0;
  for (int j = 0; j < static_cast<int>(joints.size()); ++j) {
    Joint& jt = joints[j];
    links[jt.child_link].parent_joint = j;
    if (j > 0 && jt.type != JointType::revolute)
      throw ModelError("joint '" + jt.name + "': only the root joint may be floating or fixed");
    if (jt.type == JointType::revolute) {
      if (!(jt.q_min < jt.q_max))
        throw ModelError("joint '" + jt.name + "': position limits require q_min < q_max");
      if (!(jt.velocity_limit > 0.0)) throw ModelError("joint '" + jt.name + "': velocity limit must be > 0");
      if (jt.axis.norm() < 1e-9) throw ModelError("joint '" + jt.name + "': axis must be non-zero");
      jt.axis.normalize();
      jt.q_index = q_index++;
      revolute_.push_back(j);
    }
  }

  support_.assign(links.size(), {});
  for (const Joint& jt : joints) {
    auto& s = support_[jt.child_link];
    if (jt.parent_link >= 0) s = support_[jt.parent_link];
    if (jt.type == JointType::revolute) s.push_back(jt.q_index);
  }

  total_mass_ = 0.0;
  for (const Link& l : links) {
    if (l.mass < 0.0) throw ModelError("link '" + l.name + "': negative mass");
    total_mass_ += l.mass;
  }
  if (!(total_mass_ > 0.0)) throw ModelError("total mass must be > 0");

  for (int i = 0; i < static_cast<int>(frames.size()); ++i) {
    if (frames[i].link < 0) throw ModelError("frame '" + frames[i].name + "' references no link");
    if (!frame_ids_.emplace(frames[i].name, i).second) throw ModelError("duplicate frame '" + frames[i].name + "'");
  }
  for (int i = 0; i < static_cast<int>(collision_shapes.size()); ++i) {
    const auto& s = collision_shapes[i];
    const double r = std::visit([](const auto& g) { return g.radius; }, s.geometry);
    if (!(r > 0.0)) throw ModelError("collision shape '" + s.name + "': radius must be > 0");
    if (!shape_ids_.emplace(s.name, i).second) throw ModelError("duplicate collision shape '" + s.name + "'");
  }
  for (const auto& p : collision_pairs) {
    if (p.a == p.b) throw ModelError("collision pair references the same shape twice");
    const int la = collision_shapes[p.a].link, lb = collision_shapes[p.b].link;
    if (la == lb) throw ModelError("collision pair '" + collision_shapes[p.a].name + "'/'" +
                                   collision_shapes[p.b].name + "' is on a single link");
  }
  for (const auto& [side, poly] : foot_polygons) {
    if (poly.vertices.size() < 3) throw ModelError("foot polygon '" + side + "' needs at least 3 vertices");
    const std::size_t n = poly.vertices.size();
    for (std::size_t i = 0; i < n; ++i) {
      const Vec2 e0 = poly.vertices[(i + 1) % n] - poly.vertices[i];
      const Vec2 e1 = poly.vertices[(i + 2) % n] - poly.vertices[(i + 1) % n];
      if (e0.x() * e1.y() - e0.y() * e1.x() <= 0.0)
        throw ModelError("foot polygon '" + side + "' must be convex with counter-clockwise vertices");
    }
  }
}

inline RobotModel parse_model(const std::string& text) {
  using detail::JsonPath;
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ModelError("parse error at " + detail::line_col(text, e.byte) + ": " + e.what());
  }
  if (!doc.is_object()) throw ModelError("model document must be an object");

  RobotModel m;
  m.name = doc.value("name", std::string("unnamed"));

  const auto& links = detail::require(doc, "links", {"model"});
  if (!links.is_array()) JsonPath{"links"}.fail("expected an array");
  for (std::size_t i = 0; i < links.size(); ++i) {
    const JsonPath at{"links[" + std::to_string(i) + "]"};
    const auto& jl = links[i];
    Link l;
    l.name = detail::read_string(detail::require(jl, "name", at), {at.path + ".name"});
    l.mass = detail::read_number(detail::require(jl, "mass", at), {at.path + ".mass"});
    if (jl.contains("com")) l.com = detail::read_vec3(jl["com"], {at.path + ".com"});
    if (jl.contains("inertia")) {
      const auto& ji = jl["inertia"];
      if (!ji.is_array() || ji.size() != 6) at.fail("inertia: expected [ixx, iyy, izz, ixy, ixz, iyz]");
      double c[6];
      for (int k = 0; k < 6; ++k) c[k] = detail::read_number(ji[k], {at.path + ".inertia"});
      l.inertia << c[0], c[3], c[4], c[3], c[1], c[5], c[4], c[5], c[2];
    }
    m.links.push_back(l);
  }
  std::unordered_map<std::string, int> link_ids;
  for (int i = 0; i < static_cast<int>(m.links.size()); ++i) link_ids[m.links[i].name] = i;
  auto link_of = [&](const nlohmann::json& j, const JsonPath& at) {
    const std::string n = detail::read_string(j, at);
    auto it = link_ids.find(n);
    if (it == link_ids.end()) at.fail("unknown link '" + n + "'");
    return it->second;
  };

  const auto& joints = detail::require(doc, "joints", {"model"});
  if (!joints.is_array()) JsonPath{"joints"}.fail("expected an array");
  for (std::size_t i = 0; i < joints.size(); ++i) {
    const JsonPath at{"joints[" + std::to_string(i) + "]"};
    const auto& jj = joints[i];
    Joint j;
    j.name = detail::read_string(detail::require(jj, "name", at), {at.path + ".name"});
    const std::string type = detail::read_string(detail::require(jj, "type", at), {at.path + ".type"});
    if (type == "revolute") j.type = JointType::revolute;
    else if (type == "floating") j.type = JointType::floating;
    else if (type == "fixed") j.type = JointType::fixed;
    else JsonPath{at.path + ".type"}.fail("unknown joint type '" + type + "'");
    j.child_link = link_of(detail::require(jj, "child", at), {at.path + ".child"});
    if (jj.contains("parent") && !jj["parent"].is_null()) j.parent_link = link_of(jj["parent"], {at.path + ".parent"});
    if (jj.contains("origin")) j.origin = detail::read_origin(jj["origin"], {at.path + ".origin"});
    if (j.type == JointType::revolute) {
      if (j.parent_link < 0) at.fail("revolute joint requires a 'parent' link");
      j.axis = detail::read_vec3(detail::require(jj, "axis", at), {at.path + ".axis"});
      const auto& lim = detail::require(jj, "limits", at);
      if (!lim.is_array() || lim.size() != 2) JsonPath{at.path + ".limits"}.fail("expected [q_min, q_max]");
      j.q_min = detail::read_number(lim[0], {at.path + ".limits[0]"});
      j.q_max = detail::read_number(lim[1], {at.path + ".limits[1]"});
      j.velocity_limit = detail::read_number(detail::require(jj, "velocity_limit", at), {at.path + ".velocity_limit"});
    }
    m.joints.push_back(j);
  }

  if (doc.contains("frames")) {
    const auto& jf = doc["frames"];
    if (!jf.is_object()) JsonPath{"frames"}.fail("expected an object");
    for (const auto& [name, body] : jf.items()) {
      const JsonPath at{"frames." + name};
      Frame f;
      f.name = name;
      f.link = link_of(detail::require(body, "link", at), {at.path + ".link"});
      if (body.contains("origin")) f.offset = detail::read_origin(body["origin"], {at.path + ".origin"});
      m.frames.push_back(f);
    }
  }

  if (doc.contains("collision_shapes")) {
    const auto& js = doc["collision_shapes"];
    if (!js.is_array()) JsonPath{"collision_shapes"}.fail("expected an array");
    for (std::size_t i = 0; i < js.size(); ++i) {
      const JsonPath at{"collision_shapes[" + std::to_string(i) + "]"};
      const auto& s = js[i];
      CollisionShape cs;
      cs.name = detail::read_string(detail::require(s, "name", at), {at.path + ".name"});
      cs.link = link_of(detail::require(s, "link", at), {at.path + ".link"});
      if (s.contains("sphere")) {
        Sphere sp;
        const auto& g = s["sphere"];
        sp.radius = detail::read_number(detail::require(g, "radius", at), {at.path + ".sphere.radius"});
        if (g.contains("center")) sp.center = detail::read_vec3(g["center"], {at.path + ".sphere.center"});
        cs.geometry = sp;
      } else if (s.contains("capsule")) {
        Capsule c;
        const auto& g = s["capsule"];
        c.radius = detail::read_number(detail::require(g, "radius", at), {at.path + ".capsule.radius"});
        c.p0 = detail::read_vec3(detail::require(g, "p0", at), {at.path + ".capsule.p0"});
        c.p1 = detail::read_vec3(detail::require(g, "p1", at), {at.path + ".capsule.p1"});
        cs.geometry = c;
      } else {
        at.fail("expected a 'sphere' or 'capsule' primitive");
      }
      m.collision_shapes.push_back(cs);
    }
  }
  std::unordered_map<std::string, int> shape_ids;
  for (int i = 0; i < static_cast<int>(m.collision_shapes.size()); ++i) shape_ids[m.collision_shapes[i].name] = i;

  if (doc.contains("collision_pairs")) {
    const auto& jp = doc["collision_pairs"];
    if (!jp.is_array()) JsonPath{"collision_pairs"}.fail("expected an array");
    for (std::size_t i = 0; i < jp.size(); ++i) {
      const JsonPath at{"collision_pairs[" + std::to_string(i) + "]"};
      if (!jp[i].is_array() || jp[i].size() != 2) at.fail("expected [shape_a, shape_b]");
      CollisionPair p;
      for (int k = 0; k < 2; ++k) {
        const std::string n = detail::read_string(jp[i][k], at);
        auto it = shape_ids.find(n);
        if (it == shape_ids.end()) at.fail("unknown collision shape '" + n + "'");
        (k == 0 ? p.a : p.b) = it->second;
      }
      m.collision_pairs.push_back(p);
    }
  }

  std::unordered_map<std::string, int> frame_ids;
  for (int i = 0; i < static_cast<int>(m.frames.size()); ++i) frame_ids[m.frames[i].name] = i;
  if (doc.contains("foot_polygons")) {
    const auto& jf = doc["foot_polygons"];
    if (!jf.is_object()) JsonPath{"foot_polygons"}.fail("expected an object");
    for (const auto& [side, body] : jf.items()) {
      const JsonPath at{"foot_polygons." + side};
      FootPolygon fp;
      const std::string fname = detail::read_string(detail::require(body, "frame", at), {at.path + ".frame"});
      auto it = frame_ids.find(fname);
      if (it == frame_ids.end()) at.fail("missing frame '" + fname + "'");
      fp.frame = it->second;
      const auto& verts = detail::require(body, "vertices", at);
      if (!verts.is_array()) at.fail("vertices: expected an array");
      for (const auto& v : verts) {
        if (!v.is_array() || v.size() != 2) at.fail("vertices: expected [x, y] pairs");
        fp.vertices.emplace_back(v[0].get<double>(), v[1].get<double>());
      }
      m.foot_polygons[side] = fp;
    }
  }

  if (doc.contains("hand_mounting")) {
    for (const auto& [side, body] : doc["hand_mounting"].items())
      m.hand_mounting[side] = detail::read_origin(body, {"hand_mounting." + side}).orientation;
  }
  if (doc.contains("nominal_posture")) {
    for (const auto& [joint, value] : doc["nominal_posture"].items())
      m.nominal_posture[joint] = detail::read_number(value, {"nominal_posture." + joint});
  }

  m.finalize();
  for (const auto& [joint, value] : m.nominal_posture) {
    bool found = false;
    for (const auto& j : m.joints) found = found || j.name == joint;
    if (!found) throw ModelError("nominal_posture references unknown joint '" + joint + "'");
  }
  return m;
}

inline RobotModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ModelError("cannot open model file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_model(ss.str());
  } catch (const ModelError& e) {
    throw ModelError(path + ": " + e.what());
  }
}

}  // namespace kst

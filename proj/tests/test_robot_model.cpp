#include "kst/collision.hpp"
#include "kst/kinematics.hpp"
#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace kst;

namespace {

const std::string kModels = std::string(KST_SOURCE_DIR) + "/models/";

const RobotModel& planar() {
  static const RobotModel m = load_model(kModels + "planar_2r.model");
  return m;
}
const RobotModel& humanoid() {
  static const RobotModel m = load_model(kModels + "nadia_like.model");
  return m;
}

JointConfiguration random_configuration(const RobotModel& m, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> n(0.0, 1.0);
  JointConfiguration q = m.zero_configuration();
  for (int i = 0; i < m.num_joints(); ++i) {
    const Joint& j = m.revolute(i);
    q.joint_positions[i] = j.q_min + u(rng) * (j.q_max - j.q_min);
  }
  if (m.floating_base())
    q.base_pose = Pose(Vec3(n(rng), n(rng), 1.0 + n(rng)), Quat(n(rng), n(rng), n(rng), n(rng)));
  return q;
}

VecX random_velocity(const RobotModel& m, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  VecX v(m.nv());
  for (int i = 0; i < v.size(); ++i) v[i] = u(rng);
  return v;
}

std::string minimal_model(const std::string& joints_extra, const std::string& limits = "[-1, 1]") {
  return R"({"links": [{"name": "a", "mass": 1}, {"name": "b", "mass": 1}],
    "joints": [{"name": "root", "type": "floating", "child": "a"},
               {"name": "j", "type": "revolute", "parent": "a", "child": "b", "axis": [0,0,1],
                "limits": )" +
         limits + R"(, "velocity_limit": 1})" + joints_extra + R"(]})";
}

}  // namespace

TEST(LoadModel, HumanoidHas34Dofs) {
  const RobotModel& m = humanoid();
  EXPECT_EQ(m.nv(), 34);
  EXPECT_EQ(m.num_joints(), 28);
  EXPECT_TRUE(m.floating_base());
  EXPECT_EQ(m.links.size(), 29u);
  EXPECT_EQ(m.collision_pairs.size(), 12u);
  for (const char* f : {"pelvis", "chest", "hand_left", "hand_right", "foot_left", "foot_right", "shoulder_left"})
    EXPECT_TRUE(m.has_frame(f)) << f;
  EXPECT_EQ(m.foot_polygons.size(), 2u);
}

TEST(LoadModel, PlanarHasTwoRevoluteJoints) {
  const RobotModel& m = planar();
  EXPECT_EQ(m.num_joints(), 2);
  EXPECT_EQ(m.nv(), 2);
  EXPECT_FALSE(m.floating_base());
}

TEST(LoadModel, RejectsInvertedLimitsNamingJoint) {
  try {
    parse_model(minimal_model("", "[1, 1]"));
    FAIL() << "expected ModelError";
  } catch (const ModelError& e) {
    EXPECT_NE(std::string(e.what()).find("'j'"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("q_min < q_max"), std::string::npos) << e.what();
  }
}

TEST(LoadModel, RejectsCycles) {
  const std::string extra =
      R"(, {"name": "back", "type": "revolute", "parent": "b", "child": "a", "axis": [1,0,0],
           "limits": [-1, 1], "velocity_limit": 1})";
  EXPECT_THROW(parse_model(minimal_model(extra)), ModelError);
}

TEST(LoadModel, ParseErrorReportsLine) {
  try {
    parse_model("{\n  \"links\": [\n  oops\n]}");
    FAIL();
  } catch (const ModelError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(LoadModel, FieldErrorsNameThePath) {
  try {
    parse_model(R"({"links": [{"name": "a"}], "joints": []})");
    FAIL();
  } catch (const ModelError& e) {
    EXPECT_NE(std::string(e.what()).find("links[0]"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("mass"), std::string::npos) << e.what();
  }
}

TEST(LoadModel, RejectsFootPolygonOnMissingFrame) {
  std::string doc = minimal_model("");
  doc.insert(doc.size() - 1, R"(, "foot_polygons": {"left": {"frame": "nope", "vertices": [[0,0],[1,0],[0,1]]}})");
  EXPECT_THROW(parse_model(doc), ModelError);
}

TEST(LoadModel, RejectsNonPositiveRadius) {
  std::string doc = minimal_model("");
  doc.insert(doc.size() - 1, R"(, "collision_shapes": [{"name": "s", "link": "a", "sphere": {"radius": 0}}])");
  EXPECT_THROW(parse_model(doc), ModelError);
}

TEST(ForwardKinematics, PlanarStraight) {
  auto fk = forward_kinematics(planar(), JointConfiguration{Pose{}, Eigen::Vector2d(0.0, 0.0)});
  EXPECT_LT((fk.at("tip").position - Vec3(1.0, 0.0, 0.0)).norm(), 1e-15);
}

TEST(ForwardKinematics, PlanarQuarterTurn) {
  auto fk = forward_kinematics(planar(), JointConfiguration{Pose{}, Eigen::Vector2d(kPi / 2.0, 0.0)});
  EXPECT_LT((fk.at("tip").position - Vec3(0.0, 1.0, 0.0)).norm(), 1e-15);
}

TEST(ForwardKinematics, RejectsDimensionMismatch) {
  EXPECT_THROW(forward_kinematics(planar(), JointConfiguration{Pose{}, VecX::Zero(3)}), std::invalid_argument);
}

TEST(ForwardKinematics, ChildIsParentComposedWithJointTransform) {
  std::mt19937_64 rng(1);
  const RobotModel& m = humanoid();
  for (int trial = 0; trial < 50; ++trial) {
    const JointConfiguration q = random_configuration(m, rng);
    const KinematicsState ks = compute_kinematics(m, q);
    for (const Joint& j : m.joints) {
      if (j.type != JointType::revolute) continue;
      const Pose expected = ks.link_poses[j.parent_link] * j.origin *
                            Pose(Vec3::Zero(), Quat(Eigen::AngleAxisd(q.joint_positions[j.q_index], j.axis)));
      const Pose& got = ks.link_poses[j.child_link];
      EXPECT_LT((got.position - expected.position).norm(), 1e-12);
      EXPECT_LT(angle_between(got.orientation, expected.orientation), 1e-12);
    }
  }
}

// J v against central differences of FK along the manifold integration rule.
TEST(GeometricJacobian, MatchesFiniteDifferences) {
  std::mt19937_64 rng(2);
  const double h = 1e-6;
  for (const RobotModel* m : {&planar(), &humanoid()}) {
    for (int trial = 0; trial < 100; ++trial) {
      const JointConfiguration q = random_configuration(*m, rng);
      const VecX v = random_velocity(*m, rng);
      const KinematicsState ks = compute_kinematics(*m, q);
      const KinematicsState kp = compute_kinematics(*m, integrate(*m, q, v, h));
      const KinematicsState km = compute_kinematics(*m, integrate(*m, q, v, -h));
      for (const Frame& f : m->frames) {
        const Pose p0 = frame_pose(*m, ks, f), pp = frame_pose(*m, kp, f), pm = frame_pose(*m, km, f);
        const Vec6 jv = geometric_jacobian(*m, ks, f) * v;
        const Vec3 lin = (pp.position - pm.position) / (2.0 * h);
        const Vec3 ang = (quat_log(p0.orientation.conjugate() * pp.orientation) -
                          quat_log(p0.orientation.conjugate() * pm.orientation)) /
                         (2.0 * h);
        EXPECT_LE((jv.tail<3>() - lin).cwiseAbs().maxCoeff(), 1e-6) << f.name;
        EXPECT_LE((jv.head<3>() - ang).cwiseAbs().maxCoeff(), 1e-6) << f.name;
      }
    }
  }
}

TEST(GeometricJacobian, BaseTwistMovesPointsRigidly) {
  const RobotModel& m = humanoid();
  JointConfiguration q = m.zero_configuration();
  q.base_pose = Pose(Vec3(0.2, -0.1, 1.0), yaw_rotation(0.7));
  const KinematicsState ks = compute_kinematics(m, q);
  const Frame hand = m.resolve_frame("hand_left");
  const Vec3 p = frame_pose(m, ks, hand).position;
  const Mat6X J = geometric_jacobian(m, ks, hand, p);
  const Vec3 omega_body(0.3, -0.2, 0.5), v_base(0.1, 0.4, -0.3);
  VecX v = VecX::Zero(m.nv());
  v << omega_body, v_base, VecX::Zero(m.num_joints());
  const Vec3 omega_world = q.base_pose.orientation * omega_body;
  const Vec3 expected = v_base + omega_world.cross(p - q.base_pose.position);
  EXPECT_LT(((J * v).tail<3>() - expected).norm(), 1e-14);
}

TEST(GeometricJacobian, ColumnsOffThePathAreZero) {
  const RobotModel& m = humanoid();
  std::mt19937_64 rng(4);
  const JointConfiguration q = random_configuration(m, rng);
  const KinematicsState ks = compute_kinematics(m, q);
  const Frame hand = m.resolve_frame("hand_left");
  const Mat6X J = geometric_jacobian(m, ks, hand);
  const auto& support = m.support(hand.link);
  for (int i = 0; i < m.num_joints(); ++i) {
    const bool on_path = std::find(support.begin(), support.end(), i) != support.end();
    if (!on_path) EXPECT_EQ(J.col(m.base_dofs() + i).norm(), 0.0) << m.revolute(i).name;
  }
  EXPECT_GT(J.col(m.base_dofs() + m.revolute(support.back()).q_index).norm(), 0.0);
}

TEST(ComPosition, SingleLink) {
  const RobotModel m = parse_model(R"({"links": [{"name": "a", "mass": 2, "com": [0, 0, 0.1]}],
      "joints": [{"name": "root", "type": "floating", "child": "a"}]})");
  EXPECT_LT((com_position(m, m.zero_configuration()) - Vec3(0, 0, 0.1)).norm(), 1e-15);
}

TEST(ComPosition, SymmetricLinks) {
  const RobotModel m = parse_model(R"({"links": [{"name": "a", "mass": 0},
      {"name": "l", "mass": 1.5, "com": [-0.3, 0, 0]}, {"name": "r", "mass": 1.5, "com": [0.3, 0, 0]}],
      "joints": [{"name": "root", "type": "fixed", "child": "a"},
        {"name": "jl", "type": "revolute", "parent": "a", "child": "l", "axis": [1,0,0], "limits": [-1,1], "velocity_limit": 1},
        {"name": "jr", "type": "revolute", "parent": "a", "child": "r", "axis": [1,0,0], "limits": [-1,1], "velocity_limit": 1}]})");
  JointConfiguration q = m.zero_configuration();
  q.joint_positions << 0.4, -0.7;
  EXPECT_NEAR(com_position(m, q).x(), 0.0, 1e-16);
}

TEST(ComPosition, MatchesDirectSum) {
  std::mt19937_64 rng(5);
  const RobotModel& m = humanoid();
  for (int trial = 0; trial < 20; ++trial) {
    const JointConfiguration q = random_configuration(m, rng);
    const KinematicsState ks = compute_kinematics(m, q);
    Vec3 num = Vec3::Zero();
    double mass = 0.0;
    for (std::size_t i = 0; i < m.links.size(); ++i) {
      num += m.links[i].mass * (ks.link_poses[i] * m.links[i].com);
      mass += m.links[i].mass;
    }
    EXPECT_LT((com_position(m, q) - num / mass).norm(), 1e-12);
  }
}

TEST(CentroidalMomentum, SingleBodyLinearBlockIsMassTimesComJacobian) {
  const RobotModel m = parse_model(R"({"links": [{"name": "a", "mass": 3, "com": [0.1, 0.2, 0.3]}],
      "joints": [{"name": "root", "type": "floating", "child": "a"}]})");
  JointConfiguration q = m.zero_configuration();
  q.base_pose = Pose(Vec3(1, 2, 3), axis_angle(Vec3(1, 1, 0), 0.4));
  const KinematicsState ks = compute_kinematics(m, q);
  const CentroidalMomentum cm = centroidal_momentum_matrix(m, ks);
  const Mat3X Jcom = point_jacobian(m, ks, 0, ks.link_poses[0] * m.links[0].com);
  EXPECT_LT((cm.linear() - 3.0 * Jcom).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(CentroidalMomentum, LinearBlockMatchesComFiniteDifference) {
  std::mt19937_64 rng(6);
  const RobotModel& m = humanoid();
  const double h = 1e-6;
  for (int trial = 0; trial < 100; ++trial) {
    const JointConfiguration q = random_configuration(m, rng);
    const VecX v = random_velocity(m, rng);
    const Vec3 hl = centroidal_momentum_matrix(m, q).linear() * v;
    const Vec3 dcom = (com_position(m, integrate(m, q, v, h)) - com_position(m, integrate(m, q, v, -h))) / (2 * h);
    const Vec3 ref = m.total_mass() * dcom;
    EXPECT_LE((hl - ref).norm() / std::max(ref.norm(), 1e-9), 1e-5);
  }
}

TEST(CentroidalMomentum, PureTranslationHasNoAngularMomentum) {
  std::mt19937_64 rng(8);
  const RobotModel& m = humanoid();
  for (int trial = 0; trial < 20; ++trial) {
    const JointConfiguration q = random_configuration(m, rng);
    VecX v = VecX::Zero(m.nv());
    v.segment<3>(3) = Vec3(0.3, -1.2, 0.7);
    const Vec6 hm = centroidal_momentum_matrix(m, q).matrix * v;
    EXPECT_LT(hm.head<3>().norm(), 1e-12);
    EXPECT_LT((hm.tail<3>() - m.total_mass() * Vec3(0.3, -1.2, 0.7)).norm(), 1e-12);
  }
}

// Angular momentum about the CoM against the per-link sum computed from finite
// differences of link poses.
TEST(CentroidalMomentum, AngularBlockMatchesPerLinkSum) {
  std::mt19937_64 rng(10);
  const RobotModel& m = humanoid();
  const double h = 1e-6;
  for (int trial = 0; trial < 20; ++trial) {
    const JointConfiguration q = random_configuration(m, rng);
    const VecX v = random_velocity(m, rng);
    const KinematicsState k0 = compute_kinematics(m, q);
    const KinematicsState kp = compute_kinematics(m, integrate(m, q, v, h));
    const KinematicsState km = compute_kinematics(m, integrate(m, q, v, -h));
    const Vec3 c = com_position(m, k0);
    Vec3 L = Vec3::Zero();
    for (std::size_t i = 0; i < m.links.size(); ++i) {
      const Link& l = m.links[i];
      const Vec3 ci = k0.link_poses[i] * l.com;
      const Vec3 vi = (kp.link_poses[i] * l.com - km.link_poses[i] * l.com) / (2 * h);
      const Vec3 w_body = (quat_log(k0.link_poses[i].orientation.conjugate() * kp.link_poses[i].orientation) -
                           quat_log(k0.link_poses[i].orientation.conjugate() * km.link_poses[i].orientation)) /
                          (2 * h);
      const Mat3 R = k0.link_rotations[i];
      L += (ci - c).cross(l.mass * vi) + R * (l.inertia * w_body);
    }
    const Vec3 got = centroidal_momentum_matrix(m, k0).angular() * v;
    EXPECT_LE((got - L).norm(), 1e-5 * std::max(1.0, L.norm()));
  }
}

TEST(CollisionProximity, TwoSpheres) {
  const RobotModel m = parse_model(R"({"links": [{"name": "a", "mass": 1}, {"name": "b", "mass": 1}],
    "joints": [{"name": "root", "type": "fixed", "child": "a"},
               {"name": "j", "type": "revolute", "parent": "a", "child": "b", "axis": [0,0,1], "limits": [-1,1], "velocity_limit": 1}],
    "collision_shapes": [{"name": "s1", "link": "a", "sphere": {"radius": 0.1}},
                         {"name": "s2", "link": "b", "sphere": {"radius": 0.1, "center": [0.5, 0, 0]}}],
    "collision_pairs": [["s1", "s2"]]})");
  const auto r = collision_proximity(m, m.zero_configuration(), m.collision_pairs);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_NEAR(r[0].distance, 0.3, 1e-15);
  EXPECT_LT((r[0].axis - Vec3::UnitX()).norm(), 1e-15);
  EXPECT_LT((r[0].point_a - Vec3(0.1, 0, 0)).norm(), 1e-15);
  EXPECT_LT((r[0].point_b - Vec3(0.4, 0, 0)).norm(), 1e-15);
}

TEST(CollisionProximity, SphereTouchingCapsule) {
  const RobotModel m = parse_model(R"({"links": [{"name": "a", "mass": 1}, {"name": "b", "mass": 1}],
    "joints": [{"name": "root", "type": "fixed", "child": "a"},
               {"name": "j", "type": "revolute", "parent": "a", "child": "b", "axis": [0,0,1], "limits": [-1,1], "velocity_limit": 1}],
    "collision_shapes": [{"name": "c", "link": "a", "capsule": {"radius": 0.05, "p0": [0,0,0], "p1": [0,0,1]}},
                         {"name": "s", "link": "b", "sphere": {"radius": 0.15, "center": [0.2, 0, 0.5]}}],
    "collision_pairs": [["c", "s"]]})");
  const auto r = collision_proximity(m, m.zero_configuration(), m.collision_pairs);
  EXPECT_NEAR(r[0].distance, 0.0, 1e-15);
}

TEST(CollisionProximity, MatchesSegmentDistanceOracle) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-1.0, 1.0), ur(0.01, 0.2);
  for (int trial = 0; trial < 300; ++trial) {
    const Vec3 a0(u(rng), u(rng), u(rng)), a1(u(rng), u(rng), u(rng));
    const Vec3 b0(u(rng), u(rng), u(rng)), b1(u(rng), u(rng), u(rng));
    const double ra = ur(rng), rb = ur(rng);
    // sphere / capsule
    {
      const auto p = detail::core_proximity({b0, b0, rb}, {a0, a1, ra});
      const double ref = oracle::point_segment_distance(b0, a0, a1) - ra - rb;
      EXPECT_NEAR(p.distance, ref, 1e-9);
    }
    // capsule / capsule
    {
      const auto p = detail::core_proximity({a0, a1, ra}, {b0, b1, rb});
      const double ref = oracle::segment_segment_distance(a0, a1, b0, b1) - ra - rb;
      EXPECT_NEAR(p.distance, ref, 1e-9);
      EXPECT_NEAR((p.point_b - p.point_a).dot(p.axis), p.distance, 1e-12);
    }
  }
}

TEST(CollisionProximity, SwappingPairIsExactlySymmetric) {
  std::mt19937_64 rng(13);
  const RobotModel& m = humanoid();
  for (int trial = 0; trial < 50; ++trial) {
    const KinematicsState ks = compute_kinematics(m, random_configuration(m, rng));
    for (const auto& pr : m.collision_pairs) {
      const Proximity ab = shape_proximity(m, ks, pr.a, pr.b);
      const Proximity ba = shape_proximity(m, ks, pr.b, pr.a);
      EXPECT_EQ(ab.distance, ba.distance);
      EXPECT_EQ(ab.axis, Vec3(-ba.axis));
      EXPECT_EQ(ab.point_a, ba.point_b);
    }
  }
}

TEST(CollisionProximity, NominalHumanoidPostureIsSeparated) {
  const RobotModel& m = humanoid();
  JointConfiguration q = m.zero_configuration();
  q.joint_positions = m.nominal_joint_positions();
  const auto r = collision_proximity(m, q, m.collision_pairs);
  EXPECT_GT(min_separation(r), 0.05);
}

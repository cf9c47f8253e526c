#pragma once

#include <Eigen/Dense>

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dexplore {

using Vec2 = Eigen::Vector2d;

/// One planar finger: two revolute joints in series, proximal joint at `base`.
/// Joint angles are measured relative to `base_angle` (proximal) and to the
/// proximal link (distal).
struct FingerSpec {
  Vec2 base = Vec2::Zero();
  double base_angle = 0.0;
  std::array<double, 2> links{0.1, 0.1};
  std::array<double, 2> lower{-3.14, -3.14};
  std::array<double, 2> upper{3.14, 3.14};
};

/// Planar multi-finger hand. Every finger has exactly two joints, so the
/// joint vector is laid out finger-major: q = (f0j0, f0j1, f1j0, f1j1, ...).
class HandModel {
 public:
  static constexpr int kJointsPerFinger = 2;

  HandModel(std::vector<FingerSpec> fingers, double tip_radius);

  int num_fingers() const { return static_cast<int>(fingers_.size()); }
  int dof() const { return kJointsPerFinger * num_fingers(); }
  double tip_radius() const { return tip_radius_; }
  const FingerSpec& finger(int i) const { return fingers_.at(i); }
  const std::vector<FingerSpec>& fingers() const { return fingers_; }

  Eigen::VectorXd lower_limits() const;
  Eigen::VectorXd upper_limits() const;
  Eigen::VectorXd clamp(const Eigen::VectorXd& q) const;
  bool within_limits(const Eigen::VectorXd& q, double slack = 0.0) const;

 private:
  std::vector<FingerSpec> fingers_;
  double tip_radius_;
};

enum class ShapeCategory { kEasy, kModerate, kHard };

std::string to_string(ShapeCategory c);
ShapeCategory category_from_string(const std::string& s);

/// Closest-feature query result against an object boundary, in the object
/// frame. `outward` is the unit outward surface normal at `point`.
struct SurfaceQuery {
  double signed_distance = 0.0;  // negative inside
  Vec2 point = Vec2::Zero();
  Vec2 outward = Vec2::UnitX();
};

/// Rigid planar object. Polygon vertices are re-centred so the area centroid
/// sits at the object-frame origin and stored counter-clockwise.
class ObjectShape {
 public:
  enum class Kind { kDisc, kPolygon };

  static ObjectShape disc(double radius, ShapeCategory category, std::string name = "disc");
  static ObjectShape polygon(std::vector<Vec2> vertices, ShapeCategory category,
                             std::string name = "polygon");

  Kind kind() const { return kind_; }
  double radius() const { return radius_; }
  const std::vector<Vec2>& vertices() const { return vertices_; }
  ShapeCategory category() const { return category_; }
  const std::string& name() const { return name_; }
  bool convex() const { return convex_; }

  /// Largest distance from the origin to the boundary.
  double bounding_radius() const { return bounding_radius_; }
  /// Second moment of area about the centroid divided by area (so that
  /// inertia = mass * this).
  double unit_inertia() const { return unit_inertia_; }

  SurfaceQuery query(const Vec2& point_in_object_frame) const;
  bool contains(const Vec2& point_in_object_frame) const;

  /// Point on the boundary hit by the ray from the origin along `angle`
  /// (object frame); outermost crossing for concave shapes.
  SurfaceQuery ray_boundary(double angle) const;

 private:
  ObjectShape() = default;
  Kind kind_ = Kind::kDisc;
  double radius_ = 0.0;
  std::vector<Vec2> vertices_;
  std::vector<bool> reflex_;
  ShapeCategory category_ = ShapeCategory::kEasy;
  std::string name_;
  bool convex_ = true;
  double bounding_radius_ = 0.0;
  double unit_inertia_ = 0.0;
};

/// Planner/simulator configuration x = (q, p); p = (x, y, theta) with theta
/// kept unwrapped.
struct State {
  Eigen::VectorXd q;
  Eigen::Vector3d p = Eigen::Vector3d::Zero();

  /// (q, p) stacked into one vector of length d + 3.
  Eigen::VectorXd stacked() const;
  static State from_stacked(const Eigen::VectorXd& x, int dof);

  bool operator==(const State& o) const { return q == o.q && p == o.p; }
};

struct FingertipPose {
  Vec2 elbow;  // distal joint position
  Vec2 tip;    // fingertip disc centre
  double distal_angle = 0.0;
};

struct ContactInfo {
  int finger = 0;
  Vec2 point = Vec2::Zero();       // world frame, on the object surface
  Vec2 normal = Vec2::UnitX();     // inward object normal: direction the finger pushes
  double surface_distance = 0.0;   // fingertip surface to object surface, signed
  double depth = 0.0;              // max(0, -surface_distance)
  bool active = false;
};

/// At most one record per finger, indexed by finger.
struct ContactSet {
  std::vector<ContactInfo> contacts;

  int count() const;
  std::vector<int> active_fingers() const;
  const ContactInfo& at_finger(int finger) const;
};

inline constexpr double kDefaultContactTolerance = 1e-3;

std::vector<FingertipPose> forward_kinematics(const HandModel& model, const Eigen::VectorXd& q);

/// 2x2 Jacobian of a point rigidly attached to the distal link of `finger`
/// with respect to that finger's two joints.
Eigen::Matrix2d finger_point_jacobian(const HandModel& model, const Eigen::VectorXd& q,
                                      int finger, const Vec2& point);

ContactSet detect_contacts(const HandModel& model, const ObjectShape& shape, const State& state,
                           double tolerance = kDefaultContactTolerance);

/// Object-frame <-> world-frame helpers for pose p.
Vec2 object_to_world(const Eigen::Vector3d& p, const Vec2& local);
Vec2 world_to_object(const Eigen::Vector3d& p, const Vec2& world);

/// J_S: 2|S| x d. Row block i maps joint velocities to the velocity of the
/// finger-fixed point currently at contact S[i].
Eigen::MatrixXd contact_jacobian(const HandModel& model, const State& state,
                                 const ContactSet& contacts, std::span<const int> subset);

/// G_S: 2|S| x 3. Maps the object pose rate (xdot, ydot, thetadot) to the
/// velocities of the object-fixed contact points; G_S^T maps stacked contact
/// forces to the net wrench (fx, fy, tau).
Eigen::MatrixXd grasp_map(const State& state, const ContactSet& contacts,
                          std::span<const int> subset);

/// N_S = [J_S  -G_S], acting on (dq, dp).
Eigen::MatrixXd constraint_matrix(const HandModel& model, const State& state,
                                  const ContactSet& contacts, std::span<const int> subset);

/// Two-link planar IK for finger `finger` so that its tip centre lands on
/// `target` (world). Returns nullopt if unreachable within limits. The elbow
/// branch is the one with a positive distal angle.
std::optional<std::array<double, 2>> finger_ik(const HandModel& model, int finger,
                                               const Vec2& target);

/// The 4-finger reference hand (fingertip radius 8 mm).
HandModel reference_hand();

/// Reference objects: "disc", "square", "rectangle", "lpoly".
ObjectShape reference_object(const std::string& name);
std::vector<std::string> reference_object_names();

}  // namespace dexplore

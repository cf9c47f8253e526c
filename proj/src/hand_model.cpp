#include "dexplore/hand_model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dexplore/errors.hpp"

namespace dexplore {

namespace {

Vec2 perp(const Vec2& v) { return {-v.y(), v.x()}; }

double cross2(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

bool segments_intersect(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& d) {
  const double d1 = cross2(b - a, c - a);
  const double d2 = cross2(b - a, d - a);
  const double d3 = cross2(d - c, a - c);
  const double d4 = cross2(d - c, b - c);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0))) {
    return true;
  }
  auto on_segment = [](const Vec2& p, const Vec2& q, const Vec2& r) {
    return std::min(p.x(), q.x()) <= r.x() && r.x() <= std::max(p.x(), q.x()) &&
           std::min(p.y(), q.y()) <= r.y() && r.y() <= std::max(p.y(), q.y());
  };
  return (d1 == 0 && on_segment(a, b, c)) || (d2 == 0 && on_segment(a, b, d)) ||
         (d3 == 0 && on_segment(c, d, a)) || (d4 == 0 && on_segment(c, d, b));
}

double wrap_pi(double a) {
  return std::remainder(a, 2.0 * std::numbers::pi);
}

}  // namespace

// ---------------------------------------------------------------------------
// HandModel

HandModel::HandModel(std::vector<FingerSpec> fingers, double tip_radius)
    : fingers_(std::move(fingers)), tip_radius_(tip_radius) {
  if (fingers_.empty()) throw ConfigError("hand needs at least one finger");
  if (!(tip_radius_ > 0.0)) throw ConfigError("fingertip radius must be positive");
  for (const auto& f : fingers_) {
    for (int j = 0; j < kJointsPerFinger; ++j) {
      if (!(f.links[j] > 0.0)) throw ConfigError("link lengths must be positive");
      if (!(f.lower[j] < f.upper[j])) throw ConfigError("joint limits need lower < upper");
    }
  }
}

Eigen::VectorXd HandModel::lower_limits() const {
  Eigen::VectorXd lo(dof());
  for (int i = 0; i < num_fingers(); ++i) {
    lo(2 * i) = fingers_[i].lower[0];
    lo(2 * i + 1) = fingers_[i].lower[1];
  }
  return lo;
}

Eigen::VectorXd HandModel::upper_limits() const {
  Eigen::VectorXd hi(dof());
  for (int i = 0; i < num_fingers(); ++i) {
    hi(2 * i) = fingers_[i].upper[0];
    hi(2 * i + 1) = fingers_[i].upper[1];
  }
  return hi;
}

Eigen::VectorXd HandModel::clamp(const Eigen::VectorXd& q) const {
  return q.cwiseMax(lower_limits()).cwiseMin(upper_limits());
}

bool HandModel::within_limits(const Eigen::VectorXd& q, double slack) const {
  if (q.size() != dof()) return false;
  return ((q - lower_limits()).array() >= -slack).all() &&
         ((upper_limits() - q).array() >= -slack).all();
}

// ---------------------------------------------------------------------------
// ObjectShape

std::string to_string(ShapeCategory c) {
  switch (c) {
    case ShapeCategory::kEasy: return "easy";
    case ShapeCategory::kModerate: return "moderate";
    case ShapeCategory::kHard: return "hard";
  }
  return "easy";
}

ShapeCategory category_from_string(const std::string& s) {
  if (s == "easy") return ShapeCategory::kEasy;
  if (s == "moderate") return ShapeCategory::kModerate;
  if (s == "hard") return ShapeCategory::kHard;
  throw ConfigError("unknown shape category '" + s + "'");
}

ObjectShape ObjectShape::disc(double radius, ShapeCategory category, std::string name) {
  if (!(radius > 0.0)) throw ConfigError("disc radius must be positive");
  ObjectShape s;
  s.kind_ = Kind::kDisc;
  s.radius_ = radius;
  s.category_ = category;
  s.name_ = std::move(name);
  s.bounding_radius_ = radius;
  s.unit_inertia_ = 0.5 * radius * radius;
  return s;
}

ObjectShape ObjectShape::polygon(std::vector<Vec2> v, ShapeCategory category, std::string name) {
  const int n = static_cast<int>(v.size());
  if (n < 3) throw ConfigError("polygon needs at least 3 vertices");
  double area2 = 0.0;
  for (int i = 0; i < n; ++i) area2 += cross2(v[i], v[(i + 1) % n]);
  if (std::abs(area2) < 1e-14) throw ConfigError("polygon has zero area");
  if (area2 < 0) {
    std::reverse(v.begin(), v.end());
    area2 = -area2;
  }
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const bool adjacent = (j == i + 1) || (i == 0 && j == n - 1);
      if (adjacent) continue;
      if (segments_intersect(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n])) {
        throw ConfigError("polygon '" + name + "' is self-intersecting");
      }
    }
  }
  // centroid
  Vec2 c = Vec2::Zero();
  for (int i = 0; i < n; ++i) {
    const Vec2& a = v[i];
    const Vec2& b = v[(i + 1) % n];
    c += (a + b) * cross2(a, b);
  }
  c /= (3.0 * area2);
  for (auto& p : v) p -= c;

  ObjectShape s;
  s.kind_ = Kind::kPolygon;
  s.category_ = category;
  s.name_ = std::move(name);
  s.vertices_ = std::move(v);
  s.reflex_.assign(n, false);
  double polar = 0.0;
  for (int i = 0; i < n; ++i) {
    const Vec2& prev = s.vertices_[(i + n - 1) % n];
    const Vec2& cur = s.vertices_[i];
    const Vec2& next = s.vertices_[(i + 1) % n];
    s.reflex_[i] = cross2(cur - prev, next - cur) < 0.0;
    if (s.reflex_[i]) s.convex_ = false;
    s.bounding_radius_ = std::max(s.bounding_radius_, cur.norm());
    const double cr = cross2(cur, next);
    polar += cr * (cur.squaredNorm() + cur.dot(next) + next.squaredNorm());
  }
  s.unit_inertia_ = (polar / 12.0) / (0.5 * area2);
  return s;
}

bool ObjectShape::contains(const Vec2& pt) const {
  if (kind_ == Kind::kDisc) return pt.norm() < radius_;
  bool inside = false;
  const int n = static_cast<int>(vertices_.size());
  for (int i = 0, j = n - 1; i < n; j = i++) {
    const Vec2& a = vertices_[i];
    const Vec2& b = vertices_[j];
    if ((a.y() > pt.y()) != (b.y() > pt.y())) {
      const double x = (b.x() - a.x()) * (pt.y() - a.y()) / (b.y() - a.y()) + a.x();
      if (pt.x() < x) inside = !inside;
    }
  }
  return inside;
}

SurfaceQuery ObjectShape::query(const Vec2& pt) const {
  SurfaceQuery out;
  if (kind_ == Kind::kDisc) {
    const double r = pt.norm();
    out.outward = r > 1e-15 ? Vec2(pt / r) : Vec2::UnitX();
    out.point = radius_ * out.outward;
    out.signed_distance = r - radius_;
    return out;
  }
  const int n = static_cast<int>(vertices_.size());
  double best = std::numeric_limits<double>::infinity();
  int best_edge = 0;
  double best_t = 0.0;
  for (int i = 0; i < n; ++i) {
    const Vec2& a = vertices_[i];
    const Vec2& b = vertices_[(i + 1) % n];
    const Vec2 e = b - a;
    const double t = std::clamp((pt - a).dot(e) / e.squaredNorm(), 0.0, 1.0);
    const double d2 = (a + t * e - pt).squaredNorm();
    if (d2 < best) {
      best = d2;
      best_edge = i;
      best_t = t;
    }
  }
  const bool inside = contains(pt);
  const Vec2& a = vertices_[best_edge];
  const Vec2& b = vertices_[(best_edge + 1) % n];
  const Vec2 closest = a + best_t * (b - a);
  auto edge_normal = [&](int i) {
    const Vec2 e = vertices_[(i + 1) % n] - vertices_[i];
    return Vec2(Vec2(e.y(), -e.x()).normalized());
  };
  auto bisector = [&](int vi) {
    return Vec2((edge_normal((vi + n - 1) % n) + edge_normal(vi)).normalized());
  };
  const double dist = std::sqrt(best);
  out.point = closest;
  out.signed_distance = inside ? -dist : dist;
  const bool at_vertex = best_t <= 0.0 || best_t >= 1.0;
  if (!at_vertex) {
    out.outward = edge_normal(best_edge);
  } else {
    const int vi = best_t <= 0.0 ? best_edge : (best_edge + 1) % n;
    if (!inside && !reflex_[vi] && dist > 1e-12) {
      out.outward = (pt - vertices_[vi]) / dist;
    } else {
      out.outward = bisector(vi);
    }
  }
  return out;
}

SurfaceQuery ObjectShape::ray_boundary(double angle) const {
  const Vec2 dir(std::cos(angle), std::sin(angle));
  if (kind_ == Kind::kDisc) return query(dir * radius_);
  const int n = static_cast<int>(vertices_.size());
  double best_t = 0.0;
  for (int i = 0; i < n; ++i) {
    const Vec2& a = vertices_[i];
    const Vec2 e = vertices_[(i + 1) % n] - a;
    const double denom = cross2(dir, e);
    if (std::abs(denom) < 1e-15) continue;
    const double t = cross2(a, e) / denom;
    const double u = cross2(a, dir) / denom;
    if (t > 0 && u >= 0 && u <= 1) best_t = std::max(best_t, t);
  }
  return query(dir * best_t);
}

// ---------------------------------------------------------------------------
// State / contacts

Eigen::VectorXd State::stacked() const {
  Eigen::VectorXd x(q.size() + 3);
  x << q, p;
  return x;
}

State State::from_stacked(const Eigen::VectorXd& x, int dof) {
  if (x.size() != dof + 3) throw ContractError("stacked state has wrong length");
  State s;
  s.q = x.head(dof);
  s.p = x.tail<3>();
  return s;
}

int ContactSet::count() const {
  return static_cast<int>(std::count_if(contacts.begin(), contacts.end(),
                                        [](const ContactInfo& c) { return c.active; }));
}

std::vector<int> ContactSet::active_fingers() const {
  std::vector<int> out;
  for (const auto& c : contacts) {
    if (c.active) out.push_back(c.finger);
  }
  return out;
}

const ContactInfo& ContactSet::at_finger(int finger) const {
  for (const auto& c : contacts) {
    if (c.finger == finger) return c;
  }
  throw ContractError("no contact record for finger " + std::to_string(finger));
}

Vec2 object_to_world(const Eigen::Vector3d& p, const Vec2& local) {
  const double c = std::cos(p.z()), s = std::sin(p.z());
  return {p.x() + c * local.x() - s * local.y(), p.y() + s * local.x() + c * local.y()};
}

Vec2 world_to_object(const Eigen::Vector3d& p, const Vec2& world) {
  const double c = std::cos(p.z()), s = std::sin(p.z());
  const Vec2 d = world - p.head<2>();
  return {c * d.x() + s * d.y(), -s * d.x() + c * d.y()};
}

std::vector<FingertipPose> forward_kinematics(const HandModel& model, const Eigen::VectorXd& q) {
  if (q.size() != model.dof()) {
    throw ContractError("forward_kinematics: joint vector has length " + std::to_string(q.size()) +
                        ", expected " + std::to_string(model.dof()));
  }
  std::vector<FingertipPose> out(model.num_fingers());
  for (int i = 0; i < model.num_fingers(); ++i) {
    const FingerSpec& f = model.finger(i);
    const double a1 = f.base_angle + q(2 * i);
    const double a2 = a1 + q(2 * i + 1);
    out[i].elbow = f.base + f.links[0] * Vec2(std::cos(a1), std::sin(a1));
    out[i].tip = out[i].elbow + f.links[1] * Vec2(std::cos(a2), std::sin(a2));
    out[i].distal_angle = a2;
  }
  return out;
}

Eigen::Matrix2d finger_point_jacobian(const HandModel& model, const Eigen::VectorXd& q, int finger,
                                      const Vec2& point) {
  const auto fk = forward_kinematics(model, q);
  Eigen::Matrix2d j;
  j.col(0) = perp(point - model.finger(finger).base);
  j.col(1) = perp(point - fk[finger].elbow);
  return j;
}

ContactSet detect_contacts(const HandModel& model, const ObjectShape& shape, const State& state,
                           double tolerance) {
  const auto fk = forward_kinematics(model, state.q);
  const double c = std::cos(state.p.z()), s = std::sin(state.p.z());
  ContactSet set;
  set.contacts.reserve(model.num_fingers());
  for (int i = 0; i < model.num_fingers(); ++i) {
    const SurfaceQuery sq = shape.query(world_to_object(state.p, fk[i].tip));
    ContactInfo ci;
    ci.finger = i;
    ci.point = object_to_world(state.p, sq.point);
    const Vec2 out_world(c * sq.outward.x() - s * sq.outward.y(),
                         s * sq.outward.x() + c * sq.outward.y());
    ci.normal = -out_world;
    ci.surface_distance = sq.signed_distance - model.tip_radius();
    ci.depth = std::max(0.0, -ci.surface_distance);
    ci.active = ci.surface_distance <= tolerance;
    set.contacts.push_back(ci);
  }
  return set;
}

Eigen::MatrixXd contact_jacobian(const HandModel& model, const State& state,
                                 const ContactSet& contacts, std::span<const int> subset) {
  const int k = static_cast<int>(subset.size());
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(2 * k, model.dof());
  if (k == 0) return j;
  const auto fk = forward_kinematics(model, state.q);
  for (int r = 0; r < k; ++r) {
    const int f = subset[r];
    if (f < 0 || f >= model.num_fingers()) throw ContractError("finger index out of range");
    const ContactInfo& ci = contacts.at_finger(f);
    if (!ci.active) {
      throw PreconditionError("contact_jacobian: finger " + std::to_string(f) +
                              " is not in contact");
    }
    j.block<2, 1>(2 * r, 2 * f) = perp(ci.point - model.finger(f).base);
    j.block<2, 1>(2 * r, 2 * f + 1) = perp(ci.point - fk[f].elbow);
  }
  return j;
}

Eigen::MatrixXd grasp_map(const State& state, const ContactSet& contacts,
                          std::span<const int> subset) {
  const int k = static_cast<int>(subset.size());
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(2 * k, 3);
  for (int r = 0; r < k; ++r) {
    const ContactInfo& ci = contacts.at_finger(subset[r]);
    if (!ci.active) {
      throw PreconditionError("grasp_map: finger " + std::to_string(subset[r]) +
                              " is not in contact");
    }
    const Vec2 lever = ci.point - state.p.head<2>();
    g(2 * r, 0) = 1.0;
    g(2 * r, 2) = -lever.y();
    g(2 * r + 1, 1) = 1.0;
    g(2 * r + 1, 2) = lever.x();
  }
  return g;
}

Eigen::MatrixXd constraint_matrix(const HandModel& model, const State& state,
                                  const ContactSet& contacts, std::span<const int> subset) {
  const Eigen::MatrixXd j = contact_jacobian(model, state, contacts, subset);
  const Eigen::MatrixXd g = grasp_map(state, contacts, subset);
  Eigen::MatrixXd n(j.rows(), j.cols() + 3);
  n << j, -g;
  return n;
}

std::optional<std::array<double, 2>> finger_ik(const HandModel& model, int finger,
                                               const Vec2& target) {
  const FingerSpec& f = model.finger(finger);
  const Vec2 r = target - f.base;
  const double d2 = r.squaredNorm();
  const double l1 = f.links[0], l2 = f.links[1];
  const double cos_q1 = (d2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2);
  if (cos_q1 < -1.0 || cos_q1 > 1.0) return std::nullopt;
  const double q1 = std::acos(cos_q1);
  const double a1 = std::atan2(r.y(), r.x()) - std::atan2(l2 * std::sin(q1), l1 + l2 * std::cos(q1));
  const double q0 = wrap_pi(a1 - f.base_angle);
  if (q0 < f.lower[0] || q0 > f.upper[0] || q1 < f.lower[1] || q1 > f.upper[1]) {
    return std::nullopt;
  }
  return std::array<double, 2>{q0, q1};
}

HandModel reference_hand() {
  std::vector<FingerSpec> fingers;
  constexpr double kBaseRadius = 0.1;
  for (int i = 0; i < 4; ++i) {
    const double angle = std::numbers::pi / 4.0 + i * std::numbers::pi / 2.0;
    FingerSpec f;
    f.base = kBaseRadius * Vec2(std::cos(angle), std::sin(angle));
    f.base_angle = angle + std::numbers::pi;
    f.links = {0.06, 0.055};
    f.lower = {-2.0, 0.15};
    f.upper = {0.8, 2.9};
    fingers.push_back(f);
  }
  return HandModel(std::move(fingers), 0.008);
}

ObjectShape reference_object(const std::string& name) {
  if (name == "disc") return ObjectShape::disc(0.035, ShapeCategory::kEasy, "disc");
  if (name == "square") {
    const double h = 0.028;
    return ObjectShape::polygon({{-h, -h}, {h, -h}, {h, h}, {-h, h}}, ShapeCategory::kEasy,
                                "square");
  }
  if (name == "rectangle") {
    const double a = 0.045, b = 0.018;
    return ObjectShape::polygon({{-a, -b}, {a, -b}, {a, b}, {-a, b}}, ShapeCategory::kModerate,
                                "rectangle");
  }
  if (name == "lpoly") {
    return ObjectShape::polygon(
        {{0.0, 0.0}, {0.065, 0.0}, {0.065, 0.025}, {0.025, 0.025}, {0.025, 0.065}, {0.0, 0.065}},
        ShapeCategory::kHard, "lpoly");
  }
  throw ConfigError("unknown reference object '" + name + "'");
}

std::vector<std::string> reference_object_names() {
  return {"disc", "square", "rectangle", "lpoly"};
}

}  // namespace dexplore

#include <doctest.h>

#include <random>

#include "dexplore/errors.hpp"
#include "helpers.hpp"

using namespace testing;

namespace {

HandModel straight_finger() {
  FingerSpec f;
  f.links = {0.1, 0.1};
  return HandModel({f}, 0.008);
}

// Boundary of a polygon as dense, evenly spaced samples; each carries its
// boundary parameter (edge index + fraction along the edge).
struct BoundarySample {
  double param;
  Vec2 point;
};

std::vector<BoundarySample> sample_boundary(const std::vector<Vec2>& v, int count) {
  double perimeter = 0.0;
  for (size_t i = 0; i < v.size(); ++i) perimeter += (v[(i + 1) % v.size()] - v[i]).norm();
  std::vector<BoundarySample> out;
  for (size_t i = 0; i < v.size(); ++i) {
    const Vec2 a = v[i], b = v[(i + 1) % v.size()];
    const int n = std::max(1, static_cast<int>(std::round(count * (b - a).norm() / perimeter)));
    for (int j = 0; j < n; ++j) out.push_back({i + double(j) / n, a + (b - a) * (double(j) / n)});
  }
  return out;
}

Vec2 boundary_at(const std::vector<Vec2>& v, double s) {
  // s in [0, n): edge floor(s), fraction s - floor(s)
  const int n = static_cast<int>(v.size());
  double w = std::fmod(s, n);
  if (w < 0) w += n;
  if (w >= n) w = 0.0;
  const int i = static_cast<int>(w);
  return v[i] + (w - i) * (v[(i + 1) % n] - v[i]);
}

bool inside_polygon(const std::vector<Vec2>& v, const Vec2& p) {
  bool in = false;
  for (size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
    if ((v[i].y() > p.y()) != (v[j].y() > p.y()) &&
        p.x() < (v[j].x() - v[i].x()) * (p.y() - v[i].y()) / (v[j].y() - v[i].y()) + v[i].x()) {
      in = !in;
    }
  }
  return in;
}

Vec2 distal_local(const FingertipPose& f, const Vec2& p) {
  return Eigen::Rotation2Dd(-f.distal_angle) * (p - f.elbow);
}
Vec2 distal_world(const FingertipPose& f, const Vec2& local) {
  return f.elbow + Eigen::Rotation2Dd(f.distal_angle) * local;
}

}  // namespace

TEST_CASE("straight finger tip positions") {
  const HandModel m = straight_finger();
  auto fk = forward_kinematics(m, Eigen::Vector2d(0, 0));
  CHECK(fk[0].tip.x() == doctest::Approx(0.2));
  CHECK(fk[0].tip.y() == doctest::Approx(0.0));
  fk = forward_kinematics(m, Eigen::Vector2d(kPi / 2, 0));
  CHECK(fk[0].tip.x() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(fk[0].tip.y() == doctest::Approx(0.2));
  CHECK_THROWS_AS(forward_kinematics(m, Eigen::Vector3d::Zero()), ContractError);
}

TEST_CASE("fingertip depends only on its own joints") {
  const HandModel m = reference_hand();
  std::mt19937_64 rng(3);
  const Eigen::VectorXd q = uniform_q(m, rng);
  const auto base = forward_kinematics(m, q);
  for (int f = 0; f < m.num_fingers(); ++f) {
    Eigen::VectorXd q2 = q;
    q2.segment(2 * f, 2).array() += 0.1;
    const auto moved = forward_kinematics(m, q2);
    for (int g = 0; g < m.num_fingers(); ++g) {
      if (g == f) CHECK((moved[g].tip - base[g].tip).norm() > 1e-4);
      else CHECK(moved[g].tip == base[g].tip);
    }
  }
}

TEST_CASE("FK matches integrated joint velocities") {
  const HandModel m = reference_hand();
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n01;
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::VectorXd q = uniform_q(m, rng);
    Eigen::VectorXd dq(m.dof());
    for (int i = 0; i < m.dof(); ++i) dq[i] = n01(rng);
    dq *= 1e-4 / dq.norm();
    const auto target = forward_kinematics(m, q + dq);
    for (int f = 0; f < m.num_fingers(); ++f) {
      // midpoint rule over 20 substeps
      Vec2 tip = forward_kinematics(m, q)[f].tip;
      const int sub = 20;
      for (int s = 0; s < sub; ++s) {
        const Eigen::VectorXd qm = q + dq * ((s + 0.5) / sub);
        const Vec2 at = forward_kinematics(m, qm)[f].tip;
        tip += finger_point_jacobian(m, qm, f, at) * (dq.segment(2 * f, 2) / sub);
      }
      CHECK((tip - target[f].tip).norm() < 1e-6);
    }
  }
}

TEST_CASE("FK directional derivative at delta 1e-5") {
  const HandModel m = reference_hand();
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n01;
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::VectorXd q = uniform_q(m, rng);
    Eigen::VectorXd d(m.dof());
    for (int i = 0; i < m.dof(); ++i) d[i] = n01(rng);
    d *= 1e-5 / d.norm();
    const auto a = forward_kinematics(m, q), b = forward_kinematics(m, q + d);
    for (int f = 0; f < m.num_fingers(); ++f) {
      const Vec2 fd = (b[f].tip - a[f].tip) / d.norm();
      const Vec2 lin = finger_point_jacobian(m, q, f, a[f].tip) * d.segment(2 * f, 2) / d.norm();
      if (lin.norm() < 1e-3) continue;
      CHECK((fd - lin).norm() / lin.norm() < 1e-4);
    }
  }
}

TEST_CASE("two-link Jacobian columns at a straight configuration") {
  const HandModel m = straight_finger();
  const Eigen::Matrix2d j = finger_point_jacobian(m, Eigen::Vector2d(0, 0), 0, Vec2(0.2, 0));
  CHECK(j(0, 0) == doctest::Approx(0.0));
  CHECK(j(1, 0) == doctest::Approx(0.2));
  CHECK(j(0, 1) == doctest::Approx(0.0));
  CHECK(j(1, 1) == doctest::Approx(0.1));
}

TEST_CASE("disc tangency and far fingers") {
  const HandModel m = reference_hand();
  const ObjectShape disc = reference_object("disc");
  const State s = canonical_grasp(m, disc);
  const auto fk = forward_kinematics(m, s.q);
  const ContactSet cs = detect_contacts(m, disc, s);
  CHECK(cs.count() == 4);
  for (const auto& c : cs.contacts) {
    CHECK(c.active);
    CHECK(c.depth == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(c.normal.norm() == doctest::Approx(1.0).epsilon(1e-12));
    const Vec2 toward_tip = (fk[c.finger].tip - s.p.head<2>()).normalized();
    CHECK((c.normal + toward_tip).norm() < 1e-9);
  }
  State far = s;
  far.p.x() += 0.5;
  CHECK(detect_contacts(m, disc, far).count() == 0);
}

TEST_CASE("polygon contacts agree with a dense boundary oracle") {
  const HandModel m = reference_hand();
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  int active_checked = 0;
  for (const std::string name : {"square", "lpoly"}) {
    const ObjectShape shape = reference_object(name);
    const auto& v = shape.vertices();
    const auto samples = sample_boundary(v, 10000);
    const State base = canonical_grasp(m, shape);
    for (int trial = 0; trial < 100; ++trial) {
      State s = base;
      for (int i = 0; i < m.dof(); ++i) s.q[i] += 0.03 * u(rng);
      s.p += Eigen::Vector3d(0.004 * u(rng), 0.004 * u(rng), 0.3 * u(rng));
      const ContactSet cs = detect_contacts(m, shape, s);
      const auto fk = forward_kinematics(m, s.q);
      for (int f = 0; f < m.num_fingers(); ++f) {
        const Vec2 local = world_to_object(s.p, fk[f].tip);
        size_t best = 0;
        for (size_t i = 1; i < samples.size(); ++i) {
          if ((samples[i].point - local).squaredNorm() < (samples[best].point - local).squaredNorm()) best = i;
        }
        // Ternary search along the boundary parameter around the nearest sample.
        double lo = samples[best].param - 0.01, hi = samples[best].param + 0.01;
        for (int it = 0; it < 200; ++it) {
          const double m1 = lo + (hi - lo) / 3, m2 = hi - (hi - lo) / 3;
          if ((boundary_at(v, m1) - local).norm() < (boundary_at(v, m2) - local).norm()) hi = m2;
          else lo = m1;
        }
        const Vec2 closest = boundary_at(v, 0.5 * (lo + hi));
        const double dist = (closest - local).norm();
        const double signed_d = inside_polygon(v, local) ? -dist : dist;
        const double surface = signed_d - m.tip_radius();
        if (std::abs(surface - kDefaultContactTolerance) < 1e-6) continue;
        const auto& c = cs.at_finger(f);
        CHECK(c.active == (surface <= kDefaultContactTolerance));
        CHECK(c.surface_distance == doctest::Approx(surface).epsilon(1e-6));
        if (c.active && signed_d > 0) {
          const Vec2 outward_local = (local - closest) / dist;
          const Vec2 inward_world = -(Eigen::Rotation2Dd(s.p.z()) * outward_local);
          const double angle = std::acos(std::clamp(inward_world.dot(c.normal), -1.0, 1.0));
          CHECK(angle < 1e-3);
          ++active_checked;
        }
      }
    }
  }
  CHECK(active_checked > 50);
}

TEST_CASE("penetration depth is continuous across the activity threshold") {
  const HandModel m = reference_hand();
  const ObjectShape disc = reference_object("disc");
  const State s = canonical_grasp(m, disc);
  double prev_depth = -1;
  for (int i = -20; i <= 20; ++i) {
    State t = s;
    t.p.x() += i * 1e-4;
    const auto& c = detect_contacts(m, disc, t).at_finger(0);
    CHECK(c.depth >= 0.0);
    CHECK(c.depth == doctest::Approx(std::max(0.0, -c.surface_distance)));
    if (prev_depth >= 0) CHECK(std::abs(c.depth - prev_depth) <= 1e-4 + 1e-12);
    prev_depth = c.depth;
  }
}

TEST_CASE("contact Jacobian against finite differences of a finger-fixed point") {
  const HandModel m = reference_hand();
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (const std::string name : {"disc", "square", "rectangle"}) {
    const ObjectShape shape = reference_object(name);
    const State base = canonical_grasp(m, shape);
    for (int trial = 0; trial < 20; ++trial) {
      State s = base;
      s.p.z() += 0.2 * u(rng);
      s.p.x() += 0.002 * u(rng);
      // re-place fingers tangent at the same object-frame angles
      const ContactSet cs = detect_contacts(m, shape, base);
      std::vector<int> active = cs.active_fingers();
      const ContactSet now = detect_contacts(m, shape, s);
      active.clear();
      for (int f = 0; f < m.num_fingers(); ++f) {
        if (now.at_finger(f).active) active.push_back(f);
      }
      if (active.empty()) continue;
      const Eigen::MatrixXd j = contact_jacobian(m, s, now, active);
      REQUIRE(j.rows() == 2 * static_cast<int>(active.size()));
      for (int r = 0; r < static_cast<int>(active.size()); ++r) {
        const int f = active[r];
        for (int col = 0; col < m.dof(); ++col) {
          if (col / 2 != f) CHECK(j.block(2 * r, col, 2, 1).norm() == 0.0);
        }
        Eigen::VectorXd dq = Eigen::VectorXd::Zero(m.dof());
        dq.segment(2 * f, 2) = Eigen::Vector2d(u(rng), u(rng)).normalized() * 1e-5;
        const auto fk = forward_kinematics(m, s.q);
        const Vec2 local = distal_local(fk[f], now.at_finger(f).point);
        const Vec2 plus = distal_world(forward_kinematics(m, s.q + dq)[f], local);
        const Vec2 minus = distal_world(forward_kinematics(m, s.q - dq)[f], local);
        const Vec2 fd = 0.5 * (plus - minus);
        const Vec2 lin = j.block(2 * r, 0, 2, m.dof()) * dq;
        CHECK((fd - lin).norm() / lin.norm() < 1e-5);
      }
    }
  }
}

TEST_CASE("empty subset and inactive finger") {
  const HandModel m = reference_hand();
  const ObjectShape disc = reference_object("disc");
  State s = canonical_grasp(m, disc);
  ContactSet cs = detect_contacts(m, disc, s);
  const std::vector<int> none;
  CHECK(contact_jacobian(m, s, cs, none).rows() == 0);
  CHECK(contact_jacobian(m, s, cs, none).cols() == m.dof());
  CHECK(grasp_map(s, cs, none).rows() == 0);
  // swing finger 0 until it leaves the surface
  for (double d : {0.3, -0.3, 0.6, -0.6}) {
    State t = s;
    t.q[0] += d;
    if (!detect_contacts(m, disc, t).at_finger(0).active) {
      s = t;
      break;
    }
  }
  cs = detect_contacts(m, disc, s);
  REQUIRE_FALSE(cs.at_finger(0).active);
  const std::vector<int> zero{0};
  CHECK_THROWS_AS(contact_jacobian(m, s, cs, zero), PreconditionError);
}

TEST_CASE("grasp map wrench examples") {
  State s;
  s.q = Eigen::VectorXd::Zero(2);
  ContactSet cs = make_contacts({Vec2(1, 0)}, {Vec2(-1, 0)});
  const std::vector<int> only{0};
  const Eigen::MatrixXd g = grasp_map(s, cs, only);
  const Eigen::Vector3d w = g.transpose() * Eigen::Vector2d(0, 1);
  CHECK(w[0] == 0.0);
  CHECK(w[1] == 1.0);
  CHECK(w[2] == 1.0);

  cs = make_contacts({Vec2(0, 0)}, {Vec2(-1, 0)});
  const Eigen::Vector3d w0 = grasp_map(s, cs, only).transpose() * Eigen::Vector2d(0.3, -2.0);
  CHECK(w0[2] == 0.0);
}

TEST_CASE("grasp map transpose equals summed contact wrenches") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const int k = 1 + trial % 4;
    State s;
    s.q = Eigen::VectorXd::Zero(2 * k);
    s.p = Eigen::Vector3d(u(rng), u(rng), u(rng));
    std::vector<Vec2> pts, nrm;
    for (int i = 0; i < k; ++i) {
      pts.emplace_back(u(rng), u(rng));
      nrm.emplace_back(u(rng), u(rng));
    }
    const ContactSet cs = make_contacts(pts, nrm);
    const auto ids = all_of(cs);
    const Eigen::MatrixXd g = grasp_map(s, cs, ids);
    Eigen::VectorXd f(2 * k);
    Eigen::Vector3d expect = Eigen::Vector3d::Zero();
    for (int i = 0; i < k; ++i) {
      const Vec2 fi(u(rng), u(rng));
      f.segment(2 * i, 2) = fi;
      const Vec2 r = pts[i] - s.p.head<2>();
      expect += Eigen::Vector3d(fi.x(), fi.y(), r.x() * fi.y() - r.y() * fi.x());
    }
    CHECK(((g.transpose() * f) - expect).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("constraint matrix assembly and co-motion") {
  const HandModel m = reference_hand();
  const ObjectShape disc = reference_object("disc");
  const State s = canonical_grasp(m, disc);
  const ContactSet cs = detect_contacts(m, disc, s);
  const auto ids = all_of(cs);
  const Eigen::MatrixXd n = constraint_matrix(m, s, cs, ids);
  const Eigen::MatrixXd j = contact_jacobian(m, s, cs, ids);
  const Eigen::MatrixXd g = grasp_map(s, cs, ids);
  REQUIRE(n.cols() == m.dof() + 3);
  CHECK(n.leftCols(m.dof()) == j);
  CHECK(n.rightCols(3) == -g);

  // translate object and finger 0 together
  const std::vector<int> one{0};
  const Eigen::MatrixXd n1 = constraint_matrix(m, s, cs, one);
  const Vec2 v(1e-4, -2e-4);
  const Eigen::Matrix2d j0 = contact_jacobian(m, s, cs, one).block(0, 0, 2, 2);
  Eigen::VectorXd dx = Eigen::VectorXd::Zero(m.dof() + 3);
  dx.segment(0, 2) = j0.inverse() * v;
  dx.segment(m.dof(), 2) = v;
  CHECK((n1 * dx).norm() < 1e-9);

  // finger 0 pushes along its normal, object still
  const Vec2 push = cs.at_finger(0).normal * 1e-4;
  dx.setZero();
  dx.segment(0, 2) = j0.inverse() * push;
  CHECK((n1 * dx).norm() > 1e-5);
}

TEST_CASE("invalid hand and shape definitions") {
  FingerSpec f;
  f.links = {0.0, 0.1};
  CHECK_THROWS_AS(HandModel({f}, 0.01), ConfigError);
  f.links = {0.1, 0.1};
  f.lower = {1.0, 0.0};
  f.upper = {0.5, 1.0};
  CHECK_THROWS_AS(HandModel({f}, 0.01), ConfigError);
  CHECK_THROWS_AS(ObjectShape::disc(0.0, ShapeCategory::kEasy), ConfigError);
  CHECK_THROWS_AS(ObjectShape::polygon({{0, 0}, {1, 1}, {1, 0}, {0, 1}}, ShapeCategory::kEasy), ConfigError);
  CHECK_THROWS_AS(reference_object("teapot"), ConfigError);
}

#include "dexplore/dynamics.hpp"

#include <algorithm>
#include <cmath>

#include "dexplore/errors.hpp"
#include "dexplore/io.hpp"

namespace dexplore {

void SimConfig::validate() const {
  if (!(dt > 0.0)) throw ConfigError("sim dt must be positive");
  if (!(contact_stiffness > 0.0)) throw ConfigError("contact stiffness must be positive");
  if (!(tangential_stiffness > 0.0)) throw ConfigError("tangential stiffness must be positive");
  if (!(servo_gain > 0.0) || !(max_torque > 0.0) || !(joint_damping > 0.0)) {
    throw ConfigError("servo gain, torque limit and joint damping must be positive");
  }
  if (!(velocity_limit > 0.0)) throw ConfigError("velocity limit must be positive");
  if (!(object_mass > 0.0)) throw ConfigError("object mass must be positive");
  if (friction < 0.0 || contact_damping < 0.0 || tangential_damping < 0.0) {
    throw ConfigError("friction and damping must be non-negative");
  }
  if (control_steps < 1) throw ConfigError("control steps must be >= 1");
  const double ratio = rollout_duration / dt;
  if (!(rollout_duration > 0.0) || std::abs(ratio - std::round(ratio)) > 1e-9) {
    throw ConfigError("rollout duration must be a positive integer multiple of dt");
  }
}

int SimConfig::rollout_steps() const {
  return static_cast<int>(std::lround(rollout_duration / dt));
}

SimState SimState::at_rest(const State& s, const Eigen::VectorXd& setpoints) {
  SimState out;
  out.state = s;
  out.setpoints = setpoints;
  out.joint_velocity = Eigen::VectorXd::Zero(s.q.size());
  out.slip = Eigen::VectorXd::Zero(s.q.size() / HandModel::kJointsPerFinger);
  return out;
}

bool SimState::operator==(const SimState& o) const {
  return state == o.state && velocity == o.velocity && setpoints == o.setpoints &&
         joint_velocity == o.joint_velocity && slip == o.slip;
}

int StepInfo::contact_count() const {
  return static_cast<int>(std::count(in_contact.begin(), in_contact.end(), true));
}

std::string format_sim_state(const SimState& s) {
  std::string out;
  append_vector(out, s.state.q);
  append_vector(out, s.state.p);
  append_vector(out, s.velocity);
  append_vector(out, s.setpoints);
  append_vector(out, s.joint_velocity);
  append_vector(out, s.slip);
  return out;
}

SimState parse_sim_state(const std::string& line, int dof, int fingers) {
  const auto tokens = split_ws(line);
  if (tokens.size() != static_cast<size_t>(3 * dof + 6 + fingers)) {
    throw ContractError("sim state record has " + std::to_string(tokens.size()) + " fields");
  }
  size_t pos = 0;
  SimState s;
  s.state.q = take_vector(tokens, pos, dof);
  s.state.p = take_vector(tokens, pos, 3);
  s.velocity = take_vector(tokens, pos, 3);
  s.setpoints = take_vector(tokens, pos, dof);
  s.joint_velocity = take_vector(tokens, pos, dof);
  s.slip = take_vector(tokens, pos, fingers);
  return s;
}

// ---------------------------------------------------------------------------

Simulator::Simulator(std::shared_ptr<const HandModel> model,
                     std::shared_ptr<const ObjectShape> shape, SimConfig config)
    : model_(std::move(model)), shape_(std::move(shape)), config_(config) {
  config_.validate();
  lower_ = model_->lower_limits();
  upper_ = model_->upper_limits();
  inertia_ = config_.object_inertia > 0.0 ? config_.object_inertia
                                          : config_.object_mass * shape_->unit_inertia();
}

namespace {

inline Vec2 perp(const Vec2& v) { return {-v.y(), v.x()}; }

bool all_finite(const SimState& s, const Action& a) {
  return s.state.q.allFinite() && s.state.p.allFinite() && s.velocity.allFinite() &&
         s.setpoints.allFinite() && s.joint_velocity.allFinite() && s.slip.allFinite() &&
         a.allFinite();
}

struct FingerContact {
  bool touching = false;
  Vec2 point;
  Vec2 normal;   // force direction on the object
  Vec2 tangent;  // perp(normal)
  Eigen::Matrix2d jac;
  bool sticking = true;
};

}  // namespace

SimState Simulator::step(const SimState& s, const Action& action, StepInfo* info) const {
  return advance(s, action, 1, info);
}

SimState Simulator::advance(const SimState& start, const Action& action, int steps,
                            StepInfo* info) const {
  const HandModel& model = *model_;
  const int m = model.num_fingers();
  const int d = model.dof();
  if (start.state.q.size() != d || start.setpoints.size() != d ||
      start.joint_velocity.size() != d || start.slip.size() != m || action.size() != d) {
    throw ContractError("simulator step: dimension mismatch");
  }
  if (!all_finite(start, action)) throw ContractError("simulator step: non-finite input");
  SimState s = start;
  s.setpoints = action.cwiseMax(lower_).cwiseMin(upper_);
  integrate(s, steps, info, false);
  return s;
}

bool Simulator::integrate(SimState& s, int steps, StepInfo* info, bool stop_on_drop) const {
  const HandModel& model = *model_;
  const int m = model.num_fingers();
  const SimConfig& c = config_;
  const Eigen::VectorXd& lo = lower_;
  const Eigen::VectorXd& hi = upper_;
  bool fell = false;

  std::vector<FingerContact> fc(m);
  std::vector<Vec2> forces(m);
  const double tip_r = model.tip_radius();

  for (int step = 0; step < steps; ++step) {
    Eigen::VectorXd& q = s.state.q;
    Eigen::Vector3d& p = s.state.p;
    const Vec2 center = p.head<2>();
    const double ct = std::cos(p.z()), st = std::sin(p.z());
    Vec2 net_force(0.0, -c.gravity * c.object_mass);
    double net_torque = 0.0;

    for (int i = 0; i < m; ++i) {
      const FingerSpec& f = model.finger(i);
      const double a1 = f.base_angle + q(2 * i);
      const double a2 = a1 + q(2 * i + 1);
      const Vec2 elbow = f.base + f.links[0] * Vec2(std::cos(a1), std::sin(a1));
      const Vec2 tip = elbow + f.links[1] * Vec2(std::cos(a2), std::sin(a2));
      const Vec2 rel = tip - center;
      const Vec2 local(ct * rel.x() + st * rel.y(), -st * rel.x() + ct * rel.y());
      const SurfaceQuery sq = shape_->query(local);
      const double gap = sq.signed_distance - tip_r;
      FingerContact& k = fc[i];
      forces[i] = Vec2::Zero();
      if (gap >= 0.0) {
        k.touching = false;
        s.slip(i) = 0.0;
        continue;
      }
      k.touching = true;
      const Vec2 outward(ct * sq.outward.x() - st * sq.outward.y(),
                         st * sq.outward.x() + ct * sq.outward.y());
      k.normal = -outward;
      k.tangent = perp(k.normal);
      k.point = center + Vec2(ct * sq.point.x() - st * sq.point.y(),
                              st * sq.point.x() + ct * sq.point.y());
      k.jac.col(0) = perp(k.point - f.base);
      k.jac.col(1) = perp(k.point - elbow);
      const Vec2 lever = k.point - center;
      const Vec2 v_obj = s.velocity.head<2>() + s.velocity.z() * perp(lever);
      const Vec2 v_finger = k.jac * s.joint_velocity.segment<2>(2 * i);
      const Vec2 v_rel = v_finger - v_obj;
      const double vn = v_rel.dot(k.normal);
      const double vt = v_rel.dot(k.tangent);
      const double fn = std::max(0.0, c.contact_stiffness * (-gap) + c.contact_damping * vn);
      s.slip(i) += vt * c.dt;
      double ft = c.tangential_stiffness * s.slip(i) + c.tangential_damping * vt;
      const double cap = c.friction * fn;
      k.sticking = std::abs(ft) <= cap;
      if (!k.sticking) {
        ft = std::copysign(cap, ft);
        s.slip(i) = (ft - c.tangential_damping * vt) / c.tangential_stiffness;
      }
      forces[i] = fn * k.normal + ft * k.tangent;
      net_force += forces[i];
      net_torque += lever.x() * forces[i].y() - lever.y() * forces[i].x();
    }

    // Object: symplectic Euler.
    s.velocity.head<2>() += c.dt * net_force / c.object_mass;
    s.velocity.z() += c.dt * net_torque / inertia_;
    p += c.dt * s.velocity;

    // Fingers: massless, joint velocity from servo/contact balance with the
    // contact stiffness treated implicitly.
    for (int i = 0; i < m; ++i) {
      Eigen::Vector2d tau;
      for (int j = 0; j < 2; ++j) {
        const int idx = 2 * i + j;
        tau(j) = std::clamp(c.servo_gain * (s.setpoints(idx) - q(idx)), -c.max_torque,
                            c.max_torque);
      }
      Eigen::Matrix2d a = c.joint_damping * Eigen::Matrix2d::Identity();
      if (fc[i].touching) {
        const FingerContact& k = fc[i];
        const Eigen::Vector2d qd_prev = s.joint_velocity.segment<2>(2 * i);
        const Eigen::RowVector2d jn = k.normal.transpose() * k.jac;
        const Eigen::RowVector2d jt = k.tangent.transpose() * k.jac;
        const double wn = c.contact_stiffness * c.dt + c.contact_damping;
        a += wn * jn.transpose() * jn;
        tau -= k.jac.transpose() * forces[i];
        tau += c.contact_damping * jn.transpose() * (jn * qd_prev);
        if (k.sticking) {
          const double wt = c.tangential_stiffness * c.dt + c.tangential_damping;
          a += wt * jt.transpose() * jt;
          tau += c.tangential_damping * jt.transpose() * (jt * qd_prev);
        }
      }
      Eigen::Vector2d qd = a.ldlt().solve(tau);
      for (int j = 0; j < 2; ++j) {
        const int idx = 2 * i + j;
        double v = std::clamp(qd(j), -c.velocity_limit, c.velocity_limit);
        double next = q(idx) + c.dt * v;
        if (next < lo(idx) || next > hi(idx)) {
          next = std::clamp(next, lo(idx), hi(idx));
          v = (next - q(idx)) / c.dt;
        }
        q(idx) = next;
        s.joint_velocity(idx) = v;
      }
    }
    if (stop_on_drop && dropped(s)) {
      fell = true;
      break;
    }
  }

  if (info) {
    info->forces = forces;
    info->in_contact.assign(m, false);
    for (int i = 0; i < m; ++i) info->in_contact[i] = forces[i].squaredNorm() > 0.0;
  }
  return fell;
}

bool Simulator::rollout_stability_check(const SimState& s) const {
  if (dropped(s)) return false;
  SimState cur = s;
  // Height is tested after every step; the first drop ends the check.
  return !integrate(cur, config_.rollout_steps(), nullptr, true);
}

StepInfo Simulator::apply(const Action& action, int steps) {
  StepInfo info;
  current_ = advance(current_, action, steps, &info);
  return info;
}

SimulatorFactory::SimulatorFactory(HandModel model, ObjectShape shape, SimConfig config)
    : model_(std::make_shared<const HandModel>(std::move(model))),
      shape_(std::make_shared<const ObjectShape>(std::move(shape))),
      config_(config) {
  config_.validate();
}

}  // namespace dexplore

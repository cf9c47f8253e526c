#include "dexplore/grasp.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "dexplore/errors.hpp"

namespace dexplore {

std::optional<State> tangent_grasp(const HandModel& model, const ObjectShape& shape,
                                   const Eigen::Vector3d& object_pose,
                                   const std::vector<std::optional<double>>& contact_angles,
                                   const Eigen::VectorXd& rest_q) {
  if (static_cast<int>(contact_angles.size()) != model.num_fingers() ||
      rest_q.size() != model.dof()) {
    throw ContractError("tangent_grasp: dimension mismatch");
  }
  State s;
  s.q = rest_q;
  s.p = object_pose;
  const double c = std::cos(object_pose.z()), sn = std::sin(object_pose.z());
  for (int i = 0; i < model.num_fingers(); ++i) {
    if (!contact_angles[i]) continue;
    const SurfaceQuery sq = shape.ray_boundary(*contact_angles[i]);
    const Vec2 local_tip = sq.point + model.tip_radius() * sq.outward;
    const Vec2 world_tip = object_pose.head<2>() +
                           Vec2(c * local_tip.x() - sn * local_tip.y(),
                                sn * local_tip.x() + c * local_tip.y());
    const auto ik = finger_ik(model, i, world_tip);
    if (!ik) return std::nullopt;
    s.q(2 * i) = (*ik)[0];
    s.q(2 * i + 1) = (*ik)[1];
  }
  return s;
}

State canonical_grasp(const HandModel& model, const ObjectShape& shape) {
  // Fingers contact the point facing their base; the object orientation is
  // the one (smallest |theta| on a 5 degree grid) with the lowest
  // internal-force residual.
  const Eigen::VectorXd rest = 0.5 * (model.lower_limits() + model.upper_limits());
  StabilityConfig stability;
  stability.torque_weight = shape.bounding_radius();
  std::optional<State> best;
  double best_norm = std::numeric_limits<double>::infinity();
  constexpr int kSteps = 72;
  for (int k = 0; k < kSteps; ++k) {
    const int signed_k = (k + 1) / 2 * (k % 2 == 1 ? 1 : -1);
    const double theta = signed_k * 2.0 * std::numbers::pi / kSteps;
    std::vector<std::optional<double>> angles;
    for (const auto& f : model.fingers()) {
      angles.emplace_back(std::atan2(f.base.y(), f.base.x()) - theta);
    }
    auto s = tangent_grasp(model, shape, Eigen::Vector3d(0.0, 0.0, theta), angles, rest);
    if (!s) continue;
    const ContactSet contacts = detect_contacts(model, shape, *s);
    if (contacts.count() < model.num_fingers()) continue;
    const double norm = assess_grasp(contacts, *s, stability).wrench_norm;
    if (norm < best_norm - 1e-9) {
      best_norm = norm;
      best = s;
    }
    if (shape.kind() == ObjectShape::Kind::kDisc) break;
  }
  if (!best) throw ConfigError("canonical grasp is out of reach for object '" + shape.name() + "'");
  return *best;
}

Eigen::VectorXd squeeze_setpoints(const HandModel& model, const State& state,
                                  const ContactSet& contacts, const StabilityConfig& stability,
                                  const SimConfig& sim, double grip_force) {
  Eigen::VectorXd qs = state.q;
  const std::vector<int> active = contacts.active_fingers();
  if (active.empty()) return qs;
  Eigen::VectorXd mags = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(active.size()));
  const StabilityResult r = assess_grasp(contacts, state, stability);
  if (r.stable && r.magnitudes.size() == mags.size()) mags = r.magnitudes;
  const double peak = mags.maxCoeff();
  if (peak <= 0.0) return qs;
  mags *= grip_force / peak;
  for (size_t k = 0; k < active.size(); ++k) {
    const int f = active[k];
    const ContactInfo& ci = contacts.at_finger(f);
    const Eigen::Matrix2d j = finger_point_jacobian(model, state.q, f, ci.point);
    const Eigen::Vector2d tau = j.transpose() * (mags(k) * ci.normal);
    qs.segment<2>(2 * f) += tau.cwiseMax(-sim.max_torque).cwiseMin(sim.max_torque) / sim.servo_gain;
  }
  return model.clamp(qs);
}

SimState complete_with_squeeze(const HandModel& model, const ObjectShape& shape,
                               const State& state, const StabilityConfig& stability,
                               const SimConfig& sim, double grip_force) {
  const ContactSet contacts = detect_contacts(model, shape, state);
  return SimState::at_rest(state,
                           squeeze_setpoints(model, state, contacts, stability, sim, grip_force));
}

SimState settled_root(const Simulator& sim, const StabilityConfig& stability, double settle_time) {
  const State grasp = canonical_grasp(sim.model(), sim.shape());
  SimState s = complete_with_squeeze(sim.model(), sim.shape(), grasp, stability, sim.config());
  const int steps = static_cast<int>(std::lround(settle_time / sim.config().dt));
  s = sim.advance(s, s.setpoints, steps);
  return SimState::at_rest(s.state, s.setpoints);
}

}  // namespace dexplore

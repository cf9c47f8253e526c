#pragma once

#include <optional>
#include <random>
#include <vector>

#include "dexplore/dynamics.hpp"
#include "dexplore/hand_model.hpp"
#include "dexplore/stability.hpp"

namespace dexplore {

/// Places fingertips tangent to the object. `contact_angles[i]` is the
/// object-frame direction (from the object origin) of finger i's contact, or
/// nullopt to leave the finger at `rest_q`'s joints. Returns nullopt when a
/// requested contact is out of reach.
std::optional<State> tangent_grasp(const HandModel& model, const ObjectShape& shape,
                                   const Eigen::Vector3d& object_pose,
                                   const std::vector<std::optional<double>>& contact_angles,
                                   const Eigen::VectorXd& rest_q);

/// All fingers tangent to the object at the point facing their base, object
/// centred at the origin. Theta is the smallest-|theta| angle on a 5 degree
/// grid with the lowest internal-force residual.
State canonical_grasp(const HandModel& model, const ObjectShape& shape);

/// Setpoints producing the internal-force solution of the stability QP with
/// the largest contact force equal to `grip_force` (N). Inactive fingers keep
/// setpoints equal to their joints. Falls back to equal magnitudes when the
/// grasp is not stable.
Eigen::VectorXd squeeze_setpoints(const HandModel& model, const State& state,
                                  const ContactSet& contacts, const StabilityConfig& stability,
                                  const SimConfig& sim, double grip_force);

inline constexpr double kDefaultGripForce = 2.0;

/// Planner state -> simulator state at rest with squeeze setpoints.
SimState complete_with_squeeze(const HandModel& model, const ObjectShape& shape,
                               const State& state, const StabilityConfig& stability,
                               const SimConfig& sim, double grip_force = kDefaultGripForce);

/// Canonical grasp completed with squeeze setpoints and settled for
/// `settle_time` seconds with those setpoints held, velocities then zeroed.
SimState settled_root(const Simulator& sim, const StabilityConfig& stability,
                      double settle_time = 0.5);

}  // namespace dexplore

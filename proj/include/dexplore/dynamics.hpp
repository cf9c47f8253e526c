#pragma once

#include <Eigen/Dense>

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "dexplore/hand_model.hpp"

namespace dexplore {

/// Quasi-dynamic planar hand/object simulator.
///
/// Links are massless: each finger's joint velocity solves the servo/contact
/// torque balance (linearly implicit in the contact stiffness), capped at the
/// velocity limit. Only the object has inertia. Contacts are fingertip discs
/// against the object boundary with a penalty normal force and a tangential
/// spring-damper capped by Coulomb friction. Integration is symplectic Euler.
struct SimConfig {
  double dt = 0.002;
  double servo_gain = 20.0;         // N m / rad
  double max_torque = 1.0;          // N m; servo saturates for errors > max_torque / servo_gain
  double joint_damping = 0.04;      // N m s / rad
  double velocity_limit = 1.0;      // rad / s
  double contact_stiffness = 5000.0;     // N / m
  double contact_damping = 10.0;         // N s / m
  double tangential_stiffness = 2000.0;  // N / m
  double tangential_damping = 2.0;       // N s / m
  double friction = 0.8;
  double gravity = 9.81;          // along -y
  double object_mass = 0.1;       // kg
  double object_inertia = 0.0;    // kg m^2; <= 0 means derive from the shape
  double drop_height = -0.1;      // object centre y below this counts as dropped
  double rollout_duration = 1.0;  // s
  int control_steps = 50;         // simulator steps per control action (100 ms)

  void validate() const;
  int rollout_steps() const;
};

using Action = Eigen::VectorXd;  // joint setpoints, rad

struct SimState {
  State state;
  Eigen::Vector3d velocity = Eigen::Vector3d::Zero();  // (xdot, ydot, thetadot)
  Eigen::VectorXd setpoints;
  Eigen::VectorXd joint_velocity;
  Eigen::VectorXd slip;  // per-finger tangential spring extension, m

  /// Zero velocities and slip, setpoints as given. Used to complete planner
  /// states into simulator states.
  static SimState at_rest(const State& s, const Eigen::VectorXd& setpoints);

  bool operator==(const SimState& o) const;
};

struct StepInfo {
  std::vector<Vec2> forces;        // force exerted by finger i on the object, N
  std::vector<bool> in_contact;    // force magnitude > 0
  int contact_count() const;
};

/// Serialise/parse a SimState as one whitespace-separated record of
/// shortest-round-trip doubles. Layout: q, p, velocity, setpoints,
/// joint_velocity, slip.
std::string format_sim_state(const SimState& s);
SimState parse_sim_state(const std::string& line, int dof, int fingers);

class Simulator {
 public:
  Simulator(std::shared_ptr<const HandModel> model, std::shared_ptr<const ObjectShape> shape,
            SimConfig config);

  const HandModel& model() const { return *model_; }
  const ObjectShape& shape() const { return *shape_; }
  const SimConfig& config() const { return config_; }
  double object_inertia() const { return inertia_; }

  /// One dt step. Pure function of its inputs.
  SimState step(const SimState& s, const Action& action, StepInfo* info = nullptr) const;

  /// Holds `action` for `steps` steps; info reports the last step.
  SimState advance(const SimState& s, const Action& action, int steps,
                   StepInfo* info = nullptr) const;

  /// Holds the current setpoints for rollout_duration and reports whether the
  /// object stays above the drop height throughout.
  bool rollout_stability_check(const SimState& s) const;

  bool dropped(const SimState& s) const { return s.state.p.y() < config_.drop_height; }

  // Owned-state interface used by environments.
  void reset(const SimState& s) { current_ = s; }
  const SimState& current() const { return current_; }
  StepInfo apply(const Action& action, int steps);

  SimState snapshot() const { return current_; }
  void restore(const SimState& snap) { current_ = snap; }

 private:
  // Steps `s` in place with its current setpoints; returns true if the object
  // dropped (only checked when stop_on_drop).
  bool integrate(SimState& s, int steps, StepInfo* info, bool stop_on_drop) const;

  std::shared_ptr<const HandModel> model_;
  std::shared_ptr<const ObjectShape> shape_;
  SimConfig config_;
  double inertia_;
  Eigen::VectorXd lower_, upper_;
  SimState current_;
};

/// Produces independent simulator instances sharing immutable model data.
class SimulatorFactory {
 public:
  SimulatorFactory(HandModel model, ObjectShape shape, SimConfig config);
  Simulator make() const { return Simulator(model_, shape_, config_); }
  const HandModel& model() const { return *model_; }
  const ObjectShape& shape() const { return *shape_; }
  const SimConfig& config() const { return config_; }

 private:
  std::shared_ptr<const HandModel> model_;
  std::shared_ptr<const ObjectShape> shape_;
  SimConfig config_;
};

}  // namespace dexplore

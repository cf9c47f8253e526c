#pragma once

#include <Eigen/Dense>

#include <vector>

#include "dexplore/hand_model.hpp"

namespace dexplore {

struct StabilityConfig {
  double epsilon = 0.2;        // stable iff min ||w|| < epsilon
  double torque_weight = 0.035;  // metres; ||w||^2 = fx^2 + fy^2 + (tau / torque_weight)^2
  double solver_tolerance = 1e-10;
  int max_iterations = 10000;

  void validate() const;
};

struct StabilityResult {
  double wrench_norm = 0.0;
  Eigen::VectorXd magnitudes;  // c_1..c_k, in the order of the active contacts
  int pinned = 0;              // index into magnitudes with c = 1
  bool stable = false;
};

/// Columns are the unit-magnitude wrenches of each active contact's normal
/// force, torque row already divided by the torque weight. `grasp` is the
/// grasp map for the active contacts in ContactSet order.
Eigen::Matrix3Xd normal_wrench_basis(const ContactSet& contacts, const Eigen::MatrixXd& grasp,
                                     double torque_weight);

/// min over pinned j of  min_{c >= 0, c_j = 1} ||G^T (c_1 n_1, ..., c_k n_k)||.
/// Throws PreconditionError when no contact is active.
StabilityResult internal_force_qp(const ContactSet& contacts, const Eigen::MatrixXd& grasp,
                                  const StabilityConfig& config);

/// Single pinned-index solve on a prepared basis; exposed for tests.
double solve_pinned_qp(const Eigen::Matrix3Xd& basis, int pinned, const StabilityConfig& config,
                       Eigen::VectorXd* magnitudes = nullptr);

/// Exhaustive grid minimum of ||w|| with c_pinned = 1 and the other
/// magnitudes on {0, step, ..., cap}. Limited to k <= 4.
double qp_bruteforce_oracle(const ContactSet& contacts, const Eigen::MatrixXd& grasp, int pinned,
                            double step, double cap, double torque_weight);

bool is_stable(const ContactSet& contacts, const Eigen::MatrixXd& grasp,
               const StabilityConfig& config);

/// Planner-level predicate: at least `min_contacts` active contacts and the
/// internal-force test passes on all of them.
bool grasp_is_stable(const ContactSet& contacts, const State& state,
                     const StabilityConfig& config, int min_contacts = 3);

/// Same as above but returns the full result (nullopt-like: stable=false,
/// empty magnitudes when the contact count is too low).
StabilityResult assess_grasp(const ContactSet& contacts, const State& state,
                             const StabilityConfig& config);

}  // namespace dexplore

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "dexplore/dynamics.hpp"
#include "dexplore/hand_model.hpp"
#include "dexplore/stability.hpp"
#include "dexplore/tree.hpp"

namespace dexplore {

/// Per-dimension sampling intervals. Theta is not bounded here: it is drawn
/// from a window centred on the root angle whose half-width grows with the
/// tree (see PlannerConfig::theta_window).
struct SamplingBounds {
  Eigen::VectorXd q_lower, q_upper;
  Vec2 xy_lower{-0.02, -0.02};
  Vec2 xy_upper{0.02, 0.02};
};

enum class Execution { kSerial, kParallel };

struct PlannerConfig {
  int max_nodes = 1000;
  int max_iterations = 0;  // 0: 50 * max_nodes
  int k_max = 64;
  double alpha = 0.05;
  double resnap_threshold = 0.005;
  double contact_tolerance = kDefaultContactTolerance;
  double action_delta = 0.15;  // G-RRT setpoint perturbation half-width, rad
  int min_contacts = 3;
  int coverage_every = 100;
  DistanceWeights weights;
  std::uint64_t seed = 1;
  Execution execution = Execution::kParallel;

  void validate() const;
  int iteration_cap() const { return max_iterations > 0 ? max_iterations : 50 * max_nodes; }
  /// Half-width of the theta sampling window for a tree of `nodes` nodes.
  double theta_window(int nodes) const;
};

SamplingBounds default_bounds(const HandModel& model);

/// Uniform per-dimension sample; theta uniform in [theta_center - half, theta_center + half].
State sample_state(const SamplingBounds& bounds, double theta_center, double theta_half_width,
                   std::mt19937_64& rng);

/// I - N^+ N through the SVD of N (singular values below 1e-8 * sigma_max
/// treated as zero).
Eigen::MatrixXd null_space_projector(const Eigen::MatrixXd& n);

/// x_node + alpha * P delta_des with joints clamped, P the null-space
/// projector of N_S at x_node.
State project_extension(const HandModel& model, const State& x_node, const ContactSet& contacts,
                        const Eigen::VectorXd& delta_des, std::span<const int> subset,
                        double alpha);

struct ResnapReport {
  State state;
  std::vector<int> moved;   // fingers brought into contact
  std::vector<int> failed;  // fingers whose IK did not converge (left unmodified)
};

/// Brings any fingertip whose surface gap g satisfies tolerance < |g| <= threshold
/// back onto the surface with damped least-squares steps on that finger's
/// joints only. Object pose unchanged.
ResnapReport resnap_contacts(const HandModel& model, const ObjectShape& shape, const State& state,
                             double threshold, double tolerance = kDefaultContactTolerance);

struct CoveragePoint {
  int iteration = 0;
  int nodes = 0;
  double max_rotation = 0.0;
};

struct PlanResult {
  ExplorationTree tree;
  std::vector<CoveragePoint> coverage;
  int iterations = 0;
};

/// Constraint-projection RRT; never calls the simulator.
PlanResult grow_mrrt(const State& root, const PlannerConfig& config, const HandModel& model,
                     const ObjectShape& shape, const StabilityConfig& stability);

struct ExtendResult {
  SimState state;  // completed: at rest, setpoints = action
  Action action;
  double distance = 0.0;
  int candidate = 0;  // index k of the winning action sample
};

/// Action k of the extension at (seed, iteration): setpoints = q_node + U(-delta, delta).
Action sample_action(const HandModel& model, const Eigen::VectorXd& q_node, double delta,
                     std::uint64_t seed, int iteration, int k);

/// Tries K random actions from `node`'s snapshot and keeps the stable outcome
/// closest to x_sample. Serial execution is the literal loop (simulate, test
/// stability, compare distance, per candidate); parallel execution simulates
/// all candidates concurrently and tests stability in order of distance,
/// which selects the same candidate.
std::optional<ExtendResult> grrt_extend(const SimState& node, const State& x_sample, int k_max,
                                        const SimulatorFactory& factory,
                                        const PlannerConfig& config, int iteration);

/// Rollout check plus the minimum contact count at the state itself.
bool grrt_stable(const Simulator& sim, const SimState& s, int min_contacts,
                 double tolerance = kDefaultContactTolerance);

PlanResult grow_grrt(const SimState& root, const PlannerConfig& config,
                     const SimulatorFactory& factory);

}  // namespace dexplore

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dexplore/dynamics.hpp"
#include "dexplore/planners.hpp"
#include "dexplore/stability.hpp"
#include "dexplore/tree.hpp"

namespace dexplore {

/// |theta(leaf) - theta(root)| along the unique root path.
double path_rotation(const ExplorationTree& tree, int leaf);

/// Root-first paths to the k leaves of largest path rotation, best first.
/// Ties go to the lower leaf id. Fewer leaves than k returns them all.
std::vector<std::vector<int>> top_k_paths(const ExplorationTree& tree, int k);

struct ResetConfig {
  int top_k = 10;
  int cap = 2000;
  int min_contacts = 3;
  double contact_tolerance = kDefaultContactTolerance;
  double grip_force = 2.0;  // squeeze used to complete M-RRT nodes, N
  Execution execution = Execution::kParallel;

  void validate() const;
};

struct ResetSet {
  std::vector<SimState> states;
  std::vector<int> node_ids;     // tree node behind each state
  std::vector<int> path_leaves;  // leaves of the selected paths, best first
  std::string tree_hash;
  std::string object;
  std::string hand = "reference";
  std::string config_hash;
  int cap = 0;
  int top_k = 0;

  int size() const { return static_cast<int>(states.size()); }
  const SimState& draw(std::mt19937_64& rng) const;
};

/// Per-state keep flags: at least `min_contacts` contacts and a passed
/// rollout check. Serial and parallel execution give identical flags.
std::vector<char> stability_filter(const std::vector<SimState>& states,
                                   const SimulatorFactory& factory, int min_contacts,
                                   double tolerance, Execution execution);

/// Union of the top-k path nodes (path order, root first, first occurrence
/// kept), truncated to the cap. M-RRT nodes are completed with squeeze
/// setpoints and filtered; G-RRT nodes already passed the check when they
/// were inserted and are taken from their stored snapshots.
ResetSet build_reset_set(const ExplorationTree& tree, const ResetConfig& config,
                         const SimulatorFactory& factory, const StabilityConfig& stability,
                         const std::string& tree_hash = "");

std::string format_reset_set(const ResetSet& set);
ResetSet parse_reset_set(const std::string& text);
void save_reset_set(const std::string& path, const ResetSet& set);
/// With `verify`, every state is rollout-checked and a failure throws.
ResetSet load_reset_set(const std::string& path, const SimulatorFactory* verify = nullptr);

}  // namespace dexplore

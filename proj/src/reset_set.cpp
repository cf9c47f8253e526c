#include "dexplore/reset_set.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "dexplore/errors.hpp"
#include "dexplore/grasp.hpp"
#include "dexplore/io.hpp"

namespace dexplore {

double path_rotation(const ExplorationTree& tree, int leaf) {
  if (leaf < 0 || leaf >= tree.size()) throw ContractError("unknown node id " + std::to_string(leaf));
  return std::abs(tree.node(leaf).state.p.z() - tree.node(0).state.p.z());
}

std::vector<std::vector<int>> top_k_paths(const ExplorationTree& tree, int k) {
  if (tree.size() == 0) throw PreconditionError("top_k_paths on an empty tree");
  if (k < 1) throw ContractError("top_k_paths: k must be >= 1");
  std::vector<int> leaves = tree.leaves();
  std::vector<double> rot(tree.size(), 0.0);
  for (int l : leaves) rot[l] = path_rotation(tree, l);
  std::sort(leaves.begin(), leaves.end(), [&](int a, int b) {
    return rot[a] > rot[b] || (rot[a] == rot[b] && a < b);
  });
  if (static_cast<int>(leaves.size()) < k) {
    log_info("top_k_paths: tree has " + std::to_string(leaves.size()) + " leaves, fewer than k = " +
             std::to_string(k));
  } else {
    leaves.resize(k);
  }
  std::vector<std::vector<int>> paths;
  for (int l : leaves) paths.push_back(tree.path_to_root(l));
  return paths;
}

void ResetConfig::validate() const {
  if (top_k < 1) throw ConfigError("reset top_k must be >= 1");
  if (cap < 1) throw ConfigError("reset cap must be >= 1");
  if (min_contacts < 0) throw ConfigError("reset min_contacts must be >= 0");
  if (!(grip_force > 0.0)) throw ConfigError("reset grip force must be positive");
}

const SimState& ResetSet::draw(std::mt19937_64& rng) const {
  if (states.empty()) throw PreconditionError("draw from an empty reset set");
  std::uniform_int_distribution<int> pick(0, size() - 1);
  return states[pick(rng)];
}

std::vector<char> stability_filter(const std::vector<SimState>& states,
                                   const SimulatorFactory& factory, int min_contacts,
                                   double tolerance, Execution execution) {
  const int n = static_cast<int>(states.size());
  std::vector<char> keep(n, 0);
  if (execution == Execution::kSerial) {
    const Simulator sim = factory.make();
    for (int i = 0; i < n; ++i) keep[i] = grrt_stable(sim, states[i], min_contacts, tolerance);
    return keep;
  }
#pragma omp parallel
  {
    const Simulator sim = factory.make();
#pragma omp for schedule(dynamic, 4)
    for (int i = 0; i < n; ++i) keep[i] = grrt_stable(sim, states[i], min_contacts, tolerance);
  }
  return keep;
}

ResetSet build_reset_set(const ExplorationTree& tree, const ResetConfig& config,
                         const SimulatorFactory& factory, const StabilityConfig& stability,
                         const std::string& tree_hash) {
  config.validate();
  ResetSet set;
  set.tree_hash = tree_hash;
  set.object = factory.shape().name();
  set.cap = config.cap;
  set.top_k = config.top_k;

  const auto paths = top_k_paths(tree, config.top_k);
  std::vector<int> ids;
  std::unordered_set<int> seen;
  for (const auto& path : paths) {
    set.path_leaves.push_back(path.back());
    for (int id : path) {
      if (static_cast<int>(ids.size()) >= config.cap) break;
      if (seen.insert(id).second) ids.push_back(id);
    }
  }

  if (tree.kind() == PlannerKind::kGRRT) {
    for (int id : ids) {
      const TreeNode& n = tree.node(id);
      if (!n.snapshot) throw PreconditionError("G-RRT node " + std::to_string(id) + " has no snapshot");
      set.states.push_back(*n.snapshot);
      set.node_ids.push_back(id);
    }
  } else {
    std::vector<SimState> candidates;
    candidates.reserve(ids.size());
    for (int id : ids) {
      candidates.push_back(complete_with_squeeze(factory.model(), factory.shape(),
                                                 tree.node(id).state, stability, factory.config(),
                                                 config.grip_force));
    }
    const auto keep = stability_filter(candidates, factory, config.min_contacts,
                                       config.contact_tolerance, config.execution);
    for (size_t i = 0; i < ids.size(); ++i) {
      if (!keep[i]) continue;
      set.states.push_back(std::move(candidates[i]));
      set.node_ids.push_back(ids[i]);
    }
    log_info("reset filter kept " + std::to_string(set.size()) + " of " +
             std::to_string(ids.size()) + " nodes");
  }
  if (set.states.empty()) throw RuntimeFailure("reset set is empty after stability filtering");
  return set;
}

// ---------------------------------------------------------------------------
// Serialisation

std::string format_reset_set(const ResetSet& set) {
  if (set.states.empty()) throw PreconditionError("cannot write an empty reset set");
  const int dof = static_cast<int>(set.states.front().state.q.size());
  const int fingers = static_cast<int>(set.states.front().slip.size());
  std::string out = "# dexplore-resets v1\n";
  out += "# hand " + set.hand + "\n";
  out += "# object " + set.object + "\n";
  out += "# dof " + std::to_string(dof) + "\n";
  out += "# fingers " + std::to_string(fingers) + "\n";
  out += "# tree_hash " + (set.tree_hash.empty() ? std::string("-") : set.tree_hash) + "\n";
  out += "# config_hash " + (set.config_hash.empty() ? std::string("-") : set.config_hash) + "\n";
  out += "# top_k " + std::to_string(set.top_k) + "\n";
  out += "# cap " + std::to_string(set.cap) + "\n";
  out += "# path_leaves";
  for (int l : set.path_leaves) out += " " + std::to_string(l);
  out += "\n# fields node q p velocity setpoints joint_velocity slip\n";
  for (size_t i = 0; i < set.states.size(); ++i) {
    out += std::to_string(set.node_ids[i]) + " " + format_sim_state(set.states[i]) + "\n";
  }
  return out;
}

ResetSet parse_reset_set(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  ResetSet set;
  int dof = -1, fingers = -1, line_no = 0;
  bool magic = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      if (line[0] == '#') {
        const auto tok = split_ws(std::string_view(line).substr(1));
        if (tok.empty()) continue;
        const std::string key(tok[0]);
        const std::string val = tok.size() > 1 ? std::string(tok[1]) : "";
        if (key == "dexplore-resets") magic = true;
        if (key == "hand") set.hand = val;
        if (key == "object") set.object = val;
        if (key == "dof") dof = std::stoi(val);
        if (key == "fingers") fingers = std::stoi(val);
        if (key == "tree_hash") set.tree_hash = val == "-" ? "" : val;
        if (key == "config_hash") set.config_hash = val == "-" ? "" : val;
        if (key == "top_k") set.top_k = std::stoi(val);
        if (key == "cap") set.cap = std::stoi(val);
        if (key == "path_leaves") {
          for (size_t i = 1; i < tok.size(); ++i) set.path_leaves.push_back(std::stoi(std::string(tok[i])));
        }
        continue;
      }
      if (!magic || dof < 0 || fingers < 0) throw ContractError("header missing before records");
      const size_t sp = line.find(' ');
      if (sp == std::string::npos) throw ContractError("record has no state");
      set.node_ids.push_back(std::stoi(line.substr(0, sp)));
      set.states.push_back(parse_sim_state(line.substr(sp + 1), dof, fingers));
    } catch (const std::exception& e) {
      throw ContractError("reset file line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (set.states.empty()) throw ContractError("reset file holds no states");
  return set;
}

void save_reset_set(const std::string& path, const ResetSet& set) {
  write_file(path, format_reset_set(set));
}

ResetSet load_reset_set(const std::string& path, const SimulatorFactory* verify) {
  ResetSet set = parse_reset_set(read_file(path));
  if (verify) {
    const Simulator sim = verify->make();
    for (size_t i = 0; i < set.states.size(); ++i) {
      if (!sim.rollout_stability_check(set.states[i])) {
        throw RuntimeFailure("reset state for node " + std::to_string(set.node_ids[i]) +
                             " fails the rollout check");
      }
    }
  }
  return set;
}

}  // namespace dexplore

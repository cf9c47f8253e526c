#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

#include "dexplore/dynamics.hpp"
#include "dexplore/hand_model.hpp"

namespace dexplore {

/// Per-coordinate weights of the planner metric.
struct DistanceWeights {
  double joint = 1.0;     // per joint radian
  double position = 5.0;  // per object metre
  double angle = 2.0;     // per object radian
};

/// Weighted coordinates e(x) with distance(x1, x2) = ||e(x1) - e(x2)||.
Eigen::VectorXd embed(const State& x, const DistanceWeights& w);
double distance(const State& a, const State& b, const DistanceWeights& w);

enum class PlannerKind { kMRRT, kGRRT };
std::string to_string(PlannerKind k);
PlannerKind planner_from_string(const std::string& s);

struct TreeNode {
  int id = 0;
  int parent = -1;
  State state;
  std::optional<Action> action;       // G-RRT only
  double rotation = 0.0;              // theta - theta_root, unwrapped
  std::optional<SimState> snapshot;   // G-RRT only
  double edge_residual = 0.0;         // M-RRT: ||N (x_child - x_parent)|| before re-snap
};

/// Exact nearest-neighbour index. Linear scan while small; beyond
/// `kLinearLimit` points a k-d tree covers a prefix of the points and the
/// recent tail is scanned linearly. Ties break toward the lowest id.
class NearestIndex {
 public:
  static constexpr int kLinearLimit = 10000;

  void add(const Eigen::VectorXd& point);
  int size() const { return static_cast<int>(points_.size()); }
  int nearest(const Eigen::VectorXd& query) const;
  int nearest_linear(const Eigen::VectorXd& query) const;
  bool has_kd() const { return indexed_ > 0; }

 private:
  struct KdNode {
    int point = -1;
    int axis = 0;
    int left = -1;
    int right = -1;
  };
  void rebuild();
  int build(std::vector<int>& ids, int begin, int end, int depth);
  void search(int node, const Eigen::VectorXd& q, double& best_d2, int& best) const;

  std::vector<Eigen::VectorXd> points_;
  std::vector<KdNode> kd_;
  int kd_root_ = -1;
  int indexed_ = 0;
};

class ExplorationTree {
 public:
  ExplorationTree(PlannerKind kind, DistanceWeights weights);

  PlannerKind kind() const { return kind_; }
  const DistanceWeights& weights() const { return weights_; }
  int size() const { return static_cast<int>(nodes_.size()); }
  const TreeNode& node(int id) const { return nodes_.at(id); }
  const std::vector<TreeNode>& nodes() const { return nodes_; }

  /// Appends a node; id and rotation are assigned here. Returns the id.
  int add(TreeNode node);
  void attach_snapshot(int id, SimState snapshot) { nodes_.at(id).snapshot = std::move(snapshot); }
  const TreeNode& nearest(const State& x) const;
  int nearest_linear(const State& x) const;

  double max_rotation() const { return max_rotation_; }
  std::vector<int> path_to_root(int id) const;  // root first
  std::vector<int> leaves() const;
  bool is_valid_forest() const;

  /// Setpoints of the root simulator state (G-RRT trees); empty otherwise.
  Eigen::VectorXd root_setpoints;

 private:
  PlannerKind kind_;
  DistanceWeights weights_;
  std::vector<TreeNode> nodes_;
  NearestIndex index_;
  double max_rotation_ = 0.0;
};

struct TreeFileMeta {
  std::string object;
  std::uint64_t seed = 0;
  std::string config_hash;
};

/// Line-oriented tree file. Header lines start with '#'; each record is
/// `id parent q[d] p[3] action[d]|- rotation` with shortest-round-trip doubles.
std::string format_tree(const ExplorationTree& tree, const TreeFileMeta& meta);
ExplorationTree parse_tree(const std::string& text, const DistanceWeights& weights,
                           TreeFileMeta* meta = nullptr);
void save_tree(const std::string& path, const ExplorationTree& tree, const TreeFileMeta& meta);
ExplorationTree load_tree(const std::string& path, const DistanceWeights& weights,
                          TreeFileMeta* meta = nullptr);

}  // namespace dexplore

#include "dexplore/tree.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "dexplore/errors.hpp"
#include "dexplore/io.hpp"

namespace dexplore {

Eigen::VectorXd embed(const State& x, const DistanceWeights& w) {
  Eigen::VectorXd e(x.q.size() + 3);
  e.head(x.q.size()) = w.joint * x.q;
  e(x.q.size()) = w.position * x.p.x();
  e(x.q.size() + 1) = w.position * x.p.y();
  e(x.q.size() + 2) = w.angle * x.p.z();
  return e;
}

double distance(const State& a, const State& b, const DistanceWeights& w) {
  if (a.q.size() != b.q.size()) throw ContractError("distance: dimension mismatch");
  return (embed(a, w) - embed(b, w)).norm();
}

std::string to_string(PlannerKind k) { return k == PlannerKind::kMRRT ? "mrrt" : "grrt"; }

PlannerKind planner_from_string(const std::string& s) {
  if (s == "mrrt") return PlannerKind::kMRRT;
  if (s == "grrt") return PlannerKind::kGRRT;
  throw ConfigError("unknown planner '" + s + "'");
}

// ---------------------------------------------------------------------------
// NearestIndex

void NearestIndex::add(const Eigen::VectorXd& point) {
  points_.push_back(point);
  const int n = size();
  if (n > kLinearLimit && n - indexed_ > std::max(1024, indexed_ / 4)) rebuild();
}

int NearestIndex::nearest_linear(const Eigen::VectorXd& q) const {
  int best = -1;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (int i = 0; i < size(); ++i) {
    const double d2 = (points_[i] - q).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best = i;
    }
  }
  return best;
}

int NearestIndex::nearest(const Eigen::VectorXd& q) const {
  if (points_.empty()) throw PreconditionError("nearest on an empty index");
  if (indexed_ == 0) return nearest_linear(q);
  int best = -1;
  double best_d2 = std::numeric_limits<double>::infinity();
  search(kd_root_, q, best_d2, best);
  for (int i = indexed_; i < size(); ++i) {
    const double d2 = (points_[i] - q).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best = i;
    }
  }
  return best;
}

void NearestIndex::rebuild() {
  indexed_ = size();
  kd_.clear();
  kd_.reserve(indexed_);
  std::vector<int> ids(indexed_);
  for (int i = 0; i < indexed_; ++i) ids[i] = i;
  kd_root_ = build(ids, 0, indexed_, 0);
}

int NearestIndex::build(std::vector<int>& ids, int begin, int end, int depth) {
  if (begin >= end) return -1;
  // Split on the axis of largest spread.
  const int dims = static_cast<int>(points_[ids[begin]].size());
  int axis = depth % dims;
  double spread = -1.0;
  for (int a = 0; a < dims; ++a) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (int i = begin; i < end; ++i) {
      lo = std::min(lo, points_[ids[i]](a));
      hi = std::max(hi, points_[ids[i]](a));
    }
    if (hi - lo > spread) {
      spread = hi - lo;
      axis = a;
    }
  }
  const int mid = (begin + end) / 2;
  std::nth_element(ids.begin() + begin, ids.begin() + mid, ids.begin() + end,
                   [&](int a, int b) {
                     const double va = points_[a](axis), vb = points_[b](axis);
                     return va < vb || (va == vb && a < b);
                   });
  const int node = static_cast<int>(kd_.size());
  kd_.push_back({ids[mid], axis, -1, -1});
  const int left = build(ids, begin, mid, depth + 1);
  const int right = build(ids, mid + 1, end, depth + 1);
  kd_[node].left = left;
  kd_[node].right = right;
  return node;
}

void NearestIndex::search(int node, const Eigen::VectorXd& q, double& best_d2, int& best) const {
  if (node < 0) return;
  const KdNode& n = kd_[node];
  const double d2 = (points_[n.point] - q).squaredNorm();
  if (d2 < best_d2 || (d2 == best_d2 && n.point < best)) {
    best_d2 = d2;
    best = n.point;
  }
  const double diff = q(n.axis) - points_[n.point](n.axis);
  const int near = diff < 0 ? n.left : n.right;
  const int far = diff < 0 ? n.right : n.left;
  search(near, q, best_d2, best);
  if (diff * diff <= best_d2) search(far, q, best_d2, best);
}

// ---------------------------------------------------------------------------
// ExplorationTree

ExplorationTree::ExplorationTree(PlannerKind kind, DistanceWeights weights)
    : kind_(kind), weights_(weights) {
  if (!(weights.joint > 0 && weights.position > 0 && weights.angle > 0)) {
    throw ConfigError("distance weights must be positive");
  }
}

int ExplorationTree::add(TreeNode node) {
  node.id = size();
  if (node.id == 0) {
    node.parent = -1;
    node.rotation = 0.0;
  } else {
    if (node.parent < 0 || node.parent >= node.id) throw ContractError("tree: invalid parent id");
    node.rotation = node.state.p.z() - nodes_.front().state.p.z();
  }
  max_rotation_ = std::max(max_rotation_, std::abs(node.rotation));
  index_.add(embed(node.state, weights_));
  nodes_.push_back(std::move(node));
  return nodes_.back().id;
}

const TreeNode& ExplorationTree::nearest(const State& x) const {
  return nodes_.at(index_.nearest(embed(x, weights_)));
}

int ExplorationTree::nearest_linear(const State& x) const {
  return index_.nearest_linear(embed(x, weights_));
}

std::vector<int> ExplorationTree::path_to_root(int id) const {
  if (id < 0 || id >= size()) throw ContractError("unknown node id " + std::to_string(id));
  std::vector<int> path;
  for (int cur = id; cur >= 0; cur = nodes_[cur].parent) path.push_back(cur);
  std::reverse(path.begin(), path.end());
  return path;
}

std::vector<int> ExplorationTree::leaves() const {
  std::vector<bool> has_child(nodes_.size(), false);
  for (const auto& n : nodes_) {
    if (n.parent >= 0) has_child[n.parent] = true;
  }
  std::vector<int> out;
  for (int i = 0; i < size(); ++i) {
    if (!has_child[i]) out.push_back(i);
  }
  return out;
}

bool ExplorationTree::is_valid_forest() const {
  if (nodes_.empty()) return false;
  for (int i = 0; i < size(); ++i) {
    const TreeNode& n = nodes_[i];
    if (n.id != i) return false;
    if (i == 0 && (n.parent != -1 || n.rotation != 0.0)) return false;
    if (i > 0 && (n.parent < 0 || n.parent >= i)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Serialisation

std::string format_tree(const ExplorationTree& tree, const TreeFileMeta& meta) {
  const int dof = tree.size() ? static_cast<int>(tree.node(0).state.q.size()) : 0;
  std::string out;
  out += "# dexplore-tree v1\n";
  out += "# planner " + to_string(tree.kind()) + "\n";
  out += "# dof " + std::to_string(dof) + "\n";
  out += "# object " + meta.object + "\n";
  out += "# seed " + std::to_string(meta.seed) + "\n";
  out += "# config_hash " + meta.config_hash + "\n";
  out += "# root_setpoints";
  if (tree.root_setpoints.size() == 0) {
    out += " -";
  } else {
    std::string v;
    append_vector(v, tree.root_setpoints);
    out += " " + v;
  }
  out += "\n# fields id parent q[dof] p[3] action[dof]|- rotation\n";
  for (const auto& n : tree.nodes()) {
    std::string line = std::to_string(n.id) + " " + std::to_string(n.parent);
    append_vector(line, n.state.q);
    append_vector(line, n.state.p);
    if (n.action) {
      append_vector(line, *n.action);
    } else {
      line += " -";
    }
    line += " " + format_double(n.rotation);
    out += line + "\n";
  }
  return out;
}

ExplorationTree parse_tree(const std::string& text, const DistanceWeights& weights,
                           TreeFileMeta* meta) {
  std::istringstream in(text);
  std::string line;
  std::optional<PlannerKind> kind;
  int dof = -1;
  TreeFileMeta m;
  Eigen::VectorXd root_setpoints;
  std::optional<ExplorationTree> tree;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto tok = split_ws(std::string_view(line).substr(1));
      if (tok.size() < 2) continue;
      const std::string key(tok[0]);
      if (key == "planner") kind = planner_from_string(std::string(tok[1]));
      if (key == "dof") dof = std::stoi(std::string(tok[1]));
      if (key == "object") m.object = std::string(tok[1]);
      if (key == "seed") m.seed = std::stoull(std::string(tok[1]));
      if (key == "config_hash") m.config_hash = std::string(tok[1]);
      if (key == "root_setpoints" && tok[1] != "-") {
        size_t pos = 1;
        root_setpoints = take_vector(tok, pos, static_cast<int>(tok.size()) - 1);
      }
      continue;
    }
    if (!kind || dof < 0) throw ContractError("tree file: header missing before records");
    if (!tree) tree.emplace(*kind, weights);
    const auto tok = split_ws(line);
    try {
      size_t pos = 0;
      TreeNode n;
      const int id = std::stoi(std::string(tok.at(pos++)));
      n.parent = std::stoi(std::string(tok.at(pos++)));
      n.state.q = take_vector(tok, pos, dof);
      n.state.p = take_vector(tok, pos, 3);
      if (tok.at(pos) == "-") {
        ++pos;
      } else {
        n.action = take_vector(tok, pos, dof);
      }
      const double rotation = parse_double(tok.at(pos++));
      if (pos != tok.size()) throw ContractError("trailing fields");
      if (id != tree->size()) throw ContractError("node ids must be consecutive");
      if (n.action) n.snapshot = SimState::at_rest(n.state, *n.action);
      const int assigned = tree->add(std::move(n));
      if (tree->node(assigned).rotation != rotation) {
        throw ContractError("stored rotation disagrees with states");
      }
    } catch (const std::exception& e) {
      throw ContractError("tree file line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!tree) throw ContractError("tree file has no nodes");
  tree->root_setpoints = root_setpoints;
  if (root_setpoints.size() > 0) {
    tree->attach_snapshot(0, SimState::at_rest(tree->node(0).state, root_setpoints));
  }
  if (meta) *meta = m;
  return std::move(*tree);
}

void save_tree(const std::string& path, const ExplorationTree& tree, const TreeFileMeta& meta) {
  write_file(path, format_tree(tree, meta));
}

ExplorationTree load_tree(const std::string& path, const DistanceWeights& weights,
                          TreeFileMeta* meta) {
  return parse_tree(read_file(path), weights, meta);
}

}  // namespace dexplore

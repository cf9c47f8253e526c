#include <doctest.h>

#include <algorithm>
#include <map>
#include <random>
#include <set>

#include "dexplore/errors.hpp"
#include "dexplore/planners.hpp"
#include "dexplore/reset_set.hpp"
#include "helpers.hpp"

using namespace testing;

namespace {

ExplorationTree random_tree(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ExplorationTree tree(PlannerKind::kMRRT, {});
  for (int i = 0; i < n; ++i) {
    TreeNode node;
    node.parent = i == 0 ? -1 : static_cast<int>(rng() % i);
    node.state.q = Eigen::VectorXd::Zero(2);
    node.state.p.z() = i == 0 ? 0.3 : tree.node(node.parent).state.p.z() + 0.5 * u(rng);
    // a few exact ties
    if (i % 7 == 0 && i > 0) node.state.p.z() = tree.node(node.parent).state.p.z();
    tree.add(node);
  }
  return tree;
}

ResetSet tiny_set(int n) {
  ResetSet set;
  for (int i = 0; i < n; ++i) {
    State s;
    s.q = Eigen::VectorXd::Constant(2, i);
    set.states.push_back(SimState::at_rest(s, s.q));
    set.node_ids.push_back(i);
  }
  return set;
}

}  // namespace

TEST_CASE("path rotation") {
  std::mt19937_64 rng(1);
  const ExplorationTree tree = random_tree(rng, 300);
  CHECK(path_rotation(tree, 0) == 0.0);
  for (int leaf : tree.leaves()) {
    CHECK(path_rotation(tree, leaf) == std::abs(tree.node(leaf).state.p.z() - tree.node(0).state.p.z()));
  }
  CHECK_THROWS(path_rotation(tree, 300));
}

TEST_CASE("top-k paths") {
  SUBCASE("single path") {
    ExplorationTree chain(PlannerKind::kMRRT, {});
    for (int i = 0; i < 5; ++i) {
      TreeNode n;
      n.parent = i - 1;
      n.state.q = Eigen::VectorXd::Zero(2);
      n.state.p.z() = 0.1 * i;
      chain.add(n);
    }
    const auto paths = top_k_paths(chain, 10);
    REQUIRE(paths.size() == 1);
    CHECK(paths[0] == std::vector<int>{0, 1, 2, 3, 4});
  }
  SUBCASE("two leaves") {
    ExplorationTree t(PlannerKind::kMRRT, {});
    for (double z : {0.0, 1.0, -0.5}) {
      TreeNode n;
      n.parent = t.size() == 0 ? -1 : 0;
      n.state.q = Eigen::VectorXd::Zero(2);
      n.state.p.z() = z;
      t.add(n);
    }
    const auto paths = top_k_paths(t, 1);
    REQUIRE(paths.size() == 1);
    CHECK(paths[0] == std::vector<int>{0, 1});
  }
  SUBCASE("random trees against a leaf scan") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 20; ++trial) {
      const ExplorationTree tree = random_tree(rng, 50 + trial * 10);
      std::vector<std::pair<double, int>> scored;
      for (int leaf : tree.leaves()) scored.push_back({-path_rotation(tree, leaf), leaf});
      std::sort(scored.begin(), scored.end());
      const int k = 1 + trial % 12;
      const auto paths = top_k_paths(tree, k);
      REQUIRE(paths.size() == std::min<size_t>(k, scored.size()));
      for (size_t i = 0; i < paths.size(); ++i) {
        CHECK(paths[i].back() == scored[i].second);
        CHECK(paths[i] == tree.path_to_root(scored[i].second));
      }
    }
  }
}

TEST_CASE("uniform draws") {
  const ResetSet two = tiny_set(2);
  std::mt19937_64 rng(3);
  int first = 0;
  for (int i = 0; i < 10000; ++i) first += two.draw(rng).state.q[0] == 0.0;
  CHECK(std::abs(first / 10000.0 - 0.5) <= 0.02);

  const ResetSet many = tiny_set(20);
  std::vector<int> counts(20, 0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[static_cast<int>(many.draw(rng).state.q[0])];
  const double p = 1.0 / 20, sigma = std::sqrt(n * p * (1 - p));
  for (int c : counts) CHECK(std::abs(c - n * p) <= 3 * sigma);
}

TEST_CASE("reset set from a G-RRT tree") {
  const SimulatorFactory fac = disc_factory();
  const StabilityConfig st = stability_for(fac.shape());
  const SimState root = settled_root(fac.make(), st);
  PlannerConfig pc;
  pc.max_nodes = 60;
  pc.k_max = 8;
  const ExplorationTree tree = grow_grrt(root, pc, fac).tree;

  ResetConfig rc;
  const ResetSet set = build_reset_set(tree, rc, fac, st, "feed");
  std::set<int> uni;
  for (const auto& path : top_k_paths(tree, rc.top_k)) uni.insert(path.begin(), path.end());
  CHECK(set.size() == static_cast<int>(uni.size()));
  const Simulator sim = fac.make();
  for (int i = 0; i < set.size(); ++i) {
    CHECK(uni.count(set.node_ids[i]) == 1);
    CHECK(set.states[i] == *tree.node(set.node_ids[i]).snapshot);
    CHECK(detect_contacts(fac.model(), fac.shape(), set.states[i].state).count() >= 3);
    CHECK(sim.rollout_stability_check(set.states[i]));
  }
  CHECK(set.tree_hash == "feed");
  CHECK(set.path_leaves.size() <= static_cast<size_t>(rc.top_k));

  rc.cap = 10;
  const ResetSet capped = build_reset_set(tree, rc, fac, st);
  CHECK(capped.size() == std::min(10, set.size()));
  CHECK(std::equal(capped.node_ids.begin(), capped.node_ids.end(), set.node_ids.begin()));

  TempDir dir("resets");
  save_reset_set(dir.file("r.txt"), set);
  const ResetSet back = load_reset_set(dir.file("r.txt"), &fac);
  CHECK(back.states == set.states);
  CHECK(back.node_ids == set.node_ids);
  CHECK(back.path_leaves == set.path_leaves);
  CHECK(back.tree_hash == set.tree_hash);
  CHECK(format_reset_set(back) == format_reset_set(set));
}

TEST_CASE("M-RRT reset set drops an injected floating node") {
  const SimulatorFactory fac = disc_factory();
  const StabilityConfig st = stability_for(fac.shape());
  const State root = canonical_grasp(fac.model(), fac.shape());
  PlannerConfig pc;
  pc.max_nodes = 150;
  const ExplorationTree grown = grow_mrrt(root, pc, fac.model(), fac.shape(), st).tree;

  ExplorationTree tree(PlannerKind::kMRRT, pc.weights);
  for (const auto& n : grown.nodes()) tree.add(n);
  int best_leaf = 0;
  for (int leaf : grown.leaves()) {
    if (path_rotation(grown, leaf) > path_rotation(grown, best_leaf)) best_leaf = leaf;
  }
  TreeNode floating;
  floating.parent = best_leaf;
  floating.state = grown.node(best_leaf).state;
  floating.state.p.x() += 0.2;  // out of reach of every finger
  floating.state.p.z() += grown.node(best_leaf).state.p.z() >= grown.node(0).state.p.z() ? 0.5 : -0.5;
  const int injected = tree.add(floating);
  REQUIRE(top_k_paths(tree, 1)[0].back() == injected);

  ResetConfig rc;
  const ResetSet set = build_reset_set(tree, rc, fac, st);
  CHECK(std::find(set.node_ids.begin(), set.node_ids.end(), injected) == set.node_ids.end());
  const Simulator sim = fac.make();
  for (const auto& s : set.states) {
    CHECK(detect_contacts(fac.model(), fac.shape(), s.state).count() >= 3);
    CHECK(sim.rollout_stability_check(s));
  }

  // filter kernels agree
  std::vector<SimState> all;
  for (const auto& n : tree.nodes()) all.push_back(complete_with_squeeze(fac.model(), fac.shape(), n.state, st, fac.config()));
  const auto a = stability_filter(all, fac, 3, kDefaultContactTolerance, Execution::kSerial);
  const auto b = stability_filter(all, fac, 3, kDefaultContactTolerance, Execution::kParallel);
  CHECK(a == b);
  CHECK(a.back() == 0);
}

TEST_CASE("empty reset set and bad files") {
  const SimulatorFactory fac = disc_factory();
  const StabilityConfig st = stability_for(fac.shape());
  ExplorationTree lonely(PlannerKind::kMRRT, {});
  TreeNode n;
  n.state = canonical_grasp(fac.model(), fac.shape());
  n.state.p.x() += 0.3;
  lonely.add(n);
  CHECK_THROWS_AS(build_reset_set(lonely, ResetConfig{}, fac, st), RuntimeFailure);

  CHECK_THROWS(parse_reset_set("not a reset file\n"));
  ResetSet s = tiny_set(1);
  s.object = "disc";
  const std::string text = format_reset_set(s);
  CHECK(parse_reset_set(text).size() == 1);
  try {
    parse_reset_set(text + "0 1 2 x\n");
    FAIL("expected a parse error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("line") != std::string::npos);
  }

  // a state that does not hold: verification on load fails
  ResetSet bad;
  bad.object = "disc";
  bad.states.push_back(SimState::at_rest(n.state, n.state.q));
  bad.node_ids.push_back(0);
  TempDir dir("badresets");
  save_reset_set(dir.file("b.txt"), bad);
  CHECK_NOTHROW(load_reset_set(dir.file("b.txt")));
  CHECK_THROWS_AS(load_reset_set(dir.file("b.txt"), &fac), RuntimeFailure);
}

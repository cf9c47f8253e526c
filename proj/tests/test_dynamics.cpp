#include <doctest.h>

#include <random>

#include "dexplore/errors.hpp"
#include "dexplore/planners.hpp"
#include "helpers.hpp"

using namespace testing;

namespace {

Simulator make_sim(SimConfig sc = {}, const std::string& object = "disc") {
  return Simulator(std::make_shared<HandModel>(reference_hand()),
                   std::make_shared<ObjectShape>(reference_object(object)), sc);
}

// Two upright straight fingers whose tips cradle the disc from below.
Simulator cradle_sim() {
  std::vector<FingerSpec> fingers;
  const double r = 0.035, tip = 0.008, dx = 0.03;
  const double y = -std::sqrt((r + tip) * (r + tip) - dx * dx);
  for (double sx : {-1.0, 1.0}) {
    FingerSpec f;
    f.base = Vec2(sx * dx, y - 0.115);
    f.base_angle = kPi / 2;
    f.links = {0.06, 0.055};
    fingers.push_back(f);
  }
  return Simulator(std::make_shared<HandModel>(std::move(fingers), tip),
                   std::make_shared<ObjectShape>(reference_object("disc")), SimConfig{});
}

SimState stable_grasp(const Simulator& sim) {
  return settled_root(sim, stability_for(sim.shape()));
}

}  // namespace

TEST_CASE("tangent grasp with setpoints at the joints is a fixed point without gravity") {
  SimConfig sc;
  sc.gravity = 0.0;
  const Simulator sim = make_sim(sc);
  const State g = canonical_grasp(sim.model(), sim.shape());
  const SimState s = SimState::at_rest(g, g.q);
  const SimState next = sim.step(s, g.q);
  CHECK((next.state.q - s.state.q).cwiseAbs().maxCoeff() <= 1e-9);
  CHECK((next.state.p - s.state.p).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("free fall for one step") {
  const Simulator sim = make_sim();
  State far = canonical_grasp(sim.model(), sim.shape());
  far.p.x() = 1.0;
  const SimState s = SimState::at_rest(far, far.q);
  StepInfo info;
  const SimState next = sim.step(s, far.q, &info);
  CHECK(info.contact_count() == 0);
  CHECK(next.velocity.y() == doctest::Approx(-sim.config().gravity * sim.config().dt).epsilon(1e-12));
  CHECK(next.velocity.x() == 0.0);
}

TEST_CASE("object resting on two fingertips settles to the spring equilibrium") {
  const Simulator sim = cradle_sim();
  State st;
  st.q = Eigen::VectorXd::Zero(4);
  SimState s = SimState::at_rest(st, st.q);
  const double bound = 2.0 * sim.config().object_mass * sim.config().gravity / sim.config().contact_stiffness;
  const double y0 = s.state.p.y();
  for (int i = 0; i < 500; ++i) s = sim.step(s, st.q);
  const ContactSet cs = detect_contacts(sim.model(), sim.shape(), s.state);
  CHECK(cs.count() == 2);
  for (const auto& c : cs.contacts) CHECK(c.depth < bound);
  CHECK(std::abs(s.state.p.y() - y0) < 1e-3);
}

TEST_CASE("rollout check") {
  SimConfig sc;
  sc.gravity = 0.0;
  const Simulator zero_g = make_sim(sc);
  CHECK(zero_g.rollout_stability_check(stable_grasp(zero_g)));

  const Simulator sim = make_sim();
  SimState low = stable_grasp(sim);
  low.state.p.y() = sim.config().drop_height - 0.01;
  CHECK_FALSE(sim.rollout_stability_check(low));
}

TEST_CASE("rollout check equals manual stepping") {
  const Simulator sim = make_sim();
  const SimState root = stable_grasp(sim);
  PlannerConfig pc;
  int dropped = 0;
  for (int k = 0; k < 50; ++k) {
    const Action a = sample_action(sim.model(), root.state.q, 0.3, 99, 0, k);
    const SimState cand = SimState::at_rest(sim.advance(root, a, sim.config().control_steps).state, a);
    const SimState before = cand;
    const bool check = sim.rollout_stability_check(cand);
    CHECK(cand == before);
    bool manual = true;
    SimState s = cand;
    for (int i = 0; i < sim.config().rollout_steps(); ++i) {
      s = sim.step(s, cand.setpoints);
      if (s.state.p.y() < sim.config().drop_height) {
        manual = false;
        break;
      }
    }
    CHECK(check == manual);
    dropped += !manual;
  }
  MESSAGE("candidates dropped: " << dropped << " / 50");
}

TEST_CASE("snapshot and restore reproduce trajectories") {
  const Simulator sim = make_sim();
  Simulator a = sim, b = make_sim();
  a.reset(stable_grasp(sim));
  std::mt19937_64 rng(3);
  const auto snap = a.snapshot();
  std::vector<Action> actions;
  for (int i = 0; i < 100; ++i) {
    actions.push_back(sample_action(sim.model(), a.current().state.q, 0.1, 5, i, 0));
    a.apply(actions.back(), 1);
  }
  const SimState end = a.current();
  a.restore(snap);
  for (const auto& act : actions) a.apply(act, 1);
  CHECK(a.current() == end);

  b.restore(snap);
  for (const auto& act : actions) b.apply(act, 1);
  CHECK(b.current() == end);

  const SimState parsed = parse_sim_state(format_sim_state(snap), sim.model().dof(), sim.model().num_fingers());
  CHECK(parsed == snap);
  b.restore(parsed);
  for (const auto& act : actions) b.apply(act, 1);
  CHECK(b.current() == end);
}

TEST_CASE("free joints reach their setpoints in time") {
  SimConfig sc;
  sc.gravity = 0.0;
  const Simulator sim = make_sim(sc);
  const HandModel& m = sim.model();
  State far = canonical_grasp(m, sim.shape());
  far.p.x() = 1.0;
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::VectorXd target = uniform_q(m, rng);
    SimState s = SimState::at_rest(far, far.q);
    const Eigen::VectorXd start = s.state.q;
    const double deadline = (target - start).cwiseAbs().maxCoeff() / sc.velocity_limit + 5 * sc.dt;
    const int steps = static_cast<int>(std::ceil(deadline / sc.dt));
    Eigen::VectorXd prev_err = (target - start).cwiseAbs();
    for (int i = 0; i < steps; ++i) {
      s = sim.step(s, target);
      const Eigen::VectorXd err = (target - s.state.q).cwiseAbs();
      CHECK((err.array() <= prev_err.array() + 1e-12).all());
      prev_err = err;
    }
    CHECK(prev_err.maxCoeff() < 1e-6);
  }
}

TEST_CASE("reported contact forces drive the object") {
  const Simulator sim = make_sim();
  SimState s = stable_grasp(sim);
  std::mt19937_64 rng(2);
  const double m = sim.config().object_mass, dt = sim.config().dt;
  for (int i = 0; i < 200; ++i) {
    const Action a = sample_action(sim.model(), s.state.q, 0.05, 8, i, 0);
    StepInfo info;
    const SimState next = sim.step(s, a, &info);
    Vec2 total = Vec2(0, -m * sim.config().gravity);
    for (size_t f = 0; f < info.forces.size(); ++f) {
      total += info.forces[f];
      CHECK(info.in_contact[f] == (info.forces[f].norm() > 0));
    }
    const Vec2 accel = (next.velocity.head<2>() - s.velocity.head<2>()) / dt;
    CHECK((accel * m - total).norm() <= 1e-9 * std::max(1.0, total.norm()));
    s = next;
  }
}

TEST_CASE("penetration stays shallow over random stable grasps") {
  const Simulator sim = make_sim();
  const SimState root = stable_grasp(sim);
  double deepest = 0.0;
  for (int k = 0; k < 30; ++k) {
    const Action a = sample_action(sim.model(), root.state.q, 0.15, 4, 1, k);
    SimState s = root;
    for (int i = 0; i < 3 * sim.config().control_steps; ++i) {
      s = sim.step(s, a);
      for (const auto& c : detect_contacts(sim.model(), sim.shape(), s.state).contacts) {
        deepest = std::max(deepest, c.depth);
      }
      REQUIRE(s.state.p.allFinite());
    }
  }
  CHECK(deepest < 0.005);
}

TEST_CASE("bad inputs") {
  const Simulator sim = make_sim();
  SimState s = stable_grasp(sim);
  Action bad = s.setpoints;
  bad[0] = std::nan("");
  CHECK_THROWS_AS(sim.step(s, bad), ContractError);
  CHECK_THROWS_AS(sim.step(s, Eigen::VectorXd::Zero(3)), ContractError);
  SimConfig sc;
  sc.dt = 0.0;
  CHECK_THROWS_AS(sc.validate(), ConfigError);
  sc = SimConfig{};
  sc.rollout_duration = 0.0031;
  CHECK_THROWS_AS(sc.validate(), ConfigError);
  sc = SimConfig{};
  sc.contact_stiffness = -1;
  CHECK_THROWS_AS(sc.validate(), ConfigError);
}

TEST_CASE("actions are clamped to the joint limits") {
  const Simulator sim = make_sim();
  SimState s = stable_grasp(sim);
  const Action wild = Eigen::VectorXd::Constant(sim.model().dof(), 10.0);
  for (int i = 0; i < 2000; ++i) s = sim.step(s, wild);
  CHECK(sim.model().within_limits(s.state.q, 1e-12));
  CHECK(sim.model().within_limits(s.setpoints, 0.0));
}

#include <doctest.h>

#include <algorithm>
#include <random>

#include "dexplore/errors.hpp"
#include "dexplore/io.hpp"
#include "dexplore/nn.hpp"
#include "dexplore/rl.hpp"
#include "helpers.hpp"

using namespace testing;

namespace {

SimState at_pose(int dof, const Eigen::Vector3d& p, const Eigen::Vector3d& v = Eigen::Vector3d::Zero()) {
  State s;
  s.q = Eigen::VectorXd::Zero(dof);
  s.p = p;
  SimState out = SimState::at_rest(s, s.q);
  out.velocity = v;
  return out;
}

StepInfo touching(int fingers, int touching_count) {
  StepInfo info;
  for (int i = 0; i < fingers; ++i) {
    info.forces.push_back(i < touching_count ? Vec2(0.5, 0.2) : Vec2::Zero());
    info.in_contact.push_back(i < touching_count);
  }
  return info;
}

// Tiny policy with hand-picked layer sizes.
Policy tiny_policy(int obs, int hidden, int act, int critic_obs, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Policy p;
  p.actor = Mlp({obs, hidden, hidden, act}, rng, 1.0);
  p.critic = Mlp({critic_obs, hidden, hidden, 1}, rng, 1.0);
  p.log_std = Eigen::VectorXd::Constant(act, -0.3);
  return p;
}

struct Batch {
  Eigen::MatrixXd obs, critic, actions;
  Eigen::VectorXd old_logp, adv, ret;
};

Batch random_batch(const Policy& p, int n, std::uint64_t seed, double logp_shift = 0.05) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  auto fill = [&](Eigen::MatrixXd& m, int rows) {
    m.resize(rows, n);
    for (int i = 0; i < m.size(); ++i) m.data()[i] = n01(rng);
  };
  Batch b;
  fill(b.obs, p.actor.inputs());
  fill(b.critic, p.critic.inputs());
  fill(b.actions, p.action_size());
  b.old_logp.resize(n);
  b.adv.resize(n);
  b.ret.resize(n);
  const Eigen::MatrixXd mu = p.actor.forward(b.obs);
  for (int i = 0; i < n; ++i) {
    b.old_logp[i] = gaussian_log_prob(b.actions.col(i), mu.col(i), p.log_std) + logp_shift * n01(rng);
    b.adv[i] = n01(rng);
    b.ret[i] = n01(rng);
  }
  return b;
}

// Independent GAE: explicit sum over future TD errors.
Eigen::VectorXd gae_by_sums(const RolloutBatch& batch, const Eigen::VectorXd& v, double g, double l) {
  Eigen::VectorXd adv(batch.size());
  for (int w = 0; w < batch.envs; ++w) {
    for (int t = 0; t < batch.steps_per_env; ++t) {
      double sum = 0.0, weight = 1.0;
      for (int u = t; u < batch.steps_per_env; ++u) {
        const int i = w * batch.steps_per_env + u;
        const double next = u + 1 < batch.steps_per_env ? v[i + 1] : batch.last_values[w];
        const double delta = batch.rewards[i] + (batch.dones[i] ? 0.0 : g * next) - v[i];
        sum += weight * delta;
        if (batch.dones[i]) break;
        weight *= g * l;
      }
      adv[w * batch.steps_per_env + t] = sum;
    }
  }
  return adv;
}

TrainerConfig tiny_trainer(int updates) {
  TrainerConfig tc;
  tc.updates = updates;
  tc.steps_per_update = 128;
  tc.envs = 4;
  tc.minibatch = 64;
  tc.epochs = 2;
  tc.hidden = 16;
  tc.eval_every = 1;
  return tc;
}

}  // namespace

TEST_CASE("observations") {
  const SimulatorFactory fac = disc_factory();
  const Simulator sim = fac.make();
  const SimState root = settled_root(sim, stability_for(fac.shape()));
  const StepInfo info = probe_contacts(sim, root);
  const Observation o = observe(root, info);
  CHECK(o.q == root.state.q);
  CHECK(o.setpoints == root.setpoints);
  CHECK(o.contacts.sum() >= 3);
  for (int f = 0; f < fac.model().num_fingers(); ++f) {
    CHECK((o.contacts[f] == 0.0 || o.contacts[f] == 1.0));
    CHECK((o.contacts[f] == 1.0) == (info.forces[f].norm() > 0.0));
  }
  CHECK(o.vector().size() == observation_size(fac.model()));
  CHECK(observation_size(fac.model()) == 2 * fac.model().dof() + fac.model().num_fingers());
  CHECK(observe_critic(root, info).vector().size() == critic_observation_size(fac.model()));

  SimState floating = root;
  floating.state.p.x() += 0.4;
  CHECK(observe(floating, probe_contacts(sim, floating)).contacts.isZero());

  // the touch threshold
  StepInfo weak = touching(4, 4);
  CHECK(observe(root, weak, 0.0).contacts.sum() == 4);
  CHECK(observe(root, weak, 1.0).contacts.sum() == 0);
}

TEST_CASE("reward examples") {
  RewardConfig rc;
  const double dt = 0.1;
  const SimState prev = at_pose(8, Eigen::Vector3d(0, 0, 1.0));
  CHECK(reward(prev, prev, touching(4, 3), rc, dt, Vec2::Zero()) == 0.0);

  const SimState turned = at_pose(8, Eigen::Vector3d(0, 0, 1.0 + 0.5 * dt));
  CHECK(reward(prev, turned, touching(4, 3), rc, dt, Vec2::Zero()) == doctest::Approx(0.5));
  CHECK(reward(prev, turned, touching(4, 2), rc, dt, Vec2::Zero()) == 0.0);

  const SimState fast = at_pose(8, Eigen::Vector3d(0, 0, 1.0 + 5 * dt));
  CHECK(reward(prev, fast, touching(4, 4), rc, dt, Vec2::Zero()) == doctest::Approx(rc.omega_max));

  const SimState drift = at_pose(8, Eigen::Vector3d(0.003, -0.004, 1.0 + 0.5 * dt), Eigen::Vector3d(0.03, 0.04, 0));
  const double penalties = rc.w_v * 0.05 + rc.w_pos * 0.005;
  CHECK(reward(prev, drift, touching(4, 2), rc, dt, Vec2::Zero()) == doctest::Approx(-penalties));
  CHECK(reward(prev, drift, touching(4, 3), rc, dt, Vec2::Zero()) == doctest::Approx(0.5 - penalties));
}

TEST_CASE("termination") {
  const SimulatorFactory fac = disc_factory();
  const Simulator sim = fac.make();
  const RewardConfig rc;
  const SimState root = settled_root(sim, stability_for(fac.shape()));
  CHECK(terminate(root, touching(4, 1), 3, rc, sim) == Termination::kContacts);
  CHECK(terminate(root, touching(4, 3), 0, rc, sim) == Termination::kNone);
  CHECK(terminate(root, touching(4, 3), rc.horizon, rc, sim) == Termination::kHorizon);
  SimState low = root;
  low.state.p.y() = -1;
  CHECK(terminate(low, touching(4, 3), 0, rc, sim) == Termination::kDrop);
}

TEST_CASE("reset distributions") {
  const SimulatorFactory fac = disc_factory();
  const Simulator sim = fac.make();
  const StabilityConfig st = stability_for(fac.shape());
  const SimState root = settled_root(sim, st);
  std::mt19937_64 rng(4);

  FixedInit fi(root);
  for (int i = 0; i < 5; ++i) CHECK(fi.sample(rng, sim) == root);

  StableGraspSampler sgs(st);
  for (int i = 0; i < 5; ++i) {
    const SimState s = sgs.sample(rng, sim);
    CHECK(detect_contacts(fac.model(), fac.shape(), s.state).count() >= 3);
    CHECK(sim.rollout_stability_check(s));
  }
  CHECK(sgs.accepted() == 5);
  CHECK(sgs.attempts() >= 5);

  // an object far too large for the hand: the sampler gives up
  const SimulatorFactory huge(reference_hand(), ObjectShape::disc(0.2, ShapeCategory::kHard), SimConfig{});
  StableGraspSampler doomed(stability_for(huge.shape()), 20);
  CHECK_THROWS_AS(doomed.sample(rng, huge.make()), RuntimeFailure);

  ExploredRestarts er(root, 3);
  CHECK(er.sample(rng, sim) == root);
  std::vector<SimState> visits;
  for (int i = 0; i < 5; ++i) visits.push_back(at_pose(8, Eigen::Vector3d(0, 0, i)));
  er.add_visits(visits);
  CHECK(er.buffer_size() == 3);
  int from_initial = 0;
  for (int i = 0; i < 4000; ++i) {
    const SimState s = er.sample(rng, sim);
    if (s == root) {
      ++from_initial;
    } else {
      CHECK(std::find(er.buffer().begin(), er.buffer().end(), s) != er.buffer().end());
    }
  }
  CHECK(std::abs(from_initial / 4000.0 - 0.5) < 0.04);
}

TEST_CASE("rollout collection") {
  const SimulatorFactory fac = disc_factory();
  const Simulator sim = fac.make();
  const SimState root = settled_root(sim, stability_for(fac.shape()));
  const RewardConfig rc;
  std::mt19937_64 rng(5);
  const Policy policy = Policy::create(fac.model(), 16, -1.0, rng);

  SUBCASE("empty batch") {
    FixedInit fi(root);
    auto workers = make_workers(fac, rc, fi, 2, 1);
    const RolloutBatch b = collect_rollouts(policy, workers, fi, 0, 1, 1, Execution::kSerial);
    CHECK(b.size() == 0);
    CHECK(b.episodes.empty());
  }
  SUBCASE("states without contact end every episode after one step") {
    SimState away = root;
    away.state.p.x() += 0.4;
    FixedInit fi(away);
    auto workers = make_workers(fac, rc, fi, 2, 1);
    const RolloutBatch b = collect_rollouts(policy, workers, fi, 5, 1, 1, Execution::kSerial);
    CHECK(b.episodes.size() == 10);
    for (const auto& e : b.episodes) CHECK(e.length == 1);
    for (char d : b.dones) CHECK(d == 1);
  }
  SUBCASE("serial and parallel batches match, seeds reproduce") {
    ExploredRestarts er1(root), er2(root);
    auto w1 = make_workers(fac, rc, er1, 3, 9);
    auto w2 = make_workers(fac, rc, er2, 3, 9);
    const RolloutBatch a = collect_rollouts(policy, w1, er1, 40, 9, 1, Execution::kSerial);
    const RolloutBatch b = collect_rollouts(policy, w2, er2, 40, 9, 1, Execution::kParallel);
    CHECK(a.obs == b.obs);
    CHECK(a.critic_obs == b.critic_obs);
    CHECK(a.actions == b.actions);
    CHECK(a.rewards == b.rewards);
    CHECK(a.log_probs == b.log_probs);
    CHECK(a.dones == b.dones);
    CHECK(a.last_values == b.last_values);
    CHECK(a.visited == b.visited);
    int nonterminal = 0;
    for (char d : a.dones) nonterminal += d == 0;
    CHECK(static_cast<int>(a.visited.size()) == nonterminal);
    er1.add_visits(a.visited);
    for (const auto& s : er1.buffer()) CHECK(std::find(a.visited.begin(), a.visited.end(), s) != a.visited.end());
  }
}

TEST_CASE("episode rotation is the sum of per-step changes") {
  const SimulatorFactory fac = disc_factory();
  const SimState root = settled_root(fac.make(), stability_for(fac.shape()));
  RotationEnv env(fac.make(), RewardConfig{});
  env.reset(root);
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  double sum = 0.0;
  for (int i = 0; i < 30; ++i) {
    Eigen::VectorXd a(8);
    for (int j = 0; j < 8; ++j) a[j] = u(rng);
    const StepResult r = env.step(a);
    sum += r.dtheta;
    CHECK(fac.model().within_limits(env.state().setpoints));
    if (r.done != Termination::kNone) break;
  }
  CHECK(sum == doctest::Approx(env.state().state.p.z() - root.state.p.z()).epsilon(1e-12));
}

TEST_CASE("GAE against explicit sums") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n01;
  RolloutBatch b;
  b.envs = 3;
  b.steps_per_env = 17;
  const int n = 51;
  b.rewards.resize(n);
  b.dones.resize(n);
  b.last_values.resize(3);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) {
    b.rewards[i] = n01(rng);
    b.dones[i] = (rng() % 6) == 0;
    v[i] = n01(rng);
  }
  for (int w = 0; w < 3; ++w) b.last_values[w] = n01(rng);
  Eigen::VectorXd adv, ret;
  compute_gae(b, v, 0.97, 0.9, adv, ret);
  CHECK((adv - gae_by_sums(b, v, 0.97, 0.9)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((ret - (adv + v)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("network gradients") {
  std::mt19937_64 rng(8);
  Mlp net({5, 7, 7, 3}, rng);
  std::normal_distribution<double> n01;
  Eigen::MatrixXd x(5, 4), dout(3, 4);
  for (int i = 0; i < x.size(); ++i) x.data()[i] = n01(rng);
  for (int i = 0; i < dout.size(); ++i) dout.data()[i] = n01(rng);
  Mlp::Cache cache;
  net.forward(x, &cache);
  const Eigen::VectorXd g = net.backward(cache, dout);
  CHECK(g.size() == net.parameter_count());
  const Eigen::VectorXd theta = net.parameters();
  for (int i = 0; i < theta.size(); ++i) {
    Mlp p = net, m = net;
    Eigen::VectorXd tp = theta, tm = theta;
    tp[i] += 1e-6;
    tm[i] -= 1e-6;
    p.set_parameters(tp);
    m.set_parameters(tm);
    const double num = ((p.forward(x).array() - m.forward(x).array()) * dout.array()).sum() / 2e-6;
    CHECK(std::abs(num - g[i]) <= 1e-6 * std::max(1.0, std::abs(g[i])));
  }

  SUBCASE("zero weights give symmetric gradients") {
    Mlp z = net;
    z.set_parameters(Eigen::VectorXd::Zero(net.parameter_count()));
    Mlp::Cache c;
    z.forward(x, &c);
    const Eigen::VectorXd gz = z.backward(c, Eigen::MatrixXd::Ones(3, 4));
    // only the output biases see a gradient, all equal to the batch size
    const int nb = 3;
    CHECK(gz.head(gz.size() - nb).isZero());
    CHECK(gz.tail(nb) == Eigen::VectorXd::Constant(nb, 4.0));
  }
}

TEST_CASE("PPO gradient checks") {
  SUBCASE("tiny network, single sample") {
    const Policy p = tiny_policy(4, 2, 1, 4, 1);
    const Batch b = random_batch(p, 1, 2);
    const double err = gradient_check(p, b.obs, b.critic, b.actions, b.old_logp, b.adv, b.ret, 0.2, 0.01, 64, 3);
    CHECK(err < 1e-5);
    CHECK(err == gradient_check(p, b.obs, b.critic, b.actions, b.old_logp, b.adv, b.ret, 0.2, 0.01, 64, 3));
  }
  SUBCASE("policy-sized network") {
    const SimulatorFactory fac = disc_factory();
    std::mt19937_64 rng(4);
    Policy p = Policy::create(fac.model(), 64, -0.5, rng);
    p.actor = tiny_policy(p.actor.inputs(), 64, p.action_size(), p.critic.inputs(), 5).actor;
    for (std::uint64_t s = 0; s < 5; ++s) {
      const Batch b = random_batch(p, 32, 10 + s);
      CHECK(gradient_check(p, b.obs, b.critic, b.actions, b.old_logp, b.adv, b.ret, 0.2, 0.0, 64, s) < 1e-3);
    }
  }
}

TEST_CASE("surrogate corner cases") {
  const Policy p = tiny_policy(4, 6, 3, 5, 6);
  Batch b = random_batch(p, 16, 7, 0.0);
  b.adv.setZero();
  PolicyGradient g;
  ppo_loss(p, b.obs, b.critic, b.actions, b.old_logp, b.adv, b.ret, 0.2, 0.05, &g);
  CHECK(g.actor.isZero());
  CHECK((g.log_std - Eigen::VectorXd::Constant(3, -0.05)).cwiseAbs().maxCoeff() < 1e-15);

  b = random_batch(p, 16, 8, 0.0);
  ppo_loss(p, b.obs, b.critic, b.actions, b.old_logp, b.adv, b.ret, 0.0, 0.05, &g);
  CHECK(g.actor.isZero());
  CHECK((g.log_std - Eigen::VectorXd::Constant(3, -0.05)).cwiseAbs().maxCoeff() < 1e-15);
  ppo_loss(p, b.obs, b.critic, b.actions, b.old_logp, b.adv, b.ret, 0.2, 0.0, &g);
  CHECK_FALSE(g.actor.isZero());
}

TEST_CASE("non-finite batches abort the update") {
  const SimulatorFactory fac = disc_factory();
  const SimState root = settled_root(fac.make(), stability_for(fac.shape()));
  std::mt19937_64 rng(9);
  const Policy policy = Policy::create(fac.model(), 16, -1.0, rng);
  FixedInit fi(root);
  auto workers = make_workers(fac, RewardConfig{}, fi, 2, 1);
  RolloutBatch b = collect_rollouts(policy, workers, fi, 8, 1, 1, Execution::kSerial);
  b.rewards[3] = std::nan("");
  PpoTrainer trainer(policy, tiny_trainer(1));
  const UpdateDiagnostics d = trainer.update(b, 1);
  CHECK(d.aborted);
  CHECK(trainer.policy().actor.parameters() == policy.actor.parameters());
}

TEST_CASE("policy files") {
  const SimulatorFactory fac = disc_factory();
  std::mt19937_64 rng(10);
  const Policy p = Policy::create(fac.model(), 8, -1.3, rng);
  const std::string text = format_policy(p, "0123456789abcdef");
  std::string hash;
  const Policy back = parse_policy(text, &hash);
  CHECK(hash == "0123456789abcdef");
  CHECK(back.actor.parameters() == p.actor.parameters());
  CHECK(back.critic.parameters() == p.critic.parameters());
  CHECK(back.log_std == p.log_std);
  CHECK(format_policy(back, hash) == text);
  CHECK_THROWS(parse_policy("# dexplore-policy v1\nactor_sizes 3 2\n"));

  Policy wild = p;
  wild.log_std.setConstant(7.0);
  wild.clamp_log_std();
  CHECK(wild.log_std.maxCoeff() == Policy::kLogStdMax);
}

TEST_CASE("training is reproducible and serial equals parallel") {
  const SimulatorFactory fac = disc_factory();
  const SimState root = settled_root(fac.make(), stability_for(fac.shape()));
  auto run = [&](Execution e) {
    TrainerConfig tc = tiny_trainer(3);
    tc.execution = e;
    ExploredRestarts er(root);
    const TrainResult r = train(fac, RewardConfig{}, tc, er, root);
    std::string csv = metrics_csv_header();
    for (const auto& m : r.updates) csv += format_metrics_row(m);
    for (const auto& m : r.evals) csv += format_eval_row(m);
    return csv + format_policy(r.policy, "");
  };
  const std::string a = run(Execution::kSerial);
  CHECK(a == run(Execution::kSerial));
  CHECK(a == run(Execution::kParallel));

  TrainerConfig zero = tiny_trainer(0);
  FixedInit fi(root);
  const TrainResult r = train(fac, RewardConfig{}, zero, fi, root);
  CHECK(r.updates.empty());
  CHECK(r.evals.empty());
}

TEST_CASE("a zero clip range leaves the actor untouched") {
  const SimulatorFactory fac = disc_factory();
  const SimState root = settled_root(fac.make(), stability_for(fac.shape()));
  std::mt19937_64 rng(11);
  const Policy policy = Policy::create(fac.model(), 16, -1.0, rng);
  ExploredRestarts er(root);
  auto workers = make_workers(fac, RewardConfig{}, er, 4, 3);
  const RolloutBatch b = collect_rollouts(policy, workers, er, 32, 3, 1, Execution::kSerial);
  TrainerConfig tc = tiny_trainer(1);
  tc.clip = 0.0;
  tc.epochs = 4;
  tc.minibatch = 32;
  PpoTrainer trainer(policy, tc);
  const UpdateDiagnostics d = trainer.update(b, 1);
  CHECK_FALSE(d.aborted);
  CHECK(trainer.policy().actor.parameters() == policy.actor.parameters());
  CHECK(trainer.policy().log_std == policy.log_std);
  CHECK(trainer.policy().critic.parameters() != policy.critic.parameters());
}

TEST_CASE("first Adam step has the learning rate as its size") {
  Adam adam(3, 0.01);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(3);
  adam.step(theta, Eigen::Vector3d(5.0, -0.2, 0.0));
  CHECK(theta[0] == doctest::Approx(-0.01).epsilon(1e-6));
  CHECK(theta[1] == doctest::Approx(0.01).epsilon(1e-6));
  CHECK(theta[2] == 0.0);
}

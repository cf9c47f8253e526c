#include "dexplore/rl.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include "dexplore/errors.hpp"
#include "dexplore/grasp.hpp"
#include "dexplore/io.hpp"

namespace dexplore {

namespace {
constexpr double kLog2Pi = 1.8378770664093453;  // log(2 pi)
constexpr double kNan = std::numeric_limits<double>::quiet_NaN();
}  // namespace

// ---------------------------------------------------------------------------
// Observations, reward, termination

Eigen::VectorXd Observation::vector() const {
  Eigen::VectorXd v(q.size() + setpoints.size() + contacts.size());
  v << q, setpoints, contacts;
  return v;
}

Eigen::VectorXd CriticObservation::vector() const {
  const Eigen::VectorXd a = actor.vector();
  Eigen::VectorXd v(a.size() + 4 + 3 + 2 * forces.size());
  v.head(a.size()) = a;
  Eigen::Index i = a.size();
  v(i++) = pose.x() / 0.02;
  v(i++) = pose.y() / 0.02;
  v(i++) = std::sin(pose.z());
  v(i++) = std::cos(pose.z());
  v(i++) = velocity.x() / 0.02;
  v(i++) = velocity.y() / 0.02;
  v(i++) = velocity.z();
  for (const Vec2& f : forces) {
    v(i++) = f.x() / 2.0;
    v(i++) = f.y() / 2.0;
  }
  return v;
}

int observation_size(const HandModel& model) { return 2 * model.dof() + model.num_fingers(); }

int critic_observation_size(const HandModel& model) {
  return observation_size(model) + 7 + 2 * model.num_fingers();
}

void RewardConfig::validate() const {
  if (w_rot < 0 || w_v < 0 || w_pos < 0) throw ConfigError("reward weights must be >= 0");
  if (!(omega_max > 0)) throw ConfigError("reward omega_max must be > 0");
  if (horizon < 1) throw ConfigError("episode horizon must be >= 1");
  if (reward_contacts < 0 || terminate_contacts < 0) throw ConfigError("contact counts must be >= 0");
  if (!(contact_threshold >= 0)) throw ConfigError("contact threshold must be >= 0");
}

int contact_count(const StepInfo& info, double contact_threshold) {
  int n = 0;
  for (const Vec2& f : info.forces) n += f.norm() > contact_threshold ? 1 : 0;
  return n;
}

Observation observe(const SimState& s, const StepInfo& info, double contact_threshold) {
  Observation o;
  o.q = s.state.q;
  o.setpoints = s.setpoints;
  o.contacts = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(info.forces.size()));
  for (size_t i = 0; i < info.forces.size(); ++i) {
    o.contacts(i) = info.forces[i].norm() > contact_threshold ? 1.0 : 0.0;
  }
  return o;
}

CriticObservation observe_critic(const SimState& s, const StepInfo& info, double contact_threshold) {
  CriticObservation c;
  c.actor = observe(s, info, contact_threshold);
  c.pose = s.state.p;
  c.velocity = s.velocity;
  // Net force on each fingertip is the reaction to the force it exerts.
  for (const Vec2& f : info.forces) c.forces.push_back(-f);
  return c;
}

double reward(const SimState& prev, const SimState& next, const StepInfo& info,
              const RewardConfig& config, double control_dt, const Vec2& start_position) {
  const double omega = (next.state.p.z() - prev.state.p.z()) / control_dt;
  double r = 0.0;
  if (contact_count(info, config.contact_threshold) >= config.reward_contacts) {
    r += config.w_rot * std::clamp(omega, -config.omega_max, config.omega_max);
  }
  r -= config.w_v * next.velocity.head<2>().norm();
  r -= config.w_pos * (next.state.p.head<2>() - start_position).norm();
  return r;
}

std::string to_string(Termination t) {
  switch (t) {
    case Termination::kNone: return "none";
    case Termination::kContacts: return "contacts";
    case Termination::kDrop: return "drop";
    case Termination::kHorizon: return "horizon";
  }
  return "?";
}

Termination terminate(const SimState& s, const StepInfo& info, int step, const RewardConfig& config,
                      const Simulator& sim) {
  if (sim.dropped(s)) return Termination::kDrop;
  if (contact_count(info, config.contact_threshold) < config.terminate_contacts) {
    return Termination::kContacts;
  }
  if (step >= config.horizon) return Termination::kHorizon;
  return Termination::kNone;
}

// ---------------------------------------------------------------------------
// Reset distributions

StableGraspSampler::StableGraspSampler(StabilityConfig stability, int max_attempts,
                                       double contact_spread, double free_probability,
                                       double grip_force)
    : stability_(stability),
      max_attempts_(max_attempts),
      spread_(contact_spread),
      free_probability_(free_probability),
      grip_(grip_force) {
  stability_.validate();
  if (max_attempts_ < 1) throw ConfigError("SGS max attempts must be >= 1");
  if (!(spread_ >= 0) || !(free_probability_ >= 0 && free_probability_ <= 1)) {
    throw ConfigError("SGS spread must be >= 0 and free probability in [0, 1]");
  }
}

double StableGraspSampler::rejection_rate() const {
  const long a = attempts_;
  return a == 0 ? 0.0 : 1.0 - static_cast<double>(accepted_) / static_cast<double>(a);
}

SimState StableGraspSampler::sample(std::mt19937_64& rng, const Simulator& sim) const {
  const HandModel& model = sim.model();
  const ObjectShape& shape = sim.shape();
  const int m = model.num_fingers();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Eigen::VectorXd lo = model.lower_limits(), hi = model.upper_limits();
  for (int attempt = 0; attempt < max_attempts_; ++attempt) {
    ++attempts_;
    const double theta = std::numbers::pi * (2.0 * unit(rng) - 1.0);
    int free_finger = -1;
    if (unit(rng) < free_probability_) free_finger = std::min(m - 1, static_cast<int>(unit(rng) * m));
    Eigen::VectorXd rest = 0.5 * (lo + hi);
    std::vector<std::optional<double>> angles(m);
    for (int i = 0; i < m; ++i) {
      const double jitter = spread_ * (unit(rng) - 0.5);
      if (i == free_finger) {
        for (int j = 0; j < 2; ++j) rest(2 * i + j) = lo(2 * i + j) + unit(rng) * (hi(2 * i + j) - lo(2 * i + j));
        continue;
      }
      const Vec2& base = model.fingers()[i].base;
      angles[i] = std::atan2(base.y(), base.x()) - theta + jitter;
    }
    auto grasp = tangent_grasp(model, shape, Eigen::Vector3d(0.0, 0.0, theta), angles, rest);
    if (!grasp) continue;
    auto penetrates = [&](const ContactSet& cs, int only) {
      return std::any_of(cs.contacts.begin(), cs.contacts.end(), [&](const ContactInfo& c) {
        return (only < 0 || c.finger == only) && c.surface_distance < -kDefaultContactTolerance;
      });
    };
    // A free finger is not part of the grasp; redraw its joints if they
    // landed inside the object.
    for (int redraw = 0; free_finger >= 0 && redraw < 20; ++redraw) {
      if (!penetrates(detect_contacts(model, shape, *grasp), free_finger)) break;
      for (int j = 2 * free_finger; j < 2 * free_finger + 2; ++j) {
        grasp->q(j) = lo(j) + unit(rng) * (hi(j) - lo(j));
      }
    }
    const ContactSet contacts = detect_contacts(model, shape, *grasp);
    const bool penetrating = penetrates(contacts, -1);
    if (penetrating) continue;
    if (!grasp_is_stable(contacts, *grasp, stability_, 3)) continue;
    SimState s = complete_with_squeeze(model, shape, *grasp, stability_, sim.config(), grip_);
    if (!grrt_stable(sim, s, 3)) continue;
    ++accepted_;
    return s;
  }
  throw RuntimeFailure("stable grasp sampler gave up after " + std::to_string(max_attempts_) +
                       " attempts on object '" + shape.name() + "'");
}

ExploredRestarts::ExploredRestarts(SimState initial, int capacity, double initial_fraction)
    : initial_(std::move(initial)), capacity_(capacity), initial_fraction_(initial_fraction) {
  if (capacity_ < 1) throw ConfigError("explored-restart capacity must be >= 1");
  if (!(initial_fraction_ >= 0 && initial_fraction_ <= 1)) {
    throw ConfigError("explored-restart initial fraction must lie in [0, 1]");
  }
}

SimState ExploredRestarts::sample(std::mt19937_64& rng, const Simulator&) const {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const bool from_initial = unit(rng) < initial_fraction_;
  if (from_initial || buffer_.empty()) return initial_;
  std::uniform_int_distribution<size_t> pick(0, buffer_.size() - 1);
  return buffer_[pick(rng)];
}

void ExploredRestarts::add_visits(const std::vector<SimState>& states) {
  for (const SimState& s : states) {
    if (static_cast<int>(buffer_.size()) < capacity_) {
      buffer_.push_back(s);
    } else {
      buffer_[next_] = s;
      next_ = (next_ + 1) % buffer_.size();
    }
  }
}

TreeResets::TreeResets(ResetSet set) : set_(std::move(set)) {
  if (set_.states.empty()) throw PreconditionError("tree resets need a non-empty reset set");
}

// ---------------------------------------------------------------------------
// Policy

Policy Policy::create(const HandModel& model, int hidden, double init_log_std, std::mt19937_64& rng) {
  Policy p;
  p.actor = Mlp({observation_size(model), hidden, hidden, model.dof()}, rng, 0.01);
  p.log_std = Eigen::VectorXd::Constant(model.dof(), init_log_std);
  p.critic = Mlp({critic_observation_size(model), hidden, hidden, 1}, rng, 1.0);
  p.clamp_log_std();
  return p;
}

void Policy::clamp_log_std() { log_std = log_std.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax); }

Eigen::VectorXd Policy::mean(const Eigen::VectorXd& obs) const { return actor.forward(obs).col(0); }

double Policy::value(const Eigen::VectorXd& critic_obs) const { return critic.forward(critic_obs)(0, 0); }

double gaussian_log_prob(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                         const Eigen::VectorXd& log_std) {
  const Eigen::ArrayXd inv_var = 1.0 / log_std.array().exp().square();
  const Eigen::ArrayXd diff = (x - mean).array();
  return -0.5 * (diff.square() * inv_var).sum() - log_std.sum() -
         0.5 * kLog2Pi * static_cast<double>(x.size());
}

namespace {

void append_sizes(std::string& out, const Mlp& net) {
  for (int s : net.sizes()) out += " " + std::to_string(s);
}

}  // namespace

std::string format_policy(const Policy& p, const std::string& config_hash) {
  std::string out = "# dexplore-policy v1\n";
  out += "# config_hash " + (config_hash.empty() ? std::string("-") : config_hash) + "\n";
  out += "actor_sizes";
  append_sizes(out, p.actor);
  out += "\ncritic_sizes";
  append_sizes(out, p.critic);
  out += "\nactor";
  append_vector(out, p.actor.parameters());
  out += "\nlog_std";
  append_vector(out, p.log_std);
  out += "\ncritic";
  append_vector(out, p.critic.parameters());
  out += "\n";
  return out;
}

Policy parse_policy(const std::string& text, std::string* config_hash) {
  std::istringstream in(text);
  std::string line;
  std::vector<int> actor_sizes, critic_sizes;
  Eigen::VectorXd actor, log_std, critic;
  std::string hash;
  bool magic = false;
  while (std::getline(in, line)) {
    const auto tok = split_ws(line);
    if (tok.empty()) continue;
    if (tok[0] == "#") {
      if (tok.size() >= 2 && tok[1] == "dexplore-policy") magic = true;
      if (tok.size() >= 3 && tok[1] == "config_hash") hash = tok[2] == "-" ? "" : std::string(tok[2]);
      continue;
    }
    const std::string key(tok[0]);
    size_t pos = 1;
    const int n = static_cast<int>(tok.size()) - 1;
    if (key == "actor_sizes" || key == "critic_sizes") {
      auto& dst = key == "actor_sizes" ? actor_sizes : critic_sizes;
      for (size_t i = 1; i < tok.size(); ++i) dst.push_back(std::stoi(std::string(tok[i])));
    } else if (key == "actor") {
      actor = take_vector(tok, pos, n);
    } else if (key == "log_std") {
      log_std = take_vector(tok, pos, n);
    } else if (key == "critic") {
      critic = take_vector(tok, pos, n);
    } else {
      throw ContractError("policy file: unknown record '" + key + "'");
    }
  }
  if (!magic || actor_sizes.size() < 2 || critic_sizes.size() < 2) {
    throw ContractError("policy file: missing header or network sizes");
  }
  std::mt19937_64 rng(0);
  Policy p;
  p.actor = Mlp(actor_sizes, rng);
  p.critic = Mlp(critic_sizes, rng);
  p.actor.set_parameters(actor);
  p.critic.set_parameters(critic);
  if (log_std.size() != p.actor.outputs()) throw ContractError("policy file: log_std size mismatch");
  p.log_std = log_std;
  if (config_hash) *config_hash = hash;
  return p;
}

// ---------------------------------------------------------------------------
// Environment

StepInfo probe_contacts(const Simulator& sim, const SimState& s) {
  StepInfo info;
  sim.step(s, s.setpoints, &info);
  return info;
}

RotationEnv::RotationEnv(Simulator sim, RewardConfig reward, double max_delta)
    : sim_(std::move(sim)), reward_(reward), max_delta_(max_delta) {
  reward_.validate();
  if (!(max_delta_ > 0)) throw ConfigError("action bound must be positive");
}

double RotationEnv::control_dt() const { return sim_.config().control_steps * sim_.config().dt; }

void RotationEnv::reset(const SimState& s) {
  state_ = s;
  info_ = probe_contacts(sim_, s);
  start_position_ = s.state.p.head<2>();
  steps_ = 0;
}

StepResult RotationEnv::step(const Eigen::VectorXd& delta) {
  if (delta.size() != sim_.model().dof()) throw ContractError("env step: action size mismatch");
  const Eigen::VectorXd d = delta.cwiseMax(-max_delta_).cwiseMin(max_delta_);
  const Action target = sim_.model().clamp(state_.setpoints + d);
  StepResult r;
  const SimState next = sim_.advance(state_, target, sim_.config().control_steps, &r.info);
  ++steps_;
  r.reward = reward(state_, next, r.info, reward_, control_dt(), start_position_);
  r.dtheta = next.state.p.z() - state_.state.p.z();
  r.done = terminate(next, r.info, steps_, reward_, sim_);
  state_ = next;
  info_ = r.info;
  return r;
}

Observation RotationEnv::observation() const { return observe(state_, info_, reward_.contact_threshold); }

CriticObservation RotationEnv::critic_observation() const {
  return observe_critic(state_, info_, reward_.contact_threshold);
}

// ---------------------------------------------------------------------------
// Rollouts

std::vector<EnvWorker> make_workers(const SimulatorFactory& factory, const RewardConfig& reward,
                                    const ResetDistribution& dist, int count, std::uint64_t seed) {
  std::vector<EnvWorker> workers;
  workers.reserve(count);
  for (int w = 0; w < count; ++w) {
    EnvWorker worker{RotationEnv(factory.make(), reward),
                     std::mt19937_64(derive_seed(seed, 0x5e5e7ULL, static_cast<std::uint64_t>(w))),
                     {}};
    worker.env.reset(dist.sample(worker.reset_rng, worker.env.simulator()));
    workers.push_back(std::move(worker));
  }
  return workers;
}

namespace {

struct WorkerTrace {
  std::vector<EpisodeStats> episodes;
  std::vector<SimState> visited;
};

void run_worker(const Policy& policy, EnvWorker& worker, const ResetDistribution& dist,
                int steps, std::uint64_t noise_seed, RolloutBatch& batch, int column0,
                WorkerTrace& trace, bool keep_visits) {
  std::mt19937_64 noise(noise_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Eigen::VectorXd sigma = policy.log_std.array().exp().matrix();
  for (int t = 0; t < steps; ++t) {
    const int col = column0 + t;
    const Eigen::VectorXd obs = worker.env.observation().vector();
    batch.obs.col(col) = obs;
    batch.critic_obs.col(col) = worker.env.critic_observation().vector();
    const Eigen::VectorXd mu = policy.mean(obs);
    Eigen::VectorXd a(mu.size());
    for (Eigen::Index j = 0; j < a.size(); ++j) a(j) = mu(j) + sigma(j) * normal(noise);
    batch.actions.col(col) = a;
    batch.log_probs(col) = gaussian_log_prob(a, mu, policy.log_std);
    const StepResult r = worker.env.step(a);
    batch.rewards(col) = r.reward;
    worker.running.reward += r.reward;
    worker.running.rotation += r.dtheta;
    worker.running.length += 1;
    const bool done = r.done != Termination::kNone;
    batch.dones[col] = done ? 1 : 0;
    if (done) {
      worker.running.reason = r.done;
      trace.episodes.push_back(worker.running);
      worker.running = {};
      worker.env.reset(dist.sample(worker.reset_rng, worker.env.simulator()));
    } else if (keep_visits) {
      trace.visited.push_back(worker.env.state());
    }
  }
}

}  // namespace

RolloutBatch collect_rollouts(const Policy& policy, std::vector<EnvWorker>& workers,
                              const ResetDistribution& dist, int steps_per_env,
                              std::uint64_t seed, int round, Execution execution) {
  const int envs = static_cast<int>(workers.size());
  const int n = envs * steps_per_env;
  RolloutBatch batch;
  batch.envs = envs;
  batch.steps_per_env = steps_per_env;
  batch.obs.resize(policy.actor.inputs(), n);
  batch.critic_obs.resize(policy.critic.inputs(), n);
  batch.actions.resize(policy.action_size(), n);
  batch.log_probs.resize(n);
  batch.rewards.resize(n);
  batch.dones.assign(n, 0);
  batch.last_values.resize(envs);
  std::vector<WorkerTrace> traces(envs);
  const bool keep_visits = dist.wants_visits();
  auto work = [&](int w) {
    run_worker(policy, workers[w], dist, steps_per_env,
               derive_seed(seed, static_cast<std::uint64_t>(round) + 1, static_cast<std::uint64_t>(w)),
               batch, w * steps_per_env, traces[w], keep_visits);
    batch.last_values(w) = policy.value(workers[w].env.critic_observation().vector());
  };
  if (execution == Execution::kSerial) {
    for (int w = 0; w < envs; ++w) work(w);
  } else {
#pragma omp parallel for schedule(dynamic, 1)
    for (int w = 0; w < envs; ++w) work(w);
  }
  for (auto& t : traces) {
    batch.episodes.insert(batch.episodes.end(), t.episodes.begin(), t.episodes.end());
    batch.visited.insert(batch.visited.end(), std::make_move_iterator(t.visited.begin()),
                         std::make_move_iterator(t.visited.end()));
  }
  return batch;
}

// ---------------------------------------------------------------------------
// PPO

void TrainerConfig::validate() const {
  if (updates < 0) throw ConfigError("trainer updates must be >= 0");
  if (envs < 1 || steps_per_update < envs || steps_per_update % envs != 0) {
    throw ConfigError("trainer steps_per_update must be a positive multiple of envs");
  }
  if (epochs < 1 || minibatch < 1) throw ConfigError("trainer epochs and minibatch must be >= 1");
  if (!(gamma > 0 && gamma <= 1) || !(lambda >= 0 && lambda <= 1)) {
    throw ConfigError("trainer gamma must lie in (0, 1] and lambda in [0, 1]");
  }
  if (!(clip >= 0)) throw ConfigError("trainer clip must be >= 0");
  if (!(actor_lr > 0) || !(critic_lr > 0)) throw ConfigError("learning rates must be positive");
  if (hidden < 1) throw ConfigError("hidden width must be >= 1");
  if (eval_every < 1 || eval_episodes < 0) throw ConfigError("bad evaluation schedule");
}

void compute_gae(const RolloutBatch& batch, const Eigen::VectorXd& values, double gamma,
                 double lambda, Eigen::VectorXd& advantages, Eigen::VectorXd& returns) {
  const int n = batch.size();
  advantages.resize(n);
  returns.resize(n);
  for (int w = 0; w < batch.envs; ++w) {
    double next_value = batch.last_values(w);
    double gae = 0.0;
    for (int t = batch.steps_per_env - 1; t >= 0; --t) {
      const int i = w * batch.steps_per_env + t;
      const double nonterminal = batch.dones[i] ? 0.0 : 1.0;
      const double delta = batch.rewards(i) + gamma * next_value * nonterminal - values(i);
      gae = delta + gamma * lambda * nonterminal * gae;
      advantages(i) = gae;
      returns(i) = gae + values(i);
      next_value = values(i);
    }
  }
}

LossTerms ppo_loss(const Policy& policy, const Eigen::MatrixXd& obs, const Eigen::MatrixXd& critic_obs,
                   const Eigen::MatrixXd& actions, const Eigen::VectorXd& old_log_probs,
                   const Eigen::VectorXd& advantages, const Eigen::VectorXd& returns, double clip,
                   double entropy_coef, PolicyGradient* grad) {
  const Eigen::Index b = obs.cols();
  if (b == 0) throw PreconditionError("ppo_loss on an empty batch");
  const double inv_b = 1.0 / static_cast<double>(b);
  Mlp::Cache actor_cache, critic_cache;
  const Eigen::MatrixXd mu = policy.actor.forward(obs, grad ? &actor_cache : nullptr);
  const Eigen::MatrixXd v = policy.critic.forward(critic_obs, grad ? &critic_cache : nullptr);
  const Eigen::ArrayXd sigma = policy.log_std.array().exp();
  const Eigen::ArrayXd inv_var = 1.0 / sigma.square();

  LossTerms out;
  Eigen::MatrixXd dmu = Eigen::MatrixXd::Zero(mu.rows(), b);
  Eigen::VectorXd dlog_std = Eigen::VectorXd::Zero(policy.log_std.size());
  const double lo = 1.0 - clip, hi = 1.0 + clip;
  for (Eigen::Index i = 0; i < b; ++i) {
    const Eigen::ArrayXd diff = (actions.col(i) - mu.col(i)).array();
    const double logp = gaussian_log_prob(actions.col(i), mu.col(i), policy.log_std);
    const double log_ratio = logp - old_log_probs(i);
    const double ratio = std::exp(log_ratio);
    const double a = advantages(i);
    const double s1 = ratio * a, s2 = std::clamp(ratio, lo, hi) * a;
    out.actor -= std::min(s1, s2) * inv_b;
    out.kl += ((ratio - 1.0) - log_ratio) * inv_b;
    if (ratio < lo || ratio > hi) out.clip_fraction += inv_b;
    // The unclipped branch carries the gradient when it is the minimum; on a
    // tie it does only strictly inside the clip range (clip(r) is flat outside).
    if (grad && (s1 < s2 || (s1 == s2 && ratio > lo && ratio < hi))) {
      // d(-ratio * a / b) / d logp
      const double g = -a * ratio * inv_b;
      dmu.col(i) = (g * diff * inv_var).matrix();
      dlog_std += (g * (diff.square() * inv_var - 1.0)).matrix();
    }
  }
  out.entropy = policy.log_std.sum() + 0.5 * (1.0 + kLog2Pi) * static_cast<double>(policy.log_std.size());
  out.actor -= entropy_coef * out.entropy;
  const Eigen::RowVectorXd err = v.row(0) - returns.transpose();
  out.critic = 0.5 * err.squaredNorm() * inv_b;
  if (grad) {
    grad->actor = policy.actor.backward(actor_cache, dmu);
    grad->log_std = dlog_std - entropy_coef * Eigen::VectorXd::Ones(dlog_std.size());
    grad->critic = policy.critic.backward(critic_cache, err * inv_b);
  }
  return out;
}

PpoTrainer::PpoTrainer(Policy policy, TrainerConfig config)
    : policy_(std::move(policy)),
      config_(config),
      actor_opt_(policy_.actor.parameter_count(), config.actor_lr),
      std_opt_(static_cast<int>(policy_.log_std.size()), config.actor_lr),
      critic_opt_(policy_.critic.parameter_count(), config.critic_lr) {
  config_.validate();
}

namespace {

Eigen::MatrixXd gather(const Eigen::MatrixXd& m, const std::vector<int>& idx, size_t begin, size_t end) {
  Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(end - begin));
  for (size_t k = begin; k < end; ++k) out.col(static_cast<Eigen::Index>(k - begin)) = m.col(idx[k]);
  return out;
}

Eigen::VectorXd gather(const Eigen::VectorXd& v, const std::vector<int>& idx, size_t begin, size_t end) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(end - begin));
  for (size_t k = begin; k < end; ++k) out(static_cast<Eigen::Index>(k - begin)) = v(idx[k]);
  return out;
}

void clip_norm(Eigen::VectorXd& a, Eigen::VectorXd* b, double max_norm) {
  const double norm = std::sqrt(a.squaredNorm() + (b ? b->squaredNorm() : 0.0));
  if (max_norm > 0 && norm > max_norm) {
    a *= max_norm / norm;
    if (b) *b *= max_norm / norm;
  }
}

}  // namespace

UpdateDiagnostics PpoTrainer::update(const RolloutBatch& batch, int round) {
  UpdateDiagnostics diag;
  const int n = batch.size();
  if (n == 0) throw PreconditionError("PPO update on an empty batch");
  const Eigen::VectorXd values = policy_.critic.forward(batch.critic_obs).row(0).transpose();
  Eigen::VectorXd adv, ret;
  compute_gae(batch, values, config_.gamma, config_.lambda, adv, ret);
  const double ret_var = (ret.array() - ret.mean()).square().mean();
  const Eigen::VectorXd resid = ret - values;
  const double resid_var = (resid.array() - resid.mean()).square().mean();
  diag.explained_variance = ret_var > 0 ? 1.0 - resid_var / ret_var : 0.0;

  const double adv_std = std::sqrt((adv.array() - adv.mean()).square().mean());
  adv = (adv.array() - adv.mean()) / (adv_std + 1e-8);

  // Old log-probabilities are recomputed per minibatch with a frozen copy,
  // through the same arithmetic as the loss, so the first ratio is exactly 1.
  const Policy old = policy_;
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(derive_seed(config_.seed, 0xb47c4ULL, static_cast<std::uint64_t>(round)));
  const int mb = std::min(config_.minibatch, n);
  int count = 0;
  for (int epoch = 0; epoch < config_.epochs; ++epoch) {
    std::shuffle(idx.begin(), idx.end(), rng);
    for (int start = 0; start + mb <= n; start += mb) {
      const size_t s = start, e = start + mb;
      const Eigen::MatrixXd obs = gather(batch.obs, idx, s, e), act = gather(batch.actions, idx, s, e);
      const Eigen::MatrixXd old_mu = old.actor.forward(obs);
      Eigen::VectorXd old_logp(mb);
      for (int i = 0; i < mb; ++i) old_logp(i) = gaussian_log_prob(act.col(i), old_mu.col(i), old.log_std);
      PolicyGradient g;
      const LossTerms loss = ppo_loss(policy_, obs, gather(batch.critic_obs, idx, s, e), act, old_logp,
                                      gather(adv, idx, s, e), gather(ret, idx, s, e), config_.clip,
                                      config_.entropy_coef, &g);
      const bool finite = std::isfinite(loss.actor) && std::isfinite(loss.critic) &&
                          g.actor.allFinite() && g.log_std.allFinite() && g.critic.allFinite();
      if (!finite) {
        diag.aborted = true;
        log_info("PPO update " + std::to_string(round) + " aborted: non-finite loss");
        return diag;
      }
      clip_norm(g.actor, &g.log_std, config_.max_grad_norm);
      clip_norm(g.critic, nullptr, config_.max_grad_norm);
      Eigen::VectorXd theta = policy_.actor.parameters();
      actor_opt_.step(theta, g.actor);
      policy_.actor.set_parameters(theta);
      std_opt_.step(policy_.log_std, g.log_std);
      policy_.clamp_log_std();
      theta = policy_.critic.parameters();
      critic_opt_.step(theta, g.critic);
      policy_.critic.set_parameters(theta);

      diag.loss.actor += loss.actor;
      diag.loss.critic += loss.critic;
      diag.loss.entropy += loss.entropy;
      diag.loss.kl += loss.kl;
      diag.loss.clip_fraction += loss.clip_fraction;
      ++count;
    }
  }
  if (count > 0) {
    diag.loss.actor /= count;
    diag.loss.critic /= count;
    diag.loss.entropy /= count;
    diag.loss.kl /= count;
    diag.loss.clip_fraction /= count;
  }
  return diag;
}

double gradient_check(const Policy& policy, const Eigen::MatrixXd& obs,
                      const Eigen::MatrixXd& critic_obs, const Eigen::MatrixXd& actions,
                      const Eigen::VectorXd& old_log_probs, const Eigen::VectorXd& advantages,
                      const Eigen::VectorXd& returns, double clip, double entropy_coef,
                      int samples, std::uint64_t seed) {
  PolicyGradient g;
  ppo_loss(policy, obs, critic_obs, actions, old_log_probs, advantages, returns, clip, entropy_coef, &g);
  const int na = static_cast<int>(g.actor.size()), ns = static_cast<int>(g.log_std.size()),
            nc = static_cast<int>(g.critic.size());
  const int total = na + ns + nc;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, total - 1);
  auto loss_with = [&](int index, double delta) {
    Policy p = policy;
    if (index < na) {
      Eigen::VectorXd t = p.actor.parameters();
      t(index) += delta;
      p.actor.set_parameters(t);
    } else if (index < na + ns) {
      p.log_std(index - na) += delta;
    } else {
      Eigen::VectorXd t = p.critic.parameters();
      t(index - na - ns) += delta;
      p.critic.set_parameters(t);
    }
    const LossTerms l = ppo_loss(p, obs, critic_obs, actions, old_log_probs, advantages, returns,
                                 clip, entropy_coef, nullptr);
    return l.actor + l.critic;
  };
  double worst = 0.0;
  for (int s = 0; s < samples; ++s) {
    const int index = pick(rng);
    const double analytic = index < na        ? g.actor(index)
                            : index < na + ns ? g.log_std(index - na)
                                              : g.critic(index - na - ns);
    constexpr double h = 1e-6;
    const double numeric = (loss_with(index, h) - loss_with(index, -h)) / (2 * h);
    const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    worst = std::max(worst, std::abs(analytic - numeric) / scale);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Training driver

EpisodeStats evaluate_episode(const Policy& policy, RotationEnv& env, const SimState& start) {
  env.reset(start);
  EpisodeStats stats;
  while (true) {
    const StepResult r = env.step(policy.mean(env.observation().vector()));
    stats.reward += r.reward;
    stats.rotation += r.dtheta;
    stats.length += 1;
    if (r.done != Termination::kNone) {
      stats.reason = r.done;
      return stats;
    }
  }
}

namespace {

EvalMetrics run_eval(const Policy& policy, RotationEnv& env, const SimState& start, int episodes,
                     int update, long env_steps) {
  EvalMetrics m;
  m.update = update;
  m.env_steps = env_steps;
  for (int e = 0; e < episodes; ++e) {
    const EpisodeStats s = evaluate_episode(policy, env, start);
    m.mean_rotation += s.rotation / episodes;
    m.mean_reward += s.reward / episodes;
    m.mean_length += static_cast<double>(s.length) / episodes;
  }
  return m;
}

}  // namespace

TrainResult train(const SimulatorFactory& factory, const RewardConfig& reward,
                  const TrainerConfig& config, ResetDistribution& dist, const SimState& eval_start) {
  config.validate();
  reward.validate();
  std::mt19937_64 init_rng(derive_seed(config.seed, 0x1417ULL));
  PpoTrainer trainer(Policy::create(factory.model(), config.hidden, config.init_log_std, init_rng),
                     config);
  TrainResult result{trainer.policy(), {}, {}};
  if (config.updates == 0) return result;
  std::vector<EnvWorker> workers = make_workers(factory, reward, dist, config.envs, config.seed);
  RotationEnv eval_env(factory.make(), reward);
  const int steps_per_env = config.steps_per_update / config.envs;
  long env_steps = 0;
  for (int u = 1; u <= config.updates; ++u) {
    const RolloutBatch batch = collect_rollouts(trainer.policy(), workers, dist, steps_per_env,
                                                config.seed, u, config.execution);
    env_steps += batch.size();
    if (dist.wants_visits()) dist.add_visits(batch.visited);
    UpdateMetrics m;
    m.update = u;
    m.env_steps = env_steps;
    m.episodes = static_cast<int>(batch.episodes.size());
    if (batch.episodes.empty()) {
      m.mean_episode_reward = m.mean_episode_rotation = m.mean_episode_length = kNan;
    } else {
      for (const auto& e : batch.episodes) {
        m.mean_episode_reward += e.reward / m.episodes;
        m.mean_episode_rotation += e.rotation / m.episodes;
        m.mean_episode_length += static_cast<double>(e.length) / m.episodes;
      }
    }
    m.diagnostics = trainer.update(batch, u);
    result.updates.push_back(m);
    if (config.eval_episodes > 0 && (u % config.eval_every == 0 || u == config.updates)) {
      result.evals.push_back(
          run_eval(trainer.policy(), eval_env, eval_start, config.eval_episodes, u, env_steps));
    }
  }
  result.policy = trainer.policy();
  return result;
}

std::string metrics_csv_header() {
  return "update,env_steps,mean_episode_reward,mean_episode_rotation,mean_episode_length,episodes,"
         "actor_loss,critic_loss,entropy,kl,clip_fraction,explained_variance,aborted\n";
}

std::string format_metrics_row(const UpdateMetrics& m) {
  const auto& d = m.diagnostics;
  std::string row = std::to_string(m.update) + "," + std::to_string(m.env_steps);
  for (double v : {m.mean_episode_reward, m.mean_episode_rotation, m.mean_episode_length}) {
    row += "," + format_double(v);
  }
  row += "," + std::to_string(m.episodes);
  for (double v : {d.loss.actor, d.loss.critic, d.loss.entropy, d.loss.kl, d.loss.clip_fraction,
                   d.explained_variance}) {
    row += "," + format_double(v);
  }
  row += std::string(",") + (d.aborted ? "1" : "0") + "\n";
  return row;
}

std::string eval_csv_header() { return "update,env_steps,mean_rotation,mean_reward,mean_length\n"; }

std::string format_eval_row(const EvalMetrics& m) {
  return std::to_string(m.update) + "," + std::to_string(m.env_steps) + "," +
         format_double(m.mean_rotation) + "," + format_double(m.mean_reward) + "," +
         format_double(m.mean_length) + "\n";
}

}  // namespace dexplore

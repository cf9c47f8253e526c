#pragma once

#include <Eigen/Dense>

#include <atomic>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "dexplore/dynamics.hpp"
#include "dexplore/nn.hpp"
#include "dexplore/planners.hpp"
#include "dexplore/reset_set.hpp"
#include "dexplore/stability.hpp"

namespace dexplore {

// ---------------------------------------------------------------------------
// Observations, reward, termination

/// What the actor sees: joint positions, setpoints and binary touch flags.
/// There is deliberately no object pose here.
struct Observation {
  Eigen::VectorXd q;
  Eigen::VectorXd setpoints;
  Eigen::VectorXd contacts;  // 0 or 1 per finger

  Eigen::VectorXd vector() const;
};

struct CriticObservation {
  Observation actor;
  Eigen::Vector3d pose;
  Eigen::Vector3d velocity;
  std::vector<Vec2> forces;  // net force on each fingertip, N

  /// Network input. Pose enters as (x, y) in units of 2 cm and (sin, cos) of
  /// the angle; forces in units of 2 N.
  Eigen::VectorXd vector() const;
};

int observation_size(const HandModel& model);
int critic_observation_size(const HandModel& model);

struct RewardConfig {
  double w_rot = 1.0;
  double omega_max = 1.0;  // rad/s
  double w_v = 0.3;
  double w_pos = 1.0;
  int reward_contacts = 3;
  int terminate_contacts = 2;
  int horizon = 200;              // policy steps
  double contact_threshold = 0.0;  // N; a flag is set when |F| exceeds this

  void validate() const;
};

/// c_i = 1 iff finger i's contact force magnitude exceeds the threshold.
Observation observe(const SimState& s, const StepInfo& info, double contact_threshold = 0.0);
CriticObservation observe_critic(const SimState& s, const StepInfo& info,
                                 double contact_threshold = 0.0);
int contact_count(const StepInfo& info, double contact_threshold);

/// w_rot clip(dtheta / dt_control) [contacts >= 3] - w_v |v_xy| - w_pos |p_xy - start|.
double reward(const SimState& prev, const SimState& next, const StepInfo& info,
              const RewardConfig& config, double control_dt, const Vec2& start_position);

enum class Termination { kNone, kContacts, kDrop, kHorizon };
std::string to_string(Termination t);

Termination terminate(const SimState& s, const StepInfo& info, int step, const RewardConfig& config,
                      const Simulator& sim);

// ---------------------------------------------------------------------------
// Reset distributions

class ResetDistribution {
 public:
  virtual ~ResetDistribution() = default;
  virtual std::string name() const = 0;
  /// Must be safe to call concurrently from different workers.
  virtual SimState sample(std::mt19937_64& rng, const Simulator& sim) const = 0;
  /// Explored-restarts hook: visited non-terminal states, in a fixed order.
  virtual bool wants_visits() const { return false; }
  virtual void add_visits(const std::vector<SimState>&) {}
};

class FixedInit : public ResetDistribution {
 public:
  explicit FixedInit(SimState state) : state_(std::move(state)) {}
  std::string name() const override { return "fixed"; }
  SimState sample(std::mt19937_64&, const Simulator&) const override { return state_; }

 private:
  SimState state_;
};

/// Random grasps: random object angle, per-finger contact points scattered
/// around the point facing each finger's base, one finger left free with
/// random joints at random. Rejection-sampled until the grasp has >= 3
/// contacts, passes the force-closure test and the rollout check.
class StableGraspSampler : public ResetDistribution {
 public:
  StableGraspSampler(StabilityConfig stability, int max_attempts = 1000,
                     double contact_spread = 0.6, double free_probability = 0.3,
                     double grip_force = 2.0);
  std::string name() const override { return "sgs"; }
  SimState sample(std::mt19937_64& rng, const Simulator& sim) const override;

  long attempts() const { return attempts_; }
  long accepted() const { return accepted_; }
  double rejection_rate() const;

 private:
  StabilityConfig stability_;
  int max_attempts_;
  double spread_, free_probability_, grip_;
  mutable std::atomic<long> attempts_{0};
  mutable std::atomic<long> accepted_{0};
};

/// Uniform restarts over states the policy itself visited, mixed 50/50 with
/// the initial state. The buffer is a ring of fixed capacity.
class ExploredRestarts : public ResetDistribution {
 public:
  ExploredRestarts(SimState initial, int capacity = 10000, double initial_fraction = 0.5);
  std::string name() const override { return "explored"; }
  SimState sample(std::mt19937_64& rng, const Simulator& sim) const override;
  bool wants_visits() const override { return true; }
  void add_visits(const std::vector<SimState>& states) override;
  int buffer_size() const { return static_cast<int>(buffer_.size()); }
  const std::vector<SimState>& buffer() const { return buffer_; }

 private:
  SimState initial_;
  int capacity_;
  double initial_fraction_;
  std::vector<SimState> buffer_;
  size_t next_ = 0;
};

class TreeResets : public ResetDistribution {
 public:
  explicit TreeResets(ResetSet set);
  std::string name() const override { return "tree"; }
  SimState sample(std::mt19937_64& rng, const Simulator&) const override { return set_.draw(rng); }
  const ResetSet& set() const { return set_; }

 private:
  ResetSet set_;
};

// ---------------------------------------------------------------------------
// Policy

/// Diagonal-Gaussian actor over setpoint deltas plus a value critic that
/// additionally sees the object state.
struct Policy {
  Mlp actor;
  Eigen::VectorXd log_std;
  Mlp critic;

  static constexpr double kLogStdMin = -5.0;
  static constexpr double kLogStdMax = 1.0;

  static Policy create(const HandModel& model, int hidden, double init_log_std,
                       std::mt19937_64& rng);
  int action_size() const { return static_cast<int>(log_std.size()); }
  void clamp_log_std();

  Eigen::VectorXd mean(const Eigen::VectorXd& obs) const;
  double value(const Eigen::VectorXd& critic_obs) const;
};

double gaussian_log_prob(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                         const Eigen::VectorXd& log_std);

std::string format_policy(const Policy& p, const std::string& config_hash);
Policy parse_policy(const std::string& text, std::string* config_hash = nullptr);

// ---------------------------------------------------------------------------
// Environment and rollouts

struct StepResult {
  double reward = 0.0;
  double dtheta = 0.0;
  Termination done = Termination::kNone;
  StepInfo info;
};

/// One hand/object episode at a time. Actions are setpoint deltas, clamped
/// to +-max_delta and added to the current setpoints.
class RotationEnv {
 public:
  RotationEnv(Simulator sim, RewardConfig reward, double max_delta = 0.15);

  void reset(const SimState& s);
  StepResult step(const Eigen::VectorXd& delta);

  const SimState& state() const { return state_; }
  const StepInfo& info() const { return info_; }
  const Simulator& simulator() const { return sim_; }
  const RewardConfig& reward_config() const { return reward_; }
  Observation observation() const;
  CriticObservation critic_observation() const;
  int steps() const { return steps_; }
  double control_dt() const;

 private:
  Simulator sim_;
  RewardConfig reward_;
  double max_delta_;
  SimState state_;
  StepInfo info_;
  Vec2 start_position_ = Vec2::Zero();
  int steps_ = 0;
};

/// Contact forces of one simulator step from `s` with its own setpoints.
/// Gives freshly reset states their touch flags; the stepped state is dropped.
StepInfo probe_contacts(const Simulator& sim, const SimState& s);

struct EpisodeStats {
  double reward = 0.0;
  double rotation = 0.0;  // sum of per-step dtheta
  int length = 0;
  Termination reason = Termination::kNone;
};

struct RolloutBatch {
  int envs = 0;
  int steps_per_env = 0;
  Eigen::MatrixXd obs;         // (obs_size x N), env-major
  Eigen::MatrixXd critic_obs;  // (critic_size x N)
  Eigen::MatrixXd actions;     // raw Gaussian samples
  Eigen::VectorXd log_probs;
  Eigen::VectorXd rewards;
  std::vector<char> dones;
  Eigen::VectorXd last_values;  // bootstrap value per env
  std::vector<EpisodeStats> episodes;  // finished during this batch, env order
  std::vector<SimState> visited;       // non-terminal next states, env order

  int size() const { return static_cast<int>(rewards.size()); }
};

/// A persistent environment plus its own reset RNG.
struct EnvWorker {
  RotationEnv env;
  std::mt19937_64 reset_rng;
  EpisodeStats running;
};

std::vector<EnvWorker> make_workers(const SimulatorFactory& factory, const RewardConfig& reward,
                                    const ResetDistribution& dist, int count, std::uint64_t seed);

/// Steps every worker `steps_per_env` times with the stochastic policy.
/// Action noise for worker w in round `round` comes from its own stream, so
/// serial and parallel execution produce identical batches.
RolloutBatch collect_rollouts(const Policy& policy, std::vector<EnvWorker>& workers,
                              const ResetDistribution& dist, int steps_per_env,
                              std::uint64_t seed, int round, Execution execution);

// ---------------------------------------------------------------------------
// PPO

struct TrainerConfig {
  int updates = 300;
  int steps_per_update = 4096;
  int envs = 16;
  int epochs = 5;
  int minibatch = 1024;
  double gamma = 0.99;
  double lambda = 0.95;
  double clip = 0.2;
  double actor_lr = 3e-4;
  double critic_lr = 1e-3;
  double entropy_coef = 0.0;
  double max_grad_norm = 0.5;
  int hidden = 64;
  double init_log_std = -2.5;
  int eval_every = 10;
  int eval_episodes = 1;
  std::uint64_t seed = 1;
  Execution execution = Execution::kParallel;

  void validate() const;
};

/// Advantages and returns by generalised advantage estimation.
void compute_gae(const RolloutBatch& batch, const Eigen::VectorXd& values, double gamma,
                 double lambda, Eigen::VectorXd& advantages, Eigen::VectorXd& returns);

struct LossTerms {
  double actor = 0.0;
  double critic = 0.0;
  double entropy = 0.0;
  double kl = 0.0;        // mean (r - 1) - log r
  double clip_fraction = 0.0;
};

struct PolicyGradient {
  Eigen::VectorXd actor;  // actor network parameters
  Eigen::VectorXd log_std;
  Eigen::VectorXd critic;
};

/// Clipped-surrogate actor loss (minus entropy bonus) and squared-error
/// critic loss on the given columns, with analytic gradients.
LossTerms ppo_loss(const Policy& policy, const Eigen::MatrixXd& obs, const Eigen::MatrixXd& critic_obs,
                   const Eigen::MatrixXd& actions, const Eigen::VectorXd& old_log_probs,
                   const Eigen::VectorXd& advantages, const Eigen::VectorXd& returns, double clip,
                   double entropy_coef, PolicyGradient* grad);

struct UpdateDiagnostics {
  LossTerms loss;
  double explained_variance = 0.0;
  bool aborted = false;
};

class PpoTrainer {
 public:
  PpoTrainer(Policy policy, TrainerConfig config);
  /// One PPO update on a collected batch.
  UpdateDiagnostics update(const RolloutBatch& batch, int round);
  const Policy& policy() const { return policy_; }

 private:
  Policy policy_;
  TrainerConfig config_;
  Adam actor_opt_, std_opt_, critic_opt_;
};

/// Central finite differences against ppo_loss gradients over `samples`
/// parameters drawn at random; returns the maximum relative error.
double gradient_check(const Policy& policy, const Eigen::MatrixXd& obs,
                      const Eigen::MatrixXd& critic_obs, const Eigen::MatrixXd& actions,
                      const Eigen::VectorXd& old_log_probs, const Eigen::VectorXd& advantages,
                      const Eigen::VectorXd& returns, double clip, double entropy_coef,
                      int samples, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Training driver

struct UpdateMetrics {
  int update = 0;
  long env_steps = 0;
  double mean_episode_reward = 0.0;  // NaN when no episode finished
  double mean_episode_rotation = 0.0;
  double mean_episode_length = 0.0;
  int episodes = 0;
  UpdateDiagnostics diagnostics;
};

struct EvalMetrics {
  int update = 0;
  long env_steps = 0;
  double mean_rotation = 0.0;
  double mean_reward = 0.0;
  double mean_length = 0.0;
};

/// Runs the deterministic (mean-action) policy from `start` until termination.
EpisodeStats evaluate_episode(const Policy& policy, RotationEnv& env, const SimState& start);

struct TrainResult {
  Policy policy;
  std::vector<UpdateMetrics> updates;
  std::vector<EvalMetrics> evals;
};

TrainResult train(const SimulatorFactory& factory, const RewardConfig& reward,
                  const TrainerConfig& config, ResetDistribution& dist, const SimState& eval_start);

std::string metrics_csv_header();
std::string format_metrics_row(const UpdateMetrics& m);
std::string eval_csv_header();
std::string format_eval_row(const EvalMetrics& m);

}  // namespace dexplore

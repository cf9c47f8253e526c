#include "dexplore/planners.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "dexplore/errors.hpp"
#include "dexplore/io.hpp"

namespace dexplore {

namespace {

// RNG stream ids per iteration.
std::uint64_t sample_stream(std::uint64_t seed, int iteration) {
  return derive_seed(seed, 2ULL * static_cast<std::uint64_t>(iteration), 0);
}

std::uint64_t action_stream(std::uint64_t seed, int iteration, int k) {
  return derive_seed(seed, 2ULL * static_cast<std::uint64_t>(iteration) + 1,
                     static_cast<std::uint64_t>(k));
}

std::vector<std::vector<int>> triples(const std::vector<int>& fingers) {
  std::vector<std::vector<int>> out;
  const int n = static_cast<int>(fingers.size());
  for (int a = 0; a < n; ++a) {
    for (int b = a + 1; b < n; ++b) {
      for (int c = b + 1; c < n; ++c) out.push_back({fingers[a], fingers[b], fingers[c]});
    }
  }
  return out;
}

// Largest s in [0, 1] keeping q + s * dq inside the joint limits.
double limit_scale(const HandModel& model, const Eigen::VectorXd& q, const Eigen::VectorXd& dq) {
  const Eigen::VectorXd lo = model.lower_limits(), hi = model.upper_limits();
  double s = 1.0;
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    if (dq(i) > 0) s = std::min(s, std::max(0.0, (hi(i) - q(i)) / dq(i)));
    if (dq(i) < 0) s = std::min(s, std::max(0.0, (lo(i) - q(i)) / dq(i)));
  }
  return s;
}

}  // namespace

void PlannerConfig::validate() const {
  if (max_nodes < 1) throw ConfigError("planner max_nodes must be >= 1");
  if (k_max < 1) throw ConfigError("planner k_max must be >= 1");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("planner alpha must lie in (0, 1]");
  if (!(weights.joint > 0 && weights.position > 0 && weights.angle > 0)) {
    throw ConfigError("distance weights must be positive");
  }
  if (!(resnap_threshold >= 0.0)) throw ConfigError("resnap threshold must be >= 0");
  if (!(action_delta > 0.0)) throw ConfigError("action delta must be positive");
  if (coverage_every < 1) throw ConfigError("coverage interval must be >= 1");
}

double PlannerConfig::theta_window(int nodes) const {
  return 2.0 * std::numbers::pi * (1.0 + static_cast<double>(nodes) / max_nodes);
}

SamplingBounds default_bounds(const HandModel& model) {
  SamplingBounds b;
  b.q_lower = model.lower_limits();
  b.q_upper = model.upper_limits();
  return b;
}

State sample_state(const SamplingBounds& bounds, double theta_center, double theta_half_width,
                   std::mt19937_64& rng) {
  auto uniform = [&rng](double lo, double hi) {
    if (!(hi > lo)) return lo;
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  State s;
  s.q.resize(bounds.q_lower.size());
  for (Eigen::Index i = 0; i < s.q.size(); ++i) s.q(i) = uniform(bounds.q_lower(i), bounds.q_upper(i));
  s.p.x() = uniform(bounds.xy_lower.x(), bounds.xy_upper.x());
  s.p.y() = uniform(bounds.xy_lower.y(), bounds.xy_upper.y());
  s.p.z() = uniform(theta_center - theta_half_width, theta_center + theta_half_width);
  return s;
}

Eigen::MatrixXd null_space_projector(const Eigen::MatrixXd& n) {
  const Eigen::Index cols = n.cols();
  Eigen::MatrixXd p = Eigen::MatrixXd::Identity(cols, cols);
  if (n.rows() == 0) return p;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(n, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  const double cutoff = 1e-8 * std::max(sv.size() ? sv(0) : 0.0, 1e-300);
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > cutoff) {
      const Eigen::VectorXd v = svd.matrixV().col(i);
      p.noalias() -= v * v.transpose();
    }
  }
  return p;
}

State project_extension(const HandModel& model, const State& x_node, const ContactSet& contacts,
                        const Eigen::VectorXd& delta_des, std::span<const int> subset,
                        double alpha) {
  if (delta_des.size() != model.dof() + 3) throw ContractError("project_extension: bad delta size");
  const Eigen::MatrixXd n = constraint_matrix(model, x_node, contacts, subset);
  const Eigen::VectorXd step = alpha * (null_space_projector(n) * delta_des);
  State out = State::from_stacked(x_node.stacked() + step, model.dof());
  out.q = model.clamp(out.q);
  return out;
}

ResnapReport resnap_contacts(const HandModel& model, const ObjectShape& shape, const State& state,
                             double threshold, double tolerance) {
  ResnapReport report{state, {}, {}};
  const ContactSet initial = detect_contacts(model, shape, state, tolerance);
  for (const ContactInfo& ci : initial.contacts) {
    const double gap = ci.surface_distance;
    if (std::abs(gap) <= tolerance || std::abs(gap) > threshold) continue;
    const int f = ci.finger;
    State trial = report.state;
    bool converged = false;
    for (int it = 0; it < 50; ++it) {
      const auto fk = forward_kinematics(model, trial.q);
      const Vec2 local = world_to_object(trial.p, fk[f].tip);
      const SurfaceQuery sq = shape.query(local);
      const double g = sq.signed_distance - model.tip_radius();
      if (std::abs(g) < 1e-3 * tolerance) {
        converged = true;
        break;
      }
      const double c = std::cos(trial.p.z()), s = std::sin(trial.p.z());
      const Vec2 outward(c * sq.outward.x() - s * sq.outward.y(),
                         s * sq.outward.x() + c * sq.outward.y());
      const Vec2 dtip = -g * outward;
      const Eigen::Matrix2d j = finger_point_jacobian(model, trial.q, f, fk[f].tip);
      constexpr double kDamping = 1e-3;
      const Eigen::Vector2d dq =
          j.transpose() * (j * j.transpose() + kDamping * kDamping * Eigen::Matrix2d::Identity())
                              .ldlt()
                              .solve(dtip);
      trial.q.segment<2>(2 * f) += dq;
      trial.q = model.clamp(trial.q);
    }
    if (converged) {
      report.state = trial;
      report.moved.push_back(f);
    } else {
      report.failed.push_back(f);
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// M-RRT

PlanResult grow_mrrt(const State& root, const PlannerConfig& config, const HandModel& model,
                     const ObjectShape& shape, const StabilityConfig& stability) {
  config.validate();
  stability.validate();
  const ContactSet root_contacts = detect_contacts(model, shape, root, config.contact_tolerance);
  if (!grasp_is_stable(root_contacts, root, stability, config.min_contacts)) {
    throw RuntimeFailure("M-RRT root is not a stable grasp with >= " +
                         std::to_string(config.min_contacts) + " contacts");
  }
  PlanResult result{ExplorationTree(PlannerKind::kMRRT, config.weights), {}, 0};
  ExplorationTree& tree = result.tree;
  TreeNode root_node;
  root_node.state = root;
  tree.add(root_node);
  const SamplingBounds bounds = default_bounds(model);
  const int cap = config.iteration_cap();

  int it = 0;
  while (tree.size() < config.max_nodes && it < cap) {
    ++it;
    std::mt19937_64 rng(sample_stream(config.seed, it));
    const State x_sample =
        sample_state(bounds, root.p.z(), config.theta_window(tree.size()), rng);
    const TreeNode& node = tree.nearest(x_sample);
    const Eigen::VectorXd delta = x_sample.stacked() - node.state.stacked();
    const ContactSet contacts = detect_contacts(model, shape, node.state, config.contact_tolerance);

    double best_dist = std::numeric_limits<double>::infinity();
    std::optional<State> best;
    double best_residual = 0.0;
    for (const auto& subset : triples(contacts.active_fingers())) {
      const Eigen::MatrixXd n = constraint_matrix(model, node.state, contacts, subset);
      Eigen::VectorXd step = null_space_projector(n) * delta;
      const double len = step.norm();
      if (len < 1e-12) continue;
      step *= std::min(config.alpha, len) / len;
      step *= limit_scale(model, node.state.q, step.head(model.dof()));
      if (step.norm() < 1e-12) continue;
      const State projected = State::from_stacked(node.state.stacked() + step, model.dof());
      const double residual = (n * step).norm();
      const ResnapReport snapped =
          resnap_contacts(model, shape, projected, config.resnap_threshold, config.contact_tolerance);
      const State& candidate = snapped.state;
      const ContactSet cc = detect_contacts(model, shape, candidate, config.contact_tolerance);
      const bool penetrating = std::any_of(cc.contacts.begin(), cc.contacts.end(),
                                           [&](const ContactInfo& c) {
                                             return c.surface_distance < -config.contact_tolerance;
                                           });
      if (penetrating) continue;
      if (!grasp_is_stable(cc, candidate, stability, config.min_contacts)) continue;
      const double d = distance(x_sample, candidate, config.weights);
      if (d < best_dist) {
        best_dist = d;
        best = candidate;
        best_residual = residual;
      }
    }
    if (best) {
      TreeNode child;
      child.parent = node.id;
      child.state = *best;
      child.edge_residual = best_residual;
      tree.add(std::move(child));
    }
    if (it % config.coverage_every == 0) {
      result.coverage.push_back({it, tree.size(), tree.max_rotation()});
    }
  }
  if (result.coverage.empty() || result.coverage.back().iteration != it) {
    result.coverage.push_back({it, tree.size(), tree.max_rotation()});
  }
  result.iterations = it;
  return result;
}

// ---------------------------------------------------------------------------
// G-RRT

Action sample_action(const HandModel& model, const Eigen::VectorXd& q_node, double delta,
                     std::uint64_t seed, int iteration, int k) {
  std::mt19937_64 rng(action_stream(seed, iteration, k));
  std::uniform_real_distribution<double> u(-delta, delta);
  Action a = q_node;
  for (Eigen::Index i = 0; i < a.size(); ++i) a(i) += u(rng);
  return model.clamp(a);
}

bool grrt_stable(const Simulator& sim, const SimState& s, int min_contacts, double tolerance) {
  if (min_contacts > 0 &&
      detect_contacts(sim.model(), sim.shape(), s.state, tolerance).count() < min_contacts) {
    return false;
  }
  return sim.rollout_stability_check(s);
}

namespace {

struct Candidate {
  SimState state;
  Action action;
  double distance = 0.0;
};

Candidate simulate_candidate(const Simulator& sim, const SimState& node, const State& x_sample,
                             const PlannerConfig& config, int iteration, int k) {
  Candidate c;
  c.action = sample_action(sim.model(), node.state.q, config.action_delta, config.seed, iteration, k);
  const SimState after = sim.advance(node, c.action, sim.config().control_steps);
  c.state = SimState::at_rest(after.state, c.action);
  c.distance = distance(x_sample, c.state.state, config.weights);
  return c;
}

}  // namespace

std::optional<ExtendResult> grrt_extend(const SimState& node, const State& x_sample, int k_max,
                                        const SimulatorFactory& factory,
                                        const PlannerConfig& config, int iteration) {
  if (config.execution == Execution::kSerial) {
    const Simulator sim = factory.make();
    std::optional<ExtendResult> best;
    double d_min = std::numeric_limits<double>::infinity();
    for (int k = 0; k < k_max; ++k) {
      Candidate c = simulate_candidate(sim, node, x_sample, config, iteration, k);
      if (grrt_stable(sim, c.state, config.min_contacts, config.contact_tolerance) &&
          c.distance < d_min) {
        d_min = c.distance;
        best = ExtendResult{std::move(c.state), std::move(c.action), c.distance, k};
      }
    }
    return best;
  }

  std::vector<Candidate> candidates(k_max);
#pragma omp parallel
  {
    const Simulator sim = factory.make();
#pragma omp for schedule(static)
    for (int k = 0; k < k_max; ++k) {
      candidates[k] = simulate_candidate(sim, node, x_sample, config, iteration, k);
    }
  }
  std::vector<int> order(k_max);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return candidates[a].distance < candidates[b].distance;
  });
  // Stability is tested in distance order, one batch of threads at a time;
  // the first stable candidate in that order is the literal loop's winner.
  const int batch = std::max(1, omp_get_max_threads());
  for (int start = 0; start < k_max; start += batch) {
    const int end = std::min(k_max, start + batch);
    std::vector<char> stable(end - start, 0);
#pragma omp parallel
    {
      const Simulator sim = factory.make();
#pragma omp for schedule(static)
      for (int i = start; i < end; ++i) {
        stable[i - start] =
            grrt_stable(sim, candidates[order[i]].state, config.min_contacts, config.contact_tolerance);
      }
    }
    for (int i = start; i < end; ++i) {
      if (stable[i - start]) {
        Candidate& c = candidates[order[i]];
        return ExtendResult{std::move(c.state), std::move(c.action), c.distance, order[i]};
      }
    }
  }
  return std::nullopt;
}

PlanResult grow_grrt(const SimState& root, const PlannerConfig& config,
                     const SimulatorFactory& factory) {
  config.validate();
  const Simulator sim = factory.make();
  if (!grrt_stable(sim, root, config.min_contacts, config.contact_tolerance)) {
    throw RuntimeFailure("G-RRT root fails the rollout stability check");
  }
  PlanResult result{ExplorationTree(PlannerKind::kGRRT, config.weights), {}, 0};
  ExplorationTree& tree = result.tree;
  TreeNode root_node;
  root_node.state = root.state;
  root_node.snapshot = root;
  tree.add(root_node);
  tree.root_setpoints = root.setpoints;
  const SamplingBounds bounds = default_bounds(factory.model());
  const int cap = config.iteration_cap();

  int it = 0;
  while (tree.size() < config.max_nodes && it < cap) {
    ++it;
    std::mt19937_64 rng(sample_stream(config.seed, it));
    const State x_sample =
        sample_state(bounds, root.state.p.z(), config.theta_window(tree.size()), rng);
    const TreeNode& node = tree.nearest(x_sample);
    auto ext = grrt_extend(*node.snapshot, x_sample, config.k_max, factory, config, it);
    if (ext) {
      TreeNode child;
      child.parent = node.id;
      child.state = ext->state.state;
      child.action = ext->action;
      child.snapshot = std::move(ext->state);
      tree.add(std::move(child));
    }
    if (it % config.coverage_every == 0) {
      result.coverage.push_back({it, tree.size(), tree.max_rotation()});
    }
  }
  if (result.coverage.empty() || result.coverage.back().iteration != it) {
    result.coverage.push_back({it, tree.size(), tree.max_rotation()});
  }
  result.iterations = it;
  return result;
}

}  // namespace dexplore

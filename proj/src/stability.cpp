#include "dexplore/stability.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dexplore/errors.hpp"

namespace dexplore {

void StabilityConfig::validate() const {
  if (!(epsilon > 0.0)) throw ConfigError("stability epsilon must be positive");
  if (!(torque_weight > 0.0)) throw ConfigError("stability torque weight must be positive");
  if (!(solver_tolerance > 0.0)) throw ConfigError("stability solver tolerance must be positive");
  if (max_iterations < 1) throw ConfigError("stability max iterations must be >= 1");
}

Eigen::Matrix3Xd normal_wrench_basis(const ContactSet& contacts, const Eigen::MatrixXd& grasp,
                                     double torque_weight) {
  const std::vector<int> active = contacts.active_fingers();
  const int k = static_cast<int>(active.size());
  if (grasp.rows() != 2 * k || grasp.cols() != 3) {
    throw ContractError("grasp map does not match the active contact count");
  }
  Eigen::Matrix3Xd basis(3, k);
  for (int i = 0; i < k; ++i) {
    const Vec2& n = contacts.at_finger(active[i]).normal;
    basis.col(i) = grasp.middleRows<2>(2 * i).transpose() * n;
    basis(2, i) /= torque_weight;
  }
  return basis;
}

namespace {

double objective(const Eigen::Matrix3Xd& basis, const Eigen::VectorXd& c) {
  return (basis * c).squaredNorm();
}

// Exact minimiser on a fixed support (free variables strictly positive).
// Returns false if the unconstrained solution leaves the feasible set.
bool solve_on_support(const Eigen::Matrix3Xd& basis, int pinned, const std::vector<int>& support,
                      Eigen::VectorXd& c) {
  const int k = static_cast<int>(basis.cols());
  c = Eigen::VectorXd::Zero(k);
  c(pinned) = 1.0;
  if (support.empty()) return true;
  Eigen::Matrix3Xd a(3, support.size());
  for (size_t i = 0; i < support.size(); ++i) a.col(i) = basis.col(support[i]);
  const Eigen::VectorXd x = a.completeOrthogonalDecomposition().solve(-basis.col(pinned));
  for (size_t i = 0; i < support.size(); ++i) {
    if (!(x(i) >= 0.0)) return false;
    c(support[i]) = x(i);
  }
  return true;
}

}  // namespace

double solve_pinned_qp(const Eigen::Matrix3Xd& basis, int pinned, const StabilityConfig& config,
                       Eigen::VectorXd* magnitudes) {
  const int k = static_cast<int>(basis.cols());
  const Eigen::MatrixXd hessian = 2.0 * basis.transpose() * basis;
  const double lipschitz = std::max(hessian.selfadjointView<Eigen::Upper>().eigenvalues().maxCoeff(),
                                    1e-12);
  const double step = 1.0 / lipschitz;

  auto project = [&](Eigen::VectorXd& v) {
    v = v.cwiseMax(0.0);
    v(pinned) = 1.0;
  };

  // Accelerated projected gradient with function-value restart.
  Eigen::VectorXd c = Eigen::VectorXd::Zero(k);
  c(pinned) = 1.0;
  Eigen::VectorXd y = c;
  double t = 1.0;
  double f_prev = objective(basis, c);
  for (int it = 0; it < config.max_iterations; ++it) {
    Eigen::VectorXd next = y - step * (hessian * y);
    project(next);
    const double f_next = objective(basis, next);
    const double moved = (next - c).norm();
    if (f_next > f_prev) {
      // restart momentum
      y = c;
      t = 1.0;
      continue;
    }
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    y = next + ((t - 1.0) / t_next) * (next - c);
    c = next;
    t = t_next;
    f_prev = f_next;
    if (moved < config.solver_tolerance) break;
  }

  // Polish: exact minimiser over candidate supports. With at most a handful
  // of free magnitudes the enumeration is cheap and removes the residual
  // first-order error of the iteration.
  std::vector<int> free;
  for (int i = 0; i < k; ++i) {
    if (i != pinned) free.push_back(i);
  }
  if (free.size() <= 8) {
    const unsigned subsets = 1u << free.size();
    for (unsigned mask = 0; mask < subsets; ++mask) {
      std::vector<int> support;
      for (size_t i = 0; i < free.size(); ++i) {
        if (mask & (1u << i)) support.push_back(free[i]);
      }
      Eigen::VectorXd candidate;
      if (solve_on_support(basis, pinned, support, candidate) &&
          objective(basis, candidate) < objective(basis, c)) {
        c = candidate;
      }
    }
  }
  if (magnitudes) *magnitudes = c;
  return std::sqrt(objective(basis, c));
}

StabilityResult internal_force_qp(const ContactSet& contacts, const Eigen::MatrixXd& grasp,
                                  const StabilityConfig& config) {
  const Eigen::Matrix3Xd basis = normal_wrench_basis(contacts, grasp, config.torque_weight);
  const int k = static_cast<int>(basis.cols());
  if (k == 0) throw PreconditionError("internal_force_qp: no active contacts");
  StabilityResult best;
  best.wrench_norm = std::numeric_limits<double>::infinity();
  for (int j = 0; j < k; ++j) {
    Eigen::VectorXd c;
    const double w = solve_pinned_qp(basis, j, config, &c);
    if (w < best.wrench_norm) {
      best.wrench_norm = w;
      best.magnitudes = c;
      best.pinned = j;
    }
  }
  best.stable = best.wrench_norm < config.epsilon;
  return best;
}

double qp_bruteforce_oracle(const ContactSet& contacts, const Eigen::MatrixXd& grasp, int pinned,
                            double step, double cap, double torque_weight) {
  const Eigen::Matrix3Xd basis = normal_wrench_basis(contacts, grasp, torque_weight);
  const int k = static_cast<int>(basis.cols());
  if (k > 4) throw PreconditionError("qp_bruteforce_oracle supports at most 4 contacts");
  if (k == 0) throw PreconditionError("qp_bruteforce_oracle: no active contacts");
  if (pinned < 0 || pinned >= k) throw ContractError("pinned index out of range");
  const int levels = static_cast<int>(std::floor(cap / step + 1e-9)) + 1;
  std::vector<int> free;
  for (int i = 0; i < k; ++i) {
    if (i != pinned) free.push_back(i);
  }
  std::vector<int> idx(free.size(), 0);
  double best = std::numeric_limits<double>::infinity();
  while (true) {
    Eigen::Vector3d w = basis.col(pinned);
    for (size_t i = 0; i < free.size(); ++i) w += (idx[i] * step) * basis.col(free[i]);
    best = std::min(best, w.norm());
    size_t pos = 0;
    while (pos < idx.size() && ++idx[pos] == levels) {
      idx[pos] = 0;
      ++pos;
    }
    if (pos == idx.size()) break;
  }
  return best;
}

bool is_stable(const ContactSet& contacts, const Eigen::MatrixXd& grasp,
               const StabilityConfig& config) {
  try {
    return internal_force_qp(contacts, grasp, config).stable;
  } catch (const PreconditionError&) {
    return false;
  }
}

StabilityResult assess_grasp(const ContactSet& contacts, const State& state,
                             const StabilityConfig& config) {
  const std::vector<int> active = contacts.active_fingers();
  if (active.empty()) return {};
  return internal_force_qp(contacts, grasp_map(state, contacts, active), config);
}

bool grasp_is_stable(const ContactSet& contacts, const State& state,
                     const StabilityConfig& config, int min_contacts) {
  if (contacts.count() < min_contacts || contacts.count() == 0) return false;
  return assess_grasp(contacts, state, config).stable;
}

}  // namespace dexplore

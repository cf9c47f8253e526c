#include "dexplore/nn.hpp"

#include <cmath>

#include "dexplore/errors.hpp"

namespace dexplore {

Mlp::Mlp(std::vector<int> sizes, std::mt19937_64& rng, double output_scale)
    : sizes_(std::move(sizes)) {
  if (sizes_.size() < 2) throw ContractError("Mlp needs at least input and output sizes");
  for (int s : sizes_) {
    if (s < 1) throw ContractError("Mlp layer sizes must be positive");
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  for (size_t l = 0; l + 1 < sizes_.size(); ++l) {
    const double scale = (l + 2 == sizes_.size() ? output_scale : 1.0) / std::sqrt(sizes_[l]);
    Eigen::MatrixXd w(sizes_[l + 1], sizes_[l]);
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = scale * normal(rng);
    }
    w_.push_back(std::move(w));
    b_.push_back(Eigen::VectorXd::Zero(sizes_[l + 1]));
  }
}

int Mlp::parameter_count() const {
  int n = 0;
  for (size_t l = 0; l < w_.size(); ++l) n += static_cast<int>(w_[l].size() + b_[l].size());
  return n;
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x, Cache* cache) const {
  if (x.rows() != inputs()) throw ContractError("Mlp::forward: input size mismatch");
  if (cache) {
    cache->activations.clear();
    cache->activations.push_back(x);
  }
  Eigen::MatrixXd a = x;
  for (size_t l = 0; l < w_.size(); ++l) {
    Eigen::MatrixXd z = w_[l] * a;
    z.colwise() += b_[l];
    if (l + 1 < w_.size()) z = z.array().tanh().matrix();
    a = std::move(z);
    if (cache) cache->activations.push_back(a);
  }
  return a;
}

Eigen::VectorXd Mlp::backward(const Cache& cache, const Eigen::MatrixXd& dout) const {
  if (cache.activations.size() != w_.size() + 1) throw ContractError("Mlp::backward: stale cache");
  Eigen::VectorXd grad(parameter_count());
  std::vector<Eigen::Index> offset(w_.size());
  Eigen::Index pos = 0;
  for (size_t l = 0; l < w_.size(); ++l) {
    offset[l] = pos;
    pos += w_[l].size() + b_[l].size();
  }
  Eigen::MatrixXd delta = dout;  // dL/dz of the current layer
  for (size_t li = w_.size(); li-- > 0;) {
    const Eigen::MatrixXd& input = cache.activations[li];
    const Eigen::MatrixXd gw = delta * input.transpose();
    grad.segment(offset[li], gw.size()) = Eigen::Map<const Eigen::VectorXd>(gw.data(), gw.size());
    grad.segment(offset[li] + gw.size(), b_[li].size()) = delta.rowwise().sum();
    if (li > 0) {
      delta = (w_[li].transpose() * delta).cwiseProduct(
          (1.0 - input.array().square()).matrix());
    }
  }
  return grad;
}

Eigen::VectorXd Mlp::parameters() const {
  Eigen::VectorXd theta(parameter_count());
  Eigen::Index pos = 0;
  for (size_t l = 0; l < w_.size(); ++l) {
    theta.segment(pos, w_[l].size()) = Eigen::Map<const Eigen::VectorXd>(w_[l].data(), w_[l].size());
    pos += w_[l].size();
    theta.segment(pos, b_[l].size()) = b_[l];
    pos += b_[l].size();
  }
  return theta;
}

void Mlp::set_parameters(const Eigen::VectorXd& theta) {
  if (theta.size() != parameter_count()) throw ContractError("Mlp::set_parameters: size mismatch");
  Eigen::Index pos = 0;
  for (size_t l = 0; l < w_.size(); ++l) {
    Eigen::Map<Eigen::VectorXd>(w_[l].data(), w_[l].size()) = theta.segment(pos, w_[l].size());
    pos += w_[l].size();
    b_[l] = theta.segment(pos, b_[l].size());
    pos += b_[l].size();
  }
}

Adam::Adam(int size, double lr, double beta1, double beta2, double eps)
    : m_(Eigen::VectorXd::Zero(size)),
      v_(Eigen::VectorXd::Zero(size)),
      lr_(lr),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps) {}

void Adam::step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad) {
  if (grad.size() != m_.size() || theta.size() != m_.size()) throw ContractError("Adam: size mismatch");
  ++t_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  theta.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

}  // namespace dexplore

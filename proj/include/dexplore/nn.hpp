#pragma once

#include <Eigen/Dense>

#include <random>
#include <vector>

namespace dexplore {

/// Fully connected network with tanh hidden layers and a linear output.
/// Inputs and outputs are column-batched: X is (inputs x batch).
class Mlp {
 public:
  Mlp() = default;
  /// Weights ~ N(0, 1/fan_in) with the last layer scaled by
  /// `output_scale`, biases zero.
  Mlp(std::vector<int> sizes, std::mt19937_64& rng, double output_scale = 1.0);

  struct Cache {
    std::vector<Eigen::MatrixXd> activations;  // input, hidden..., output
  };

  int inputs() const { return sizes_.front(); }
  int outputs() const { return sizes_.back(); }
  const std::vector<int>& sizes() const { return sizes_; }
  int parameter_count() const;

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, Cache* cache = nullptr) const;
  /// Gradient of sum(dout .* output) with respect to the flattened
  /// parameters (layer order, W column-major then b).
  Eigen::VectorXd backward(const Cache& cache, const Eigen::MatrixXd& dout) const;

  Eigen::VectorXd parameters() const;
  void set_parameters(const Eigen::VectorXd& theta);

 private:
  std::vector<int> sizes_;
  std::vector<Eigen::MatrixXd> w_;
  std::vector<Eigen::VectorXd> b_;
};

class Adam {
 public:
  Adam() = default;
  Adam(int size, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  /// theta -= lr * mhat / (sqrt(vhat) + eps)
  void step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad);

 private:
  Eigen::VectorXd m_, v_;
  double lr_ = 3e-4, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
};

}  // namespace dexplore

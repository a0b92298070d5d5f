#pragma once

#include <string>
#include <vector>

#include "npas/tensor.hpp"

namespace npas {

// A named trainable leaf. `decay` marks whether weight decay applies;
// shared parameter vectors and biases decay, combiner coefficients and
// masks do not unless the experiment opts in.
struct TrainableParam {
  std::string name;
  Tensor tensor;
  bool decay = true;
};

// Plain SGD with momentum and L2 weight decay. Momentum buffers are kept
// per parameter in registration order, so updates are deterministic.
//   v <- momentum * v + g + decay * w
//   w <- w - lr * v
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<TrainableParam> params, double lr, double momentum,
               double weight_decay);

  void step();
  void zero_grad();

  const std::vector<TrainableParam>& params() const { return params_; }
  double learning_rate() const { return lr_; }

 private:
  std::vector<TrainableParam> params_;
  std::vector<std::vector<double>> velocity_;
  double lr_;
  double momentum_;
  double weight_decay_;
};

}  // namespace npas

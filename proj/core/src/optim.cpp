#include "npas/optim.hpp"

namespace npas {

SgdOptimizer::SgdOptimizer(std::vector<TrainableParam> params, double lr,
                           double momentum, double weight_decay)
    : params_(std::move(params)),
      lr_(lr),
      momentum_(momentum),
      weight_decay_(weight_decay) {
  velocity_.reserve(params_.size());
  for (const TrainableParam& p : params_)
    velocity_.emplace_back(p.tensor.size(), 0.0);
}

void SgdOptimizer::step() {
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    TrainableParam& p = params_[pi];
    auto& w = p.tensor.leaf_values();
    const auto& g = p.tensor.grad();
    auto& v = velocity_[pi];
    const double wd = p.decay ? weight_decay_ : 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = momentum_ * v[i] + g[i] + wd * w[i];
      w[i] -= lr_ * v[i];
    }
  }
}

void SgdOptimizer::zero_grad() {
  for (TrainableParam& p : params_) p.tensor.zero_grad();
}

}  // namespace npas

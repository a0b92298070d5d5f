#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "npas/archspec.hpp"
#include "npas/dataset.hpp"
#include "npas/optim.hpp"
#include "npas/paramstore.hpp"
#include "npas/tensor.hpp"
#include "npas/weightgen.hpp"

namespace npas {

// A trainable network: something that can produce per-layer weight
// tensors on the current tape and enumerate its trainable parameters in
// a fixed order.
class Model {
 public:
  virtual ~Model() = default;
  virtual const NetworkSpec& network() const = 0;
  // Weight tensors in network declaration order, rebuilt per call.
  virtual std::vector<Tensor> layer_weights() const = 0;
  virtual const std::map<std::string, Tensor>& biases() const = 0;
  virtual std::vector<TrainableParam> trainables() const = 0;

  std::size_t census() const;
};

// Sequential forward pass over explicit weights. Throws naming the layer
// on shape mismatches. A softmax output activation is left to the loss
// (argmax is unchanged); relu applies elementwise.
Tensor forward_network(const NetworkSpec& net,
                       const std::vector<Tensor>& weights,
                       const std::map<std::string, Tensor>& biases,
                       const Tensor& batch);

// Shared-parameter model: groups own the budget, weights are generated
// per step by the configured combiner/upsampler.
class SsnModel : public Model {
 public:
  static SsnModel build(const NetworkSpec& net, const BudgetSpec& budget,
                        const GroupMapping& mapping, std::uint64_t seed);

  const NetworkSpec& network() const override { return net_; }
  std::vector<Tensor> layer_weights() const override;
  const std::map<std::string, Tensor>& biases() const override {
    return biases_;
  }
  std::vector<TrainableParam> trainables() const override;

  std::vector<GeneratedWeights> generate_weights() const;

  const BudgetSpec& budget() const { return budget_; }
  const GroupMapping& mapping() const { return mapping_; }
  const GenLayout& layout() const { return layout_; }
  const std::vector<ParameterGroup>& groups() const { return groups_; }
  const CombinerState& combiner_state() const { return state_; }

 private:
  NetworkSpec net_;
  BudgetSpec budget_;
  GroupMapping mapping_;
  GenLayout layout_;
  std::vector<ParameterGroup> groups_;
  CombinerState state_;
  std::map<std::string, Tensor> biases_;
};

// Conventional network with per-layer weight tensors; the reference the
// shared-parameter machinery is checked against.
class PlainModel : public Model {
 public:
  static PlainModel build(const NetworkSpec& net, std::uint64_t seed);

  const NetworkSpec& network() const override { return net_; }
  std::vector<Tensor> layer_weights() const override;
  const std::map<std::string, Tensor>& biases() const override {
    return biases_;
  }
  std::vector<TrainableParam> trainables() const override;

 private:
  NetworkSpec net_;
  std::vector<Tensor> weights_;  // network order
  std::map<std::string, Tensor> biases_;
};

// Weight init scale shared by both models: N(0,1)/sqrt(fan-in), biases
// zero. Groups average member fan-in weighted by weight count.
double group_init_scale(const NetworkSpec& net,
                        const std::vector<std::string>& members);

// One optimization step at a time: regenerate weights, forward, loss,
// backward, SGD. Returns per-epoch mean train losses; the callback fires
// after each epoch. Throws with the step index if the loss leaves the
// reals.
using EpochCallback = std::function<void(std::size_t epoch, double mean_loss)>;
std::vector<double> train_model(const Model& model, const Dataset& train,
                                const TrainConfig& cfg, std::size_t epochs,
                                const EpochCallback& callback = {});

}  // namespace npas

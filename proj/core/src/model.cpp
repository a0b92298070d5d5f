#include "npas/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "npas/rng.hpp"

namespace npas {

std::size_t Model::census() const {
  std::size_t n = 0;
  for (const TrainableParam& p : trainables()) n += p.tensor.size();
  return n;
}

Tensor forward_network(const NetworkSpec& net,
                       const std::vector<Tensor>& weights,
                       const std::map<std::string, Tensor>& biases,
                       const Tensor& batch) {
  if (weights.size() != net.layers.size())
    throw std::invalid_argument("forward: " + std::to_string(weights.size()) +
                                " weight tensors for " +
                                std::to_string(net.layers.size()) + " layers");
  const std::size_t N = batch.shape()[0];
  Tensor x = batch;
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    const LayerSpec& layer = net.layers[li];
    try {
      if (layer.kind == LayerKind::Dense) {
        if (x.shape().size() != 2)
          x = reshape(x, {N, x.size() / N});  // flatten conv activations
        x = matmul(x, transpose(weights[li]));
      } else {
        x = conv2d(x, weights[li], layer.stride, layer.padding);
      }
      if (layer.has_bias) x = bias_add(x, biases.at(layer.id), 1);
      if (layer.activation == Activation::Relu) x = relu(x);
      // Softmax output activation is folded into the loss; logits are
      // returned as-is (argmax unaffected).
    } catch (const std::exception& e) {
      throw std::runtime_error("forward: layer '" + layer.id +
                               "': " + e.what());
    }
  }
  return x;
}

double group_init_scale(const NetworkSpec& net,
                        const std::vector<std::string>& members) {
  double weighted = 0.0, total = 0.0;
  for (const std::string& id : members) {
    const LayerSpec& l = net.layer(id);
    weighted += static_cast<double>(l.weight_count()) *
                static_cast<double>(l.fan_in());
    total += static_cast<double>(l.weight_count());
  }
  return 1.0 / std::sqrt(weighted / total);
}

namespace {

std::map<std::string, Tensor> make_zero_biases(const NetworkSpec& net) {
  std::map<std::string, Tensor> biases;
  for (const LayerSpec& l : net.layers)
    if (l.has_bias)
      biases.emplace(l.id,
                     Tensor::parameter({l.bias_count()},
                                       std::vector<double>(l.bias_count(), 0.0)));
  return biases;
}

void append_bias_trainables(const NetworkSpec& net,
                            const std::map<std::string, Tensor>& biases,
                            std::vector<TrainableParam>& out) {
  for (const LayerSpec& l : net.layers) {
    const auto it = biases.find(l.id);
    if (it != biases.end())
      out.push_back({"bias[" + l.id + "]", it->second, /*decay=*/true});
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// SsnModel

SsnModel SsnModel::build(const NetworkSpec& net, const BudgetSpec& budget,
                         const GroupMapping& mapping, std::uint64_t seed) {
  SsnModel m;
  m.net_ = net;
  m.budget_ = budget;
  m.mapping_ = mapping;
  m.layout_ = compute_layout(net, mapping, budget);
  m.groups_ = allocate_groups(net, mapping, budget.total_params);

  Rng theta_rng(derive_seed(seed, "theta"));
  for (ParameterGroup& g : m.groups_) {
    const double scale = group_init_scale(net, g.members);
    auto& v = g.theta.leaf_values();
    for (double& x : v) x = theta_rng.normal() * scale;
  }
  m.state_ = init_combiner_state(net, mapping, budget, m.layout_,
                                 derive_seed(seed, "combiner"));
  m.biases_ = make_zero_biases(net);
  return m;
}

std::vector<GeneratedWeights> SsnModel::generate_weights() const {
  std::vector<GeneratedWeights> out;
  out.reserve(net_.layers.size());
  for (std::size_t li = 0; li < net_.layers.size(); ++li) {
    const LayerGenPlan& plan = layout_.layers[li];
    out.push_back(generate(net_.layers[li], plan, groups_[plan.group_id],
                           state_, budget_));
  }
  return out;
}

std::vector<Tensor> SsnModel::layer_weights() const {
  std::vector<GeneratedWeights> generated = generate_weights();
  std::vector<Tensor> out;
  out.reserve(generated.size());
  for (GeneratedWeights& g : generated) out.push_back(std::move(g.tensor));
  return out;
}

std::vector<TrainableParam> SsnModel::trainables() const {
  std::vector<TrainableParam> out;
  for (const ParameterGroup& g : groups_)
    out.push_back({"theta[" + std::to_string(g.id) + "]", g.theta, true});
  for (const LayerSpec& l : net_.layers) {
    const auto ita = state_.alpha.find(l.id);
    if (ita != state_.alpha.end())
      out.push_back({"alpha[" + l.id + "]", ita->second, false});
    const auto itp = state_.phi.find(l.id);
    if (itp != state_.phi.end())
      out.push_back({"phi[" + l.id + "]", itp->second, false});
  }
  for (const auto& [g, t] : state_.emb_weight)
    out.push_back({"emb_w[" + std::to_string(g) + "]", t, false});
  for (const auto& [g, t] : state_.emb_bias)
    out.push_back({"emb_b[" + std::to_string(g) + "]", t, false});
  for (const auto& [g, pool] : state_.masks)
    for (std::size_t t = 0; t < pool.size(); ++t)
      out.push_back({"mask[" + std::to_string(g) + "][" + std::to_string(t) +
                         "]",
                     pool[t], false});
  append_bias_trainables(net_, biases_, out);
  return out;
}

// ---------------------------------------------------------------------------
// PlainModel

PlainModel PlainModel::build(const NetworkSpec& net, std::uint64_t seed) {
  PlainModel m;
  m.net_ = net;
  Rng theta_rng(derive_seed(seed, "theta"));
  for (const LayerSpec& l : net.layers) {
    const double scale = group_init_scale(net, {l.id});
    std::vector<double> v(l.weight_count());
    for (double& x : v) x = theta_rng.normal() * scale;
    m.weights_.push_back(Tensor::parameter(l.weight_shape, std::move(v)));
  }
  m.biases_ = make_zero_biases(net);
  return m;
}

std::vector<Tensor> PlainModel::layer_weights() const { return weights_; }

std::vector<TrainableParam> PlainModel::trainables() const {
  std::vector<TrainableParam> out;
  for (std::size_t li = 0; li < net_.layers.size(); ++li)
    out.push_back({"weight[" + net_.layers[li].id + "]", weights_[li], true});
  append_bias_trainables(net_, biases_, out);
  return out;
}

// ---------------------------------------------------------------------------
// training loop

std::vector<double> train_model(const Model& model, const Dataset& train,
                                const TrainConfig& cfg, std::size_t epochs,
                                const EpochCallback& callback) {
  std::vector<TrainableParam> params = model.trainables();
  if (cfg.decay_combiner_params)
    for (TrainableParam& p : params) p.decay = true;
  SgdOptimizer opt(std::move(params), cfg.lr, cfg.momentum, cfg.weight_decay);
  Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));

  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<double> epoch_losses;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    // Fisher-Yates on a stream that continues across epochs
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_int(0, i - 1)]);

    double loss_sum = 0.0;
    std::size_t steps_in_epoch = 0;
    for (std::size_t off = 0; off < order.size(); off += cfg.batch_size) {
      const std::size_t end = std::min(off + cfg.batch_size, order.size());
      const std::vector<std::size_t> idx(order.begin() + off,
                                         order.begin() + end);
      opt.zero_grad();
      const std::vector<Tensor> weights = model.layer_weights();
      const Tensor logits = forward_network(
          model.network(), weights, model.biases(), train.batch_features(idx));
      const Tensor loss =
          softmax_cross_entropy(logits, train.batch_labels(idx));
      const double lv = loss.scalar_value();
      if (!std::isfinite(lv))
        throw std::runtime_error("training diverged at step " +
                                 std::to_string(step) + " (loss " +
                                 std::to_string(lv) + ")");
      backward(loss);
      opt.step();
      loss_sum += lv;
      ++steps_in_epoch;
      ++step;
    }
    const double mean_loss = loss_sum / static_cast<double>(steps_in_epoch);
    epoch_losses.push_back(mean_loss);
    if (callback) callback(epoch, mean_loss);
  }
  return epoch_losses;
}

}  // namespace npas

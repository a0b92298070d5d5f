#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "npas/tensor.hpp"

namespace npas {

enum class LayerKind { Dense, Conv2d };
enum class Activation { Relu, None, Softmax };

struct LayerSpec {
  std::string id;
  LayerKind kind = LayerKind::Dense;
  // dense: [out, in]; conv2d: [F, C, kh, kw]
  Shape weight_shape;
  bool has_bias = true;
  Activation activation = Activation::None;
  // conv2d only
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t weight_count() const { return shape_numel(weight_shape); }
  std::size_t bias_count() const {
    return has_bias ? weight_shape[0] : 0;  // out features / filters
  }
  // dense: in; conv2d: C*kh*kw
  std::size_t fan_in() const;

  bool operator==(const LayerSpec&) const = default;
};

struct NetworkSpec {
  std::vector<LayerSpec> layers;
  Shape input_shape;  // [D] for dense inputs, [C,H,W] for images
  std::size_t num_classes = 0;

  std::size_t total_weight_count() const;
  std::size_t total_bias_count() const;
  const LayerSpec& layer(const std::string& id) const;
  bool has_layer(const std::string& id) const;

  bool operator==(const NetworkSpec&) const = default;
};

enum class CombinerKind { Wavg, Emb, Rr, Avg };
enum class UpsamplerKind { Repeat, Inter, Mask };

struct BudgetSpec {
  std::size_t total_params = 0;  // |theta|, resolved (fractions floored)
  std::size_t num_groups = 1;    // P
  std::size_t max_templates = 8; // K
  CombinerKind combiner = CombinerKind::Wavg;
  UpsamplerKind upsampler = UpsamplerKind::Mask;
  std::size_t mask_window = 9;
  std::size_t emb_dim = 24;  // E
  bool emb_softmax = false;
};

enum class Regime { LB, HB, Exact };

struct TrainConfig {
  std::size_t epochs = 10;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
  bool decay_combiner_params = false;
};

struct DataConfig {
  // blobs | two_spirals | csv:<path> | idx:<images>,<labels>
  std::string dataset = "blobs";
  std::size_t train_size = 1000;
  std::size_t eval_size = 200;
  std::size_t features = 2;       // synthetic sets only
  std::size_t classes = 2;        // synthetic sets only
  std::size_t centers_per_class = 1;
  double noise = 1.0;
  double separation = 1.0;
  double eval_fraction = 0.2;     // file-backed sets without explicit sizes
  std::optional<std::uint64_t> seed;  // defaults to the train seed
};

enum class MappingMode { Auto, Single, Random, Manual };

struct MappingConfig {
  MappingMode mode = MappingMode::Auto;
  std::string file;  // manual mode
  std::size_t prelim_templates = 4;       // K'
  double prelim_epochs_fraction = 0.125;
  CombinerKind prelim_combiner = CombinerKind::Wavg;  // wavg or emb
  bool normalize_reps = false;
};

struct ExperimentConfig {
  NetworkSpec network;
  BudgetSpec budget;
  TrainConfig train;
  DataConfig data;
  MappingConfig mapping;
  std::string out_dir = ".";
};

// --- parsing -----------------------------------------------------------

// Parses the `network` section of a config document (or a whole document,
// from which the section is taken). Throws std::runtime_error naming the
// offending layer on duplicate ids, unknown kinds, or non-composable
// shapes.
NetworkSpec parse_network_config(const std::string& text);
std::string serialize_network_config(const NetworkSpec& net);

// Parses a full experiment document (all sections; defaults applied).
ExperimentConfig parse_experiment_config(const std::string& text);
ExperimentConfig load_experiment_config(const std::string& path);

// --- queries ------------------------------------------------------------

Regime classify_regime(const NetworkSpec& net, const BudgetSpec& budget);
std::size_t largest_layer_weights(const NetworkSpec& net);

// Per-layer output shapes (no batch dimension): dense -> [out],
// conv2d -> [F, H', W'].
std::vector<Shape> activation_shapes(const NetworkSpec& net);

const char* to_string(Regime r);
const char* to_string(CombinerKind c);
const char* to_string(UpsamplerKind u);
const char* to_string(LayerKind k);
const char* to_string(MappingMode m);

}  // namespace npas

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "npas/archspec.hpp"
#include "npas/dataset.hpp"
#include "npas/model.hpp"
#include "npas/paramstore.hpp"

namespace npas {

// Settings for the short single-group run that learns which layers use
// parameters similarly.
struct PreliminaryConfig {
  std::size_t templates = 4;  // K', >= 2
  double epochs_fraction = 0.125;
  CombinerKind combiner = CombinerKind::Wavg;  // wavg or emb
  std::size_t emb_dim = 24;
  bool emb_softmax = false;
};

struct LayerRepresentation {
  std::string layer_id;
  std::vector<double> vector;  // alpha (wavg) or phi (emb)
};

// Single parameter group sized to the largest layer; every layer's
// templates are equal chunks of theta resized linearly to the layer's
// weight count, then combined. No upsampling path exists here.
class PreliminaryModel : public Model {
 public:
  static PreliminaryModel build(const NetworkSpec& net,
                                const PreliminaryConfig& prelim,
                                std::uint64_t seed);

  const NetworkSpec& network() const override { return net_; }
  std::vector<Tensor> layer_weights() const override;
  const std::map<std::string, Tensor>& biases() const override {
    return biases_;
  }
  std::vector<TrainableParam> trainables() const override;

  std::vector<LayerRepresentation> representations() const;
  std::size_t chunk_length() const { return chunk_len_; }
  std::size_t budget() const { return theta_.size(); }

 private:
  NetworkSpec net_;
  PreliminaryConfig prelim_;
  Tensor theta_;
  std::size_t chunk_len_ = 0;
  CombinerState state_;  // alpha/phi keyed by layer, projection on group 0
  std::map<std::string, Tensor> biases_;
};

// Trains the preliminary model for `epochs` epochs (the caller computes
// ceil(epochs_fraction * total)) and returns the learned representations.
// Throws with the failing step index if the loss leaves the reals.
std::vector<LayerRepresentation> run_preliminary(PreliminaryModel& model,
                                                 const Dataset& train,
                                                 const TrainConfig& cfg,
                                                 std::size_t epochs);

// --- clustering ----------------------------------------------------------

struct KmeansResult {
  std::vector<std::size_t> assignment;
  std::vector<std::vector<double>> centroids;
  double sse = 0.0;
  std::size_t iterations = 0;
  std::vector<double> sse_history;  // non-increasing by construction
};

// Lloyd's algorithm with k-means++ seeding; at most 100 iterations or a
// centroid shift below 1e-9. Empty clusters steal the point farthest
// from its centroid. Deterministic under seed.
KmeansResult kmeans(const std::vector<std::vector<double>>& points,
                    std::size_t k, std::uint64_t seed);

// --- mapping construction ---------------------------------------------------

GroupMapping derive_mapping(const std::vector<LayerRepresentation>& reps,
                            std::size_t num_groups, std::uint64_t seed,
                            bool normalize = false);

GroupMapping single_mapping(const NetworkSpec& net);
GroupMapping random_mapping(const NetworkSpec& net, std::size_t num_groups,
                            std::uint64_t seed);

// --- whole pipeline -----------------------------------------------------------

struct AutoMappingResult {
  GroupMapping mapping;
  std::vector<LayerRepresentation> representations;
  std::size_t preliminary_budget = 0;
  std::size_t preliminary_epochs = 0;
};

// build -> short train -> cluster. Bit-reproducible under seed.
AutoMappingResult search_group_mapping(const NetworkSpec& net,
                                       const BudgetSpec& budget,
                                       const MappingConfig& mapping_cfg,
                                       const TrainConfig& train_cfg,
                                       const Dataset& train_data);

void write_representations_csv(const std::string& path,
                               const std::vector<LayerRepresentation>& reps);

}  // namespace npas

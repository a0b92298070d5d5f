#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "npas/archspec.hpp"
#include "npas/tensor.hpp"

namespace npas {

struct Dataset {
  Shape feature_shape;  // per-sample shape, no batch dimension
  std::size_t num_classes = 0;
  std::vector<double> features;  // row-major, size() * prod(feature_shape)
  std::vector<std::size_t> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t sample_width() const { return shape_numel(feature_shape); }

  Tensor batch_features(const std::vector<std::size_t>& indices) const;
  std::vector<std::size_t> batch_labels(
      const std::vector<std::size_t>& indices) const;
};

struct DataSplit {
  Dataset train;
  Dataset eval;
};

// Resolves cfg.dataset:
//   blobs                        seeded Gaussian clusters (optionally several
//                                sub-centers per class)
//   two_spirals                  the classic 2-class interleaved spirals
//   csv:<path>                   rows of label,feature,... with an optional
//                                header line
//   idx:<images>,<labels>        IDX ubyte pairs, pixels rescaled to [0,1]
// File-backed sets are split by taking the last eval_fraction as eval.
// `fallback_seed` is used when the data section declares no seed of its own.
DataSplit load_dataset(const DataConfig& cfg, std::uint64_t fallback_seed);

// Reshapes features to the network input (products must agree).
void conform_to_network(DataSplit& split, const NetworkSpec& net);

}  // namespace npas

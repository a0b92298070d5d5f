#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "npas/archspec.hpp"
#include "npas/paramstore.hpp"
#include "npas/tensor.hpp"

namespace npas {

enum class GenerationKind { Identity, Wavg, Emb, Rr, Avg, Repeat, Inter, Mask };

// Learned state that turns group parameters into layer weights: per-layer
// combination coefficients or embeddings, per-group embedding projections,
// and per-group upsampling mask pools.
struct CombinerState {
  std::map<std::string, Tensor> alpha;          // layer -> [K~]   (wavg)
  std::map<std::string, Tensor> phi;            // layer -> [E]    (emb)
  std::map<std::size_t, Tensor> emb_weight;     // group -> [Kmax, E]
  std::map<std::size_t, Tensor> emb_bias;       // group -> [Kmax]
  std::map<std::size_t, std::vector<Tensor>> masks;  // group -> n_max-1 masks
};

// How one layer's weights are produced, fixed at model construction.
struct LayerGenPlan {
  std::string layer_id;
  std::size_t group_id = 0;
  GenerationKind kind = GenerationKind::Identity;
  std::size_t templates = 0;    // K~ when downsampling, else 0
  std::size_t tiles = 0;        // n when upsampling, else 0
  std::vector<TemplateView> views;
  std::size_t query_index = 0;  // ordinal of this layer's query in its group
};

// Static description of a whole configuration: group sizes, per-layer
// plans, and the per-group extremes that size the shared state. Pure
// arithmetic; no tensors involved.
struct GenLayout {
  std::vector<std::size_t> group_sizes;
  std::vector<std::vector<std::string>> group_members;
  std::vector<LayerGenPlan> layers;              // network order
  std::vector<std::size_t> group_template_max;   // max K~ over members w/ K~>=2
  std::vector<std::size_t> group_mask_count;     // max(n_i) - 1 over members
};

GenLayout compute_layout(const NetworkSpec& net, const GroupMapping& mapping,
                         const BudgetSpec& budget);

struct GeneratedWeights {
  std::string layer_id;
  Tensor tensor;  // shaped as the layer's weight_shape
  GenerationKind kind = GenerationKind::Identity;
};

// --- template combiners ---------------------------------------------------

// w = sum_k alpha[k] * templates[k]; needs K~ >= 2 (a single template is
// used directly by the caller).
Tensor combine_wavg(const std::vector<Tensor>& templates, const Tensor& alpha);

// alpha = W * phi + b (optionally softmaxed), then as combine_wavg.
Tensor combine_emb(const std::vector<Tensor>& templates, const Tensor& phi,
                   const Tensor& weight, const Tensor& bias,
                   bool apply_softmax = false);

// templates[call_index mod K~]; no learned parameters.
Tensor combine_rr(const std::vector<Tensor>& templates, std::size_t call_index);

// Unweighted mean, fixed summation order.
Tensor combine_avg(const std::vector<Tensor>& templates);

// --- upsamplers -------------------------------------------------------------

// ceil(target/|theta|) copies of theta truncated to target.
Tensor upsample_repeat(const Tensor& theta, std::size_t target_count);

// Align-corners linear interpolation of theta to target length.
Tensor upsample_inter(const Tensor& theta, std::size_t target_count);

// n = ceil(target/|theta|) tiles; tile 0 is theta as-is, tile t >= 1 is
// theta multiplied by masks[t-1] repeated over sequential windows (the
// final partial window uses a mask prefix). Truncated to target.
Tensor upsample_mask(const Tensor& theta, std::size_t target_count,
                     const std::vector<Tensor>& masks, std::size_t window);

// --- per-layer generation ---------------------------------------------------

// Produces the layer's weight tensor on the current tape according to its
// plan: identity reshape, template combination, or upsampling.
GeneratedWeights generate(const LayerSpec& layer, const LayerGenPlan& plan,
                          const ParameterGroup& group,
                          const CombinerState& state, const BudgetSpec& budget);

// --- state initialization ----------------------------------------------------

// Deterministic under seed. Alpha rows of each group come from the
// orthonormal factor of a seeded random matrix, so layers sharing a group
// start with mutually orthogonal coefficients (random unit vectors once
// the group has more layers than template slots). Phi and the embedding
// projection are seeded normals scaled 1/sqrt(E); biases and masks start
// neutral.
CombinerState init_combiner_state(const NetworkSpec& net,
                                  const GroupMapping& mapping,
                                  const BudgetSpec& budget,
                                  const GenLayout& layout, std::uint64_t seed);

// --- accounting ---------------------------------------------------------------

struct OverheadReport {
  std::size_t combiner_params = 0;    // alpha / phi
  std::size_t projection_params = 0;  // emb W_j, b_j
  std::size_t mask_params = 0;
  std::size_t bias_params = 0;  // listed separately from theta overhead
  std::size_t generation_overhead() const {
    return combiner_params + projection_params + mask_params;
  }
};

OverheadReport overhead_param_count(const NetworkSpec& net,
                                    const GroupMapping& mapping,
                                    const BudgetSpec& budget);

struct LayerFlops {
  std::string layer_id;
  GenerationKind kind = GenerationKind::Identity;
  double generation = 0.0;
  double forward = 0.0;  // per image
};

struct FlopReport {
  std::vector<LayerFlops> layers;
  double generation_total = 0.0;
  double forward_total = 0.0;           // per image
  double ratio_per_image = 0.0;         // generation / forward
  double ratio_batch_64 = 0.0;          // ratio_per_image / 64
  double ratio_for_batch(std::size_t batch) const {
    return ratio_per_image / static_cast<double>(batch);
  }
};

// Generation cost model: combining K~ templates of |w| elements costs
// K~*|w| multiply-adds (plus 2*K~*E for the emb projection); repeat and
// template selection are free; inter costs 2*|w|; mask costs one multiply
// per masked element, |w| - |theta_j|. Forward cost per image: dense
// 2*out*in, conv2d 2*F*C*kh*kw*H'*W'.
FlopReport weightgen_flops(const NetworkSpec& net, const GroupMapping& mapping,
                           const BudgetSpec& budget);

const char* to_string(GenerationKind k);

}  // namespace npas

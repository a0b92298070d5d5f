#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "npas/archspec.hpp"
#include "npas/tensor.hpp"

namespace npas {

enum class MappingProvenance { Auto, Manual, Single, Random };

// Partition of the network's layers into parameter groups.
struct GroupMapping {
  std::map<std::string, std::size_t> assignment;  // layer id -> group id
  std::size_t num_groups = 1;                     // P
  MappingProvenance provenance = MappingProvenance::Single;

  std::size_t group_of(const std::string& layer_id) const;
  // Member layer ids of each group, in network declaration order.
  std::vector<std::vector<std::string>> members(const NetworkSpec& net) const;
  void validate(const NetworkSpec& net) const;
};

// A contiguous wrap-around window into a group's parameter vector,
// assigned once at model construction.
struct TemplateView {
  std::string layer_id;
  std::size_t template_index = 0;
  std::size_t start = 0;   // offset into theta
  std::size_t length = 0;  // == |w_i| for downsampling views
  bool wraps = false;
};

// One shared parameter vector and its member layers. The cursor walks
// theta as template views are handed out so parameter coverage stays
// balanced across the group.
struct ParameterGroup {
  std::size_t id = 0;
  Tensor theta;  // 1-D trainable
  std::vector<std::string> members;  // network declaration order
  std::size_t cursor = 0;

  std::size_t size() const { return theta.size(); }
};

// Proportional split of the budget: |theta_j| = floor(total * S_j / sum S)
// with S_j the member weight counts, remainder to the group with the
// largest S_j (ties to the lowest id). Throws if any group's share is zero.
std::vector<std::size_t> compute_group_sizes(const NetworkSpec& net,
                                             const GroupMapping& mapping,
                                             std::size_t total_params);

// Materializes the groups with zero-initialized trainable theta tensors;
// the model seeds them.
std::vector<ParameterGroup> allocate_groups(const NetworkSpec& net,
                                            const GroupMapping& mapping,
                                            std::size_t total_params);

// Template count for a layer inside a group:
//   max(1, min(floor(|theta_j| / |w_i|), K)).
// A result of 1 with |theta_j| < |w_i| means the layer must be routed to
// upsampling instead.
std::size_t template_count(std::size_t group_size, std::size_t weight_count,
                           std::size_t max_templates);

// Hands out the layer's template views at successive modular offsets and
// advances the group cursor. Requires the downsampling case
// (|theta_j| >= |w_i|); throws otherwise.
std::vector<TemplateView> take_templates(ParameterGroup& group,
                                         const LayerSpec& layer,
                                         std::size_t max_templates);

// Cursor-only variant used when planning a layout before any tensors
// exist; take_templates delegates here.
std::vector<TemplateView> take_template_views(std::size_t& cursor,
                                              std::size_t group_size,
                                              std::size_t group_id,
                                              const LayerSpec& layer,
                                              std::size_t max_templates);

// --- mapping file -------------------------------------------------------
//
//   # npas-mapping v1
//   provenance auto
//   groups 3
//   <layer-id> <group-id>
//   ...
//
// Layer lines appear in network declaration order.

std::string serialize_mapping(const GroupMapping& mapping,
                              const NetworkSpec& net);
GroupMapping parse_mapping(const std::string& text, const NetworkSpec& net);
GroupMapping load_mapping(const std::string& path, const NetworkSpec& net);
void save_mapping(const GroupMapping& mapping, const NetworkSpec& net,
                  const std::string& path);

const char* to_string(MappingProvenance p);

}  // namespace npas

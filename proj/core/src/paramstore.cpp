#include "npas/paramstore.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace npas {

std::size_t GroupMapping::group_of(const std::string& layer_id) const {
  const auto it = assignment.find(layer_id);
  if (it == assignment.end())
    throw std::runtime_error("mapping: layer '" + layer_id + "' not mapped");
  return it->second;
}

std::vector<std::vector<std::string>> GroupMapping::members(
    const NetworkSpec& net) const {
  std::vector<std::vector<std::string>> out(num_groups);
  for (const LayerSpec& l : net.layers) out[group_of(l.id)].push_back(l.id);
  return out;
}

void GroupMapping::validate(const NetworkSpec& net) const {
  if (num_groups < 1) throw std::runtime_error("mapping: zero groups");
  for (const LayerSpec& l : net.layers)
    if (!assignment.count(l.id))
      throw std::runtime_error("mapping: layer '" + l.id + "' not mapped");
  for (const auto& [id, g] : assignment) {
    if (!net.has_layer(id))
      throw std::runtime_error("mapping: unknown layer '" + id + "'");
    if (g >= num_groups)
      throw std::runtime_error("mapping: layer '" + id + "' group " +
                               std::to_string(g) + " out of range [0," +
                               std::to_string(num_groups) + ")");
  }
}

std::vector<std::size_t> compute_group_sizes(const NetworkSpec& net,
                                             const GroupMapping& mapping,
                                             std::size_t total_params) {
  mapping.validate(net);
  if (total_params < mapping.num_groups)
    throw std::runtime_error(
        "allocation: budget " + std::to_string(total_params) +
        " below group count " + std::to_string(mapping.num_groups));
  const auto member_lists = mapping.members(net);
  const std::size_t P = mapping.num_groups;

  std::vector<std::size_t> weight_sums(P, 0);  // S_j
  for (std::size_t j = 0; j < P; ++j)
    for (const std::string& id : member_lists[j])
      weight_sums[j] += net.layer(id).weight_count();
  std::size_t total_weights = 0;
  for (const std::size_t s : weight_sums) total_weights += s;

  std::vector<std::size_t> sizes(P, 0);
  std::size_t assigned = 0;
  for (std::size_t j = 0; j < P; ++j) {
    // exact integer arithmetic: sizes fit far below 2^64 at desk scale
    sizes[j] = total_params * weight_sums[j] / total_weights;
    assigned += sizes[j];
  }
  // Remainder to the group with the largest S_j, ties to the lowest id.
  std::size_t largest = 0;
  for (std::size_t j = 1; j < P; ++j)
    if (weight_sums[j] > weight_sums[largest]) largest = j;
  sizes[largest] += total_params - assigned;

  for (std::size_t j = 0; j < P; ++j)
    if (sizes[j] == 0)
      throw std::runtime_error("allocation: group " + std::to_string(j) +
                               " received 0 parameters");
  return sizes;
}

std::vector<ParameterGroup> allocate_groups(const NetworkSpec& net,
                                            const GroupMapping& mapping,
                                            std::size_t total_params) {
  const std::vector<std::size_t> sizes =
      compute_group_sizes(net, mapping, total_params);
  const auto member_lists = mapping.members(net);
  std::vector<ParameterGroup> groups;
  groups.reserve(sizes.size());
  for (std::size_t j = 0; j < sizes.size(); ++j) {
    ParameterGroup g;
    g.id = j;
    g.theta = Tensor::parameter({sizes[j]}, std::vector<double>(sizes[j], 0.0));
    g.members = member_lists[j];
    groups.push_back(std::move(g));
  }
  return groups;
}

std::size_t template_count(std::size_t group_size, std::size_t weight_count,
                           std::size_t max_templates) {
  if (group_size < 1) throw std::runtime_error("template_count: empty group");
  const std::size_t fit = group_size / weight_count;
  return std::max<std::size_t>(1, std::min(fit, max_templates));
}

std::vector<TemplateView> take_template_views(std::size_t& cursor,
                                              std::size_t group_size,
                                              std::size_t group_id,
                                              const LayerSpec& layer,
                                              std::size_t max_templates) {
  const std::size_t w = layer.weight_count();
  if (group_size < w)
    throw std::logic_error("take_templates: group " + std::to_string(group_id) +
                           " has " + std::to_string(group_size) +
                           " params, layer '" + layer.id + "' needs " +
                           std::to_string(w) + " (upsampling case)");
  const std::size_t count = template_count(group_size, w, max_templates);
  std::vector<TemplateView> views;
  views.reserve(count);
  for (std::size_t t = 0; t < count; ++t) {
    TemplateView v;
    v.layer_id = layer.id;
    v.template_index = t;
    v.start = (cursor + t * w) % group_size;
    v.length = w;
    v.wraps = v.start + w > group_size;
    views.push_back(v);
  }
  cursor = (cursor + count * w) % group_size;
  return views;
}

std::vector<TemplateView> take_templates(ParameterGroup& group,
                                         const LayerSpec& layer,
                                         std::size_t max_templates) {
  return take_template_views(group.cursor, group.size(), group.id, layer,
                             max_templates);
}

std::string serialize_mapping(const GroupMapping& mapping,
                              const NetworkSpec& net) {
  mapping.validate(net);
  std::ostringstream os;
  os << "# npas-mapping v1\n";
  os << "provenance " << to_string(mapping.provenance) << "\n";
  os << "groups " << mapping.num_groups << "\n";
  for (const LayerSpec& l : net.layers)
    os << l.id << " " << mapping.group_of(l.id) << "\n";
  return os.str();
}

GroupMapping parse_mapping(const std::string& text, const NetworkSpec& net) {
  GroupMapping m;
  m.num_groups = 0;
  bool have_provenance = false;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "provenance") {
      std::string p;
      ls >> p;
      if (p == "auto")
        m.provenance = MappingProvenance::Auto;
      else if (p == "manual")
        m.provenance = MappingProvenance::Manual;
      else if (p == "single")
        m.provenance = MappingProvenance::Single;
      else if (p == "random")
        m.provenance = MappingProvenance::Random;
      else
        throw std::runtime_error("mapping: unknown provenance '" + p +
                                 "' at line " + std::to_string(lineno));
      have_provenance = true;
    } else if (key == "groups") {
      ls >> m.num_groups;
      if (!ls || m.num_groups < 1)
        throw std::runtime_error("mapping: bad group count at line " +
                                 std::to_string(lineno));
    } else {
      std::size_t g = 0;
      if (!(ls >> g))
        throw std::runtime_error("mapping: malformed line " +
                                 std::to_string(lineno));
      if (!net.has_layer(key))
        throw std::runtime_error("mapping: unknown layer '" + key +
                                 "' at line " + std::to_string(lineno));
      m.assignment[key] = g;
    }
  }
  if (!have_provenance)
    throw std::runtime_error("mapping: missing provenance header");
  if (m.num_groups == 0)
    throw std::runtime_error("mapping: missing groups header");
  m.validate(net);
  return m;
}

GroupMapping load_mapping(const std::string& path, const NetworkSpec& net) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("mapping: cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_mapping(ss.str(), net);
}

void save_mapping(const GroupMapping& mapping, const NetworkSpec& net,
                  const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("mapping: cannot write '" + path + "'");
  out << serialize_mapping(mapping, net);
}

const char* to_string(MappingProvenance p) {
  switch (p) {
    case MappingProvenance::Auto: return "auto";
    case MappingProvenance::Manual: return "manual";
    case MappingProvenance::Single: return "single";
    case MappingProvenance::Random: return "random";
  }
  return "?";
}

}  // namespace npas

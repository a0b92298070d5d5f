#include "npas/groupsearch.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "npas/rng.hpp"

namespace npas {

// ---------------------------------------------------------------------------
// PreliminaryModel

PreliminaryModel PreliminaryModel::build(const NetworkSpec& net,
                                         const PreliminaryConfig& prelim,
                                         std::uint64_t seed) {
  if (prelim.templates < 2)
    throw std::invalid_argument("preliminary: K' must be >= 2");
  PreliminaryModel m;
  m.net_ = net;
  m.prelim_ = prelim;

  const std::size_t budget = largest_layer_weights(net);
  m.chunk_len_ = budget / prelim.templates;
  if (m.chunk_len_ == 0)
    throw std::invalid_argument("preliminary: budget " +
                                std::to_string(budget) +
                                " too small for K' = " +
                                std::to_string(prelim.templates));

  m.theta_ = Tensor::parameter({budget}, std::vector<double>(budget, 0.0));
  std::vector<std::string> all_ids;
  for (const LayerSpec& l : net.layers) all_ids.push_back(l.id);
  Rng theta_rng(derive_seed(seed, "prelim-theta"));
  const double scale = group_init_scale(net, all_ids);
  for (double& x : m.theta_.leaf_values()) x = theta_rng.normal() * scale;

  // Single-group layout where every layer combines exactly K' templates;
  // reuses the orthogonal coefficient initialization.
  GroupMapping mapping = single_mapping(net);
  GenLayout layout;
  layout.group_sizes = {budget};
  layout.group_members = {all_ids};
  layout.group_template_max = {prelim.templates};
  layout.group_mask_count = {0};
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    LayerGenPlan plan;
    plan.layer_id = net.layers[i].id;
    plan.group_id = 0;
    plan.kind = prelim.combiner == CombinerKind::Emb ? GenerationKind::Emb
                                                     : GenerationKind::Wavg;
    plan.templates = prelim.templates;
    plan.query_index = i;
    layout.layers.push_back(std::move(plan));
  }
  BudgetSpec budget_spec;
  budget_spec.total_params = budget;
  budget_spec.num_groups = 1;
  budget_spec.max_templates = prelim.templates;
  budget_spec.combiner = prelim.combiner;
  budget_spec.emb_dim = prelim.emb_dim;
  budget_spec.emb_softmax = prelim.emb_softmax;
  m.state_ = init_combiner_state(net, mapping, budget_spec, layout,
                                 derive_seed(seed, "prelim-combiner"));

  for (const LayerSpec& l : net.layers)
    if (l.has_bias)
      m.biases_.emplace(
          l.id, Tensor::parameter({l.bias_count()},
                                  std::vector<double>(l.bias_count(), 0.0)));
  return m;
}

std::vector<Tensor> PreliminaryModel::layer_weights() const {
  std::vector<Tensor> out;
  out.reserve(net_.layers.size());
  for (const LayerSpec& layer : net_.layers) {
    std::vector<Tensor> templates;
    templates.reserve(prelim_.templates);
    for (std::size_t t = 0; t < prelim_.templates; ++t) {
      const Tensor chunk =
          slice_modular(theta_, t * chunk_len_, chunk_len_);
      templates.push_back(linear_resize_1d(chunk, layer.weight_count()));
    }
    Tensor flat;
    if (prelim_.combiner == CombinerKind::Emb) {
      flat = combine_emb(templates, state_.phi.at(layer.id),
                         state_.emb_weight.at(0), state_.emb_bias.at(0),
                         prelim_.emb_softmax);
    } else {
      flat = combine_wavg(templates, state_.alpha.at(layer.id));
    }
    out.push_back(reshape(flat, layer.weight_shape));
  }
  return out;
}

std::vector<TrainableParam> PreliminaryModel::trainables() const {
  std::vector<TrainableParam> out;
  out.push_back({"theta[0]", theta_, true});
  for (const LayerSpec& l : net_.layers) {
    const auto ita = state_.alpha.find(l.id);
    if (ita != state_.alpha.end())
      out.push_back({"alpha[" + l.id + "]", ita->second, false});
    const auto itp = state_.phi.find(l.id);
    if (itp != state_.phi.end())
      out.push_back({"phi[" + l.id + "]", itp->second, false});
  }
  if (const auto it = state_.emb_weight.find(0); it != state_.emb_weight.end())
    out.push_back({"emb_w[0]", it->second, false});
  if (const auto it = state_.emb_bias.find(0); it != state_.emb_bias.end())
    out.push_back({"emb_b[0]", it->second, false});
  for (const LayerSpec& l : net_.layers) {
    const auto it = biases_.find(l.id);
    if (it != biases_.end())
      out.push_back({"bias[" + l.id + "]", it->second, true});
  }
  return out;
}

std::vector<LayerRepresentation> PreliminaryModel::representations() const {
  std::vector<LayerRepresentation> reps;
  for (const LayerSpec& l : net_.layers) {
    LayerRepresentation r;
    r.layer_id = l.id;
    if (prelim_.combiner == CombinerKind::Emb)
      r.vector = state_.phi.at(l.id).values();
    else
      r.vector = state_.alpha.at(l.id).values();
    reps.push_back(std::move(r));
  }
  return reps;
}

std::vector<LayerRepresentation> run_preliminary(PreliminaryModel& model,
                                                 const Dataset& train,
                                                 const TrainConfig& cfg,
                                                 std::size_t epochs) {
  if (epochs < 1)
    throw std::invalid_argument("preliminary: needs at least one epoch");
  train_model(model, train, cfg, epochs);
  return model.representations();
}

// ---------------------------------------------------------------------------
// k-means

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace

KmeansResult kmeans(const std::vector<std::vector<double>>& points,
                    std::size_t k, std::uint64_t seed) {
  const std::size_t n = points.size();
  if (k < 1) throw std::invalid_argument("kmeans: k must be >= 1");
  if (k > n)
    throw std::invalid_argument("kmeans: k = " + std::to_string(k) +
                                " exceeds " + std::to_string(n) + " points");
  const std::size_t dim = points[0].size();
  for (const auto& p : points)
    if (p.size() != dim)
      throw std::invalid_argument("kmeans: inconsistent point dimensions");

  Rng rng(seed);
  KmeansResult res;

  // k-means++ seeding
  std::vector<std::vector<double>> centroids;
  centroids.push_back(points[rng.uniform_int(0, n - 1)]);
  std::vector<double> d2(n);
  while (centroids.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centroids) best = std::min(best, sq_dist(points[i], c));
      d2[i] = best;
      total += best;
    }
    std::size_t chosen;
    if (total <= 0.0) {
      chosen = rng.uniform_int(0, n - 1);  // all points already covered
    } else {
      const double r = rng.uniform() * total;
      double acc = 0.0;
      chosen = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc >= r) {
          chosen = i;
          break;
        }
      }
    }
    centroids.push_back(points[chosen]);
  }

  std::vector<std::size_t> assignment(n, 0);
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t iter = 0; iter < 100; ++iter) {
    // assign (ties to the lowest centroid index)
    std::fill(counts.begin(), counts.end(), 0);
    double sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double bd = sq_dist(points[i], centroids[0]);
      for (std::size_t c = 1; c < k; ++c) {
        const double d = sq_dist(points[i], centroids[c]);
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      assignment[i] = best;
      counts[best] += 1;
      sse += bd;
    }
    // repair empty clusters: steal the point farthest from its centroid
    for (std::size_t c = 0; c < k; ++c) {
      while (counts[c] == 0) {
        std::size_t worst = n;
        double worst_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          if (counts[assignment[i]] <= 1) continue;
          const double d = sq_dist(points[i], centroids[assignment[i]]);
          if (d > worst_d) {
            worst_d = d;
            worst = i;
          }
        }
        if (worst == n)
          throw std::runtime_error("kmeans: cannot repair empty cluster");
        counts[assignment[worst]] -= 1;
        assignment[worst] = c;
        counts[c] += 1;
        centroids[c] = points[worst];
      }
    }
    res.sse_history.push_back(sse);
    res.iterations = iter + 1;

    // update
    std::vector<std::vector<double>> next(k, std::vector<double>(dim, 0.0));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t d = 0; d < dim; ++d)
        next[assignment[i]][d] += points[i][d];
    double shift = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t d = 0; d < dim; ++d)
        next[c][d] /= static_cast<double>(counts[c]);
      shift = std::max(shift, std::sqrt(sq_dist(next[c], centroids[c])));
    }
    centroids = std::move(next);
    if (shift < 1e-9) break;
  }

  // final assignment against the converged centroids
  double sse = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    double bd = sq_dist(points[i], centroids[0]);
    for (std::size_t c = 1; c < k; ++c) {
      const double d = sq_dist(points[i], centroids[c]);
      if (d < bd) {
        bd = d;
        best = c;
      }
    }
    assignment[i] = best;
    sse += bd;
  }
  res.assignment = std::move(assignment);
  res.centroids = std::move(centroids);
  res.sse = sse;
  return res;
}

// ---------------------------------------------------------------------------
// mappings

GroupMapping derive_mapping(const std::vector<LayerRepresentation>& reps,
                            std::size_t num_groups, std::uint64_t seed,
                            bool normalize) {
  if (num_groups > reps.size())
    throw std::invalid_argument("derive_mapping: " +
                                std::to_string(num_groups) + " groups for " +
                                std::to_string(reps.size()) + " layers");
  std::vector<std::vector<double>> points;
  points.reserve(reps.size());
  for (const LayerRepresentation& r : reps) {
    std::vector<double> v = r.vector;
    if (normalize) {
      double norm = 0.0;
      for (const double x : v) norm += x * x;
      norm = std::sqrt(norm);
      if (norm > 0.0)
        for (double& x : v) x /= norm;
    }
    points.push_back(std::move(v));
  }
  const KmeansResult km = kmeans(points, num_groups, seed);

  // canonical labels: first layer gets group 0, next new cluster 1, ...
  std::vector<std::size_t> relabel(num_groups, num_groups);
  std::size_t next = 0;
  GroupMapping mapping;
  mapping.num_groups = num_groups;
  mapping.provenance = MappingProvenance::Auto;
  for (std::size_t i = 0; i < reps.size(); ++i) {
    const std::size_t raw = km.assignment[i];
    if (relabel[raw] == num_groups) relabel[raw] = next++;
    mapping.assignment[reps[i].layer_id] = relabel[raw];
  }
  return mapping;
}

GroupMapping single_mapping(const NetworkSpec& net) {
  GroupMapping m;
  m.num_groups = 1;
  m.provenance = MappingProvenance::Single;
  for (const LayerSpec& l : net.layers) m.assignment[l.id] = 0;
  return m;
}

GroupMapping random_mapping(const NetworkSpec& net, std::size_t num_groups,
                            std::uint64_t seed) {
  const std::size_t L = net.layers.size();
  if (num_groups > L)
    throw std::invalid_argument("random_mapping: " +
                                std::to_string(num_groups) + " groups for " +
                                std::to_string(L) + " layers");
  Rng rng(seed);
  GroupMapping m;
  m.num_groups = num_groups;
  m.provenance = MappingProvenance::Random;
  for (std::size_t attempt = 0; attempt < 1000; ++attempt) {
    m.assignment.clear();
    std::vector<bool> used(num_groups, false);
    for (const LayerSpec& l : net.layers) {
      const std::size_t g = rng.uniform_int(0, num_groups - 1);
      m.assignment[l.id] = g;
      used[g] = true;
    }
    if (std::all_of(used.begin(), used.end(), [](bool b) { return b; }))
      return m;
  }
  throw std::runtime_error("random_mapping: no valid assignment in 1000 draws");
}

// ---------------------------------------------------------------------------
// pipeline

AutoMappingResult search_group_mapping(const NetworkSpec& net,
                                       const BudgetSpec& budget,
                                       const MappingConfig& mapping_cfg,
                                       const TrainConfig& train_cfg,
                                       const Dataset& train_data) {
  PreliminaryConfig prelim;
  prelim.templates = mapping_cfg.prelim_templates;
  prelim.epochs_fraction = mapping_cfg.prelim_epochs_fraction;
  prelim.combiner = mapping_cfg.prelim_combiner;
  prelim.emb_dim = budget.emb_dim;
  prelim.emb_softmax = budget.emb_softmax;

  PreliminaryModel model = PreliminaryModel::build(net, prelim, train_cfg.seed);
  const std::size_t epochs = std::max<std::size_t>(
      1, static_cast<std::size_t>(
             std::ceil(prelim.epochs_fraction *
                       static_cast<double>(train_cfg.epochs))));

  AutoMappingResult result;
  result.preliminary_budget = model.budget();
  result.preliminary_epochs = epochs;
  result.representations = run_preliminary(model, train_data, train_cfg, epochs);
  result.mapping =
      derive_mapping(result.representations, budget.num_groups,
                     derive_seed(train_cfg.seed, "kmeans"),
                     mapping_cfg.normalize_reps);
  return result;
}

void write_representations_csv(const std::string& path,
                               const std::vector<LayerRepresentation>& reps) {
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("representations: cannot write '" + path + "'");
  if (reps.empty()) return;
  out << "layer_id";
  for (std::size_t i = 0; i < reps[0].vector.size(); ++i) out << ",c" << i;
  out << "\n";
  char buf[32];
  for (const LayerRepresentation& r : reps) {
    out << r.layer_id;
    for (const double v : r.vector) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << ',' << buf;
    }
    out << "\n";
  }
}

}  // namespace npas

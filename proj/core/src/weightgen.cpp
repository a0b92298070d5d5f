#include "npas/weightgen.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "npas/rng.hpp"

namespace npas {

namespace {

GenerationKind combiner_generation_kind(CombinerKind c) {
  switch (c) {
    case CombinerKind::Wavg: return GenerationKind::Wavg;
    case CombinerKind::Emb: return GenerationKind::Emb;
    case CombinerKind::Rr: return GenerationKind::Rr;
    case CombinerKind::Avg: return GenerationKind::Avg;
  }
  return GenerationKind::Wavg;
}

GenerationKind upsampler_generation_kind(UpsamplerKind u) {
  switch (u) {
    case UpsamplerKind::Repeat: return GenerationKind::Repeat;
    case UpsamplerKind::Inter: return GenerationKind::Inter;
    case UpsamplerKind::Mask: return GenerationKind::Mask;
  }
  return GenerationKind::Repeat;
}

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

// Orthonormal rows of a seeded random square matrix via modified
// Gram-Schmidt. dim is small (the template count), so this stays exact
// enough for the orthogonality contract.
std::vector<std::vector<double>> orthonormal_rows(std::size_t dim, Rng& rng) {
  std::vector<std::vector<double>> rows(dim, std::vector<double>(dim));
  for (std::size_t r = 0; r < dim; ++r) {
    double norm = 0.0;
    do {
      for (std::size_t c = 0; c < dim; ++c) rows[r][c] = rng.normal();
      for (std::size_t p = 0; p < r; ++p) {
        double dot = 0.0;
        for (std::size_t c = 0; c < dim; ++c) dot += rows[r][c] * rows[p][c];
        for (std::size_t c = 0; c < dim; ++c) rows[r][c] -= dot * rows[p][c];
      }
      norm = 0.0;
      for (std::size_t c = 0; c < dim; ++c) norm += rows[r][c] * rows[r][c];
      norm = std::sqrt(norm);
    } while (norm < 1e-8);  // redraw on a (vanishingly unlikely) collapse
    for (std::size_t c = 0; c < dim; ++c) rows[r][c] /= norm;
  }
  return rows;
}

std::vector<double> random_unit_vector(std::size_t dim, Rng& rng) {
  std::vector<double> v(dim);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (std::size_t c = 0; c < dim; ++c) {
      v[c] = rng.normal();
      norm += v[c] * v[c];
    }
    norm = std::sqrt(norm);
  } while (norm < 1e-8);
  for (std::size_t c = 0; c < dim; ++c) v[c] /= norm;
  return v;
}

}  // namespace

GenLayout compute_layout(const NetworkSpec& net, const GroupMapping& mapping,
                         const BudgetSpec& budget) {
  GenLayout layout;
  layout.group_sizes = compute_group_sizes(net, mapping, budget.total_params);
  layout.group_members = mapping.members(net);
  const std::size_t P = mapping.num_groups;
  layout.group_template_max.assign(P, 0);
  layout.group_mask_count.assign(P, 0);

  std::vector<std::size_t> cursors(P, 0);
  std::vector<std::size_t> queries(P, 0);
  for (const LayerSpec& layer : net.layers) {
    const std::size_t j = mapping.group_of(layer.id);
    const std::size_t size = layout.group_sizes[j];
    const std::size_t w = layer.weight_count();
    LayerGenPlan plan;
    plan.layer_id = layer.id;
    plan.group_id = j;
    plan.query_index = queries[j]++;
    if (size == w) {
      plan.kind = GenerationKind::Identity;
    } else if (size > w) {
      plan.kind = combiner_generation_kind(budget.combiner);
      plan.views =
          take_template_views(cursors[j], size, j, layer, budget.max_templates);
      plan.templates = plan.views.size();
      if (plan.templates >= 2)
        layout.group_template_max[j] =
            std::max(layout.group_template_max[j], plan.templates);
    } else {
      plan.kind = upsampler_generation_kind(budget.upsampler);
      plan.tiles = ceil_div(w, size);
      layout.group_mask_count[j] =
          std::max(layout.group_mask_count[j], plan.tiles - 1);
    }
    layout.layers.push_back(std::move(plan));
  }
  return layout;
}

// ---------------------------------------------------------------------------
// combiners

Tensor combine_wavg(const std::vector<Tensor>& templates, const Tensor& alpha) {
  if (templates.size() < 2)
    throw std::logic_error(
        "combine_wavg: needs >= 2 templates (single templates are used "
        "directly)");
  return weighted_sum(templates, alpha);
}

Tensor combine_emb(const std::vector<Tensor>& templates, const Tensor& phi,
                   const Tensor& weight, const Tensor& bias,
                   bool apply_softmax) {
  const std::size_t K = templates.size();
  if (K < 2)
    throw std::logic_error(
        "combine_emb: needs >= 2 templates (single templates are used "
        "directly)");
  if (weight.shape().size() != 2 || weight.shape()[1] != phi.size())
    throw std::invalid_argument("combine_emb: projection " +
                                shape_to_string(weight.shape()) +
                                " does not accept embedding " +
                                shape_to_string(phi.shape()));
  if (weight.shape()[0] < K || bias.size() < K)
    throw std::invalid_argument(
        "combine_emb: projection rows " + std::to_string(weight.shape()[0]) +
        " / bias " + std::to_string(bias.size()) + " below template count " +
        std::to_string(K));

  const std::size_t E = phi.size();
  Tensor w_rows = weight;
  if (weight.shape()[0] != K) {
    // layers with fewer templates than the group maximum use a prefix of
    // the shared projection
    w_rows = reshape(
        slice_modular(reshape(weight, {weight.shape()[0] * E}), 0, K * E),
        {K, E});
  }
  Tensor alpha =
      reshape(matmul(w_rows, reshape(phi, {E, 1})), {K});
  Tensor b = bias.size() == K ? bias : slice_modular(bias, 0, K);
  alpha = add(alpha, b);
  if (apply_softmax) alpha = softmax_1d(alpha);
  return weighted_sum(templates, alpha);
}

Tensor combine_rr(const std::vector<Tensor>& templates,
                  std::size_t call_index) {
  if (templates.empty())
    throw std::invalid_argument("combine_rr: empty template list");
  return templates[call_index % templates.size()];
}

Tensor combine_avg(const std::vector<Tensor>& templates) {
  if (templates.empty())
    throw std::invalid_argument("combine_avg: empty template list");
  const double inv = 1.0 / static_cast<double>(templates.size());
  const Tensor coeffs = Tensor::constant(
      {templates.size()}, std::vector<double>(templates.size(), inv));
  return weighted_sum(templates, coeffs);
}

// ---------------------------------------------------------------------------
// upsamplers

Tensor upsample_repeat(const Tensor& theta, std::size_t target_count) {
  if (theta.size() >= target_count)
    throw std::logic_error("upsample_repeat: target " +
                           std::to_string(target_count) +
                           " not larger than parameter count " +
                           std::to_string(theta.size()));
  return slice_modular(theta, 0, target_count);
}

Tensor upsample_inter(const Tensor& theta, std::size_t target_count) {
  if (theta.size() >= target_count)
    throw std::logic_error("upsample_inter: target " +
                           std::to_string(target_count) +
                           " not larger than parameter count " +
                           std::to_string(theta.size()));
  return linear_resize_1d(theta, target_count);
}

Tensor upsample_mask(const Tensor& theta, std::size_t target_count,
                     const std::vector<Tensor>& masks, std::size_t window) {
  const std::size_t n = theta.size();
  if (n >= target_count)
    throw std::logic_error("upsample_mask: target " +
                           std::to_string(target_count) +
                           " not larger than parameter count " +
                           std::to_string(n));
  if (window < 1) throw std::invalid_argument("upsample_mask: window < 1");
  const std::size_t tiles = ceil_div(target_count, n);
  if (masks.size() < tiles - 1)
    throw std::logic_error("upsample_mask: " + std::to_string(tiles - 1) +
                           " masks needed, pool has " +
                           std::to_string(masks.size()));
  std::vector<Tensor> parts;
  parts.reserve(tiles);
  parts.push_back(theta);  // first tile unmodified
  for (std::size_t t = 1; t < tiles; ++t) {
    const std::size_t len = std::min(n, target_count - t * n);
    const Tensor tile = slice_modular(theta, 0, len);
    // mask repeats over sequential windows; slice_modular wraps it, and a
    // final partial window naturally takes the mask prefix
    const Tensor tiled_mask = slice_modular(masks[t - 1], 0, len);
    parts.push_back(mul(tile, tiled_mask));
  }
  return concat(parts);
}

// ---------------------------------------------------------------------------
// generation

GeneratedWeights generate(const LayerSpec& layer, const LayerGenPlan& plan,
                          const ParameterGroup& group,
                          const CombinerState& state,
                          const BudgetSpec& budget) {
  const Shape& shape = layer.weight_shape;
  const std::size_t w = layer.weight_count();
  GeneratedWeights out;
  out.layer_id = layer.id;
  out.kind = plan.kind;

  if (plan.kind == GenerationKind::Identity) {
    out.tensor = reshape(group.theta, shape);
    return out;
  }

  if (plan.templates > 0) {
    std::vector<Tensor> templates;
    templates.reserve(plan.views.size());
    for (const TemplateView& v : plan.views)
      templates.push_back(slice_modular(group.theta, v.start, v.length));
    Tensor flat;
    if (plan.templates == 1) {
      flat = templates[0];  // single template, used directly
    } else {
      switch (plan.kind) {
        case GenerationKind::Wavg:
          flat = combine_wavg(templates, state.alpha.at(layer.id));
          break;
        case GenerationKind::Emb:
          flat = combine_emb(templates, state.phi.at(layer.id),
                             state.emb_weight.at(plan.group_id),
                             state.emb_bias.at(plan.group_id),
                             budget.emb_softmax);
          break;
        case GenerationKind::Rr:
          flat = combine_rr(templates, plan.query_index);
          break;
        case GenerationKind::Avg:
          flat = combine_avg(templates);
          break;
        default:
          throw std::logic_error("generate: bad downsampling kind");
      }
    }
    out.tensor = reshape(flat, shape);
    return out;
  }

  switch (plan.kind) {
    case GenerationKind::Repeat:
      out.tensor = reshape(upsample_repeat(group.theta, w), shape);
      break;
    case GenerationKind::Inter:
      out.tensor = reshape(upsample_inter(group.theta, w), shape);
      break;
    case GenerationKind::Mask: {
      const auto it = state.masks.find(plan.group_id);
      if (it == state.masks.end())
        throw std::logic_error("generate: no mask pool for group " +
                               std::to_string(plan.group_id));
      out.tensor = reshape(
          upsample_mask(group.theta, w, it->second, budget.mask_window), shape);
      break;
    }
    default:
      throw std::logic_error("generate: bad upsampling kind");
  }
  return out;
}

// ---------------------------------------------------------------------------
// state init

CombinerState init_combiner_state(const NetworkSpec& net,
                                  const GroupMapping& mapping,
                                  const BudgetSpec& budget,
                                  const GenLayout& layout, std::uint64_t seed) {
  mapping.validate(net);
  CombinerState state;
  Rng rng(seed);
  const std::size_t E = budget.emb_dim;
  const double inv_sqrt_e = 1.0 / std::sqrt(static_cast<double>(E));

  for (std::size_t j = 0; j < mapping.num_groups; ++j) {
    // members that combine >= 2 templates, in network declaration order
    std::vector<const LayerGenPlan*> eligible;
    for (const LayerGenPlan& plan : layout.layers)
      if (plan.group_id == j && plan.templates >= 2)
        eligible.push_back(&plan);
    if (!eligible.empty()) {
      const std::size_t kmax = layout.group_template_max[j];
      if (budget.combiner == CombinerKind::Wavg ||
          budget.combiner == CombinerKind::Emb) {
        if (budget.combiner == CombinerKind::Wavg) {
          const auto rows = orthonormal_rows(kmax, rng);
          for (std::size_t i = 0; i < eligible.size(); ++i) {
            const std::size_t k = eligible[i]->templates;
            std::vector<double> a(k);
            if (i < kmax) {
              for (std::size_t c = 0; c < k; ++c) a[c] = rows[i][c];
            } else {
              a = random_unit_vector(k, rng);
            }
            state.alpha.emplace(eligible[i]->layer_id,
                                Tensor::parameter({k}, std::move(a)));
          }
        } else {
          for (const LayerGenPlan* plan : eligible) {
            std::vector<double> p(E);
            for (double& x : p) x = rng.normal() * inv_sqrt_e;
            state.phi.emplace(plan->layer_id,
                              Tensor::parameter({E}, std::move(p)));
          }
          std::vector<double> wj(kmax * E);
          for (double& x : wj) x = rng.normal() * inv_sqrt_e;
          state.emb_weight.emplace(
              j, Tensor::parameter({kmax, E}, std::move(wj)));
          state.emb_bias.emplace(
              j, Tensor::parameter({kmax}, std::vector<double>(kmax, 0.0)));
        }
      }
    }
    if (budget.upsampler == UpsamplerKind::Mask &&
        layout.group_mask_count[j] > 0) {
      std::vector<Tensor> pool;
      pool.reserve(layout.group_mask_count[j]);
      for (std::size_t t = 0; t < layout.group_mask_count[j]; ++t)
        pool.push_back(Tensor::parameter(
            {budget.mask_window},
            std::vector<double>(budget.mask_window, 1.0)));  // neutral
      state.masks.emplace(j, std::move(pool));
    }
  }
  return state;
}

// ---------------------------------------------------------------------------
// accounting

OverheadReport overhead_param_count(const NetworkSpec& net,
                                    const GroupMapping& mapping,
                                    const BudgetSpec& budget) {
  const GenLayout layout = compute_layout(net, mapping, budget);
  OverheadReport r;
  for (const LayerGenPlan& plan : layout.layers) {
    if (plan.templates >= 2) {
      if (budget.combiner == CombinerKind::Wavg)
        r.combiner_params += plan.templates;
      else if (budget.combiner == CombinerKind::Emb)
        r.combiner_params += budget.emb_dim;
    }
  }
  if (budget.combiner == CombinerKind::Emb)
    for (std::size_t j = 0; j < mapping.num_groups; ++j)
      if (layout.group_template_max[j] > 0)
        r.projection_params += layout.group_template_max[j] * budget.emb_dim +
                               layout.group_template_max[j];
  if (budget.upsampler == UpsamplerKind::Mask)
    for (std::size_t j = 0; j < mapping.num_groups; ++j)
      r.mask_params += layout.group_mask_count[j] * budget.mask_window;
  r.bias_params = net.total_bias_count();
  return r;
}

FlopReport weightgen_flops(const NetworkSpec& net, const GroupMapping& mapping,
                           const BudgetSpec& budget) {
  const GenLayout layout = compute_layout(net, mapping, budget);
  const auto shapes = activation_shapes(net);
  FlopReport report;
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    const LayerSpec& layer = net.layers[li];
    const LayerGenPlan& plan = layout.layers[li];
    LayerFlops f;
    f.layer_id = layer.id;
    f.kind = plan.kind;

    const double w = static_cast<double>(layer.weight_count());
    if (plan.templates >= 2) {
      switch (plan.kind) {
        case GenerationKind::Wavg:
        case GenerationKind::Avg:
          f.generation = static_cast<double>(plan.templates) * w;
          break;
        case GenerationKind::Emb:
          f.generation = static_cast<double>(plan.templates) * w +
                         2.0 * static_cast<double>(plan.templates) *
                             static_cast<double>(budget.emb_dim);
          break;
        case GenerationKind::Rr:
          f.generation = 0.0;  // selection only
          break;
        default:
          break;
      }
    } else if (plan.tiles > 0) {
      switch (plan.kind) {
        case GenerationKind::Repeat:
          f.generation = 0.0;
          break;
        case GenerationKind::Inter:
          f.generation = 2.0 * w;
          break;
        case GenerationKind::Mask:
          f.generation =
              w - static_cast<double>(layout.group_sizes[plan.group_id]);
          break;
        default:
          break;
      }
    }

    if (layer.kind == LayerKind::Dense) {
      f.forward = 2.0 * static_cast<double>(layer.weight_shape[0]) *
                  static_cast<double>(layer.weight_shape[1]);
    } else {
      const Shape& os = shapes[li];
      f.forward = 2.0 * w * static_cast<double>(os[1]) *
                  static_cast<double>(os[2]);
    }
    report.generation_total += f.generation;
    report.forward_total += f.forward;
    report.layers.push_back(std::move(f));
  }
  report.ratio_per_image =
      report.forward_total > 0.0 ? report.generation_total / report.forward_total
                                 : 0.0;
  report.ratio_batch_64 = report.ratio_per_image / 64.0;
  return report;
}

const char* to_string(GenerationKind k) {
  switch (k) {
    case GenerationKind::Identity: return "identity";
    case GenerationKind::Wavg: return "wavg";
    case GenerationKind::Emb: return "emb";
    case GenerationKind::Rr: return "rr";
    case GenerationKind::Avg: return "avg";
    case GenerationKind::Repeat: return "repeat";
    case GenerationKind::Inter: return "inter";
    case GenerationKind::Mask: return "mask";
  }
  return "?";
}

}  // namespace npas

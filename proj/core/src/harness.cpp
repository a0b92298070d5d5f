#include "npas/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "npas/rng.hpp"

namespace npas {

using nlohmann::json;

std::string metrics_to_json_line(const MetricsRecord& r) {
  json j;
  j["step"] = r.step;
  j["epoch"] = r.epoch;
  j["train_loss"] = r.train_loss;
  j["eval_error_at_1"] = r.eval_error_at_1;
  j["wall_time_ms"] = r.wall_time_ms;
  j["params_total"] = r.params_total;
  j["params_theta"] = r.params_theta;
  j["params_overhead"] = r.params_overhead;
  j["flops_forward"] = r.flops_forward;
  j["flops_weightgen"] = r.flops_weightgen;
  return j.dump();
}

std::vector<MetricsRecord> parse_metrics_jsonl(const std::string& text) {
  std::vector<MetricsRecord> out;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    MetricsRecord r;
    r.step = j.at("step").get<std::size_t>();
    r.epoch = j.at("epoch").get<std::size_t>();
    r.train_loss = j.at("train_loss").get<double>();
    r.eval_error_at_1 = j.at("eval_error_at_1").get<double>();
    r.wall_time_ms = j.at("wall_time_ms").get<double>();
    r.params_total = j.at("params_total").get<std::size_t>();
    r.params_theta = j.at("params_theta").get<std::size_t>();
    r.params_overhead = j.at("params_overhead").get<std::size_t>();
    r.flops_forward = j.at("flops_forward").get<double>();
    r.flops_weightgen = j.at("flops_weightgen").get<double>();
    out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// evaluation

std::size_t eval_thread_cap() {
  if (const char* env = std::getenv("NPAS_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<std::size_t>(v);
  }
  return 1;
}

namespace {

std::size_t count_top1_errors(const NetworkSpec& net,
                              const std::vector<Tensor>& weights,
                              const std::map<std::string, Tensor>& biases,
                              const Dataset& eval, std::size_t begin,
                              std::size_t end, std::size_t batch_size) {
  std::size_t errors = 0;
  for (std::size_t off = begin; off < end; off += batch_size) {
    const std::size_t stop = std::min(off + batch_size, end);
    std::vector<std::size_t> idx(stop - off);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = off + i;
    const Tensor logits = forward_network(net, weights, biases,
                                          eval.batch_features(idx));
    const std::size_t C = logits.shape()[1];
    for (std::size_t r = 0; r < idx.size(); ++r) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < C; ++c)
        if (logits.at(r * C + c) > logits.at(r * C + best)) best = c;
      if (best != eval.labels[idx[r]]) ++errors;
    }
  }
  return errors;
}

}  // namespace

double evaluate_error_at_1(const NetworkSpec& net,
                           const std::vector<Tensor>& weights,
                           const std::map<std::string, Tensor>& biases,
                           const Dataset& eval, std::size_t batch_size) {
  if (eval.size() == 0) return 0.0;
  // Detached copies: immutable, so shards can forward concurrently.
  std::vector<Tensor> w;
  w.reserve(weights.size());
  for (const Tensor& t : weights) w.push_back(t.detached());
  std::map<std::string, Tensor> b;
  for (const auto& [id, t] : biases) b.emplace(id, t.detached());

  const std::size_t threads =
      std::min(eval_thread_cap(),
               std::max<std::size_t>(1, eval.size() / batch_size));
  std::size_t errors = 0;
  if (threads <= 1) {
    errors = count_top1_errors(net, w, b, eval, 0, eval.size(), batch_size);
  } else {
    std::vector<std::size_t> partial(threads, 0);
    std::vector<std::thread> pool;
    const std::size_t chunk = (eval.size() + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
      const std::size_t begin = t * chunk;
      const std::size_t end = std::min(begin + chunk, eval.size());
      if (begin >= end) break;
      pool.emplace_back([&, t, begin, end] {
        partial[t] = count_top1_errors(net, w, b, eval, begin, end, batch_size);
      });
    }
    for (std::thread& th : pool) th.join();
    for (const std::size_t e : partial) errors += e;  // shard order
  }
  return static_cast<double>(errors) / static_cast<double>(eval.size());
}

double evaluate_model(const Model& model, const Dataset& eval,
                      std::size_t batch_size) {
  return evaluate_error_at_1(model.network(), model.layer_weights(),
                             model.biases(), eval, batch_size);
}

// ---------------------------------------------------------------------------
// mapping resolution & census

MappingResolution resolve_mapping(const ExperimentConfig& cfg,
                                  const Dataset& train_data) {
  MappingResolution res;
  switch (cfg.mapping.mode) {
    case MappingMode::Single:
      res.mapping = single_mapping(cfg.network);
      break;
    case MappingMode::Random:
      res.mapping = random_mapping(cfg.network, cfg.budget.num_groups,
                                   derive_seed(cfg.train.seed, "mapping"));
      break;
    case MappingMode::Manual:
      res.mapping = load_mapping(cfg.mapping.file, cfg.network);
      break;
    case MappingMode::Auto: {
      res.search = search_group_mapping(cfg.network, cfg.budget, cfg.mapping,
                                        cfg.train, train_data);
      res.mapping = res.search->mapping;
      break;
    }
  }
  return res;
}

std::size_t expected_census(const NetworkSpec& net, const GroupMapping& mapping,
                            const BudgetSpec& budget) {
  const OverheadReport o = overhead_param_count(net, mapping, budget);
  return budget.total_params + o.generation_overhead() + o.bias_params;
}

// ---------------------------------------------------------------------------
// training pipeline

RunResult run_training(const ExperimentConfig& cfg_in) {
  ExperimentConfig cfg = cfg_in;
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);

  DataSplit data = load_dataset(cfg.data, cfg.train.seed);
  conform_to_network(data, cfg.network);

  MappingResolution resolution = resolve_mapping(cfg, data.train);
  cfg.budget.num_groups = resolution.mapping.num_groups;

  RunResult result;
  result.mapping = resolution.mapping;
  result.mapping_path = (fs::path(cfg.out_dir) / "mapping.txt").string();
  save_mapping(resolution.mapping, cfg.network, result.mapping_path);
  if (resolution.search) {
    write_representations_csv(
        (fs::path(cfg.out_dir) / "representations.csv").string(),
        resolution.search->representations);
  }

  const SsnModel model = SsnModel::build(cfg.network, cfg.budget,
                                         resolution.mapping, cfg.train.seed);
  result.census = model.census();
  const std::size_t expected = expected_census(cfg.network, resolution.mapping,
                                               cfg.budget);
  std::cout << "trainable params: " << result.census << " (theta "
            << cfg.budget.total_params << " + overhead "
            << expected - cfg.budget.total_params << ")\n";
  if (result.census != expected)
    throw std::runtime_error(
        "census mismatch: model has " + std::to_string(result.census) +
        " trainables, formula gives " + std::to_string(expected));

  const OverheadReport overhead =
      overhead_param_count(cfg.network, resolution.mapping, cfg.budget);
  const FlopReport flops =
      weightgen_flops(cfg.network, resolution.mapping, cfg.budget);

  result.metrics_path = (fs::path(cfg.out_dir) / "metrics.jsonl").string();
  std::ofstream metrics_out(result.metrics_path);
  if (!metrics_out)
    throw std::runtime_error("cannot write '" + result.metrics_path + "'");

  const std::size_t steps_per_epoch =
      (data.train.size() + cfg.train.batch_size - 1) / cfg.train.batch_size;
  auto epoch_start = std::chrono::steady_clock::now();
  const auto on_epoch = [&](std::size_t epoch, double mean_loss) {
    const auto now = std::chrono::steady_clock::now();
    MetricsRecord rec;
    rec.step = (epoch + 1) * steps_per_epoch;
    rec.epoch = epoch;
    rec.train_loss = mean_loss;
    rec.eval_error_at_1 =
        evaluate_model(model, data.eval, cfg.train.batch_size);
    rec.wall_time_ms =
        std::chrono::duration<double, std::milli>(now - epoch_start).count();
    rec.params_total = result.census;
    rec.params_theta = cfg.budget.total_params;
    rec.params_overhead = overhead.generation_overhead();
    rec.flops_forward = flops.forward_total;
    rec.flops_weightgen = flops.generation_total;
    result.metrics.push_back(rec);
    metrics_out << metrics_to_json_line(rec) << "\n";
    metrics_out.flush();
    epoch_start = std::chrono::steady_clock::now();
  };

  train_model(model, data.train, cfg.train, cfg.train.epochs, on_epoch);
  result.final_eval_error =
      result.metrics.empty() ? 0.0 : result.metrics.back().eval_error_at_1;

  const std::string mapping_text =
      serialize_mapping(resolution.mapping, cfg.network);
  result.checkpoint_path = (fs::path(cfg.out_dir) / "checkpoint.npc").string();
  save_checkpoint(checkpoint_from_model(model, mapping_text),
                  result.checkpoint_path);

  // final generated weights, for external analysis
  std::vector<DumpEntry> dump;
  const std::vector<GeneratedWeights> generated = model.generate_weights();
  for (std::size_t li = 0; li < generated.size(); ++li) {
    DumpEntry e;
    e.name = cfg.network.layers[li].id;
    e.shape = cfg.network.layers[li].weight_shape;
    e.values = generated[li].tensor.values();
    dump.push_back(std::move(e));
  }
  result.weights_path = (fs::path(cfg.out_dir) / "weights_final.npw").string();
  save_weight_dump(dump, result.weights_path);
  return result;
}

// ---------------------------------------------------------------------------
// reports

PlanReport make_report(const ExperimentConfig& cfg,
                       const GroupMapping& mapping) {
  PlanReport report;
  report.regime = classify_regime(cfg.network, cfg.budget);
  const GenLayout layout = compute_layout(cfg.network, mapping, cfg.budget);
  const OverheadReport overhead =
      overhead_param_count(cfg.network, mapping, cfg.budget);
  const FlopReport flops = weightgen_flops(cfg.network, mapping, cfg.budget);

  json j;
  j["regime"] = to_string(report.regime);
  j["budget"] = cfg.budget.total_params;
  j["native_weights"] = cfg.network.total_weight_count();
  j["groups"] = json::array();
  for (std::size_t g = 0; g < mapping.num_groups; ++g) {
    json gj;
    gj["id"] = g;
    gj["params"] = layout.group_sizes[g];
    gj["members"] = layout.group_members[g];
    j["groups"].push_back(std::move(gj));
  }
  j["layers"] = json::array();
  for (std::size_t li = 0; li < cfg.network.layers.size(); ++li) {
    const LayerSpec& l = cfg.network.layers[li];
    const LayerGenPlan& plan = layout.layers[li];
    json lj;
    lj["id"] = l.id;
    lj["group"] = plan.group_id;
    lj["weights"] = l.weight_count();
    lj["generation"] = to_string(plan.kind);
    lj["templates"] = plan.templates;
    lj["tiles"] = plan.tiles;
    lj["gen_flops"] = flops.layers[li].generation;
    lj["forward_flops"] = flops.layers[li].forward;
    j["layers"].push_back(std::move(lj));
  }
  j["overhead"] = {{"combiner", overhead.combiner_params},
                   {"projection", overhead.projection_params},
                   {"masks", overhead.mask_params},
                   {"biases", overhead.bias_params}};
  j["census"] = expected_census(cfg.network, mapping, cfg.budget);
  j["biases_outside_budget"] = true;
  j["flops"] = {{"forward_per_image", flops.forward_total},
                {"weightgen", flops.generation_total},
                {"ratio_per_image", flops.ratio_per_image},
                {"ratio_batch_64", flops.ratio_batch_64},
                {"ratio_batch_config",
                 flops.ratio_for_batch(cfg.train.batch_size)}};
  report.json = j.dump(2);

  std::ostringstream table;
  table << "regime " << to_string(report.regime) << "  budget "
        << cfg.budget.total_params << " / native "
        << cfg.network.total_weight_count() << "\n";
  table << "layer            group  gen       K~  n   weights\n";
  for (std::size_t li = 0; li < cfg.network.layers.size(); ++li) {
    const LayerSpec& l = cfg.network.layers[li];
    const LayerGenPlan& plan = layout.layers[li];
    std::ostringstream row;
    row << l.id;
    table << row.str();
    for (std::size_t pad = row.str().size(); pad < 17; ++pad) table << ' ';
    table << plan.group_id << "      " << to_string(plan.kind);
    for (std::size_t pad = std::string(to_string(plan.kind)).size(); pad < 10;
         ++pad)
      table << ' ';
    table << plan.templates << "   " << plan.tiles << "   " << l.weight_count()
          << "\n";
  }
  table << "overhead: combiner " << overhead.combiner_params << ", projection "
        << overhead.projection_params << ", masks " << overhead.mask_params
        << ", biases " << overhead.bias_params << " (biases excluded from theta)\n";
  table << "flops: forward/image " << flops.forward_total << ", weightgen "
        << flops.generation_total << ", ratio " << flops.ratio_per_image
        << " (batch-64 " << flops.ratio_batch_64 << ")\n";
  report.table = table.str();
  return report;
}

// ---------------------------------------------------------------------------
// checkpoint-driven entry points

SsnModel model_from_checkpoint(const ExperimentConfig& cfg,
                               const Checkpoint& ckpt) {
  const GroupMapping mapping = parse_mapping(ckpt.mapping_text, cfg.network);
  BudgetSpec budget = cfg.budget;
  budget.num_groups = mapping.num_groups;
  SsnModel model =
      SsnModel::build(cfg.network, budget, mapping, cfg.train.seed);
  restore_model(model, ckpt);
  return model;
}

std::vector<DumpEntry> materialize(const ExperimentConfig& cfg,
                                   const std::string& checkpoint_path,
                                   const std::string& weights_out) {
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  const SsnModel model = model_from_checkpoint(cfg, ckpt);
  std::vector<DumpEntry> dump;
  const std::vector<GeneratedWeights> generated = model.generate_weights();
  for (std::size_t li = 0; li < generated.size(); ++li) {
    DumpEntry e;
    e.name = cfg.network.layers[li].id;
    e.shape = cfg.network.layers[li].weight_shape;
    e.values = generated[li].tensor.values();
    dump.push_back(std::move(e));
  }
  save_weight_dump(dump, weights_out);
  return dump;
}

namespace {

std::vector<Tensor> weights_from_dump(const ExperimentConfig& cfg,
                                      const std::vector<DumpEntry>& dump) {
  if (dump.size() != cfg.network.layers.size())
    throw std::runtime_error("weights: dump has " +
                             std::to_string(dump.size()) + " layers, network " +
                             std::to_string(cfg.network.layers.size()));
  std::vector<Tensor> weights;
  for (std::size_t li = 0; li < dump.size(); ++li) {
    const LayerSpec& l = cfg.network.layers[li];
    if (dump[li].name != l.id || dump[li].shape != l.weight_shape)
      throw std::runtime_error("weights: entry '" + dump[li].name +
                               "' does not match layer '" + l.id + "'");
    weights.push_back(Tensor::constant(dump[li].shape, dump[li].values));
  }
  return weights;
}

}  // namespace

std::vector<double> checkpoint_logits(const ExperimentConfig& cfg,
                                      const std::string& checkpoint_path,
                                      const std::string& materialized_path,
                                      const Tensor& batch) {
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  const SsnModel model = model_from_checkpoint(cfg, ckpt);
  std::vector<Tensor> weights;
  if (materialized_path.empty()) {
    weights = model.layer_weights();
  } else {
    weights = weights_from_dump(cfg, load_weight_dump(materialized_path));
  }
  return forward_network(cfg.network, weights, model.biases(), batch).values();
}

double evaluate_checkpoint(const ExperimentConfig& cfg,
                           const std::string& checkpoint_path,
                           const std::string& materialized_path) {
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  const SsnModel model = model_from_checkpoint(cfg, ckpt);
  DataSplit data = load_dataset(cfg.data, cfg.train.seed);
  conform_to_network(data, cfg.network);
  std::vector<Tensor> weights;
  if (materialized_path.empty()) {
    weights = model.layer_weights();
  } else {
    weights = weights_from_dump(cfg, load_weight_dump(materialized_path));
  }
  return evaluate_error_at_1(cfg.network, weights, model.biases(), data.eval,
                             cfg.train.batch_size);
}

// ---------------------------------------------------------------------------
// sweeps

std::vector<SweepRow> run_sweep(const ExperimentConfig& base,
                                const std::vector<std::size_t>& groups_list,
                                const std::vector<std::size_t>& templates_list) {
  const std::vector<std::size_t> groups =
      groups_list.empty() ? std::vector<std::size_t>{base.budget.num_groups}
                          : groups_list;
  const std::vector<std::size_t> templates =
      templates_list.empty()
          ? std::vector<std::size_t>{base.budget.max_templates}
          : templates_list;
  std::vector<SweepRow> rows;
  for (const std::size_t P : groups)
    for (const std::size_t K : templates) {
      ExperimentConfig cfg = base;
      cfg.budget.num_groups = P;
      cfg.budget.max_templates = K;
      cfg.out_dir = (std::filesystem::path(base.out_dir) /
                     ("sweep_P" + std::to_string(P) + "_K" + std::to_string(K)))
                        .string();
      const RunResult run = run_training(cfg);
      SweepRow row;
      row.groups = P;
      row.templates = K;
      row.combiner = to_string(cfg.budget.combiner);
      row.upsampler = to_string(cfg.budget.upsampler);
      row.theta_params = cfg.budget.total_params;
      const OverheadReport o =
          overhead_param_count(cfg.network, run.mapping, cfg.budget);
      row.overhead_params = o.generation_overhead();
      row.census = run.census;
      row.final_train_loss =
          run.metrics.empty() ? 0.0 : run.metrics.back().train_loss;
      row.eval_error_at_1 = run.final_eval_error;
      rows.push_back(std::move(row));
    }
  return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows,
                     const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("sweep: cannot write '" + path + "'");
  out << "groups,templates,combiner,upsampler,theta_params,overhead_params,"
         "census,final_train_loss,eval_error_at_1\n";
  char buf[32];
  for (const SweepRow& r : rows) {
    out << r.groups << ',' << r.templates << ',' << r.combiner << ','
        << r.upsampler << ',' << r.theta_params << ',' << r.overhead_params
        << ',' << r.census << ',';
    std::snprintf(buf, sizeof buf, "%.17g", r.final_train_loss);
    out << buf << ',';
    std::snprintf(buf, sizeof buf, "%.17g", r.eval_error_at_1);
    out << buf << "\n";
  }
}

}  // namespace npas

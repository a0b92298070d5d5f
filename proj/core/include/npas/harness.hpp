#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "npas/archspec.hpp"
#include "npas/checkpoint.hpp"
#include "npas/dataset.hpp"
#include "npas/groupsearch.hpp"
#include "npas/model.hpp"
#include "npas/paramstore.hpp"

namespace npas {

struct MetricsRecord {
  std::size_t step = 0;   // global optimizer steps taken so far
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double eval_error_at_1 = 0.0;
  double wall_time_ms = 0.0;
  std::size_t params_total = 0;
  std::size_t params_theta = 0;
  std::size_t params_overhead = 0;
  double flops_forward = 0.0;
  double flops_weightgen = 0.0;
};

std::string metrics_to_json_line(const MetricsRecord& r);
std::vector<MetricsRecord> parse_metrics_jsonl(const std::string& text);

// Error@1 over the eval set: fraction of samples whose argmax logit is
// not the label (ties resolve to the lowest class index). Weights and
// biases are detached once; batches may be sharded across up to
// NPAS_THREADS threads, with an order-fixed integer reduction.
double evaluate_error_at_1(const NetworkSpec& net,
                           const std::vector<Tensor>& weights,
                           const std::map<std::string, Tensor>& biases,
                           const Dataset& eval, std::size_t batch_size);
double evaluate_model(const Model& model, const Dataset& eval,
                      std::size_t batch_size);

std::size_t eval_thread_cap();  // NPAS_THREADS, default 1

// --- full training pipeline -------------------------------------------------

struct RunResult {
  GroupMapping mapping;
  std::vector<MetricsRecord> metrics;
  std::size_t census = 0;
  double final_eval_error = 0.0;
  std::string checkpoint_path;
  std::string metrics_path;
  std::string mapping_path;
  std::string weights_path;
};

// Resolves the mapping per config (running the preliminary search for
// `auto`), builds the model, trains, evaluates per epoch, and writes
// checkpoint + metrics + mapping + final generated weights to
// cfg.out_dir. The census printed at startup is cross-checked against
// the overhead formulas and the run aborts on any disagreement.
RunResult run_training(const ExperimentConfig& cfg);

// Mapping resolution shared by the subcommands; for `auto` this trains
// the preliminary model on the config's training data.
struct MappingResolution {
  GroupMapping mapping;
  std::optional<AutoMappingResult> search;  // set for auto
};
MappingResolution resolve_mapping(const ExperimentConfig& cfg,
                                  const Dataset& train_data);

// Budget conservation: census must equal |theta| + generation overhead
// + biases, exactly.
std::size_t expected_census(const NetworkSpec& net, const GroupMapping& mapping,
                            const BudgetSpec& budget);

// --- reports -----------------------------------------------------------------

struct PlanReport {
  Regime regime = Regime::Exact;
  std::string json;   // machine-readable
  std::string table;  // human-readable
};
PlanReport make_report(const ExperimentConfig& cfg,
                       const GroupMapping& mapping);

// --- checkpoint-driven entry points -----------------------------------------

// Rebuilds the model a checkpoint was trained with (mapping comes from
// the checkpoint itself) and restores its parameters.
SsnModel model_from_checkpoint(const ExperimentConfig& cfg,
                               const Checkpoint& ckpt);

// One-time weight generation after training; writes the per-layer dump.
std::vector<DumpEntry> materialize(const ExperimentConfig& cfg,
                                   const std::string& checkpoint_path,
                                   const std::string& weights_out);

// Eval logits for a batch, either regenerating weights from the
// checkpoint or reading a materialized dump.
std::vector<double> checkpoint_logits(const ExperimentConfig& cfg,
                                      const std::string& checkpoint_path,
                                      const std::string& materialized_path,
                                      const Tensor& batch);

// Error@1 of a stored checkpoint on the config's eval split.
double evaluate_checkpoint(const ExperimentConfig& cfg,
                           const std::string& checkpoint_path,
                           const std::string& materialized_path = "");

// --- sweeps -------------------------------------------------------------------

struct SweepRow {
  std::size_t groups = 0;
  std::size_t templates = 0;
  std::string combiner;
  std::string upsampler;
  std::size_t theta_params = 0;
  std::size_t overhead_params = 0;
  std::size_t census = 0;
  double final_train_loss = 0.0;
  double eval_error_at_1 = 0.0;
};

std::vector<SweepRow> run_sweep(const ExperimentConfig& base,
                                const std::vector<std::size_t>& groups_list,
                                const std::vector<std::size_t>& templates_list);
void write_sweep_csv(const std::vector<SweepRow>& rows,
                     const std::string& path);

}  // namespace npas

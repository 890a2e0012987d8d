#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dscl/config.hpp"
#include "dscl/metrics.hpp"
#include "dscl/train.hpp"

namespace dscl {

// Data for one run: split, standardized on the training portion.
struct PreparedRun {
  Dataset raw;
  SplitIndices split;
  Standardizer features;
  Standardizer labels;
  TrainSets sets;
  Tensor test_x;  // standardized
  Tensor test_y;  // raw
  ModelConfig model;
};

PreparedRun prepare_run(const RunConfig& config);

struct RunOutcome {
  MetricReport report;
  RunLog log;
  Tensor test_predictions;  // de-normalized
};

// Trains and evaluates on the held-out split. With config.out_dir set it
// also writes train.jsonl, checkpoints, metrics.json, report.txt, test.csv
// and mask.csv there.
RunOutcome run_experiment(const RunConfig& config);

nlohmann::ordered_json report_to_json(const MetricReport& report,
                                      const std::vector<std::string>& target_names = {});
// Aligned plain-text table, one row per labeled report.
std::string format_report_table(const std::vector<std::pair<std::string, MetricReport>>& rows);

struct AblationVariant {
  std::string name;
  LossWeights weights;
  bool init_updates = true;
};

// Fixed order: full, each loss removed, both unsupervised losses removed,
// no init, regression only.
std::vector<AblationVariant> ablation_grid(const LossWeights& base);

struct AblationRow {
  std::string name;
  MetricReport report;
};

// Runs `jobs` independent tasks on up to `threads` workers.
void run_parallel(std::size_t jobs, std::size_t threads, const std::function<void(std::size_t)>& task);

std::vector<AblationRow> run_ablation(const RunConfig& config, std::size_t threads);
nlohmann::ordered_json ablation_to_json(const std::vector<AblationRow>& rows);

struct SweepRow {
  double rate = 0.0;
  MetricReport report;
};

std::vector<SweepRow> run_sweep(const RunConfig& config, const std::vector<double>& rates,
                                std::size_t threads);
// Columns: rate, seed, mae, rmse, pearson, spearman.
std::string sweep_csv(const std::vector<SweepRow>& rows);

// Evaluates a checkpoint written by training on a CSV whose first
// input_dim columns are features and next M columns targets (raw units).
MetricReport evaluate_checkpoint(const std::filesystem::path& checkpoint,
                                 const std::filesystem::path& data,
                                 std::optional<AngularMode> angular = std::nullopt);

}  // namespace dscl

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dscl/data.hpp"
#include "dscl/metrics.hpp"
#include "dscl/model.hpp"
#include "dscl/train.hpp"

namespace dscl {

enum class TaskKind { synthetic, tabular };

struct TaskConfig {
  TaskKind kind = TaskKind::synthetic;
  SyntheticTaskConfig synthetic;
  std::filesystem::path path;  // tabular only
  std::vector<std::string> input_columns;
  std::vector<std::string> target_columns;
  bool normalize = true;
};

struct RunConfig {
  std::uint64_t seed = 0;
  TaskConfig task;
  ModelConfig model;  // encoder.input_dim and num_targets come from the data
  SplitSpec split;
  TrainOptions train;
  std::optional<AngularMode> angular;
  std::filesystem::path out_dir;

  // Effective configuration with every default filled in, keys in a fixed
  // order. The digest and the seed-free comparison use this form.
  nlohmann::ordered_json to_json() const;
};

// Rejects unknown keys, wrong types and out-of-range values with a
// ConfigError naming the JSON path. Nothing is computed before this passes.
RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::filesystem::path& path);

// Seed precedence: explicit flag, then DSCL_SEED, then the config file.
void apply_seed_override(RunConfig& config, std::optional<std::uint64_t> flag_seed);

// 64-bit FNV-1a of the effective configuration, as 16 hex digits.
std::string config_digest(const RunConfig& config);

}  // namespace dscl

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dscl/tensor.hpp"

namespace dscl {

struct Dataset {
  Tensor features;  // K x input_dim
  Tensor labels;    // K x M
  std::vector<std::string> feature_names;
  std::vector<std::string> label_names;

  std::size_t size() const { return features.rows(); }
};

// Per-column affine map x -> (x - mean) / std.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> stddev;

  // Constant columns get stddev 1 so they map to 0.
  static Standardizer fit(const Tensor& data);
  Tensor apply(const Tensor& data) const;
  Tensor invert(const Tensor& data) const;
};

enum class SyntheticGenerator { linear_mix, nonlinear_sine, anti_correlated };

struct SyntheticTaskConfig {
  std::size_t num_samples = 5000;
  std::size_t input_dim = 8;
  std::size_t num_targets = 2;
  SyntheticGenerator generator = SyntheticGenerator::nonlinear_sine;
  double noise_std = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
};

// x ~ N(0, I). linear-mix: y = W x + e. nonlinear-sine: y_m = sin(a_m . x) + e.
// anti-correlated (M = 2): y_1 = sin(a . x) + e_1, y_2 = -y_1 + e_2.
Dataset generate_synthetic(const SyntheticTaskConfig& config);

struct TabularData {
  Dataset data;
  std::optional<Standardizer> feature_transform;
  std::optional<Standardizer> label_transform;
};

// RFC-4180 CSV with a header row. Empty column lists select every column
// not named on the other side.
TabularData load_tabular(const std::filesystem::path& path,
                         const std::vector<std::string>& input_cols,
                         const std::vector<std::string>& target_cols, bool normalize);

void write_dataset_csv(const std::filesystem::path& path, const Dataset& data);

// Parses one CSV document into rows of fields.
std::vector<std::vector<std::string>> parse_csv(std::string_view text);

inline constexpr double kTestFraction = 0.2;

struct SplitSpec {
  double label_rate = 0.1;  // one of 1.0, 0.20, 0.10, 0.05, 0.01
  std::uint64_t seed = 0;

  void validate() const;
};

struct SplitIndices {
  std::vector<std::size_t> test;
  std::vector<std::size_t> labeled;
  std::vector<std::size_t> unlabeled;
};

// 20% test first, then label_rate of the remainder labeled. ConfigError if
// fewer than 2 * batch_size rows end up labeled.
SplitIndices split(std::size_t total, const SplitSpec& spec, std::size_t batch_size);

}  // namespace dscl

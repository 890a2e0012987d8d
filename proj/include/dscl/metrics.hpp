#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dscl/tensor.hpp"

namespace dscl {

// Pearson correlation; nullopt when either side has zero variance.
std::optional<double> pearson(std::span<const double> a, std::span<const double> b);
// Ranks 0..n-1 with ties sharing their average rank.
std::vector<double> average_ranks(std::span<const double> values);
// Pearson of average-tie ranks.
std::optional<double> spearman(std::span<const double> a, std::span<const double> b);

struct TargetMetrics {
  double mae = 0.0;
  double rmse = 0.0;
  std::optional<double> pearson;
  std::optional<double> spearman;
};

struct MetricReport {
  std::vector<TargetMetrics> per_target;
  double mae = 0.0;
  double rmse = 0.0;
  std::optional<double> pearson;   // mean over targets with a defined value
  std::optional<double> spearman;
  std::optional<double> angular_error_deg;
  std::uint64_t seed = 0;
  std::string config_digest;
  std::vector<std::string> diagnostics;
};

// predictions and labels are K x M, de-normalized. K >= 2.
MetricReport metric_suite(const Tensor& predictions, const Tensor& labels);

enum class AngularMode { euler2, vec3 };

// Mean angle in degrees between predicted and true gaze directions.
// euler2 rows are (pitch, yaw) in radians; vec3 rows are 3D vectors.
double angular_error(const Tensor& predictions, const Tensor& labels, AngularMode mode);

}  // namespace dscl

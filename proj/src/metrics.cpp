#include "dscl/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>

#include "dscl/common.hpp"

namespace dscl {

std::optional<double> pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("pearson: length mismatch");
  const std::size_t n = a.size();
  if (n < 2) return std::nullopt;
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(n);
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) return std::nullopt;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return values[i] < values[j]; });
  std::vector<double> ranks(n);
  for (std::size_t start = 0; start < n;) {
    std::size_t end = start + 1;
    while (end < n && values[order[end]] == values[order[start]]) ++end;
    const double avg = 0.5 * static_cast<double>(start + end - 1);
    for (std::size_t k = start; k < end; ++k) ranks[order[k]] = avg;
    start = end;
  }
  return ranks;
}

std::optional<double> spearman(std::span<const double> a, std::span<const double> b) {
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  return pearson(ra, rb);
}

namespace {

std::vector<double> column(const Tensor& t, std::size_t j) {
  std::vector<double> out(t.rows());
  for (std::size_t i = 0; i < t.rows(); ++i) out[i] = t(i, j);
  return out;
}

}  // namespace

MetricReport metric_suite(const Tensor& predictions, const Tensor& labels) {
  if (!predictions.same_shape(labels))
    throw DimensionError("metric_suite: predictions " + shape_string(predictions.shape()) +
                         " vs labels " + shape_string(labels.shape()));
  const std::size_t k = predictions.rows(), m_count = predictions.cols();
  if (k < 2) throw ContractError("metric_suite needs at least two rows");
  MetricReport report;
  double pearson_sum = 0.0, spearman_sum = 0.0;
  std::size_t pearson_n = 0, spearman_n = 0;
  for (std::size_t m = 0; m < m_count; ++m) {
    const auto p = column(predictions, m);
    const auto y = column(labels, m);
    TargetMetrics t;
    double abs_sum = 0.0, sq_sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      const double d = p[i] - y[i];
      abs_sum += std::fabs(d);
      sq_sum += d * d;
    }
    t.mae = abs_sum / static_cast<double>(k);
    t.rmse = std::sqrt(sq_sum / static_cast<double>(k));
    t.pearson = pearson(p, y);
    t.spearman = spearman(p, y);
    if (!t.pearson)
      report.diagnostics.push_back("target " + std::to_string(m) +
                                   ": zero variance, correlation undefined");
    if (t.pearson) {
      pearson_sum += *t.pearson;
      ++pearson_n;
    }
    if (t.spearman) {
      spearman_sum += *t.spearman;
      ++spearman_n;
    }
    report.mae += t.mae;
    report.rmse += t.rmse;
    report.per_target.push_back(t);
  }
  report.mae /= static_cast<double>(m_count);
  report.rmse /= static_cast<double>(m_count);
  if (pearson_n) report.pearson = pearson_sum / static_cast<double>(pearson_n);
  if (spearman_n) report.spearman = spearman_sum / static_cast<double>(spearman_n);
  return report;
}

namespace {

std::array<double, 3> gaze_vector(const Tensor& t, std::size_t i, AngularMode mode) {
  if (mode == AngularMode::euler2) {
    const double pitch = t(i, 0), yaw = t(i, 1);
    return {std::cos(pitch) * std::sin(yaw), std::sin(pitch), std::cos(pitch) * std::cos(yaw)};
  }
  std::array<double, 3> v{t(i, 0), t(i, 1), t(i, 2)};
  const double nrm = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  if (nrm == 0.0) throw DataError("angular_error: zero-norm vector in row " + std::to_string(i));
  for (double& c : v) c /= nrm;
  return v;
}

}  // namespace

double angular_error(const Tensor& predictions, const Tensor& labels, AngularMode mode) {
  if (!predictions.same_shape(labels)) throw DimensionError("angular_error: shape mismatch");
  const std::size_t want = mode == AngularMode::euler2 ? 2 : 3;
  if (predictions.cols() != want)
    throw DimensionError("angular_error: expected " + std::to_string(want) + " columns");
  const std::size_t k = predictions.rows();
  if (k == 0) throw ContractError("angular_error on empty input");
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const auto a = gaze_vector(predictions, i, mode);
    const auto b = gaze_vector(labels, i, mode);
    const double c = std::clamp(a[0] * b[0] + a[1] * b[1] + a[2] * b[2], -1.0, 1.0);
    total += std::acos(c) * 180.0 / std::numbers::pi;
  }
  return total / static_cast<double>(k);
}

}  // namespace dscl

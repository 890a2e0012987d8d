#include "dscl/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "dscl/common.hpp"

namespace dscl {

// ---- standardization -------------------------------------------------------

Standardizer Standardizer::fit(const Tensor& data) {
  const std::size_t k = data.rows(), c = data.cols();
  if (k == 0) throw DataError("cannot standardize an empty table");
  Standardizer s;
  s.mean.assign(c, 0.0);
  s.stddev.assign(c, 0.0);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < c; ++j) s.mean[j] += data(i, j);
  for (double& m : s.mean) m /= static_cast<double>(k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      const double d = data(i, j) - s.mean[j];
      s.stddev[j] += d * d;
    }
  for (double& v : s.stddev) {
    v = std::sqrt(v / static_cast<double>(k));
    if (v == 0.0) v = 1.0;
  }
  return s;
}

Tensor Standardizer::apply(const Tensor& data) const {
  if (data.cols() != mean.size()) throw DimensionError("standardizer column count mismatch");
  Tensor out(data.shape());
  for (std::size_t i = 0; i < data.rows(); ++i)
    for (std::size_t j = 0; j < data.cols(); ++j) out(i, j) = (data(i, j) - mean[j]) / stddev[j];
  return out;
}

Tensor Standardizer::invert(const Tensor& data) const {
  if (data.cols() != mean.size()) throw DimensionError("standardizer column count mismatch");
  Tensor out(data.shape());
  for (std::size_t i = 0; i < data.rows(); ++i)
    for (std::size_t j = 0; j < data.cols(); ++j) out(i, j) = data(i, j) * stddev[j] + mean[j];
  return out;
}

// ---- synthetic tasks ---------------------------------------------------------

void SyntheticTaskConfig::validate() const {
  if (num_samples < 2) throw ConfigError("synthetic task needs at least two samples");
  if (input_dim == 0) throw ConfigError("synthetic input_dim must be positive");
  if (num_targets < 2 || num_targets > 3) throw ConfigError("synthetic num_targets must be 2 or 3");
  if (generator == SyntheticGenerator::anti_correlated && num_targets != 2)
    throw ConfigError("anti-correlated generator is defined for two targets");
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std))
    throw ConfigError("noise_std must be finite and non-negative");
}

namespace {

// Frequency of the projected input inside sin(); a.x ~ N(0, kSineScale^2).
constexpr double kSineScale = 1.5;

Tensor random_directions(std::size_t count, std::size_t dim, double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor a({count, dim});
  for (std::size_t m = 0; m < count; ++m) {
    double nrm = 0.0;
    for (std::size_t k = 0; k < dim; ++k) {
      a(m, k) = normal(rng);
      nrm += a(m, k) * a(m, k);
    }
    nrm = std::sqrt(nrm);
    for (std::size_t k = 0; k < dim; ++k) a(m, k) *= scale / nrm;
  }
  return a;
}

double project(const Tensor& a, std::size_t m, const Tensor& x, std::size_t i) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.cols(); ++k) s += a(m, k) * x(i, k);
  return s;
}

}  // namespace

Dataset generate_synthetic(const SyntheticTaskConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t k = cfg.num_samples, d = cfg.input_dim, m_count = cfg.num_targets;

  const Tensor directions =
      cfg.generator == SyntheticGenerator::linear_mix
          ? random_directions(m_count, d, 1.0, rng)
          : random_directions(m_count, d, kSineScale, rng);

  Dataset out;
  out.features = Tensor({k, d});
  for (double& v : out.features.data()) v = normal(rng);
  out.labels = Tensor({k, m_count});
  for (std::size_t i = 0; i < k; ++i) {
    switch (cfg.generator) {
      case SyntheticGenerator::linear_mix:
        for (std::size_t m = 0; m < m_count; ++m)
          out.labels(i, m) = project(directions, m, out.features, i);
        break;
      case SyntheticGenerator::nonlinear_sine:
        for (std::size_t m = 0; m < m_count; ++m)
          out.labels(i, m) = std::sin(project(directions, m, out.features, i));
        break;
      case SyntheticGenerator::anti_correlated:
        out.labels(i, 0) = std::sin(project(directions, 0, out.features, i));
        break;
    }
  }
  if (cfg.noise_std > 0.0) {
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t m = 0; m < m_count; ++m) out.labels(i, m) += cfg.noise_std * normal(rng);
  }
  if (cfg.generator == SyntheticGenerator::anti_correlated) {
    // y_2 = -y_1 + e_2, built on the already-noisy y_1.
    for (std::size_t i = 0; i < k; ++i)
      out.labels(i, 1) = -out.labels(i, 0) + (cfg.noise_std > 0.0 ? out.labels(i, 1) : 0.0);
  }
  for (std::size_t j = 0; j < d; ++j) out.feature_names.push_back("x" + std::to_string(j));
  for (std::size_t m = 0; m < m_count; ++m) out.label_names.push_back("y" + std::to_string(m));
  return out;
}

// ---- CSV -----------------------------------------------------------------------

std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, field_started = false;
  std::size_t i = 0;
  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_row = [&] {
    end_field();
    if (!(row.size() == 1 && row[0].empty())) rows.push_back(std::move(row));
    row.clear();
  };
  while (i < text.size()) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"' && !field_started) {
      quoted = true;
      field_started = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\r' || c == '\n') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      end_row();
    } else {
      field += c;
      field_started = true;
    }
    ++i;
  }
  if (quoted) throw DataError("CSV ends inside a quoted field");
  if (!field.empty() || !row.empty()) end_row();
  return rows;
}

namespace {

double parse_number(const std::string& cell, std::size_t row, const std::string& column) {
  std::string_view s(cell);
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v))
    throw DataError("non-numeric cell '" + cell + "' at row " + std::to_string(row) +
                    ", column '" + column + "'");
  return v;
}

}  // namespace

TabularData load_tabular(const std::filesystem::path& path,
                         const std::vector<std::string>& input_cols,
                         const std::vector<std::string>& target_cols, bool normalize) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  std::stringstream buffer;
  buffer << is.rdbuf();
  const auto rows = parse_csv(buffer.str());
  if (rows.empty()) throw DataError(path.string() + " has no header row");
  const auto& header = rows.front();

  auto index_of = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError("missing column '" + name + "' in " + path.string());
    return static_cast<std::size_t>(it - header.begin());
  };
  auto resolve = [&](const std::vector<std::string>& wanted, const std::vector<std::string>& other) {
    std::vector<std::string> names = wanted;
    if (names.empty())
      for (const auto& h : header)
        if (std::find(other.begin(), other.end(), h) == other.end()) names.push_back(h);
    return names;
  };
  if (input_cols.empty() && target_cols.empty())
    throw DataError("load_tabular: name the input or the target columns");
  const auto in_names = resolve(input_cols, target_cols);
  const auto out_names = resolve(target_cols, input_cols);
  std::vector<std::size_t> in_idx, out_idx;
  for (const auto& n : in_names) in_idx.push_back(index_of(n));
  for (const auto& n : out_names) out_idx.push_back(index_of(n));

  const std::size_t k = rows.size() - 1;
  TabularData out;
  out.data.features = Tensor({k, in_idx.size()});
  out.data.labels = Tensor({k, out_idx.size()});
  out.data.feature_names = in_names;
  out.data.label_names = out_names;
  for (std::size_t r = 0; r < k; ++r) {
    const auto& row = rows[r + 1];
    if (row.size() != header.size())
      throw DataError("row " + std::to_string(r + 1) + " has " + std::to_string(row.size()) +
                      " fields, header has " + std::to_string(header.size()));
    for (std::size_t j = 0; j < in_idx.size(); ++j)
      out.data.features(r, j) = parse_number(row[in_idx[j]], r + 1, in_names[j]);
    for (std::size_t j = 0; j < out_idx.size(); ++j)
      out.data.labels(r, j) = parse_number(row[out_idx[j]], r + 1, out_names[j]);
  }
  if (normalize) {
    out.feature_transform = Standardizer::fit(out.data.features);
    out.label_transform = Standardizer::fit(out.data.labels);
    out.data.features = out.feature_transform->apply(out.data.features);
    out.data.labels = out.label_transform->apply(out.data.labels);
  }
  return out;
}

void write_dataset_csv(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  std::vector<std::string> names = data.feature_names;
  names.insert(names.end(), data.label_names.begin(), data.label_names.end());
  for (std::size_t j = 0; j < names.size(); ++j) os << (j ? "," : "") << names[j];
  os << '\n' << std::setprecision(17);
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t j = 0; j < data.features.cols(); ++j) os << (j ? "," : "") << data.features(i, j);
    for (std::size_t j = 0; j < data.labels.cols(); ++j) os << ',' << data.labels(i, j);
    os << '\n';
  }
}

// ---- splits --------------------------------------------------------------------

void SplitSpec::validate() const {
  constexpr double kRates[] = {1.0, 0.20, 0.10, 0.05, 0.01};
  if (std::none_of(std::begin(kRates), std::end(kRates),
                   [&](double r) { return std::fabs(r - label_rate) < 1e-12; }))
    throw ConfigError("label_rate must be one of 1.0, 0.20, 0.10, 0.05, 0.01");
}

SplitIndices split(std::size_t total, const SplitSpec& spec, std::size_t batch_size) {
  spec.validate();
  if (total == 0) throw DataError("cannot split an empty dataset");
  std::vector<std::size_t> perm(total);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(spec.seed);
  std::shuffle(perm.begin(), perm.end(), rng);

  const auto n_test = static_cast<std::size_t>(std::llround(kTestFraction * static_cast<double>(total)));
  const std::size_t remaining = total - n_test;
  const auto n_labeled =
      static_cast<std::size_t>(std::llround(spec.label_rate * static_cast<double>(remaining)));
  if (n_labeled < 2 * batch_size)
    throw ConfigError("label rate " + std::to_string(spec.label_rate) + " leaves " +
                      std::to_string(n_labeled) + " labeled rows; need at least " +
                      std::to_string(2 * batch_size));

  SplitIndices s;
  s.test.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_test));
  s.labeled.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_test),
                   perm.begin() + static_cast<std::ptrdiff_t>(n_test + n_labeled));
  s.unlabeled.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_test + n_labeled), perm.end());
  std::sort(s.test.begin(), s.test.end());
  std::sort(s.labeled.begin(), s.labeled.end());
  std::sort(s.unlabeled.begin(), s.unlabeled.end());
  return s;
}

}  // namespace dscl

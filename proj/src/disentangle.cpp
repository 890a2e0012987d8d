#include "dscl/disentangle.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>

#include "dscl/common.hpp"

namespace dscl {

JacobianStats JacobianStats::from_matrix(const Tensor& jacobian) {
  const std::size_t m = jacobian.rows(), n = jacobian.cols();
  JacobianStats s;
  s.per_sample = Tensor({1, m, n}, jacobian.storage());
  s.aggregated = Tensor({m, n});
  for (std::size_t i = 0; i < m * n; ++i) s.aggregated[i] = std::fabs(jacobian[i]);
  return s;
}

JacobianStats compute_jacobian(const Model& model, const ParamBinding& params, const ad::Var& z) {
  if (!z.value().all_finite()) throw NumericError("compute_jacobian: non-finite features");
  const std::size_t b = z.rows(), n = z.cols(), m_count = model.num_targets();

  JacobianStats stats;
  stats.per_sample = Tensor({b, m_count, n});
  {
    // Detached pass with its own parameter leaves so the training graph's
    // gradients stay untouched.
    const ParamBinding probe = model.bind();
    const ad::Var z_leaf = ad::Var::leaf(z.value());
    const ad::Var y = model.regress(probe, z_leaf);
    for (std::size_t m = 0; m < m_count; ++m) {
      const ad::Var seed = ad::sum(ad::col(y, m));
      ad::backward(seed);
      const Tensor g = z_leaf.grad();
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t k = 0; k < n; ++k) stats.per_sample.at(i, m, k) = g(i, k);
      ad::zero_grad(seed);
    }
  }
  stats.aggregated = Tensor({m_count, n});
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t m = 0; m < m_count; ++m)
      for (std::size_t k = 0; k < n; ++k)
        stats.aggregated(m, k) += std::fabs(stats.per_sample.at(i, m, k));
  for (double& v : stats.aggregated.data()) v /= static_cast<double>(b);

  stats.rows = model.regressor_jacobian(params, z);
  return stats;
}

ad::Var jacobian_loss(const JacobianStats& stats) {
  const std::size_t m_count = stats.targets();
  if (m_count < 2)
    throw ContractError("jacobian_loss needs at least two targets, got " + std::to_string(m_count));
  std::vector<ad::Var> rows = stats.rows;
  if (rows.empty()) {
    const std::size_t b = stats.batch(), n = stats.features();
    for (std::size_t m = 0; m < m_count; ++m) {
      Tensor r({b, n});
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t k = 0; k < n; ++k) r(i, k) = stats.per_sample.at(i, m, k);
      rows.push_back(ad::Var::constant(std::move(r)));
    }
  }
  const double batch = static_cast<double>(rows.front().rows());
  ad::Var total;
  for (std::size_t m = 0; m < m_count; ++m)
    for (std::size_t k = m + 1; k < m_count; ++k) {
      ad::Var term = ad::sum(ad::abs(ad::mul(rows[m], rows[k])));
      total = total ? ad::add(total, term) : term;
    }
  // Each unordered pair stands for two ordered pairs.
  return ad::scale(total, 2.0 / batch);
}

SubspaceMask SubspaceMask::from_matrix(const Tensor& mask) {
  SubspaceMask s;
  s.mask = mask;
  const std::size_t m_count = mask.rows(), n = mask.cols();
  s.support.assign(m_count, {});
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t owners = 0;
    for (std::size_t m = 0; m < m_count; ++m) {
      const double v = mask(m, k);
      if (v != 0.0 && v != 1.0) throw ContractError("mask entries must be 0 or 1");
      if (v == 1.0) {
        ++owners;
        s.support[m].push_back(k);
      }
    }
    if (owners != 1)
      throw ContractError("mask column " + std::to_string(k) + " is not one-hot");
  }
  return s;
}

SubspaceMask build_mask(const Tensor& aggregated) {
  if (!aggregated.all_finite()) throw NumericError("build_mask: non-finite Jacobian");
  const std::size_t m_count = aggregated.rows(), n = aggregated.cols();
  SubspaceMask s;
  s.mask = Tensor({m_count, n});
  s.support.assign(m_count, {});
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t best = 0;
    bool all_zero = aggregated(0, k) == 0.0;
    for (std::size_t m = 1; m < m_count; ++m) {
      if (std::fabs(aggregated(m, k)) > std::fabs(aggregated(best, k))) best = m;
      all_zero = all_zero && aggregated(m, k) == 0.0;
    }
    if (all_zero) ++s.degenerate_columns;
    s.mask(best, k) = 1.0;
    s.support[best].push_back(k);
  }
  return s;
}

Tensor DisentangledBatch::to_tensor() const {
  const std::size_t m_count = slices.size();
  const std::size_t b = slices.front().rows(), n = slices.front().cols();
  Tensor out({b, n, m_count});
  for (std::size_t m = 0; m < m_count; ++m)
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t k = 0; k < n; ++k) out.at(i, k, m) = slices[m].value()(i, k);
  return out;
}

DisentangledBatch apply_mask(const ad::Var& z, const SubspaceMask& mask) {
  if (z.value().rank() != 2 || z.cols() != mask.features())
    throw DimensionError("apply_mask: features " + shape_string(z.shape()) + " vs mask " +
                         shape_string(mask.mask.shape()));
  DisentangledBatch out;
  out.support = mask.support;
  const std::size_t n = mask.features();
  for (std::size_t m = 0; m < mask.targets(); ++m) {
    Tensor gate({1, n});
    for (std::size_t k = 0; k < n; ++k) gate[k] = mask.mask(m, k);
    out.slices.push_back(ad::mul_rowvec(z, ad::Var::constant(std::move(gate))));
  }
  return out;
}

double disjointness_score(const Tensor& aggregated, const SubspaceMask& mask,
                          std::string* diagnostic) {
  if (!aggregated.same_shape(mask.mask))
    throw DimensionError("disjointness_score: Jacobian " + shape_string(aggregated.shape()) +
                         " vs mask " + shape_string(mask.mask.shape()));
  double inside = 0.0, total = 0.0;
  for (std::size_t i = 0; i < aggregated.size(); ++i) {
    const double a = std::fabs(aggregated[i]);
    inside += mask.mask[i] * a;
    total += a;
  }
  if (total == 0.0) {
    if (diagnostic) *diagnostic = "aggregated Jacobian is all zero";
    return 0.0;
  }
  return inside / total;
}

void JacobianEma::update(const Tensor& aggregated) {
  if (empty()) {
    value_ = aggregated;
    return;
  }
  if (!value_.same_shape(aggregated)) throw DimensionError("JacobianEma: shape changed");
  for (std::size_t i = 0; i < value_.size(); ++i)
    value_[i] = decay_ * value_[i] + (1.0 - decay_) * aggregated[i];
}

void write_matrix_csv(const std::filesystem::path& path, const Tensor& matrix) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << std::setprecision(17);
  for (std::size_t i = 0; i < matrix.rows(); ++i) {
    for (std::size_t j = 0; j < matrix.cols(); ++j) {
      if (j) os << ',';
      os << matrix(i, j);
    }
    os << '\n';
  }
}

}  // namespace dscl

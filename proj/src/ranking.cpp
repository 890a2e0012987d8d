#include "dscl/ranking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "dscl/kernels.hpp"
#include "dscl/metrics.hpp"

namespace dscl {

void SimilarityMatrix::validate() const {
  const std::size_t b = values.rows();
  if (values.cols() != b) throw DimensionError("similarity matrix must be square");
  for (std::size_t i = 0; i < b; ++i) {
    const double diag = values(i, i);
    const double want = kind == SimilarityKind::distance ? 0.0 : 1.0;
    if (std::fabs(diag - want) > 1e-10)
      throw ContractError("similarity matrix diagonal entry " + std::to_string(i) + " is " +
                          std::to_string(diag));
    for (std::size_t j = 0; j < b; ++j) {
      if (values(i, j) < 0.0) throw ContractError("similarity matrix has negative entries");
      if (std::fabs(values(i, j) - values(j, i)) > 1e-10)
        throw ContractError("similarity matrix is not symmetric");
    }
  }
}

void RankVector::validate() const {
  std::vector<std::size_t> sorted = ranks;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i)
    if (sorted[i] != i) throw ContractError("rank vector is not a permutation of 0..B-1");
}

RankVector RankVector::reversed() const {
  RankVector r;
  r.ranks.reserve(ranks.size());
  for (std::size_t v : ranks) r.ranks.push_back(ranks.size() - 1 - v);
  return r;
}

RankVector rank_of(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return values[i] < values[j]; });
  RankVector r;
  r.ranks.resize(n);
  for (std::size_t pos = 0; pos < n; ++pos) r.ranks[order[pos]] = pos;
  return r;
}

SimilarityMatrix distance_to_affinity(const SimilarityMatrix& distances, std::string* diagnostic) {
  if (distances.kind != SimilarityKind::distance)
    throw ContractError("distance_to_affinity expects a distance matrix");
  const std::size_t b = distances.values.rows();
  if (distances.values.cols() != b) throw DimensionError("distance matrix must be square");
  std::vector<double> off;
  off.reserve(b * (b - 1) / 2);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = i + 1; j < b; ++j) off.push_back(distances.values(i, j));

  SimilarityMatrix out{Tensor({b, b}, 1.0), SimilarityKind::affinity};
  if (off.empty()) return out;
  std::sort(off.begin(), off.end());
  const std::size_t h = off.size() / 2;
  double sigma = off.size() % 2 ? off[h] : 0.5 * (off[h - 1] + off[h]);
  if (off.back() == 0.0) {
    if (diagnostic) *diagnostic = "all distances are zero; using uniform affinity";
    return out;
  }
  if (sigma <= 0.0) {
    // More than half of the pairs coincide; use the smallest positive distance.
    sigma = *std::upper_bound(off.begin(), off.end(), 0.0);
    if (diagnostic) *diagnostic = "median distance is zero; bandwidth from smallest positive distance";
  }
  const double denom = 2.0 * sigma * sigma;
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j)
      if (i != j) {
        const double d = distances.values(i, j);
        out.values(i, j) = std::exp(-d * d / denom);
      }
  return out;
}

RankVector spectral_seriation(const SimilarityMatrix& affinity, SeriationOptions options) {
  const std::size_t b = affinity.values.rows();
  if (affinity.values.cols() != b) throw DimensionError("affinity matrix must be square");
  if (b < 2) throw ContractError("spectral_seriation needs at least two items");
  const Tensor& a = affinity.values;
  if (!a.all_finite()) throw NumericError("spectral_seriation: non-finite affinity");

  // Laplacian over off-diagonal affinities.
  Tensor lap({b, b});
  double shift = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    double degree = 0.0;
    for (std::size_t j = 0; j < b; ++j)
      if (j != i) {
        lap(i, j) = -a(i, j);
        degree += a(i, j);
      }
    lap(i, i) = degree;
    shift = std::max(shift, 2.0 * degree);  // Gershgorin bound of row i
  }
  if (shift <= 0.0) throw SeriationError("affinity graph has no edges; seriation undefined");

  // C = shift*I - L has the same eigenvectors with the order flipped, and
  // all its eigenvalues are non-negative, so plain power iteration on the
  // complement of the constant vector converges to the Fiedler vector.
  Tensor c({b, b});
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) c(i, j) = (i == j ? shift : 0.0) - lap(i, j);

  const auto& k = kernels::active();
  auto deflate_normalize = [&](std::vector<double>& v) {
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(b);
    for (double& x : v) x -= mean;
    const double nrm = std::sqrt(k.dot(v.data(), v.data(), b));
    if (nrm == 0.0) return false;
    for (double& x : v) x /= nrm;
    return true;
  };

  std::vector<double> v(b), next(b);
  std::mt19937_64 rng(0x5e41a7);
  std::uniform_real_distribution<double> start(-1.0, 1.0);
  for (double& x : v) x = start(rng);
  if (!deflate_normalize(v)) throw NumericError("spectral_seriation: degenerate start vector");

  bool converged = false;
  std::size_t it = 0;
  for (; it < options.max_iterations; ++it) {
    for (std::size_t i = 0; i < b; ++i) next[i] = k.dot(c.row_span(i).data(), v.data(), b);
    if (!deflate_normalize(next)) {
      // v lies in the eigenspace of eigenvalue shift - lambda = 0.
      converged = true;
      break;
    }
    const double change = std::sqrt(k.sq_dist(next.data(), v.data(), b));
    v.swap(next);
    if (change < options.tolerance) {
      converged = true;
      break;
    }
  }
  if (!converged)
    throw NumericError("spectral_seriation: power iteration did not converge in " +
                       std::to_string(it) + " iterations");

  std::vector<double> lv(b);
  for (std::size_t i = 0; i < b; ++i) lv[i] = k.dot(lap.row_span(i).data(), v.data(), b);
  const double connectivity = k.dot(v.data(), lv.data(), b);
  if (connectivity < 1e-12)
    throw SeriationError("affinity graph is disconnected (algebraic connectivity " +
                         std::to_string(connectivity) + "); seriation undefined");

  RankVector ranks = rank_of(v);
  const auto lo = static_cast<std::size_t>(std::min_element(v.begin(), v.end()) - v.begin());
  const auto hi = static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
  if (hi < lo) ranks = ranks.reversed();
  return ranks;
}

double seriation_objective(const Tensor& affinity, const RankVector& ranks) {
  const std::size_t b = ranks.size();
  if (affinity.rows() != b || affinity.cols() != b)
    throw DimensionError("seriation_objective: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) {
      const double d = static_cast<double>(ranks.ranks[i]) - static_cast<double>(ranks.ranks[j]);
      s += affinity(i, j) * d * d;
    }
  return s;
}

ad::Var soft_rank(const ad::Var& v, double lambda) {
  if (!(lambda > 0.0)) throw ContractError("soft_rank: lambda must be positive");
  const Tensor& x = v.value();
  if (x.rank() != 2 || (x.rows() != 1 && x.cols() != 1))
    throw DimensionError("soft_rank expects a row or column vector, got " + shape_string(x.shape()));
  if (!x.all_finite()) throw NumericError("soft_rank: non-finite input");
  const RankVector r = rank_of(x.data());
  Tensor out(x.shape());
  for (std::size_t i = 0; i < r.size(); ++i) out[i] = static_cast<double>(r.ranks[i]);
  return ad::make_node(std::move(out), {v}, [lambda](ad::Node& self) {
    ad::Node& p = *self.parents[0];
    std::vector<double> perturbed(p.value.size());
    bool moved = false;
    for (std::size_t i = 0; i < perturbed.size(); ++i) {
      perturbed[i] = p.value[i] + lambda * self.grad[i];
      moved = moved || perturbed[i] != p.value[i];
    }
    if (!moved) return;
    const RankVector shifted = rank_of(perturbed);
    Tensor& pg = p.grad_buffer();
    for (std::size_t i = 0; i < perturbed.size(); ++i)
      pg[i] += (static_cast<double>(shifted.ranks[i]) - self.value[i]) / lambda;
  });
}

ad::Var rank_similarity_loss(const ad::Var& pred_ranks, const RankVector& target) {
  const std::size_t b = target.size();
  if (pred_ranks.value().size() != b)
    throw DimensionError("rank_similarity_loss: " + std::to_string(pred_ranks.value().size()) +
                         " predicted ranks vs " + std::to_string(b) + " targets");
  Tensor t(pred_ranks.shape());
  for (std::size_t i = 0; i < b; ++i) t[i] = static_cast<double>(target.ranks[i]);
  const double bd = static_cast<double>(b);
  return ad::scale(ad::sum(ad::square(ad::sub(pred_ranks, ad::Var::constant(std::move(t))))),
                   1.0 / (bd * bd * bd));
}

AmbiguityReport rank_ambiguity_search(const Tensor& labels) {
  if (labels.cols() != 2) throw DimensionError("rank_ambiguity_search expects two targets");
  const std::size_t b = labels.rows();
  if (b < 2 || b > 10) throw ContractError("rank_ambiguity_search supports 2 <= B <= 10");
  std::vector<double> y1(b), y2(b);
  for (std::size_t i = 0; i < b; ++i) {
    y1[i] = labels(i, 0);
    y2[i] = labels(i, 1);
  }
  AmbiguityReport report;
  report.batch = b;
  report.best_scalar_min_spearman = -2.0;
  std::vector<std::size_t> perm(b);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<double> r(b);
  do {
    for (std::size_t i = 0; i < b; ++i) r[i] = static_cast<double>(perm[i]);
    const double s1 = spearman(r, y1).value_or(0.0);
    const double s2 = spearman(r, y2).value_or(0.0);
    const double worst = std::min(s1, s2);
    if (worst > report.best_scalar_min_spearman) {
      report.best_scalar_min_spearman = worst;
      report.best_scalar_ranking = perm;
    }
    ++report.rankings_searched;
  } while (std::next_permutation(perm.begin(), perm.end()));

  auto as_doubles = [](const RankVector& rv) {
    std::vector<double> out(rv.size());
    for (std::size_t i = 0; i < rv.size(); ++i) out[i] = static_cast<double>(rv.ranks[i]);
    return out;
  };
  report.subspace_spearman_dim1 = spearman(as_doubles(rank_of(y1)), y1).value_or(0.0);
  report.subspace_spearman_dim2 = spearman(as_doubles(rank_of(y2)), y2).value_or(0.0);
  return report;
}

}  // namespace dscl

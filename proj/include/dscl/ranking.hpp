#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dscl/autodiff.hpp"
#include "dscl/common.hpp"
#include "dscl/tensor.hpp"

namespace dscl {

// Seriation is undefined (disconnected affinity graph).
class SeriationError : public NumericError {
 public:
  using NumericError::NumericError;
};

enum class SimilarityKind { distance, affinity };

struct SimilarityMatrix {
  Tensor values;  // B x B
  SimilarityKind kind = SimilarityKind::distance;

  std::size_t size() const { return values.rows(); }
  // Symmetry (1e-10), diagonal convention and nonnegativity.
  void validate() const;
};

// A permutation of 0..B-1; 0 is the smallest.
struct RankVector {
  std::vector<std::size_t> ranks;

  std::size_t size() const { return ranks.size(); }
  void validate() const;
  RankVector reversed() const;
  friend bool operator==(const RankVector&, const RankVector&) = default;
};

// Ascending ranks, ties broken by index.
RankVector rank_of(std::span<const double> values);

// Gaussian kernel with median-heuristic bandwidth. All-zero distances give
// a uniform affinity and set diagnostic.
SimilarityMatrix distance_to_affinity(const SimilarityMatrix& distances,
                                      std::string* diagnostic = nullptr);

struct SeriationOptions {
  double tolerance = 1e-10;
  std::size_t max_iterations = 10000;
};

// Spectral ordering: ranks by the Fiedler vector of L = D - A, computed by
// power iteration on (shift*I - L) with the constant eigenvector deflated.
// Orientation: of the two extreme entries, the one with the smaller index
// gets rank 0.
RankVector spectral_seriation(const SimilarityMatrix& affinity, SeriationOptions options = {});

// sum_ij A[i,j] * (r_i - r_j)^2.
double seriation_objective(const Tensor& affinity, const RankVector& ranks);

// Blackbox-differentiable ranking of a 1 x B (or B x 1) node. Forward gives
// integer ranks as doubles; backward returns (rk(v + lambda*g) - rk(v)) / lambda.
ad::Var soft_rank(const ad::Var& v, double lambda);

// (1/B) * sum_i (r_i - t_i)^2 / B^2.
ad::Var rank_similarity_loss(const ad::Var& pred_ranks, const RankVector& target);

// Exhaustive check of the scalar-ranking conflict on two-target labels.
struct AmbiguityReport {
  std::size_t batch = 0;
  std::size_t rankings_searched = 0;
  double best_scalar_min_spearman = 0.0;  // max over r of min(rho(r,y1), rho(r,y2))
  std::vector<std::size_t> best_scalar_ranking;
  double subspace_spearman_dim1 = 0.0;
  double subspace_spearman_dim2 = 0.0;
};

// labels: B x 2, B <= 10.
AmbiguityReport rank_ambiguity_search(const Tensor& labels);

}  // namespace dscl

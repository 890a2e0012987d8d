#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "dscl/autodiff.hpp"
#include "dscl/disentangle.hpp"
#include "dscl/ranking.hpp"

namespace dscl {

struct LossWeights {
  double gamma = 1.0;  // Jacobian regularizer
  double w_sc = 1.0;
  double w_uc = 0.05;
  double w_ur = 0.01;

  void validate() const;
  bool unsupervised() const { return w_uc > 0.0 || w_ur > 0.0; }
};

struct LabelKernelConfig {
  double bandwidth = 1.0;  // gamma of exp(-gamma * dy^2)
};

// Per-target distances over one batch of disentangled, normalized features.
struct SubspaceSimilaritySet {
  std::vector<ad::Var> distances;     // B x B each, ||zd_i - zd_j||
  std::vector<ad::Var> sq_distances;  // B x B each
  std::vector<std::size_t> zero_rows;  // per target, rows with no mass in the subspace

  std::size_t targets() const { return distances.size(); }
  // Detached copy of target m as a distance SimilarityMatrix.
  SimilarityMatrix matrix(std::size_t m) const;
};

// Mean over batch and targets of |Y_hat - Y|.
ad::Var regression_loss(const ad::Var& predictions, const Tensor& labels);

SubspaceSimilaritySet subspace_similarities(const DisentangledBatch& zd);

// sum_m (1/B^2) sum_ij (F_m - T_m)^2 with F_m = 1 - d^2/2 (cosine on the unit
// sphere) and T_m = exp(-bandwidth * (y_im - y_jm)^2).
ad::Var supervised_contrastive_loss(const SubspaceSimilaritySet& sims, const Tensor& labels,
                                    const LabelKernelConfig& kernel);

// Anchor-wise ordering of feature distances against pseudo-rank gaps,
// averaged over anchors and targets.
ad::Var unsupervised_contrastive_loss(const SubspaceSimilaritySet& sims,
                                      const std::vector<RankVector>& pseudo, double lambda);

// Same for the per-target prediction gaps |Y'_im - Y'_jm|.
ad::Var unsupervised_ranking_loss(const ad::Var& predictions, const std::vector<RankVector>& pseudo,
                                  double lambda);

// Target ordering for anchor i: rank of -|R - R[i]|. Elements at equal rank
// gaps are ordered by `closeness` (the ranked input), so the loss never
// prefers one tied neighbour over another; remaining ties go by index.
RankVector anchor_target_ranks(const RankVector& pseudo, std::size_t anchor,
                               std::span<const double> closeness = {});

// Components of the joint objective; absent terms contribute nothing.
struct LossTerms {
  ad::Var reg;
  ad::Var jacobian;
  ad::Var sc;
  ad::Var uc;
  ad::Var ur;
};

ad::Var total_loss(const LossTerms& terms, const LossWeights& weights);

// One JSONL record of the per-step breakdown.
struct LossBreakdown {
  std::uint64_t step = 0;
  double l_reg = 0.0, l_j = 0.0, l_sc = 0.0, l_uc = 0.0, l_ur = 0.0, total = 0.0;

  static LossBreakdown from_terms(std::uint64_t step, const LossTerms& terms, const ad::Var& total);
  nlohmann::ordered_json to_json() const;
};

}  // namespace dscl

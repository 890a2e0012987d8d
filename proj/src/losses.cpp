#include "dscl/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dscl/common.hpp"

namespace dscl {

void LossWeights::validate() const {
  for (double w : {gamma, w_sc, w_uc, w_ur})
    if (!std::isfinite(w) || w < 0.0)
      throw ConfigError("loss weights must be finite and non-negative");
}

SimilarityMatrix SubspaceSimilaritySet::matrix(std::size_t m) const {
  return {distances.at(m).value(), SimilarityKind::distance};
}

ad::Var regression_loss(const ad::Var& predictions, const Tensor& labels) {
  if (predictions.shape() != labels.shape())
    throw DimensionError("regression_loss: predictions " + shape_string(predictions.shape()) +
                         " vs labels " + shape_string(labels.shape()));
  return ad::mean(ad::abs(ad::sub(predictions, ad::Var::constant(labels))));
}

SubspaceSimilaritySet subspace_similarities(const DisentangledBatch& zd) {
  SubspaceSimilaritySet out;
  for (const ad::Var& slice : zd.slices) {
    std::vector<std::size_t> zero;
    const ad::Var unit = ad::normalize_rows(slice, &zero);
    ad::Var sq = ad::pairwise_sq_dist(unit);
    out.distances.push_back(ad::sqrt(sq));
    out.sq_distances.push_back(std::move(sq));
    out.zero_rows.push_back(zero.size());
  }
  return out;
}

ad::Var supervised_contrastive_loss(const SubspaceSimilaritySet& sims, const Tensor& labels,
                                    const LabelKernelConfig& kernel) {
  if (!(kernel.bandwidth > 0.0)) throw ContractError("label kernel bandwidth must be positive");
  if (labels.cols() != sims.targets())
    throw DimensionError("supervised_contrastive_loss: " + std::to_string(labels.cols()) +
                         " label columns for " + std::to_string(sims.targets()) + " subspaces");
  if (!labels.all_finite()) throw NumericError("supervised_contrastive_loss: non-finite labels");
  const std::size_t b = labels.rows();
  ad::Var total;
  for (std::size_t m = 0; m < sims.targets(); ++m) {
    if (sims.sq_distances[m].rows() != b)
      throw DimensionError("supervised_contrastive_loss: batch size mismatch");
    Tensor target({b, b});
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < b; ++j) {
        const double dy = labels(i, m) - labels(j, m);
        target(i, j) = std::exp(-kernel.bandwidth * dy * dy);
      }
    const ad::Var feature_sim = ad::add_scalar(ad::scale(sims.sq_distances[m], -0.5), 1.0);
    const ad::Var term =
        ad::sum(ad::square(ad::sub(feature_sim, ad::Var::constant(std::move(target)))));
    total = total ? ad::add(total, term) : term;
  }
  return ad::scale(total, 1.0 / static_cast<double>(b * b));
}

RankVector anchor_target_ranks(const RankVector& pseudo, std::size_t anchor,
                               std::span<const double> closeness) {
  const std::size_t b = pseudo.size();
  if (anchor >= b) throw ContractError("anchor_target_ranks: anchor out of range");
  if (!closeness.empty() && closeness.size() != b)
    throw DimensionError("anchor_target_ranks: closeness length does not match the ranking");
  std::vector<std::size_t> gap(b);
  for (std::size_t j = 0; j < b; ++j)
    gap[j] = pseudo.ranks[j] > pseudo.ranks[anchor] ? pseudo.ranks[j] - pseudo.ranks[anchor]
                                                    : pseudo.ranks[anchor] - pseudo.ranks[j];
  std::vector<std::size_t> order(b);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t p, std::size_t q) {
    if (gap[p] != gap[q]) return gap[p] > gap[q];
    return !closeness.empty() && closeness[p] < closeness[q];
  });
  RankVector r;
  r.ranks.resize(b);
  for (std::size_t pos = 0; pos < b; ++pos) r.ranks[order[pos]] = pos;
  return r;
}

namespace {

void check_pseudo(const std::vector<RankVector>& pseudo, std::size_t targets, std::size_t b,
                  const char* op) {
  if (pseudo.size() != targets)
    throw DimensionError(std::string(op) + ": " + std::to_string(pseudo.size()) +
                         " pseudo rankings for " + std::to_string(targets) + " targets");
  for (const auto& r : pseudo)
    if (r.size() != b)
      throw DimensionError(std::string(op) + ": pseudo ranking of length " +
                           std::to_string(r.size()) + " for batch " + std::to_string(b));
}

}  // namespace

ad::Var unsupervised_contrastive_loss(const SubspaceSimilaritySet& sims,
                                      const std::vector<RankVector>& pseudo, double lambda) {
  const std::size_t m_count = sims.targets();
  if (m_count == 0) throw DimensionError("unsupervised_contrastive_loss: no subspaces");
  const std::size_t b = sims.distances.front().rows();
  check_pseudo(pseudo, m_count, b, "unsupervised_contrastive_loss");
  ad::Var total;
  for (std::size_t m = 0; m < m_count; ++m)
    for (std::size_t i = 0; i < b; ++i) {
      // Nearer neighbours get higher ranks.
      const ad::Var closeness = ad::scale(ad::row(sims.distances[m], i), -1.0);
      const RankVector target = anchor_target_ranks(pseudo[m], i, closeness.value().storage());
      const ad::Var term = rank_similarity_loss(soft_rank(closeness, lambda), target);
      total = total ? ad::add(total, term) : term;
    }
  return ad::scale(total, 1.0 / static_cast<double>(m_count * b));
}

ad::Var unsupervised_ranking_loss(const ad::Var& predictions, const std::vector<RankVector>& pseudo,
                                  double lambda) {
  const std::size_t b = predictions.rows(), m_count = predictions.cols();
  check_pseudo(pseudo, m_count, b, "unsupervised_ranking_loss");
  ad::Var total;
  for (std::size_t m = 0; m < m_count; ++m) {
    const ad::Var column = ad::col(predictions, m);
    for (std::size_t i = 0; i < b; ++i) {
      const ad::Var closeness =
          ad::scale(ad::abs(ad::sub(column, ad::pick(predictions, i, m))), -1.0);
      const RankVector target = anchor_target_ranks(pseudo[m], i, closeness.value().storage());
      const ad::Var term = rank_similarity_loss(soft_rank(closeness, lambda), target);
      total = total ? ad::add(total, term) : term;
    }
  }
  return ad::scale(total, 1.0 / static_cast<double>(m_count * b));
}

ad::Var total_loss(const LossTerms& terms, const LossWeights& weights) {
  if (!terms.reg) throw ContractError("total_loss requires the regression term");
  ad::Var total = terms.reg;
  auto add_term = [&](const ad::Var& term, double w) {
    if (term && w != 0.0) total = ad::add(total, ad::scale(term, w));
  };
  add_term(terms.jacobian, weights.gamma);
  add_term(terms.sc, weights.w_sc);
  add_term(terms.uc, weights.w_uc);
  add_term(terms.ur, weights.w_ur);
  return total;
}

LossBreakdown LossBreakdown::from_terms(std::uint64_t step, const LossTerms& terms,
                                        const ad::Var& total) {
  auto value = [](const ad::Var& v) { return v ? v.item() : 0.0; };
  LossBreakdown b;
  b.step = step;
  b.l_reg = value(terms.reg);
  b.l_j = value(terms.jacobian);
  b.l_sc = value(terms.sc);
  b.l_uc = value(terms.uc);
  b.l_ur = value(terms.ur);
  b.total = value(total);
  return b;
}

nlohmann::ordered_json LossBreakdown::to_json() const {
  return {{"step", step}, {"l_reg", l_reg}, {"l_j", l_j}, {"l_sc", l_sc},
          {"l_uc", l_uc}, {"l_ur", l_ur},   {"total", total}};
}

}  // namespace dscl

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "dscl/common.hpp"
#include "dscl/data.hpp"
#include "dscl/ranking.hpp"
#include "oracles.hpp"

using dscl::RankVector;
using dscl::SimilarityKind;
using dscl::SimilarityMatrix;
using dscl::Tensor;
namespace ad = dscl::ad;

namespace {

RankVector ranks(std::vector<std::size_t> r) { return RankVector{std::move(r)}; }

SimilarityMatrix line_distances(const std::vector<double>& pos) {
  const std::size_t b = pos.size();
  SimilarityMatrix d{Tensor({b, b}), SimilarityKind::distance};
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) d.values(i, j) = std::fabs(pos[i] - pos[j]);
  return d;
}

std::vector<double> as_doubles(const ad::Var& v) { return v.value().storage(); }

}  // namespace

TEST_CASE("rank_of sorts ascending with index tie-break") {
  const std::vector<double> a{0.1, 0.5, 0.3}, b{7, 7, 7};
  CHECK(dscl::rank_of(a) == ranks({0, 2, 1}));
  CHECK(dscl::rank_of(b) == ranks({0, 1, 2}));
  CHECK(ranks({0, 2, 1}).reversed() == ranks({2, 0, 1}));
  CHECK_THROWS_AS(ranks({0, 0, 1}).validate(), dscl::ContractError);
}

TEST_CASE("similarity matrix validation") {
  SimilarityMatrix d = line_distances({0, 1, 3});
  CHECK_NOTHROW(d.validate());
  d.values(0, 1) = 2.0;
  CHECK_THROWS_AS(d.validate(), dscl::ContractError);
  SimilarityMatrix a{Tensor({2, 2}, 1.0), SimilarityKind::affinity};
  CHECK_NOTHROW(a.validate());
  a.values(0, 0) = 0.0;
  CHECK_THROWS_AS(a.validate(), dscl::ContractError);
}

TEST_CASE("distance_to_affinity is a monotone kernel") {
  const auto a = dscl::distance_to_affinity(line_distances({0, 1, 2}));
  CHECK(a.kind == SimilarityKind::affinity);
  CHECK(a.values(0, 1) == doctest::Approx(a.values(1, 2)));
  CHECK(a.values(0, 1) > a.values(0, 2));
  CHECK_NOTHROW(a.validate());

  const auto twin = dscl::distance_to_affinity(line_distances({0, 0, 5}));
  CHECK(twin.values(0, 1) == 1.0);

  std::string diag;
  const auto flat = dscl::distance_to_affinity(line_distances({2, 2, 2}), &diag);
  CHECK(flat.values == Tensor({3, 3}, 1.0));
  CHECK_FALSE(diag.empty());
}

TEST_CASE("seriation of small known layouts") {
  const SimilarityMatrix two{Tensor::matrix({{1, 0.3}, {0.3, 1}}), SimilarityKind::affinity};
  CHECK(dscl::spectral_seriation(two) == ranks({0, 1}));

  const auto got = dscl::spectral_seriation(dscl::distance_to_affinity(line_distances({0, 3, 1, 2})));
  CHECK((got == ranks({0, 3, 1, 2}) || got == ranks({0, 3, 1, 2}).reversed()));
}

TEST_CASE("seriation agrees with brute force on random Robinson matrices") {
  std::mt19937_64 rng(20);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t b = 4; b <= 7; ++b)
    for (int rep = 0; rep < 10; ++rep) {
      std::vector<double> pos(b);
      for (double& p : pos) p = u(rng);
      const Tensor a = oracle::robinson_from_positions(pos, 0.1 + u(rng));
      const auto brute = oracle::brute_force_seriation(a);
      const auto spectral = dscl::spectral_seriation({a, SimilarityKind::affinity});
      CHECK(oracle::same_up_to_reversal(spectral.ranks, brute));
      CHECK(dscl::seriation_objective(a, spectral) == doctest::Approx(dscl::seriation_objective(a, ranks(brute))));
    }
}

TEST_CASE("seriation is invariant to scaling the affinity") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> pos(9);
  for (double& p : pos) p = u(rng);
  Tensor a = oracle::robinson_from_positions(pos, 0.3);
  const auto base = dscl::spectral_seriation({a, SimilarityKind::affinity});
  for (double s : {1e-3, 7.0, 1e3}) {
    Tensor scaled = a;
    for (double& v : scaled.data()) v *= s;
    CHECK(dscl::spectral_seriation({scaled, SimilarityKind::affinity}) == base);
  }
}

TEST_CASE("disconnected affinity graphs are rejected") {
  const Tensor blocks = Tensor::matrix({{1, 1, 0, 0}, {1, 1, 0, 0}, {0, 0, 1, 1}, {0, 0, 1, 1}});
  CHECK_THROWS_AS(dscl::spectral_seriation({blocks, SimilarityKind::affinity}), dscl::SeriationError);
  CHECK_THROWS_AS(dscl::spectral_seriation({Tensor({3, 3}), SimilarityKind::affinity}), dscl::SeriationError);
  CHECK_THROWS_AS(dscl::spectral_seriation({Tensor({1, 1}, 1.0), SimilarityKind::affinity}), dscl::ContractError);
}

TEST_CASE("seriation objective by hand") {
  const Tensor a = Tensor::matrix({{0, 1, 0.5}, {1, 0, 2}, {0.5, 2, 0}});
  // pairs (0,1):1*1, (0,2):0.5*4, (1,2):2*1, each counted twice.
  CHECK(dscl::seriation_objective(a, ranks({0, 1, 2})) == doctest::Approx(2 * (1 + 2 + 2)));
  CHECK_THROWS_AS(dscl::seriation_objective(a, ranks({0, 1})), dscl::DimensionError);
}

TEST_CASE("soft_rank forward and its blackbox backward") {
  const ad::Var v = ad::Var::leaf(Tensor::row({0.1, 0.5, 0.3}));
  const ad::Var r = dscl::soft_rank(v, 2.0);
  CHECK(as_doubles(r) == std::vector<double>{0, 2, 1});

  // Zero upstream leaves the input gradient at zero.
  ad::backward(ad::sum(ad::mul(r, ad::Var::constant(Tensor({1, 3})))));
  CHECK(v.grad() == Tensor({1, 3}));

  // Upstream that pushes the first element to the top.
  const ad::Var w = ad::Var::leaf(Tensor::row({0.1, 0.5, 0.3}));
  const ad::Var rw = dscl::soft_rank(w, 1.0);
  ad::backward(ad::sum(ad::mul(rw, ad::Var::constant(Tensor::row({0.5, 0.0, 0.0})))));
  CHECK(w.grad() == Tensor::row({2.0, -1.0, -1.0}));

  CHECK_THROWS_AS(dscl::soft_rank(ad::Var::constant(Tensor::row({0.0, NAN})), 1.0), dscl::NumericError);
  CHECK_THROWS_AS(dscl::soft_rank(ad::Var::constant(Tensor({2, 2})), 1.0), dscl::DimensionError);
  CHECK_THROWS_AS(dscl::soft_rank(v, 0.0), dscl::ContractError);
}

TEST_CASE("soft_rank backward matches the independent blackbox oracle") {
  std::mt19937_64 rng(22);
  std::uniform_real_distribution<double> lam(0.5, 50.0);
  for (int rep = 0; rep < 30; ++rep) {
    const std::size_t b = 3 + rep % 8;
    const Tensor x = oracle::random_tensor(1, b, rng);
    std::vector<std::size_t> perm(b);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const double lambda = lam(rng), scale = 3.0;
    const ad::Var v = ad::Var::leaf(x);
    ad::backward(ad::scale(dscl::rank_similarity_loss(dscl::soft_rank(v, lambda), ranks(perm)), scale));
    std::vector<double> target(perm.begin(), perm.end());
    const auto want = oracle::blackbox_rank_gradient(x.storage(), target, scale, lambda);
    CHECK(oracle::relative_error(v.grad().storage(), want) < 1e-12);
  }
}

TEST_CASE("rank similarity loss") {
  CHECK(dscl::rank_similarity_loss(ad::Var::constant(Tensor::row({0, 1, 2})), ranks({0, 1, 2})).item() == 0.0);
  CHECK(dscl::rank_similarity_loss(ad::Var::constant(Tensor::row({0, 1})), ranks({1, 0})).item() ==
        doctest::Approx(0.25));
  CHECK_THROWS_AS(dscl::rank_similarity_loss(ad::Var::constant(Tensor::row({0, 1})), ranks({0, 1, 2})),
                  dscl::DimensionError);
}

TEST_CASE("blackbox gradient steps reduce the rank loss") {
  std::mt19937_64 rng(23);
  int improved = 0;
  for (int rep = 0; rep < 10; ++rep) {
    // Packed values, so that lambda * upstream (of order 1/B^2) crosses gaps.
    Tensor x = oracle::random_tensor(1, 6, rng, -0.02, 0.02);
    const RankVector target = ranks({5, 4, 3, 2, 1, 0});
    auto loss_at = [&](const Tensor& t) {
      return dscl::rank_similarity_loss(dscl::soft_rank(ad::Var::constant(t), 1.0), target).item();
    };
    const double initial = loss_at(x);
    for (int step = 0; step < 50; ++step) {
      const ad::Var v = ad::Var::leaf(x);
      ad::backward(dscl::rank_similarity_loss(dscl::soft_rank(v, 1.0), target));
      const Tensor g = v.grad();
      for (std::size_t i = 0; i < x.size(); ++i) x[i] -= 0.1 * g[i];
    }
    if (loss_at(x) < initial) ++improved;
  }
  CHECK(improved == 10);
}

TEST_CASE("rank ambiguity on anti-correlated labels") {
  dscl::SyntheticTaskConfig task;
  task.num_samples = 6;
  task.input_dim = 2;
  task.generator = dscl::SyntheticGenerator::anti_correlated;
  task.noise_std = 0.0;
  const auto report = dscl::rank_ambiguity_search(dscl::generate_synthetic(task).labels);
  CHECK(report.rankings_searched == 720);
  CHECK(report.best_scalar_min_spearman <= 0.0);
  CHECK(report.subspace_spearman_dim1 == doctest::Approx(1.0));
  CHECK(report.subspace_spearman_dim2 == doctest::Approx(1.0));

  // Co-monotone labels have no conflict.
  const auto easy = dscl::rank_ambiguity_search(Tensor::matrix({{0, 0}, {1, 2}, {2, 3}, {3, 5}}));
  CHECK(easy.best_scalar_min_spearman == doctest::Approx(1.0));
  CHECK_THROWS_AS(dscl::rank_ambiguity_search(Tensor({11, 2})), dscl::ContractError);
}

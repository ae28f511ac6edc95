#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "srank/spectral.hpp"
#include "support.hpp"

using namespace srank;
using srank::testing::gaussian;
using srank::testing::planted_spectrum;

TEST(Spectral, RankOneHasStableRankOne) {
  auto h = HiddenMatrix::from_rows({{1, 2, 3}, {2, 4, 6}, {-1, -2, -3}, {0.5, 1, 1.5}});
  EXPECT_NEAR(stable_rank(h), 1.0, 1e-9);
  EXPECT_NEAR(effective_rank(h), 1.0, 1e-9);
  EXPECT_EQ(condition_score(h), 0.0);
}

TEST(Spectral, OrthonormalRowsGiveRowCount) {
  std::mt19937_64 gen(3);
  for (std::size_t k : {1u, 2u, 5u, 9u}) {
    const auto q = srank::testing::random_orthogonal(12, gen);
    const auto h = srank::testing::from_eigen(q.topRows(k));
    EXPECT_NEAR(stable_rank(h), static_cast<double>(k), 1e-9) << k;
    EXPECT_NEAR(effective_rank(h), static_cast<double>(k), 1e-9) << k;
    EXPECT_NEAR(condition_score(h), 1.0, 1e-9) << k;
  }
}

TEST(Spectral, DiagTwoOne) {
  auto h = HiddenMatrix::from_rows({{2, 0}, {0, 1}});
  EXPECT_NEAR(stable_rank(h), 1.25, 1e-9);
  // p = (2/3, 1/3)
  const double er = std::exp(-(2.0 / 3) * std::log(2.0 / 3) - (1.0 / 3) * std::log(1.0 / 3));
  EXPECT_NEAR(effective_rank(h), er, 1e-12);
  EXPECT_NEAR(effective_rank(h), 1.8899, 1e-4);
  EXPECT_DOUBLE_EQ(condition_score(h), 0.5);
}

TEST(Spectral, SingularValuesMatchReference) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const std::size_t t = 1 + seed % 17, d = 1 + (seed * 7) % 23;
    const auto h = gaussian(t, d, seed);
    const auto got = singular_values(h);
    const auto want = srank::testing::reference_singular_values(h);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_NEAR(got[i], want[i], 1e-10 * want[0]) << "seed " << seed << " i " << i;
    }
  }
}

TEST(Spectral, PowerIterationAgreesWithDense) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto h = gaussian(5 + seed % 40, 3 + seed % 29, 100 + seed);
    const double want = srank::testing::reference_stable_rank(h);
    EXPECT_NEAR(stable_rank(h), want, 1e-8 * want) << seed;
  }
}

TEST(Spectral, NearlyDegenerateTopPairStillAccurate) {
  // sigma_1 / sigma_2 = 1.01 needs far more than the default budget.
  std::mt19937_64 gen(11);
  auto sv = srank::testing::geometric_spectrum(30, 0.2);
  sv[1] = sv[0] / 1.01;
  const auto h = planted_spectrum(60, 30, sv, gen);
  const double want = srank::testing::reference_stable_rank(h);
  EXPECT_NEAR(stable_rank(h), want, 1e-6 * want);
}

TEST(Spectral, PowerReportsNonConvergence) {
  std::mt19937_64 gen(12);
  auto sv = srank::testing::geometric_spectrum(20, 0.05);
  sv[1] = sv[0] * (1 - 1e-7);
  const auto h = planted_spectrum(20, 20, sv, gen);
  const auto r = spectral_norm_power(h, {3, 1e-14, 1});
  EXPECT_FALSE(r.converged);
  EXPECT_EQ(r.iterations, 3);
}

TEST(Spectral, PowerIterationIsSeedDeterministic) {
  const auto h = gaussian(30, 20, 5);
  const auto a = spectral_norm_power(h, {100, 1e-10, 42});
  const auto b = spectral_norm_power(h, {100, 1e-10, 42});
  EXPECT_EQ(a.sigma, b.sigma);
  EXPECT_EQ(a.iterations, b.iterations);
}

TEST(Spectral, Invariances) {
  std::mt19937_64 gen(21);
  const auto h = gaussian(25, 10, 21);
  const auto base = spectral_summary(h);
  for (double c : {1e-3, 1e3}) {
    std::vector<double> v(h.data().begin(), h.data().end());
    for (auto& x : v) x *= c;
    const auto s = spectral_summary(HiddenMatrix(h.rows(), h.cols(), v));
    EXPECT_NEAR(s.stable_rank, base.stable_rank, 1e-9 * base.stable_rank);
    EXPECT_NEAR(s.effective_rank, base.effective_rank, 1e-9 * base.effective_rank);
    EXPECT_NEAR(s.condition_score, base.condition_score, 1e-9);
    EXPECT_EQ(s.pca_k95, base.pca_k95);
  }
  const auto q = srank::testing::random_orthogonal(10, gen);
  const auto rot = srank::testing::from_eigen(srank::testing::to_eigen(h) * q);
  const auto s = spectral_summary(rot);
  EXPECT_NEAR(s.stable_rank, base.stable_rank, 1e-9 * base.stable_rank);
  EXPECT_EQ(s.pca_k95, base.pca_k95);
}

TEST(Spectral, EffectiveRankMatchesReference) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto h = gaussian(8 + seed, 6, 300 + seed);
    EXPECT_NEAR(effective_rank(h), srank::testing::reference_effective_rank(h), 1e-10);
  }
}

TEST(Spectral, PcaMatchesCovarianceEigenReference) {
  std::mt19937_64 gen(4);
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto h = planted_spectrum(40, 16, srank::testing::geometric_spectrum(16, 0.1 + 0.05 * seed), gen);
    EXPECT_EQ(pca_k95(h), srank::testing::reference_pca_k95(h)) << seed;
  }
}

TEST(Spectral, PcaExactTie) {
  // 20 equal-variance centred directions: 19 of 20 is exactly 95%.
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 20; ++i) {
    std::vector<double> r(20, 0.0);
    r[i] = 1.0;
    rows.push_back(r);
    for (auto& x : r) x = -x;
    rows.push_back(r);
  }
  EXPECT_EQ(pca_k95(HiddenMatrix::from_rows(rows)), 19u);
}

TEST(Spectral, PcaOfConstantRowsIsZero) {
  auto h = HiddenMatrix::from_rows({{1, 2}, {1, 2}, {1, 2}});
  EXPECT_EQ(pca_k95(h), 0u);
  EXPECT_NEAR(stable_rank(h), 1.0, 1e-12);
}

TEST(Spectral, ZeroMatrixIsDegenerate) {
  HiddenMatrix z(3, 4, std::vector<double>(12, 0.0));
  EXPECT_THROW(stable_rank(z), DegenerateInputError);
  EXPECT_THROW(effective_rank(z), DegenerateInputError);
  EXPECT_THROW(condition_score(z), DegenerateInputError);
  for (auto m : {Metric::stable_rank, Metric::effective_rank, Metric::condition_score, Metric::pca_k95}) {
    EXPECT_THROW(metric_value(z, m), DegenerateInputError);
  }
}

TEST(Spectral, SingleRowAndColumn) {
  EXPECT_NEAR(stable_rank(HiddenMatrix::from_rows({{3, 4}})), 1.0, 1e-12);
  EXPECT_NEAR(stable_rank(HiddenMatrix::from_rows({{3}, {4}, {0}})), 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(condition_score(HiddenMatrix::from_rows({{3}, {4}})), 1.0);
}

TEST(Spectral, DenseCapIsEnforced) {
  const auto h = gaussian(6, 6, 1);
  EXPECT_THROW(singular_values(h, 5), CapacityError);
  EXPECT_NO_THROW(singular_values(h, 6));
}

TEST(Spectral, StableRankBounds) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto h = gaussian(3 + seed % 11, 2 + seed % 7, seed);
    const double sr = stable_rank(h);
    EXPECT_GE(sr, 1.0 - 1e-12);
    EXPECT_LE(sr, static_cast<double>(h.min_dim()) + 1e-12);
  }
}

TEST(Spectral, NonFiniteInputRejected) {
  EXPECT_THROW(HiddenMatrix(1, 2, {1.0, std::nan("")}), InputDomainError);
  EXPECT_THROW(HiddenMatrix(1, 2, {1.0, INFINITY}), InputDomainError);
}

TEST(Spectral, MetricNamesRoundTrip) {
  for (auto m : {Metric::stable_rank, Metric::effective_rank, Metric::condition_score, Metric::pca_k95}) {
    EXPECT_EQ(parse_metric(metric_name(m)), m);
  }
  EXPECT_FALSE(parse_metric("nuclear").has_value());
}

TEST(Spectral, ConditionFloor) {
  auto h = HiddenMatrix::from_rows({{1, 0}, {0, 1e-13}});
  EXPECT_EQ(condition_score(h), 0.0);
  auto g = HiddenMatrix::from_rows({{1, 0}, {0, 1e-11}});
  EXPECT_NEAR(condition_score(g), 1e-11, 1e-20);
}

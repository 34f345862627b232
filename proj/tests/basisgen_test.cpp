#include "scml/basisgen.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <set>

namespace scml {
namespace {

TEST(KMeans, SingleCenterIsColumnMean) {
  Rng rng(1);
  const Matrix x = testing::random_matrix(rng, 30, 4);
  const Matrix c = kmeans(x, 1, 7);
  EXPECT_TRUE(c.row(0).isApprox(x.colwise().mean(), 1e-12));
}

TEST(KMeans, AsManyCentersAsDistinctRowsRecoversRows) {
  Rng rng(2);
  const Matrix x = testing::random_matrix(rng, 6, 2);
  const Matrix c = kmeans(x, 6, 3);
  for (Index i = 0; i < x.rows(); ++i) {
    double best = 1e300;
    for (Index j = 0; j < c.rows(); ++j) best = std::min(best, (x.row(i) - c.row(j)).norm());
    EXPECT_LT(best, 1e-12);
  }
}

TEST(KMeans, DeterministicForSeed) {
  Rng rng(3);
  const Matrix x = testing::random_matrix(rng, 100, 3);
  EXPECT_EQ(kmeans(x, 5, 9), kmeans(x, 5, 9));
}

TEST(LocalFda, SeparatedMeansAlongFirstAxis) {
  Matrix means(2, 2);
  means << -5, 0, 5, 0;
  const auto d = synthetic::gaussian_blobs(means, 50, 0.3, 4);
  const auto dirs = local_fda(d.features(), d.labels(), 1e-6);
  ASSERT_EQ(dirs.size(), 1u);
  EXPECT_GT(std::abs(dirs[0][0]), 0.99);
  EXPECT_NEAR(dirs[0].norm(), 1.0, 1e-12);
}

TEST(LocalFda, TopDirectionMaximizesFisherRatio) {
  Rng rng(5);
  Matrix means = testing::random_matrix(rng, 3, 4, -2.0, 2.0);
  const auto d = synthetic::gaussian_blobs(means, 40, 1.0, 6);
  const auto s = fda_scatter(d.features(), d.labels());
  const auto dirs = local_fda(d.features(), d.labels(), 0.0);
  ASSERT_FALSE(dirs.empty());
  auto ratio = [&](const Vector& v) { return v.dot(s.between * v) / v.dot(s.within * v); };
  const double top = ratio(dirs[0]);
  for (int probe = 0; probe < 200; ++probe) EXPECT_LE(ratio(testing::random_vector(rng, 4)), top * (1 + 1e-9));
}

TEST(LocalFda, SingleClassGivesNothing) {
  Rng rng(7);
  const Matrix x = testing::random_matrix(rng, 10, 3);
  const std::vector<int> y(10, 1);
  EXPECT_TRUE(local_fda(x, y, 1e-6).empty());
}

TEST(GenerateBasis, TwoClassesOneRegionCapsAtOneDirection) {
  Matrix means(2, 3);
  means << 0, 0, 0, 3, 1, 0;
  const auto d = synthetic::gaussian_blobs(means, 30, 1.0, 8);
  BasisGenConfig cfg;
  cfg.num_regions = 1;
  cfg.j_levels = {10};
  EXPECT_LE(generate_basis(d, cfg).size(), 1);
}

TEST(GenerateBasis, IdenticalNeighborhoodsAreDeduplicated) {
  // Each class has 5 members, so J = 10 and J = 20 select the same points.
  Matrix means(2, 2);
  means << 0, 0, 4, 0;
  const auto d = synthetic::gaussian_blobs(means, 5, 1.0, 9);
  BasisGenConfig cfg;
  cfg.num_regions = 1;
  cfg.j_levels = {10, 20};
  const auto basis = generate_basis(d, cfg);
  EXPECT_EQ(basis.size(), 1);
  EXPECT_EQ(basis.provenance()[0].j_level, 10);
}

TEST(GenerateBasis, ReachesBudgetAtSegmentScale) {
  Rng rng(10);
  const Matrix means = testing::random_matrix(rng, 7, 19, -3.0, 3.0);
  const auto d = synthetic::gaussian_blobs(means, 330, 1.0, 11);
  BasisGenConfig cfg;
  cfg.basis_budget = 400;
  cfg.rng_seed = 12;
  const Index m = basis_region_count(cfg, d.num_classes(), d.size());
  EXPECT_EQ(m, 23);  // ceil(400 / (3 * 6))
  cfg.basis_budget.reset();
  cfg.num_regions = static_cast<int>(m);
  const Index supply = generate_basis(d, cfg).size();
  ASSERT_GE(supply, 400) << "synthetic supply too small for the check";
  cfg.num_regions = 0;
  cfg.basis_budget = 400;
  EXPECT_EQ(generate_basis(d, cfg).size(), 400);
}

TEST(GenerateBasis, UnitNormSupplyBoundAndDeterminism) {
  Rng rng(13);
  const Matrix means = testing::random_matrix(rng, 4, 6, -2.0, 2.0);
  const auto d = synthetic::gaussian_blobs(means, 60, 1.0, 14);
  BasisGenConfig cfg;
  cfg.num_regions = 5;
  cfg.rng_seed = 15;
  const auto a = generate_basis(d, cfg);
  const auto b = generate_basis(d, cfg);
  EXPECT_EQ(a.vectors(), b.vectors());
  EXPECT_EQ(a.provenance(), b.provenance());
  EXPECT_LE(a.size(), 5 * 3 * 3);
  for (Index i = 0; i < a.size(); ++i) EXPECT_NEAR(a.vectors().row(i).norm(), 1.0, 1e-12);
  for (Index i = 0; i < a.size(); ++i)
    for (Index j = 0; j < i; ++j) EXPECT_LE(std::abs(a.vectors().row(i).dot(a.vectors().row(j))), cfg.dedup_cos);
}

TEST(GenerateBasis, BudgetTakesRoundRobinAcrossGroups) {
  Rng rng(16);
  const Matrix means = testing::random_matrix(rng, 4, 6, -2.0, 2.0);
  const auto d = synthetic::gaussian_blobs(means, 60, 1.0, 17);
  BasisGenConfig cfg;
  cfg.num_regions = 4;
  cfg.basis_budget = 12;
  const auto basis = generate_basis(d, cfg);
  ASSERT_EQ(basis.size(), 12);
  // 12 groups (4 regions x 3 J levels): one pass takes one direction from each.
  std::set<std::pair<int, int>> groups;
  for (const auto& p : basis.provenance()) groups.insert({p.region, p.j_level});
  EXPECT_EQ(groups.size(), 12u);
}

TEST(GenerateBasis, RejectsSingleClass) {
  const Dataset d(Matrix::Identity(3, 3), {0, 0, 0});
  EXPECT_THROW(generate_basis(d, BasisGenConfig{}), Error);
}

}  // namespace
}  // namespace scml

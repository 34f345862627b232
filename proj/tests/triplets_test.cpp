#include "scml/triplets.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

namespace scml {
namespace {

// Full-sort neighbor oracle: indices of `pool` ordered by (distance, index).
std::vector<Index> sorted_neighbors(const Matrix& x, Index a, std::vector<Index> pool, std::size_t count) {
  std::stable_sort(pool.begin(), pool.end(), [&](Index i, Index j) {
    return (x.row(a) - x.row(i)).squaredNorm() < (x.row(a) - x.row(j)).squaredNorm();
  });
  pool.resize(std::min(count, pool.size()));
  return pool;
}

TEST(Triplets, CappedCombinatorialCount) {
  Rng rng(1);
  const Matrix x = testing::random_matrix(rng, 6, 2);
  const Dataset d(x, {0, 0, 0, 1, 1, 1});
  const auto set = generate_triplets(d);
  EXPECT_EQ(set.triplets.size(), 36u);  // 6 anchors x 2 targets x 3 impostors
  EXPECT_EQ(set.anchors_without_targets, 0);
}

TEST(Triplets, SingletonClassContributesNoAnchors) {
  Rng rng(2);
  const Dataset d(testing::random_matrix(rng, 5, 2), {0, 0, 0, 0, 1});
  const auto set = generate_triplets(d);
  EXPECT_EQ(set.anchors_without_targets, 1);
  for (const auto& t : set.triplets) EXPECT_NE(t.anchor, 4);
}

TEST(Triplets, AdmissibleAndMatchFullSortOracle) {
  Rng rng(3);
  const Matrix x = testing::random_matrix(rng, 50, 3);
  std::vector<int> y(50);
  for (auto& v : y) v = static_cast<int>(rng.below(3));
  const Dataset d(x, y);
  const TripletConfig cfg;
  const auto set = generate_triplets(d, cfg);
  EXPECT_LE(set.triplets.size(), 50u * 3 * 10);

  std::vector<Triplet> expected;
  for (Index a = 0; a < 50; ++a) {
    std::vector<Index> same, other;
    for (Index j = 0; j < 50; ++j)
      if (j != a) (y[j] == y[a] ? same : other).push_back(j);
    if (same.empty()) continue;
    for (Index t : sorted_neighbors(x, a, same, 3))
      for (Index k : sorted_neighbors(x, a, other, 10)) expected.push_back({a, t, k});
  }
  EXPECT_EQ(set.triplets, expected);
  for (const auto& t : set.triplets) {
    EXPECT_EQ(d.label(t.anchor), d.label(t.target));
    EXPECT_NE(d.label(t.anchor), d.label(t.impostor));
  }
}

TEST(Triplets, DistanceTiesGoToSmallerIndex) {
  // Points 1 and 2 are equidistant from the anchor; 1 must be chosen.
  Matrix x(4, 1);
  x << 0, 1, -1, 5;
  const Dataset d(x, {0, 0, 0, 1});
  const auto set = generate_triplets(d, {1, 1});
  ASSERT_FALSE(set.triplets.empty());
  EXPECT_EQ(set.triplets[0].anchor, 0);
  EXPECT_EQ(set.triplets[0].target, 1);
}

TEST(Triplets, RejectsSingleClass) {
  const Dataset d(Matrix::Identity(3, 3), {0, 0, 0});
  EXPECT_THROW(generate_triplets(d), Error);
}

}  // namespace
}  // namespace scml

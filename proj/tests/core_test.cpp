#include "scml/core.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

namespace scml {
namespace {

using testing::random_basis;
using testing::random_sparse_weights;
using testing::random_vector;

TEST(Dataset, ValidatesShapesAndLabels) {
  Matrix x(2, 2);
  x << 1, 2, 3, 4;
  EXPECT_THROW(Dataset(x, {0}), Error);
  EXPECT_THROW(Dataset(x, {0, -1}), Error);
  Matrix bad = x;
  bad(0, 0) = std::nan("");
  EXPECT_THROW(Dataset(bad, {0, 1}), Error);
  const Dataset d(x, {0, 2});
  EXPECT_EQ(d.num_classes(), 3);
  EXPECT_EQ(d.class_counts(), (std::vector<Index>{1, 0, 1}));
}

TEST(Dataset, SubsetKeepsRowsAndLabels) {
  Matrix x(3, 1);
  x << 10, 20, 30;
  const Dataset d(x, {0, 1, 0});
  const std::vector<Index> idx{2, 0};
  const auto s = d.subset(idx);
  EXPECT_EQ(s.size(), 2);
  EXPECT_EQ(s.row(0)[0], 30);
  EXPECT_EQ(s.label(1), 0);
}

TEST(BasisSet, RejectsNonUnitRows) {
  Matrix b(1, 2);
  b << 1.0, 1.0;
  EXPECT_THROW(BasisSet{b}, Error);
  b << 0.6, 0.8;
  EXPECT_NO_THROW(BasisSet{b});
}

TEST(WeightVector, RejectsNegativeEntries) {
  EXPECT_THROW(WeightVector(Vector::Constant(2, -0.1)), Error);
  EXPECT_EQ(WeightVector(Vector::Zero(3)).nnz(), 0);
}

TEST(ComposeMetric, UnitWeightsOnStandardBasisGiveIdentity) {
  const BasisSet basis(Matrix::Identity(2, 2));
  EXPECT_TRUE(compose_metric(WeightVector(Vector::Ones(2)), basis).isApprox(Matrix::Identity(2, 2)));
  EXPECT_TRUE(compose_metric(WeightVector::zeros(2), basis).isZero());
}

TEST(DistGlobal, OneTermArithmetic) {
  Matrix b(1, 2);
  b << 1, 0;
  const BasisSet basis(b);
  const WeightVector w(Vector::Constant(1, 2.0));
  Vector x(2), y(2);
  x << 1, 0;
  y << 3, 0;
  EXPECT_DOUBLE_EQ(dist_global(w, basis, x, y), 8.0);
  EXPECT_EQ(dist_global(w, basis, x, x), 0.0);
}

TEST(DistGlobal, PseudoMetricProperties) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const auto basis = random_basis(rng, 8, 5);
    const auto w = random_sparse_weights(rng, 8);
    const Vector x = random_vector(rng, 5), y = random_vector(rng, 5);
    const double d = dist_global(w, basis, x, y);
    EXPECT_GE(d, 0.0);
    EXPECT_EQ(d, dist_global(w, basis, y, x));
    EXPECT_EQ(dist_global(w, basis, x, x), 0.0);
    const Vector diff = x - y;
    EXPECT_NEAR(d, diff.dot(compose_metric(w, basis) * diff), 1e-9 * std::max(1.0, d));
  }
}

TEST(DistGlobal, LinearInWeights) {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const auto basis = random_basis(rng, 6, 4);
    const auto w1 = random_sparse_weights(rng, 6), w2 = random_sparse_weights(rng, 6);
    const double a = 3.0 * rng.uniform(), b = 3.0 * rng.uniform();
    const Vector x = random_vector(rng, 4), y = random_vector(rng, 4);
    const WeightVector mix(a * w1.values() + b * w2.values());
    EXPECT_NEAR(dist_global(mix, basis, x, y),
                a * dist_global(w1, basis, x, y) + b * dist_global(w2, basis, x, y), 1e-10);
  }
}

TEST(DistGlobal, RejectsDimensionMismatch) {
  const BasisSet basis(Matrix::Identity(2, 2));
  EXPECT_THROW(dist_global(WeightVector::zeros(3), basis, Vector::Zero(2), Vector::Zero(2)), Error);
  EXPECT_THROW(dist_global(WeightVector::zeros(2), basis, Vector::Zero(3), Vector::Zero(3)), Error);
}

TEST(TripletFeatures, DirectSquares) {
  Matrix x(3, 2);
  x << 0, 0, 1, 0, 3, 0;
  const Dataset d(x, {0, 0, 1});
  Matrix b(1, 2);
  b << 1, 0;
  const std::vector<Triplet> t{{0, 1, 2}};
  const auto f = triplet_features(d, BasisSet(b), t);
  EXPECT_DOUBLE_EQ(f.p(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(f.q(0, 0), 9.0);
  EXPECT_EQ(f.anchors[0], 0);
}

TEST(TripletFeatures, AnchorEqualToTargetGivesZeroP) {
  Matrix x(3, 2);
  x << 1, 2, 1, 2, 5, 5;
  const Dataset d(x, {0, 0, 1});
  Rng rng(3);
  const std::vector<Triplet> t{{0, 1, 2}};
  const auto f = triplet_features(d, random_basis(rng, 4, 2), t);
  EXPECT_TRUE(f.p.isZero());
}

TEST(TripletFeatures, MatchesRecomputationFromRawPoints) {
  Rng rng(4);
  const Matrix x = testing::random_matrix(rng, 20, 3);
  std::vector<int> y(20);
  for (int i = 0; i < 20; ++i) y[static_cast<std::size_t>(i)] = i % 2;
  const Dataset d(x, y);
  const auto basis = random_basis(rng, 5, 3);
  const auto w = random_sparse_weights(rng, 5, 1.0);
  std::vector<Triplet> t;
  for (int r = 0; r < 30; ++r) t.push_back({Index(rng.below(20)), Index(rng.below(20)), Index(rng.below(20))});
  const auto f = triplet_features(d, basis, t);
  for (Index r = 0; r < f.size(); ++r) {
    const auto& tr = t[static_cast<std::size_t>(r)];
    EXPECT_NEAR(f.p.row(r).dot(w.values().transpose()), dist_global(w, basis, x.row(tr.anchor), x.row(tr.target)),
                1e-12);
    EXPECT_NEAR(f.q.row(r).dot(w.values().transpose()), dist_global(w, basis, x.row(tr.anchor), x.row(tr.impostor)),
                1e-12);
  }
}

TEST(TripletFeatures, RejectsOutOfRangeIndex) {
  const Dataset d(Matrix::Zero(2, 1), {0, 1});
  const std::vector<Triplet> t{{0, 1, 5}};
  EXPECT_THROW(triplet_features(d, BasisSet(Matrix::Ones(1, 1)), t), Error);
}

TEST(HingeLoss, ZeroWeightsGiveUnitLoss) {
  Rng rng(5);
  const auto f = testing::random_features(rng, 10, 4);
  for (Index r = 0; r < f.size(); ++r) EXPECT_EQ(hinge_triplet_loss(WeightVector::zeros(4), f, r), 1.0);
  EXPECT_EQ(mean_hinge_loss(Vector::Zero(4), f), 1.0);
}

TEST(HingeLoss, SatisfiedMarginGivesZero) {
  TripletFeatures f;
  f.p = RowMatrix::Zero(1, 1);
  f.q = RowMatrix::Constant(1, 1, 5.0);
  f.anchors = {0};
  EXPECT_EQ(hinge_triplet_loss(WeightVector(Vector::Ones(1)), f, 0), 0.0);
}

}  // namespace
}  // namespace scml

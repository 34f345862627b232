#include "scml/experiment.hpp"
#include "scml/models.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

namespace scml {
namespace {

struct Fixture {
  Dataset train;
  BasisSet basis;
  WeightVector w;
  LocalFitContext ctx;
};

Fixture make_fixture(Index n, std::uint64_t seed) {
  Rng rng(seed);
  const Matrix means = testing::random_matrix(rng, 3, 4, -2.0, 2.0);
  Fixture fx{synthetic::gaussian_blobs(means, n / 3, 1.0, seed + 1), testing::random_basis(rng, 12, 4),
             testing::random_sparse_weights(rng, 12), {}};
  fx.ctx = LocalFitContext::build(fx.train, 8);
  return fx;
}

LocalModel warm_model(const Fixture& fx) {
  return LocalModel{fx.basis, local_init_from_global(fx.w, fx.ctx.embedding->output_dim()), fx.ctx.embedding, 0.0,
                    {}};
}

TEST(LocalModel, ZeroSlopeGivesConstantWeights) {
  const auto fx = make_fixture(60, 1);
  const auto model = warm_model(fx);
  for (Index i = 0; i < fx.train.size(); i += 7) {
    const auto w = local_weights(model, fx.train.row(i));
    EXPECT_TRUE(w.values().isApprox(fx.w.values(), 1e-12)) << "row " << i;
  }
}

TEST(LocalModel, WarmStartReproducesGlobalDistances) {
  const auto fx = make_fixture(60, 2);
  const auto model = warm_model(fx);
  Rng rng(3);
  for (int probe = 0; probe < 50; ++probe) {
    const Vector x = testing::random_vector(rng, 4, -3, 3), y = testing::random_vector(rng, 4, -3, 3);
    const double d = dist_local(model, x, y);
    EXPECT_NEAR(d, dist_global(fx.w, fx.basis, x, y), 1e-10 * std::max(1.0, d));
    EXPECT_NEAR(d, dist_local(model, y, x), 1e-10 * std::max(1.0, d));
    EXPECT_EQ(dist_local(model, x, x), 0.0);
  }
}

TEST(LocalModel, WeightsVaryContinuously) {
  auto fx = make_fixture(60, 4);
  auto model = warm_model(fx);
  Rng rng(5);
  model.atilde = testing::random_matrix(rng, model.atilde.rows(), model.atilde.cols());
  for (int probe = 0; probe < 20; ++probe) {
    const Vector x = testing::random_vector(rng, 4, -2, 2), dir = testing::random_vector(rng, 4);
    double previous = 1e300;
    for (double h : {1e-2, 1e-4, 1e-6, 1e-8}) {
      const double change = (local_weights(model, x).values() - local_weights(model, Vector(x + h * dir)).values()).norm();
      EXPECT_LE(change, previous + 1e-12);
      previous = change;
    }
    EXPECT_LT(previous, 1e-5);
  }
}

TEST(LocalModel, CheckRejectsMismatchedShapes) {
  const auto fx = make_fixture(30, 6);
  auto model = warm_model(fx);
  model.atilde = Matrix::Zero(3, fx.basis.size());
  EXPECT_THROW(model.check(), Error);
  model.embedding.reset();
  EXPECT_THROW(model.check(), Error);
}

TEST(FitScmlGlobal, HugeBetaDegeneratesToZeroMetric) {
  const auto fx = make_fixture(60, 7);
  const auto triplets = generate_triplets(fx.train).triplets;
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.beta = 1e6;
  const auto model = fit_scml_global(fx.train, fx.basis, triplets, cfg);
  EXPECT_EQ(model.nnz(), 0);
  EXPECT_EQ(dist_global(model.w, model.basis, fx.train.row(0), fx.train.row(1)), 0.0);
}

TEST(FitScmlGlobal, ReducesHingeLoss) {
  const auto fx = make_fixture(90, 8);
  const auto triplets = generate_triplets(fx.train).triplets;
  const auto f = triplet_features(fx.train, fx.basis, triplets);
  TrainConfig cfg;
  cfg.beta = 1e-3;
  cfg.epochs = 20;
  const auto model = fit_scml_global(fx.basis, f, cfg);
  EXPECT_LT(mean_hinge_loss(model.w.values(), f), 1.0);
}

TEST(FitScmlLocal, NotWorseThanWarmStartObjective) {
  const auto fx = make_fixture(90, 9);
  const auto triplets = generate_triplets(fx.train).triplets;
  const auto f = triplet_features(fx.train, fx.basis, triplets);
  TrainConfig gcfg;
  gcfg.beta = 1e-3;
  gcfg.epochs = 10;
  const auto global = fit_scml_global(fx.basis, f, gcfg);
  TrainConfig lcfg = gcfg;
  lcfg.eta0 = 1.0;
  const auto local = fit_scml_local(fx.ctx, fx.basis, f, lcfg, global);
  const Matrix init = local_init_from_global(global.w, fx.ctx.embedding->output_dim());
  EXPECT_LE(local_objective(local.atilde, f, fx.ctx.anchor_embedding, lcfg.beta),
            local_objective(init, f, fx.ctx.anchor_embedding, lcfg.beta));
}

TEST(FitMtScml, SharedSparsityAcrossTasks) {
  synthetic::SharedSubspaceSpec spec;
  spec.points_per_task = 150;
  spec.dim = 8;
  spec.shared_dim = 2;
  spec.nuisance_dims = 3;
  const auto tasks = synthetic::shared_subspace_tasks(spec, 10);
  BasisGenConfig bcfg;
  bcfg.basis_budget = 20;
  std::vector<BasisSet> bases;
  for (const auto& t : tasks) bases.push_back(generate_basis(t, bcfg));
  std::vector<std::vector<Triplet>> triplets;
  for (const auto& t : tasks) triplets.push_back(generate_triplets(t).triplets);
  TrainConfig cfg;
  cfg.beta = 1e-2;
  cfg.epochs = 10;
  const auto model = fit_mt_scml(std::span<const Dataset>(tasks), std::span<const BasisSet>(bases), triplets, cfg);
  EXPECT_EQ(model.num_tasks(), 3);
  EXPECT_EQ(model.basis.size(), 60);
  EXPECT_TRUE((model.w.array() >= 0.0).all());
  const auto selected = model.selected_columns();
  EXPECT_FALSE(selected.empty());
  EXPECT_LT(selected.size(), 60u);
}

TEST(RobustnessBound, ClosedForm) {
  const double expected = 3.0 * std::sqrt(std::numbers::ln2 / 500.0);
  EXPECT_NEAR(robustness_bound(0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1000.0, 1.0), expected, 1e-15);
  EXPECT_NEAR(expected, 0.111699, 5e-7);
  EXPECT_NEAR(robustness_bound(0.5, 2.0, 0.0, 0.1, 1.0, 1.0, 1000.0, 1.0), expected, 1e-15);
}

TEST(RobustnessBound, DecreasesWithSampleSize) {
  double previous = 1e300;
  for (double n : {10.0, 100.0, 1000.0, 10000.0}) {
    const double b = robustness_bound(0.01, 1.0, 1.0, 0.1, 1.0, 5.0, n, 0.05);
    EXPECT_LT(b, previous);
    previous = b;
  }
}

TEST(RobustnessBound, RejectsInvalidArguments) {
  EXPECT_THROW(robustness_bound(0, 1, 1, 0.0, 1, 1, 10, 0.5), Error);
  EXPECT_THROW(robustness_bound(0, 1, 1, 1.0, 1, 1, 10, 0.0), Error);
  EXPECT_THROW(robustness_bound(0, 1, 1, 1.0, 1, 1, 0.5, 0.5), Error);
}

// Paired runs on a mixture whose discriminative axis flips between halves:
// the local metric should win on at least 8 of 10 seeds.
TEST(FitScmlLocal, BeatsGlobalOnAxisFlippingMixture) {
  int wins = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto data = synthetic::xor_mixture(400, 1000 + seed, 2);
    ExperimentConfig cfg;
    cfg.datasets = {{"synthetic"}};
    cfg.mode = Mode::local;
    cfg.basisgen.basis_budget = 50;
    cfg.embedding_dim = 20;
    const auto out = run_single_seed(data, cfg, seed);
    ASSERT_TRUE(out.ok) << out.reason;
    const double g = out.result["global"]["test_error"], l = out.result["local"]["test_error"];
    wins += l < g;
  }
  EXPECT_GE(wins, 8);
}

}  // namespace
}  // namespace scml

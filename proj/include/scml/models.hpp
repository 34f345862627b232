#pragma once

// Trainers for the global, multi-task and local sparse compositional metrics,
// the local metric tensor, and the robustness generalization bound.

#include "scml/core.hpp"
#include "scml/embed.hpp"
#include "scml/optim.hpp"

#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <span>
#include <vector>

namespace scml {

// ---------------------------------------------------------------------------
// Model types
// ---------------------------------------------------------------------------

struct GlobalModel {
  BasisSet basis;
  WeightVector w;
  double beta = 0.0;
  SolveTrace trace;

  Index nnz() const { return w.nnz(); }
};

struct MultiTaskModel {
  BasisSet basis;
  Matrix w;  // T x K, nonnegative
  double beta = 0.0;
  SolveTrace trace;

  Index num_tasks() const noexcept { return w.rows(); }
  WeightVector task_weights(Index t) const { return WeightVector(w.row(t).transpose()); }

  /// Columns with nonzero l2 norm, i.e. basis elements used by some task.
  std::vector<Index> selected_columns() const {
    std::vector<Index> cols;
    for (Index j = 0; j < w.cols(); ++j)
      if (w.col(j).norm() > 0.0) cols.push_back(j);
    return cols;
  }
};

/// Metric tensor T(x) = sum_i (a_i^T z_x + c_i)^2 b_i b_i^T. `atilde` stacks
/// A (first D' rows) over c (last row).
struct LocalModel {
  BasisSet basis;
  Matrix atilde;
  std::shared_ptr<const KpcaModel> embedding;
  double beta = 0.0;
  SolveTrace trace;

  Index embedding_dim() const noexcept { return atilde.rows() - 1; }

  std::vector<Index> selected_columns() const {
    std::vector<Index> cols;
    for (Index j = 0; j < atilde.cols(); ++j)
      if (atilde.col(j).norm() > 0.0) cols.push_back(j);
    return cols;
  }

  void check() const {
    if (!embedding) detail::fail("LocalModel: missing embedding");
    detail::require_dim(embedding->output_dim() + 1, atilde.rows(), "LocalModel embedding");
    detail::require_dim(atilde.cols(), basis.size(), "LocalModel basis");
  }
};

/// Appends the constant 1 to each embedded row: z~ = [z; 1].
inline Matrix augment_embedding(const Matrix& z) {
  Matrix out(z.rows(), z.cols() + 1);
  out.leftCols(z.cols()) = z;
  out.col(z.cols()).setOnes();
  return out;
}

/// Per-point weights (z~^T A~)^2 for rows of an augmented embedding.
inline Matrix local_weight_rows(const Matrix& atilde, const Matrix& augmented) {
  return (augmented * atilde).cwiseAbs2();
}

template <typename Derived>
WeightVector local_weights(const LocalModel& model, const Eigen::MatrixBase<Derived>& x) {
  model.check();
  detail::require_dim(x.size(), model.basis.dim(), "local_weights");
  Vector z(model.atilde.rows());
  z.head(model.embedding_dim()) = kpca_transform(*model.embedding, x);
  z[model.embedding_dim()] = 1.0;
  return WeightVector((model.atilde.transpose() * z).cwiseAbs2());
}

/// Distance from x under x's own metric: sum_i w_{x,i} (b_i^T (x - x'))^2.
/// Not symmetric in general.
template <typename DerivedA, typename DerivedB>
double dist_local(const LocalModel& model, const Eigen::MatrixBase<DerivedA>& x,
                  const Eigen::MatrixBase<DerivedB>& x_prime) {
  return dist_global(local_weights(model, x), model.basis, x, x_prime);
}

// ---------------------------------------------------------------------------
// Trainers
// ---------------------------------------------------------------------------

using GlobalValidation = std::function<double(const GlobalModel&)>;
using MultiTaskValidation = std::function<double(const MultiTaskModel&)>;
using LocalValidation = std::function<double(const LocalModel&)>;

inline GlobalModel fit_scml_global(const BasisSet& basis, const TripletFeatures& features, const TrainConfig& cfg,
                                   const GlobalValidation& validation = {}) {
  detail::require_dim(features.num_bases(), basis.size(), "fit_scml_global");
  if (features.size() == 0) detail::fail("fit_scml_global: no triplets");
  ValidationHook<Vector> hook;
  if (validation) {
    hook = [&](const Vector& w) { return validation(GlobalModel{basis, WeightVector(w), cfg.beta, {}}); };
  }
  auto solved = rda_solve(features, cfg, hook);
  return GlobalModel{basis, WeightVector(std::move(solved.weights)), cfg.beta, std::move(solved.trace)};
}

inline GlobalModel fit_scml_global(const Dataset& train, const BasisSet& basis, std::span<const Triplet> triplets,
                                   const TrainConfig& cfg, const GlobalValidation& validation = {}) {
  if (triplets.empty()) detail::fail("fit_scml_global: no triplets");
  return fit_scml_global(basis, triplet_features(train, basis, triplets), cfg, validation);
}

/// Per-task triplet features must be computed against the union basis.
inline MultiTaskModel fit_mt_scml(const BasisSet& union_basis, std::span<const TripletFeatures> task_features,
                                  const TrainConfig& cfg, const MultiTaskValidation& validation = {}) {
  if (task_features.empty()) detail::fail("fit_mt_scml: need at least one task");
  for (const auto& f : task_features) {
    detail::require_dim(f.num_bases(), union_basis.size(), "fit_mt_scml task features");
    if (f.size() == 0) detail::fail("fit_mt_scml: a task has no triplets");
  }
  ValidationHook<Matrix> hook;
  if (validation) {
    hook = [&](const Matrix& w) { return validation(MultiTaskModel{union_basis, w, cfg.beta, {}}); };
  }
  auto solved = rda_solve(task_features, cfg, hook);
  return MultiTaskModel{union_basis, std::move(solved.weights), cfg.beta, std::move(solved.trace)};
}

inline MultiTaskModel fit_mt_scml(std::span<const Dataset> tasks, std::span<const BasisSet> task_bases,
                                  std::span<const std::vector<Triplet>> task_triplets, const TrainConfig& cfg,
                                  const MultiTaskValidation& validation = {}) {
  if (tasks.empty()) detail::fail("fit_mt_scml: need at least one task");
  if (tasks.size() != task_bases.size() || tasks.size() != task_triplets.size())
    detail::fail("fit_mt_scml: tasks, bases and triplets must align");
  const BasisSet union_basis = BasisSet::concat(task_bases);
  std::vector<TripletFeatures> features;
  features.reserve(tasks.size());
  for (std::size_t t = 0; t < tasks.size(); ++t)
    features.push_back(triplet_features(tasks[t], union_basis, task_triplets[t]));
  return fit_mt_scml(union_basis, features, cfg, validation);
}

/// Initial A~ reproducing a global solution: A = 0, c_i = sqrt(w*_i).
inline Matrix local_init_from_global(const WeightVector& warm, Index embedding_dim) {
  Matrix atilde = Matrix::Zero(embedding_dim + 1, warm.size());
  atilde.row(embedding_dim) = warm.values().cwiseSqrt().transpose();
  return atilde;
}

/// Shared state for fitting several local models (e.g. over a beta grid) on
/// one training set: the embedding and the augmented anchor table.
struct LocalFitContext {
  std::shared_ptr<const KpcaModel> embedding;
  Matrix anchor_embedding;  // n_train x (D' + 1)

  static LocalFitContext build(const Dataset& train, Index embedding_dim) {
    const Index dim = std::min(embedding_dim, train.size());
    const double sigma = median_bandwidth(train.features());
    auto model = std::make_shared<KpcaModel>(kpca_fit(train.features(), dim, sigma));
    LocalFitContext ctx;
    ctx.anchor_embedding = augment_embedding(model->train_embedding);
    ctx.embedding = std::move(model);
    return ctx;
  }
};

inline LocalModel fit_scml_local(const LocalFitContext& ctx, const BasisSet& basis, const TripletFeatures& features,
                                 const TrainConfig& cfg, const GlobalModel& warm,
                                 const LocalValidation& validation = {}) {
  detail::require_dim(warm.basis.size(), basis.size(), "fit_scml_local warm start");
  detail::require_dim(features.num_bases(), basis.size(), "fit_scml_local features");
  const Index dim = ctx.embedding->output_dim();
  const Matrix init = local_init_from_global(warm.w, dim);
  ValidationHook<Matrix> hook;
  if (validation) {
    hook = [&](const Matrix& a) { return validation(LocalModel{basis, a, ctx.embedding, cfg.beta, {}}); };
  }
  auto solved = fobos_solve(init, features, ctx.anchor_embedding, cfg, hook);
  return LocalModel{basis, std::move(solved.weights), ctx.embedding, cfg.beta, std::move(solved.trace)};
}

inline LocalModel fit_scml_local(const Dataset& train, const BasisSet& basis, std::span<const Triplet> triplets,
                                 const TrainConfig& cfg, Index embedding_dim, const GlobalModel& warm,
                                 const LocalValidation& validation = {}) {
  if (triplets.empty()) detail::fail("fit_scml_local: no triplets");
  const auto ctx = LocalFitContext::build(train, embedding_dim);
  return fit_scml_local(ctx, basis, triplet_features(train, basis, triplets), cfg, warm, validation);
}

// ---------------------------------------------------------------------------
// Generalization bound
// ---------------------------------------------------------------------------

/// 16 gamma R K* / beta + 3 U sqrt((N ln 2 + ln(1/delta)) / (0.5 n)), where
/// N is the size of a gamma-cover of the sample space (caller supplied).
inline double robustness_bound(double gamma_cover, double radius, double k_star, double beta, double loss_bound,
                               double cover_size, double n, double delta) {
  if (!(beta > 0.0)) detail::fail("robustness_bound: beta must be > 0");
  if (!(n >= 1.0)) detail::fail("robustness_bound: n must be >= 1");
  if (!(delta > 0.0 && delta <= 1.0)) detail::fail("robustness_bound: delta must be in (0, 1]");
  if (!(cover_size >= 1.0)) detail::fail("robustness_bound: cover size must be >= 1");
  const double robustness = 16.0 * gamma_cover * radius * k_star / beta;
  const double concentration =
      3.0 * loss_bound * std::sqrt((cover_size * std::numbers::ln2 + std::log(1.0 / delta)) / (0.5 * n));
  return robustness + concentration;
}

}  // namespace scml

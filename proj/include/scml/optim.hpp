#pragma once

// Stochastic composite solvers.
//
//  * Global / multi-task weights: regularized dual averaging (RDA) with the
//    prox-function 1/2 ||w||^2 and scale gamma * sqrt(t). Each step minimizes
//      <gbar, w> + beta * R(w) + gamma / sqrt(t) * 1/2 ||w||^2   over w >= 0
//    in closed form, with R = l1 or R = sum of column l2 norms.
//  * Local tensor parameters: forward-backward splitting (subgradient step,
//    then the group soft-threshold prox of the l2,1 norm).

#include "scml/core.hpp"
#include "scml/random.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

namespace scml {

struct TrainConfig {
  double beta = 0.0;
  double gamma_rda = 1.0;
  double eta0 = 0.1;
  int epochs = 50;
  int minibatch = 10;
  std::uint64_t rng_seed = 0;
  int early_stop_patience = 5;  // epochs without validation improvement; 0 disables

  void validate() const {
    if (!(beta >= 0.0)) detail::fail("TrainConfig: beta must be >= 0");
    if (!(gamma_rda > 0.0)) detail::fail("TrainConfig: gamma_rda must be > 0");
    if (!(eta0 > 0.0)) detail::fail("TrainConfig: eta0 must be > 0");
    if (epochs < 1) detail::fail("TrainConfig: epochs must be >= 1");
    if (minibatch < 1) detail::fail("TrainConfig: minibatch must be >= 1");
    if (early_stop_patience < 0) detail::fail("TrainConfig: early_stop_patience must be >= 0");
  }
};

/// Dual-averaging state. `Weights` is Vector (global) or Matrix (T x K).
template <typename Weights>
struct RdaState {
  long t = 0;
  Weights gbar;
  double gamma = 1.0;
  double beta = 0.0;

  static RdaState zeros(Weights shape_like, double gamma, double beta) {
    shape_like.setZero();
    return RdaState{0, std::move(shape_like), gamma, beta};
  }
};

// ---------------------------------------------------------------------------
// Subgradients
// ---------------------------------------------------------------------------

/// (1/|batch|) * sum over active triplets of (p - q). Margin exactly 0 counts
/// as inactive.
inline Vector subgrad_global(const Vector& w, const TripletFeatures& f, std::span<const Index> rows) {
  detail::require_dim(w.size(), f.num_bases(), "subgrad_global");
  if (rows.empty()) detail::fail("subgrad_global: empty batch");
  Vector g = Vector::Zero(w.size());
  for (Index r : rows) {
    if (triplet_margin(w, f, r) > 0.0) g += (f.p.row(r) - f.q.row(r)).transpose();
  }
  return g / static_cast<double>(rows.size());
}

/// `anchor_embedding` row a holds z~_a = [z_a; 1] for training point a.
/// Column m of the result is the batch mean over active triplets of
/// 2 (a~_m^T z~) (p_m - q_m) z~.
inline Matrix subgrad_local(const Matrix& atilde, const TripletFeatures& f, std::span<const Index> rows,
                            const Matrix& anchor_embedding) {
  detail::require_dim(atilde.cols(), f.num_bases(), "subgrad_local columns");
  detail::require_dim(anchor_embedding.cols(), atilde.rows(), "subgrad_local embedding");
  if (rows.empty()) detail::fail("subgrad_local: empty batch");
  Matrix g = Matrix::Zero(atilde.rows(), atilde.cols());
  for (Index r : rows) {
    const Index a = f.anchors[static_cast<std::size_t>(r)];
    if (a < 0 || a >= anchor_embedding.rows()) detail::fail("subgrad_local: anchor without embedding");
    const Vector z = anchor_embedding.row(a).transpose();
    const Eigen::RowVectorXd u = z.transpose() * atilde;
    const Eigen::RowVectorXd diff = f.p.row(r) - f.q.row(r);
    const double margin = 1.0 + u.cwiseAbs2().dot(diff);
    if (margin > 0.0) g.noalias() += z * (2.0 * u.cwiseProduct(diff));
  }
  return g / static_cast<double>(rows.size());
}

// ---------------------------------------------------------------------------
// Proximal steps
// ---------------------------------------------------------------------------

/// RDA step for beta ||w||_1 over w >= 0:
///   w_i = sqrt(t)/gamma * max(0, -gbar_i - beta).
inline WeightVector rda_step_l1_nonneg(RdaState<Vector>& state, const Vector& g) {
  if (!(state.gamma > 0.0)) detail::fail("rda_step_l1_nonneg: gamma must be > 0");
  if (state.gbar.size() == 0) state.gbar = Vector::Zero(g.size());
  detail::require_dim(g.size(), state.gbar.size(), "rda_step_l1_nonneg");
  const double t = static_cast<double>(state.t);
  state.gbar = (t * state.gbar + g) / (t + 1.0);
  ++state.t;
  const double scale = std::sqrt(static_cast<double>(state.t)) / state.gamma;
  Vector w = (-state.gbar.array() - state.beta).cwiseMax(0.0) * scale;
  return WeightVector(std::move(w));
}

/// RDA step for beta * sum_j ||W_{:,j}||_2 over W >= 0, column-wise:
/// clip the unregularized minimizer to the orthant, then group-shrink.
inline Matrix rda_step_l21_nonneg(RdaState<Matrix>& state, const Matrix& g) {
  if (!(state.gamma > 0.0)) detail::fail("rda_step_l21_nonneg: gamma must be > 0");
  if (state.gbar.size() == 0) state.gbar = Matrix::Zero(g.rows(), g.cols());
  detail::require_dim(g.rows(), state.gbar.rows(), "rda_step_l21_nonneg rows");
  detail::require_dim(g.cols(), state.gbar.cols(), "rda_step_l21_nonneg cols");
  const double t = static_cast<double>(state.t);
  state.gbar = (t * state.gbar + g) / (t + 1.0);
  ++state.t;
  const double root_t = std::sqrt(static_cast<double>(state.t));
  const double threshold = state.beta * root_t / state.gamma;
  Matrix w = (-(root_t / state.gamma) * state.gbar).cwiseMax(0.0);
  for (Index j = 0; j < w.cols(); ++j) {
    const double norm = w.col(j).norm();
    if (norm <= threshold) {
      w.col(j).setZero();
    } else {
      w.col(j) *= 1.0 - threshold / norm;
    }
  }
  return w;
}

/// Group soft-threshold, the prox of eta * beta * sum_j ||A_{:,j}||_2.
inline Matrix prox_fobos_l21(const Matrix& a, double eta, double beta) {
  if (!(eta > 0.0)) detail::fail("prox_fobos_l21: step must be > 0");
  const double threshold = eta * beta;
  Matrix out = a;
  if (threshold <= 0.0) return out;
  for (Index j = 0; j < out.cols(); ++j) {
    const double norm = out.col(j).norm();
    if (norm <= threshold) {
      out.col(j).setZero();
    } else {
      out.col(j) *= 1.0 - threshold / norm;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Objectives
// ---------------------------------------------------------------------------

inline double global_objective(const Vector& w, const TripletFeatures& f, double beta) {
  return mean_hinge_loss(w, f) + beta * w.lpNorm<1>();
}

inline double l21_norm(const Matrix& w) { return w.colwise().norm().sum(); }

inline double multitask_objective(const Matrix& w, std::span<const TripletFeatures> tasks, double beta) {
  detail::require_dim(w.rows(), static_cast<Index>(tasks.size()), "multitask_objective");
  double loss = 0.0;
  for (std::size_t t = 0; t < tasks.size(); ++t)
    loss += mean_hinge_loss(w.row(static_cast<Index>(t)).transpose(), tasks[t]);
  return loss + beta * l21_norm(w);
}

/// Mean of [1 + sum_m (a~_m^T z~_a)^2 (p_m - q_m)]_+ over all triplets.
inline double local_loss(const Matrix& atilde, const TripletFeatures& f, const Matrix& anchor_embedding) {
  if (f.size() == 0) return 0.0;
  const Matrix weights = (anchor_embedding * atilde).cwiseAbs2();
  double total = 0.0;
  for (Index r = 0; r < f.size(); ++r) {
    const Index a = f.anchors[static_cast<std::size_t>(r)];
    const double margin = 1.0 + (f.p.row(r) - f.q.row(r)).dot(weights.row(a));
    total += std::max(0.0, margin);
  }
  return total / static_cast<double>(f.size());
}

inline double local_objective(const Matrix& atilde, const TripletFeatures& f, const Matrix& anchor_embedding,
                              double beta) {
  return local_loss(atilde, f, anchor_embedding) + beta * l21_norm(atilde);
}

// ---------------------------------------------------------------------------
// Solver loops
// ---------------------------------------------------------------------------

struct TracePoint {
  int epoch = 0;
  double objective = 0.0;
  double validation_error = std::numeric_limits<double>::quiet_NaN();
  Index nnz = 0;
};

struct SolveTrace {
  std::vector<TracePoint> points;
  double max_abs_gbar = 0.0;
  long steps = 0;
  bool early_stopped = false;
};

template <typename Weights>
using ValidationHook = std::function<double(const Weights&)>;

template <typename Weights>
struct SolveResult {
  Weights weights;
  SolveTrace trace;
};

namespace detail {

inline std::vector<Index> iota_indices(Index n) {
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  return idx;
}

/// Tracks validation improvement for early stopping.
class Patience {
 public:
  explicit Patience(int patience) : patience_(patience) {}
  /// Returns true when training should stop.
  bool update(double val) {
    if (std::isnan(val) || patience_ <= 0) return false;
    if (val < best_) {
      best_ = val;
      since_ = 0;
      return false;
    }
    return ++since_ >= patience_;
  }

 private:
  int patience_;
  double best_ = std::numeric_limits<double>::infinity();
  int since_ = 0;
};

inline Index count_nonzero_columns(const Matrix& w) {
  Index c = 0;
  for (Index j = 0; j < w.cols(); ++j)
    if ((w.col(j).array() != 0.0).any()) ++c;
  return c;
}

}  // namespace detail

/// SCML-Global: RDA with the l1 + nonnegativity step. Returns the last iterate.
inline SolveResult<Vector> rda_solve(const TripletFeatures& f, const TrainConfig& cfg,
                                     const ValidationHook<Vector>& validation = {}) {
  cfg.validate();
  if (f.size() == 0) detail::fail("rda_solve: no triplets");
  const Index k = f.num_bases();
  Rng rng(cfg.rng_seed);
  auto order = detail::iota_indices(f.size());
  auto state = RdaState<Vector>::zeros(Vector(k), cfg.gamma_rda, cfg.beta);
  Vector w = Vector::Zero(k);
  SolveResult<Vector> out;
  detail::Patience patience(cfg.early_stop_patience);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(std::span<Index>(order));
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.minibatch)) {
      const std::size_t len = std::min(static_cast<std::size_t>(cfg.minibatch), order.size() - start);
      const Vector g = subgrad_global(w, f, std::span<const Index>(order).subspan(start, len));
      w = rda_step_l1_nonneg(state, g).values();
      out.trace.max_abs_gbar = std::max(out.trace.max_abs_gbar, state.gbar.cwiseAbs().maxCoeff());
      ++out.trace.steps;
    }
    TracePoint pt;
    pt.epoch = epoch;
    pt.objective = global_objective(w, f, cfg.beta);
    pt.nnz = (w.array() > 0.0).count();
    if (validation) pt.validation_error = validation(w);
    out.trace.points.push_back(pt);
    if (validation && patience.update(pt.validation_error)) {
      out.trace.early_stopped = true;
      break;
    }
  }
  out.weights = std::move(w);
  return out;
}

/// mt-SCML: one row of W per task, each task loss averaged over its own
/// triplets. Every step draws one minibatch from each task; an epoch is one
/// pass over the largest task.
inline SolveResult<Matrix> rda_solve(std::span<const TripletFeatures> tasks, const TrainConfig& cfg,
                                     const ValidationHook<Matrix>& validation = {}) {
  cfg.validate();
  if (tasks.empty()) detail::fail("rda_solve: no tasks");
  const Index k = tasks.front().num_bases();
  Index longest = 0;
  for (const auto& f : tasks) {
    if (f.size() == 0) detail::fail("rda_solve: a task has no triplets");
    detail::require_dim(f.num_bases(), k, "rda_solve task bases");
    longest = std::max(longest, f.size());
  }
  const auto num_tasks = static_cast<Index>(tasks.size());
  Rng rng(cfg.rng_seed);
  std::vector<std::vector<Index>> orders;
  std::vector<std::size_t> cursor(tasks.size(), 0);
  for (const auto& f : tasks) {
    orders.push_back(detail::iota_indices(f.size()));
    rng.shuffle(std::span<Index>(orders.back()));
  }
  auto state = RdaState<Matrix>::zeros(Matrix(num_tasks, k), cfg.gamma_rda, cfg.beta);
  Matrix w = Matrix::Zero(num_tasks, k);
  Matrix g(num_tasks, k);
  SolveResult<Matrix> out;
  detail::Patience patience(cfg.early_stop_patience);
  const auto steps_per_epoch = static_cast<long>((longest + cfg.minibatch - 1) / cfg.minibatch);
  const auto mb = static_cast<std::size_t>(cfg.minibatch);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (long s = 0; s < steps_per_epoch; ++s) {
      for (Index t = 0; t < num_tasks; ++t) {
        auto& order = orders[static_cast<std::size_t>(t)];
        auto& at = cursor[static_cast<std::size_t>(t)];
        if (at >= order.size()) {
          rng.shuffle(std::span<Index>(order));
          at = 0;
        }
        const std::size_t len = std::min(mb, order.size() - at);
        g.row(t) = subgrad_global(w.row(t).transpose(), tasks[static_cast<std::size_t>(t)],
                                  std::span<const Index>(order).subspan(at, len))
                       .transpose();
        at += len;
      }
      w = rda_step_l21_nonneg(state, g);
      out.trace.max_abs_gbar = std::max(out.trace.max_abs_gbar, state.gbar.cwiseAbs().maxCoeff());
      ++out.trace.steps;
    }
    TracePoint pt;
    pt.epoch = epoch;
    pt.objective = multitask_objective(w, tasks, cfg.beta);
    pt.nnz = detail::count_nonzero_columns(w);
    if (validation) pt.validation_error = validation(w);
    out.trace.points.push_back(pt);
    if (validation && patience.update(pt.validation_error)) {
      out.trace.early_stopped = true;
      break;
    }
  }
  out.weights = std::move(w);
  return out;
}

/// SCML-Local: forward-backward splitting from `init` with step
/// eta_t = eta0 / sqrt(t). Returns the iterate with the best validation error
/// (best objective without a hook) among iterates whose objective does not
/// exceed the objective at `init`; `init` itself is the fallback.
inline SolveResult<Matrix> fobos_solve(const Matrix& init, const TripletFeatures& f, const Matrix& anchor_embedding,
                                       const TrainConfig& cfg, const ValidationHook<Matrix>& validation = {}) {
  cfg.validate();
  detail::require_dim(init.cols(), f.num_bases(), "fobos_solve columns");
  detail::require_dim(anchor_embedding.cols(), init.rows(), "fobos_solve embedding");
  if (f.size() == 0) detail::fail("fobos_solve: no triplets");

  SolveResult<Matrix> out;
  const double init_objective = local_objective(init, f, anchor_embedding, cfg.beta);
  double best_score = validation ? validation(init) : init_objective;
  double best_objective = init_objective;
  Matrix best = init;
  out.trace.points.push_back({0, init_objective, validation ? best_score : std::numeric_limits<double>::quiet_NaN(),
                              detail::count_nonzero_columns(init)});

  // Columns that are exactly zero never move again: their gradient carries
  // the factor a~_m^T z~ = 0 and the prox keeps them at zero.
  std::vector<Index> live;
  for (Index j = 0; j < init.cols(); ++j)
    if ((init.col(j).array() != 0.0).any()) live.push_back(j);

  Rng rng(cfg.rng_seed);
  auto order = detail::iota_indices(f.size());
  Matrix a = init;
  detail::Patience patience(cfg.early_stop_patience);
  patience.update(best_score);
  const Index rows = init.rows();
  Matrix g(rows, static_cast<Index>(live.size()));
  Vector u(static_cast<Index>(live.size()));
  Vector diff(static_cast<Index>(live.size()));

  for (int epoch = 1; epoch <= cfg.epochs && !live.empty(); ++epoch) {
    rng.shuffle(std::span<Index>(order));
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.minibatch)) {
      const std::size_t len = std::min(static_cast<std::size_t>(cfg.minibatch), order.size() - start);
      // Gradient restricted to live columns; matches subgrad_local there.
      g.setZero();
      for (std::size_t b = start; b < start + len; ++b) {
        const Index r = order[b];
        const auto z = anchor_embedding.row(f.anchors[static_cast<std::size_t>(r)]);
        double margin = 1.0;
        for (std::size_t c = 0; c < live.size(); ++c) {
          const Index m = live[c];
          u[static_cast<Index>(c)] = z.dot(a.col(m));
          diff[static_cast<Index>(c)] = f.p(r, m) - f.q(r, m);
          margin += u[static_cast<Index>(c)] * u[static_cast<Index>(c)] * diff[static_cast<Index>(c)];
        }
        if (margin > 0.0) g.noalias() += z.transpose() * (2.0 * u.cwiseProduct(diff)).transpose();
      }
      ++out.trace.steps;
      const double eta = cfg.eta0 / std::sqrt(static_cast<double>(out.trace.steps));
      const double threshold = eta * cfg.beta;
      for (std::size_t c = 0; c < live.size(); ++c) {
        const Index m = live[c];
        a.col(m) -= (eta / static_cast<double>(len)) * g.col(static_cast<Index>(c));
        const double norm = a.col(m).norm();
        if (norm <= threshold) {
          a.col(m).setZero();
        } else if (threshold > 0.0) {
          a.col(m) *= 1.0 - threshold / norm;
        }
      }
    }
    std::erase_if(live, [&](Index m) { return (a.col(m).array() == 0.0).all(); });
    g.resize(rows, static_cast<Index>(live.size()));
    u.resize(static_cast<Index>(live.size()));
    diff.resize(static_cast<Index>(live.size()));

    TracePoint pt;
    pt.epoch = epoch;
    pt.objective = local_objective(a, f, anchor_embedding, cfg.beta);
    pt.nnz = static_cast<Index>(live.size());
    const double score = validation ? validation(a) : pt.objective;
    if (validation) pt.validation_error = score;
    out.trace.points.push_back(pt);
    const bool improves = score < best_score || (score == best_score && pt.objective < best_objective);
    if (pt.objective <= init_objective && improves) {
      best_score = score;
      best_objective = pt.objective;
      best = a;
    }
    if (validation && patience.update(score)) {
      out.trace.early_stopped = true;
      break;
    }
  }
  out.weights = std::move(best);
  return out;
}

}  // namespace scml

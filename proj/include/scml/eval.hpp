#pragma once

// k-NN evaluation under Euclidean, global and local metrics; stratified
// splitting; validation-based selection of the regularization weight.

#include "scml/core.hpp"
#include "scml/models.hpp"
#include "scml/random.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <variant>
#include <vector>

namespace scml {

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

struct SplitSpec {
  std::optional<std::array<double, 3>> ratios = std::array<double, 3>{0.6, 0.2, 0.2};
  std::optional<std::array<Index, 3>> counts;  // takes precedence over ratios

  static SplitSpec from_counts(Index train, Index val, Index test) {
    SplitSpec s;
    s.ratios.reset();
    s.counts = std::array<Index, 3>{train, val, test};
    return s;
  }
};

struct Split {
  std::vector<Index> train, val, test;
};

namespace detail {

/// Integer allocation of `total` over groups with real-valued `ideal`
/// shares (largest remainder), each group limited by `capacity`.
inline std::vector<Index> apportion(const std::vector<double>& ideal, Index total, const std::vector<Index>& capacity) {
  const std::size_t g = ideal.size();
  std::vector<Index> out(g);
  Index assigned = 0;
  for (std::size_t c = 0; c < g; ++c) {
    out[c] = std::min(static_cast<Index>(std::floor(ideal[c] + 1e-9)), capacity[c]);
    assigned += out[c];
  }
  std::vector<std::size_t> order(g);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return ideal[a] - std::floor(ideal[a]) > ideal[b] - std::floor(ideal[b]);
  });
  while (assigned < total) {
    bool progressed = false;
    for (std::size_t c : order) {
      if (assigned == total) break;
      if (out[c] < capacity[c]) {
        ++out[c];
        ++assigned;
        progressed = true;
      }
    }
    if (!progressed) fail("split: not enough samples to fill the requested sizes");
  }
  while (assigned > total) {  // floor overshoot cannot happen, kept for safety with capacity rounding
    for (auto it = order.rbegin(); it != order.rend() && assigned > total; ++it)
      if (out[*it] > 0) {
        --out[*it];
        --assigned;
      }
  }
  return out;
}

}  // namespace detail

/// Stratified, disjoint train/validation/test split; each list is sorted.
inline Split split(const Dataset& data, const SplitSpec& spec, std::uint64_t seed) {
  const Index n = data.size();
  Index sizes[3];
  if (spec.counts) {
    const auto& c = *spec.counts;
    if (c[0] < 0 || c[1] < 0 || c[2] < 0) detail::fail("split: negative count");
    if (c[0] + c[1] + c[2] > n) detail::fail("split: requested counts exceed n = ", n);
    std::copy(c.begin(), c.end(), sizes);
  } else if (spec.ratios) {
    const auto& r = *spec.ratios;
    if (r[0] < 0 || r[1] < 0 || r[2] < 0 || std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9)
      detail::fail("split: ratios must be nonnegative and sum to 1");
    sizes[0] = static_cast<Index>(std::llround(r[0] * static_cast<double>(n)));
    sizes[1] = std::min(n - sizes[0], static_cast<Index>(std::llround(r[1] * static_cast<double>(n))));
    sizes[2] = n - sizes[0] - sizes[1];
  } else {
    detail::fail("split: no ratios or counts given");
  }

  const auto class_sizes = data.class_counts();
  const std::size_t num_classes = class_sizes.size();
  std::vector<Index> remaining(class_sizes.begin(), class_sizes.end());
  std::vector<std::vector<Index>> per_part(3);
  for (int part = 0; part < 3; ++part) {
    std::vector<double> ideal(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c)
      ideal[c] = static_cast<double>(class_sizes[c]) * static_cast<double>(sizes[part]) / static_cast<double>(n);
    per_part[static_cast<std::size_t>(part)] = detail::apportion(ideal, sizes[part], remaining);
    for (std::size_t c = 0; c < num_classes; ++c) remaining[c] -= per_part[static_cast<std::size_t>(part)][c];
  }

  std::vector<std::vector<Index>> members(num_classes);
  for (Index i = 0; i < n; ++i) members[static_cast<std::size_t>(data.label(i))].push_back(i);
  Rng rng(seed);
  Split out;
  std::vector<Index>* parts[3] = {&out.train, &out.val, &out.test};
  for (std::size_t c = 0; c < num_classes; ++c) {
    rng.shuffle(std::span<Index>(members[c]));
    std::size_t at = 0;
    for (int part = 0; part < 3; ++part) {
      const auto take = static_cast<std::size_t>(per_part[static_cast<std::size_t>(part)][c]);
      parts[part]->insert(parts[part]->end(), members[c].begin() + static_cast<std::ptrdiff_t>(at),
                          members[c].begin() + static_cast<std::ptrdiff_t>(at + take));
      at += take;
    }
  }
  for (auto* p : parts) std::sort(p->begin(), p->end());
  return out;
}

// ---------------------------------------------------------------------------
// Metrics for k-NN
// ---------------------------------------------------------------------------

struct EuclideanMetric {
  /// Squared Euclidean distance from every query row to every train row.
  Matrix pairwise(const Matrix& queries, const Matrix& train) const {
    Matrix d(queries.rows(), train.rows());
    for (Index q = 0; q < queries.rows(); ++q)
      for (Index j = 0; j < train.rows(); ++j) d(q, j) = (queries.row(q) - train.row(j)).squaredNorm();
    return d;
  }
};

namespace detail {

/// d(q, j) = sum_i w(q, i) (P_q,i - P_j,i)^2 with one weight row per query
/// (or a single shared row).
inline Matrix weighted_projection_distances(const Matrix& weights, const Matrix& query_proj,
                                            const Matrix& train_proj) {
  Matrix d(query_proj.rows(), train_proj.rows());
  const bool shared = weights.rows() == 1;
  for (Index q = 0; q < query_proj.rows(); ++q) {
    const auto w = weights.row(shared ? 0 : q);
    for (Index j = 0; j < train_proj.rows(); ++j)
      d(q, j) = w.dot((query_proj.row(q) - train_proj.row(j)).cwiseAbs2());
  }
  return d;
}

}  // namespace detail

/// Global metric restricted to its nonzero weights.
class GlobalMetric {
 public:
  GlobalMetric(const BasisSet& basis, const WeightVector& w) {
    detail::require_dim(w.size(), basis.size(), "GlobalMetric");
    std::vector<Index> keep;
    for (Index i = 0; i < w.size(); ++i)
      if (w[i] > 0.0) keep.push_back(i);
    directions_ = Matrix(static_cast<Index>(keep.size()), basis.dim());
    weights_ = Matrix(1, static_cast<Index>(keep.size()));
    for (std::size_t r = 0; r < keep.size(); ++r) {
      directions_.row(static_cast<Index>(r)) = basis.vectors().row(keep[r]);
      weights_(0, static_cast<Index>(r)) = w[keep[r]];
    }
  }
  explicit GlobalMetric(const GlobalModel& model) : GlobalMetric(model.basis, model.w) {}

  Matrix pairwise(const Matrix& queries, const Matrix& train) const {
    if (directions_.rows() == 0) return Matrix::Zero(queries.rows(), train.rows());
    return detail::weighted_projection_distances(weights_, queries * directions_.transpose(),
                                                 train * directions_.transpose());
  }

 private:
  Matrix directions_;
  Matrix weights_;
};

/// Local metric; the query point carries the weights.
class LocalMetric {
 public:
  explicit LocalMetric(const LocalModel& model) : embedding_(model.embedding) {
    model.check();
    const auto keep = model.selected_columns();
    directions_ = Matrix(static_cast<Index>(keep.size()), model.basis.dim());
    atilde_ = Matrix(model.atilde.rows(), static_cast<Index>(keep.size()));
    for (std::size_t r = 0; r < keep.size(); ++r) {
      directions_.row(static_cast<Index>(r)) = model.basis.vectors().row(keep[r]);
      atilde_.col(static_cast<Index>(r)) = model.atilde.col(keep[r]);
    }
  }

  Matrix query_weights(const Matrix& queries) const {
    return local_weight_rows(atilde_, augment_embedding(kpca_transform_rows(*embedding_, queries)));
  }

  Matrix pairwise(const Matrix& queries, const Matrix& train) const {
    if (directions_.rows() == 0) return Matrix::Zero(queries.rows(), train.rows());
    return detail::weighted_projection_distances(query_weights(queries), queries * directions_.transpose(),
                                                 train * directions_.transpose());
  }

 private:
  std::shared_ptr<const KpcaModel> embedding_;
  Matrix directions_;
  Matrix atilde_;
};

using Metric = std::variant<EuclideanMetric, GlobalMetric, LocalMetric>;

inline Matrix pairwise_distances(const Metric& metric, const Matrix& queries, const Matrix& train) {
  return std::visit([&](const auto& m) { return m.pairwise(queries, train); }, metric);
}

// ---------------------------------------------------------------------------
// k-NN
// ---------------------------------------------------------------------------

/// Majority vote among the k nearest entries of `distances` (one per training
/// point). Distance ties go to the smaller index; vote ties to the smaller
/// summed distance, then the smaller class id. `exclude` drops one training
/// index (leave-one-out).
inline int knn_vote(std::span<const double> distances, std::span<const int> labels, int num_classes, int k,
                    std::optional<Index> exclude = std::nullopt) {
  std::vector<Index> idx;
  idx.reserve(distances.size());
  for (Index j = 0; j < static_cast<Index>(distances.size()); ++j)
    if (!exclude || *exclude != j) idx.push_back(j);
  if (idx.empty()) detail::fail("knn: empty training set");
  if (k < 1 || static_cast<std::size_t>(k) > idx.size()) detail::fail("knn: k = ", k, " exceeds training size");
  auto closer = [&](Index a, Index b) {
    const double da = distances[static_cast<std::size_t>(a)], db = distances[static_cast<std::size_t>(b)];
    return da < db || (da == db && a < b);
  };
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), closer);
  std::vector<int> votes(static_cast<std::size_t>(num_classes), 0);
  std::vector<double> summed(static_cast<std::size_t>(num_classes), 0.0);
  for (int r = 0; r < k; ++r) {
    const auto j = static_cast<std::size_t>(idx[static_cast<std::size_t>(r)]);
    ++votes[static_cast<std::size_t>(labels[j])];
    summed[static_cast<std::size_t>(labels[j])] += distances[j];
  }
  int best = -1;
  for (int c = 0; c < num_classes; ++c) {
    const auto cc = static_cast<std::size_t>(c);
    if (votes[cc] == 0) continue;
    if (best < 0) {
      best = c;
      continue;
    }
    const auto bb = static_cast<std::size_t>(best);
    if (votes[cc] > votes[bb] || (votes[cc] == votes[bb] && summed[cc] < summed[bb])) best = c;
  }
  return best;
}

template <typename Derived>
int knn_predict(const Metric& metric, const Dataset& train, const Eigen::MatrixBase<Derived>& x, int k = 3) {
  if (train.size() == 0) detail::fail("knn_predict: empty training set");
  const Matrix query = x.derived().reshaped().transpose();
  const Matrix d = pairwise_distances(metric, query, train.features());
  const Vector row = d.row(0).transpose();
  return knn_vote(std::span<const double>(row.data(), static_cast<std::size_t>(row.size())), train.labels(),
                  train.num_classes(), k);
}

inline std::vector<int> knn_predict_all(const Metric& metric, const Dataset& train, const Dataset& queries, int k = 3,
                                        bool leave_one_out = false) {
  if (leave_one_out) detail::require_dim(queries.size(), train.size(), "knn leave-one-out");
  const Matrix d = pairwise_distances(metric, queries.features(), train.features());
  const int classes = std::max(train.num_classes(), queries.num_classes());
  std::vector<int> out(static_cast<std::size_t>(queries.size()));
  Vector row(d.cols());
  for (Index q = 0; q < d.rows(); ++q) {
    row = d.row(q).transpose();
    out[static_cast<std::size_t>(q)] =
        knn_vote(std::span<const double>(row.data(), static_cast<std::size_t>(row.size())), train.labels(), classes,
                 k, leave_one_out ? std::optional<Index>(q) : std::nullopt);
  }
  return out;
}

/// Fraction of `eval` misclassified by k-NN over `train`. With
/// `leave_one_out`, eval must be train and each point is excluded from its
/// own neighborhood.
inline double error_rate(const Metric& metric, const Dataset& train, const Dataset& eval, int k = 3,
                         bool leave_one_out = false) {
  if (eval.size() == 0) detail::fail("error_rate: empty evaluation set");
  const auto pred = knn_predict_all(metric, train, eval, k, leave_one_out);
  Index wrong = 0;
  for (Index i = 0; i < eval.size(); ++i)
    if (pred[static_cast<std::size_t>(i)] != eval.label(i)) ++wrong;
  return static_cast<double>(wrong) / static_cast<double>(eval.size());
}

// ---------------------------------------------------------------------------
// Regularization selection
// ---------------------------------------------------------------------------

template <typename Model>
struct BetaSelection {
  double beta = 0.0;
  Model model;
  double validation_error = 0.0;
  std::vector<std::pair<double, double>> grid_errors;  // (beta, validation error)
};

/// Fits one model per beta and keeps the lowest validation error; ties go to
/// the larger (sparser) beta.
template <typename Fit, typename Score>
auto select_beta(std::span<const double> grid, Fit&& fit, Score&& score) {
  using Model = std::decay_t<decltype(fit(0.0))>;
  if (grid.empty()) detail::fail("select_beta: empty grid");
  std::optional<BetaSelection<Model>> best;
  std::vector<std::pair<double, double>> errors;
  for (double beta : grid) {
    Model model = fit(beta);
    const double err = score(model);
    errors.emplace_back(beta, err);
    if (!best || err < best->validation_error || (err == best->validation_error && beta > best->beta))
      best = BetaSelection<Model>{beta, std::move(model), err, {}};
  }
  best->grid_errors = std::move(errors);
  return std::move(*best);
}

}  // namespace scml

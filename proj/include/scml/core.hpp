#pragma once

// Data model and composed-metric distances shared by every other module.
//
// A metric is M = sum_i w_i b_i b_i^T with w >= 0 and unit-norm basis rows
// b_i.  Everything below evaluates distances through basis projections; the
// D x D matrix is only ever materialized by compose_metric().

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace scml {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <typename... Args>
[[noreturn]] void fail(Args&&... args) {
  std::ostringstream oss;
  (oss << ... << std::forward<Args>(args));
  throw Error(oss.str());
}

inline void require_dim(Index got, Index want, const char* what) {
  if (got != want) fail(what, ": dimension mismatch (got ", got, ", expected ", want, ")");
}

}  // namespace detail

enum class Normalization { raw, standardized };

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

/// Labeled feature matrix. Labels are dense class ids in [0, num_classes).
class Dataset {
 public:
  Dataset() = default;

  Dataset(Matrix features, std::vector<int> labels, std::vector<std::string> feature_names = {},
          Normalization state = Normalization::raw)
      : features_(std::move(features)),
        labels_(std::move(labels)),
        feature_names_(std::move(feature_names)),
        state_(state) {
    if (features_.rows() < 1 || features_.cols() < 1) detail::fail("Dataset: need n >= 1 and D >= 1");
    detail::require_dim(static_cast<Index>(labels_.size()), features_.rows(), "Dataset labels");
    if (!features_.allFinite()) detail::fail("Dataset: non-finite feature value");
    if (!feature_names_.empty())
      detail::require_dim(static_cast<Index>(feature_names_.size()), features_.cols(), "Dataset feature_names");
    int max_label = -1;
    for (int y : labels_) {
      if (y < 0) detail::fail("Dataset: negative label ", y);
      max_label = std::max(max_label, y);
    }
    num_classes_ = max_label + 1;
  }

  const Matrix& features() const noexcept { return features_; }
  const std::vector<int>& labels() const noexcept { return labels_; }
  const std::vector<std::string>& feature_names() const noexcept { return feature_names_; }
  Normalization normalization() const noexcept { return state_; }

  Index size() const noexcept { return features_.rows(); }
  Index dim() const noexcept { return features_.cols(); }
  int num_classes() const noexcept { return num_classes_; }

  auto row(Index i) const { return features_.row(i); }
  int label(Index i) const { return labels_[static_cast<std::size_t>(i)]; }

  /// Rows picked by `indices`, in that order. The class-id range is kept so
  /// subsets of one dataset stay label-compatible.
  Dataset subset(std::span<const Index> indices) const {
    Matrix x(static_cast<Index>(indices.size()), dim());
    std::vector<int> y(indices.size());
    for (std::size_t r = 0; r < indices.size(); ++r) {
      if (indices[r] < 0 || indices[r] >= size()) detail::fail("Dataset::subset: index out of range");
      x.row(static_cast<Index>(r)) = features_.row(indices[r]);
      y[r] = labels_[static_cast<std::size_t>(indices[r])];
    }
    Dataset out(std::move(x), std::move(y), feature_names_, state_);
    out.num_classes_ = num_classes_;
    return out;
  }

  /// Same labels, new features (used after normalization / projection).
  Dataset with_features(Matrix features, Normalization state, std::vector<std::string> names = {}) const {
    Dataset out(std::move(features), labels_, std::move(names), state);
    out.num_classes_ = num_classes_;
    return out;
  }

  std::vector<Index> class_counts() const {
    std::vector<Index> counts(static_cast<std::size_t>(num_classes_), 0);
    for (int y : labels_) ++counts[static_cast<std::size_t>(y)];
    return counts;
  }

 private:
  Matrix features_;
  std::vector<int> labels_;
  std::vector<std::string> feature_names_;
  Normalization state_ = Normalization::raw;
  int num_classes_ = 0;
};

// ---------------------------------------------------------------------------
// BasisSet
// ---------------------------------------------------------------------------

struct BasisProvenance {
  int region = -1;
  int j_level = 0;
  int rank = 0;  // discriminant rank within its local FDA run

  friend bool operator==(const BasisProvenance&, const BasisProvenance&) = default;
};

/// K unit-norm directions b_i (rows of `vectors`), each defining the rank-one
/// metric b_i b_i^T.
class BasisSet {
 public:
  static constexpr double kNormTolerance = 1e-9;

  BasisSet() = default;

  explicit BasisSet(Matrix vectors, std::vector<BasisProvenance> provenance = {})
      : vectors_(std::move(vectors)), provenance_(std::move(provenance)) {
    if (vectors_.rows() < 1 || vectors_.cols() < 1) detail::fail("BasisSet: need K >= 1 and D >= 1");
    if (provenance_.empty()) provenance_.resize(static_cast<std::size_t>(vectors_.rows()));
    detail::require_dim(static_cast<Index>(provenance_.size()), vectors_.rows(), "BasisSet provenance");
    for (Index i = 0; i < vectors_.rows(); ++i) {
      const double norm = vectors_.row(i).norm();
      if (!std::isfinite(norm) || std::abs(norm - 1.0) > kNormTolerance)
        detail::fail("BasisSet: row ", i, " has norm ", norm, ", expected 1");
    }
  }

  const Matrix& vectors() const noexcept { return vectors_; }
  const std::vector<BasisProvenance>& provenance() const noexcept { return provenance_; }
  Index size() const noexcept { return vectors_.rows(); }
  Index dim() const noexcept { return vectors_.cols(); }

  /// n x K matrix of projections b_i^T x for every row x of `points`.
  Matrix project(const Matrix& points) const {
    detail::require_dim(points.cols(), dim(), "BasisSet::project");
    return points * vectors_.transpose();
  }

  BasisSet take(std::span<const Index> rows) const {
    Matrix v(static_cast<Index>(rows.size()), dim());
    std::vector<BasisProvenance> prov(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      v.row(static_cast<Index>(r)) = vectors_.row(rows[r]);
      prov[r] = provenance_[static_cast<std::size_t>(rows[r])];
    }
    return BasisSet(std::move(v), std::move(prov));
  }

  /// Concatenation, e.g. the union of per-task bases.
  static BasisSet concat(std::span<const BasisSet> sets) {
    if (sets.empty()) detail::fail("BasisSet::concat: no sets");
    Index total = 0;
    for (const auto& s : sets) {
      detail::require_dim(s.dim(), sets.front().dim(), "BasisSet::concat");
      total += s.size();
    }
    Matrix v(total, sets.front().dim());
    std::vector<BasisProvenance> prov;
    prov.reserve(static_cast<std::size_t>(total));
    Index at = 0;
    for (const auto& s : sets) {
      v.middleRows(at, s.size()) = s.vectors();
      prov.insert(prov.end(), s.provenance().begin(), s.provenance().end());
      at += s.size();
    }
    return BasisSet(std::move(v), std::move(prov));
  }

 private:
  Matrix vectors_;
  std::vector<BasisProvenance> provenance_;
};

// ---------------------------------------------------------------------------
// Weights, triplets
// ---------------------------------------------------------------------------

/// Nonnegative combination weights over a basis.
class WeightVector {
 public:
  WeightVector() = default;
  explicit WeightVector(Vector w) : w_(std::move(w)) {
    for (Index i = 0; i < w_.size(); ++i)
      if (!(w_[i] >= 0.0)) detail::fail("WeightVector: entry ", i, " = ", w_[i], " is not >= 0");
  }
  static WeightVector zeros(Index k) { return WeightVector(Vector::Zero(k)); }

  const Vector& values() const noexcept { return w_; }
  Index size() const noexcept { return w_.size(); }
  double operator[](Index i) const { return w_[i]; }
  Index nnz() const { return (w_.array() > 0.0).count(); }

 private:
  Vector w_;
};

struct Triplet {
  Index anchor = 0;
  Index target = 0;
  Index impostor = 0;

  friend bool operator==(const Triplet&, const Triplet&) = default;
};

/// Cached squared basis projections of triplet differences:
///   p(r, i) = (b_i^T (x_a - x_t))^2,  q(r, i) = (b_i^T (x_a - x_k))^2.
/// Rows are triplets. d_w(x_a, x_t) = <w, p(r,:)>, d_w(x_a, x_k) = <w, q(r,:)>.
struct TripletFeatures {
  RowMatrix p;
  RowMatrix q;
  std::vector<Index> anchors;

  Index size() const noexcept { return p.rows(); }
  Index num_bases() const noexcept { return p.cols(); }
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// M = sum_i w_i b_i b_i^T. Diagnostics only; training never builds M.
inline Matrix compose_metric(const WeightVector& w, const BasisSet& basis) {
  detail::require_dim(w.size(), basis.size(), "compose_metric");
  const Matrix& b = basis.vectors();
  Matrix m = b.transpose() * w.values().asDiagonal() * b;
  return 0.5 * (m + m.transpose());
}

/// sum_i w_i (b_i^T (x - x'))^2
template <typename DerivedA, typename DerivedB>
double dist_global(const WeightVector& w, const BasisSet& basis, const Eigen::MatrixBase<DerivedA>& x,
                   const Eigen::MatrixBase<DerivedB>& x_prime) {
  detail::require_dim(w.size(), basis.size(), "dist_global weights");
  detail::require_dim(x.size(), basis.dim(), "dist_global x");
  detail::require_dim(x_prime.size(), basis.dim(), "dist_global x'");
  const Vector diff = x.derived().reshaped() - x_prime.derived().reshaped();
  const Vector proj = basis.vectors() * diff;
  return w.values().dot(proj.cwiseAbs2());
}

inline TripletFeatures triplet_features(const Dataset& data, const BasisSet& basis,
                                        std::span<const Triplet> triplets) {
  detail::require_dim(data.dim(), basis.dim(), "triplet_features");
  const Index n = data.size();
  for (const auto& t : triplets) {
    if (t.anchor < 0 || t.anchor >= n || t.target < 0 || t.target >= n || t.impostor < 0 || t.impostor >= n)
      detail::fail("triplet_features: triplet index out of range (n = ", n, ")");
  }
  // Project every point once; a difference of projections equals the
  // projection of the difference.
  const Matrix proj = basis.project(data.features());
  TripletFeatures f;
  const auto m = static_cast<Index>(triplets.size());
  f.p.resize(m, basis.size());
  f.q.resize(m, basis.size());
  f.anchors.resize(triplets.size());
  for (Index r = 0; r < m; ++r) {
    const Triplet& t = triplets[static_cast<std::size_t>(r)];
    f.p.row(r) = (proj.row(t.anchor) - proj.row(t.target)).cwiseAbs2();
    f.q.row(r) = (proj.row(t.anchor) - proj.row(t.impostor)).cwiseAbs2();
    f.anchors[static_cast<std::size_t>(r)] = t.anchor;
  }
  return f;
}

/// 1 + <w, p_r> - <w, q_r>; the triplet is active when this is > 0.
template <typename DerivedW>
double triplet_margin(const Eigen::MatrixBase<DerivedW>& w, const TripletFeatures& f, Index r) {
  return 1.0 + (f.p.row(r) - f.q.row(r)).dot(w.derived().transpose());
}

/// [1 + <w,p> - <w,q>]_+ for triplet row `r`.
inline double hinge_triplet_loss(const WeightVector& w, const TripletFeatures& f, Index r) {
  detail::require_dim(w.size(), f.num_bases(), "hinge_triplet_loss");
  if (r < 0 || r >= f.size()) detail::fail("hinge_triplet_loss: row out of range");
  return std::max(0.0, triplet_margin(w.values(), f, r));
}

/// Mean hinge loss over all triplets.
inline double mean_hinge_loss(const Vector& w, const TripletFeatures& f) {
  detail::require_dim(w.size(), f.num_bases(), "mean_hinge_loss");
  if (f.size() == 0) return 0.0;
  const Vector margins = (Vector::Ones(f.size()) + f.p * w) - f.q * w;
  return margins.cwiseMax(0.0).mean();
}

}  // namespace scml

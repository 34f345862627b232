#pragma once

// PCA preprocessing and the RBF kernel-PCA embedding that drives the local
// metric tensor.

#include "scml/core.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <vector>

namespace scml {

namespace detail {

/// Flip each column so its largest-magnitude entry is positive.
inline void canonical_signs(Matrix& columns) {
  for (Index c = 0; c < columns.cols(); ++c) {
    Index arg = 0;
    columns.col(c).cwiseAbs().maxCoeff(&arg);
    if (columns(arg, c) < 0.0) columns.col(c) = -columns.col(c);
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// PCA
// ---------------------------------------------------------------------------

struct PcaModel {
  Vector mean;
  Matrix components;  // D' x D, orthonormal rows, decreasing variance
  Vector variances;   // per component

  Index input_dim() const noexcept { return components.cols(); }
  Index output_dim() const noexcept { return components.rows(); }
};

inline PcaModel pca_fit(const Matrix& x, Index out_dim) {
  const Index n = x.rows(), d = x.cols();
  if (out_dim < 1 || out_dim > std::min(n, d))
    detail::fail("pca_fit: output dimension ", out_dim, " outside [1, min(n, D) = ", std::min(n, d), "]");
  PcaModel model;
  model.mean = x.colwise().mean().transpose();
  const Matrix centered = x.rowwise() - model.mean.transpose();
  const Matrix cov = centered.transpose() * centered / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  if (eig.info() != Eigen::Success) detail::fail("pca_fit: eigendecomposition failed");
  Matrix top = eig.eigenvectors().rightCols(out_dim).rowwise().reverse();
  detail::canonical_signs(top);
  model.components = top.transpose();
  model.variances = eig.eigenvalues().tail(out_dim).reverse().cwiseMax(0.0);
  return model;
}

template <typename Derived>
Vector pca_transform(const PcaModel& model, const Eigen::MatrixBase<Derived>& x) {
  detail::require_dim(x.size(), model.input_dim(), "pca_transform");
  return model.components * (x.derived().reshaped() - model.mean);
}

inline Matrix pca_transform_rows(const PcaModel& model, const Matrix& x) {
  detail::require_dim(x.cols(), model.input_dim(), "pca_transform_rows");
  return (x.rowwise() - model.mean.transpose()) * model.components.transpose();
}

// ---------------------------------------------------------------------------
// Median heuristic
// ---------------------------------------------------------------------------

/// Median of all n(n-1)/2 pairwise Euclidean distances; the mean of the two
/// middle values when the count is even.
inline double median_bandwidth(const Matrix& x) {
  const Index n = x.rows();
  if (n < 2) detail::fail("median_bandwidth: need at least 2 rows");
  std::vector<double> dist;
  dist.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j) dist.push_back((x.row(i) - x.row(j)).norm());
  const std::size_t mid = dist.size() / 2;
  std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid), dist.end());
  double median = dist[mid];
  if (dist.size() % 2 == 0) {
    const double below = *std::max_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid));
    median = 0.5 * (below + median);
  }
  if (!(median > 0.0)) detail::fail("median_bandwidth: median pairwise distance is 0");
  return median;
}

// ---------------------------------------------------------------------------
// Kernel PCA
// ---------------------------------------------------------------------------

/// k(x, x') = exp(-||x - x'||^2 / (2 sigma^2))
struct RbfKernel {
  double sigma = 1.0;

  template <typename A, typename B>
  double operator()(const Eigen::MatrixBase<A>& x, const Eigen::MatrixBase<B>& y) const {
    return std::exp(-(x - y).squaredNorm() / (2.0 * sigma * sigma));
  }
};

struct KpcaModel {
  Matrix train_points;
  double sigma = 1.0;
  Matrix alphas;          // n x D' coefficients on centered kernel rows
  Vector eigenvalues;     // of the centered Gram matrix, decreasing
  Vector gram_row_means;  // n
  double gram_mean = 0.0;
  Matrix train_embedding;  // n x D'
  bool truncated = false;  // fewer positive eigenvalues than requested

  Index output_dim() const noexcept { return alphas.cols(); }
  Index input_dim() const noexcept { return train_points.cols(); }
};

inline Matrix rbf_gram(const Matrix& x, double sigma) {
  const Index n = x.rows();
  Matrix k(n, n);
  const Vector sq = x.rowwise().squaredNorm();
  const Matrix inner = x * x.transpose();
  const double scale = 1.0 / (2.0 * sigma * sigma);
  for (Index j = 0; j < n; ++j) {
    k(j, j) = 1.0;
    for (Index i = j + 1; i < n; ++i) {
      const double d2 = std::max(0.0, sq[i] + sq[j] - 2.0 * inner(i, j));
      k(i, j) = k(j, i) = std::exp(-d2 * scale);
    }
  }
  return k;
}

/// Fits an RBF kernel-PCA embedding with the usual normalization
/// alpha_k = v_k / sqrt(lambda_k), so training point i maps to
/// sqrt(lambda_k) v_k[i] and component k has variance lambda_k / n. If the centered Gram
/// matrix has fewer than `out_dim` positive eigenvalues the output dimension
/// is truncated and `truncated` is set.
inline KpcaModel kpca_fit(const Matrix& x, Index out_dim, double sigma) {
  const Index n = x.rows();
  if (!(sigma > 0.0)) detail::fail("kpca_fit: bandwidth must be positive");
  if (out_dim < 1 || out_dim > n) detail::fail("kpca_fit: output dimension ", out_dim, " outside [1, n = ", n, "]");

  KpcaModel model;
  model.train_points = x;
  model.sigma = sigma;
  Matrix gram = rbf_gram(x, sigma);
  model.gram_row_means = gram.rowwise().mean();
  model.gram_mean = model.gram_row_means.mean();
  gram.rowwise() -= model.gram_row_means.transpose();
  gram.colwise() -= model.gram_row_means;
  gram.array() += model.gram_mean;

  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram);
  if (eig.info() != Eigen::Success) detail::fail("kpca_fit: eigendecomposition failed");
  const Vector evals = eig.eigenvalues().reverse();
  const double tol = 1e-10 * std::max(evals[0], 1.0);
  Index keep = 0;
  while (keep < out_dim && evals[keep] > tol) ++keep;
  if (keep == 0) detail::fail("kpca_fit: centered Gram matrix has no positive eigenvalue");
  model.truncated = keep < out_dim;

  Matrix vecs = eig.eigenvectors().rightCols(keep).rowwise().reverse();
  detail::canonical_signs(vecs);
  model.eigenvalues = evals.head(keep);
  const Vector root_lambda = model.eigenvalues.cwiseSqrt();
  model.alphas = vecs * root_lambda.cwiseInverse().asDiagonal();
  model.train_embedding = vecs * root_lambda.asDiagonal();
  return model;
}

/// Embeds every row of `x`.
inline Matrix kpca_transform_rows(const KpcaModel& model, const Matrix& x) {
  detail::require_dim(x.cols(), model.input_dim(), "kpca_transform_rows");
  const Index n = model.train_points.rows();
  const Vector sq_train = model.train_points.rowwise().squaredNorm();
  const Vector sq_x = x.rowwise().squaredNorm();
  Matrix k = x * model.train_points.transpose();  // rows: query, cols: train
  const double scale = 1.0 / (2.0 * model.sigma * model.sigma);
  for (Index i = 0; i < k.rows(); ++i)
    for (Index j = 0; j < n; ++j) k(i, j) = std::exp(-std::max(0.0, sq_x[i] + sq_train[j] - 2.0 * k(i, j)) * scale);
  const Vector row_means = k.rowwise().mean();
  k.colwise() -= row_means;
  k.rowwise() -= model.gram_row_means.transpose();
  k.array() += model.gram_mean;
  return k * model.alphas;
}

template <typename Derived>
Vector kpca_transform(const KpcaModel& model, const Eigen::MatrixBase<Derived>& x) {
  detail::require_dim(x.size(), model.input_dim(), "kpca_transform");
  const Matrix row = x.derived().reshaped().transpose();
  return kpca_transform_rows(model, row).row(0).transpose();
}

}  // namespace scml

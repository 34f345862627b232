#pragma once

// Synthetic labeled data for tests and demos: Gaussian blobs, an XOR-style
// mixture whose discriminative direction changes across the space, and a
// family of classification tasks sharing one discriminative subspace.

#include "scml/core.hpp"
#include "scml/random.hpp"

#include <cmath>
#include <numbers>
#include <vector>

namespace scml::synthetic {

/// Standard normal draw (Box-Muller) from the portable generator.
inline double normal(Rng& rng) {
  double u1 = rng.uniform();
  while (u1 <= 0.0) u1 = rng.uniform();
  const double u2 = rng.uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

inline Vector normal_vector(Rng& rng, Index d) {
  Vector v(d);
  for (Index i = 0; i < d; ++i) v[i] = normal(rng);
  return v;
}

/// n points per class around the given means with isotropic noise `sigma`.
inline Dataset gaussian_blobs(const Matrix& means, Index per_class, double sigma, std::uint64_t seed) {
  Rng rng(seed);
  const Index c = means.rows(), d = means.cols();
  Matrix x(c * per_class, d);
  std::vector<int> y(static_cast<std::size_t>(c * per_class));
  for (Index k = 0; k < c; ++k)
    for (Index i = 0; i < per_class; ++i) {
      const Index r = k * per_class + i;
      x.row(r) = means.row(k) + sigma * normal_vector(rng, d).transpose();
      y[static_cast<std::size_t>(r)] = static_cast<int>(k);
    }
  return Dataset(std::move(x), std::move(y));
}

/// XOR-style Gaussian mixture in 2D (+ `noise_dims` irrelevant unit-variance
/// coordinates). Left half (x1 near -offset): the classes are two clusters
/// split along x2 and stretched along x1. Right half (x1 near +offset): two
/// clusters split along x1 and stretched along x2. The discriminative axis
/// flips between halves, so no single linear metric suits both.
inline Dataset xor_mixture(Index n, std::uint64_t seed, Index noise_dims = 0, double offset = 6.0,
                           double gap = 1.0, double wide = 2.0, double narrow = 0.3) {
  Rng rng(seed);
  const Index d = 2 + noise_dims;
  Matrix x(n, d);
  std::vector<int> y(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const int cluster = static_cast<int>(rng.below(4));
    const int label = cluster & 1;
    const double side = (cluster & 2) ? 1.0 : -1.0;
    const double sign = label ? -1.0 : 1.0;
    if (side < 0) {
      x(i, 0) = -offset + wide * normal(rng);
      x(i, 1) = sign * gap + narrow * normal(rng);
    } else {
      x(i, 0) = offset + sign * gap + narrow * normal(rng);
      x(i, 1) = wide * normal(rng);
    }
    for (Index j = 2; j < d; ++j) x(i, j) = normal(rng);
    y[static_cast<std::size_t>(i)] = label;
  }
  return Dataset(std::move(x), std::move(y));
}

struct SharedSubspaceSpec {
  int tasks = 3;
  Index points_per_task = 2000;
  Index dim = 20;
  Index shared_dim = 4;     // rank of the common discriminative subspace
  int classes = 4;
  double separation = 2.0;  // class-mean scale inside the shared subspace
  double nuisance = 3.0;    // std of the non-discriminative high-variance directions
  Index nuisance_dims = 8;
};

/// Tasks whose class means all lie in one shared `shared_dim`-dimensional
/// subspace (task-specific arrangements), embedded in `dim` dimensions with
/// unit noise plus large-variance nuisance directions orthogonal to it.
inline std::vector<Dataset> shared_subspace_tasks(const SharedSubspaceSpec& spec, std::uint64_t seed) {
  if (spec.shared_dim + spec.nuisance_dims > spec.dim) detail::fail("shared_subspace_tasks: subspaces exceed dim");
  Rng rng(seed);
  Matrix raw(spec.dim, spec.dim);
  for (Index j = 0; j < spec.dim; ++j) raw.col(j) = normal_vector(rng, spec.dim);
  const Matrix q = Eigen::HouseholderQR<Matrix>(raw).householderQ();
  const Matrix shared = q.leftCols(spec.shared_dim);
  const Matrix nuisance = q.middleCols(spec.shared_dim, spec.nuisance_dims);

  std::vector<Dataset> out;
  for (int t = 0; t < spec.tasks; ++t) {
    Matrix means(spec.classes, spec.shared_dim);
    for (int c = 0; c < spec.classes; ++c) means.row(c) = spec.separation * normal_vector(rng, spec.shared_dim).transpose();
    Matrix x(spec.points_per_task, spec.dim);
    std::vector<int> y(static_cast<std::size_t>(spec.points_per_task));
    for (Index i = 0; i < spec.points_per_task; ++i) {
      const int c = static_cast<int>(i % spec.classes);
      Vector p = shared * means.row(c).transpose() + normal_vector(rng, spec.dim);
      p += spec.nuisance * (nuisance * normal_vector(rng, spec.nuisance_dims));
      x.row(i) = p.transpose();
      y[static_cast<std::size_t>(i)] = c;
    }
    out.emplace_back(std::move(x), std::move(y));
  }
  return out;
}

}  // namespace scml::synthetic

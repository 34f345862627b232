#pragma once

// Shared helpers for the test suites: random instances and an independent
// projected-gradient minimizer used as an oracle for the closed-form steps.

#include "scml/core.hpp"
#include "scml/random.hpp"
#include "scml/synthetic.hpp"

#include <cmath>
#include <functional>
#include <vector>

namespace scml::testing {

inline Vector random_vector(Rng& rng, Index d, double lo = -1.0, double hi = 1.0) {
  Vector v(d);
  for (Index i = 0; i < d; ++i) v[i] = lo + (hi - lo) * rng.uniform();
  return v;
}

inline Matrix random_matrix(Rng& rng, Index rows, Index cols, double lo = -1.0, double hi = 1.0) {
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = lo + (hi - lo) * rng.uniform();
  return m;
}

/// K random unit directions in R^D.
inline BasisSet random_basis(Rng& rng, Index k, Index d) {
  Matrix b(k, d);
  for (Index i = 0; i < k; ++i) {
    Vector v = synthetic::normal_vector(rng, d);
    b.row(i) = v.normalized().transpose();
  }
  return BasisSet(std::move(b));
}

/// Nonnegative weights with roughly `density` of the entries nonzero, the
/// shape a sparse learned solution takes.
inline WeightVector random_sparse_weights(Rng& rng, Index k, double density = 0.4) {
  Vector w = Vector::Zero(k);
  for (Index i = 0; i < k; ++i)
    if (rng.uniform() < density) w[i] = 2.0 * rng.uniform();
  return WeightVector(std::move(w));
}

/// Random triplet features: p, q >= 0 as squared projections would be.
inline TripletFeatures random_features(Rng& rng, Index rows, Index k, Index num_anchors = 1) {
  TripletFeatures f;
  f.p = random_matrix(rng, rows, k, 0.0, 1.0).cwiseAbs2();
  f.q = random_matrix(rng, rows, k, 0.0, 1.5).cwiseAbs2();
  f.anchors.resize(static_cast<std::size_t>(rows));
  for (auto& a : f.anchors) a = static_cast<Index>(rng.below(static_cast<std::uint64_t>(num_anchors)));
  return f;
}

struct OracleResult {
  Vector x;
  double value = 0.0;
  int iterations = 0;
};

/// Minimizes a smooth function by projected gradient descent, optionally onto
/// the nonnegative orthant. The step is backtracked on a local Lipschitz test
/// of the gradient, which stays reliable near the optimum where function
/// differences drown in rounding. Stops when the step falls below `step_tol`.
inline OracleResult projected_gradient(const std::function<double(const Vector&)>& f,
                                       const std::function<Vector(const Vector&)>& grad, Vector x, bool nonneg,
                                       int max_iter = 200000, double step_tol = 1e-15) {
  auto project = [&](Vector v) {
    if (nonneg) v = v.cwiseMax(0.0);
    return v;
  };
  x = project(std::move(x));
  double lr = 1.0;
  int it = 0;
  Vector g = grad(x);
  for (; it < max_iter; ++it) {
    Vector next, g_next;
    double moved = 0.0;
    bool accepted = false;
    for (int back = 0; back < 80; ++back) {
      next = project(x - lr * g);
      g_next = grad(next);
      moved = (next - x).norm();
      if (lr * (g_next - g).norm() <= moved) {
        accepted = true;
        break;
      }
      lr *= 0.5;
    }
    if (!accepted) break;
    x = std::move(next);
    g = std::move(g_next);
    if (moved < step_tol) break;
    lr *= 2.0;
  }
  return {x, f(x), it};
}

/// Smooth surrogate of the l2 norm, sqrt(||v||^2 + eps).
inline double smooth_norm(const Vector& v, double eps) { return std::sqrt(v.squaredNorm() + eps); }

}  // namespace scml::testing

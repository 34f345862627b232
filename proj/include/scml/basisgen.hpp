#pragma once

// Locally discriminative rank-one basis generation: cluster the data into
// regions, collect the J nearest neighbors of every region center from each
// class, and keep the Fisher discriminant directions of that neighborhood.

#include "scml/core.hpp"
#include "scml/random.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

namespace scml {

struct BasisGenConfig {
  int num_regions = 0;  // 0: derive from basis_budget (or 1 without a budget)
  std::vector<int> j_levels{10, 20, 50};
  int max_directions_per_fda = 0;  // 0: C - 1
  double scatter_ridge = 1e-6;
  std::optional<Index> basis_budget;
  std::uint64_t rng_seed = 0;
  double dedup_cos = 1.0 - 1e-6;
};

// ---------------------------------------------------------------------------
// k-means
// ---------------------------------------------------------------------------

struct KMeansResult {
  Matrix centers;
  std::vector<Index> assignment;
  int iterations = 0;
};

namespace detail {

inline Index nearest_center(const Matrix& centers, const auto& x) {
  Index best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Index c = 0; c < centers.rows(); ++c) {
    const double d = (centers.row(c) - x).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

}  // namespace detail

/// Lloyd's algorithm with k-means++ seeding. Runs until the assignment is a
/// fixed point (or max_iter sweeps).
inline KMeansResult kmeans_detailed(const Matrix& x, Index m, std::uint64_t seed, int max_iter = 300) {
  const Index n = x.rows();
  if (n == 0 || x.cols() == 0) detail::fail("kmeans: empty input");
  if (m < 1 || m > n) detail::fail("kmeans: need 1 <= m <= n (m = ", m, ", n = ", n, ")");

  Rng rng(seed);
  Matrix centers(m, x.cols());
  Vector d2 = Vector::Constant(n, std::numeric_limits<double>::infinity());
  Index first = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
  centers.row(0) = x.row(first);
  for (Index c = 1; c < m; ++c) {
    for (Index i = 0; i < n; ++i) d2[i] = std::min(d2[i], (x.row(i) - centers.row(c - 1)).squaredNorm());
    const double total = d2.sum();
    Index pick = 0;
    if (total > 0.0) {
      double u = rng.uniform() * total;
      pick = n - 1;
      for (Index i = 0; i < n; ++i) {
        if (d2[i] <= 0.0) continue;
        u -= d2[i];
        if (u < 0.0) {
          pick = i;
          break;
        }
      }
      // Guard against rounding landing on an already chosen point.
      while (d2[pick] <= 0.0 && pick > 0) --pick;
    } else {
      pick = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
    }
    centers.row(c) = x.row(pick);
  }

  KMeansResult out;
  out.assignment.assign(static_cast<std::size_t>(n), -1);
  for (int iter = 0; iter < max_iter; ++iter) {
    bool changed = false;
    for (Index i = 0; i < n; ++i) {
      const Index c = detail::nearest_center(centers, x.row(i));
      if (c != out.assignment[static_cast<std::size_t>(i)]) {
        out.assignment[static_cast<std::size_t>(i)] = c;
        changed = true;
      }
    }
    out.iterations = iter + 1;
    if (!changed) break;

    Matrix sums = Matrix::Zero(m, x.cols());
    std::vector<Index> counts(static_cast<std::size_t>(m), 0);
    for (Index i = 0; i < n; ++i) {
      const Index c = out.assignment[static_cast<std::size_t>(i)];
      sums.row(c) += x.row(i);
      ++counts[static_cast<std::size_t>(c)];
    }
    for (Index c = 0; c < m; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        centers.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
        continue;
      }
      // Empty cluster: move it onto the point worst served by its center.
      Index worst = 0;
      double worst_d = -1.0;
      for (Index i = 0; i < n; ++i) {
        const double d = (x.row(i) - centers.row(out.assignment[static_cast<std::size_t>(i)])).squaredNorm();
        if (d > worst_d) {
          worst_d = d;
          worst = i;
        }
      }
      centers.row(c) = x.row(worst);
    }
  }
  out.centers = std::move(centers);
  return out;
}

inline Matrix kmeans(const Matrix& x, Index m, std::uint64_t seed) { return kmeans_detailed(x, m, seed).centers; }

// ---------------------------------------------------------------------------
// Local Fisher discriminant analysis
// ---------------------------------------------------------------------------

struct Scatter {
  Matrix between;
  Matrix within;
  int classes_present = 0;
};

inline Scatter fda_scatter(const Matrix& x, std::span<const int> y) {
  detail::require_dim(static_cast<Index>(y.size()), x.rows(), "fda_scatter labels");
  const Index d = x.cols();
  std::vector<int> classes(y.begin(), y.end());
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());

  Scatter s;
  s.classes_present = static_cast<int>(classes.size());
  s.between = Matrix::Zero(d, d);
  s.within = Matrix::Zero(d, d);
  if (x.rows() == 0) return s;
  const Vector mean = x.colwise().mean().transpose();
  for (int c : classes) {
    Vector mu = Vector::Zero(d);
    Index nc = 0;
    for (Index i = 0; i < x.rows(); ++i)
      if (y[static_cast<std::size_t>(i)] == c) {
        mu += x.row(i).transpose();
        ++nc;
      }
    mu /= static_cast<double>(nc);
    for (Index i = 0; i < x.rows(); ++i)
      if (y[static_cast<std::size_t>(i)] == c) {
        const Vector r = x.row(i).transpose() - mu;
        s.within.noalias() += r * r.transpose();
      }
    const Vector dm = mu - mean;
    s.between.noalias() += static_cast<double>(nc) * dm * dm.transpose();
  }
  return s;
}

/// Leading generalized eigenvectors of S_b v = lambda (S_w + eps I) v,
/// eps = ridge * trace(S_w) / D. Each returned vector has unit l2 norm and its
/// largest-magnitude coordinate positive. Fewer than two classes present
/// yields an empty list.
inline std::vector<Vector> local_fda(const Matrix& x, std::span<const int> y, double ridge,
                                     int max_directions = 0) {
  const Scatter s = fda_scatter(x, y);
  if (s.classes_present < 2) return {};
  const Index d = x.cols();
  double eps = ridge * s.within.trace() / static_cast<double>(d);
  if (!(eps > 0.0)) eps = std::max(ridge, std::numeric_limits<double>::min());
  const Matrix regularized = s.within + eps * Matrix::Identity(d, d);

  Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> solver(s.between, regularized);
  if (solver.info() != Eigen::Success) return {};

  Index keep = std::min<Index>(s.classes_present - 1, d);
  if (max_directions > 0) keep = std::min<Index>(keep, max_directions);
  const Vector& evals = solver.eigenvalues();  // ascending
  const double top = evals[d - 1];
  std::vector<Vector> out;
  for (Index r = 0; r < keep; ++r) {
    const Index col = d - 1 - r;
    if (!(evals[col] > 1e-12 * std::max(top, 1e-300))) break;
    Vector v = solver.eigenvectors().col(col);
    const double norm = v.norm();
    if (!(norm > 0.0)) continue;
    v /= norm;
    Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0.0) v = -v;
    out.push_back(std::move(v));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Basis pipeline
// ---------------------------------------------------------------------------

namespace detail {

/// Indices of the `count` nearest rows of `x` to `center` among `candidates`,
/// ties broken by smaller index.
inline std::vector<Index> nearest_among(const Matrix& x, const Vector& center, std::vector<Index> candidates,
                                        std::size_t count) {
  std::vector<double> dist(static_cast<std::size_t>(x.rows()), 0.0);
  for (Index i : candidates) dist[static_cast<std::size_t>(i)] = (x.row(i).transpose() - center).squaredNorm();
  count = std::min(count, candidates.size());
  auto closer = [&](Index a, Index b) {
    const double da = dist[static_cast<std::size_t>(a)], db = dist[static_cast<std::size_t>(b)];
    return da < db || (da == db && a < b);
  };
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(count), candidates.end(),
                    closer);
  candidates.resize(count);
  return candidates;
}

}  // namespace detail

/// Number of regions used for a config on data with `num_classes` classes.
inline Index basis_region_count(const BasisGenConfig& cfg, int num_classes, Index n) {
  Index m = cfg.num_regions;
  if (m <= 0) {
    m = 1;
    if (cfg.basis_budget) {
      int per_fda = std::max(1, num_classes - 1);
      if (cfg.max_directions_per_fda > 0) per_fda = std::min(per_fda, cfg.max_directions_per_fda);
      const Index per_region = static_cast<Index>(cfg.j_levels.size()) * per_fda;
      m = (*cfg.basis_budget + per_region - 1) / per_region;
    }
  }
  return std::clamp<Index>(m, 1, n);
}

inline BasisSet generate_basis(const Dataset& data, const BasisGenConfig& cfg) {
  if (data.num_classes() < 2) detail::fail("generate_basis: need at least 2 classes");
  if (cfg.j_levels.empty()) detail::fail("generate_basis: j_levels must be nonempty");
  for (int j : cfg.j_levels)
    if (j < 1) detail::fail("generate_basis: J levels must be >= 1");
  if (cfg.num_regions > data.size()) detail::fail("generate_basis: num_regions exceeds n");

  const Matrix& x = data.features();
  const Index m = basis_region_count(cfg, data.num_classes(), data.size());
  const Matrix centers = kmeans(x, m, cfg.rng_seed);

  std::vector<std::vector<Index>> by_class(static_cast<std::size_t>(data.num_classes()));
  for (Index i = 0; i < data.size(); ++i) by_class[static_cast<std::size_t>(data.label(i))].push_back(i);

  // One group per (region, J), in that order.
  struct Group {
    std::vector<Vector> vectors;
    std::vector<BasisProvenance> provenance;
  };
  std::vector<Group> groups;
  std::vector<Vector> accepted;
  const int max_dirs = cfg.max_directions_per_fda > 0 ? cfg.max_directions_per_fda : data.num_classes() - 1;

  for (Index region = 0; region < m; ++region) {
    const Vector center = centers.row(region).transpose();
    for (int j : cfg.j_levels) {
      std::vector<Index> local;
      for (const auto& members : by_class) {
        if (members.empty()) continue;
        auto near = detail::nearest_among(x, center, members, static_cast<std::size_t>(j));
        local.insert(local.end(), near.begin(), near.end());
      }
      Matrix xl(static_cast<Index>(local.size()), x.cols());
      std::vector<int> yl(local.size());
      for (std::size_t r = 0; r < local.size(); ++r) {
        xl.row(static_cast<Index>(r)) = x.row(local[r]);
        yl[r] = data.label(local[r]);
      }
      Group g;
      int rank = 0;
      for (auto& v : local_fda(xl, yl, cfg.scatter_ridge, max_dirs)) {
        const bool duplicate = std::any_of(accepted.begin(), accepted.end(), [&](const Vector& a) {
          return std::abs(a.dot(v)) > cfg.dedup_cos;
        });
        if (!duplicate) {
          accepted.push_back(v);
          g.vectors.push_back(std::move(v));
          g.provenance.push_back({static_cast<int>(region), j, rank});
        }
        ++rank;
      }
      groups.push_back(std::move(g));
    }
  }

  Index supply = 0;
  for (const auto& g : groups) supply += static_cast<Index>(g.vectors.size());
  if (supply == 0) detail::fail("generate_basis: no region produced a discriminant direction");
  const Index k = cfg.basis_budget ? std::min(*cfg.basis_budget, supply) : supply;

  Matrix vectors(k, x.cols());
  std::vector<BasisProvenance> provenance;
  provenance.reserve(static_cast<std::size_t>(k));
  if (k == supply) {
    Index at = 0;
    for (const auto& g : groups)
      for (std::size_t r = 0; r < g.vectors.size(); ++r) {
        vectors.row(at++) = g.vectors[r].transpose();
        provenance.push_back(g.provenance[r]);
      }
  } else {
    // Round-robin over (region, J) groups: every group's first direction,
    // then every group's second, and so on.
    Index at = 0;
    for (std::size_t rank = 0; at < k; ++rank)
      for (const auto& g : groups) {
        if (rank >= g.vectors.size()) continue;
        vectors.row(at++) = g.vectors[rank].transpose();
        provenance.push_back(g.provenance[rank]);
        if (at == k) break;
      }
  }
  return BasisSet(std::move(vectors), std::move(provenance));
}

}  // namespace scml

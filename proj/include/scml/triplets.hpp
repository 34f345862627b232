#pragma once

// Triplet constraints from labels: for each anchor, its nearest same-label
// points (targets) crossed with its nearest different-label points (impostors).

#include "scml/core.hpp"

#include <algorithm>
#include <vector>

namespace scml {

struct TripletConfig {
  int n_targets = 3;
  int n_impostors = 10;
};

struct TripletSet {
  std::vector<Triplet> triplets;
  Index anchors_without_targets = 0;  // singleton classes
};

namespace detail {

/// Euclidean neighbors of `anchor` among `pool`, nearest first, ties by index.
inline std::vector<Index> ranked_neighbors(const Matrix& x, Index anchor, std::vector<Index> pool,
                                           std::size_t count) {
  count = std::min(count, pool.size());
  std::vector<double> dist(static_cast<std::size_t>(x.rows()));
  for (Index j : pool) dist[static_cast<std::size_t>(j)] = (x.row(anchor) - x.row(j)).squaredNorm();
  auto closer = [&](Index a, Index b) {
    const double da = dist[static_cast<std::size_t>(a)], db = dist[static_cast<std::size_t>(b)];
    return da < db || (da == db && a < b);
  };
  std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(count), pool.end(), closer);
  pool.resize(count);
  return pool;
}

}  // namespace detail

/// All (a, t, k) with t among the n_targets nearest same-label neighbors of a
/// and k among its n_impostors nearest different-label neighbors. Output is
/// ordered by anchor, then target rank, then impostor rank.
inline TripletSet generate_triplets(const Dataset& data, const TripletConfig& cfg = {}) {
  if (data.num_classes() < 2) detail::fail("generate_triplets: need at least 2 classes");
  if (cfg.n_targets < 1 || cfg.n_impostors < 1) detail::fail("generate_triplets: counts must be >= 1");
  const Matrix& x = data.features();
  const Index n = data.size();

  TripletSet out;
  out.triplets.reserve(static_cast<std::size_t>(n * cfg.n_targets * cfg.n_impostors));
  std::vector<Index> same, other;
  for (Index a = 0; a < n; ++a) {
    same.clear();
    other.clear();
    for (Index j = 0; j < n; ++j) {
      if (j == a) continue;
      (data.label(j) == data.label(a) ? same : other).push_back(j);
    }
    if (same.empty()) {
      ++out.anchors_without_targets;
      continue;
    }
    const auto targets = detail::ranked_neighbors(x, a, same, static_cast<std::size_t>(cfg.n_targets));
    const auto impostors = detail::ranked_neighbors(x, a, other, static_cast<std::size_t>(cfg.n_impostors));
    for (Index t : targets)
      for (Index k : impostors) out.triplets.push_back({a, t, k});
  }
  return out;
}

}  // namespace scml

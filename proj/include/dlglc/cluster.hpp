#pragma once

// k-means pseudo-labeling (k-means++ seeding, Lloyd iterations, restarts)
// plus clustering-quality diagnostics against hidden ground truth.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <stdexcept>
#include <vector>

#include "dlglc/matrix.hpp"
#include "dlglc/rng.hpp"

namespace dlglc {

struct ClusterAssignment {
  std::vector<std::uint64_t> ids;
  std::vector<std::uint32_t> labels;  // aligned with ids, values in [0, k)
  Matrix centroids;                   // k x dim
  double inertia = 0.0;               // total within-cluster squared distance

  std::map<std::uint64_t, std::uint32_t> as_map() const {
    std::map<std::uint64_t, std::uint32_t> m;
    for (std::size_t i = 0; i < ids.size(); ++i) m[ids[i]] = labels[i];
    return m;
  }
};

struct KmeansOptions {
  std::size_t n_init = 10;
  std::size_t max_iters = 300;
  double tol = 1e-6;
};

namespace detail {

inline double sq_dist(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

struct KmeansRun {
  std::vector<std::uint32_t> labels;
  Matrix centroids;
  double inertia = 0.0;
};

inline KmeansRun kmeans_single(const Matrix& points, std::size_t k,
                               const KmeansOptions& opts, Rng& rng) {
  const std::size_t n = points.rows;
  const std::size_t dim = points.cols;
  Matrix centroids(k, dim);

  // k-means++ seeding
  std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
  {
    const auto first = static_cast<std::size_t>(rng.next_below(n));
    std::copy(points.row(first).begin(), points.row(first).end(), centroids.row(0).begin());
    for (std::size_t c = 1; c < k; ++c) {
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        min_d2[i] = std::min(min_d2[i], sq_dist(points.row(i), centroids.row(c - 1)));
        total += min_d2[i];
      }
      std::size_t pick = 0;
      if (total > 0.0) {
        const double target = rng.next_double() * total;
        double acc = 0.0;
        pick = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
          acc += min_d2[i];
          if (acc >= target) {
            pick = i;
            break;
          }
        }
      } else {
        pick = static_cast<std::size_t>(rng.next_below(n));
      }
      std::copy(points.row(pick).begin(), points.row(pick).end(), centroids.row(c).begin());
    }
  }

  KmeansRun run;
  run.labels.assign(n, 0);
  std::vector<std::size_t> counts(k, 0);
  double prev_inertia = std::numeric_limits<double>::infinity();
  for (std::size_t iter = 0; iter < opts.max_iters; ++iter) {
    // assignment step (nearest centroid, ties to the lowest index)
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      std::uint32_t best_c = 0;
      for (std::size_t c = 0; c < k; ++c) {
        const double d = sq_dist(points.row(i), centroids.row(c));
        if (d < best) {
          best = d;
          best_c = static_cast<std::uint32_t>(c);
        }
      }
      run.labels[i] = best_c;
      inertia += best;
    }
    if (inertia > prev_inertia + 1e-10)
      throw std::logic_error("kmeans: inertia increased across an iteration");
    prev_inertia = inertia;
    run.inertia = inertia;

    // update step
    Matrix next(k, dim, 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = run.labels[i];
      ++counts[c];
      auto row = next.row(c);
      const auto p = points.row(i);
      for (std::size_t d = 0; d < dim; ++d) row[d] += p[d];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        for (auto& x : next.row(c)) x /= static_cast<double>(counts[c]);
      } else {
        // re-seed an empty cluster at the farthest point from its centroid
        std::size_t far = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double d = sq_dist(points.row(i), centroids.row(run.labels[i]));
          if (d > far_d) {
            far_d = d;
            far = i;
          }
        }
        std::copy(points.row(far).begin(), points.row(far).end(), next.row(c).begin());
      }
    }

    double shift = 0.0;
    for (std::size_t c = 0; c < k; ++c)
      shift = std::max(shift, std::sqrt(sq_dist(next.row(c), centroids.row(c))));
    centroids = std::move(next);
    if (shift < opts.tol) break;
  }

  // final assignment against the converged centroids
  double inertia = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::uint32_t best_c = 0;
    for (std::size_t c = 0; c < k; ++c) {
      const double d = sq_dist(points.row(i), centroids.row(c));
      if (d < best) {
        best = d;
        best_c = static_cast<std::uint32_t>(c);
      }
    }
    run.labels[i] = best_c;
    inertia += best;
  }
  run.inertia = inertia;
  run.centroids = std::move(centroids);
  return run;
}

}  // namespace detail

// Embeddings are L2-normalized internally so Euclidean k-means matches the
// cosine geometry of downstream scoring. Best of n_init restarts by
// inertia; each restart consumes an independent sub-seed, so results are
// deterministic in the rng state.
inline ClusterAssignment kmeans(const Matrix& embeddings,
                                const std::vector<std::uint64_t>& ids, std::size_t k,
                                Rng& rng, const KmeansOptions& opts = {}) {
  if (k < 1) throw std::invalid_argument("kmeans: k must be >= 1");
  if (embeddings.rows < k) throw std::invalid_argument("kmeans: more clusters than points");
  if (ids.size() != embeddings.rows)
    throw std::invalid_argument("kmeans: ids/embeddings size mismatch");
  if (opts.n_init < 1) throw std::invalid_argument("kmeans: n_init must be >= 1");

  Matrix points = embeddings;
  for (std::size_t i = 0; i < points.rows; ++i) {
    const double n = norm2(points.row(i));
    if (n < 1e-300) throw std::invalid_argument("kmeans: zero-norm embedding");
    for (auto& x : points.row(i)) x /= n;
  }

  const std::uint64_t base = rng.next_u64();
  detail::KmeansRun best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < opts.n_init; ++r) {
    Rng sub(derive_seed(base, r));
    auto run = detail::kmeans_single(points, k, opts, sub);
    if (run.inertia < best.inertia) best = std::move(run);
  }

  ClusterAssignment out;
  out.ids = ids;
  out.labels = std::move(best.labels);
  out.centroids = std::move(best.centroids);
  out.inertia = best.inertia;
  return out;
}

namespace detail {

inline void check_aligned_ids(const std::map<std::uint64_t, std::uint32_t>& a,
                              const std::map<std::uint64_t, std::uint32_t>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("mismatched id sets");
  auto ia = a.begin();
  auto ib = b.begin();
  for (; ia != a.end(); ++ia, ++ib)
    if (ia->first != ib->first) throw std::invalid_argument("mismatched id sets");
}

}  // namespace detail

// Fraction of samples whose cluster's majority true class matches them.
inline double purity(const std::map<std::uint64_t, std::uint32_t>& assignment,
                     const std::map<std::uint64_t, std::uint32_t>& truth) {
  detail::check_aligned_ids(assignment, truth);
  if (assignment.empty()) throw std::invalid_argument("purity: empty input");
  std::map<std::uint32_t, std::map<std::uint32_t, std::size_t>> table;
  for (const auto& [id, cluster] : assignment) table[cluster][truth.at(id)]++;
  std::size_t hits = 0;
  for (const auto& [cluster, classes] : table) {
    std::size_t mx = 0;
    for (const auto& [cls, count] : classes) mx = std::max(mx, count);
    hits += mx;
  }
  return static_cast<double>(hits) / static_cast<double>(assignment.size());
}

// Mutual information normalized by the arithmetic mean of the entropies;
// degenerate single-class inputs give 0.
inline double nmi(const std::map<std::uint64_t, std::uint32_t>& assignment,
                  const std::map<std::uint64_t, std::uint32_t>& truth) {
  detail::check_aligned_ids(assignment, truth);
  if (assignment.empty()) throw std::invalid_argument("nmi: empty input");
  const double n = static_cast<double>(assignment.size());
  std::map<std::uint32_t, std::size_t> ca, cb;
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::size_t> joint;
  for (const auto& [id, cluster] : assignment) {
    const auto cls = truth.at(id);
    ++ca[cluster];
    ++cb[cls];
    ++joint[{cluster, cls}];
  }
  auto entropy = [&](const std::map<std::uint32_t, std::size_t>& counts) {
    double h = 0.0;
    for (const auto& [v, c] : counts) {
      const double p = static_cast<double>(c) / n;
      h -= p * std::log(p);
    }
    return h;
  };
  const double ha = entropy(ca);
  const double hb = entropy(cb);
  if (ha + hb == 0.0) return 0.0;
  double mi = 0.0;
  for (const auto& [ab, c] : joint) {
    const double pab = static_cast<double>(c) / n;
    const double pa = static_cast<double>(ca[ab.first]) / n;
    const double pb = static_cast<double>(cb[ab.second]) / n;
    mi += pab * std::log(pab / (pa * pb));
  }
  return mi / ((ha + hb) / 2.0);
}

}  // namespace dlglc

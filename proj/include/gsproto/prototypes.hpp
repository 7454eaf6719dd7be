#pragma once

// Per-tile K-means over flattened primitive vectors, the clustering objective and its gradients,
// and replacement of primitives by their prototypes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "gsproto/anchoring.hpp"
#include "gsproto/error.hpp"
#include "gsproto/gaussian.hpp"
#include "gsproto/parallel.hpp"

namespace gsproto {

/// K^m = max(1, ceil(ratio * n_m)), never more than n_m.
inline std::size_t choose_k(std::size_t n_m, double ratio) {
  if (n_m == 0)
    return 0;
  if (!(ratio > 0.0) || ratio > 1.0)
    throw DomainError("choose_k: ratio must be in (0, 1], got " + std::to_string(ratio));
  const auto k = static_cast<std::size_t>(std::ceil(ratio * double(n_m) - 1e-9));
  return std::clamp<std::size_t>(k, 1, n_m);
}

/// Multiply the ratio by `decay_rate`. The result stays positive, so choose_k keeps every tile at
/// K^m >= 1.
inline double decay_ratio(double current_ratio, double decay_rate) {
  if (!(decay_rate > 0.0 && decay_rate < 1.0))
    throw DomainError("decay_ratio: rate must be in (0, 1), got " + std::to_string(decay_rate));
  if (!(current_ratio > 0.0) || current_ratio > 1.0)
    throw DomainError("decay_ratio: ratio must be in (0, 1], got " + std::to_string(current_ratio));
  return std::max(current_ratio * decay_rate, std::numeric_limits<double>::min());
}

struct WeightOptions {
  bool unweighted = false;
  double position_multiplier = 1.0;
  double std_floor = 1e-3;
};

/// Per-dimension inverse standard deviation of the rows of `vectors`.
template <typename T> VecX<T> attribute_weights(const MatX<T> &vectors, const WeightOptions &opt = {}) {
  const auto d = vectors.cols();
  VecX<T> w = VecX<T>::Ones(d);
  if (!opt.unweighted && vectors.rows() > 0) {
    for (Eigen::Index j = 0; j < d; ++j) {
      double mean = 0, sq = 0;
      for (Eigen::Index i = 0; i < vectors.rows(); ++i)
        mean += double(vectors(i, j));
      mean /= double(vectors.rows());
      for (Eigen::Index i = 0; i < vectors.rows(); ++i)
        sq += std::pow(double(vectors(i, j)) - mean, 2);
      const double sd = std::sqrt(sq / double(vectors.rows()));
      w[j] = T(1.0 / std::max(sd, opt.std_floor));
    }
  }
  for (int j = layout::kPosition; j < layout::kPosition + 3 && j < d; ++j)
    w[j] *= T(opt.position_multiplier);
  return w;
}

struct KMeansOptions {
  int max_iterations = 50;
  int restarts = 10; ///< independent K-means++ starts; the lowest objective wins
};

template <typename T> struct KMeansResult {
  MatX<T> means;                     ///< K x d
  std::vector<int> labels;           ///< n
  std::vector<double> objective;     ///< J after each assignment step
  int iterations = 0;
  bool converged = false;

  double final_objective() const { return objective.empty() ? 0.0 : objective.back(); }
};

namespace detail {

template <typename T, typename A, typename B>
double weighted_distance2(const Eigen::MatrixBase<A> &x, const Eigen::MatrixBase<B> &mu, const VecX<T> &w) {
  double s = 0;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double d = double(w[j]) * (double(x[j]) - double(mu[j]));
    s += d * d;
  }
  return s;
}

/// Nearest center per row, ties to the lower index. Returns J.
template <typename T>
double assign_nearest(const MatX<T> &x, const MatX<T> &means, const VecX<T> &w, std::vector<int> &labels,
                      std::vector<double> &dist) {
  labels.resize(std::size_t(x.rows()));
  dist.resize(std::size_t(x.rows()));
  double j_total = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (Eigen::Index k = 0; k < means.rows(); ++k) {
      const double d = weighted_distance2<T>(x.row(i), means.row(k), w);
      if (d < best) {
        best = d;
        arg = int(k);
      }
    }
    labels[std::size_t(i)] = arg;
    dist[std::size_t(i)] = best;
    j_total += best;
  }
  return j_total;
}

/// Complete `seeds` (possibly empty) to K rows by K-means++ sampling.
template <typename T>
MatX<T> kmeanspp(const MatX<T> &x, std::size_t k, const VecX<T> &w, std::mt19937_64 &rng, MatX<T> seeds) {
  const auto n = x.rows();
  MatX<T> means(Eigen::Index(k), x.cols());
  Eigen::Index have = std::min<Eigen::Index>(seeds.rows(), Eigen::Index(k));
  if (have > 0)
    means.topRows(have) = seeds.topRows(have);
  std::vector<double> d2(std::size_t(n), std::numeric_limits<double>::infinity());
  if (have == 0) {
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    means.row(0) = x.row(pick(rng));
    have = 1;
  }
  for (Eigen::Index c = 0; c < have; ++c)
    for (Eigen::Index i = 0; i < n; ++i)
      d2[std::size_t(i)] = std::min(d2[std::size_t(i)], weighted_distance2<T>(x.row(i), means.row(c), w));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (; have < Eigen::Index(k); ++have) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    Eigen::Index chosen = 0;
    if (total > 0) {
      const double target = u(rng) * total;
      double run = 0;
      chosen = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        run += d2[std::size_t(i)];
        if (run > target && d2[std::size_t(i)] > 0) {
          chosen = i;
          break;
        }
      }
      while (d2[std::size_t(chosen)] <= 0 && chosen > 0)
        --chosen;
    } else {
      std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
      chosen = pick(rng);
    }
    means.row(have) = x.row(chosen);
    for (Eigen::Index i = 0; i < n; ++i)
      d2[std::size_t(i)] = std::min(d2[std::size_t(i)], weighted_distance2<T>(x.row(i), means.row(have), w));
  }
  return means;
}

template <typename T>
KMeansResult<T> lloyd(const MatX<T> &x, MatX<T> means, const VecX<T> &w, int max_iterations) {
  KMeansResult<T> r;
  const auto k = means.rows();
  std::vector<int> labels, previous;
  std::vector<double> dist;
  for (int it = 0; it < max_iterations; ++it) {
    r.objective.push_back(assign_nearest(x, means, w, labels, dist));
    r.iterations = it + 1;
    if (labels == previous) {
      r.converged = true;
      break;
    }
    previous = labels;
    MatX<T> sum = MatX<T>::Zero(k, x.cols());
    std::vector<std::size_t> count(std::size_t(k), 0);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      sum.row(labels[std::size_t(i)]) += x.row(i);
      ++count[std::size_t(labels[std::size_t(i)])];
    }
    std::vector<bool> taken(std::size_t(x.rows()), false);
    for (Eigen::Index c = 0; c < k; ++c) {
      if (count[std::size_t(c)] > 0) {
        means.row(c) = sum.row(c) / T(count[std::size_t(c)]);
        continue;
      }
      // Empty cluster: move it onto the point farthest from its own center.
      Eigen::Index far = -1;
      for (Eigen::Index i = 0; i < x.rows(); ++i)
        if (!taken[std::size_t(i)] && (far < 0 || dist[std::size_t(i)] > dist[std::size_t(far)]))
          far = i;
      taken[std::size_t(far)] = true;
      means.row(c) = x.row(far);
    }
  }
  r.means = std::move(means);
  r.labels = std::move(labels);
  return r;
}

} // namespace detail

/// K-means on the rows of `vectors` under the weighted squared distance sum_j (w_j (x_j - mu_j))^2.
/// `init` optionally supplies starting centers; missing ones are drawn by K-means++.
template <typename T>
KMeansResult<T> kmeans_tile(const MatX<T> &vectors, std::size_t k, const VecX<T> &weights, std::uint64_t seed,
                            const KMeansOptions &opt = {}, const MatX<T> *init = nullptr) {
  const auto n = static_cast<std::size_t>(vectors.rows());
  if (k == 0 || k > n)
    throw DomainError("kmeans_tile: K = " + std::to_string(k) + " with " + std::to_string(n) + " points");
  if (weights.size() != vectors.cols())
    throw ShapeError("kmeans_tile: weight length does not match vector dimension");
  for (Eigen::Index j = 0; j < weights.size(); ++j)
    if (!(weights[j] > T(0)))
      throw DomainError("kmeans_tile: weights must be positive");
  std::mt19937_64 rng(seed);
  const MatX<T> empty(0, vectors.cols());
  const int starts = init ? 1 : std::max(1, opt.restarts);
  KMeansResult<T> best;
  for (int s = 0; s < starts; ++s) {
    auto r = detail::lloyd(vectors, detail::kmeanspp(vectors, k, weights, rng, init ? *init : empty), weights,
                           opt.max_iterations);
    if (s == 0 || r.final_objective() < best.final_objective())
      best = std::move(r);
  }
  return best;
}

/// Exactly the J of `labels`/`means` under `weights`.
template <typename T>
double clustering_objective(const MatX<T> &vectors, const MatX<T> &means, const std::vector<int> &labels,
                            const VecX<T> &weights) {
  double j = 0;
  for (Eigen::Index i = 0; i < vectors.rows(); ++i)
    j += detail::weighted_distance2<T>(vectors.row(i), means.row(labels[std::size_t(i)]), weights);
  return j;
}

struct ClusterRef {
  int tile = 0;
  int cluster = 0;
  friend bool operator==(const ClusterRef &, const ClusterRef &) = default;
};

template <typename T> struct PrototypeSet {
  std::vector<MatX<T>> means;          ///< per tile, K^m x d
  std::vector<ClusterRef> assignment;  ///< per primitive
  std::vector<std::size_t> k_per_tile; ///< K^m
  double ratio = 1.0;
  int sh_degree = 0;

  std::size_t tile_count() const { return means.size(); }
  std::size_t size() const {
    std::size_t n = 0;
    for (auto k : k_per_tile)
      n += k;
    return n;
  }
  /// Offset of each tile's first prototype in the flat (tile-major) order.
  std::vector<std::size_t> offsets() const {
    std::vector<std::size_t> off(k_per_tile.size() + 1, 0);
    for (std::size_t m = 0; m < k_per_tile.size(); ++m)
      off[m + 1] = off[m] + k_per_tile[m];
    return off;
  }
  /// Flat prototype index of every primitive.
  std::vector<std::size_t> flat_assignment() const {
    const auto off = offsets();
    std::vector<std::size_t> out(assignment.size());
    for (std::size_t i = 0; i < assignment.size(); ++i)
      out[i] = off[std::size_t(assignment[i].tile)] + std::size_t(assignment[i].cluster);
    return out;
  }
  std::vector<std::size_t> cluster_sizes() const {
    std::vector<std::size_t> n(size(), 0);
    for (auto f : flat_assignment())
      ++n[f];
    return n;
  }
};

template <typename T> void validate_prototypes(const PrototypeSet<T> &protos, std::size_t primitive_count) {
  if (protos.assignment.size() != primitive_count)
    throw ShapeError("prototype assignment covers " + std::to_string(protos.assignment.size()) +
                     " primitives, set has " + std::to_string(primitive_count));
  if (protos.k_per_tile.size() != protos.means.size())
    throw ShapeError("prototype tile count mismatch");
  for (std::size_t i = 0; i < protos.assignment.size(); ++i) {
    const auto &r = protos.assignment[i];
    if (r.tile < 0 || std::size_t(r.tile) >= protos.means.size() || r.cluster < 0 ||
        std::size_t(r.cluster) >= protos.k_per_tile[std::size_t(r.tile)])
      throw DomainError("stale prototype assignment for primitive " + std::to_string(i) + ": (" +
                        std::to_string(r.tile) + ", " + std::to_string(r.cluster) + ")");
  }
}

struct DeriveOptions {
  double ratio = 1.0;
  KMeansOptions kmeans;
  int threads = 1;
};

inline std::uint64_t tile_seed(std::uint64_t seed, std::size_t tile) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (tile + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Cluster every tile independently. With `previous`, each tile is warm-started from the means of
/// the previous clusters its members belonged to (largest groups first).
template <typename T>
PrototypeSet<T> derive_prototypes(const PrimitiveSet<T> &set, const AnchorBank<T> &bank, const VecX<T> &weights,
                                  std::uint64_t seed, const DeriveOptions &opt = {},
                                  const PrototypeSet<T> *previous = nullptr) {
  if (bank.assignment.size() != set.size())
    throw ShapeError("derive_prototypes: anchor bank covers " + std::to_string(bank.assignment.size()) +
                     " primitives, set has " + std::to_string(set.size()));
  if (previous)
    validate_prototypes(*previous, set.size());
  const int d = set.dimension();
  const MatX<T> all = to_matrix(set);
  const auto members = bank.members();
  const auto prev_flat = previous ? previous->flat_assignment() : std::vector<std::size_t>{};
  MatX<T> prev_means(0, d);
  if (previous) {
    prev_means.resize(Eigen::Index(previous->size()), d);
    const auto off = previous->offsets();
    for (std::size_t m = 0; m < previous->means.size(); ++m)
      prev_means.middleRows(Eigen::Index(off[m]), previous->means[m].rows()) = previous->means[m];
  }

  PrototypeSet<T> out;
  out.ratio = opt.ratio;
  out.sh_degree = set.sh_degree;
  out.means.assign(members.size(), MatX<T>(0, d));
  out.k_per_tile.assign(members.size(), 0);
  out.assignment.assign(set.size(), ClusterRef{});
  parallel_chunks(static_cast<int>(members.size()), resolve_threads(opt.threads), [&](int, int begin, int end) {
    for (int m = begin; m < end; ++m) {
      const auto &idx = members[std::size_t(m)];
      if (idx.empty())
        continue;
      MatX<T> x(Eigen::Index(idx.size()), d);
      for (std::size_t i = 0; i < idx.size(); ++i)
        x.row(Eigen::Index(i)) = all.row(Eigen::Index(idx[i]));
      const std::size_t k = choose_k(idx.size(), opt.ratio);
      MatX<T> init;
      if (previous) {
        std::vector<std::size_t> keys;
        for (auto i : idx)
          keys.push_back(prev_flat[i]);
        std::sort(keys.begin(), keys.end());
        std::vector<std::pair<std::size_t, std::size_t>> g; // (members in this tile, flat prototype)
        for (std::size_t i = 0; i < keys.size(); ++i) {
          if (i == 0 || keys[i] != keys[i - 1])
            g.emplace_back(0, keys[i]);
          ++g.back().first;
        }
        std::stable_sort(g.begin(), g.end(), [](const auto &a, const auto &b) { return a.first > b.first; });
        const std::size_t use = std::min(k, g.size());
        init.resize(Eigen::Index(use), d);
        for (std::size_t c = 0; c < use; ++c)
          init.row(Eigen::Index(c)) = prev_means.row(Eigen::Index(g[c].second));
      }
      const auto r = kmeans_tile(x, k, weights, tile_seed(seed, std::size_t(m)), opt.kmeans, previous ? &init : nullptr);
      out.means[std::size_t(m)] = r.means;
      out.k_per_tile[std::size_t(m)] = k;
      for (std::size_t i = 0; i < idx.size(); ++i)
        out.assignment[idx[i]] = ClusterRef{m, r.labels[i]};
    }
  });
  return out;
}

/// Subtract from every row the mean of the rows sharing its cluster, so per-cluster sums become zero.
template <typename T> MatX<T> center_within_clusters(const PrototypeSet<T> &protos, MatX<T> rows) {
  validate_prototypes(protos, std::size_t(rows.rows()));
  const auto flat = protos.flat_assignment();
  const auto sizes = protos.cluster_sizes();
  MatX<T> sum = MatX<T>::Zero(Eigen::Index(protos.size()), rows.cols());
  for (std::size_t i = 0; i < flat.size(); ++i)
    sum.row(Eigen::Index(flat[i])) += rows.row(Eigen::Index(i));
  for (std::size_t i = 0; i < flat.size(); ++i)
    rows.row(Eigen::Index(i)) -= sum.row(Eigen::Index(flat[i])) / T(sizes[flat[i]]);
  return rows;
}

/// Reset every prototype to the mean of its current members. Clusters left without members keep
/// their previous mean.
template <typename T> void update_centroids(const PrimitiveSet<T> &set, PrototypeSet<T> &protos) {
  validate_prototypes(protos, set.size());
  std::vector<MatX<T>> sum(protos.means.size());
  std::vector<std::vector<std::size_t>> count(protos.means.size());
  for (std::size_t m = 0; m < protos.means.size(); ++m) {
    sum[m] = MatX<T>::Zero(protos.means[m].rows(), protos.means[m].cols());
    count[m].assign(std::size_t(protos.means[m].rows()), 0);
  }
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto &r = protos.assignment[i];
    sum[std::size_t(r.tile)].row(r.cluster) += flatten(set.primitives[i]).transpose();
    ++count[std::size_t(r.tile)][std::size_t(r.cluster)];
  }
  for (std::size_t m = 0; m < protos.means.size(); ++m)
    for (Eigen::Index k = 0; k < protos.means[m].rows(); ++k)
      if (count[m][std::size_t(k)] > 0)
        protos.means[m].row(k) = sum[m].row(k) / T(count[m][std::size_t(k)]);
}

template <typename T> struct ClusteringLoss {
  double value = 0;
  std::vector<double> per_tile; ///< J^m
  MatX<T> grad_primitives;      ///< dL_c/dG, N x d
  std::vector<MatX<T>> grad_means;
};

/// L_c = sum_m sum_i ||w (G_{m,i} - mu_{m,r(i)})||^2 with gradients for primitives and means.
template <typename T>
ClusteringLoss<T> clustering_loss(const PrimitiveSet<T> &set, const PrototypeSet<T> &protos, const VecX<T> &weights,
                                  bool with_gradient = true) {
  validate_prototypes(protos, set.size());
  const int d = set.dimension();
  if (weights.size() != d)
    throw ShapeError("clustering_loss: weight length does not match vector dimension");
  ClusteringLoss<T> out;
  out.per_tile.assign(protos.means.size(), 0.0);
  if (with_gradient) {
    out.grad_primitives = MatX<T>::Zero(Eigen::Index(set.size()), d);
    for (const auto &mu : protos.means)
      out.grad_means.push_back(MatX<T>::Zero(mu.rows(), mu.cols()));
  }
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto &r = protos.assignment[i];
    const VecX<T> g = flatten(set.primitives[i]);
    const auto mu = protos.means[std::size_t(r.tile)].row(r.cluster);
    out.per_tile[std::size_t(r.tile)] += detail::weighted_distance2<T>(g, mu.transpose(), weights);
    if (with_gradient) {
      for (int j = 0; j < d; ++j) {
        const T v = T(2) * weights[j] * weights[j] * (g[j] - mu[j]);
        out.grad_primitives(Eigen::Index(i), j) = v;
        out.grad_means[std::size_t(r.tile)](r.cluster, j) -= v;
      }
    }
  }
  for (double j : out.per_tile)
    out.value += j;
  return out;
}

/// The prototypes as primitives, in tile-major order.
template <typename T> PrimitiveSet<T> prototypes_as_primitives(const PrototypeSet<T> &protos) {
  PrimitiveSet<T> out;
  out.sh_degree = protos.sh_degree;
  out.primitives.reserve(protos.size());
  for (std::size_t m = 0; m < protos.means.size(); ++m)
    for (Eigen::Index k = 0; k < protos.means[m].rows(); ++k) {
      auto p = unflatten<T>(protos.means[m].row(k).transpose(), protos.sh_degree);
      if (!p.is_finite())
        throw NonFiniteError("prototype (" + std::to_string(m) + ", " + std::to_string(k) + ") is not finite");
      out.primitives.push_back(std::move(p));
    }
  return out;
}

/// A new set holding one primitive per prototype; `set` is only used to check consistency.
template <typename T> PrimitiveSet<T> replace_with_prototypes(const PrimitiveSet<T> &set, const PrototypeSet<T> &protos) {
  validate_prototypes(protos, set.size());
  if (protos.sh_degree != set.sh_degree)
    throw ShapeError("replace_with_prototypes: SH degree mismatch");
  return prototypes_as_primitives(protos);
}

/// Chain a gradient on the prototypes (flat order) back to primitives through mu = mean of members.
template <typename T> MatX<T> scatter_to_members(const PrototypeSet<T> &protos, const MatX<T> &grad_prototypes) {
  if (std::size_t(grad_prototypes.rows()) != protos.size())
    throw ShapeError("scatter_to_members: gradient rows do not match prototype count");
  const auto flat = protos.flat_assignment();
  const auto sizes = protos.cluster_sizes();
  MatX<T> out(Eigen::Index(flat.size()), grad_prototypes.cols());
  for (std::size_t i = 0; i < flat.size(); ++i)
    out.row(Eigen::Index(i)) = grad_prototypes.row(Eigen::Index(flat[i])) / T(sizes[flat[i]]);
  return out;
}

/// Flip quaternions into the w >= 0 hemisphere (first non-zero component positive). Rendering is
/// unchanged; averaging for prototypes then never cancels q against -q. Returns the flipped rows.
template <typename T> std::vector<std::size_t> canonicalize_rotations(PrimitiveSet<T> &set) {
  std::vector<std::size_t> flipped;
  for (std::size_t i = 0; i < set.size(); ++i) {
    auto &q = set.primitives[i].rotation;
    for (int c = 0; c < 4; ++c) {
      if (q[c] == T(0))
        continue;
      if (q[c] < T(0)) {
        q = -q;
        flipped.push_back(i);
      }
      break;
    }
  }
  return flipped;
}

} // namespace gsproto

#pragma once

// SfM anchoring: sample M anchor points from the SfM cloud and partition primitives into tiles by
// nearest anchor (ties go to the lowest anchor index).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "gsproto/error.hpp"
#include "gsproto/gaussian.hpp"
#include "gsproto/parallel.hpp"

namespace gsproto {

/// How many anchors to draw: a fraction of the SfM points, or an explicit count.
struct AnchorAmount {
  std::variant<double, std::size_t> value = 1.0;

  static AnchorAmount fraction(double f) { return {f}; }
  static AnchorAmount count(std::size_t m) { return {m}; }

  std::size_t resolve(std::size_t q) const {
    if (const auto *f = std::get_if<double>(&value)) {
      if (!(*f > 0.0) || *f > 1.0)
        throw DomainError("anchor fraction must be in (0, 1], got " + std::to_string(*f));
      return static_cast<std::size_t>(std::llround(*f * double(q)));
    }
    return std::get<std::size_t>(value);
  }
};

/// Uniform sample without replacement, deterministic for a given seed. Order is the sampling order.
template <typename T>
std::vector<Vec3<T>> sample_anchors(const std::vector<Vec3<T>> &sfm_points, AnchorAmount amount, std::uint64_t seed) {
  const std::size_t q = sfm_points.size();
  if (q == 0)
    throw DomainError("sample_anchors: no SfM points");
  const std::size_t m = amount.resolve(q);
  if (m == 0)
    throw DomainError("sample_anchors: zero anchors requested");
  if (m > q)
    throw DomainError("sample_anchors: requested " + std::to_string(m) + " anchors from " + std::to_string(q) +
                      " points");
  std::vector<std::size_t> idx(q);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t k = 0; k < m; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, q - 1);
    std::swap(idx[k], idx[pick(rng)]);
  }
  std::vector<Vec3<T>> out;
  out.reserve(m);
  for (std::size_t k = 0; k < m; ++k)
    out.push_back(sfm_points[idx[k]]);
  return out;
}

template <typename T> struct AnchorBank {
  std::vector<Vec3<T>> anchors;
  std::vector<int> assignment;         ///< tile of each primitive
  std::vector<std::size_t> tile_sizes; ///< n_m

  std::size_t tile_count() const { return anchors.size(); }

  /// Primitive indices of each tile, ascending.
  std::vector<std::vector<std::size_t>> members() const {
    std::vector<std::vector<std::size_t>> out(anchors.size());
    for (std::size_t i = 0; i < assignment.size(); ++i)
      out[static_cast<std::size_t>(assignment[i])].push_back(i);
    return out;
  }
};

namespace detail {

template <typename T> T squared_distance(const Vec3<T> &a, const Vec3<T> &b) {
  const T dx = a.x() - b.x(), dy = a.y() - b.y(), dz = a.z() - b.z();
  return dx * dx + dy * dy + dz * dz;
}

/// Strict-weak "better" for (distance, index) candidates.
template <typename T> bool closer(T d, int idx, T best_d, int best_idx) {
  return d < best_d || (d == best_d && idx < best_idx);
}

/// Uniform grid over the anchor bounding box with exact nearest-neighbour queries.
template <typename T> class AnchorGrid {
public:
  explicit AnchorGrid(const std::vector<Vec3<T>> &anchors) : anchors_(anchors) {
    lo_ = hi_ = anchors.front();
    for (const auto &a : anchors) {
      lo_ = lo_.cwiseMin(a);
      hi_ = hi_.cwiseMax(a);
    }
    const Vec3<T> extent = (hi_ - lo_).cwiseMax(T(1e-9));
    // About two anchors per cell.
    const double cells = std::max(1.0, double(anchors.size()) / 2.0);
    const double vol = double(extent.x()) * double(extent.y()) * double(extent.z());
    const double side = std::cbrt(vol / cells);
    for (int a = 0; a < 3; ++a) {
      dims_[a] = std::clamp(static_cast<int>(std::ceil(double(extent[a]) / side)), 1, 256);
      cell_[a] = extent[a] / T(dims_[a]);
    }
    cells_.assign(std::size_t(dims_[0]) * std::size_t(dims_[1]) * std::size_t(dims_[2]), {});
    for (int k = 0; k < static_cast<int>(anchors.size()); ++k) {
      const auto c = cell_of(anchors[std::size_t(k)]);
      cells_[flat(c[0], c[1], c[2])].push_back(k);
    }
  }

  int nearest(const Vec3<T> &p) const {
    const auto c = cell_of(p);
    T best_d = std::numeric_limits<T>::infinity();
    int best = -1;
    const int max_ring = std::max({dims_[0], dims_[1], dims_[2]});
    for (int ring = 0; ring <= max_ring; ++ring) {
      if (best >= 0 && ring > 0) {
        const T bound = distance_outside_box(p, c, ring - 1);
        if (bound * bound > best_d)
          break;
      }
      for_ring(c, ring, [&](int x, int y, int z) {
        if (cell_distance2(p, x, y, z) > best_d)
          return;
        for (int k : cells_[flat(x, y, z)]) {
          const T d = squared_distance(p, anchors_[std::size_t(k)]);
          if (closer(d, k, best_d, best)) {
            best_d = d;
            best = k;
          }
        }
      });
    }
    return best;
  }

private:
  std::array<int, 3> cell_of(const Vec3<T> &p) const {
    std::array<int, 3> c;
    for (int a = 0; a < 3; ++a)
      c[a] = std::clamp(static_cast<int>(std::floor((p[a] - lo_[a]) / cell_[a])), 0, dims_[a] - 1);
    return c;
  }
  std::size_t flat(int x, int y, int z) const {
    return (std::size_t(z) * std::size_t(dims_[1]) + std::size_t(y)) * std::size_t(dims_[0]) + std::size_t(x);
  }
  T cell_distance2(const Vec3<T> &p, int x, int y, int z) const {
    const int idx[3] = {x, y, z};
    T s = 0;
    for (int a = 0; a < 3; ++a) {
      const T lo = lo_[a] + cell_[a] * T(idx[a]);
      const T hi = lo + cell_[a];
      const T d = p[a] < lo ? lo - p[a] : (p[a] > hi ? p[a] - hi : T(0));
      s += d * d;
    }
    // Slightly shrink so rounding in the box bounds never prunes a true candidate.
    return s * T(0.999);
  }
  /// Lower bound on the distance from p to any cell outside the Chebyshev box of radius r around c.
  T distance_outside_box(const Vec3<T> &p, const std::array<int, 3> &c, int r) const {
    T bound = std::numeric_limits<T>::infinity();
    for (int a = 0; a < 3; ++a) {
      const int lo_cell = c[a] - r, hi_cell = c[a] + r;
      if (lo_cell > 0) {
        const T face = lo_[a] + cell_[a] * T(lo_cell);
        bound = std::min(bound, std::max(T(0), p[a] - face));
      }
      if (hi_cell < dims_[a] - 1) {
        const T face = lo_[a] + cell_[a] * T(hi_cell + 1);
        bound = std::min(bound, std::max(T(0), face - p[a]));
      }
    }
    return bound * T(0.999);
  }
  template <typename Fn> void for_ring(const std::array<int, 3> &c, int r, Fn &&fn) const {
    for (int z = std::max(0, c[2] - r); z <= std::min(dims_[2] - 1, c[2] + r); ++z)
      for (int y = std::max(0, c[1] - r); y <= std::min(dims_[1] - 1, c[1] + r); ++y)
        for (int x = std::max(0, c[0] - r); x <= std::min(dims_[0] - 1, c[0] + r); ++x) {
          const int cheb = std::max({std::abs(x - c[0]), std::abs(y - c[1]), std::abs(z - c[2])});
          if (cheb == r)
            fn(x, y, z);
        }
  }

  const std::vector<Vec3<T>> &anchors_;
  Vec3<T> lo_, hi_;
  std::array<int, 3> dims_{};
  Vec3<T> cell_;
  std::vector<std::vector<int>> cells_;
};

} // namespace detail

/// O(N * M) scan; ties go to the smallest anchor index.
template <typename T>
std::vector<int> nearest_anchor_brute_force(const std::vector<Vec3<T>> &positions,
                                            const std::vector<Vec3<T>> &anchors) {
  std::vector<int> out(positions.size(), -1);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    T best_d = std::numeric_limits<T>::infinity();
    for (int k = 0; k < static_cast<int>(anchors.size()); ++k) {
      const T d = detail::squared_distance(positions[i], anchors[std::size_t(k)]);
      if (detail::closer(d, k, best_d, out[i])) {
        best_d = d;
        out[i] = k;
      }
    }
  }
  return out;
}

template <typename T>
std::vector<int> nearest_anchor(const std::vector<Vec3<T>> &positions, const std::vector<Vec3<T>> &anchors,
                                int threads = 1) {
  if (anchors.empty())
    throw DomainError("assign_tiles: no anchors");
  if (anchors.size() <= 16)
    return nearest_anchor_brute_force(positions, anchors);
  const detail::AnchorGrid<T> grid(anchors);
  std::vector<int> out(positions.size());
  parallel_chunks(static_cast<int>(positions.size()), resolve_threads(threads), [&](int, int begin, int end) {
    for (int i = begin; i < end; ++i)
      out[std::size_t(i)] = grid.nearest(positions[std::size_t(i)]);
  });
  return out;
}

template <typename T> std::vector<Vec3<T>> positions_of(const PrimitiveSet<T> &set) {
  std::vector<Vec3<T>> out;
  out.reserve(set.size());
  for (const auto &p : set.primitives)
    out.push_back(p.position);
  return out;
}

/// Assign every primitive to the tile of its nearest anchor.
template <typename T>
AnchorBank<T> assign_tiles(const PrimitiveSet<T> &set, std::vector<Vec3<T>> anchors, int threads = 1) {
  AnchorBank<T> bank;
  bank.assignment = nearest_anchor(positions_of(set), anchors, threads);
  bank.anchors = std::move(anchors);
  bank.tile_sizes.assign(bank.anchors.size(), 0);
  for (int m : bank.assignment)
    ++bank.tile_sizes[std::size_t(m)];
  return bank;
}

/// One gradient step on the anchors: each moves against the mean position gradient of its members.
/// `position_grad` holds dL/d(position) per primitive. Empty tiles stay put.
template <typename T>
std::vector<Vec3<T>> finetune_anchors(const AnchorBank<T> &bank, const std::vector<Vec3<T>> &position_grad, T lr) {
  if (position_grad.size() != bank.assignment.size())
    throw ShapeError("finetune_anchors: gradient count does not match assignment");
  std::vector<Vec3<T>> sum(bank.anchors.size(), Vec3<T>::Zero());
  for (std::size_t i = 0; i < position_grad.size(); ++i)
    sum[std::size_t(bank.assignment[i])] += position_grad[i];
  std::vector<Vec3<T>> out = bank.anchors;
  for (std::size_t m = 0; m < out.size(); ++m)
    if (bank.tile_sizes[m] > 0)
      out[m] -= lr * sum[m] / T(bank.tile_sizes[m]);
  return out;
}

} // namespace gsproto

#pragma once

// Multi-view scene bundles, a synthetic scene generator, and primitive initialization from points.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "gsproto/error.hpp"
#include "gsproto/gaussian.hpp"
#include "gsproto/image.hpp"
#include "gsproto/renderer.hpp"

namespace gsproto {

template <typename T> struct SceneBundle {
  std::vector<Camera<T>> cameras;
  std::vector<Image<T>> images;
  std::vector<Vec3<T>> sfm_points;
  std::vector<Vec3<T>> sfm_colors; ///< empty, or one RGB in [0,1] per point
  std::vector<std::size_t> train;
  std::vector<std::size_t> holdout;
  Vec3<T> background = Vec3<T>::Zero();

  void validate() const {
    if (cameras.size() != images.size())
      throw ShapeError("scene: " + std::to_string(cameras.size()) + " cameras but " + std::to_string(images.size()) +
                       " images");
    for (std::size_t i = 0; i < cameras.size(); ++i) {
      validate_camera(cameras[i]);
      if (images[i].width != cameras[i].width || images[i].height != cameras[i].height)
        throw ShapeError("scene: image " + std::to_string(i) + " does not match its camera size");
    }
    if (!sfm_colors.empty() && sfm_colors.size() != sfm_points.size())
      throw ShapeError("scene: SfM colour count does not match point count");
    std::vector<char> used(cameras.size(), 0);
    for (const auto *list : {&train, &holdout})
      for (auto v : *list) {
        if (v >= cameras.size())
          throw DomainError("scene: split index " + std::to_string(v) + " out of range");
        if (used[v]++)
          throw DomainError("scene: view " + std::to_string(v) + " appears twice in the split");
      }
  }

  /// 1.1 x the largest distance of a camera center from their mean.
  T camera_extent() const {
    if (cameras.empty())
      return T(1);
    Vec3<T> mean = Vec3<T>::Zero();
    for (const auto &c : cameras)
      mean += c.center();
    mean /= T(cameras.size());
    T r = 0;
    for (const auto &c : cameras)
      r = std::max(r, (c.center() - mean).norm());
    return T(1.1) * std::max(r, T(1e-6));
  }
};

/// Evenly spaced holdout views, the rest for training.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_views(std::size_t views,
                                                                                 double holdout_fraction) {
  const auto count = std::min(views, static_cast<std::size_t>(std::llround(holdout_fraction * double(views))));
  std::vector<char> hold(views, 0);
  for (std::size_t k = 0; k < count && views > 0; ++k)
    hold[(k * views) / count + views / (2 * count)] = 1;
  std::pair<std::vector<std::size_t>, std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < views; ++i)
    (hold[i] ? out.second : out.first).push_back(i);
  return out;
}

struct SyntheticSpec {
  int primitive_count = 600;
  double extent = 1.0; ///< primitives lie within this radius of the origin
  int view_count = 20;
  int image_size = 64;
  double holdout_fraction = 0.1;
  int sfm_count = 100;
  double sfm_noise = 0.01;
  int sh_degree = 0;
  double camera_distance = 3.5;
  double focal_factor = 1.2; ///< focal length in units of image width
  int blobs = 5;
  double min_scale = 0.03, max_scale = 0.1; ///< fractions of `extent`
  Vec3<double> background = Vec3<double>::Zero();
};

/// Ring of cameras around the origin with alternating elevation.
template <typename T> std::vector<Camera<T>> ring_cameras(const SyntheticSpec &spec) {
  std::vector<Camera<T>> cams;
  for (int k = 0; k < spec.view_count; ++k) {
    const double az = 2.0 * std::numbers::pi * k / std::max(1, spec.view_count);
    const double el = (k % 2 == 0) ? 0.45 : -0.15;
    const Vec3<T> eye(T(spec.camera_distance * std::cos(el) * std::cos(az)),
                      T(spec.camera_distance * std::cos(el) * std::sin(az)), T(spec.camera_distance * std::sin(el)));
    cams.push_back(Camera<T>::look_at(spec.image_size, spec.image_size, T(spec.focal_factor * spec.image_size), eye,
                                      Vec3<T>::Zero()));
  }
  return cams;
}

template <typename T> struct SyntheticScene {
  PrimitiveSet<T> ground_truth;
  SceneBundle<T> bundle;
};

/// Primitives on the surfaces of a few ellipsoidal blobs with smoothly varying colour, views on a
/// ring, images rendered by the splatting renderer, and jittered primitive centers as SfM points.
template <typename T> SyntheticScene<T> generate_synthetic_scene(const SyntheticSpec &spec, std::uint64_t seed) {
  if (spec.primitive_count < 1 || spec.view_count < 1 || spec.image_size < 1)
    throw DomainError("synthetic scene: counts and image size must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0), u01(0.0, 1.0);
  std::normal_distribution<double> n01(0.0, 1.0);

  struct Blob {
    Vec3<double> center, radii, freq, phase, base;
  };
  std::vector<Blob> blobs;
  const int nb = std::max(1, spec.blobs);
  for (int b = 0; b < nb; ++b) {
    Blob bl;
    bl.center = 0.45 * spec.extent * Vec3<double>(u(rng), u(rng), u(rng));
    bl.radii = spec.extent * Vec3<double>(0.2 + 0.2 * u01(rng), 0.2 + 0.2 * u01(rng), 0.2 + 0.2 * u01(rng));
    bl.freq = Vec3<double>(1 + 3 * u01(rng), 1 + 3 * u01(rng), 1 + 3 * u01(rng)) / spec.extent;
    bl.phase = 2 * std::numbers::pi * Vec3<double>(u01(rng), u01(rng), u01(rng));
    bl.base = Vec3<double>(0.2 + 0.6 * u01(rng), 0.2 + 0.6 * u01(rng), 0.2 + 0.6 * u01(rng));
    blobs.push_back(bl);
  }

  SyntheticScene<T> out;
  out.ground_truth.sh_degree = spec.sh_degree;
  const double log_lo = std::log(spec.min_scale * spec.extent), log_hi = std::log(spec.max_scale * spec.extent);
  for (int i = 0; i < spec.primitive_count; ++i) {
    const auto &bl = blobs[std::size_t(i % nb)];
    Vec3<double> dir(n01(rng), n01(rng), n01(rng));
    dir.normalize();
    const Vec3<double> pos = bl.center + bl.radii.cwiseProduct(dir);
    Vec3<double> rgb;
    for (int c = 0; c < 3; ++c)
      rgb[c] = std::clamp(bl.base[c] + 0.3 * std::sin(bl.freq[c] * pos[(c + 1) % 3] * 3 + bl.phase[c]), 0.02, 0.98);
    const Vec3<double> scale(std::exp(log_lo + (log_hi - log_lo) * u01(rng)),
                             std::exp(log_lo + (log_hi - log_lo) * u01(rng)),
                             std::exp(log_lo + (log_hi - log_lo) * u01(rng)));
    Vec4<double> q(n01(rng), n01(rng), n01(rng), n01(rng));
    q.normalize();
    auto p = make_primitive<T>(pos.cast<T>(), scale.cast<T>(), T(0.6 + 0.35 * u01(rng)), rgb.cast<T>(),
                               spec.sh_degree, q.cast<T>());
    for (int k = 1; k < sh::coeff_count(spec.sh_degree); ++k)
      p.sh_coeffs[std::size_t(k)] = Vec3<T>(T(0.05 * u(rng)), T(0.05 * u(rng)), T(0.05 * u(rng)));
    out.ground_truth.primitives.push_back(std::move(p));
  }

  auto &b = out.bundle;
  b.background = spec.background.cast<T>();
  b.cameras = ring_cameras<T>(spec);
  RenderOptions<T> ro;
  ro.background = b.background;
  for (const auto &cam : b.cameras)
    b.images.push_back(render(out.ground_truth, cam, ro).pixels);
  std::tie(b.train, b.holdout) = split_views(b.cameras.size(), spec.holdout_fraction);

  std::vector<std::size_t> idx(out.ground_truth.size());
  for (std::size_t i = 0; i < idx.size(); ++i)
    idx[i] = i;
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto q = std::min<std::size_t>(idx.size(), std::size_t(std::max(0, spec.sfm_count)));
  for (std::size_t k = 0; k < q; ++k) {
    const auto &p = out.ground_truth.primitives[idx[k]];
    b.sfm_points.push_back(p.position + T(spec.sfm_noise * spec.extent) *
                                            Vec3<T>(T(n01(rng)), T(n01(rng)), T(n01(rng))));
    Vec3<T> rgb;
    for (int c = 0; c < 3; ++c)
      rgb[c] = std::clamp(T(sh::kC0) * p.sh_coeffs[0][c] + T(0.5), T(0), T(1));
    b.sfm_colors.push_back(rgb);
  }
  return out;
}

struct InitOptions {
  int sh_degree = 0;
  int random_points = 0;   ///< extra points drawn uniformly in the (padded) point bounding box
  double opacity = 0.1;
  double box_padding = 0.1; ///< fraction of the box size added on each side
};

/// Isotropic primitives at the given points with scale sqrt(mean squared distance to the three
/// nearest neighbours), plus optional random points with random colours.
template <typename T>
PrimitiveSet<T> initialize_from_points(const std::vector<Vec3<T>> &points, const std::vector<Vec3<T>> &colors,
                                       const InitOptions &opt, std::uint64_t seed) {
  if (points.empty())
    throw DomainError("initialize_from_points: no points");
  if (!colors.empty() && colors.size() != points.size())
    throw ShapeError("initialize_from_points: colour count does not match point count");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::vector<Vec3<T>> pos = points;
  std::vector<Vec3<T>> rgb = colors.empty() ? std::vector<Vec3<T>>(points.size(), Vec3<T>::Constant(T(0.5))) : colors;
  Vec3<T> lo = points.front(), hi = points.front();
  for (const auto &p : points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const Vec3<T> pad = T(opt.box_padding) * (hi - lo);
  lo -= pad;
  hi += pad;
  for (int k = 0; k < opt.random_points; ++k) {
    Vec3<T> p;
    for (int a = 0; a < 3; ++a)
      p[a] = lo[a] + T(u01(rng)) * (hi[a] - lo[a]);
    pos.push_back(p);
    rgb.emplace_back(T(u01(rng)), T(u01(rng)), T(u01(rng)));
  }

  PrimitiveSet<T> set;
  set.sh_degree = opt.sh_degree;
  for (std::size_t i = 0; i < pos.size(); ++i) {
    T best[3] = {std::numeric_limits<T>::max(), std::numeric_limits<T>::max(), std::numeric_limits<T>::max()};
    for (std::size_t j = 0; j < pos.size(); ++j) {
      if (j == i)
        continue;
      T d = (pos[i] - pos[j]).squaredNorm();
      for (auto &b : best)
        if (d < b)
          std::swap(d, b);
    }
    T mean = 0;
    int cnt = 0;
    for (T b : best)
      if (b < std::numeric_limits<T>::max()) {
        mean += b;
        ++cnt;
      }
    const T dist2 = cnt > 0 ? std::max(mean / T(cnt), T(1e-7)) : T(0.01);
    const T s = std::sqrt(dist2);
    set.primitives.push_back(make_primitive<T>(pos[i], Vec3<T>::Constant(s), T(opt.opacity),
                                               rgb[i].cwiseMax(T(0)).cwiseMin(T(1)), opt.sh_degree));
  }
  return set;
}

} // namespace gsproto

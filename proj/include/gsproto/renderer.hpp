#pragma once

// CPU differentiable splatting renderer: EWA projection, global depth sort, front-to-back
// alpha compositing, and the analytic backward pass to every primitive parameter.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gsproto/gaussian.hpp"
#include "gsproto/image.hpp"
#include "gsproto/parallel.hpp"

namespace gsproto {

template <typename T> struct RenderOptions {
  Vec3<T> background = Vec3<T>::Zero();
  T low_pass = T(0.3);     ///< px^2 added to the 2D covariance diagonal
  T cutoff_sigma = T(3);   ///< splat support radius in standard deviations; inf disables truncation
  T alpha_max = T(0.99);
  T min_transmittance = T(1e-4);
  T frustum_margin = T(1.3);
  int threads = 1;
};

/// A primitive projected to the image plane.
template <typename T> struct Splat2D {
  Vec2<T> mean_px;
  Mat2<T> cov2d;
  Mat2<T> conic; ///< cov2d^{-1}
  T depth{};
  Vec3<T> color;   ///< SH color after clamping at zero
  T alpha{};       ///< sigmoid(opacity_raw)
  std::size_t source_index = 0;
  int x_begin = 0, x_end = 0, y_begin = 0, y_end = 0; ///< pixel bounding box, half-open
};

template <typename T> struct RenderedImage {
  Image<T> pixels;
  std::vector<T> transmittance; ///< per pixel, row-major
};

/// Per-primitive partials, row i laid out like flatten(primitive i).
template <typename T> struct RenderGradients {
  MatX<T> params;
  std::vector<T> mean2d_ndc_norm; ///< |dL/d(projected mean)| in NDC units, for densification
  std::vector<char> visible;
};

namespace detail {

/// Everything the backward pass needs to chain from the 2D splat back to raw parameters.
template <typename T> struct ProjectionTerms {
  Vec3<T> cam_point;  ///< t = W p + translation
  Mat3<T> rot;        ///< R(q)
  Vec3<T> scale;
  Mat3<T> cov3d;
  Eigen::Matrix<T, 2, 3> jac;  ///< perspective Jacobian at t
  Eigen::Matrix<T, 2, 3> tmat; ///< jac * W
  Vec3<T> view_dir;            ///< unit, from camera center to the primitive
  T view_dist{};
  Vec3<T> color_raw;
};

template <typename T>
std::optional<Splat2D<T>> project_primitive(const GaussianPrimitive<T> &p, std::size_t index, const Camera<T> &cam,
                                            const RenderOptions<T> &opts, ProjectionTerms<T> *terms = nullptr) {
  if (!p.is_finite())
    throw NonFiniteError("render: primitive " + std::to_string(index) + " has non-finite parameters");
  const Mat3<T> w = cam.rotation();
  const Vec3<T> t = w * p.position + cam.translation();
  if (!(t.z() > cam.near_clip))
    return std::nullopt;
  const T inv_z = T(1) / t.z();
  const T xn = t.x() * inv_z, yn = t.y() * inv_z;
  const T lim_xlo = -opts.frustum_margin * cam.cx / cam.fx;
  const T lim_xhi = opts.frustum_margin * (T(cam.width) - cam.cx) / cam.fx;
  const T lim_ylo = -opts.frustum_margin * cam.cy / cam.fy;
  const T lim_yhi = opts.frustum_margin * (T(cam.height) - cam.cy) / cam.fy;
  if (xn < lim_xlo || xn > lim_xhi || yn < lim_ylo || yn > lim_yhi)
    return std::nullopt;

  const Mat3<T> rot = rotation_matrix(p.rotation);
  const Vec3<T> scale = p.scale();
  const Mat3<T> m = rot * scale.asDiagonal();
  const Mat3<T> cov3d = m * m.transpose();
  Eigen::Matrix<T, 2, 3> jac;
  jac << cam.fx * inv_z, 0, -cam.fx * t.x() * inv_z * inv_z, //
      0, cam.fy * inv_z, -cam.fy * t.y() * inv_z * inv_z;
  const Eigen::Matrix<T, 2, 3> tmat = jac * w;
  Mat2<T> cov2d = tmat * cov3d * tmat.transpose();
  cov2d(0, 0) += opts.low_pass;
  cov2d(1, 1) += opts.low_pass;
  cov2d(0, 1) = cov2d(1, 0) = T(0.5) * (cov2d(0, 1) + cov2d(1, 0));
  const T det = cov2d.determinant();
  if (!(det > T(0)))
    return std::nullopt;

  Splat2D<T> s;
  s.mean_px = Vec2<T>(cam.fx * xn + cam.cx, cam.fy * yn + cam.cy);
  s.cov2d = cov2d;
  s.conic << cov2d(1, 1) / det, -cov2d(0, 1) / det, -cov2d(1, 0) / det, cov2d(0, 0) / det;
  s.depth = t.z();
  s.alpha = p.opacity();
  s.source_index = index;

  Vec3<T> dir = p.position - cam.center();
  const T dist = dir.norm();
  dir = dist > T(0) ? Vec3<T>(dir / dist) : Vec3<T>(0, 0, 1);
  const Vec3<T> raw = evaluate_sh_color(p, dir);
  s.color = raw.cwiseMax(T(0));

  if (std::isfinite(static_cast<double>(opts.cutoff_sigma))) {
    const T mid = T(0.5) * (cov2d(0, 0) + cov2d(1, 1));
    const T half = T(0.5) * (cov2d(0, 0) - cov2d(1, 1));
    const T lambda_max = mid + std::sqrt(half * half + cov2d(0, 1) * cov2d(0, 1));
    const T r = opts.cutoff_sigma * std::sqrt(lambda_max);
    // Pixel centers u + 0.5 inside [mean - r, mean + r].
    s.x_begin = std::max(0, static_cast<int>(std::ceil(s.mean_px.x() - r - T(0.5))));
    s.x_end = std::min(cam.width, static_cast<int>(std::floor(s.mean_px.x() + r - T(0.5))) + 1);
    s.y_begin = std::max(0, static_cast<int>(std::ceil(s.mean_px.y() - r - T(0.5))));
    s.y_end = std::min(cam.height, static_cast<int>(std::floor(s.mean_px.y() + r - T(0.5))) + 1);
  } else {
    s.x_begin = s.y_begin = 0;
    s.x_end = cam.width;
    s.y_end = cam.height;
  }
  if (s.x_begin >= s.x_end || s.y_begin >= s.y_end)
    return std::nullopt;

  if (terms) {
    terms->cam_point = t;
    terms->rot = rot;
    terms->scale = scale;
    terms->cov3d = cov3d;
    terms->jac = jac;
    terms->tmat = tmat;
    terms->view_dir = dir;
    terms->view_dist = dist;
    terms->color_raw = raw;
  }
  return s;
}

inline constexpr int kTileSize = 16;

/// Splats sorted front to back, and for every screen tile the sorted indices of splats touching it.
template <typename T> struct Binning {
  std::vector<Splat2D<T>> splats;
  int tiles_x = 0, tiles_y = 0;
  std::vector<std::vector<int>> tile_lists;
};

template <typename T>
Binning<T> bin_splats(const PrimitiveSet<T> &set, const Camera<T> &cam, const RenderOptions<T> &opts) {
  Binning<T> b;
  b.splats.reserve(set.size());
  for (std::size_t i = 0; i < set.size(); ++i)
    if (auto s = project_primitive(set.primitives[i], i, cam, opts))
      b.splats.push_back(*s);
  std::sort(b.splats.begin(), b.splats.end(), [](const Splat2D<T> &a, const Splat2D<T> &c) {
    return a.depth < c.depth || (a.depth == c.depth && a.source_index < c.source_index);
  });
  b.tiles_x = (cam.width + kTileSize - 1) / kTileSize;
  b.tiles_y = (cam.height + kTileSize - 1) / kTileSize;
  b.tile_lists.assign(std::size_t(b.tiles_x) * std::size_t(b.tiles_y), {});
  for (int k = 0; k < static_cast<int>(b.splats.size()); ++k) {
    const auto &s = b.splats[k];
    for (int ty = s.y_begin / kTileSize; ty <= (s.y_end - 1) / kTileSize; ++ty)
      for (int tx = s.x_begin / kTileSize; tx <= (s.x_end - 1) / kTileSize; ++tx)
        b.tile_lists[std::size_t(ty) * std::size_t(b.tiles_x) + std::size_t(tx)].push_back(k);
  }
  return b;
}

template <typename T> struct Contribution {
  int splat;
  T gauss;       ///< exp(power)
  T a;           ///< alpha after clamp
  T t_before;    ///< transmittance in front of this splat
  Vec2<T> delta; ///< pixel center minus splat mean
  bool clamped;
};

/// Front-to-back compositing of one pixel. Appends contributors to `out` when provided.
template <typename T>
Vec3<T> composite_pixel(const Binning<T> &b, const std::vector<int> &list, int x, int y, const RenderOptions<T> &opts,
                        T &transmittance, std::vector<Contribution<T>> *out) {
  const T px = T(x) + T(0.5), py = T(y) + T(0.5);
  const bool truncate = std::isfinite(static_cast<double>(opts.cutoff_sigma));
  const T power_floor = T(-0.5) * opts.cutoff_sigma * opts.cutoff_sigma;
  Vec3<T> c = Vec3<T>::Zero();
  T tr = T(1);
  for (int k : list) {
    const auto &s = b.splats[k];
    if (x < s.x_begin || x >= s.x_end || y < s.y_begin || y >= s.y_end)
      continue;
    const T dx = px - s.mean_px.x(), dy = py - s.mean_px.y();
    const T power = T(-0.5) * (s.conic(0, 0) * dx * dx + T(2) * s.conic(0, 1) * dx * dy + s.conic(1, 1) * dy * dy);
    if (truncate && power < power_floor)
      continue;
    const T g = std::exp(std::min(power, T(0)));
    T a = s.alpha * g;
    const bool clamped = a > opts.alpha_max;
    if (clamped)
      a = opts.alpha_max;
    const T next = tr * (T(1) - a);
    if (next < opts.min_transmittance)
      break;
    c += s.color * (a * tr);
    if (out)
      out->push_back({k, g, a, tr, Vec2<T>(dx, dy), clamped});
    tr = next;
  }
  transmittance = tr;
  return c + tr * opts.background;
}

/// dL/dq for the raw quaternion, given dL/dR for R = rotation_matrix(q).
template <typename T> Vec4<T> rotation_backward(const Vec4<T> &q_raw, const Mat3<T> &g) {
  const T n = q_raw.norm();
  const Vec4<T> q = q_raw / n;
  const T w = q[0], x = q[1], y = q[2], z = q[3];
  Vec4<T> dq;
  dq[0] = 2 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
  dq[1] = 2 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) + w * g(2, 1) -
               2 * x * g(2, 2));
  dq[2] = 2 * (-2 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) + z * g(2, 1) -
               2 * y * g(2, 2));
  dq[3] = 2 * (-2 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2 * z * g(1, 1) + y * g(1, 2) +
               x * g(2, 0) + y * g(2, 1));
  // Through q / |q|.
  return (dq - q * q.dot(dq)) / n;
}

} // namespace detail

/// Project every primitive; culled ones (behind near_clip, outside the widened frustum, or with an
/// empty footprint) are omitted. Output order follows the input.
template <typename T>
std::vector<Splat2D<T>> project(const PrimitiveSet<T> &set, const Camera<T> &cam, const RenderOptions<T> &opts = {}) {
  validate_camera(cam);
  std::vector<Splat2D<T>> out;
  for (std::size_t i = 0; i < set.size(); ++i)
    if (auto s = detail::project_primitive(set.primitives[i], i, cam, opts))
      out.push_back(*s);
  return out;
}

template <typename T>
RenderedImage<T> render(const PrimitiveSet<T> &set, const Camera<T> &cam, const RenderOptions<T> &opts = {}) {
  validate_camera(cam);
  const auto b = detail::bin_splats(set, cam, opts);
  RenderedImage<T> out;
  out.pixels = Image<T>(cam.width, cam.height);
  out.transmittance.assign(out.pixels.pixel_count(), T(1));
  parallel_chunks(b.tiles_y, resolve_threads(opts.threads), [&](int, int ty_begin, int ty_end) {
    for (int ty = ty_begin; ty < ty_end; ++ty)
      for (int tx = 0; tx < b.tiles_x; ++tx) {
        const auto &list = b.tile_lists[std::size_t(ty) * std::size_t(b.tiles_x) + std::size_t(tx)];
        const int y1 = std::min(cam.height, (ty + 1) * detail::kTileSize);
        const int x1 = std::min(cam.width, (tx + 1) * detail::kTileSize);
        for (int y = ty * detail::kTileSize; y < y1; ++y)
          for (int x = tx * detail::kTileSize; x < x1; ++x) {
            T tr;
            const Vec3<T> c = detail::composite_pixel<T>(b, list, x, y, opts, tr, nullptr);
            for (int ch = 0; ch < 3; ++ch)
              out.pixels.at(x, y, ch) = c[ch];
            out.transmittance[std::size_t(y) * std::size_t(cam.width) + std::size_t(x)] = tr;
          }
      }
  });
  return out;
}

/// Gradients of a scalar loss L with respect to every primitive parameter, given dL/d(pixel).
/// The forward pass is replayed per pixel; nothing is cached between calls.
template <typename T>
RenderGradients<T> render_backward(const PrimitiveSet<T> &set, const Camera<T> &cam, const Image<T> &dl_dpixels,
                                   const RenderOptions<T> &opts = {}) {
  validate_camera(cam);
  if (dl_dpixels.width != cam.width || dl_dpixels.height != cam.height ||
      dl_dpixels.data.size() != std::size_t(cam.width) * std::size_t(cam.height) * 3)
    throw ShapeError("render_backward: gradient image is " + std::to_string(dl_dpixels.width) + "x" +
                     std::to_string(dl_dpixels.height) + ", camera is " + std::to_string(cam.width) + "x" +
                     std::to_string(cam.height));
  const auto b = detail::bin_splats(set, cam, opts);
  const int n_splats = static_cast<int>(b.splats.size());

  // Per splat: dL/dmean (2), dL/dQ as symmetric entries (3), dL/dcolor (3), dL/dalpha (1).
  constexpr int kSlots = 9;
  const int workers = std::max(1, std::min(resolve_threads(opts.threads), b.tiles_y));
  std::vector<std::vector<T>> partial(static_cast<std::size_t>(workers),
                                      std::vector<T>(std::size_t(n_splats) * kSlots, T(0)));

  parallel_chunks(b.tiles_y, workers, [&](int worker, int ty_begin, int ty_end) {
    auto &acc = partial[static_cast<std::size_t>(worker)];
    std::vector<detail::Contribution<T>> contrib;
    for (int ty = ty_begin; ty < ty_end; ++ty)
      for (int tx = 0; tx < b.tiles_x; ++tx) {
        const auto &list = b.tile_lists[std::size_t(ty) * std::size_t(b.tiles_x) + std::size_t(tx)];
        if (list.empty())
          continue;
        const int y1 = std::min(cam.height, (ty + 1) * detail::kTileSize);
        const int x1 = std::min(cam.width, (tx + 1) * detail::kTileSize);
        for (int y = ty * detail::kTileSize; y < y1; ++y)
          for (int x = tx * detail::kTileSize; x < x1; ++x) {
            const Vec3<T> dl_dc(dl_dpixels.at(x, y, 0), dl_dpixels.at(x, y, 1), dl_dpixels.at(x, y, 2));
            if (dl_dc.isZero(T(0)))
              continue;
            contrib.clear();
            T t_final;
            detail::composite_pixel(b, list, x, y, opts, t_final, &contrib);
            // Color of everything behind the current splat, including background.
            Vec3<T> behind = t_final * opts.background;
            for (auto it = contrib.rbegin(); it != contrib.rend(); ++it) {
              const auto &s = b.splats[it->splat];
              T *slot = &acc[std::size_t(it->splat) * kSlots];
              const T w = it->a * it->t_before;
              slot[5] += w * dl_dc[0];
              slot[6] += w * dl_dc[1];
              slot[7] += w * dl_dc[2];
              if (!it->clamped) {
                const T dl_da = (it->t_before * s.color - behind / (T(1) - it->a)).dot(dl_dc);
                slot[8] += dl_da * it->gauss;
                const T dl_dpower = dl_da * s.alpha * it->gauss;
                const T dx = it->delta.x(), dy = it->delta.y();
                // power = -1/2 d^T Q d, d = pixel - mean  =>  dpower/dmean = Q d.
                slot[0] += dl_dpower * (s.conic(0, 0) * dx + s.conic(0, 1) * dy);
                slot[1] += dl_dpower * (s.conic(1, 0) * dx + s.conic(1, 1) * dy);
                slot[2] += dl_dpower * T(-0.5) * dx * dx;
                slot[3] += dl_dpower * T(-0.5) * dx * dy;
                slot[4] += dl_dpower * T(-0.5) * dy * dy;
              }
              behind += s.color * w;
            }
          }
      }
  });
  for (int wk = 1; wk < workers; ++wk)
    for (std::size_t k = 0; k < partial[0].size(); ++k)
      partial[0][k] += partial[static_cast<std::size_t>(wk)][k];
  const auto &acc = partial[0];

  RenderGradients<T> out;
  out.params = MatX<T>::Zero(static_cast<Eigen::Index>(set.size()), set.dimension());
  out.mean2d_ndc_norm.assign(set.size(), T(0));
  out.visible.assign(set.size(), 0);
  const Mat3<T> wrot = cam.rotation();
  for (int k = 0; k < n_splats; ++k) {
    const auto &s = b.splats[k];
    const std::size_t i = s.source_index;
    const auto &p = set.primitives[i];
    detail::ProjectionTerms<T> pt;
    detail::project_primitive(p, i, cam, opts, &pt);
    out.visible[i] = 1;
    const T *slot = &acc[std::size_t(k) * kSlots];
    auto row = out.params.row(static_cast<Eigen::Index>(i));

    const Vec2<T> dl_dmean(slot[0], slot[1]);
    Mat2<T> g_conic;
    g_conic << slot[2], slot[3], slot[3], slot[4];
    const Vec3<T> dl_dcolor(slot[5], slot[6], slot[7]);
    const T dl_dalpha = slot[8];
    out.mean2d_ndc_norm[i] =
        Vec2<T>(dl_dmean.x() * T(0.5) * T(cam.width), dl_dmean.y() * T(0.5) * T(cam.height)).norm();

    // Conic -> 2D covariance -> 3D covariance and projection matrix.
    const Mat2<T> g_cov2d = -s.conic * g_conic * s.conic;
    const Mat3<T> g_cov3d = pt.tmat.transpose() * g_cov2d * pt.tmat;
    const Eigen::Matrix<T, 2, 3> g_tmat = T(2) * g_cov2d * pt.tmat * pt.cov3d;
    const Eigen::Matrix<T, 2, 3> g_jac = g_tmat * wrot.transpose();

    const T tx = pt.cam_point.x(), ty = pt.cam_point.y(), tz = pt.cam_point.z();
    const T iz = T(1) / tz, iz2 = iz * iz, iz3 = iz2 * iz;
    Vec3<T> dl_dt = pt.jac.transpose() * dl_dmean;
    dl_dt.x() += g_jac(0, 2) * (-cam.fx * iz2);
    dl_dt.y() += g_jac(1, 2) * (-cam.fy * iz2);
    dl_dt.z() += g_jac(0, 0) * (-cam.fx * iz2) + g_jac(0, 2) * (T(2) * cam.fx * tx * iz3) +
                 g_jac(1, 1) * (-cam.fy * iz2) + g_jac(1, 2) * (T(2) * cam.fy * ty * iz3);
    Vec3<T> dl_dpos = wrot.transpose() * dl_dt;

    // SH color, clamped at zero per channel.
    const int degree = set.sh_degree;
    const auto basis = sh::basis<T>(degree, pt.view_dir);
    const auto dbasis = sh::basis_gradient<T>(degree, pt.view_dir);
    Vec3<T> dl_draw = dl_dcolor;
    for (int ch = 0; ch < 3; ++ch)
      if (pt.color_raw[ch] < T(0))
        dl_draw[ch] = T(0);
    Vec3<T> dl_ddir = Vec3<T>::Zero();
    for (int c = 0; c < sh::coeff_count(degree); ++c) {
      row.template segment<3>(layout::kSh + 3 * c) = (basis[c] * dl_draw).transpose();
      dl_ddir += dbasis[c] * p.sh_coeffs[c].dot(dl_draw);
    }
    if (pt.view_dist > T(0))
      dl_dpos += (dl_ddir - pt.view_dir * pt.view_dir.dot(dl_ddir)) / pt.view_dist;
    row.template segment<3>(layout::kPosition) = dl_dpos.transpose();

    // Sigma = M M^T, M = R S.
    const Mat3<T> mmat = pt.rot * pt.scale.asDiagonal();
    const Mat3<T> g_m = T(2) * g_cov3d * mmat;
    const Mat3<T> g_rot = g_m * pt.scale.asDiagonal();
    const Mat3<T> rt_gm = pt.rot.transpose() * g_m;
    for (int a = 0; a < 3; ++a)
      row[layout::kLogScale + a] = rt_gm(a, a) * pt.scale[a];
    row.template segment<4>(layout::kRotation) = detail::rotation_backward(p.rotation, g_rot).transpose();

    row[layout::kOpacity] = dl_dalpha * s.alpha * (T(1) - s.alpha);
  }
  return out;
}

/// Running screen-space gradient statistics used to decide densification.
template <typename T> struct DensifyStats {
  std::vector<T> grad_sum;
  std::vector<int> count;

  void reset(std::size_t n) {
    grad_sum.assign(n, T(0));
    count.assign(n, 0);
  }
  void add(const RenderGradients<T> &g) {
    if (grad_sum.size() != g.visible.size())
      reset(g.visible.size());
    for (std::size_t i = 0; i < g.visible.size(); ++i)
      if (g.visible[i]) {
        grad_sum[i] += g.mean2d_ndc_norm[i];
        ++count[i];
      }
  }
};

template <typename T> struct DensifyConfig {
  T grad_threshold = T(0.0002);
  T percent_dense = T(0.01);
  T scene_extent = T(1);
  T min_opacity = T(0.005);
  T split_scale_divisor = T(1.6);
  std::size_t max_primitives = std::numeric_limits<std::size_t>::max();
};

/// Indices kept, in order, plus where each new primitive came from.
struct DensifyResult {
  std::vector<std::size_t> source; ///< source[j] = index in the input set of output primitive j
  std::size_t split = 0, cloned = 0, pruned = 0;
};

/// Clone small high-gradient primitives, split large ones into two children (scale / 1.6, positions
/// drawn from the parent Gaussian), then drop primitives whose opacity is below the floor.
/// When `max_primitives` would be exceeded, only the highest-gradient candidates are densified.
template <typename T, typename Rng>
PrimitiveSet<T> densify_and_prune(const PrimitiveSet<T> &set, const DensifyStats<T> &stats, const DensifyConfig<T> &cfg,
                                  Rng &rng, DensifyResult *result = nullptr) {
  const std::size_t n = set.size();
  DensifyResult res;
  std::vector<T> mean_grad(n, T(0));
  for (std::size_t i = 0; i < n && i < stats.count.size(); ++i)
    if (stats.count[i] > 0)
      mean_grad[i] = stats.grad_sum[i] / T(stats.count[i]);

  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < n; ++i)
    if (mean_grad[i] >= cfg.grad_threshold && mean_grad[i] > T(0))
      candidates.push_back(i);
  std::sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t c) {
    return mean_grad[a] > mean_grad[c] || (mean_grad[a] == mean_grad[c] && a < c);
  });
  const std::size_t budget = cfg.max_primitives > n ? cfg.max_primitives - n : 0;
  if (candidates.size() > budget)
    candidates.resize(budget);
  std::vector<char> split(n, 0), clone(n, 0);
  const T split_limit = cfg.percent_dense * cfg.scene_extent;
  for (std::size_t i : candidates) {
    if (set.primitives[i].scale().maxCoeff() > split_limit)
      split[i] = 1;
    else
      clone[i] = 1;
  }

  PrimitiveSet<T> out;
  out.sh_degree = set.sh_degree;
  out.primitives.reserve(n + candidates.size());
  std::normal_distribution<double> normal(0.0, 1.0);
  const T log_div = std::log(cfg.split_scale_divisor);
  auto keep = [&](const GaussianPrimitive<T> &p) { return p.opacity() >= cfg.min_opacity; };
  auto emit = [&](GaussianPrimitive<T> p, std::size_t src) {
    if (!keep(p)) {
      ++res.pruned;
      return;
    }
    out.primitives.push_back(std::move(p));
    res.source.push_back(src);
  };
  std::vector<std::pair<GaussianPrimitive<T>, std::size_t>> appended;
  for (std::size_t i = 0; i < n; ++i) {
    const auto &p = set.primitives[i];
    if (split[i]) {
      ++res.split;
      const Mat3<T> rot = rotation_matrix(p.rotation);
      const Vec3<T> scale = p.scale();
      for (int child = 0; child < 2; ++child) {
        Vec3<T> z(T(normal(rng)), T(normal(rng)), T(normal(rng)));
        GaussianPrimitive<T> c = p;
        c.position = p.position + rot * scale.cwiseProduct(z);
        c.log_scale = p.log_scale.array() - log_div;
        if (child == 0)
          emit(std::move(c), i);
        else
          appended.emplace_back(std::move(c), i);
      }
      continue;
    }
    emit(p, i);
    if (clone[i]) {
      ++res.cloned;
      appended.emplace_back(p, i);
    }
  }
  for (auto &[p, src] : appended)
    emit(std::move(p), src);
  if (result)
    *result = std::move(res);
  return out;
}

} // namespace gsproto

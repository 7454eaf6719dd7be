#pragma once

// Gaussian primitive data model: parameters, activations, covariance, and the flat
// attribute vector (position first) that anchoring and clustering operate on.

#include <cmath>
#include <cstddef>
#include <limits>
#include <type_traits>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/LU>

#include "gsproto/error.hpp"
#include "gsproto/sh.hpp"

namespace gsproto {

template <typename T> using Vec2 = Eigen::Matrix<T, 2, 1>;
template <typename T> using Vec3 = Eigen::Matrix<T, 3, 1>;
template <typename T> using Vec4 = Eigen::Matrix<T, 4, 1>;
template <typename T> using Mat2 = Eigen::Matrix<T, 2, 2>;
template <typename T> using Mat3 = Eigen::Matrix<T, 3, 3>;
template <typename T> using Mat4 = Eigen::Matrix<T, 4, 4>;
template <typename T> using VecX = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T> using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T> T sigmoid(T x) { return T(1) / (T(1) + std::exp(-x)); }
template <typename T> T inverse_sigmoid(T y) { return std::log(y / (T(1) - y)); }

/// Offsets of each parameter group inside the flat attribute vector.
namespace layout {
inline constexpr int kPosition = 0;
inline constexpr int kRotation = 3;
inline constexpr int kLogScale = 7;
inline constexpr int kOpacity = 10;
inline constexpr int kSh = 11;

/// d = 3 + 4 + 3 + 1 + 3 (L+1)^2
constexpr int dimension(int sh_degree) { return kSh + 3 * sh::coeff_count(sh_degree); }
} // namespace layout

/// One anisotropic 3D Gaussian. All fields hold raw (pre-activation) values.
template <typename T> struct GaussianPrimitive {
  Vec3<T> position = Vec3<T>::Zero();
  Vec4<T> rotation = Vec4<T>(1, 0, 0, 0); ///< (w, x, y, z), not necessarily unit length
  Vec3<T> log_scale = Vec3<T>::Zero();
  T opacity_raw = T(0);
  std::vector<Vec3<T>> sh_coeffs = std::vector<Vec3<T>>(1, Vec3<T>::Zero()); ///< (L+1)^2 RGB triples

  int sh_degree() const { return static_cast<int>(std::lround(std::sqrt(double(sh_coeffs.size())))) - 1; }
  Vec3<T> scale() const { return log_scale.array().exp(); }
  T opacity() const { return sigmoid(opacity_raw); }

  bool is_finite() const {
    bool ok = position.allFinite() && rotation.allFinite() && log_scale.allFinite() && std::isfinite(opacity_raw);
    for (const auto &c : sh_coeffs)
      ok = ok && c.allFinite();
    return ok;
  }

  bool operator==(const GaussianPrimitive &) const = default;
};

/// G in R^{N x d}: primitives sharing one SH degree.
template <typename T> struct PrimitiveSet {
  std::vector<GaussianPrimitive<T>> primitives;
  int sh_degree = 0;

  std::size_t size() const { return primitives.size(); }
  bool empty() const { return primitives.empty(); }
  int dimension() const { return layout::dimension(sh_degree); }

  bool operator==(const PrimitiveSet &) const = default;
};

/// Pinhole camera. Pixel (u, v) covers [u, u+1) x [v, v+1); its center is (u + 0.5, v + 0.5).
template <typename T> struct Camera {
  int width = 0;
  int height = 0;
  T fx = 1, fy = 1, cx = 0, cy = 0;
  Mat4<T> world_to_camera = Mat4<T>::Identity();
  T near_clip = T(0.01);

  Mat3<T> rotation() const { return world_to_camera.template topLeftCorner<3, 3>(); }
  Vec3<T> translation() const { return world_to_camera.template topRightCorner<3, 1>(); }
  Vec3<T> center() const { return -rotation().transpose() * translation(); }

  /// Camera at `eye` looking at `target`; +y in camera space points down the image.
  static Camera look_at(int width, int height, T focal, const Vec3<T> &eye, const Vec3<T> &target,
                        const Vec3<T> &world_up = Vec3<T>(0, 0, 1)) {
    Camera cam;
    cam.width = width;
    cam.height = height;
    cam.fx = cam.fy = focal;
    cam.cx = T(width) / 2;
    cam.cy = T(height) / 2;
    const Vec3<T> forward = (target - eye).normalized();
    Vec3<T> right = forward.cross(world_up);
    if (right.norm() < T(1e-8))
      right = forward.cross(Vec3<T>(0, 1, 0));
    right.normalize();
    const Vec3<T> down = forward.cross(right);
    Mat3<T> r;
    r.row(0) = right.transpose();
    r.row(1) = down.transpose();
    r.row(2) = forward.transpose();
    cam.world_to_camera.setIdentity();
    cam.world_to_camera.template topLeftCorner<3, 3>() = r;
    cam.world_to_camera.template topRightCorner<3, 1>() = -r * eye;
    return cam;
  }

  bool operator==(const Camera &) const = default;
};

template <typename T> void validate_camera(const Camera<T> &cam) {
  if (cam.width <= 0 || cam.height <= 0)
    throw DomainError("camera: image size must be positive");
  if (!(cam.fx > 0) || !(cam.fy > 0))
    throw DomainError("camera: focal lengths must be positive");
  if (!(cam.near_clip > 0))
    throw DomainError("camera: near_clip must be positive");
  const Mat3<T> r = cam.rotation();
  const T tol = std::is_same_v<T, float> ? T(1e-5) : T(1e-6);
  if (((r * r.transpose()) - Mat3<T>::Identity()).cwiseAbs().maxCoeff() > tol)
    throw DomainError("camera: world_to_camera rotation block is not orthonormal");
}

/// Rotation matrix of the normalized quaternion (w, x, y, z).
template <typename T> Mat3<T> rotation_matrix(const Vec4<T> &q_raw) {
  const T n = q_raw.norm();
  if (!(n > T(0)))
    throw DegenerateError("quaternion has zero norm");
  const Vec4<T> q = q_raw / n;
  const T w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3<T> r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),  //
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),  //
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

/// Sigma = R S S^T R^T with S = diag(exp(log_scale)).
template <typename T> Mat3<T> covariance_3d(const GaussianPrimitive<T> &p) {
  const Mat3<T> m = rotation_matrix(p.rotation) * p.scale().asDiagonal();
  return m * m.transpose();
}

/// exp(-1/2 (x - h)^T Sigma^{-1} (x - h)) with h the primitive position.
template <typename T> T evaluate_gaussian(const GaussianPrimitive<T> &p, const Vec3<T> &x) {
  const T min_scale = std::is_same_v<T, float> ? T(1e-6) : T(1e-12);
  if (p.scale().minCoeff() <= min_scale || !p.scale().allFinite())
    throw DegenerateError("evaluate_gaussian: covariance is singular");
  // Sigma^{-1} = R S^{-2} R^T, so the Mahalanobis term is |S^{-1} R^T (x - h)|^2.
  const Vec3<T> local = rotation_matrix(p.rotation).transpose() * (x - p.position);
  const Vec3<T> whitened = local.cwiseQuotient(p.scale());
  return std::exp(T(-0.5) * whitened.squaredNorm());
}

/// 0.5 + sum_k Y_k(dir) c_k per channel. Not clamped; the renderer clamps at zero.
template <typename T> Vec3<T> evaluate_sh_color(const GaussianPrimitive<T> &p, const Vec3<T> &view_dir) {
  const int degree = p.sh_degree();
  const auto b = sh::basis<T>(degree, view_dir);
  Vec3<T> rgb = Vec3<T>::Constant(T(0.5));
  for (int k = 0; k < sh::coeff_count(degree); ++k)
    rgb += b[k] * p.sh_coeffs[k];
  return rgb;
}

template <typename T> VecX<T> flatten(const GaussianPrimitive<T> &p) {
  const int d = layout::dimension(p.sh_degree());
  VecX<T> v(d);
  v.template segment<3>(layout::kPosition) = p.position;
  v.template segment<4>(layout::kRotation) = p.rotation;
  v.template segment<3>(layout::kLogScale) = p.log_scale;
  v[layout::kOpacity] = p.opacity_raw;
  for (std::size_t k = 0; k < p.sh_coeffs.size(); ++k)
    v.template segment<3>(layout::kSh + 3 * static_cast<int>(k)) = p.sh_coeffs[k];
  return v;
}

template <typename T, typename Derived>
GaussianPrimitive<T> unflatten(const Eigen::MatrixBase<Derived> &v, int sh_degree) {
  const int d = layout::dimension(sh_degree);
  if (v.size() != d)
    throw ShapeError("unflatten: expected length " + std::to_string(d) + " for SH degree " +
                     std::to_string(sh_degree) + ", got " + std::to_string(v.size()));
  GaussianPrimitive<T> p;
  p.position = v.template segment<3>(layout::kPosition);
  p.rotation = v.template segment<4>(layout::kRotation);
  p.log_scale = v.template segment<3>(layout::kLogScale);
  p.opacity_raw = v[layout::kOpacity];
  p.sh_coeffs.assign(sh::coeff_count(sh_degree), Vec3<T>::Zero());
  for (int k = 0; k < sh::coeff_count(sh_degree); ++k)
    p.sh_coeffs[k] = v.template segment<3>(layout::kSh + 3 * k);
  return p;
}

/// Rows of G, one flattened primitive per row.
template <typename T> MatX<T> to_matrix(const PrimitiveSet<T> &set) {
  MatX<T> g(static_cast<Eigen::Index>(set.size()), set.dimension());
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (set.primitives[i].sh_degree() != set.sh_degree)
      throw ShapeError("primitive " + std::to_string(i) + " has a different SH degree than its set");
    g.row(static_cast<Eigen::Index>(i)) = flatten(set.primitives[i]).transpose();
  }
  return g;
}

template <typename T> PrimitiveSet<T> from_matrix(const MatX<T> &g, int sh_degree) {
  PrimitiveSet<T> set;
  set.sh_degree = sh_degree;
  set.primitives.reserve(static_cast<std::size_t>(g.rows()));
  for (Eigen::Index i = 0; i < g.rows(); ++i)
    set.primitives.push_back(unflatten<T>(g.row(i).transpose(), sh_degree));
  return set;
}

/// A primitive with zero SH rest coefficients and the DC term set so that it shows `rgb`.
template <typename T>
GaussianPrimitive<T> make_primitive(const Vec3<T> &position, const Vec3<T> &scale, T opacity, const Vec3<T> &rgb,
                                    int sh_degree = 0, const Vec4<T> &rotation = Vec4<T>(1, 0, 0, 0)) {
  GaussianPrimitive<T> p;
  p.position = position;
  p.rotation = rotation;
  p.log_scale = scale.array().log();
  p.opacity_raw = inverse_sigmoid(opacity);
  p.sh_coeffs.assign(sh::coeff_count(sh_degree), Vec3<T>::Zero());
  for (int c = 0; c < 3; ++c)
    p.sh_coeffs[0][c] = sh::rgb_to_dc(rgb[c]);
  return p;
}

template <typename To, typename From> PrimitiveSet<To> cast_set(const PrimitiveSet<From> &in) {
  PrimitiveSet<To> out;
  out.sh_degree = in.sh_degree;
  out.primitives.reserve(in.size());
  for (const auto &p : in.primitives) {
    GaussianPrimitive<To> q;
    q.position = p.position.template cast<To>();
    q.rotation = p.rotation.template cast<To>();
    q.log_scale = p.log_scale.template cast<To>();
    q.opacity_raw = static_cast<To>(p.opacity_raw);
    q.sh_coeffs.clear();
    for (const auto &c : p.sh_coeffs)
      q.sh_coeffs.push_back(c.template cast<To>());
    out.primitives.push_back(std::move(q));
  }
  return out;
}

template <typename To, typename From> Camera<To> cast_camera(const Camera<From> &in) {
  Camera<To> out;
  out.width = in.width;
  out.height = in.height;
  out.fx = static_cast<To>(in.fx);
  out.fy = static_cast<To>(in.fy);
  out.cx = static_cast<To>(in.cx);
  out.cy = static_cast<To>(in.cy);
  out.world_to_camera = in.world_to_camera.template cast<To>();
  out.near_clip = static_cast<To>(in.near_clip);
  return out;
}

} // namespace gsproto

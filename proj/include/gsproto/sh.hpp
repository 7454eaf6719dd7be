#pragma once

// Real spherical-harmonic basis up to degree 3, in the sign/ordering convention of
// the common 3D Gaussian splatting PLY files (coefficient index = l*l + l + m).

#include <array>
#include <cmath>

#include <Eigen/Core>

namespace gsproto::sh {

inline constexpr int kMaxDegree = 3;

constexpr int coeff_count(int degree) { return (degree + 1) * (degree + 1); }

inline constexpr double kC0 = 0.28209479177387814;
inline constexpr double kC1 = 0.4886025119029199;
inline constexpr std::array<double, 5> kC2 = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                                              -1.0925484305920792, 0.5462742152960396};
inline constexpr std::array<double, 7> kC3 = {-0.5900435899266435, 2.890611442640554,  -0.4570457994644658,
                                              0.3731763325901154,  -0.4570457994644658, 1.445305721320277,
                                              -0.5900435899266435};

/// Basis values Y_k(dir) for k < coeff_count(degree). Entries past that are left at zero.
template <typename T>
std::array<T, 16> basis(int degree, const Eigen::Matrix<T, 3, 1> &dir) {
  std::array<T, 16> b{};
  b[0] = T(kC0);
  if (degree < 1)
    return b;
  const T x = dir.x(), y = dir.y(), z = dir.z();
  b[1] = T(-kC1) * y;
  b[2] = T(kC1) * z;
  b[3] = T(-kC1) * x;
  if (degree < 2)
    return b;
  const T xx = x * x, yy = y * y, zz = z * z;
  b[4] = T(kC2[0]) * x * y;
  b[5] = T(kC2[1]) * y * z;
  b[6] = T(kC2[2]) * (T(2) * zz - xx - yy);
  b[7] = T(kC2[3]) * x * z;
  b[8] = T(kC2[4]) * (xx - yy);
  if (degree < 3)
    return b;
  b[9] = T(kC3[0]) * y * (T(3) * xx - yy);
  b[10] = T(kC3[1]) * x * y * z;
  b[11] = T(kC3[2]) * y * (T(4) * zz - xx - yy);
  b[12] = T(kC3[3]) * z * (T(2) * zz - T(3) * xx - T(3) * yy);
  b[13] = T(kC3[4]) * x * (T(4) * zz - xx - yy);
  b[14] = T(kC3[5]) * z * (xx - yy);
  b[15] = T(kC3[6]) * x * (xx - T(3) * yy);
  return b;
}

/// Partial derivatives dY_k/d(dir), treating dir as an unconstrained 3-vector.
template <typename T>
std::array<Eigen::Matrix<T, 3, 1>, 16> basis_gradient(int degree, const Eigen::Matrix<T, 3, 1> &dir) {
  using V = Eigen::Matrix<T, 3, 1>;
  std::array<V, 16> g;
  for (auto &v : g)
    v.setZero();
  if (degree < 1)
    return g;
  const T x = dir.x(), y = dir.y(), z = dir.z();
  const T c1 = T(kC1);
  g[1] = V(0, -c1, 0);
  g[2] = V(0, 0, c1);
  g[3] = V(-c1, 0, 0);
  if (degree < 2)
    return g;
  const T xx = x * x, yy = y * y, zz = z * z;
  g[4] = T(kC2[0]) * V(y, x, 0);
  g[5] = T(kC2[1]) * V(0, z, y);
  g[6] = T(kC2[2]) * V(-2 * x, -2 * y, 4 * z);
  g[7] = T(kC2[3]) * V(z, 0, x);
  g[8] = T(kC2[4]) * V(2 * x, -2 * y, 0);
  if (degree < 3)
    return g;
  g[9] = T(kC3[0]) * V(6 * x * y, 3 * xx - 3 * yy, 0);
  g[10] = T(kC3[1]) * V(y * z, x * z, x * y);
  g[11] = T(kC3[2]) * V(-2 * x * y, 4 * zz - xx - 3 * yy, 8 * y * z);
  g[12] = T(kC3[3]) * V(-6 * x * z, -6 * y * z, 6 * zz - 3 * xx - 3 * yy);
  g[13] = T(kC3[4]) * V(4 * zz - 3 * xx - yy, -2 * x * y, 8 * x * z);
  g[14] = T(kC3[5]) * V(2 * x * z, -2 * y * z, xx - yy);
  g[15] = T(kC3[6]) * V(3 * xx - 3 * yy, -6 * x * y, 0);
  return g;
}

/// Inverse of the DC mapping: the degree-0 coefficient that yields `rgb` (before the +0.5 offset is removed).
template <typename T> T rgb_to_dc(T rgb) { return (rgb - T(0.5)) / T(kC0); }

} // namespace gsproto::sh

#include <gsproto/gaussian.hpp>

#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>
#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

namespace gsproto {
namespace {

using P = GaussianPrimitive<double>;

P random_primitive(std::mt19937 &rng, int degree) {
  std::normal_distribution<double> n(0.0, 1.0);
  P p;
  p.position = Vec3<double>(n(rng), n(rng), n(rng));
  p.rotation = Vec4<double>(n(rng), n(rng), n(rng), n(rng));
  p.log_scale = Vec3<double>(n(rng), n(rng), n(rng)) * 0.5;
  p.opacity_raw = n(rng);
  p.sh_coeffs.assign(sh::coeff_count(degree), Vec3<double>::Zero());
  for (auto &c : p.sh_coeffs)
    c = Vec3<double>(n(rng), n(rng), n(rng)) * 0.3;
  return p;
}

TEST(Covariance, IdentityQuaternionUnitScaleIsIdentity) {
  P p;
  EXPECT_TRUE(covariance_3d(p).isApprox(Mat3<double>::Identity(), 1e-14));
}

TEST(Covariance, AxisScale) {
  P p;
  p.log_scale = Vec3<double>(std::log(2.0), 0, 0);
  EXPECT_TRUE(covariance_3d(p).isApprox(Vec3<double>(4, 1, 1).asDiagonal().toDenseMatrix(), 1e-14));
}

TEST(Covariance, QuarterTurnAboutZMatchesAngleAxisOracle) {
  P p;
  p.rotation = Vec4<double>(std::sqrt(0.5), 0, 0, std::sqrt(0.5));
  p.log_scale = Vec3<double>(std::log(2.0), 0, 0);
  // Oracle: rotation built independently of the quaternion formula.
  const Mat3<double> r = Eigen::AngleAxisd(std::numbers::pi / 2, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  const Mat3<double> s = Vec3<double>(2, 1, 1).asDiagonal();
  const Mat3<double> expected = r * s * s.transpose() * r.transpose();
  const Mat3<double> sigma = covariance_3d(p);
  EXPECT_TRUE(sigma.isApprox(expected, 1e-12));
  EXPECT_NEAR(sigma(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(sigma(1, 1), 4.0, 1e-12);
  EXPECT_NEAR(sigma(2, 2), 1.0, 1e-12);
}

TEST(Covariance, ZeroQuaternionThrows) {
  P p;
  p.rotation.setZero();
  EXPECT_THROW(covariance_3d(p), DegenerateError);
}

TEST(Covariance, RandomPrimitivesArePsdWithScaleEigenvalues) {
  std::mt19937 rng(7);
  for (int trial = 0; trial < 500; ++trial) {
    const P p = random_primitive(rng, 0);
    const Mat3<double> sigma = covariance_3d(p);
    EXPECT_TRUE(sigma.isApprox(sigma.transpose(), 1e-12));
    Eigen::LLT<Mat3<double>> llt(sigma);
    ASSERT_EQ(llt.info(), Eigen::Success);
    Eigen::SelfAdjointEigenSolver<Mat3<double>> es(sigma);
    Vec3<double> expected = (2.0 * p.log_scale).array().exp();
    std::sort(expected.data(), expected.data() + 3);
    EXPECT_TRUE(es.eigenvalues().isApprox(expected, 1e-9));
  }
}

TEST(EvaluateGaussian, CenterIsOne) {
  std::mt19937 rng(1);
  const P p = random_primitive(rng, 0);
  EXPECT_DOUBLE_EQ(evaluate_gaussian(p, p.position), 1.0);
}

TEST(EvaluateGaussian, UnitMahalanobisDistance) {
  P p;
  EXPECT_NEAR(evaluate_gaussian(p, Vec3<double>(0, 1, 0)), std::exp(-0.5), 1e-15);
}

TEST(EvaluateGaussian, AnisotropicMatchesExplicitInverse) {
  P p;
  p.log_scale = Vec3<double>(std::log(2.0), 0, 0);
  const Vec3<double> d(2, 0, 0);
  const double oracle = std::exp(-0.5 * d.dot(covariance_3d(p).inverse() * d));
  EXPECT_NEAR(evaluate_gaussian(p, d), oracle, 1e-15);
  EXPECT_NEAR(oracle, std::exp(-0.5), 1e-15);
}

TEST(EvaluateGaussian, SingularCovarianceThrows) {
  P p;
  p.log_scale = Vec3<double>(-1000, 0, 0);
  EXPECT_THROW(evaluate_gaussian(p, Vec3<double>(1, 0, 0)), DegenerateError);
}

TEST(EvaluateGaussian, RotationCovariance) {
  std::mt19937 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    P p = random_primitive(rng, 0);
    const Vec3<double> x(n(rng), n(rng), n(rng));
    const double before = evaluate_gaussian(p, x);
    const Eigen::Quaterniond q = Eigen::Quaterniond::UnitRandom();
    const Eigen::Quaterniond pq(p.rotation[0], p.rotation[1], p.rotation[2], p.rotation[3]);
    const Eigen::Quaterniond rotated = q * pq;
    p.rotation = Vec4<double>(rotated.w(), rotated.x(), rotated.y(), rotated.z());
    const Vec3<double> new_center = q * p.position;
    const Vec3<double> new_x = q * x;
    p.position = new_center;
    EXPECT_NEAR(evaluate_gaussian(p, new_x), before, 1e-10);
  }
}

TEST(Flatten, Dimensions) {
  EXPECT_EQ(layout::dimension(0), 14);
  EXPECT_EQ(layout::dimension(3), 59);
  P p;
  EXPECT_EQ(flatten(p).size(), 14);
}

TEST(Flatten, RoundTripIsBitExactAndPositionFirst) {
  std::mt19937 rng(11);
  for (int degree = 0; degree <= 3; ++degree)
    for (int trial = 0; trial < 50; ++trial) {
      const P p = random_primitive(rng, degree);
      const VecX<double> v = flatten(p);
      EXPECT_EQ(v.head<3>(), p.position);
      EXPECT_EQ(unflatten<double>(v, degree), p);
    }
}

TEST(Flatten, WrongLengthThrows) {
  VecX<double> v = VecX<double>::Zero(15);
  EXPECT_THROW(unflatten<double>(v, 0), ShapeError);
}

TEST(ShColor, DegreeZeroIsConstant) {
  P p;
  p.sh_coeffs[0] = Vec3<double>(0.7, 0.7, 0.7);
  const double expected = 0.5 + 0.7 / (2.0 * std::sqrt(std::numbers::pi));
  std::mt19937 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const Vec3<double> dir = Vec3<double>(n(rng), n(rng), n(rng)).normalized();
    const Vec3<double> rgb = evaluate_sh_color(p, dir);
    for (int c = 0; c < 3; ++c)
      EXPECT_NEAR(rgb[c], expected, 1e-15);
  }
}

TEST(ShColor, ZeroCoefficientsGiveMidGray) {
  P p;
  p.sh_coeffs.assign(16, Vec3<double>::Zero());
  EXPECT_TRUE(evaluate_sh_color(p, Vec3<double>(0, 0, 1)).isApprox(Vec3<double>::Constant(0.5)));
}

TEST(ShColor, LinearZBandDifference) {
  P p;
  p.sh_coeffs.assign(4, Vec3<double>::Zero());
  const double coeff = 0.37;
  p.sh_coeffs[2] = Vec3<double>::Constant(coeff); // l = 1, m = 0
  // Oracle: Y_1^0(theta) = sqrt(3 / 4 pi) cos(theta), evaluated at the poles.
  const double y10 = std::sqrt(3.0 / (4.0 * std::numbers::pi));
  const double diff = evaluate_sh_color(p, Vec3<double>(0, 0, 1))[0] - evaluate_sh_color(p, Vec3<double>(0, 0, -1))[0];
  EXPECT_NEAR(diff, 2.0 * y10 * coeff, 1e-14);
}

TEST(ShBasis, GradientMatchesFiniteDifferences) {
  std::mt19937 rng(9);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const Vec3<double> dir(n(rng), n(rng), n(rng));
    const auto g = sh::basis_gradient<double>(3, dir);
    for (int axis = 0; axis < 3; ++axis) {
      Vec3<double> hi = dir, lo = dir;
      hi[axis] += 1e-6;
      lo[axis] -= 1e-6;
      const auto bh = sh::basis<double>(3, hi), bl = sh::basis<double>(3, lo);
      for (int k = 0; k < 16; ++k)
        EXPECT_NEAR(g[k][axis], (bh[k] - bl[k]) / 2e-6, 1e-6);
    }
  }
}

TEST(CameraTest, LookAtIsOrthonormalAndCentered) {
  const auto cam = Camera<double>::look_at(32, 24, 40.0, Vec3<double>(3, 1, 2), Vec3<double>(0, 0, 0));
  EXPECT_NO_THROW(validate_camera(cam));
  EXPECT_TRUE(cam.center().isApprox(Vec3<double>(3, 1, 2), 1e-12));
  const Vec3<double> origin_cam = cam.rotation() * Vec3<double>::Zero() + cam.translation();
  EXPECT_NEAR(origin_cam.x(), 0.0, 1e-12);
  EXPECT_NEAR(origin_cam.y(), 0.0, 1e-12);
  EXPECT_GT(origin_cam.z(), 0.0);
}

TEST(CameraTest, InvalidCamerasRejected) {
  Camera<double> cam;
  cam.width = 8;
  cam.height = 8;
  cam.fx = 0;
  EXPECT_THROW(validate_camera(cam), DomainError);
  cam.fx = 1;
  cam.world_to_camera(0, 0) = 2;
  EXPECT_THROW(validate_camera(cam), DomainError);
}

} // namespace
} // namespace gsproto

#include <gsproto/adam.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace gsproto {
namespace {

/// Scalar reference written straight from the update rule.
struct ScalarAdam {
  double m = 0, v = 0;
  int t = 0;
  double step(double p, double g, double lr) {
    ++t;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    return p - lr * mh / (std::sqrt(vh) + 1e-15);
  }
};

TEST(Adam, ZeroGradientLeavesParametersAlone) {
  Adam<double> a;
  a.reset(3, 2);
  MatX<double> p = MatX<double>::Random(3, 2);
  const MatX<double> before = p;
  a.step(p, MatX<double>::Zero(3, 2), VecX<double>::Constant(2, 0.1));
  EXPECT_EQ(p, before);
}

TEST(Adam, ConstantGradientMovesByLearningRate) {
  Adam<double> a;
  a.reset(1, 2);
  MatX<double> p = MatX<double>::Zero(1, 2);
  MatX<double> g(1, 2);
  g << 3.0, -0.002;
  VecX<double> lr(2);
  lr << 0.1, 0.5;
  for (int k = 1; k <= 5; ++k) {
    a.step(p, g, lr);
    EXPECT_NEAR(p(0, 0), -0.1 * k * 3.0 / (3.0 + 1e-15), 1e-14);
    EXPECT_NEAR(p(0, 1), 0.5 * k * 0.002 / (0.002 + 1e-15), 1e-14);
  }
  EXPECT_EQ(a.steps(), 5);
}

TEST(Adam, MatchesScalarReference) {
  std::mt19937 rng(2);
  std::normal_distribution<double> n(0, 1);
  Adam<double> a;
  a.reset(4, 3);
  MatX<double> p = MatX<double>::Zero(4, 3);
  std::vector<ScalarAdam> ref(12);
  std::vector<double> rp(12, 0.0);
  const VecX<double> lr = VecX<double>::LinSpaced(3, 0.01, 0.03);
  for (int it = 0; it < 30; ++it) {
    MatX<double> g(4, 3);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 3; ++j) {
        g(i, j) = n(rng);
        rp[std::size_t(i * 3 + j)] = ref[std::size_t(i * 3 + j)].step(rp[std::size_t(i * 3 + j)], g(i, j), lr[j]);
      }
    a.step(p, g, lr);
  }
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j)
      EXPECT_NEAR(p(i, j), rp[std::size_t(i * 3 + j)], 1e-12);
}

TEST(Adam, ReindexCopiesRowState) {
  Adam<double> a;
  a.reset(2, 1);
  MatX<double> p = MatX<double>::Zero(2, 1);
  MatX<double> g(2, 1);
  g << 1.0, -2.0;
  a.step(p, g, VecX<double>::Constant(1, 0.1));
  a.reindex({1, 1, 0});
  ASSERT_EQ(a.rows(), 3);
  EXPECT_EQ(a.first_moment()(0, 0), a.first_moment()(1, 0));
  EXPECT_NEAR(a.first_moment()(2, 0), 0.1, 1e-15);
  EXPECT_NEAR(a.second_moment()(0, 0), 0.004, 1e-15);
  EXPECT_THROW(a.reindex({5}), ShapeError);
}

TEST(Adam, NegateFlipsSelectedColumns) {
  Adam<double> a;
  a.reset(2, 3);
  MatX<double> p = MatX<double>::Zero(2, 3);
  a.step(p, MatX<double>::Ones(2, 3), VecX<double>::Constant(3, 0.1));
  a.negate({1}, 1, 2);
  EXPECT_GT(a.first_moment()(1, 0), 0);
  EXPECT_LT(a.first_moment()(1, 1), 0);
  EXPECT_LT(a.first_moment()(1, 2), 0);
  EXPECT_GT(a.first_moment()(0, 1), 0);
}

TEST(Adam, RejectsMismatchedShapes) {
  Adam<double> a;
  a.reset(2, 2);
  MatX<double> p = MatX<double>::Zero(2, 2);
  EXPECT_THROW(a.step(p, MatX<double>::Zero(3, 2), VecX<double>::Ones(2)), ShapeError);
  EXPECT_THROW(a.step(p, MatX<double>::Zero(2, 2), VecX<double>::Ones(3)), ShapeError);
  MatX<double> q = MatX<double>::Zero(4, 2);
  EXPECT_THROW(a.step(q, MatX<double>::Zero(4, 2), VecX<double>::Ones(2)), ShapeError);
}

} // namespace
} // namespace gsproto

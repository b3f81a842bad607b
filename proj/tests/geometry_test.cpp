#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "bult/geometry.hpp"

using namespace bult;

namespace {

Position3 random_point(std::mt19937_64& rng, double half_width) {
  std::uniform_real_distribution<double> u(-half_width, half_width);
  return {u(rng), u(rng), u(rng)};
}

UnitVector3 random_direction(std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  return UnitVector3(g(rng), g(rng), g(rng));
}

}  // namespace

TEST(Geometry, UnitVectorIsNormalized) {
  const UnitVector3 e(3.0, 4.0, 12.0);
  EXPECT_NEAR(e.vec().norm(), 1.0, 1e-12);
  EXPECT_THROW(UnitVector3(0.0, 0.0, 0.0), GeometryError);
}

TEST(Geometry, CosineSpecialCases) {
  const UnitVector3 ex(1, 0, 0);
  EXPECT_NEAR(aoa_cosine({5, 0, 0}, {1, 0, 0}, ex), 1.0, 1e-15);
  EXPECT_NEAR(aoa_cosine({1, 3, 0}, {1, 0, 0}, ex), 0.0, 1e-15);
  EXPECT_NEAR(aoa_cosine({0, 20, 10}, {-10, 0, 0}, ex), 10.0 / std::sqrt(600.0), 1e-12);
}

TEST(Geometry, CoincidentPointsRejected) {
  const UnitVector3 ex(1, 0, 0);
  EXPECT_THROW(aoa_cosine({1, 2, 3}, {1, 2, 3}, ex), GeometryError);
  EXPECT_THROW(aoa_gradient({1, 2, 3}, {1, 2, 3 + 1e-10}, ex), GeometryError);
  EXPECT_THROW(aoa_hessian({0, 0, 0}, {0, 0, 0}, ex), GeometryError);
}

TEST(Geometry, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  int checked = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Position3 anchor = random_point(rng, 40.0);
    const Position3 user = random_point(rng, 40.0);
    if ((anchor - user).norm() < 1.0) continue;
    const UnitVector3 e = random_direction(rng);
    const Eigen::Vector3d g = aoa_gradient(anchor, user, e);
    const double h = 1e-5;
    for (int a = 0; a < 3; ++a) {
      Position3 up = user, dn = user;
      up[a] += h;
      dn[a] -= h;
      const double fd = (aoa_cosine(anchor, up, e) - aoa_cosine(anchor, dn, e)) / (2 * h);
      EXPECT_NEAR(g[a], fd, 1e-6 * std::max(1.0, std::abs(fd)));
    }
    ++checked;
  }
  EXPECT_GT(checked, 900);
}

TEST(Geometry, GradientIdentities) {
  const UnitVector3 ex(1, 0, 0);
  // collinear: zero gradient
  EXPECT_LT(aoa_gradient({10, 0, 0}, {0, 0, 0}, ex).norm(), 1e-15);
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const Position3 anchor = random_point(rng, 30.0);
    const Position3 user = random_point(rng, 30.0);
    const UnitVector3 e = random_direction(rng);
    const Eigen::Vector3d ei = (anchor - user).normalized();
    EXPECT_NEAR(aoa_gradient(anchor, user, e).dot(ei), 0.0, 1e-14);
    const double c = aoa_cosine(anchor, user, e);
    EXPECT_LE(std::abs(c), 1.0);
  }
}

TEST(Geometry, HessianMatchesFiniteDifferenceOfGradient) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const Position3 anchor = random_point(rng, 40.0);
    const Position3 user = random_point(rng, 40.0);
    if ((anchor - user).norm() < 1.0) continue;
    const UnitVector3 e = random_direction(rng);
    const Eigen::Matrix3d h = aoa_hessian(anchor, user, e);
    EXPECT_LT((h - h.transpose()).norm(), 1e-15);
    const double step = 1e-5;
    for (int a = 0; a < 3; ++a) {
      Position3 up = user, dn = user;
      up[a] += step;
      dn[a] -= step;
      const Eigen::Vector3d col = (aoa_gradient(anchor, up, e) - aoa_gradient(anchor, dn, e)) / (2 * step);
      for (int b = 0; b < 3; ++b) EXPECT_NEAR(h(b, a), col[b], 1e-7 * std::max(1.0, std::abs(col[b])));
    }
  }
}

TEST(Geometry, SteeringSpecialCases) {
  const CVector a0 = steering(0.0, 4);
  for (int k = 0; k < 4; ++k) EXPECT_NEAR(std::abs(a0[k] - Complex(1, 0)), 0.0, 1e-15);
  EXPECT_EQ(steering(0.3, 1).size(), 1);
  EXPECT_NEAR(std::abs(steering(0.3, 1)[0] - Complex(1, 0)), 0.0, 1e-15);
  const CVector a1 = steering(1.0, 2);
  EXPECT_NEAR(std::abs(a1[1] - Complex(-1, 0)), 0.0, 1e-15);
  EXPECT_THROW(steering(1.2, 4), GeometryError);
  EXPECT_THROW(steering(0.1, 0), DimensionError);
}

TEST(Geometry, SteeringProperties) {
  for (double th : {-0.97, -0.3, 0.0, 0.41, 0.88}) {
    for (int n : {1, 17, 64, 257}) {
      const CVector a = steering(th, n);
      const CVector b = steering(-th, n);
      EXPECT_NEAR(a.squaredNorm(), n, 1e-9 * n);
      for (int k = 0; k < n; ++k) {
        EXPECT_NEAR(std::abs(a[k]), 1.0, 1e-12);
        EXPECT_NEAR(std::abs(b[k] - std::conj(a[k])), 0.0, 1e-10);
        EXPECT_NEAR(std::abs(a[k] - std::polar(1.0, kPi * k * th)), 0.0, 1e-10);
      }
    }
  }
}

#pragma once

// Geometric primitives shared by every module: ULA steering vectors and the
// cosine of the angle between an array axis and the line toward an anchor,
// together with its first and second derivatives in the user position.
//
// Angles are carried as cosines throughout; a ULA with half-wavelength
// spacing responds to the cosine directly.

#include <algorithm>
#include <cmath>
#include <complex>

#include <Eigen/Dense>

#include "bult/errors.hpp"

namespace bult {

using Complex = std::complex<double>;
using CVector = Eigen::VectorXcd;
using Position3 = Eigen::Vector3d;

inline constexpr double kPi = 3.14159265358979323846;

/// Anchor-user separations below this are rejected rather than divided by.
inline constexpr double kMinSeparation = 1e-9;

/// Direction of an array axis. Always normalized on construction.
class UnitVector3 {
 public:
  UnitVector3() : v_(1.0, 0.0, 0.0) {}

  explicit UnitVector3(const Eigen::Vector3d& v) {
    const double n = v.norm();
    if (!(n > 1e-12) || !v.allFinite()) {
      throw GeometryError("direction vector must be finite and nonzero");
    }
    v_ = v / n;
  }

  UnitVector3(double x, double y, double z) : UnitVector3(Eigen::Vector3d(x, y, z)) {}

  const Eigen::Vector3d& vec() const { return v_; }
  double x() const { return v_.x(); }
  double y() const { return v_.y(); }
  double z() const { return v_.z(); }

 private:
  Eigen::Vector3d v_;
};

namespace detail {

struct AnchorFrame {
  Eigen::Vector3d unit;  // from user toward anchor
  double distance;
};

inline AnchorFrame anchor_frame(const Position3& anchor, const Position3& user) {
  const Eigen::Vector3d r = anchor - user;
  const double d = r.norm();
  if (!(d >= kMinSeparation)) {
    throw GeometryError("anchor and user positions coincide");
  }
  return {r / d, d};
}

}  // namespace detail

/// Cosine of the angle between `e` and the line from `user` to `anchor`.
inline double aoa_cosine(const Position3& anchor, const Position3& user, const UnitVector3& e) {
  const auto [u, d] = detail::anchor_frame(anchor, user);
  return std::clamp(u.dot(e.vec()), -1.0, 1.0);
}

/// Gradient of aoa_cosine with respect to the user position (1/m).
inline Eigen::Vector3d aoa_gradient(const Position3& anchor, const Position3& user,
                                    const UnitVector3& e) {
  const auto [u, d] = detail::anchor_frame(anchor, user);
  const Eigen::Vector3d& ev = e.vec();
  return (-ev + u.dot(ev) * u) / d;
}

/// Hessian of aoa_cosine with respect to the user position (1/m^2).
inline Eigen::Matrix3d aoa_hessian(const Position3& anchor, const Position3& user,
                                   const UnitVector3& e) {
  const auto [u, d] = detail::anchor_frame(anchor, user);
  const Eigen::Vector3d& ev = e.vec();
  const double c = u.dot(ev);
  Eigen::Matrix3d h = 3.0 * c * u * u.transpose() - c * Eigen::Matrix3d::Identity() -
                      (ev * u.transpose() + u * ev.transpose());
  return h / (d * d);
}

/// ULA response: entry k is exp(j*pi*k*theta).
inline CVector steering(double theta, int n_elements) {
  if (n_elements < 1) throw DimensionError("steering vector needs at least one element");
  if (!(std::abs(theta) <= 1.0 + 1e-12)) {
    throw GeometryError("steering cosine outside [-1, 1]");
  }
  CVector a(n_elements);
  const Complex step = std::polar(1.0, kPi * theta);
  Complex z(1.0, 0.0);
  for (int k = 0; k < n_elements; ++k) {
    // direct polar keeps |a_k| = 1 to rounding for long arrays
    a[k] = (k % 32 == 0) ? std::polar(1.0, kPi * k * theta) : z;
    z = a[k] * step;
  }
  return a;
}

}  // namespace bult

#pragma once

#include <Eigen/Dense>

#include "bult/geometry.hpp"
#include "bult/linalg.hpp"

namespace bult {

struct GaussianMsg {
  Position3 mean = Position3::Zero();
  Eigen::Matrix3d cov = Eigen::Matrix3d::Identity();
};

/// Information-form view of a Gaussian message: precision and C^{-1} m.
struct GaussianInfo {
  Eigen::Matrix3d precision = Eigen::Matrix3d::Zero();
  Eigen::Vector3d shift = Eigen::Vector3d::Zero();

  static GaussianInfo from(const GaussianMsg& g) {
    GaussianInfo out;
    out.precision = spd_inverse(g.cov);
    out.shift = out.precision * g.mean;
    return out;
  }

  GaussianMsg to_moment() const {
    GaussianMsg g;
    g.cov = spd_inverse(precision);
    g.mean = g.cov * shift;
    return g;
  }
};

inline GaussianMsg markov_predict(const GaussianMsg& prev, const Eigen::Matrix3d& c_q) {
  GaussianMsg out = prev;
  out.cov = prev.cov + c_q;
  out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
  return out;
}

inline GaussianMsg gaussian_fuse(const GaussianMsg& a, const GaussianMsg& b) {
  for (const auto* g : {&a, &b}) {
    if (Eigen::LLT<Eigen::Matrix3d>(g->cov).info() != Eigen::Success) {
      throw SingularMatrixError("gaussian_fuse: covariance is not positive definite");
    }
  }
  const GaussianInfo ia = GaussianInfo::from(a);
  const GaussianInfo ib = GaussianInfo::from(b);
  GaussianInfo sum{ia.precision + ib.precision, ia.shift + ib.shift};
  return sum.to_moment();
}

}  // namespace bult

#pragma once

#include <algorithm>

#include <Eigen/Dense>

#include "bult/errors.hpp"

namespace bult {

/// Inverse of a symmetric positive-(semi)definite matrix via Cholesky.
/// When the factorization fails a ridge of 1e-12 * trace is added (growing
/// tenfold until the factorization succeeds) and kRidgeAdded is set.
inline Eigen::MatrixXd spd_inverse(const Eigen::MatrixXd& a, Flags* flags = nullptr) {
  if (a.rows() != a.cols()) throw DimensionError("spd_inverse: matrix not square");
  if (!a.allFinite()) throw SingularMatrixError("spd_inverse: non-finite entries");
  const Eigen::Index n = a.rows();
  const Eigen::MatrixXd sym = 0.5 * (a + a.transpose());
  const auto eye = Eigen::MatrixXd::Identity(n, n);

  Eigen::LLT<Eigen::MatrixXd> llt(sym);
  if (llt.info() == Eigen::Success) {
    Eigen::MatrixXd inv = llt.solve(eye);
    return 0.5 * (inv + inv.transpose());
  }

  const double tr = std::max(sym.diagonal().cwiseAbs().sum(), 1e-300);
  for (double ridge = 1e-12 * tr; ridge < 1e6 * tr; ridge *= 10.0) {
    llt.compute(sym + ridge * eye);
    if (llt.info() == Eigen::Success) {
      if (flags) flags->set(Flag::kRidgeAdded);
      Eigen::MatrixXd inv = llt.solve(eye);
      return 0.5 * (inv + inv.transpose());
    }
  }
  throw SingularMatrixError("spd_inverse: matrix is not positive semidefinite");
}

/// Symmetrize and floor eigenvalues at `floor`. Sets kCovarianceFloored when
/// any eigenvalue was raised.
inline Eigen::Matrix3d floor_eigenvalues(const Eigen::Matrix3d& a, double floor,
                                         Flags* flags = nullptr) {
  const Eigen::Matrix3d sym = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(sym);
  Eigen::Vector3d ev = es.eigenvalues();
  if (ev.minCoeff() >= floor) return sym;
  if (flags) flags->set(Flag::kCovarianceFloored);
  ev = ev.cwiseMax(floor);
  Eigen::Matrix3d out = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

}  // namespace bult

#pragma once

// Fisher information of one snapshot in [position; gain phases; gain
// magnitudes], its Bayesian recursion across slots, and the derived bounds.

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "bult/linalg.hpp"
#include "bult/signal.hpp"

namespace bult {

using FimMatrix = Eigen::MatrixXd;

struct ParamVector {
  Position3 position = Position3::Zero();
  Eigen::VectorXd gain_phases;
  Eigen::VectorXd gain_mags;

  static ParamVector from_gains(const Position3& p, const CVector& rho) {
    ParamVector out;
    out.position = p;
    out.gain_phases.resize(rho.size());
    out.gain_mags.resize(rho.size());
    for (Eigen::Index i = 0; i < rho.size(); ++i) {
      out.gain_phases[i] = std::arg(rho[i]);
      out.gain_mags[i] = std::abs(rho[i]);
    }
    return out;
  }

  int k() const { return static_cast<int>(gain_mags.size()); }
  int dim() const { return 2 * k() + 3; }
};

/// d mu / d gamma for the noiseless snapshot mu = sum_i rho_i a(theta_i(p)).
inline Eigen::MatrixXcd mean_jacobian(const ParamVector& params, const SceneConfig& scene) {
  const int k = params.k();
  if (k != scene.k() || params.gain_phases.size() != k) {
    throw DimensionError("parameter vector does not match the scene");
  }
  const int n = scene.n_user;
  Eigen::MatrixXcd d = Eigen::MatrixXcd::Zero(n, 2 * k + 3);
  Eigen::VectorXcd ramp(n);
  for (int m = 0; m < n; ++m) ramp[m] = Complex(0.0, kPi * m);
  for (int i = 0; i < k; ++i) {
    const Position3& anchor = scene.ris[i].position;
    const double th = aoa_cosine(anchor, params.position, scene.user_direction);
    const Eigen::Vector3d grad = aoa_gradient(anchor, params.position, scene.user_direction);
    const CVector a = steering(th, n);
    const Complex unit = std::polar(1.0, params.gain_phases[i]);
    const Complex rho = params.gain_mags[i] * unit;
    const CVector dtheta = rho * ramp.cwiseProduct(a);
    d.leftCols<3>() += dtheta * grad.transpose();
    d.col(3 + i) = Complex(0.0, 1.0) * rho * a;
    d.col(3 + k + i) = unit * a;
  }
  return d;
}

inline FimMatrix fim_single_slot(const ParamVector& params, const SceneConfig& scene,
                                 double noise_power) {
  if (!(noise_power > 0.0)) throw DimensionError("noise power must be positive");
  const Eigen::MatrixXcd d = mean_jacobian(params, scene);
  FimMatrix j = (2.0 / noise_power) * (d.adjoint() * d).real();
  return 0.5 * (j + j.transpose());
}

/// blockdiag(C_q^{-1}, 0) of size dim.
inline Eigen::MatrixXd transition_information(const Eigen::Matrix3d& c_q, int dim,
                                              Flags* flags = nullptr) {
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(dim, dim);
  g.topLeftCorner<3, 3>() = spd_inverse(c_q, flags);
  return g;
}

/// J_B(t) = J(t) + G - G (J_B(t-1) + G)^{-1} G with G = blockdiag(C_q^{-1}, 0).
inline FimMatrix bfim_step(const FimMatrix& j_prev, const FimMatrix& j_current,
                           const Eigen::Matrix3d& c_q, Flags* flags = nullptr) {
  if (j_prev.rows() != j_current.rows() || j_prev.cols() != j_current.cols() ||
      j_prev.rows() != j_prev.cols() || j_prev.rows() < 3) {
    throw DimensionError("bfim_step: inconsistent matrix sizes");
  }
  const int dim = static_cast<int>(j_prev.rows());
  const Eigen::MatrixXd g = transition_information(c_q, dim);
  const Eigen::MatrixXd x = spd_inverse(j_prev + g, flags);
  FimMatrix jb = j_current + g - g * x * g;
  return 0.5 * (jb + jb.transpose());
}

/// Initial Bayesian information: the prior on position only.
inline FimMatrix initial_bfim(const Eigen::Matrix3d& c0, int k) {
  FimMatrix j = FimMatrix::Zero(2 * k + 3, 2 * k + 3);
  j.topLeftCorner<3, 3>() = spd_inverse(c0);
  return j;
}

/// Lower bounds on the per-axis position MSE (m^2).
inline Eigen::Vector3d position_bcrb(const FimMatrix& j_b, Flags* flags = nullptr) {
  return spd_inverse(j_b, flags).diagonal().head<3>();
}

/// Rows are the position gradients of each arrival cosine; zero elsewhere.
inline Eigen::MatrixXd aoa_transform(const Position3& p, const SceneConfig& scene) {
  const int k = scene.k();
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(k, 2 * k + 3);
  for (int i = 0; i < k; ++i) {
    t.block<1, 3>(i, 0) = aoa_gradient(scene.ris[i].position, p, scene.user_direction).transpose();
  }
  return t;
}

enum class AoaBoundForm {
  kAsWritten,  // diag((T J T^T)^{-1})
  kStandard,   // diag(T J^{-1} T^T)
};

inline Eigen::VectorXd aoa_bound(const FimMatrix& j_b, const Position3& p, const SceneConfig& scene,
                                 AoaBoundForm form = AoaBoundForm::kAsWritten,
                                 Flags* flags = nullptr) {
  const Eigen::MatrixXd t = aoa_transform(p, scene);
  if (form == AoaBoundForm::kStandard) {
    return (t * spd_inverse(j_b, flags) * t.transpose()).diagonal();
  }
  const Eigen::MatrixXd jt = t * j_b * t.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (jt + jt.transpose()));
  const double top = es.eigenvalues().cwiseAbs().maxCoeff();
  if (!(es.eigenvalues().minCoeff() > 1e-12 * top)) {
    throw SingularMatrixError("aoa_bound: transformed information matrix is singular");
  }
  return spd_inverse(jt).diagonal();
}

/// Single-snapshot CRB on the cosines themselves, treating each theta_i as a
/// free parameter alongside the gain phases and magnitudes.
inline Eigen::VectorXd angle_crb(const Eigen::VectorXd& theta, const CVector& rho,
                                 double noise_power, int n_user) {
  const int k = static_cast<int>(theta.size());
  if (rho.size() != k) throw DimensionError("angle_crb: theta and rho lengths differ");
  Eigen::MatrixXcd d(n_user, 3 * k);
  for (int i = 0; i < k; ++i) {
    const CVector a = steering(theta[i], n_user);
    const Complex unit = std::polar(1.0, std::arg(rho[i]));
    for (int m = 0; m < n_user; ++m) d(m, i) = Complex(0.0, kPi * m) * rho[i] * a[m];
    d.col(k + i) = Complex(0.0, 1.0) * rho[i] * a;
    d.col(2 * k + i) = unit * a;
  }
  const Eigen::MatrixXd j = (2.0 / noise_power) * (d.adjoint() * d).real();
  return spd_inverse(j).diagonal().head(k);
}

}  // namespace bult

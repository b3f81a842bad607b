#pragma once

// Shared fixtures and brute-force oracles for the unit and acceptance tests.

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "bult/crb.hpp"
#include "bult/tracker.hpp"

namespace bult::testing {

/// Scene with k RISs placed 15-40 m from a user near the origin.
inline SceneConfig random_scene(int k, std::mt19937_64& rng, Position3* user = nullptr) {
  std::uniform_real_distribution<double> u(-1.0, 1.0), dist(15.0, 40.0);
  std::normal_distribution<double> g;
  SceneConfig s = reference_scene();
  s.ris.clear();
  s.user_direction = UnitVector3(g(rng), g(rng), g(rng));
  const Position3 p(u(rng), u(rng), 0.5 * u(rng));
  for (int i = 0; i < k; ++i) {
    RisConfig r;
    Eigen::Vector3d dir(g(rng), g(rng), g(rng));
    r.position = p + dist(rng) * dir.normalized();
    r.direction = UnitVector3(g(rng), g(rng), g(rng));
    s.ris.push_back(r);
  }
  if (user) *user = p;
  return s;
}

/// Ratio of the smallest to the largest eigenvalue of sum_i g_i g_i^T, with g_i
/// the position gradient of the i-th arrival cosine at p. Near zero when the
/// cones meet along a ridge and the maximizer is not well defined.
inline double geometry_conditioning(const SceneConfig& s, const Position3& p) {
  Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
  for (const auto& r : s.ris) {
    const Eigen::Vector3d g = aoa_gradient(r.position, p, s.user_direction);
    m += g * g.transpose();
  }
  const Eigen::Vector3d ev = Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(m).eigenvalues();
  return ev.minCoeff() / ev.maxCoeff();
}

/// sum_j kappa_j cos(pi theta_j(p) - mu_j), evaluated directly.
inline double angle_log_likelihood(const std::vector<AngleMessage>& msgs, const SceneConfig& s,
                                   const Position3& p) {
  double f = 0.0;
  for (const auto& m : msgs) {
    const Eigen::Vector3d r = s.ris[m.ris].position - p;
    const double th = r.dot(s.user_direction.vec()) / r.norm();
    f += m.msg.kappa * std::cos(kPi * th - m.msg.mu);
  }
  return f;
}

/// Exhaustive search over a cube of half-width `half` centred at `c`.
inline Position3 grid_maximizer(const std::vector<AngleMessage>& msgs, const SceneConfig& s,
                                const Position3& c, double half, double pitch) {
  const int n = static_cast<int>(std::lround(2 * half / pitch));
  double best = -std::numeric_limits<double>::infinity();
  Position3 arg = c;
  for (int a = 0; a <= n; ++a) {
    for (int b = 0; b <= n; ++b) {
      for (int d = 0; d <= n; ++d) {
        const Position3 p = c + Position3(a * pitch - half, b * pitch - half, d * pitch - half);
        const double f = angle_log_likelihood(msgs, s, p);
        if (f > best) {
          best = f;
          arg = p;
        }
      }
    }
  }
  return arg;
}

/// Central-difference Hessian of angle_log_likelihood.
inline Eigen::Matrix3d numeric_hessian(const std::vector<AngleMessage>& msgs, const SceneConfig& s,
                                       const Position3& p, double h) {
  Eigen::Matrix3d out;
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) {
      Position3 pp = p, pm = p, mp = p, mm = p;
      pp[a] += h, pp[b] += h;
      pm[a] += h, pm[b] -= h;
      mp[a] -= h, mp[b] += h;
      mm[a] -= h, mm[b] -= h;
      out(a, b) = (angle_log_likelihood(msgs, s, pp) - angle_log_likelihood(msgs, s, pm) -
                   angle_log_likelihood(msgs, s, mp) + angle_log_likelihood(msgs, s, mm)) /
                  (4 * h * h);
    }
  }
  return 0.5 * (out + out.transpose());
}

/// Noiseless snapshot written out from the model, independent of the library's
/// steering and gradient helpers.
inline CVector mean_signal(const Eigen::VectorXd& gamma, const SceneConfig& s) {
  const int k = s.k();
  CVector mu = CVector::Zero(s.n_user);
  const Position3 p = gamma.head<3>();
  for (int i = 0; i < k; ++i) {
    const Eigen::Vector3d r = s.ris[i].position - p;
    const double th = r.dot(s.user_direction.vec()) / r.norm();
    const Complex rho = std::polar(gamma[3 + k + i], gamma[3 + i]);
    for (int m = 0; m < s.n_user; ++m) mu[m] += rho * std::exp(Complex(0.0, kPi * m * th));
  }
  return mu;
}

/// J = (2/sigma^2) Re(D^H D) with D from central differences of mean_signal.
inline Eigen::MatrixXd finite_difference_fim(const ParamVector& params, const SceneConfig& s,
                                             double noise_power, double h = 1e-6) {
  const int dim = params.dim();
  Eigen::VectorXd gamma(dim);
  gamma << params.position, params.gain_phases, params.gain_mags;
  Eigen::MatrixXcd d(s.n_user, dim);
  for (int c = 0; c < dim; ++c) {
    Eigen::VectorXd up = gamma, dn = gamma;
    const double step = h * std::max(1.0, std::abs(gamma[c]));
    up[c] += step;
    dn[c] -= step;
    d.col(c) = (mean_signal(up, s) - mean_signal(dn, s)) / (2 * step);
  }
  return (2.0 / noise_power) * (d.adjoint() * d).real();
}

/// Random parameters on a random scene with k RISs; gain magnitudes span two decades.
inline ParamVector random_params(int k, std::mt19937_64& rng, SceneConfig& scene) {
  Position3 p;
  scene = random_scene(k, rng, &p);
  std::uniform_real_distribution<double> ph(-kPi, kPi), lm(-1.0, 1.0);
  ParamVector out;
  out.position = p;
  out.gain_phases.resize(k);
  out.gain_mags.resize(k);
  for (int i = 0; i < k; ++i) {
    out.gain_phases[i] = ph(rng);
    out.gain_mags[i] = std::pow(10.0, lm(rng));
  }
  return out;
}

}  // namespace bult::testing

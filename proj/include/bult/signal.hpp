#pragma once

// Forward model: scene description, cascaded BS -> RIS -> user path gains,
// noisy snapshots and random-walk trajectories.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "bult/geometry.hpp"

namespace bult {

using Rng = std::mt19937_64;

inline constexpr double kSpeedOfLight = 299792458.0;

inline double dbm_to_watts(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }

struct RisConfig {
  Position3 position = Position3::Zero();
  UnitVector3 direction;
  double zeta = 1.0;  // scalar reflection coefficient
};

struct SceneConfig {
  double wavelength = kSpeedOfLight / 28e9;
  double noise_power = dbm_to_watts(-84.0);  // watts
  int n_bs = 32;
  int n_ris = 64;
  int n_user = 17;
  Position3 bs_position{20.0, 0.0, 0.0};
  UnitVector3 bs_direction{0.0, 1.0, 0.0};
  std::vector<RisConfig> ris;
  UnitVector3 user_direction{1.0, 0.0, 0.0};
  Eigen::Matrix3d mobility_cov = Eigen::Vector3d(0.03, 0.03, 0.01).asDiagonal();
  Eigen::Matrix3d model_cov = Eigen::Vector3d(0.03, 0.03, 0.01).asDiagonal();
  int n_slots = 300;
  Position3 initial_position{-10.0, 0.0, 0.0};
  Eigen::Matrix3d initial_cov = 0.01 * Eigen::Matrix3d::Identity();
  Position3 bounds_min{-25.0, -20.0, -3.0};
  Position3 bounds_max{5.0, 10.0, 3.0};

  int k() const { return static_cast<int>(ris.size()); }

  /// BS -> RIS i arrival cosine at the RIS array.
  double ris_arrival_cosine(int i) const {
    return aoa_cosine(bs_position, ris.at(i).position, ris.at(i).direction);
  }
  /// BS -> RIS i departure cosine at the BS array.
  double bs_departure_cosine(int i) const {
    return aoa_cosine(ris.at(i).position, bs_position, bs_direction);
  }
  double bs_ris_distance(int i) const { return (ris.at(i).position - bs_position).norm(); }

  void validate() const;
};

namespace detail {
inline bool is_spd(const Eigen::Matrix3d& m) {
  if (!m.allFinite() || !m.isApprox(m.transpose(), 1e-10)) return false;
  return Eigen::LLT<Eigen::Matrix3d>(m).info() == Eigen::Success;
}
inline bool is_psd(const Eigen::Matrix3d& m) {
  if (!m.allFinite() || !m.isApprox(m.transpose(), 1e-10)) return false;
  return Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(m).eigenvalues().minCoeff() >=
         -1e-12 * std::max(1.0, m.trace());
}
}  // namespace detail

inline void SceneConfig::validate() const {
  if (!(wavelength > 0.0)) throw ConfigError("wavelength must be positive");
  if (!(noise_power >= 0.0)) throw ConfigError("noise power must be nonnegative");
  if (n_bs < 1 || n_ris < 1 || n_user < 1) throw ConfigError("array sizes must be positive");
  if (ris.size() < 2) throw ConfigError("at least two RISs are required");
  // zero mobility is allowed for static-user studies
  if (!detail::is_psd(mobility_cov)) throw ConfigError("mobility covariance must be PSD");
  if (!detail::is_psd(model_cov)) throw ConfigError("model covariance must be PSD");
  if (!detail::is_spd(initial_cov)) throw ConfigError("initial covariance must be SPD");
  if (n_slots < 1) throw ConfigError("n_slots must be positive");
  if ((bounds_max - bounds_min).minCoeff() <= 0.0) throw ConfigError("empty bounding box");
  for (const auto& r : ris) {
    if ((r.position - bs_position).norm() < kMinSeparation) {
      throw ConfigError("RIS coincides with the BS");
    }
  }
}

/// The reference scenario: 7 RISs at 28 GHz.
inline SceneConfig reference_scene() {
  SceneConfig s;
  const double pos[7][3] = {{-35, 5, -10}, {-30, 20, 10}, {-20, 25, 20}, {-10, 40, 10},
                            {0, 20, 10},   {10, 15, 20},  {30, 20, 5}};
  for (int i = 0; i < 7; ++i) {
    RisConfig r;
    r.position = Position3(pos[i][0], pos[i][1], pos[i][2]);
    r.direction = (i == 0 || i == 6) ? UnitVector3(0, 1, 0) : UnitVector3(1, 0, 0);
    s.ris.push_back(r);
  }
  return s;
}

/// Unbeamformed cascaded gain over a path of length d1 + d2.
inline Complex free_space_gain(double d_bs_ris, double d_ris_user, double wavelength) {
  if (!(d_bs_ris > 0.0) || !(d_ris_user > 0.0)) {
    throw GeometryError("path distances must be positive");
  }
  if (!(wavelength > 0.0)) throw GeometryError("wavelength must be positive");
  const double d = d_bs_ris + d_ris_user;
  return std::polar(wavelength / (4.0 * kPi * d), -2.0 * kPi * std::fmod(d, wavelength) / wavelength);
}

/// RIS array factor a_R(departure)^H diag(omega) a_R(arrival).
inline Complex ris_factor(double departure, double arrival, const CVector& omega) {
  const int n = static_cast<int>(omega.size());
  const CVector a_dep = steering(departure, n);
  const CVector a_arr = steering(arrival, n);
  return (a_dep.conjugate().cwiseProduct(omega).cwiseProduct(a_arr)).sum();
}

/// BS array factor a_B(departure)^H f.
inline Complex bs_factor(double departure, const CVector& f) {
  return steering(departure, static_cast<int>(f.size())).dot(f);
}

inline Complex equivalent_gain(Complex rho_ub, double ris_departure, double ris_arrival,
                               double bs_departure, const CVector& omega, const CVector& f) {
  if (omega.size() < 1 || f.size() < 1) throw DimensionError("empty beam vectors");
  return rho_ub * ris_factor(ris_departure, ris_arrival, omega) * bs_factor(bs_departure, f);
}

/// RIS phase profiles and BS beam applied in one slot.
struct BeamPlan {
  std::vector<CVector> ris_phases;  // K vectors of N_R unit-modulus entries
  CVector bs_beam;                  // N_B, unit norm
};

/// RIS i departure cosine toward a user at p.
inline double ris_departure_cosine(const SceneConfig& s, int i, const Position3& p) {
  return aoa_cosine(p, s.ris.at(i).position, s.ris.at(i).direction);
}

/// True per-RIS gains at user position p with transmit power power_w, so that
/// |rho_i|^2 scales linearly with power_w.
inline CVector path_gains(const SceneConfig& s, const Position3& p, const BeamPlan& plan,
                          double power_w) {
  const int k = s.k();
  if (static_cast<int>(plan.ris_phases.size()) != k) {
    throw DimensionError("beam plan has wrong number of RIS profiles");
  }
  CVector rho(k);
  const double amp = std::sqrt(power_w);
  for (int i = 0; i < k; ++i) {
    const Complex ub = free_space_gain(s.bs_ris_distance(i), (p - s.ris[i].position).norm(),
                                       s.wavelength);
    rho[i] = amp * s.ris[i].zeta *
             equivalent_gain(ub, ris_departure_cosine(s, i, p), s.ris_arrival_cosine(i),
                             s.bs_departure_cosine(i), plan.ris_phases[i], plan.bs_beam);
  }
  return rho;
}

/// Arrival cosines at the user for every RIS.
inline Eigen::VectorXd user_aoas(const SceneConfig& s, const Position3& p) {
  Eigen::VectorXd th(s.k());
  for (int i = 0; i < s.k(); ++i) th[i] = aoa_cosine(s.ris[i].position, p, s.user_direction);
  return th;
}

/// Noiseless superposition sum_i rho_i a(theta_i).
inline CVector superpose(const Eigen::VectorXd& theta, const CVector& rho, int n_user) {
  if (theta.size() != rho.size()) throw DimensionError("theta and rho lengths differ");
  CVector y = CVector::Zero(n_user);
  for (Eigen::Index i = 0; i < theta.size(); ++i) y += rho[i] * steering(theta[i], n_user);
  return y;
}

/// Draws CN(0, variance) samples.
inline CVector complex_gaussian(int n, double variance, Rng& rng) {
  std::normal_distribution<double> g(0.0, std::sqrt(variance / 2.0));
  CVector v(n);
  for (int i = 0; i < n; ++i) {
    const double re = g(rng);
    const double im = g(rng);
    v[i] = Complex(re, im);
  }
  return v;
}

inline CVector synthesize(const Eigen::VectorXd& theta, const CVector& rho, double noise_power,
                          int n_user, Rng& rng) {
  if (!(noise_power >= 0.0)) throw DimensionError("noise power must be nonnegative");
  CVector y = superpose(theta, rho, n_user);
  if (noise_power > 0.0) y += complex_gaussian(n_user, noise_power, rng);
  return y;
}

struct SlotGroundTruth {
  Position3 user_position;
  Eigen::VectorXd aoas;
  CVector gains;
  CVector received;
};

namespace detail {
inline double reflect_into(double x, double lo, double hi) {
  const double w = hi - lo;
  double u = std::fmod(x - lo, 2.0 * w);
  if (u < 0.0) u += 2.0 * w;
  return lo + (u <= w ? u : 2.0 * w - u);
}

/// Symmetric square root usable for PSD (possibly singular) covariances.
inline Eigen::Matrix3d psd_sqrt(const Eigen::Matrix3d& c) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(0.5 * (c + c.transpose()));
  const Eigen::Vector3d s = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * s.asDiagonal() * es.eigenvectors().transpose();
}
}  // namespace detail

inline Eigen::Vector3d gaussian3(const Eigen::Matrix3d& cov_sqrt, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::Vector3d z;
  for (int i = 0; i < 3; ++i) z[i] = g(rng);
  return cov_sqrt * z;
}

/// Positions for slots 1..T of a random walk started at the initial position,
/// reflected at the bounding box.
inline std::vector<Position3> generate_trajectory(const SceneConfig& s, Rng& rng,
                                                  bool clip = true) {
  const Eigen::Matrix3d l = detail::psd_sqrt(s.mobility_cov);
  std::vector<Position3> out;
  out.reserve(s.n_slots);
  Position3 p = s.initial_position;
  for (int t = 0; t < s.n_slots; ++t) {
    p += gaussian3(l, rng);
    if (clip) {
      for (int a = 0; a < 3; ++a) p[a] = detail::reflect_into(p[a], s.bounds_min[a], s.bounds_max[a]);
    }
    out.push_back(p);
  }
  return out;
}

}  // namespace bult

#pragma once

// Variational line-spectrum estimation with a known number of sources.
//
// Model: y = sum_i rho_i a(theta_i) + n, n ~ CN(0, nu I), rho_i ~ CN(0, s2).
// The posterior is approximated by q(phi_1)...q(phi_K) q(rho) with Von Mises
// factors over phi_i = pi * theta_i and a joint Gaussian over the gains.
//
// Phases are referenced to the array center (element c0) internally. With the
// first element as reference, a shift in phi moves the gain phase by c0 * phi,
// which couples the two factors and makes the mean-field posterior on phi far
// too broad. The centered gains are w_i = rho_i exp(j c0 phi_i).

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "bult/von_mises.hpp"

namespace bult {

struct AoaPosterior {
  std::vector<VonMisesMsg> aoa;  // q(phi_i), phi = pi * cosine
  CVector gain_mean;             // referenced to element 0, as in the forward model
  Eigen::VectorXd gain_var;
  double noise_var = 0.0;
  double gain_prior_var = 0.0;
  int iterations = 0;
  bool converged = false;

  double cosine(int i) const { return std::clamp(aoa.at(i).mu / kPi, -1.0, 1.0); }
};

struct AoaOptions {
  int max_iterations = 50;
  double tolerance = 1e-5;  // radians on the mean directions
  int grid_size = 4096;
  double strong_prior_kappa = 100.0;  // priors above this seed the local search
  std::optional<double> fixed_noise_var;
  std::optional<double> fixed_gain_var;
};

namespace detail {

class LineSpectrum {
 public:
  LineSpectrum(const CVector& y, const std::vector<VonMisesMsg>& priors, const AoaOptions& opt)
      : y_(y), priors_(priors), opt_(opt), n_(static_cast<int>(y.size())), k_(static_cast<int>(priors.size())) {
    c0_ = (n_ - 1) / 2;
    off_.resize(n_);
    for (int m = 0; m < n_; ++m) off_[m] = m - c0_;
    q_.assign(k_, VonMisesMsg{});
    a_hat_ = Eigen::MatrixXcd::Zero(n_, k_);
    w_ = CVector::Zero(k_);
    c_ = Eigen::MatrixXcd::Zero(k_, k_);
    y_energy_ = y_.squaredNorm();
    nu_floor_ = std::max(1e-10 * y_energy_ / n_, 1e-30);
  }

  AoaPosterior run(const AoaPosterior* init) {
    if (init && static_cast<int>(init->aoa.size()) == k_) {
      warm_start(*init);
    } else {
      greedy_start();
    }
    int it = 0;
    bool converged = false;
    for (; it < opt_.max_iterations; ++it) {
      update_gains();
      double max_shift = 0.0;
      for (int i = 0; i < k_; ++i) {
        const double before = q_[i].mu;
        update_angle(i);
        max_shift = std::max(max_shift, std::abs(VonMisesMsg::wrap_angle(q_[i].mu - before)));
        refresh_column(i);
      }
      update_gains();
      update_hyper();
      if (max_shift < opt_.tolerance) {
        converged = true;
        ++it;
        break;
      }
    }
    return finish(it, converged);
  }

 private:
  // E[b(phi)] under q, with b_m(phi) = exp(j off_m phi).
  CVector expected_steering(const VonMisesMsg& q) const {
    CVector v(n_);
    for (int m = 0; m < n_; ++m) {
      v[m] = std::polar(bessel_ratio(std::abs(off_[m]), q.kappa), off_[m] * q.mu);
    }
    return v;
  }

  CVector centered_steering(double phi) const {
    CVector v(n_);
    for (int m = 0; m < n_; ++m) v[m] = std::polar(1.0, off_[m] * phi);
    return v;
  }

  void refresh_column(int i) { a_hat_.col(i) = expected_steering(q_[i]); }

  Eigen::MatrixXcd gram() const {
    Eigen::MatrixXcd j = a_hat_.adjoint() * a_hat_;
    for (int i = 0; i < k_; ++i) j(i, i) = static_cast<double>(n_);
    return j;
  }

  void update_gains() {
    const Eigen::MatrixXcd j = gram();
    Eigen::MatrixXcd prec = j / nu_;
    prec.diagonal().array() += 1.0 / s2_;
    c_ = prec.ldlt().solve(Eigen::MatrixXcd::Identity(k_, k_));
    c_ = 0.5 * (c_ + c_.adjoint()).eval();
    w_ = c_ * (a_hat_.adjoint() * y_) / nu_;
  }

  void update_hyper() {
    const Eigen::MatrixXcd j = gram();
    if (opt_.fixed_noise_var) {
      nu_ = *opt_.fixed_noise_var;
    } else {
      const double fit = (y_.adjoint() * a_hat_ * w_)(0).real();
      const double quad = (w_.adjoint() * j * w_)(0).real();
      const double tr = (j * c_).trace().real();
      nu_ = std::max((y_energy_ - 2.0 * fit + quad + tr) / n_, nu_floor_);
    }
    if (opt_.fixed_gain_var) {
      s2_ = *opt_.fixed_gain_var;
    } else {
      double s = 0.0;
      for (int i = 0; i < k_; ++i) s += std::norm(w_[i]) + c_(i, i).real();
      s2_ = std::max(s / k_, 1e-300);
    }
  }

  // Linear term of the log posterior in b(phi_i): Re{b^H eta}.
  CVector eta(int i) const {
    CVector r = y_ * std::conj(w_[i]);
    for (int l = 0; l < k_; ++l) {
      if (l == i) continue;
      r -= a_hat_.col(l) * (w_[l] * std::conj(w_[i]) + c_(l, i));
    }
    return (2.0 / nu_) * r;
  }

  struct Derivs {
    double f, d1, d2;
  };

  Derivs evaluate(const CVector& e, const VonMisesMsg& prior, double phi) const {
    double f = 0.0, d1 = 0.0, d2 = 0.0;
    for (int m = 0; m < n_; ++m) {
      const Complex t = std::conj(e[m]) * std::polar(1.0, off_[m] * phi);
      f += t.real();
      d1 -= off_[m] * t.imag();
      d2 -= off_[m] * off_[m] * t.real();
    }
    const double dphi = phi - prior.mu;
    f += prior.kappa * std::cos(dphi);
    d1 -= prior.kappa * std::sin(dphi);
    d2 -= prior.kappa * std::cos(dphi);
    return {f, d1, d2};
  }

  // sum_m conj(c_m) exp(j off_m phi) on the uniform grid, by recurrence in phi
  std::vector<Complex> grid_polynomial(const CVector& c) const {
    const int g = opt_.grid_size;
    std::vector<Complex> out(g);
    const double step = 2.0 * kPi / g;
    for (int s = 0; s < g; ++s) {
      const double phi = -kPi + step * (s + 1);
      const Complex z = std::polar(1.0, phi);
      Complex e = std::polar(1.0, off_[0] * phi);
      Complex acc(0.0, 0.0);
      for (int m = 0; m < n_; ++m) {
        acc += std::conj(c[m]) * e;
        e *= z;
      }
      out[s] = acc;
    }
    return out;
  }

  std::vector<double> grid_values(const CVector& e, const VonMisesMsg& prior) const {
    const int g = opt_.grid_size;
    const std::vector<Complex> poly = grid_polynomial(e);
    std::vector<double> vals(g);
    const double step = 2.0 * kPi / g;
    for (int s = 0; s < g; ++s) {
      vals[s] = poly[s].real() + prior.kappa * std::cos(-kPi + step * (s + 1) - prior.mu);
    }
    return vals;
  }

  double grid_argmax(const std::vector<double>& vals) const {
    const auto best = std::max_element(vals.begin(), vals.end()) - vals.begin();
    return -kPi + 2.0 * kPi / opt_.grid_size * (best + 1);
  }

  // Damped Newton ascent on the 1-D log posterior.
  double refine(const CVector& e, const VonMisesMsg& prior, double phi) const {
    Derivs d = evaluate(e, prior, phi);
    for (int it = 0; it < 50; ++it) {
      double step = d.d2 < 0.0 ? -d.d1 / d.d2 : (d.d1 > 0 ? 0.05 : -0.05);
      step = std::clamp(step, -0.2, 0.2);
      double next = phi + step;
      Derivs dn = evaluate(e, prior, next);
      int halvings = 0;
      while (dn.f < d.f && halvings < 30) {
        step *= 0.5;
        next = phi + step;
        dn = evaluate(e, prior, next);
        ++halvings;
      }
      if (dn.f < d.f) break;
      phi = next;
      d = dn;
      if (std::abs(step) < 1e-12) break;
    }
    return VonMisesMsg::wrap_angle(phi);
  }

  void update_angle(int i) {
    const CVector e = eta(i);
    const VonMisesMsg& prior = priors_[i];
    const bool sharp_start = prior.kappa >= opt_.strong_prior_kappa || q_[i].kappa >= opt_.strong_prior_kappa;
    std::vector<double> grid;
    double start;
    if (sharp_start) {
      start = q_[i].kappa >= opt_.strong_prior_kappa ? q_[i].mu : prior.mu;
    } else {
      grid = grid_values(e, prior);
      start = grid_argmax(grid);
    }
    const double phi = refine(e, prior, start);
    const double curvature = -evaluate(e, prior, phi).d2;
    const double spacing = 2.0 * kPi / opt_.grid_size;
    if (curvature > 1.0 / std::pow(8.0 * spacing, 2)) {
      // peak narrower than a few grid cells: Laplace fit at the mode
      q_[i] = {phi, curvature};
      return;
    }
    if (grid.empty()) grid = grid_values(e, prior);
    const double top = *std::max_element(grid.begin(), grid.end());
    Complex z(0.0, 0.0);
    double mass = 0.0;
    for (int s = 0; s < opt_.grid_size; ++s) {
      const double w = std::exp(grid[s] - top);
      z += w * std::polar(1.0, -kPi + spacing * (s + 1));
      mass += w;
    }
    z /= mass;
    q_[i] = {std::arg(z), vm_kappa_from_resultant(std::abs(z))};
  }

  void seed_hyper_from_residual(const CVector& residual) {
    nu_ = opt_.fixed_noise_var.value_or(std::max(residual.squaredNorm() / n_, nu_floor_));
    double s = 0.0;
    for (int i = 0; i < k_; ++i) s += std::norm(w_[i]);
    s2_ = opt_.fixed_gain_var.value_or(std::max(s / std::max(k_, 1), 1e-300));
  }

  // Rough concentration for a point estimate with gain w at noise level nu.
  double point_kappa(Complex w, double nu) const {
    double s = 0.0;
    for (int m = 0; m < n_; ++m) s += off_[m] * off_[m];
    return 2.0 * std::norm(w) * s / nu;
  }

  void greedy_start() {
    std::vector<int> order(k_);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return priors_[a].kappa > priors_[b].kappa; });
    CVector r = y_;
    const double nu0 = std::max(y_energy_ / n_, nu_floor_);
    for (int i : order) {
      const VonMisesMsg& prior = priors_[i];
      double phi;
      if (prior.kappa >= opt_.strong_prior_kappa) {
        phi = prior.mu;
      } else {
        const std::vector<Complex> poly = grid_polynomial(r);
        double best = -std::numeric_limits<double>::infinity();
        phi = 0.0;
        const double step = 2.0 * kPi / opt_.grid_size;
        for (int s = 0; s < opt_.grid_size; ++s) {
          const double cand = -kPi + step * (s + 1);
          const double score = std::norm(poly[s]) / (n_ * nu0) + prior.kappa * std::cos(cand - prior.mu);
          if (score > best) {
            best = score;
            phi = cand;
          }
        }
      }
      const CVector b = centered_steering(phi);
      w_[i] = b.dot(r) / static_cast<double>(n_);
      r -= b * w_[i];
      q_[i] = {phi, 0.0};
    }
    seed_hyper_from_residual(r);
    for (int i = 0; i < k_; ++i) {
      q_[i].kappa = point_kappa(w_[i], nu_) + priors_[i].kappa;
      refresh_column(i);
    }
  }

  void warm_start(const AoaPosterior& init) {
    for (int i = 0; i < k_; ++i) {
      q_[i] = priors_[i].kappa >= opt_.strong_prior_kappa ? priors_[i] : init.aoa[i];
      refresh_column(i);
    }
    // gains rotate between calls, so refit them by least squares
    Eigen::MatrixXcd b(n_, k_);
    for (int i = 0; i < k_; ++i) b.col(i) = centered_steering(q_[i].mu);
    w_ = b.colPivHouseholderQr().solve(y_);
    seed_hyper_from_residual(y_ - b * w_);
  }

  AoaPosterior finish(int iterations, bool converged) const {
    AoaPosterior out;
    out.aoa = q_;
    out.gain_mean.resize(k_);
    out.gain_var.resize(k_);
    for (int i = 0; i < k_; ++i) {
      out.gain_mean[i] = w_[i] * std::polar(1.0, -c0_ * q_[i].mu);
      out.gain_var[i] = std::max(c_(i, i).real(), 0.0);
    }
    out.noise_var = nu_;
    out.gain_prior_var = s2_;
    out.iterations = iterations;
    out.converged = converged;
    return out;
  }

  const CVector& y_;
  const std::vector<VonMisesMsg>& priors_;
  const AoaOptions& opt_;
  int n_, k_, c0_;
  std::vector<int> off_;
  std::vector<VonMisesMsg> q_;
  Eigen::MatrixXcd a_hat_;
  CVector w_;
  Eigen::MatrixXcd c_;
  double y_energy_ = 0.0;
  double nu_floor_ = 0.0;
  double nu_ = 1.0;
  double s2_ = 1.0;
};

}  // namespace detail

/// Posterior of K angles and gains given one snapshot and per-source priors.
inline AoaPosterior estimate_aoa(const CVector& y, const std::vector<VonMisesMsg>& priors,
                                 const AoaPosterior* init = nullptr,
                                 const AoaOptions& options = {}) {
  if (priors.empty()) throw DimensionError("estimate_aoa needs at least one source");
  if (y.size() < 1) throw DimensionError("estimate_aoa: empty snapshot");
  if (!y.allFinite()) throw Error("estimate_aoa: non-finite received signal");
  if (options.grid_size < 8) throw ConfigError("estimate_aoa: grid too coarse");
  detail::LineSpectrum solver(y, priors, options);
  return solver.run(init);
}

/// Belief used for reporting: likelihood-side extrinsic times the prior.
inline VonMisesMsg fused_belief(const VonMisesMsg& extrinsic, const VonMisesMsg& prior) {
  return vm_multiply(extrinsic, prior);
}

}  // namespace bult

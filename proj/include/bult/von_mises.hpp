#pragma once

// Von Mises messages over a scaled angle phi = pi * cos(angle).
//
// Products and quotients of Von Mises densities are exact in the complex
// natural parameter z = kappa * exp(j*mu), which is how every operation here
// is implemented.

#include <cmath>
#include <complex>

#include "bult/geometry.hpp"

namespace bult {

struct VonMisesMsg {
  double mu = 0.0;     // radians, (-pi, pi]
  double kappa = 0.0;  // 0 = uniform

  Complex natural() const { return std::polar(kappa, mu); }

  static VonMisesMsg from_natural(Complex z, double mu_if_zero = 0.0) {
    const double k = std::abs(z);
    if (k == 0.0) return {wrap_angle(mu_if_zero), 0.0};
    return {std::arg(z), k};
  }

  static double wrap_angle(double a) {
    a = std::remainder(a, 2.0 * kPi);
    return a <= -kPi ? a + 2.0 * kPi : a;
  }
};

inline VonMisesMsg vm_multiply(const VonMisesMsg& a, const VonMisesMsg& b) {
  return VonMisesMsg::from_natural(a.natural() + b.natural(), a.mu);
}

/// Removes `prior` from `posterior`. Near-total cancellation gives the uniform
/// message, keeping the posterior's direction.
inline VonMisesMsg vm_extrinsic(const VonMisesMsg& posterior, const VonMisesMsg& prior) {
  const Complex z = posterior.natural() - prior.natural();
  if (std::abs(z) < 1e-9) return {posterior.mu, 0.0};
  return {std::arg(z), std::abs(z)};
}

namespace detail {

// I_n(k)/I_0(k) from the large-argument expansion
//   I_nu(k) ~ e^k / sqrt(2 pi k) * sum_m (-1)^m a_m(nu) / k^m,
// where the common prefactor cancels in the ratio.
inline double bessel_ratio_asymptotic(int n, double k) {
  auto series = [k](double nu) {
    const double mu4 = 4.0 * nu * nu;
    double term = 1.0, sum = 1.0;
    for (int m = 1; m <= 12; ++m) {
      const double odd = 2.0 * m - 1.0;
      term *= -(mu4 - odd * odd) / (m * 8.0 * k);
      sum += term;
      if (std::abs(term) < 1e-17 * std::abs(sum)) break;
    }
    return sum;
  };
  return series(n) / series(0);
}

}  // namespace detail

/// I_n(kappa) / I_0(kappa) for n >= 0, kappa >= 0.
inline double bessel_ratio(int n, double kappa) {
  if (n == 0) return 1.0;
  if (kappa <= 0.0) return 0.0;
  if (kappa > 500.0) return detail::bessel_ratio_asymptotic(n, kappa);
  const double i0 = std::cyl_bessel_i(0.0, kappa);
  return std::cyl_bessel_i(static_cast<double>(n), kappa) / i0;
}

/// E[exp(j n phi)] under the message.
inline Complex vm_circular_moment(const VonMisesMsg& msg, int n) {
  if (n < 0) throw DimensionError("circular moment order must be nonnegative");
  if (n == 0) return {1.0, 0.0};
  return std::polar(bessel_ratio(n, msg.kappa), n * msg.mu);
}

/// Inverse of A(kappa) = I_1/I_0: the concentration whose mean resultant
/// length is r. Initial guess from the standard piecewise approximation, then
/// Newton on A(kappa) - r with A' = 1 - A/kappa - A^2.
inline double vm_kappa_from_resultant(double r) {
  if (!(r > 0.0)) return 0.0;
  if (r >= 1.0 - 1e-15) return 1e15;
  double k;
  if (r < 0.53) {
    k = 2.0 * r + r * r * r + 5.0 * std::pow(r, 5) / 6.0;
  } else if (r < 0.85) {
    k = -0.4 + 1.39 * r + 0.43 / (1.0 - r);
  } else {
    k = 1.0 / (r * r * r - 4.0 * r * r + 3.0 * r);
  }
  for (int it = 0; it < 30; ++it) {
    const double a = bessel_ratio(1, k);
    const double da = 1.0 - a / k - a * a;
    if (!(da > 0.0)) break;
    const double step = (a - r) / da;
    const double next = std::max(k - step, 0.5 * k);
    if (std::abs(next - k) < 1e-12 * k) {
      k = next;
      break;
    }
    k = next;
  }
  return k;
}

/// Log density of the message at phi, including normalization.
inline double vm_log_density(const VonMisesMsg& msg, double phi) {
  const double k = msg.kappa;
  // log I_0(k) computed stably for large k
  const double log_i0 = k > 500.0
                            ? k - 0.5 * std::log(2.0 * kPi * k) +
                                  std::log1p(1.0 / (8.0 * k) + 9.0 / (128.0 * k * k))
                            : std::log(std::cyl_bessel_i(0.0, k));
  return k * std::cos(phi - msg.mu) - std::log(2.0 * kPi) - log_i0;
}

}  // namespace bult

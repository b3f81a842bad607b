#pragma once

// RIS phase profiles and BS beams for the next slot, designed from the
// current estimates: directional alignment, weighted multi-lobe BS beams, and
// joint minimization of the predicted position bound.

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "bult/crb.hpp"
#include "bult/signal.hpp"

namespace bult {

/// Predicts the gain of one RIS path for any beam plan from a calibrated
/// unbeamformed gain and the estimated departure cosine.
struct GainPredictor {
  Complex rho_ub{0.0, 0.0};
  double aod = 0.0;           // estimated RIS -> user departure cosine
  double arrival = 0.0;       // BS -> RIS arrival cosine at the RIS
  double bs_departure = 0.0;  // BS -> RIS departure cosine at the BS

  Complex predict(const CVector& omega, const CVector& f) const {
    return equivalent_gain(rho_ub, aod, arrival, bs_departure, omega, f);
  }
};

inline double estimate_aod(const Position3& est_position, const RisConfig& ris) {
  return aoa_cosine(est_position, ris.position, ris.direction);
}

/// Unbeamformed gain implied by an estimated gain observed under `plan`.
/// Falls back to `previous` when the plan's beam factor vanishes.
inline Complex calibrate_gain(Complex rho_prev, const BeamPlan& plan, double prev_aod,
                              const SceneConfig& scene, int i, Complex previous = {0.0, 0.0},
                              Flags* flags = nullptr) {
  const Complex den = ris_factor(prev_aod, scene.ris_arrival_cosine(i), plan.ris_phases.at(i)) *
                      bs_factor(scene.bs_departure_cosine(i), plan.bs_beam);
  if (std::abs(den) < 1e-9) {
    if (flags) flags->set(Flag::kCalibrationReused);
    return previous;
  }
  return rho_prev / den;
}

inline CVector directional_pbf(double aod, double arrival, int n_ris) {
  return steering(aod, n_ris).cwiseProduct(steering(arrival, n_ris).conjugate());
}

inline CVector directional_bs_beam(const CVector& weights, const SceneConfig& scene) {
  if (weights.size() != scene.k()) throw DimensionError("one weight per RIS required");
  CVector f = CVector::Zero(scene.n_bs);
  for (int i = 0; i < scene.k(); ++i) {
    f += weights[i] * steering(scene.bs_departure_cosine(i), scene.n_bs);
  }
  const double n = f.norm();
  if (!(n > 1e-300)) throw GeometryError("directional_bs_beam: beam vector vanishes");
  return f / n;
}

inline std::vector<GainPredictor> make_predictors(const SceneConfig& scene,
                                                  const CVector& rho_ub,
                                                  const Position3& est_position) {
  std::vector<GainPredictor> out(scene.k());
  for (int i = 0; i < scene.k(); ++i) {
    out[i] = {rho_ub[i], estimate_aod(est_position, scene.ris[i]), scene.ris_arrival_cosine(i),
              scene.bs_departure_cosine(i)};
  }
  return out;
}

inline BeamPlan directional_plan(const std::vector<GainPredictor>& pred, const CVector& weights,
                                 const SceneConfig& scene) {
  BeamPlan plan;
  for (const auto& g : pred) plan.ris_phases.push_back(directional_pbf(g.aod, g.arrival, scene.n_ris));
  plan.bs_beam = directional_bs_beam(weights, scene);
  return plan;
}

/// Everything the bound objective needs besides the plan.
struct BoundContext {
  const SceneConfig* scene = nullptr;
  Position3 est_position = Position3::Zero();
  Eigen::Matrix3d c_q = Eigen::Matrix3d::Identity();
  FimMatrix j_prev;
  double noise_power = 1.0;
};

/// Sum of the position bounds of the next slot when the gains are `rho`.
/// Reference evaluation through the full FIM and BFIM recursion.
inline double bound_objective(const CVector& rho, const BoundContext& ctx) {
  const FimMatrix j = fim_single_slot(ParamVector::from_gains(ctx.est_position, rho), *ctx.scene,
                                      ctx.noise_power);
  Flags ignored;
  return position_bcrb(bfim_step(ctx.j_prev, j, ctx.c_q, &ignored), &ignored).sum();
}

/// Same objective as bound_objective, evaluated many times for one context.
/// With the position fixed the FIM is a quadratic form in the gains over
/// precomputed Gram matrices of the steering vectors and their derivatives,
/// and the prior enters only through a constant 3x3 position term.
class BoundEvaluator {
 public:
  explicit BoundEvaluator(const BoundContext& ctx) : ctx_(ctx) {
    const SceneConfig& s = *ctx.scene;
    k_ = s.k();
    const int n = s.n_user;
    Eigen::MatrixXcd a(n, k_), u(n, k_);
    g_.resize(3, k_);
    for (int i = 0; i < k_; ++i) {
      const Position3& anchor = s.ris[i].position;
      const double th = aoa_cosine(anchor, ctx.est_position, s.user_direction);
      g_.col(i) = aoa_gradient(anchor, ctx.est_position, s.user_direction);
      a.col(i) = steering(th, n);
      for (int m = 0; m < n; ++m) u(m, i) = Complex(0.0, kPi * m) * a(m, i);
    }
    uu_ = u.adjoint() * u;
    ua_ = u.adjoint() * a;
    aa_ = a.adjoint() * a;
    const int dim = 2 * k_ + 3;
    if (ctx.j_prev.rows() != dim) throw DimensionError("BoundEvaluator: previous BFIM has wrong size");
    const Eigen::MatrixXd gm = transition_information(ctx.c_q, dim);
    const Eigen::MatrixXd x = spd_inverse(ctx.j_prev + gm);
    prior_ = gm.topLeftCorner<3, 3>() - gm.topLeftCorner<3, 3>() * x.topLeftCorner<3, 3>() *
                                            gm.topLeftCorner<3, 3>();
  }

  FimMatrix bfim(const CVector& rho) const {
    const int k = k_;
    const double c = 2.0 / ctx_.noise_power;
    CVector unit(k);
    for (int i = 0; i < k; ++i) {
      unit[i] = std::abs(rho[i]) > 0.0 ? rho[i] / std::abs(rho[i]) : Complex(1.0, 0.0);
    }
    const Complex j1(0.0, 1.0);
    FimMatrix jm = FimMatrix::Zero(2 * k + 3, 2 * k + 3);
    Eigen::Matrix3d pp = Eigen::Matrix3d::Zero();
    for (int i = 0; i < k; ++i) {
      for (int l = 0; l < k; ++l) {
        pp += (std::conj(rho[i]) * rho[l] * uu_(i, l)).real() * g_.col(i) * g_.col(l).transpose();
        const Complex ci = std::conj(rho[i]) * ua_(i, l);
        jm.block<3, 1>(0, 3 + l) += (ci * j1 * rho[l]).real() * g_.col(i);
        jm.block<3, 1>(0, 3 + k + l) += (ci * unit[l]).real() * g_.col(i);
        const Complex ail = aa_(i, l);
        jm(3 + i, 3 + l) = (std::conj(rho[i]) * rho[l] * ail).real();
        jm(3 + i, 3 + k + l) = (std::conj(j1 * rho[i]) * unit[l] * ail).real();
        jm(3 + k + i, 3 + k + l) = (std::conj(unit[i]) * unit[l] * ail).real();
      }
    }
    jm.topLeftCorner<3, 3>() = pp;
    jm.triangularView<Eigen::StrictlyLower>() = jm.transpose();
    jm *= c;
    jm.topLeftCorner<3, 3>() += prior_;
    return jm;
  }

  double operator()(const CVector& rho) const {
    const FimMatrix jb = bfim(rho);
    Eigen::LLT<Eigen::MatrixXd> llt(jb);
    if (llt.info() != Eigen::Success) return position_bcrb(jb).sum();
    const Eigen::MatrixXd e = Eigen::MatrixXd::Identity(jb.rows(), 3);
    return (e.transpose() * llt.solve(e)).trace();
  }

 private:
  const BoundContext& ctx_;
  int k_ = 0;
  Eigen::Matrix3Xd g_;
  Eigen::MatrixXcd uu_, ua_, aa_;
  Eigen::Matrix3d prior_;
};

/// Per-RIS factors of the predicted gains, cached for one design problem:
/// gain_i = rho_ub_i * (r_i . omega_i) * (b_i^H f).
struct GainModel {
  std::vector<CVector> r;  // conj(a_R(aod)) .* a_R(arrival)
  std::vector<CVector> b;  // a_B(bs departure)
  CVector rho_ub;

  GainModel(const std::vector<GainPredictor>& pred, const SceneConfig& s) : rho_ub(pred.size()) {
    for (std::size_t i = 0; i < pred.size(); ++i) {
      r.push_back(steering(pred[i].aod, s.n_ris).conjugate().cwiseProduct(steering(pred[i].arrival, s.n_ris)));
      b.push_back(steering(pred[i].bs_departure, s.n_bs));
      rho_ub[i] = pred[i].rho_ub;
    }
  }

  Complex ris(int i, const CVector& omega) const { return r[i].cwiseProduct(omega).sum(); }
  Complex bs(int i, const CVector& f) const { return b[i].dot(f); }

  CVector gains(const BeamPlan& plan) const {
    CVector out(rho_ub.size());
    for (int i = 0; i < rho_ub.size(); ++i) {
      out[i] = rho_ub[i] * ris(i, plan.ris_phases[i]) * bs(i, plan.bs_beam);
    }
    return out;
  }
};

inline CVector predict_gains(const std::vector<GainPredictor>& pred, const BeamPlan& plan) {
  CVector rho(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) rho[i] = pred[i].predict(plan.ris_phases[i], plan.bs_beam);
  return rho;
}

inline double plan_objective(const std::vector<GainPredictor>& pred, const BeamPlan& plan,
                             const BoundContext& ctx) {
  return bound_objective(predict_gains(pred, plan), ctx);
}

struct P2Result {
  CVector weights;
  double objective = 0.0;
  Flags flags;
};

/// BS lobe weights minimizing the predicted bound with directional RIS profiles.
inline P2Result optimize_p2_weights(const std::vector<GainPredictor>& pred, const BoundContext& ctx,
                                    int max_iterations = 100) {
  const SceneConfig& scene = *ctx.scene;
  const int k = scene.k();
  const BoundEvaluator objective(ctx);
  const GainModel model(pred, scene);
  CVector ris_part(k);
  for (int i = 0; i < k; ++i) {
    ris_part[i] = model.rho_ub[i] * model.ris(i, directional_pbf(pred[i].aod, pred[i].arrival, scene.n_ris));
  }
  auto eval = [&](const CVector& w) {
    CVector f = CVector::Zero(scene.n_bs);
    for (int i = 0; i < k; ++i) f += w[i] * model.b[i];
    f /= f.norm();
    CVector rho(k);
    for (int i = 0; i < k; ++i) rho[i] = ris_part[i] * model.bs(i, f);
    return objective(rho);
  };

  P2Result out;
  CVector w = CVector::Constant(k, Complex(1.0 / std::sqrt(static_cast<double>(k)), 0.0));
  double f = eval(w);
  double step = 0.25;
  for (int it = 0; it < max_iterations; ++it) {
    const double h = 1e-5;
    CVector grad(k);
    for (int i = 0; i < k; ++i) {
      double d[2];
      for (int part = 0; part < 2; ++part) {
        const Complex dz = part == 0 ? Complex(h, 0.0) : Complex(0.0, h);
        CVector wp = w, wm = w;
        wp[i] += dz;
        wm[i] -= dz;
        d[part] = (eval(wp) - eval(wm)) / (2.0 * h);
      }
      grad[i] = Complex(d[0], d[1]);
    }
    const double gn = grad.norm();
    if (!(gn > 0.0) || !std::isfinite(gn)) break;
    bool improved = false;
    double rel = 0.0;
    for (int b = 0; b < 30; ++b, step *= 0.5) {
      CVector cand = w - step * grad / gn;
      const double cn = cand.norm();
      if (!(cn > 0.0)) continue;
      cand /= cn;
      const double fc = eval(cand);
      if (fc < f) {
        rel = (f - fc) / std::max(std::abs(f), 1e-300);
        w = cand;
        f = fc;
        improved = true;
        step = std::min(step * 2.0, 1.0);
        break;
      }
    }
    if (!improved || rel < 1e-6) break;
  }
  out.weights = w / w.norm();
  out.objective = f;
  return out;
}

struct P1Result {
  BeamPlan plan;
  double objective = 0.0;
  std::vector<double> trace;  // best-so-far objective per outer iteration
  Flags flags;
};

/// Joint RIS/BS design by alternating projected gradient descent on the
/// predicted bound. Gradients with respect to the predicted gains are taken
/// numerically; the map from beams to gains is linear in each block and is
/// differentiated exactly.
inline P1Result optimize_p1_agdm(const std::vector<GainPredictor>& pred, const BoundContext& ctx,
                                 const BeamPlan& init, int max_iterations = 100) {
  const SceneConfig& scene = *ctx.scene;
  const int k = scene.k();
  const BoundEvaluator objective(ctx);
  const GainModel model(pred, scene);
  BeamPlan plan = init;
  CVector rho = model.gains(plan);
  double f = objective(rho);

  P1Result out;
  out.plan = plan;
  out.objective = f;

  // dF/dRe(rho_i) + j dF/dIm(rho_i), by central differences
  auto gain_gradient = [&](const CVector& r, int i) {
    const double h = 1e-5 * std::max(std::abs(r[i]), 1e-300);
    double d[2];
    for (int part = 0; part < 2; ++part) {
      const Complex dz = part == 0 ? Complex(h, 0.0) : Complex(0.0, h);
      CVector rp = r, rm = r;
      rp[i] += dz;
      rm[i] -= dz;
      d[part] = (objective(rp) - objective(rm)) / (2.0 * h);
    }
    return Complex(d[0], d[1]);
  };

  std::vector<double> ris_step(k, 0.5);
  double bs_step = 0.25;
  for (int it = 0; it < max_iterations; ++it) {
    const double f_start = f;

    for (int i = 0; i < k; ++i) {
      const Complex gi = gain_gradient(rho, i);
      const Complex lin = model.rho_ub[i] * model.bs(i, plan.bs_beam);
      const CVector grad = gi * (lin * model.r[i]).conjugate();
      const double gmax = grad.cwiseAbs().maxCoeff();
      if (!(gmax > 0.0) || !std::isfinite(gmax)) continue;
      for (int bt = 0; bt < 20; ++bt, ris_step[i] *= 0.5) {
        CVector cand = plan.ris_phases[i] - ris_step[i] * grad / gmax;
        for (Eigen::Index n = 0; n < cand.size(); ++n) {
          const double m = std::abs(cand[n]);
          cand[n] = m > 1e-300 ? cand[n] / m : plan.ris_phases[i][n];
        }
        CVector rc = rho;
        rc[i] = lin * model.ris(i, cand);
        const double fc = objective(rc);
        if (fc < f) {
          plan.ris_phases[i] = cand;
          rho = rc;
          f = fc;
          ris_step[i] = std::min(ris_step[i] * 2.0, 2.0);
          break;
        }
      }
    }

    CVector grad = CVector::Zero(scene.n_bs);
    for (int i = 0; i < k; ++i) {
      const Complex gi = gain_gradient(rho, i);
      const Complex lin = model.rho_ub[i] * model.ris(i, plan.ris_phases[i]);
      grad += gi * std::conj(lin) * model.b[i];
    }
    const double gn = grad.norm();
    if (gn > 0.0 && std::isfinite(gn)) {
      for (int bt = 0; bt < 20; ++bt, bs_step *= 0.5) {
        CVector cand = plan.bs_beam - bs_step * grad / gn;
        const double n = cand.norm();
        if (!(n > 1e-300)) continue;
        cand /= n;
        BeamPlan trial = plan;
        trial.bs_beam = cand;
        const CVector rc = model.gains(trial);
        const double fc = objective(rc);
        if (fc < f) {
          plan.bs_beam = cand;
          rho = rc;
          f = fc;
          bs_step = std::min(bs_step * 2.0, 1.0);
          break;
        }
      }
    }

    out.trace.push_back(f);
    if (f < out.objective) {
      out.objective = f;
      out.plan = plan;
    }
    if ((f_start - f) <= 1e-6 * std::abs(f_start)) break;
  }
  return out;
}

/// Independent uniform RIS phases and a normalized complex Gaussian BS beam.
inline BeamPlan random_plan(const SceneConfig& scene, Rng& rng) {
  BeamPlan plan;
  std::uniform_real_distribution<double> phase(-kPi, kPi);
  for (int i = 0; i < scene.k(); ++i) {
    CVector w(scene.n_ris);
    for (int n = 0; n < scene.n_ris; ++n) w[n] = std::polar(1.0, phase(rng));
    plan.ris_phases.push_back(w);
  }
  CVector f = complex_gaussian(scene.n_bs, 1.0, rng);
  plan.bs_beam = f / f.norm();
  return plan;
}

}  // namespace bult

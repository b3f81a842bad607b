#pragma once

// Position tracking by message passing between the Markov chain of user
// positions and the per-RIS angle estimates.
//
// Messages toward the position are Von Mises extrinsics on phi_i = pi*theta_i,
// where theta_i is a nonlinear function of the position. Their product is
// approximated by a Gaussian at its local maximum (Laplace). Messages from the
// position back to each angle are Gaussians projected onto a Von Mises by
// linearizing theta_i around the mean.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "bult/aoa.hpp"
#include "bult/gaussian.hpp"
#include "bult/signal.hpp"

namespace bult {

struct TrackerConfig {
  Eigen::Matrix3d c_q = Eigen::Vector3d(0.03, 0.03, 0.01).asDiagonal();
  double damping = 0.5;  // weight on the new message
  double gdm_step = 1e-2;
  int gdm_max_iterations = 200;
  double gdm_tolerance = 1e-6;
  double hessian_floor = 1e-6;  // 1/m^2, floor on the eigenvalues of -H
  int max_outer_iterations = 15;
  double outer_tolerance = 1e-4;  // meters
  GaussianMsg initial_prior{Position3(-10.0, 0.0, 0.0), 0.01 * Eigen::Matrix3d::Identity()};
  bool flat_initial_prior = false;
  double flat_prior_variance = 1e4;
  double matching_gate = 8.0;  // log-density margin below the best assignment still considered
  AoaOptions aoa;

  void validate() const {
    if (!(damping > 0.0 && damping <= 1.0)) throw ConfigError("damping must lie in (0, 1]");
    if (!(gdm_step > 0.0) || gdm_max_iterations < 1) throw ConfigError("invalid ascent settings");
    if (max_outer_iterations < 1) throw ConfigError("max_outer_iterations must be positive");
    if (!(flat_prior_variance > 0.0)) throw ConfigError("flat_prior_variance must be positive");
    if (!(matching_gate >= 0.0)) throw ConfigError("matching_gate must be non-negative");
  }

  GaussianMsg first_prior() const {
    if (!flat_initial_prior) return initial_prior;
    return {Position3::Zero(), flat_prior_variance * Eigen::Matrix3d::Identity()};
  }
};

/// A Von Mises message attached to the RIS whose angle it describes.
struct AngleMessage {
  VonMisesMsg msg;
  int ris = 0;
};

namespace detail {

struct Objective {
  double f = 0.0;
  Eigen::Vector3d g = Eigen::Vector3d::Zero();
  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
};

// sum_j kappa_j cos(pi theta_j(p) - mu_j), optionally plus a Gaussian log prior.
inline Objective angle_objective(const std::vector<AngleMessage>& msgs, const SceneConfig& scene,
                                 const Position3& p, const GaussianInfo* prior) {
  Objective o;
  for (const auto& m : msgs) {
    if (m.msg.kappa == 0.0) continue;
    const Position3& anchor = scene.ris.at(m.ris).position;
    const double th = aoa_cosine(anchor, p, scene.user_direction);
    const Eigen::Vector3d gr = aoa_gradient(anchor, p, scene.user_direction);
    const Eigen::Matrix3d he = aoa_hessian(anchor, p, scene.user_direction);
    const double arg = kPi * th - m.msg.mu;
    const double c = std::cos(arg), s = std::sin(arg);
    o.f += m.msg.kappa * c;
    o.g += -m.msg.kappa * s * kPi * gr;
    o.h += -m.msg.kappa * (kPi * kPi * c * gr * gr.transpose() + kPi * s * he);
  }
  if (prior) {
    const Eigen::Vector3d r = p - prior->precision.ldlt().solve(prior->shift);
    o.f += -0.5 * r.dot(prior->precision * r);
    o.g += -prior->precision * r;
    o.h += -prior->precision;
  }
  return o;
}

struct AscentResult {
  Position3 mean;
  Eigen::Matrix3d neg_hessian;  // floored, SPD
  double value = 0.0;
  Flags flags;
};

// Local maximization of the objective from `start`: Newton steps on a
// positive-definite modification of -H, with backtracking; plain gradient
// steps of the configured size as fallback.
inline AscentResult maximize_angles(const std::vector<AngleMessage>& msgs, const SceneConfig& scene,
                                    const Position3& start, const TrackerConfig& cfg,
                                    const GaussianInfo* prior = nullptr, int max_iterations = -1) {
  double kappa_sum = 0.0;
  for (const auto& m : msgs) kappa_sum += m.msg.kappa;
  if (kappa_sum == 0.0 && !prior) {
    throw NoInformationError("all angle messages are uninformative");
  }
  const int iters = max_iterations > 0 ? max_iterations : cfg.gdm_max_iterations;
  const double grad_tol = cfg.gdm_tolerance * std::max(1.0, kappa_sum);
  constexpr double kMaxStep = 5.0;

  AscentResult out;
  Position3 p = start;
  Objective o = angle_objective(msgs, scene, p, prior);
  bool converged = false;
  for (int it = 0; it < iters; ++it) {
    if (o.g.norm() <= grad_tol) {
      converged = true;
      break;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(-0.5 * (o.h + o.h.transpose()));
    const double scale = std::max(es.eigenvalues().cwiseAbs().maxCoeff(), 1e-300);
    const Eigen::Vector3d ev = es.eigenvalues().cwiseAbs().cwiseMax(1e-8 * scale);
    Eigen::Vector3d dir =
        es.eigenvectors() * (es.eigenvectors().transpose() * o.g).cwiseQuotient(ev);
    if (dir.norm() > kMaxStep) dir *= kMaxStep / dir.norm();

    bool accepted = false;
    double t = 1.0;
    Objective trial;
    Position3 next;
    for (int b = 0; b < 40; ++b, t *= 0.5) {
      next = p + t * dir;
      trial = angle_objective(msgs, scene, next, prior);
      if (trial.f >= o.f) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      out.flags.set(Flag::kOptimizerFallback);
      double step = cfg.gdm_step;
      for (int b = 0; b < 60; ++b, step *= 0.5) {
        next = p + step * o.g / o.g.norm();
        trial = angle_objective(msgs, scene, next, prior);
        if (trial.f > o.f) {
          accepted = true;
          break;
        }
      }
    }
    if (!accepted) {
      converged = true;  // no ascent direction left at this resolution
      break;
    }
    const double moved = (next - p).norm();
    p = next;
    o = trial;
    if (moved < 1e-9) {
      converged = true;
      break;
    }
  }
  if (!converged) out.flags.set(Flag::kNotConverged);

  Flags floor_flags;
  out.neg_hessian = floor_eigenvalues(-o.h, cfg.hessian_floor, &floor_flags);
  if (floor_flags.any()) out.flags.set(Flag::kHessianRegularized);
  out.mean = p;
  out.value = o.f;
  return out;
}

}  // namespace detail

/// Gaussian approximation of the product of angle messages, as a function of
/// the user position. Mean is the local maximizer reached from `start`.
inline GaussianMsg likelihood_product_gaussian(const std::vector<AngleMessage>& msgs,
                                               const Position3& start, const SceneConfig& scene,
                                               const TrackerConfig& cfg, Flags* flags = nullptr) {
  const auto r = detail::maximize_angles(msgs, scene, start, cfg);
  if (flags) *flags |= r.flags;
  return {r.mean, spd_inverse(r.neg_hessian)};
}

/// The same product with message `omit` left out.
inline GaussianMsg cavity_product(const std::vector<AngleMessage>& msgs, int omit,
                                  const Position3& start, const SceneConfig& scene,
                                  const TrackerConfig& cfg, Flags* flags = nullptr) {
  std::vector<AngleMessage> rest;
  for (int j = 0; j < static_cast<int>(msgs.size()); ++j) {
    if (j != omit) rest.push_back(msgs[j]);
  }
  return likelihood_product_gaussian(rest, start, scene, cfg, flags);
}

/// Von Mises message on phi = pi*theta induced by a Gaussian position belief,
/// with theta the arrival cosine from the anchor at `anchor`.
inline VonMisesMsg position_to_angle_vm(const GaussianMsg& msg, const Position3& anchor,
                                        const UnitVector3& e_u, Flags* flags = nullptr) {
  const Eigen::Vector3d r = anchor - msg.mean;
  const double d = r.norm();
  if (d < 1.0) {
    // inside the far-field guard the linearization is meaningless
    if (flags) flags->set(Flag::kDegenerateGeometry);
    return {0.0, 0.0};
  }
  const Eigen::Vector3d ei = r / d;
  double theta = std::clamp(ei.dot(e_u.vec()), -1.0, 1.0);
  const double mu = kPi * theta;
  constexpr double kEdge = 1.0 - 1e-6;
  if (std::abs(theta) > kEdge) {
    theta = std::copysign(kEdge, theta);
    if (flags) flags->set(Flag::kEndfireClamped);
  }
  Eigen::Vector3d v = ei.cross(ei.cross(e_u.vec()));
  if (v.norm() < 1e-9) {
    if (flags) flags->set(Flag::kDegenerateGeometry);
    // any direction orthogonal to the axis
    v = ei.unitOrthogonal();
  }
  v.normalize();
  const double spread = v.dot(msg.cov * v);
  if (!(spread > 0.0)) throw SingularMatrixError("position_to_angle_vm: degenerate covariance");
  const double kappa = d * d / (kPi * kPi * (1.0 - theta * theta) * spread);
  return {VonMisesMsg::wrap_angle(mu), kappa};
}

struct SlotEstimate {
  Position3 position = Position3::Zero();
  Eigen::Matrix3d cov = Eigen::Matrix3d::Identity();
  Eigen::VectorXd aoa;  // cosines, per RIS
  CVector gains;        // per RIS
  double noise_var = 0.0;
  int outer_iterations = 0;
  Flags flags;
};

struct TrackerState {
  bool started = false;
  int slot = 0;
  GaussianMsg forward;                   // belief carried to the next slot
  std::vector<VonMisesMsg> extrinsics;   // angle -> position, per RIS
  std::vector<VonMisesMsg> priors;       // position -> angle, per RIS
  std::vector<GaussianInfo> to_angle;    // damped position -> angle Gaussians
  std::vector<int> matching;             // matching[i] = estimate index assigned to RIS i
  std::optional<AoaPosterior> aoa_hyper;
};

inline TrackerState make_tracker_state(const TrackerConfig& cfg) {
  TrackerState s;
  s.forward = cfg.first_prior();
  return s;
}

/// Assignment of first-slot angle estimates to RISs by exhaustive search. For
/// each candidate the belief prior x likelihood is approximated at its mode;
/// the candidate with the smallest covariance trace wins, earlier (lexicographic)
/// candidates winning ties.
inline std::vector<int> init_matching(const std::vector<VonMisesMsg>& estimates,
                                      const GaussianMsg& prior, const SceneConfig& scene,
                                      const TrackerConfig& cfg, Flags* flags = nullptr) {
  const int k = static_cast<int>(estimates.size());
  if (k != scene.k()) throw DimensionError("init_matching: one estimate per RIS required");
  if (k > 9) throw ConfigError("init_matching: exhaustive search limited to 9 RISs");
  const GaussianInfo prior_info = GaussianInfo::from(prior);
  const Position3 center = 0.5 * (scene.bounds_min + scene.bounds_max);
  std::vector<Position3> starts{prior.mean};
  if ((center - prior.mean).norm() > 1e-6) starts.push_back(center);

  std::vector<int> perm(k);
  std::iota(perm.begin(), perm.end(), 0);
  struct Candidate {
    std::vector<int> perm;
    double value, trace;
  };
  std::vector<Candidate> cands;
  do {
    std::vector<AngleMessage> msgs(k);
    for (int i = 0; i < k; ++i) msgs[i] = {estimates[perm[i]], i};
    Candidate c{perm, -std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
    for (const auto& s : starts) {
      try {
        const auto r = detail::maximize_angles(msgs, scene, s, cfg, &prior_info, 100);
        if (r.value > c.value) {
          c.value = r.value;
          c.trace = spd_inverse(r.neg_hessian).trace();
        }
      } catch (const GeometryError&) {
        if (flags) flags->set(Flag::kDegenerateGeometry);
      }
    }
    cands.push_back(std::move(c));
  } while (std::next_permutation(perm.begin(), perm.end()));

  // Smallest trace among the assignments that explain the data about as well as
  // the best one; a tight fit to the wrong cones would otherwise win on trace.
  double top = -std::numeric_limits<double>::infinity();
  for (const auto& c : cands) top = std::max(top, c.value);
  std::vector<int> best = cands.front().perm;
  double best_trace = std::numeric_limits<double>::infinity();
  for (const auto& c : cands) {
    if (c.value < top - cfg.matching_gate) continue;
    if (c.trace < best_trace * (1.0 - 1e-9)) {
      best_trace = c.trace;
      best = c.perm;
    }
  }
  return best;
}

namespace detail {

inline std::vector<AngleMessage> attach(const std::vector<VonMisesMsg>& v) {
  std::vector<AngleMessage> out(v.size());
  for (int i = 0; i < static_cast<int>(v.size()); ++i) out[i] = {v[i], i};
  return out;
}

// Gaussian in information form; an empty message set gives zero information.
inline GaussianInfo product_info(const std::vector<AngleMessage>& msgs, const Position3& start,
                                 const SceneConfig& scene, const TrackerConfig& cfg,
                                 Flags& flags) {
  try {
    const auto r = maximize_angles(msgs, scene, start, cfg);
    flags |= r.flags;
    return {r.neg_hessian, r.neg_hessian * r.mean};
  } catch (const NoInformationError&) {
    flags.set(Flag::kNoInformation);
    return {};
  }
}

inline AoaPosterior permute_posterior(const AoaPosterior& in, const std::vector<int>& perm) {
  AoaPosterior out = in;
  for (int i = 0; i < static_cast<int>(perm.size()); ++i) {
    out.aoa[i] = in.aoa[perm[i]];
    out.gain_mean[i] = in.gain_mean[perm[i]];
    out.gain_var[i] = in.gain_var[perm[i]];
  }
  return out;
}

}  // namespace detail

/// One slot of the tracker: predict, then alternate angle estimation and
/// position fusion until the belief mean settles.
inline SlotEstimate run_slot(TrackerState& state, const CVector& y, const TrackerConfig& cfg,
                             const SceneConfig& scene) {
  const int k = scene.k();
  SlotEstimate est;
  Flags& flags = est.flags;

  const GaussianMsg psi = markov_predict(state.forward, cfg.c_q);
  const GaussianInfo psi_info = GaussianInfo::from(psi);

  std::optional<AoaPosterior> warm = state.aoa_hyper;
  std::vector<VonMisesMsg> ext(k, VonMisesMsg{});
  std::vector<GaussianInfo> cav(k);  // zero information
  Position3 belief_mean = psi.mean;

  if (!state.started && cfg.flat_initial_prior) {
    const std::vector<VonMisesMsg> flat(k, VonMisesMsg{});
    const AoaPosterior raw = estimate_aoa(y, flat, nullptr, cfg.aoa);
    state.matching = init_matching(raw.aoa, psi, scene, cfg, &flags);
    warm = detail::permute_posterior(raw, state.matching);
    ext = warm->aoa;
    const auto msgs = detail::attach(ext);
    const GaussianInfo g = detail::product_info(msgs, belief_mean, scene, cfg, flags);
    const GaussianInfo b{psi_info.precision + g.precision, psi_info.shift + g.shift};
    belief_mean = b.to_moment().mean;
    for (int i = 0; i < k; ++i) {
      cav[i] = detail::product_info(
          [&] {
            auto m = msgs;
            m.erase(m.begin() + i);
            return m;
          }(),
          belief_mean, scene, cfg, flags);
    }
  } else if (!state.started) {
    state.matching.resize(k);
    std::iota(state.matching.begin(), state.matching.end(), 0);
  }

  std::vector<GaussianInfo> to_angle(k);
  std::vector<VonMisesMsg> priors(k);
  AoaPosterior post;
  GaussianInfo full;
  int outer = 0;
  bool settled = false;
  for (; outer < cfg.max_outer_iterations; ++outer) {
    for (int i = 0; i < k; ++i) {
      GaussianInfo fresh{psi_info.precision + cav[i].precision, psi_info.shift + cav[i].shift};
      if (outer > 0 && cfg.damping < 1.0) {
        fresh.precision = cfg.damping * fresh.precision + (1.0 - cfg.damping) * to_angle[i].precision;
        fresh.shift = cfg.damping * fresh.shift + (1.0 - cfg.damping) * to_angle[i].shift;
      }
      to_angle[i] = fresh;
      priors[i] = position_to_angle_vm(fresh.to_moment(), scene.ris[i].position,
                                       scene.user_direction, &flags);
    }

    post = estimate_aoa(y, priors, warm ? &*warm : nullptr, cfg.aoa);
    if (!post.converged) flags.set(Flag::kNotConverged);
    warm = post;

    for (int i = 0; i < k; ++i) {
      VonMisesMsg e = vm_extrinsic(post.aoa[i], priors[i]);
      // an extrinsic pointing against the posterior means the fit lost
      // concentration relative to the prior; it carries no usable information
      if (e.kappa > 0.0 && std::cos(e.mu - post.aoa[i].mu) < 0.0) {
        e = {post.aoa[i].mu, 0.0};
        flags.set(Flag::kExtrinsicDiscarded);
      }
      ext[i] = e;
    }

    const auto msgs = detail::attach(ext);
    full = detail::product_info(msgs, belief_mean, scene, cfg, flags);
    const GaussianInfo belief{psi_info.precision + full.precision, psi_info.shift + full.shift};
    const Position3 next_mean = belief.to_moment().mean;
    for (int i = 0; i < k; ++i) {
      auto rest = msgs;
      rest.erase(rest.begin() + i);
      cav[i] = detail::product_info(rest, next_mean, scene, cfg, flags);
    }
    const double moved = (next_mean - belief_mean).norm();
    belief_mean = next_mean;
    if (moved < cfg.outer_tolerance) {
      settled = true;
      ++outer;
      break;
    }
  }
  if (!settled) flags.set(Flag::kNotConverged);

  const GaussianInfo belief{psi_info.precision + full.precision, psi_info.shift + full.shift};
  GaussianMsg fwd = belief.to_moment();
  fwd.cov = floor_eigenvalues(fwd.cov, 1e-12, &flags);

  est.position = fwd.mean;
  est.cov = fwd.cov;
  est.aoa.resize(k);
  for (int i = 0; i < k; ++i) {
    est.aoa[i] = std::clamp(fused_belief(ext[i], priors[i]).mu / kPi, -1.0, 1.0);
  }
  est.gains = post.gain_mean;
  est.noise_var = post.noise_var;
  est.outer_iterations = outer;

  state.forward = fwd;
  state.extrinsics = ext;
  state.priors = priors;
  state.to_angle = to_angle;
  state.aoa_hyper = post;
  state.started = true;
  ++state.slot;
  return est;
}

}  // namespace bult

#pragma once

// Monte Carlo experiment runner: closed-loop tracking over random
// trajectories, bounds along the true trajectory, and CSV output.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <functional>
#include <limits>
#include <numeric>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "bult/beamforming.hpp"
#include "bult/crb.hpp"
#include "bult/tracker.hpp"

namespace bult {

enum class BeamMode { kDirectional, kBcrb, kRandom };

inline const char* to_string(BeamMode m) {
  switch (m) {
    case BeamMode::kDirectional: return "directional";
    case BeamMode::kBcrb: return "bcrb";
    case BeamMode::kRandom: return "random";
  }
  return "?";
}

inline BeamMode parse_beam_mode(const std::string& s) {
  if (s == "directional") return BeamMode::kDirectional;
  if (s == "bcrb") return BeamMode::kBcrb;
  if (s == "random") return BeamMode::kRandom;
  throw ConfigError("unknown beamforming mode '" + s + "'");
}

enum class Method { kBult, kBaseline };

struct ExperimentSpec {
  SceneConfig scene = reference_scene();
  TrackerConfig tracker;
  BeamMode mode = BeamMode::kDirectional;
  bool baseline = false;           // also run the flat-prior baseline
  std::vector<double> powers_dbm{0.0};
  std::vector<int> n_ris_values;   // empty: scene.n_ris only
  int trials = 10;
  std::uint64_t seed = 1;
  unsigned threads = 0;            // 0: hardware concurrency

  void validate() const {
    scene.validate();
    tracker.validate();
    if (trials < 1) throw ConfigError("trials must be at least 1");
    if (powers_dbm.empty()) throw ConfigError("power sweep is empty");
    for (int n : n_ris_values) {
      if (n < 1) throw ConfigError("RIS element counts must be positive");
    }
  }
};

struct MetricsRow {
  std::string method;
  std::string mode;
  int n_ris_elements = 0;
  double power_dbm = 0.0;
  int trials = 0;
  int slots = 0;
  double rmse_position = 0.0;
  double rmse_aoa = 0.0;
  double bcrb_position = 0.0;
  double bcrb_aoa = 0.0;
  int flagged_slots = 0;
  Flags flags;
  double runtime_ms = 0.0;
};

/// Per-slot record of one trajectory.
struct SlotRecord {
  Position3 truth;
  Position3 estimate;
  Eigen::VectorXd aoa_truth;
  Eigen::VectorXd aoa_estimate;
  double bcrb_position = 0.0;  // trace of the position block, m^2
  double bcrb_aoa = 0.0;       // mean over RISs of the per-angle bound
  Flags flags;
};

using TrialRecord = std::vector<SlotRecord>;

struct RmsePair {
  double position = 0.0;
  double aoa = 0.0;
};

/// Root mean square errors averaged per slot, then over trials.
inline RmsePair compute_rmse(const std::vector<TrialRecord>& trials) {
  if (trials.empty()) throw DimensionError("compute_rmse: no trials");
  double pos = 0.0, ang = 0.0;
  for (const auto& tr : trials) {
    if (tr.empty()) throw DimensionError("compute_rmse: empty trial");
    double p = 0.0, a = 0.0;
    Eigen::Index k = tr.front().aoa_truth.size();
    for (const auto& s : tr) {
      if (s.aoa_truth.size() != s.aoa_estimate.size() || s.aoa_truth.size() != k) {
        throw DimensionError("compute_rmse: estimate and truth lengths differ");
      }
      p += (s.estimate - s.truth).squaredNorm();
      a += (s.aoa_estimate - s.aoa_truth).squaredNorm();
    }
    pos += p / tr.size();
    ang += k > 0 ? a / (tr.size() * static_cast<double>(k)) : 0.0;
  }
  return {std::sqrt(pos / trials.size()), std::sqrt(ang / trials.size())};
}

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Independent stream `stream` of trial `trial` under master seed `seed`.
inline Rng stream_rng(std::uint64_t seed, int trial, int stream) {
  std::uint64_t s = splitmix64(seed);
  s = splitmix64(s ^ static_cast<std::uint64_t>(trial));
  s = splitmix64(s ^ (static_cast<std::uint64_t>(stream) << 32));
  return Rng(s);
}

enum Stream { kTrajectory = 0, kNoise = 1, kBeams = 2 };

struct ConeFit {
  Position3 position;
  std::vector<int> assignment;  // assignment[i] = estimate index for RIS i
  double residual = 0.0;        // truncated squared residual
};

// Each RIS takes the nearest estimate (several RISs may share one when the
// estimator merged two paths).
inline std::vector<int> nearest_assignment(const Eigen::VectorXd& predicted,
                                           const Eigen::VectorXd& estimates) {
  std::vector<int> out(predicted.size());
  for (Eigen::Index i = 0; i < predicted.size(); ++i) {
    Eigen::Index j;
    (estimates.array() - predicted[i]).abs().minCoeff(&j);
    out[i] = static_cast<int>(j);
  }
  return out;
}

// Intersection of the arrival-angle cones by Gauss-Newton from a grid of
// starts, iterates kept inside the bounding box. Cones whose residual exceeds
// a cutoff are left out of the step once at least four cones agree; the cutoff
// shrinks from 0.5 to `gate` over the first iterations. In the score every
// cone contributes at most gate^2, so one merged or spurious path cannot drag
// the fit away.
inline ConeFit intersect_cones(const Eigen::VectorXd& est, const SceneConfig& scene,
                               double gate = 0.02) {
  const int k = scene.k();
  ConeFit best;
  best.residual = std::numeric_limits<double>::infinity();
  const int grid[3] = {4, 4, 2};
  auto score = [&](const Position3& p, std::vector<int>& asg) {
    const Eigen::VectorXd pred = user_aoas(scene, p);
    asg = nearest_assignment(pred, est);
    double res = 0.0;
    for (int i = 0; i < k; ++i) res += std::min(std::pow(est[asg[i]] - pred[i], 2), gate * gate);
    return res;
  };
  for (int gx = 0; gx < grid[0]; ++gx) {
    for (int gy = 0; gy < grid[1]; ++gy) {
      for (int gz = 0; gz < grid[2]; ++gz) {
        Position3 p;
        const int g[3] = {gx, gy, gz};
        for (int a = 0; a < 3; ++a) {
          p[a] = scene.bounds_min[a] +
                 (g[a] + 0.5) / grid[a] * (scene.bounds_max[a] - scene.bounds_min[a]);
        }
        try {
          for (int it = 0; it < 30; ++it) {
            const Eigen::VectorXd pred = user_aoas(scene, p);
            const std::vector<int> asg = nearest_assignment(pred, est);
            Eigen::MatrixXd jac(k, 3);
            Eigen::VectorXd r(k);
            for (int i = 0; i < k; ++i) {
              jac.row(i) = aoa_gradient(scene.ris[i].position, p, scene.user_direction).transpose();
              r[i] = est[asg[i]] - pred[i];
            }
            const double cut = std::max(gate, 0.5 * std::pow(0.7, it));
            const Eigen::ArrayXd inlier = (r.array().abs() < cut).cast<double>();
            if (inlier.sum() >= 4) {
              jac = inlier.matrix().asDiagonal() * jac;
              r = inlier.matrix().asDiagonal() * r;
            }
            Eigen::Vector3d step = jac.colPivHouseholderQr().solve(r);
            if (step.norm() > 5.0) step *= 5.0 / step.norm();
            p = (p + step).cwiseMax(scene.bounds_min).cwiseMin(scene.bounds_max);
            if (step.norm() < 1e-9) break;
          }
          std::vector<int> asg;
          const double res = score(p, asg);
          if (p.allFinite() && res < best.residual) best = {p, asg, res};
        } catch (const GeometryError&) {
        }
      }
    }
  }
  if (!std::isfinite(best.residual)) {
    best.position = 0.5 * (scene.bounds_min + scene.bounds_max);
    best.assignment.resize(k);
    std::iota(best.assignment.begin(), best.assignment.end(), 0);
  }
  return best;
}

struct TrialSetup {
  const SceneConfig* scene;
  const TrackerConfig* tracker;
  BeamMode mode;
  Method method;
  double power_w;
  std::uint64_t seed;
  int trial;
};

// Closed loop over one trajectory: design beams from the previous estimate,
// observe, estimate.
inline TrialRecord run_trial(const TrialSetup& st) {
  const SceneConfig& scene = *st.scene;
  const int k = scene.k();
  Rng traj_rng = stream_rng(st.seed, st.trial, kTrajectory);
  Rng noise_rng = stream_rng(st.seed, st.trial, kNoise);
  Rng beam_rng = stream_rng(st.seed, st.trial, kBeams);
  const std::vector<Position3> truth = generate_trajectory(scene, traj_rng);

  TrackerConfig tcfg = *st.tracker;
  if (!tcfg.flat_initial_prior) tcfg.initial_prior = {scene.initial_position, scene.initial_cov};
  TrackerState state = make_tracker_state(tcfg);

  FimMatrix jb_true = initial_bfim(scene.initial_cov, k);
  FimMatrix jb_est = jb_true;
  Position3 est_prev = tcfg.flat_initial_prior ? scene.initial_position : tcfg.initial_prior.mean;
  CVector rho_prev;          // gain estimates of the previous slot
  CVector rho_ub_prev = CVector::Zero(k);
  BeamPlan plan_prev;
  bool have_prev = false;

  TrialRecord rec;
  rec.reserve(truth.size());
  for (std::size_t t = 0; t < truth.size(); ++t) {
    SlotRecord sr;
    Flags& flags = sr.flags;

    // Beam design from the previous estimate.
    BeamPlan plan;
    std::vector<GainPredictor> pred;
    if (have_prev) {
      CVector rho_ub(k);
      for (int i = 0; i < k; ++i) {
        const double aod_prev = estimate_aod(est_prev, scene.ris[i]);
        rho_ub[i] = calibrate_gain(rho_prev[i], plan_prev, aod_prev, scene, i, rho_ub_prev[i], &flags);
      }
      rho_ub_prev = rho_ub;
      pred = make_predictors(scene, rho_ub, est_prev);
    } else {
      pred = make_predictors(scene, CVector::Zero(k), est_prev);
    }
    const CVector equal = CVector::Constant(k, Complex(1.0 / std::sqrt(double(k)), 0.0));

    if (st.mode == BeamMode::kRandom) {
      plan = random_plan(scene, beam_rng);
    } else if (!have_prev || st.method == Method::kBaseline) {
      // the baseline keeps no information recursion, so it splits power evenly
      plan = directional_plan(pred, equal, scene);
    } else {
      BoundContext ctx;
      ctx.scene = &scene;
      ctx.est_position = est_prev;
      ctx.c_q = tcfg.c_q;
      ctx.noise_power = scene.noise_power;
      ctx.j_prev = jb_est;
      const P2Result p2 = optimize_p2_weights(pred, ctx);
      plan = directional_plan(pred, p2.weights, scene);
      if (st.mode == BeamMode::kBcrb) {
        const P1Result p1 = optimize_p1_agdm(pred, ctx, plan);
        plan = p1.plan;
        flags |= p1.flags;
      }
      flags |= p2.flags;
    }

    // Observation.
    const Position3& p = truth[t];
    const Eigen::VectorXd theta = user_aoas(scene, p);
    const CVector rho = path_gains(scene, p, plan, st.power_w);
    const CVector y = synthesize(theta, rho, scene.noise_power, scene.n_user, noise_rng);

    // Bound along the true trajectory.
    jb_true = bfim_step(jb_true, fim_single_slot(ParamVector::from_gains(p, rho), scene, scene.noise_power),
                        scene.mobility_cov, &flags);
    {
      Flags bound_flags;
      sr.bcrb_position = position_bcrb(jb_true, &bound_flags).sum();
      sr.bcrb_aoa = aoa_bound(jb_true, p, scene, AoaBoundForm::kStandard, &bound_flags).mean();
    }

    // Estimation.
    if (st.method == Method::kBult) {
      const SlotEstimate est = run_slot(state, y, tcfg, scene);
      sr.estimate = est.position;
      sr.aoa_estimate = est.aoa;
      rho_prev = est.gains;
      flags |= est.flags;
    } else {
      const std::vector<VonMisesMsg> flat(k, VonMisesMsg{});
      const AoaPosterior post = estimate_aoa(y, flat, nullptr, tcfg.aoa);
      Eigen::VectorXd cos_est(k);
      for (int i = 0; i < k; ++i) cos_est[i] = post.cosine(i);
      const ConeFit fit = intersect_cones(cos_est, scene);
      sr.estimate = fit.position;
      sr.aoa_estimate.resize(k);
      rho_prev.resize(k);
      for (int i = 0; i < k; ++i) {
        sr.aoa_estimate[i] = cos_est[fit.assignment[i]];
        rho_prev[i] = post.gain_mean[fit.assignment[i]];
      }
    }
    sr.truth = p;
    sr.aoa_truth = theta;

    // Estimated information for the next design.
    try {
      jb_est = bfim_step(jb_est,
                         fim_single_slot(ParamVector::from_gains(sr.estimate, rho_prev), scene,
                                         scene.noise_power),
                         tcfg.c_q);
    } catch (const GeometryError&) {
      flags.set(Flag::kDegenerateGeometry);
    }
    est_prev = sr.estimate;
    plan_prev = plan;
    have_prev = true;
    rec.push_back(std::move(sr));
  }
  return rec;
}

template <class Fn>
void parallel_for(int n, unsigned threads, Fn&& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(std::max(n, 1)));
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace detail

/// Trial records of one configuration, in trial order.
inline std::vector<TrialRecord> run_configuration(const ExperimentSpec& spec, const SceneConfig& scene,
                                                  Method method, double power_dbm) {
  std::vector<TrialRecord> out(spec.trials);
  detail::parallel_for(spec.trials, spec.threads, [&](int trial) {
    detail::TrialSetup st{&scene, &spec.tracker, spec.mode, method, dbm_to_watts(power_dbm),
                          spec.seed, trial};
    out[trial] = detail::run_trial(st);
  });
  return out;
}

inline MetricsRow summarize(const std::vector<TrialRecord>& trials, const std::string& method,
                            BeamMode mode, int n_ris, double power_dbm) {
  MetricsRow row;
  row.method = method;
  row.mode = to_string(mode);
  row.n_ris_elements = n_ris;
  row.power_dbm = power_dbm;
  row.trials = static_cast<int>(trials.size());
  row.slots = trials.empty() ? 0 : static_cast<int>(trials.front().size());
  const RmsePair r = compute_rmse(trials);
  row.rmse_position = r.position;
  row.rmse_aoa = r.aoa;
  double bp = 0.0, ba = 0.0;
  std::size_t count = 0;
  for (const auto& tr : trials) {
    for (const auto& s : tr) {
      bp += s.bcrb_position;
      ba += s.bcrb_aoa;
      row.flags |= s.flags;
      if (s.flags.any()) ++row.flagged_slots;
      ++count;
    }
  }
  row.bcrb_position = std::sqrt(bp / count);
  row.bcrb_aoa = std::sqrt(ba / count);
  return row;
}

/// Optional per-slot sink; called in deterministic order.
using TraceSink = std::function<void(const MetricsRow&, int trial, int slot, const SlotRecord&)>;

inline std::vector<MetricsRow> run_experiment(const ExperimentSpec& spec, const TraceSink& trace = {}) {
  spec.validate();
  std::vector<int> sizes = spec.n_ris_values;
  if (sizes.empty()) sizes.push_back(spec.scene.n_ris);
  std::vector<Method> methods{Method::kBult};
  if (spec.baseline) methods.push_back(Method::kBaseline);

  std::vector<MetricsRow> rows;
  for (Method method : methods) {
    for (int n_ris : sizes) {
      SceneConfig scene = spec.scene;
      scene.n_ris = n_ris;
      for (double pdbm : spec.powers_dbm) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto trials = run_configuration(spec, scene, method, pdbm);
        MetricsRow row = summarize(trials, method == Method::kBult ? "bult" : "baseline_flat_prior",
                                   spec.mode, n_ris, pdbm);
        row.runtime_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        if (trace) {
          for (int tr = 0; tr < static_cast<int>(trials.size()); ++tr) {
            for (int s = 0; s < static_cast<int>(trials[tr].size()); ++s) trace(row, tr, s, trials[tr][s]);
          }
        }
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

inline std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

/// CSV text of the metrics; runtime is included only on request because it
/// differs between otherwise identical runs.
inline std::string metrics_csv(const std::vector<MetricsRow>& rows, bool with_runtime = false) {
  std::ostringstream os;
  os << "method,mode,n_ris_elements,power_dbm,trials,slots,rmse_position_m,rmse_aoa,"
        "bcrb_position_m,bcrb_aoa,rmse_over_bcrb,flagged_slots,flags";
  if (with_runtime) os << ",runtime_ms";
  os << '\n';
  for (const auto& r : rows) {
    os << r.method << ',' << r.mode << ',' << r.n_ris_elements << ',' << format_number(r.power_dbm)
       << ',' << r.trials << ',' << r.slots << ',' << format_number(r.rmse_position) << ','
       << format_number(r.rmse_aoa) << ',' << format_number(r.bcrb_position) << ','
       << format_number(r.bcrb_aoa) << ','
       << format_number(r.bcrb_position > 0 ? r.rmse_position / r.bcrb_position : 0.0) << ','
       << r.flagged_slots << ',' << r.flags.to_string();
    if (with_runtime) os << ',' << format_number(r.runtime_ms);
    os << '\n';
  }
  return os.str();
}

inline std::string trace_header(int k) {
  std::ostringstream os;
  os << "method,mode,n_ris_elements,power_dbm,trial,slot,true_x,true_y,true_z,est_x,est_y,est_z,"
        "bcrb_position_m2";
  for (int i = 0; i < k; ++i) os << ",aoa_true_" << i << ",aoa_est_" << i;
  os << ",flags\n";
  return os.str();
}

inline std::string trace_line(const MetricsRow& row, int trial, int slot, const SlotRecord& s) {
  std::ostringstream os;
  os << row.method << ',' << row.mode << ',' << row.n_ris_elements << ','
     << format_number(row.power_dbm) << ',' << trial << ',' << slot + 1;
  for (int a = 0; a < 3; ++a) os << ',' << format_number(s.truth[a]);
  for (int a = 0; a < 3; ++a) os << ',' << format_number(s.estimate[a]);
  os << ',' << format_number(s.bcrb_position);
  for (Eigen::Index i = 0; i < s.aoa_truth.size(); ++i) {
    os << ',' << format_number(s.aoa_truth[i]) << ',' << format_number(s.aoa_estimate[i]);
  }
  os << ',' << s.flags.to_string() << '\n';
  return os.str();
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path + "' for writing");
  f << text;
  if (!f) throw Error("write to '" + path + "' failed");
}

}  // namespace bult

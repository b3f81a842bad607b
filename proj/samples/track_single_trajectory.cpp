// Tracks one random-walk trajectory in the reference scene and prints the
// per-slot position error. Usage: track_single_trajectory [config.json] [power_dbm]

#include <cstdio>
#include <cstdlib>
#include <string>

#include "bult/bult.hpp"
#include "bult/config.hpp"

int main(int argc, char** argv) {
  using namespace bult;
  SceneConfig scene = reference_scene();
  TrackerConfig cfg;
  if (argc > 1) {
    const LoadedConfig c = load_config(argv[1]);
    scene = c.scene;
    cfg = c.tracker;
  }
  const double power_w = dbm_to_watts(argc > 2 ? std::atof(argv[2]) : -10.0);
  scene.n_slots = 30;
  cfg.initial_prior = {scene.initial_position, scene.initial_cov};

  Rng rng(11);
  const std::vector<Position3> truth = generate_trajectory(scene, rng);
  TrackerState state = make_tracker_state(cfg);
  const int k = scene.k();
  const CVector equal = CVector::Constant(k, Complex(1.0 / std::sqrt(double(k)), 0.0));
  Position3 last = scene.initial_position;

  std::printf("slot      x       y       z    error_m\n");
  for (std::size_t t = 0; t < truth.size(); ++t) {
    // point every RIS at the previous estimate, power split evenly
    const auto pred = make_predictors(scene, CVector::Zero(k), last);
    const BeamPlan plan = directional_plan(pred, equal, scene);
    const CVector rho = path_gains(scene, truth[t], plan, power_w);
    const CVector y = synthesize(user_aoas(scene, truth[t]), rho, scene.noise_power, scene.n_user, rng);

    const SlotEstimate est = run_slot(state, y, cfg, scene);
    last = est.position;
    std::printf("%4zu %7.3f %7.3f %7.3f %10.4f\n", t, est.position.x(), est.position.y(), est.position.z(),
                (est.position - truth[t]).norm());
  }
  return 0;
}

// Command-line experiment runner.
//
//   bult run --config scene.json --mode directional --power -20,-10,0 \
//            --trials 10 --slots 50 --seed 7 --out results.csv [--baseline]

#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bult/bult.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Bayesian user localization and tracking experiments"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "run a Monte Carlo sweep and write metrics as CSV");
  std::string config_path, mode = "directional", out_path, trace_path;
  std::vector<double> powers{0.0};
  std::vector<int> n_ris;
  bool baseline = false, timing = false;
  int trials = 10, slots = 0;
  std::uint64_t seed = 1;
  unsigned threads = 0;
  run->add_option("--config", config_path, "scene configuration (JSON)")->check(CLI::ExistingFile);
  run->add_option("--mode", mode, "beamforming design")
      ->check(CLI::IsMember({"directional", "bcrb", "random"}));
  run->add_flag("--baseline", baseline, "also run the flat-prior per-slot baseline");
  run->add_option("--power", powers, "transmit powers in dBm")->delimiter(',');
  run->add_option("--n-ris", n_ris, "RIS element counts to sweep")->delimiter(',');
  run->add_option("--trials", trials, "trajectories per sweep point")->check(CLI::PositiveNumber);
  run->add_option("--slots", slots, "slots per trajectory (overrides the config)")
      ->check(CLI::NonNegativeNumber);
  run->add_option("--seed", seed, "master random seed");
  run->add_option("--threads", threads, "worker threads (0: all cores)");
  run->add_option("--out", out_path, "output CSV path")->required();
  run->add_option("--trace", trace_path, "optional per-slot CSV path");
  run->add_flag("--timing", timing, "append a runtime column to the CSV");

  CLI11_PARSE(app, argc, argv);

  try {
    bult::ExperimentSpec spec;
    if (!config_path.empty()) {
      const auto cfg = bult::load_config(config_path);
      spec.scene = cfg.scene;
      spec.tracker = cfg.tracker;
    } else {
      spec.tracker.c_q = spec.scene.model_cov;
    }
    if (slots > 0) spec.scene.n_slots = slots;
    spec.mode = bult::parse_beam_mode(mode);
    spec.baseline = baseline;
    spec.powers_dbm = powers;
    spec.n_ris_values = n_ris;
    spec.trials = trials;
    spec.seed = seed;
    spec.threads = threads;

    std::string trace_text;
    bult::TraceSink sink;
    if (!trace_path.empty()) {
      trace_text = bult::trace_header(spec.scene.k());
      sink = [&](const bult::MetricsRow& row, int trial, int slot, const bult::SlotRecord& s) {
        trace_text += bult::trace_line(row, trial, slot, s);
      };
    }
    const auto rows = bult::run_experiment(spec, sink);
    bult::write_file(out_path, bult::metrics_csv(rows, timing));
    if (!trace_path.empty()) bult::write_file(trace_path, trace_text);
    std::cout << "wrote " << rows.size() << " rows to " << out_path << '\n';
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
